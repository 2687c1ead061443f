//! Screen-space projection of 3D Gaussians and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::scene::{normalize_quat, quat_to_matrix, Camera, Gaussian};

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    /// Pixel coordinates of the projected mean.
    pub mean2d: [f64; 2],
    /// Symmetric screen covariance `[xx, xy, yy]` in px², variance floor included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d` as `[xx, xy, yy]`.
    pub conic: [f64; 3],
    /// Distance along the camera's viewing axis.
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Bounding radius (px) of the cutoff ellipse.
    pub radius: f64,
    pub source_index: usize,
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub splat: Splat2D,
    p_cam: Vector3<f64>,
    jac: Matrix2x3<f64>,
    t_mat: Matrix2x3<f64>,
    sigma: Matrix3<f64>,
    m_mat: Matrix3<f64>,
    r_q: Matrix3<f64>,
    scales: Vector3<f64>,
    q_unit: [f64; 4],
    q_norm: f64,
    color_raw: [f64; 3],
}

pub(crate) fn project_full(
    g: &Gaussian,
    index: usize,
    cam: &Camera,
    variance_floor: f64,
    cutoff_sigma: f64,
) -> Option<Projection> {
    let mean = Vector3::from(g.mean);
    let p_cam = cam.to_camera(&mean);
    let depth = -p_cam.z;
    if !(depth > cam.near) {
        return None;
    }
    let f = cam.focal;
    let inv_z = 1.0 / depth;
    let mean2d = [
        cam.principal_point[0] + f * p_cam.x * inv_z,
        cam.principal_point[1] - f * p_cam.y * inv_z,
    ];
    let jac = Matrix2x3::new(
        f * inv_z,
        0.0,
        f * p_cam.x * inv_z * inv_z,
        0.0,
        -f * inv_z,
        -f * p_cam.y * inv_z * inv_z,
    );

    let q_norm = {
        let q = g.rotation;
        (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
    };
    let q_unit = normalize_quat(g.rotation);
    let r_q = quat_to_matrix(q_unit);
    let scales = Vector3::from(g.scales());
    let m_mat = r_q * Matrix3::from_diagonal(&scales);
    let sigma = m_mat * m_mat.transpose();
    let t_mat = jac * cam.rotation;
    let cov = t_mat * sigma * t_mat.transpose();
    let a = cov[(0, 0)] + variance_floor;
    let b = cov[(0, 1)];
    let c = cov[(1, 1)] + variance_floor;
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let inv_det = 1.0 / det;
    let conic = [c * inv_det, -b * inv_det, a * inv_det];

    // Largest eigenvalue of the 2×2 covariance bounds the cutoff ellipse.
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = cutoff_sigma * lambda_max.sqrt();
    let w = cam.width as f64;
    let h = cam.height as f64;
    if mean2d[0] + radius < 0.0
        || mean2d[0] - radius > w
        || mean2d[1] + radius < 0.0
        || mean2d[1] - radius > h
    {
        return None;
    }

    let color = g.color.map(|v| v.clamp(0.0, 1.0));
    Some(Projection {
        splat: Splat2D {
            mean2d,
            cov2d: [a, b, c],
            conic,
            depth,
            color,
            opacity: g.opacity(),
            radius,
            source_index: index,
        },
        p_cam,
        jac,
        t_mat,
        sigma,
        m_mat,
        r_q,
        scales,
        q_unit,
        q_norm,
        color_raw: g.color,
    })
}

/// Project one Gaussian into `cam` with a 3σ cull radius; `None` means culled.
pub fn project_gaussian(g: &Gaussian, cam: &Camera, variance_floor: f64) -> Option<Splat2D> {
    project_full(g, 0, cam, variance_floor, 3.0).map(|p| p.splat)
}

/// Screen-space gradient of one splat, all terms summed over pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct SplatGrad {
    pub mean2d: [f64; 2],
    /// d/d conic entries `[xx, xy, yy]`, with `xy` counted once.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

/// Gradient of one Gaussian's parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct GaussianGrad {
    pub mean: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

/// Chain a screen-space splat gradient back to the Gaussian's parameters.
pub(crate) fn project_backward(p: &Projection, cam: &Camera, gs: &SplatGrad) -> GaussianGrad {
    let s = &p.splat;

    // opacity = sigmoid(logit)
    let opacity_logit = gs.opacity * s.opacity * (1.0 - s.opacity);

    let mut color = [0.0; 3];
    for c in 0..3 {
        if (0.0..=1.0).contains(&p.color_raw[c]) {
            color[c] = gs.color[c];
        }
    }

    // conic → covariance: dL/dcov = −Q G_Q Q
    let q = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let g_q = Matrix2::new(gs.conic[0], 0.5 * gs.conic[1], 0.5 * gs.conic[1], gs.conic[2]);
    let g_cov = -(q * g_q * q);

    // cov = T Σ Tᵀ, T = J W
    let g_sigma = p.t_mat.transpose() * g_cov * p.t_mat;
    let g_t = 2.0 * g_cov * p.t_mat * p.sigma;
    let g_j = g_t * cam.rotation.transpose();

    // Σ = M Mᵀ, M = R S
    let g_m = 2.0 * g_sigma * p.m_mat;
    let mut log_scale = [0.0; 3];
    for j in 0..3 {
        let mut ds = 0.0;
        for i in 0..3 {
            ds += g_m[(i, j)] * p.r_q[(i, j)];
        }
        log_scale[j] = ds * p.scales[j];
    }
    let g_r = g_m * Matrix3::from_diagonal(&p.scales);
    let rotation = quat_backward(p.q_unit, p.q_norm, &g_r);

    // Mean: through the projected center and through J.
    let f = cam.focal;
    let z = s.depth;
    let (x, y) = (p.p_cam.x, p.p_cam.y);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let gm = Vector2::new(gs.mean2d[0], gs.mean2d[1]);
    let mut g_pc = p.jac.transpose() * gm;
    g_pc.x += g_j[(0, 2)] * f * iz2;
    g_pc.y += g_j[(1, 2)] * (-f * iz2);
    g_pc.z += g_j[(0, 0)] * f * iz2
        + g_j[(0, 2)] * 2.0 * f * x * iz3
        + g_j[(1, 1)] * (-f * iz2)
        + g_j[(1, 2)] * (-2.0 * f * y * iz3);
    let g_mean = cam.rotation.transpose() * g_pc;

    GaussianGrad {
        mean: g_mean.into(),
        log_scale,
        rotation,
        opacity_logit,
        color,
    }
}

/// Backpropagate dL/dR through `R(q/|q|)`.
fn quat_backward(q: [f64; 4], norm: f64, g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let gw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
            + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gu = [gw, gx, gy, gz];
    if !(norm.is_finite() && norm > 0.0) {
        return [0.0; 4];
    }
    // d(q/|q|)/dq = (I − q̂ q̂ᵀ) / |q|
    let dot = gu[0] * w + gu[1] * x + gu[2] * y + gu[3] * z;
    [
        (gu[0] - dot * w) / norm,
        (gu[1] - dot * x) / norm,
        (gu[2] - dot * y) / norm,
        (gu[3] - dot * z) / norm,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn identity_camera(size: usize) -> Camera {
        Camera {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            focal: 100.0,
            principal_point: [size as f64 / 2.0, size as f64 / 2.0],
            width: size,
            height: size,
            near: 0.1,
            far: 100.0,
        }
    }

    #[test]
    fn on_axis_projects_to_principal_point() {
        let cam = identity_camera(64);
        let g = Gaussian::isotropic([0.0, 0.0, -3.0], 0.05, 0.5, [0.5; 3]);
        let s = project_gaussian(&g, &cam, 0.3).unwrap();
        assert_eq!(s.mean2d, cam.principal_point);
        assert!((s.depth - 3.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = identity_camera(64);
        let g = Gaussian::isotropic([0.0, 0.0, 3.0], 0.05, 0.5, [0.5; 3]);
        assert!(project_gaussian(&g, &cam, 0.3).is_none());
        let far_off = Gaussian::isotropic([50.0, 0.0, -3.0], 0.05, 0.5, [0.5; 3]);
        assert!(project_gaussian(&far_off, &cam, 0.3).is_none());
    }

    /// Monte-Carlo oracle: push samples of the 3D Gaussian through the exact
    /// pinhole map and measure their 2D spread.
    #[test]
    fn projected_std_matches_sampled_projection() {
        let cam = identity_camera(256);
        let (s, z) = (0.02, 4.0);
        let g = Gaussian::isotropic([0.0, 0.0, -z], s, 0.5, [0.5; 3]);
        let splat = project_gaussian(&g, &cam, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let (mut su, mut sv, mut suu, mut svv, mut suv) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let d: [f64; 3] = [
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            ];
            let p = Vector3::new(d[0] * s, d[1] * s, -z + d[2] * s);
            let (u, v, _) = cam.project(&p).unwrap();
            su += u;
            sv += v;
            suu += u * u;
            svv += v * v;
            suv += u * v;
        }
        let nf = n as f64;
        let (mu, mv) = (su / nf, sv / nf);
        let cuu = suu / nf - mu * mu;
        let cvv = svv / nf - mv * mv;
        let cuv = suv / nf - mu * mv;
        let expected = cam.focal * s / z;
        assert!((cuu.sqrt() / expected - 1.0).abs() < 0.02);
        assert!((cvv.sqrt() / expected - 1.0).abs() < 0.02);
        assert!((splat.cov2d[0].sqrt() / expected - 1.0).abs() < 0.02);
        assert!((splat.cov2d[0] - cuu).abs() / cuu < 0.04);
        assert!((splat.cov2d[2] - cvv).abs() / cvv < 0.04);
        assert!(cuv.abs() < 0.05 * cuu);
    }

    #[test]
    fn quaternion_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q: [f64; 4] = [0.7, -0.3, 0.5, 0.2];
        let gmat = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let f = |q: [f64; 4]| -> f64 {
            let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
            let r = quat_to_matrix(q.map(|v| v / n));
            r.component_mul(&gmat).sum()
        };
        let n = (q.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let analytic = quat_backward(q.map(|v| v / n), n, &gmat);
        for i in 0..4 {
            let h = 1e-6;
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (f(qp) - f(qm)) / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-7, "component {i}: {fd} vs {}", analytic[i]);
        }
    }
}
