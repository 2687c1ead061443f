use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scene::{logit, make_turntable_rig, Gaussian};

fn camera(size: usize, principal: f64) -> Camera {
    Camera {
        rotation: Matrix3::identity(),
        translation: Vector3::zeros(),
        focal: 40.0,
        principal_point: [principal, principal],
        width: size,
        height: size,
        near: 0.1,
        far: 100.0,
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> GaussianCloud {
    let gs = (0..n)
        .map(|_| {
            let q = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            Gaussian {
                mean: [
                    rng.random_range(-0.35..0.35),
                    rng.random_range(-0.35..0.35),
                    rng.random_range(-0.4..0.4),
                ],
                log_scale: [
                    rng.random_range(-2.8f64..-1.8),
                    rng.random_range(-2.8f64..-1.8),
                    rng.random_range(-2.8f64..-1.8),
                ],
                rotation: crate::scene::normalize_quat(q),
                opacity_logit: logit(rng.random_range(0.2..0.8)),
                color: [
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                ],
            }
        })
        .collect();
    GaussianCloud::from_gaussians(gs, 1.0)
}

fn fd_settings() -> RasterSettings {
    RasterSettings {
        cutoff_sigma: 6.0,
        min_transmittance: 0.0,
        ..Default::default()
    }
}

#[test]
fn empty_cloud_renders_background() {
    let cam = camera(16, 8.0);
    let out = render::<f64>(&GaussianCloud::new(1.0), &cam, [0.2, 0.4, 0.6], &Default::default()).unwrap();
    for p in out.rgb.data().chunks(3) {
        assert_eq!(p, &[0.2, 0.4, 0.6]);
    }
    assert!(out.alpha.data().iter().all(|&a| a == 0.0));
}

#[test]
fn single_splat_at_its_center() {
    // Principal point at a pixel center so the on-axis splat hits it exactly.
    let cam = camera(32, 16.5);
    let g = Gaussian::isotropic([0.0, 0.0, -2.0], 0.1, 0.8, [0.9, 0.5, 0.1]);
    let cloud = GaussianCloud::from_gaussians(vec![g], 1.0);
    let bg = [0.1, 0.2, 0.3];
    let out = render::<f64>(&cloud, &cam, bg, &Default::default()).unwrap();
    assert!((out.alpha.get(16, 16, 0) - 0.8).abs() < 1e-12);
    for c in 0..3 {
        let expected = 0.8 * g.color[c] + 0.2 * bg[c];
        assert!((out.rgb.get(16, 16, c) - expected).abs() < 1e-12);
    }
}

#[test]
fn front_splat_wins() {
    let cam = camera(32, 16.5);
    let red = Gaussian::isotropic([0.0, 0.0, -1.0], 0.05, 0.99, [1.0, 0.0, 0.0]);
    let blue = Gaussian::isotropic([0.0, 0.0, -2.0], 0.1, 0.99, [0.0, 0.0, 1.0]);
    // List order deliberately back-to-front.
    let cloud = GaussianCloud::from_gaussians(vec![blue, red], 1.0);
    let out = render::<f64>(&cloud, &cam, [0.0; 3], &Default::default()).unwrap();
    let px = [out.rgb.get(16, 16, 0), out.rgb.get(16, 16, 1), out.rgb.get(16, 16, 2)];
    // 0.99 red, then 0.01 · 0.99 blue.
    assert!((px[0] - 0.99).abs() < 1e-9);
    assert!((px[2] - 0.01 * 0.99).abs() < 1e-9);
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = random_cloud(&mut rng, 10);
    let cam = camera(24, 12.0);
    let mut cam2 = cam.clone();
    cam2.translation = Vector3::new(0.0, 0.0, -1.5);
    let g = render_backward::<f64>(
        &cloud,
        &cam2,
        [0.5; 3],
        &Default::default(),
        &Image::new(24, 24, 3),
        &Image::new(24, 24, 1),
    )
    .unwrap();
    for (_, v) in g.fields() {
        assert!(v.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn non_finite_upstream_is_rejected() {
    let cam = camera(8, 4.0);
    let mut grad = Image::<f64>::new(8, 8, 3);
    grad.set(1, 1, 0, f64::NAN);
    let err = render_backward::<f64>(&GaussianCloud::new(1.0), &cam, [0.0; 3], &Default::default(), &grad, &Image::new(8, 8, 1));
    assert!(matches!(err, Err(Error::NonFinite(_))));
    let err = render_backward::<f64>(&GaussianCloud::new(1.0), &cam, [0.0; 3], &Default::default(), &Image::new(4, 4, 3), &Image::new(8, 8, 1));
    assert!(err.is_err());
}

fn view_camera() -> Camera {
    let rig = make_turntable_rig(1, 0.3, 2.0, 0.8, 32, 32, 0.4).unwrap();
    rig.cameras[0].clone()
}

/// Sum of rendered rgb weighted by fixed random upstream images.
fn weighted_loss(cloud: &GaussianCloud, cam: &Camera, gr: &Image<f64>, ga: &Image<f64>, s: &RasterSettings) -> f64 {
    let out = render::<f64>(cloud, cam, [0.3, 0.6, 0.9], s).unwrap();
    let a: f64 = out.rgb.data().iter().zip(gr.data()).map(|(x, y)| x * y).sum();
    let b: f64 = out.alpha.data().iter().zip(ga.data()).map(|(x, y)| x * y).sum();
    a + b
}

fn perturb(cloud: &GaussianCloud, i: usize, field: usize, comp: usize, h: f64) -> GaussianCloud {
    let mut c = cloud.clone();
    let g = &mut c.gaussians_mut()[i];
    match field {
        0 => g.mean[comp] += h,
        1 => g.log_scale[comp] += h,
        2 => g.rotation[comp] += h,
        3 => g.opacity_logit += h,
        _ => g.color[comp] += h,
    }
    c
}

#[test]
fn color_gradient_is_the_compositing_weight_sum() {
    let cam = view_camera();
    let g = Gaussian::isotropic([0.05, 0.0, 0.0], 0.15, 0.7, [0.4, 0.5, 0.6]);
    let cloud = GaussianCloud::from_gaussians(vec![g], 1.0);
    let s = RasterSettings::default();
    let ones = Image::<f64>::filled(32, 32, 3, 1.0);
    let zeros = Image::<f64>::new(32, 32, 1);
    let grads = render_backward::<f64>(&cloud, &cam, [0.3, 0.6, 0.9], &s, &ones, &zeros).unwrap();
    let out = render::<f64>(&cloud, &cam, [0.0; 3], &s).unwrap();
    // A single splat's compositing weight at each pixel equals its alpha.
    let weight_sum: f64 = out.alpha.data().iter().sum();
    for c in 0..3 {
        let h = 1e-5;
        let fd = (weighted_loss(&perturb(&cloud, 0, 4, c, h), &cam, &ones, &zeros, &s)
            - weighted_loss(&perturb(&cloud, 0, 4, c, -h), &cam, &ones, &zeros, &s))
            / (2.0 * h);
        assert!((grads.color[0][c] - weight_sum).abs() < 1e-9 * weight_sum);
        assert!((fd - weight_sum).abs() < 1e-6 * weight_sum);
    }
}

#[test]
fn gradients_match_central_differences() {
    let cam = view_camera();
    let s = fd_settings();
    for seed in 0..3 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let cloud = random_cloud(&mut rng, 12);
        let gr = Image::from_vec(32, 32, 3, (0..32 * 32 * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let ga = Image::from_vec(32, 32, 1, (0..32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let grads = render_backward::<f64>(&cloud, &cam, [0.3, 0.6, 0.9], &s, &gr, &ga).unwrap();
        let fields = grads.fields();
        let comps = [3usize, 3, 4, 1, 3];
        for (f, (name, analytic)) in fields.iter().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..cloud.len() {
                for c in 0..comps[f] {
                    let h = 1e-5;
                    let fd = (weighted_loss(&perturb(&cloud, i, f, c, h), &cam, &gr, &ga, &s)
                        - weighted_loss(&perturb(&cloud, i, f, c, -h), &cam, &gr, &ga, &s))
                        / (2.0 * h);
                    let a = analytic[i * comps[f] + c];
                    num += (a - fd) * (a - fd);
                    den += fd * fd;
                }
            }
            let rel = (num / den.max(1e-300)).sqrt();
            assert!(rel < 1e-5, "seed {seed} field {name}: relative error {rel}");
        }
    }
}

#[test]
fn distinct_depth_order_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cloud = random_cloud(&mut rng, 30);
    let cam = view_camera();
    let a = render::<f32>(&cloud, &cam, [1.0; 3], &Default::default()).unwrap();
    let mut gs = cloud.gaussians().to_vec();
    gs.reverse();
    gs.swap(3, 17);
    let permuted = GaussianCloud::from_gaussians(gs, 1.0);
    let b = render::<f32>(&permuted, &cam, [1.0; 3], &Default::default()).unwrap();
    assert_eq!(a.rgb, b.rgb);
    assert_eq!(a.alpha, b.alpha);
}

#[test]
fn tile_size_is_invisible() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cloud = random_cloud(&mut rng, 40);
    let rig = make_turntable_rig(1, 0.3, 2.0, 0.8, 70, 50, 0.4).unwrap();
    let cam = &rig.cameras[0];
    let base = render::<f32>(&cloud, cam, [0.5; 3], &RasterSettings { tile_size: 16, ..Default::default() }).unwrap();
    for ts in [8, 32, 5] {
        let out = render::<f32>(&cloud, cam, [0.5; 3], &RasterSettings { tile_size: ts, ..Default::default() }).unwrap();
        assert_eq!(out.rgb, base.rgb, "tile size {ts}");
        assert_eq!(out.alpha, base.alpha, "tile size {ts}");
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cloud = random_cloud(&mut rng, 60);
    let cam = view_camera();
    let gr = Image::filled(32, 32, 3, 0.25f32);
    let ga = Image::filled(32, 32, 1, -0.5f32);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let out = render::<f32>(&cloud, &cam, [0.5; 3], &Default::default()).unwrap();
            let g = render_backward::<f32>(&cloud, &cam, [0.5; 3], &Default::default(), &gr, &ga).unwrap();
            (out, g)
        })
    };
    let (o1, g1) = run(1);
    for t in [2, 4] {
        let (o, g) = run(t);
        assert_eq!(o, o1);
        assert_eq!(g, g1);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn adding_a_gaussian_never_lowers_alpha(seed in 0u64..10_000, n in 0usize..25) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cloud = random_cloud(&mut rng, n + 1);
            let cam = view_camera();
            let mut fewer = cloud.clone();
            let mut keep = vec![true; n + 1];
            keep[rng.random_range(0..=n)] = false;
            fewer.retain_mask(&keep);
            // Without early termination the transmittance is a plain product.
            let exact = RasterSettings { min_transmittance: 0.0, ..Default::default() };
            let a = render::<f64>(&fewer, &cam, [0.0; 3], &exact).unwrap();
            let b = render::<f64>(&cloud, &cam, [0.0; 3], &exact).unwrap();
            for (x, y) in a.alpha.data().iter().zip(b.alpha.data()) {
                prop_assert!(y >= x);
            }
            // With termination the alpha can only shift by less than the threshold.
            let s = RasterSettings::default();
            let a = render::<f64>(&fewer, &cam, [0.0; 3], &s).unwrap();
            let b = render::<f64>(&cloud, &cam, [0.0; 3], &s).unwrap();
            for (x, y) in a.alpha.data().iter().zip(b.alpha.data()) {
                prop_assert!(*y >= x - s.min_transmittance);
                prop_assert!((0.0..=1.0).contains(y));
            }
        }
    }
}
