//! Gaussians, cameras, turn-table rigs and view sets.
//!
//! Conventions used everywhere in the crate: right-handed world with +y up;
//! cameras look down their local −z axis with +y up in the camera frame;
//! pixel `(0, 0)` is the top-left corner and pixel `(i, j)` covers
//! `[i, i+1) × [j, j+1)`, so its center sits at `(i + 0.5, j + 0.5)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use base64::Engine as _;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::image::Image;

/// One anisotropic 3D Gaussian primitive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: [f64; 3],
    /// Natural log of the per-axis standard deviation.
    pub log_scale: [f64; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    /// Linear RGB, clamped to [0,1] when rendered.
    pub color: [f64; 3],
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Normalize a quaternion. Zero or non-finite input maps to the identity.
pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if !(n.is_finite() && n > 0.0) {
        return [1.0, 0.0, 0.0, 0.0];
    }
    // Input already unit to within rounding is returned untouched, which makes
    // normalization idempotent bit-for-bit.
    if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
        return q;
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

impl Gaussian {
    pub fn isotropic(mean: [f64; 3], scale: f64, opacity: f64, color: [f64; 3]) -> Self {
        let ls = scale.ln();
        Self {
            mean,
            log_scale: [ls; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scales(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn max_scale(&self) -> f64 {
        self.log_scale.iter().copied().fold(f64::NEG_INFINITY, f64::max).exp()
    }

    pub fn mean_vec(&self) -> Vector3<f64> {
        Vector3::from(self.mean)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(normalize_quat(self.rotation))
    }

    /// World-space covariance `R diag(s)² Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = self.scales();
        let m = r * Matrix3::from_diagonal(&Vector3::from(s));
        m * m.transpose()
    }

    pub fn is_finite(&self) -> bool {
        self.mean
            .iter()
            .chain(&self.log_scale)
            .chain(&self.rotation)
            .chain(&self.color)
            .chain(std::iter::once(&self.opacity_logit))
            .all(|v| v.is_finite())
    }
}

/// The optimizable scene: an ordered list of Gaussians with stable ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianCloud {
    gaussians: Vec<Gaussian>,
    ids: Vec<u64>,
    next_id: u64,
    /// Bounding radius of the scene in world units.
    pub extent: f64,
}

impl GaussianCloud {
    pub fn new(extent: f64) -> Self {
        Self {
            extent,
            ..Default::default()
        }
    }

    pub fn from_gaussians(gaussians: Vec<Gaussian>, extent: f64) -> Self {
        let n = gaussians.len() as u64;
        Self {
            gaussians,
            ids: (0..n).collect(),
            next_id: n,
            extent,
        }
    }

    pub fn push(&mut self, g: Gaussian) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.gaussians.push(g);
        self.ids.push(id);
        id
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }
    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }
    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }
    pub fn gaussians_mut(&mut self) -> &mut [Gaussian] {
        &mut self.gaussians
    }
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Keep only the Gaussians whose flag is set; order and ids of survivors are preserved.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        let mut i = 0;
        self.gaussians.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
        let mut i = 0;
        self.ids.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
    }

    /// Radius of the smallest origin-centered ball holding every mean.
    pub fn mean_radius(&self) -> f64 {
        self.gaussians
            .iter()
            .map(|g| g.mean_vec().norm())
            .fold(0.0, f64::max)
    }
}

/// Pinhole camera with world-to-camera pose `p_cam = R p + t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CameraJson", try_from = "CameraJson")]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub focal: f64,
    pub principal_point: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub near: f64,
    pub far: f64,
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    /// Row-major 3×3 world-to-camera rotation.
    rotation: [f64; 9],
    translation: [f64; 3],
    focal: f64,
    principal_point: [f64; 2],
    width: usize,
    height: usize,
    near: f64,
    far: f64,
}

impl From<Camera> for CameraJson {
    fn from(c: Camera) -> Self {
        let r = c.rotation;
        Self {
            rotation: [
                r[(0, 0)], r[(0, 1)], r[(0, 2)],
                r[(1, 0)], r[(1, 1)], r[(1, 2)],
                r[(2, 0)], r[(2, 1)], r[(2, 2)],
            ],
            translation: c.translation.into(),
            focal: c.focal,
            principal_point: c.principal_point,
            width: c.width,
            height: c.height,
            near: c.near,
            far: c.far,
        }
    }
}

impl TryFrom<CameraJson> for Camera {
    type Error = Error;
    fn try_from(j: CameraJson) -> Result<Self> {
        let cam = Camera {
            rotation: Matrix3::from_row_slice(&j.rotation),
            translation: Vector3::from(j.translation),
            focal: j.focal,
            principal_point: j.principal_point,
            width: j.width,
            height: j.height,
            near: j.near,
            far: j.far,
        };
        cam.validate()?;
        Ok(cam)
    }
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        let rrt = self.rotation * self.rotation.transpose();
        if !(rrt - Matrix3::identity()).iter().all(|v| v.abs() < 1e-6) {
            return Err(param("camera rotation is not orthonormal"));
        }
        if !(self.focal.is_finite() && self.focal > 0.0) {
            return Err(param("camera focal must be positive"));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(param("camera requires 0 < near < far"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(param("camera image size must be nonzero"));
        }
        if !(self.translation.iter().all(|v| v.is_finite())
            && self.principal_point.iter().all(|v| v.is_finite()))
        {
            return Err(param("camera pose is not finite"));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Project a world point; returns `(u, v, depth)` with depth along the view axis,
    /// or `None` when the point is not in front of the near plane.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let pc = self.to_camera(p);
        let depth = -pc.z;
        if depth <= self.near {
            return None;
        }
        Some((
            self.principal_point[0] + self.focal * pc.x / depth,
            self.principal_point[1] - self.focal * pc.y / depth,
            depth,
        ))
    }

    /// Vertical field of view in radians.
    pub fn fov_y(&self) -> f64 {
        2.0 * (0.5 * self.height as f64 / self.focal).atan()
    }
}

/// World-to-camera pose looking from `eye` at `target`; the camera's −z axis
/// points along the view direction and its +y axis is as close to `up_hint` as possible.
pub fn look_at(
    eye: Vector3<f64>,
    target: Vector3<f64>,
    up_hint: Vector3<f64>,
) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    if !(eye.iter().chain(target.iter()).chain(up_hint.iter()).all(|v| v.is_finite())) {
        return Err(param("look_at inputs must be finite"));
    }
    let dir = target - eye;
    let dist = dir.norm();
    if dist < 1e-12 {
        return Err(param("look_at: eye coincides with target"));
    }
    let forward = dir / dist;
    let right = forward.cross(&up_hint);
    let rn = right.norm();
    if rn < 1e-9 * up_hint.norm().max(1e-300) || rn < 1e-12 {
        return Err(param("look_at: up hint is parallel to the view direction"));
    }
    let right = right / rn;
    let up = right.cross(&forward);
    let back = -forward;
    let rotation = Matrix3::from_rows(&[right.transpose(), up.transpose(), back.transpose()]);
    let translation = -(rotation * eye);
    Ok((rotation, translation))
}

/// K cameras on a circle around the origin at fixed elevation and distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub cameras: Vec<Camera>,
    pub elevation: f64,
    pub distance: f64,
    pub azimuth_offset: f64,
}

/// Build a turn-table rig: camera `k` sits at azimuth `azimuth_offset + 2πk/K`.
///
/// Azimuth is measured about +y from the +z axis, so the `k = 0` camera of an
/// unrotated rig sits at `(0, distance·sin(elev), distance·cos(elev))`.
pub fn make_turntable_rig(
    k: usize,
    elevation: f64,
    distance: f64,
    fov_y: f64,
    width: usize,
    height: usize,
    azimuth_offset: f64,
) -> Result<CameraRig> {
    if k == 0 {
        return Err(param("rig needs at least one camera"));
    }
    if !(distance.is_finite() && distance > 0.0) {
        return Err(param("rig distance must be positive and finite"));
    }
    if !(fov_y.is_finite() && fov_y > 0.0 && fov_y < PI) {
        return Err(param("fov_y must lie in (0, π)"));
    }
    if !(elevation.is_finite() && elevation.abs() < 0.5 * PI) {
        return Err(param("elevation must lie in (−π/2, π/2)"));
    }
    if !azimuth_offset.is_finite() {
        return Err(param("azimuth offset must be finite"));
    }
    if width == 0 || height == 0 {
        return Err(param("image size must be nonzero"));
    }
    let focal = 0.5 * height as f64 / (0.5 * fov_y).tan();
    let cameras = (0..k)
        .map(|i| {
            let az = turntable_azimuth(i, k, azimuth_offset);
            let eye = distance
                * Vector3::new(elevation.cos() * az.sin(), elevation.sin(), elevation.cos() * az.cos());
            let (rotation, translation) = look_at(eye, Vector3::zeros(), Vector3::y())?;
            Ok(Camera {
                rotation,
                translation,
                focal,
                principal_point: [0.5 * width as f64, 0.5 * height as f64],
                width,
                height,
                near: 0.01 * distance,
                far: 100.0 * distance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CameraRig {
        cameras,
        elevation,
        distance,
        azimuth_offset,
    })
}

pub fn turntable_azimuth(index: usize, k: usize, azimuth_offset: f64) -> f64 {
    azimuth_offset + 2.0 * PI * index as f64 / k as f64
}

impl CameraRig {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }
    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn azimuths(&self) -> Vec<f64> {
        let k = self.len();
        (0..k).map(|i| turntable_azimuth(i, k, self.azimuth_offset)).collect()
    }

    /// Rig with the same geometry, rotated by half a step (π/K): the held-out cameras.
    pub fn interleaved(&self) -> Result<CameraRig> {
        let cam = self.cameras.first().ok_or_else(|| param("empty rig"))?;
        let k = self.len();
        make_turntable_rig(
            k,
            self.elevation,
            self.distance,
            cam.fov_y(),
            cam.width,
            cam.height,
            self.azimuth_offset + PI / k as f64,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.cameras.is_empty() {
            return Err(param("rig has no cameras"));
        }
        for c in &self.cameras {
            c.validate()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rig: CameraRig = serde_json::from_str(s)?;
        rig.validate()?;
        Ok(rig)
    }
}

/// Opaque conditioning carried alongside a view set (prompt, reference image, …).
/// The engine only ever reads `elevation`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Conditioning {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elevation: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub text: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty", with = "b64_map")]
    pub blobs: BTreeMap<String, Vec<u8>>,
}

mod b64_map {
    use std::collections::BTreeMap;

    use base64::engine::general_purpose::STANDARD;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        let enc: BTreeMap<&String, String> = m.iter().map(|(k, v)| (k, STANDARD.encode(v))).collect();
        enc.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec<u8>>, D::Error> {
        let enc = BTreeMap::<String, String>::deserialize(d)?;
        enc.into_iter()
            .map(|(k, v)| {
                STANDARD
                    .decode(v.as_bytes())
                    .map(|b| (k, b))
                    .map_err(serde::de::Error::custom)
            })
            .collect()
    }
}

impl Conditioning {
    pub fn with_elevation(elevation: f64) -> Self {
        Self {
            elevation: Some(elevation),
            ..Default::default()
        }
    }

    pub fn blob_b64(&self, key: &str) -> Option<String> {
        self.blobs
            .get(key)
            .map(|b| base64::engine::general_purpose::STANDARD.encode(b))
    }
}

/// K target views paired with their rig.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub images: Vec<Image<f32>>,
    pub masks: Option<Vec<Image<f32>>>,
    pub rig: CameraRig,
    pub conditioning: Conditioning,
}

impl ViewSet {
    pub fn new(
        images: Vec<Image<f32>>,
        masks: Option<Vec<Image<f32>>>,
        rig: CameraRig,
        conditioning: Conditioning,
    ) -> Result<Self> {
        let vs = Self {
            images,
            masks,
            rig,
            conditioning,
        };
        vs.validate()?;
        Ok(vs)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }
    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.rig.len() {
            return Err(Error::Shape(format!(
                "{} images for a rig of {} cameras",
                self.images.len(),
                self.rig.len()
            )));
        }
        let Some(first) = self.images.first() else {
            return Ok(());
        };
        let (w, h) = (first.width(), first.height());
        for (img, cam) in self.images.iter().zip(&self.rig.cameras) {
            if img.width() != w || img.height() != h || img.channels() != 3 {
                return Err(Error::Shape("view images must share one H×W×3 shape".into()));
            }
            if cam.width != w || cam.height != h {
                return Err(Error::Shape(format!(
                    "camera {}x{} does not match image {w}x{h}",
                    cam.width, cam.height
                )));
            }
        }
        if let Some(masks) = &self.masks {
            if masks.len() != self.images.len() {
                return Err(Error::Shape("mask count differs from image count".into()));
            }
            if masks.iter().any(|m| m.width() != w || m.height() != h || m.channels() != 1) {
                return Err(Error::Shape("masks must be single-channel H×W".into()));
            }
        }
        Ok(())
    }
}

/// Rig elevation as recorded in the view set's metadata. Never estimated from pixels.
pub fn estimate_rig_elevation(views: &ViewSet) -> Result<f64> {
    views.conditioning.elevation.ok_or(Error::ElevationUnavailable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn look_at_axis_aligned() {
        let (r, t) = look_at(Vector3::new(0.0, 0.0, 2.5), Vector3::zeros(), Vector3::y()).unwrap();
        // Camera −z expressed in world coordinates is the forward direction.
        let forward = r.transpose() * Vector3::new(0.0, 0.0, -1.0);
        assert!((forward - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
        assert!((r * Vector3::new(0.0, 0.0, 2.5) + t).norm() < 1e-12);
    }

    #[test]
    fn look_at_degenerate() {
        let e = Vector3::new(1.0, 2.0, 3.0);
        assert!(look_at(e, e, Vector3::y()).is_err());
        assert!(look_at(Vector3::new(0.0, 3.0, 0.0), Vector3::zeros(), Vector3::y()).is_err());
    }

    #[test]
    fn sixteen_view_rig_spacing() {
        let rig = make_turntable_rig(16, 0.0, 2.5, 40f64.to_radians(), 64, 64, 0.0).unwrap();
        assert_eq!(rig.len(), 16);
        let az = rig.azimuths();
        for w in az.windows(2) {
            assert!(((w[1] - w[0]).to_degrees() - 22.5).abs() < 1e-9);
        }
        // Measured from the actual camera centers as well.
        let centers: Vec<_> = rig.cameras.iter().map(|c| c.center()).collect();
        for i in 0..16 {
            let a = centers[i];
            let b = centers[(i + 1) % 16];
            let ang = (a.dot(&b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos();
            assert!((ang.to_degrees() - 22.5).abs() < 1e-6);
        }
        let total: f64 = az.windows(2).map(|w| w[1] - w[0]).sum::<f64>() + (az[0] + 2.0 * PI - az[15]);
        assert!((total - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn single_camera_on_equator() {
        let rig = make_turntable_rig(1, 0.0, 3.0, 0.7, 32, 32, 0.0).unwrap();
        let c = rig.cameras[0].center();
        assert!((c - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn rig_rejects_bad_parameters() {
        assert!(make_turntable_rig(0, 0.0, 2.5, 0.7, 8, 8, 0.0).is_err());
        assert!(make_turntable_rig(4, 0.0, -1.0, 0.7, 8, 8, 0.0).is_err());
        assert!(make_turntable_rig(4, 0.0, 2.5, PI, 8, 8, 0.0).is_err());
        assert!(make_turntable_rig(4, f64::NAN, 2.5, 0.7, 8, 8, 0.0).is_err());
    }

    #[test]
    fn elevation_passthrough() {
        let rig = make_turntable_rig(2, 0.3, 2.5, 0.7, 8, 8, 0.0).unwrap();
        let imgs = vec![Image::new(8, 8, 3), Image::new(8, 8, 3)];
        let mut vs = ViewSet::new(imgs, None, rig, Conditioning::with_elevation(0.3)).unwrap();
        assert_eq!(estimate_rig_elevation(&vs).unwrap(), 0.3);
        vs.conditioning.elevation = None;
        assert!(matches!(estimate_rig_elevation(&vs), Err(Error::ElevationUnavailable)));
    }

    #[test]
    fn conditioning_json_roundtrip_is_bit_exact() {
        let mut c = Conditioning::with_elevation(0.1 + 0.2);
        c.text.insert("prompt".into(), "a red teapot".into());
        c.blobs.insert("reference".into(), vec![0, 255, 7, 9]);
        let s = serde_json::to_string(&c).unwrap();
        let back: Conditioning = serde_json::from_str(&s).unwrap();
        assert_eq!(back.elevation.unwrap().to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back, c);
    }

    #[test]
    fn rig_json_roundtrip() {
        let rig = make_turntable_rig(5, 0.4, 2.7, 0.6, 40, 30, 0.25).unwrap();
        let back = CameraRig::from_json(&rig.to_json().unwrap()).unwrap();
        assert_eq!(back, rig);
    }

    proptest! {
        #[test]
        fn rig_geometry(k in 1usize..24, elev in 0.0f64..0.785, dist in 0.5f64..10.0, off in -3.0f64..3.0) {
            let rig = make_turntable_rig(k, elev, dist, 0.7, 64, 48, off).unwrap();
            for cam in &rig.cameras {
                prop_assert!((cam.center().norm() - dist).abs() < 1e-6);
                let rrt = cam.rotation * cam.rotation.transpose();
                prop_assert!((rrt - Matrix3::identity()).amax() < 1e-6);
                let (u, v, _) = cam.project(&Vector3::zeros()).unwrap();
                prop_assert!((u - cam.principal_point[0]).abs() < 0.5);
                prop_assert!((v - cam.principal_point[1]).abs() < 0.5);
                // upright: world +y projects upward (smaller v) near the origin
                let (_, v_up, _) = cam.project(&Vector3::new(0.0, 0.05 * dist, 0.0)).unwrap();
                prop_assert!(v_up < v);
            }
        }

        #[test]
        fn look_at_orthonormal(ex in -5.0f64..5.0, ey in -5.0f64..5.0, ez in 0.5f64..5.0,
                               tx in -1.0f64..1.0, ty in -1.0f64..1.0) {
            let (r, _) = look_at(Vector3::new(ex, ey, ez), Vector3::new(tx, ty, 0.0), Vector3::new(0.1, 1.0, 0.0)).unwrap();
            prop_assert!((r * r.transpose() - Matrix3::identity()).amax() < 1e-6);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn quat_normalization_idempotent(w in -2.0f64..2.0, x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let q = normalize_quat([w, x, y, z]);
            let qq = normalize_quat(q);
            prop_assert_eq!(q.map(f64::to_bits), qq.map(f64::to_bits));
        }
    }
}
