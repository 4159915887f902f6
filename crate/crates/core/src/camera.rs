//! Pinhole camera model: projection of 3D joints into image coordinates for
//! the single-view objective and for multiview triangulation.
//!
//! Points handed to [`CameraModel::project`] are world-frame and pass
//! through the extrinsics first. Fitted poses live directly in the fitting
//! camera's frame (that is what [`crate::skeleton::Pose3D`] is defined in),
//! so the residual path uses [`CameraModel::project_camera_frame`], which
//! applies intrinsics only. No lens distortion model: calibration files may
//! carry a distortion field, but it is rejected unless identically zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::KeypointFrame;
use crate::real::vec3::{self, V3};
use crate::real::Real;
use crate::skeleton::{KeypointName, Pose3D, N_CHAIN_JOINTS};

/// Keypoints with confidence below this are excluded from residuals.
pub const DEFAULT_VISIBILITY_THRESHOLD: f64 = 0.2;

pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation (row-major).
    pub rotation: [[f64; 3]; 3],
    /// World-to-camera translation, millimeters.
    pub translation_mm: [f64; 3],
    /// Image width and height in pixels.
    pub image_size: [u32; 2],
    pub id: Option<String>,
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::InvalidCamera(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot = vec3::dot(&r[i], &r[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                if (dot - expect).abs() > 1e-9 {
                    return Err(Error::InvalidCamera(
                        "extrinsic rotation is not orthonormal".into(),
                    ));
                }
            }
        }
        let det = vec3::dot(&r[0], &vec3::cross(&r[1], &r[2]));
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidCamera(format!(
                "extrinsic rotation determinant is {det}, expected +1"
            )));
        }
        Ok(())
    }

    /// Identity-extrinsics camera, i.e. the world frame is the camera frame.
    pub fn identity_extrinsics(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        image_size: [u32; 2],
        id: Option<String>,
    ) -> CameraModel {
        CameraModel {
            fx,
            fy,
            cx,
            cy,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation_mm: [0.0; 3],
            image_size,
            id,
        }
    }

    /// Camera placed at `center` looking at `target`, with `up_hint` fixing
    /// the roll (OpenCV-style axes: +x right, +y down, +z forward).
    pub fn look_at(
        center_mm: [f64; 3],
        target_mm: [f64; 3],
        up_hint: [f64; 3],
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        image_size: [u32; 2],
        id: Option<String>,
    ) -> Result<CameraModel> {
        let forward = vec3::sub(&target_mm, &center_mm);
        let fnorm = vec3::norm(&forward);
        if fnorm < 1e-9 {
            return Err(Error::InvalidCamera("look_at: center equals target".into()));
        }
        let z = vec3::scale(&forward, 1.0 / fnorm);
        let down = vec3::scale(&up_hint, -1.0);
        let x_raw = vec3::cross(&down, &z);
        let xnorm = vec3::norm(&x_raw);
        if xnorm < 1e-9 {
            return Err(Error::InvalidCamera(
                "look_at: up hint is parallel to the view direction".into(),
            ));
        }
        let x = vec3::scale(&x_raw, 1.0 / xnorm);
        let y = vec3::cross(&z, &x);
        let rotation = [x, y, z];
        let rc = vec3::mat_vec(&rotation, &center_mm);
        let camera = CameraModel {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation_mm: vec3::scale(&rc, -1.0),
            image_size,
            id,
        };
        camera.validate()?;
        Ok(camera)
    }

    /// Camera center in world coordinates (`-R^T t`).
    pub fn center_mm(&self) -> [f64; 3] {
        let r = &self.rotation;
        let t = &self.translation_mm;
        [
            -(r[0][0] * t[0] + r[1][0] * t[1] + r[2][0] * t[2]),
            -(r[0][1] * t[0] + r[1][1] * t[1] + r[2][1] * t[2]),
            -(r[0][2] * t[0] + r[1][2] * t[1] + r[2][2] * t[2]),
        ]
    }

    pub fn world_to_camera(&self, point_mm: &[f64; 3]) -> [f64; 3] {
        vec3::add(&vec3::mat_vec(&self.rotation, point_mm), &self.translation_mm)
    }

    /// Pinhole projection of a world-frame point.
    pub fn project(&self, point_mm: &[f64; 3]) -> Result<[f64; 2]> {
        self.project_camera_frame(&self.world_to_camera(point_mm))
    }

    /// Pinhole projection of a point already expressed in the camera frame.
    pub fn project_camera_frame(&self, point_mm: &[f64; 3]) -> Result<[f64; 2]> {
        project_camera_generic(self, point_mm)
    }

    /// The 3x4 projection matrix `K [R | t]` (row-major).
    pub fn projection_matrix(&self) -> [[f64; 4]; 4] {
        let k = [
            [self.fx, 0.0, self.cx],
            [0.0, self.fy, self.cy],
            [0.0, 0.0, 1.0],
        ];
        let mut p = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for (m, krow) in k[i].iter().enumerate() {
                    acc += krow * self.rotation[m][j];
                }
                p[i][j] = acc;
            }
            let mut acc = 0.0;
            for (m, krow) in k[i].iter().enumerate() {
                acc += krow * self.translation_mm[m];
            }
            p[i][3] = acc;
        }
        p
    }
}

/// Generic camera-frame pinhole projection shared with the dual-number path.
pub(crate) fn project_camera_generic<T: Real>(
    camera: &CameraModel,
    point: &V3<T>,
) -> Result<[T; 2]> {
    let z = point[2];
    if !(z.val() > 0.0) {
        return Err(Error::BehindCamera { depth_mm: z.val() });
    }
    let u = T::cst(camera.fx) * point[0] / z + T::cst(camera.cx);
    let v = T::cst(camera.fy) * point[1] / z + T::cst(camera.cy);
    Ok([u, v])
}

/// Per-joint residuals of a camera-frame pose against observed keypoints.
#[derive(Debug, Clone)]
pub struct ResidualSet {
    /// `observed - projected` per chain joint, pixels; zero where excluded.
    pub residuals: [[f64; 2]; N_CHAIN_JOINTS],
    pub included: [bool; N_CHAIN_JOINTS],
    pub confidences: [f64; N_CHAIN_JOINTS],
}

impl ResidualSet {
    pub fn included_count(&self) -> usize {
        self.included.iter().filter(|x| **x).count()
    }

    /// Unweighted root-mean-square pixel error over the included joints.
    pub fn rms_px(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for ci in 0..N_CHAIN_JOINTS {
            if self.included[ci] {
                let [du, dv] = self.residuals[ci];
                sum += du * du + dv * dv;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }
}

/// Residuals `observed - projected` for each chain joint whose observation
/// confidence reaches `visibility_threshold`. Joints missing or below the
/// threshold contribute zero residual and are flagged excluded.
pub fn reprojection_residuals(
    camera: &CameraModel,
    pose: &Pose3D,
    frame: &KeypointFrame,
    visibility_threshold: f64,
) -> Result<ResidualSet> {
    let mut out = ResidualSet {
        residuals: [[0.0; 2]; N_CHAIN_JOINTS],
        included: [false; N_CHAIN_JOINTS],
        confidences: [0.0; N_CHAIN_JOINTS],
    };
    for (ci, joint) in KeypointName::CHAIN.iter().enumerate() {
        let Some(kp) = frame.get(*joint) else { continue };
        if kp.confidence < visibility_threshold {
            continue;
        }
        let projected = camera.project_camera_frame(&pose.positions[ci])?;
        out.residuals[ci] = [
            kp.position[0] - projected[0],
            kp.position[1] - projected[1],
        ];
        out.included[ci] = true;
        out.confidences[ci] = kp.confidence;
    }
    if out.included_count() == 0 {
        return Err(Error::NoObservations(
            "every chain joint is missing or below the visibility threshold".into(),
        ));
    }
    Ok(out)
}

/// On-disk calibration file: one or more camera records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationDoc {
    pub format_version: u32,
    pub cameras: Vec<CameraEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraEntry {
    pub id: String,
    pub image_size: [u32; 2],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation_mm: [f64; 3],
    /// Present only so that foreign files fail loudly: any nonzero
    /// coefficient is rejected because no distortion model is applied.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub distortion: Vec<f64>,
}

impl CalibrationDoc {
    pub fn from_cameras(cameras: &[CameraModel]) -> CalibrationDoc {
        CalibrationDoc {
            format_version: CALIBRATION_FORMAT_VERSION,
            cameras: cameras
                .iter()
                .enumerate()
                .map(|(idx, c)| CameraEntry {
                    id: c.id.clone().unwrap_or_else(|| format!("camera{idx}")),
                    image_size: c.image_size,
                    fx: c.fx,
                    fy: c.fy,
                    cx: c.cx,
                    cy: c.cy,
                    rotation: c.rotation,
                    translation_mm: c.translation_mm,
                    distortion: Vec::new(),
                })
                .collect(),
        }
    }

    pub fn to_cameras(&self) -> Result<Vec<CameraModel>> {
        if self.format_version != CALIBRATION_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: CALIBRATION_FORMAT_VERSION,
            });
        }
        self.cameras
            .iter()
            .map(|e| {
                if e.distortion.iter().any(|d| *d != 0.0) {
                    return Err(Error::InvalidCamera(format!(
                        "camera '{}' carries nonzero distortion coefficients, \
                         which no supported model applies",
                        e.id
                    )));
                }
                let cam = CameraModel {
                    fx: e.fx,
                    fy: e.fy,
                    cx: e.cx,
                    cy: e.cy,
                    rotation: e.rotation,
                    translation_mm: e.translation_mm,
                    image_size: e.image_size,
                    id: Some(e.id.clone()),
                };
                cam.validate()?;
                Ok(cam)
            })
            .collect()
    }

    pub fn find(&self, id: &str) -> Option<&CameraEntry> {
        self.cameras.iter().find(|c| c.id == id)
    }
}
