//! Multiview triangulation: reconstructs 3D joints from two or more
//! calibrated views by minimizing confidence-weighted squared reprojection
//! error. A direct linear transform provides the initial point, which is
//! then refined with Levenberg-Marquardt until the objective gradient norm
//! falls below 1e-10 (or 100 iterations).

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::metrics::MaskedPose;
use crate::skeleton::{KeypointName, N_CHAIN_JOINTS};

/// Condition-number gate on the linear system solved for the point; beyond
/// this the observing rays are effectively parallel. Applied both to the
/// DLT system (largest over third-largest singular value, since the fourth
/// is the solution direction) and to the normal matrix of the refinement,
/// which carries the geometric depth conditioning.
pub const DEGENERACY_CONDITION_LIMIT: f64 = 1e12;

const GRADIENT_TOLERANCE: f64 = 1e-10;
const MAX_REFINE_ITERATIONS: usize = 100;

/// One joint observed in one camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewObservation {
    pub camera_id: String,
    pub position_px: [f64; 2],
    pub confidence: f64,
}

/// All per-camera observations of one joint in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiviewObservation {
    pub joint: KeypointName,
    pub frame_index: u64,
    pub views: Vec<ViewObservation>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulatedPoint {
    pub position_mm: [f64; 3],
    /// Confidence-weighted root-mean-square pixel reprojection error.
    pub rms_px: f64,
}

struct ResolvedView<'a> {
    camera: &'a CameraModel,
    obs: [f64; 2],
    weight: f64,
}

fn resolve_views<'a>(
    cameras: &'a [CameraModel],
    obs: &MultiviewObservation,
) -> Result<Vec<ResolvedView<'a>>> {
    let mut views = Vec::with_capacity(obs.views.len());
    for v in &obs.views {
        let camera = cameras
            .iter()
            .find(|c| c.id.as_deref() == Some(v.camera_id.as_str()))
            .ok_or_else(|| {
                Error::Format(format!(
                    "observation references unknown camera '{}'",
                    v.camera_id
                ))
            })?;
        if !(v.confidence > 0.0) {
            continue;
        }
        views.push(ResolvedView {
            camera,
            obs: v.position_px,
            weight: v.confidence,
        });
    }
    Ok(views)
}

fn weighted_cost(views: &[ResolvedView<'_>], point: &[f64; 3]) -> Option<f64> {
    let mut cost = 0.0;
    for v in views {
        let proj = v.camera.project(point).ok()?;
        let du = proj[0] - v.obs[0];
        let dv = proj[1] - v.obs[1];
        cost += v.weight * (du * du + dv * dv);
    }
    Some(cost)
}

fn dlt_initialize(views: &[ResolvedView<'_>]) -> Result<Vector3<f64>> {
    let mut a = DMatrix::<f64>::zeros(2 * views.len(), 4);
    for (i, v) in views.iter().enumerate() {
        let p = v.camera.projection_matrix();
        let w = v.weight.sqrt();
        let [u, vv] = v.obs;
        for j in 0..4 {
            a[(2 * i, j)] = w * (u * p[2][j] - p[0][j]);
            a[(2 * i + 1, j)] = w * (vv * p[2][j] - p[1][j]);
        }
    }
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    if sv[2] <= 0.0 || sv[0] / sv[2] > DEGENERACY_CONDITION_LIMIT {
        return Err(Error::DegenerateGeometry(format!(
            "DLT system condition {:.3e} exceeds the parallel-ray limit",
            if sv[2] > 0.0 { sv[0] / sv[2] } else { f64::INFINITY }
        )));
    }
    let vt = svd
        .v_t
        .ok_or_else(|| Error::DegenerateGeometry("SVD failed on the DLT system".into()))?;
    let h = vt.row(3);
    if h[3].abs() <= 1e-300 {
        return Err(Error::DegenerateGeometry(
            "DLT solution is a point at infinity".into(),
        ));
    }
    Ok(Vector3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

fn normal_matrix_condition(h: &Matrix3<f64>) -> f64 {
    let eig = nalgebra::SymmetricEigen::new(*h);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// One Levenberg-Marquardt pass over the weighted reprojection objective.
fn refine(views: &[ResolvedView<'_>], init: Vector3<f64>) -> Result<Vector3<f64>> {
    let mut x = init;
    let mut cost = weighted_cost(views, &[x[0], x[1], x[2]]).ok_or_else(|| {
        Error::DegenerateGeometry("initial triangulation is behind a camera".into())
    })?;
    let mut mu = 1e-3;

    for iteration in 0..MAX_REFINE_ITERATIONS {
        // Weighted Jacobian (2n x 3) and residual (2n).
        let mut h = Matrix3::<f64>::zeros();
        let mut g = Vector3::<f64>::zeros();
        for v in views {
            let r = &v.camera.rotation;
            let y = v.camera.world_to_camera(&[x[0], x[1], x[2]]);
            let proj = v.camera.project_camera_frame(&y)?;
            let w = v.weight.sqrt();
            let inv_z = 1.0 / y[2];
            let du_dy = [v.camera.fx * inv_z, 0.0, -v.camera.fx * y[0] * inv_z * inv_z];
            let dv_dy = [0.0, v.camera.fy * inv_z, -v.camera.fy * y[1] * inv_z * inv_z];
            let mut ju = Vector3::zeros();
            let mut jv = Vector3::zeros();
            for j in 0..3 {
                ju[j] = w * (du_dy[0] * r[0][j] + du_dy[1] * r[1][j] + du_dy[2] * r[2][j]);
                jv[j] = w * (dv_dy[0] * r[0][j] + dv_dy[1] * r[1][j] + dv_dy[2] * r[2][j]);
            }
            let ru = w * (proj[0] - v.obs[0]);
            let rv = w * (proj[1] - v.obs[1]);
            h += ju * ju.transpose() + jv * jv.transpose();
            g += ju * ru + jv * rv;
        }
        if iteration == 0 && normal_matrix_condition(&h) > DEGENERACY_CONDITION_LIMIT {
            return Err(Error::DegenerateGeometry(format!(
                "normal matrix condition {:.3e} exceeds the parallel-ray limit",
                normal_matrix_condition(&h)
            )));
        }
        if (2.0 * g).norm() < GRADIENT_TOLERANCE {
            break;
        }

        let mut stepped = false;
        while mu < 1e12 {
            let a = h + Matrix3::identity() * mu;
            let Some(delta) = a.lu().solve(&(-g)) else {
                mu *= 4.0;
                continue;
            };
            let candidate = x + delta;
            match weighted_cost(views, &[candidate[0], candidate[1], candidate[2]]) {
                Some(c) if c < cost => {
                    x = candidate;
                    cost = c;
                    mu = (mu / 3.0).max(1e-12);
                    stepped = true;
                    break;
                }
                _ => mu *= 4.0,
            }
        }
        if !stepped {
            break;
        }
    }
    Ok(x)
}

/// Triangulates one joint from its multiview observations. Returns the
/// world-frame point minimizing the confidence-weighted squared pixel error
/// and the weighted rms residual.
pub fn triangulate_point(
    cameras: &[CameraModel],
    obs: &MultiviewObservation,
) -> Result<TriangulatedPoint> {
    let views = resolve_views(cameras, obs)?;
    if views.len() < 2 {
        return Err(Error::InsufficientViews { got: views.len() });
    }
    let mut max_separation = 0.0_f64;
    for i in 0..views.len() {
        for j in (i + 1)..views.len() {
            let ci = views[i].camera.center_mm();
            let cj = views[j].camera.center_mm();
            let d = ((ci[0] - cj[0]).powi(2) + (ci[1] - cj[1]).powi(2) + (ci[2] - cj[2]).powi(2))
                .sqrt();
            max_separation = max_separation.max(d);
        }
    }
    if max_separation < 1e-6 {
        return Err(Error::DegenerateGeometry(
            "all observing cameras share one center".into(),
        ));
    }

    let init = dlt_initialize(&views)?;
    let refined = refine(&views, init)?;
    let point = [refined[0], refined[1], refined[2]];

    let mut weighted_sum = 0.0;
    let mut weight_total = 0.0;
    for v in &views {
        let proj = v.camera.project(&point)?;
        let du = proj[0] - v.obs[0];
        let dv = proj[1] - v.obs[1];
        weighted_sum += v.weight * (du * du + dv * dv);
        weight_total += v.weight;
    }
    Ok(TriangulatedPoint {
        position_mm: point,
        rms_px: (weighted_sum / weight_total).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangulatedJoint {
    pub position_mm: [f64; 3],
    pub rms_px: f64,
}

/// One frame's triangulated joints; joints without two usable views stay
/// missing rather than being fabricated.
#[derive(Debug, Clone)]
pub struct TriangulatedPose {
    pub frame_index: u64,
    pub joints: [Option<TriangulatedJoint>; N_CHAIN_JOINTS],
    /// Joints that had observations but failed, with the reason.
    pub failures: Vec<(KeypointName, String)>,
}

impl TriangulatedPose {
    pub fn to_masked(&self) -> MaskedPose {
        let mut positions = [None; N_CHAIN_JOINTS];
        for (slot, j) in positions.iter_mut().zip(self.joints.iter()) {
            *slot = j.map(|t| t.position_mm);
        }
        MaskedPose { positions }
    }

    pub fn reconstructed_count(&self) -> usize {
        self.joints.iter().flatten().count()
    }
}

/// Triangulates every observed chain joint of one frame independently.
/// Fails only if no joint could be reconstructed at all.
pub fn triangulate_pose(
    cameras: &[CameraModel],
    frame_index: u64,
    observations: &[MultiviewObservation],
) -> Result<TriangulatedPose> {
    let mut out = TriangulatedPose {
        frame_index,
        joints: [None; N_CHAIN_JOINTS],
        failures: Vec::new(),
    };
    for obs in observations {
        let Some(ci) = obs.joint.chain_index() else {
            // Ears carry no chain joint; they cannot enter a 3D pose.
            continue;
        };
        match triangulate_point(cameras, obs) {
            Ok(point) => {
                out.joints[ci] = Some(TriangulatedJoint {
                    position_mm: point.position_mm,
                    rms_px: point.rms_px,
                });
            }
            Err(Error::InsufficientViews { .. }) => {
                // Flagged missing, not an error: the joint simply lacks views.
            }
            Err(e) => out.failures.push((obs.joint, e.to_string())),
        }
    }
    if out.reconstructed_count() == 0 {
        return Err(Error::NoObservations(format!(
            "no joint of frame {frame_index} could be triangulated"
        )));
    }
    Ok(out)
}
