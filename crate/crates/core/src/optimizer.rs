//! Single-view 3D lift: minimizes scale-normalized reprojection error plus
//! the negative prior log-likelihood over pose parameters, subject to the
//! joint-angle box and the fixed camera-distance constraint.
//!
//! The objective is
//!
//! ```text
//! E = sum_observed ||observed_i - projected_i||^2 * confidence_i / (count * s^2)
//!     + lambda * (-log_likelihood(prior, normalize(FK(params))))
//! ```
//!
//! with `s` the square root of the observation bounding-box area (the OKS
//! scale convention). Joint limits are enforced by projection each step and
//! the root depth is held at the configured distance. The solver descends
//! along damped model-Hessian directions (Gauss-Newton for the data term,
//! precision-weighted for the prior) with projected Armijo backtracking, so
//! accepted steps never increase the objective. Gradients are exact:
//! forward-mode dual numbers over the generic evaluation path shared with
//! the plain objective.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{
    project_camera_generic, reprojection_residuals, CameraModel, DEFAULT_VISIBILITY_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::metrics::KeypointFrame;
use crate::prior::{log_likelihood_generic, GaussianMixture, POSE_DIM};
use crate::real::vec3::{self, V3};
use crate::real::{Dual, Real, N_FREE_PARAMS};
use crate::skeleton::{
    clamp_to_limits, extract_params, fk_generic, forward_kinematics, normalize_generic,
    KeypointName, Pose3D, PoseParams, Skeleton, N_CHAIN_JOINTS, N_NON_ROOT, ROOT_CHAIN_INDEX,
};

/// Internal scaling of the translation coordinates in the optimization
/// vector, so millimeter and radian axes have comparable curvature.
const TRANSLATION_SCALE: f64 = 100.0;

const ARMIJO_SIGMA: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

/// Minimum observed joints for a non-degenerate single-view fit.
pub const MIN_OBSERVED_JOINTS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Prior weight (dimensionless after residual normalization).
    pub lambda: f64,
    /// Fixed camera distance: the root depth is pinned to this, millimeters.
    pub fixed_distance_mm: f64,
    pub max_iterations: usize,
    /// Stop when no coordinate moves more than this in one accepted step.
    pub step_tolerance: f64,
    /// Stop when an accepted step decreases the objective by less than this.
    pub objective_tolerance: f64,
    pub restarts: usize,
    pub seed: u64,
    pub visibility_threshold: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda: 1.0,
            fixed_distance_mm: 400.0,
            max_iterations: 300,
            step_tolerance: 1e-6,
            objective_tolerance: 1e-9,
            restarts: 4,
            seed: 0,
            visibility_threshold: DEFAULT_VISIBILITY_THRESHOLD,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "prior weight must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.fixed_distance_mm > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "fixed distance must be positive, got {}",
                self.fixed_distance_mm
            )));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidSpec("max iterations must be >= 1".into()));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidSpec("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: PoseParams,
    pub pose: Pose3D,
    /// Final objective; equals `objective(...)` recomputed at `params`.
    pub objective: f64,
    /// Unweighted rms pixel error over the included joints.
    pub reprojection_rms_px: f64,
    /// Prior log-likelihood of the normalized fitted pose, when a prior was
    /// supplied.
    pub prior_log_likelihood: Option<f64>,
    /// Iterations spent by the winning restart.
    pub iterations: usize,
    pub converged: bool,
    /// Final objective of every restart, in restart order.
    pub restart_objectives: Vec<f64>,
}

/// Pre-resolved observation data shared by every objective evaluation.
struct ObjectiveContext<'a> {
    skeleton: &'a Skeleton,
    camera: &'a CameraModel,
    /// (chain index, observed pixel position, confidence).
    observed: Vec<(usize, [f64; 2], f64)>,
    /// `1 / (count * s^2)`.
    data_scale: f64,
    gmm: Option<&'a GaussianMixture>,
    lambda: f64,
    depth_mm: f64,
}

impl<'a> ObjectiveContext<'a> {
    fn new(
        skeleton: &'a Skeleton,
        camera: &'a CameraModel,
        frame: &KeypointFrame,
        gmm: Option<&'a GaussianMixture>,
        lambda: f64,
        visibility_threshold: f64,
        depth_mm: f64,
    ) -> Result<Self> {
        if lambda > 0.0 {
            let gmm = gmm.ok_or(Error::MissingPrior { lambda })?;
            if gmm.dim() != POSE_DIM {
                return Err(Error::ShapeMismatch(format!(
                    "prior has dimension {}, poses have {POSE_DIM}",
                    gmm.dim()
                )));
            }
        }
        let mut observed = Vec::new();
        for (ci, joint) in KeypointName::CHAIN.iter().enumerate() {
            if let Some(kp) = frame.get(*joint) {
                if kp.confidence >= visibility_threshold {
                    observed.push((ci, kp.position, kp.confidence));
                }
            }
        }
        if observed.is_empty() {
            return Err(Error::NoObservations(
                "no chain joint reaches the visibility threshold".into(),
            ));
        }
        let bbox = frame.bbox_or_derived()?;
        let s2 = bbox[2] * bbox[3];
        if !(s2 > 0.0) {
            return Err(Error::InsufficientData(format!(
                "observation bounding box has non-positive area {s2}"
            )));
        }
        let data_scale = 1.0 / (observed.len() as f64 * s2);
        Ok(ObjectiveContext {
            skeleton,
            camera,
            observed,
            data_scale,
            gmm,
            lambda,
            depth_mm,
        })
    }

    /// The shared evaluation path: plain with `T = f64`, differentiated with
    /// `T = Dual`.
    fn eval<T: Real>(&self, x: &[T; N_FREE_PARAMS]) -> Result<T> {
        let rot: V3<T> = [x[0], x[1], x[2]];
        let trans: V3<T> = [
            x[3] * T::cst(TRANSLATION_SCALE),
            x[4] * T::cst(TRANSLATION_SCALE),
            T::cst(self.depth_mm),
        ];
        let mut angles = [[T::cst(0.0); 2]; N_NON_ROOT];
        for (slot, pair) in angles.iter_mut().enumerate() {
            pair[0] = x[5 + 2 * slot];
            pair[1] = x[5 + 2 * slot + 1];
        }
        let positions = fk_generic(self.skeleton, &rot, &trans, &angles);

        let mut data = T::cst(0.0);
        for (ci, obs, conf) in &self.observed {
            let proj = project_camera_generic(self.camera, &positions[*ci])?;
            let du = T::cst(obs[0]) - proj[0];
            let dv = T::cst(obs[1]) - proj[1];
            data = data + (du * du + dv * dv) * T::cst(*conf);
        }
        let mut total = data * T::cst(self.data_scale);

        if self.lambda > 0.0 {
            let normalized = normalize_generic(&positions)?;
            let ll = log_likelihood_generic(self.gmm.unwrap(), &normalized);
            total = total - T::cst(self.lambda) * ll;
        }
        Ok(total)
    }

    fn eval_f64(&self, x: &[f64; N_FREE_PARAMS]) -> Result<f64> {
        self.eval(x)
    }

    /// Value and exact gradient in one forward-mode pass.
    fn eval_grad(&self, x: &[f64; N_FREE_PARAMS]) -> Result<(f64, [f64; N_FREE_PARAMS])> {
        let mut dx = [Dual::cst(0.0); N_FREE_PARAMS];
        for i in 0..N_FREE_PARAMS {
            dx[i] = Dual::var(x[i], i);
        }
        let out = self.eval(&dx)?;
        Ok((out.v, out.d))
    }

    /// Value, exact gradient and a positive-semidefinite model Hessian
    /// (Gauss-Newton for the data term, responsibility-weighted precision
    /// for the prior term), all from one dual-number pass.
    fn eval_model(&self, x: &[f64; N_FREE_PARAMS]) -> Result<ModelEval> {
        let mut dx = [Dual::cst(0.0); N_FREE_PARAMS];
        for i in 0..N_FREE_PARAMS {
            dx[i] = Dual::var(x[i], i);
        }
        let rot: V3<Dual> = [dx[0], dx[1], dx[2]];
        let trans: V3<Dual> = [
            dx[3] * Dual::cst(TRANSLATION_SCALE),
            dx[4] * Dual::cst(TRANSLATION_SCALE),
            Dual::cst(self.depth_mm),
        ];
        let mut angles = [[Dual::cst(0.0); 2]; N_NON_ROOT];
        for (slot, pair) in angles.iter_mut().enumerate() {
            pair[0] = dx[5 + 2 * slot];
            pair[1] = dx[5 + 2 * slot + 1];
        }
        let positions = fk_generic(self.skeleton, &rot, &trans, &angles);

        let mut value = 0.0;
        let mut gradient = [0.0; N_FREE_PARAMS];
        let mut hessian = nalgebra::SMatrix::<f64, N_FREE_PARAMS, N_FREE_PARAMS>::zeros();

        for (ci, obs, conf) in &self.observed {
            let proj = project_camera_generic(self.camera, &positions[*ci])?;
            let du = Dual::cst(obs[0]) - proj[0];
            let dv = Dual::cst(obs[1]) - proj[1];
            let w = conf * self.data_scale;
            value += w * (du.v * du.v + dv.v * dv.v);
            for i in 0..N_FREE_PARAMS {
                gradient[i] += 2.0 * w * (du.v * du.d[i] + dv.v * dv.d[i]);
                for j in 0..=i {
                    hessian[(i, j)] += 2.0 * w * (du.d[i] * du.d[j] + dv.d[i] * dv.d[j]);
                }
            }
        }

        if self.lambda > 0.0 {
            let z = normalize_generic(&positions)?;
            let gmm = self.gmm.unwrap();
            // Responsibilities at the current normalized pose.
            let k = gmm.components();
            let mut lp = vec![f64::NEG_INFINITY; k];
            for (c, lpc) in lp.iter_mut().enumerate() {
                if gmm.weights()[c] <= 0.0 {
                    continue;
                }
                let mut quad = 0.0;
                let mut log_norm = 0.0;
                for d in 0..POSE_DIM {
                    let diff = z[d].v - gmm.mean(c)[d];
                    quad += diff * diff / gmm.variance(c)[d];
                    log_norm += (std::f64::consts::TAU * gmm.variance(c)[d]).ln();
                }
                *lpc = gmm.weights()[c].ln() - 0.5 * (quad + log_norm);
            }
            let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = lp.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum_exp.ln();
            value -= self.lambda * lse;

            // d(-ll)/dz and the precision-weighted curvature per dimension.
            for d in 0..POSE_DIM {
                let mut dll = 0.0;
                let mut curv = 0.0;
                for c in 0..k {
                    if gmm.weights()[c] <= 0.0 {
                        continue;
                    }
                    let resp = (lp[c] - lse).exp();
                    dll += resp * (gmm.mean(c)[d] - z[d].v) / gmm.variance(c)[d];
                    curv += resp / gmm.variance(c)[d];
                }
                for i in 0..N_FREE_PARAMS {
                    gradient[i] -= self.lambda * dll * z[d].d[i];
                    for j in 0..=i {
                        hessian[(i, j)] += self.lambda * curv * z[d].d[i] * z[d].d[j];
                    }
                }
            }
        }

        for i in 0..N_FREE_PARAMS {
            for j in 0..i {
                hessian[(j, i)] = hessian[(i, j)];
            }
        }
        Ok(ModelEval {
            value,
            gradient,
            hessian,
        })
    }
}

struct ModelEval {
    value: f64,
    gradient: [f64; N_FREE_PARAMS],
    hessian: nalgebra::SMatrix<f64, N_FREE_PARAMS, N_FREE_PARAMS>,
}

fn params_to_x(params: &PoseParams) -> [f64; N_FREE_PARAMS] {
    let mut x = [0.0; N_FREE_PARAMS];
    x[0..3].copy_from_slice(&params.root_rotation);
    x[3] = params.root_translation[0] / TRANSLATION_SCALE;
    x[4] = params.root_translation[1] / TRANSLATION_SCALE;
    for (slot, pair) in params.joint_angles.iter().enumerate() {
        x[5 + 2 * slot] = pair[0];
        x[5 + 2 * slot + 1] = pair[1];
    }
    x
}

fn x_to_params(x: &[f64; N_FREE_PARAMS], depth_mm: f64) -> PoseParams {
    let mut joint_angles = [[0.0; 2]; N_NON_ROOT];
    for (slot, pair) in joint_angles.iter_mut().enumerate() {
        pair[0] = x[5 + 2 * slot];
        pair[1] = x[5 + 2 * slot + 1];
    }
    PoseParams {
        root_rotation: [x[0], x[1], x[2]],
        root_translation: [
            x[3] * TRANSLATION_SCALE,
            x[4] * TRANSLATION_SCALE,
            depth_mm,
        ],
        joint_angles,
    }
}

fn project_box(x: &mut [f64; N_FREE_PARAMS], limit: f64) {
    for v in x.iter_mut().skip(5) {
        *v = v.clamp(-limit, limit);
    }
}

/// The fitting objective at the given (clamped) parameters. The root depth
/// is taken from the parameters themselves; [`fit_pose`] pins it to the
/// configured distance for every iterate it produces.
pub fn objective(
    skeleton: &Skeleton,
    camera: &CameraModel,
    frame: &KeypointFrame,
    gmm: Option<&GaussianMixture>,
    config: &FitConfig,
    params: &PoseParams,
) -> Result<f64> {
    config.validate()?;
    let clamped = clamp_to_limits(skeleton, params);
    let ctx = ObjectiveContext::new(
        skeleton,
        camera,
        frame,
        gmm,
        config.lambda,
        config.visibility_threshold,
        clamped.root_translation[2],
    )?;
    ctx.eval_f64(&params_to_x(&clamped))
}

/// Maximum relative discrepancy between the dual-number gradient and a
/// central finite difference (step 1e-6) of the objective, over all free
/// coordinates. The denominator carries a unit floor so near-zero gradient
/// coordinates do not inflate the ratio. Meaningful at parameters strictly
/// interior to the joint limits.
pub fn check_gradient(
    skeleton: &Skeleton,
    camera: &CameraModel,
    frame: &KeypointFrame,
    gmm: Option<&GaussianMixture>,
    config: &FitConfig,
    params: &PoseParams,
) -> Result<f64> {
    config.validate()?;
    let ctx = ObjectiveContext::new(
        skeleton,
        camera,
        frame,
        gmm,
        config.lambda,
        config.visibility_threshold,
        params.root_translation[2],
    )?;
    let x = params_to_x(params);
    let (_, analytic) = ctx.eval_grad(&x)?;

    let h = 1e-6;
    let mut worst = 0.0_f64;
    for i in 0..N_FREE_PARAMS {
        let mut xp = x;
        xp[i] += h;
        let mut xm = x;
        xm[i] -= h;
        let fd = (ctx.eval_f64(&xp)? - ctx.eval_f64(&xm)?) / (2.0 * h);
        let denom = analytic[i].abs().max(fd.abs()).max(1.0);
        worst = worst.max((analytic[i] - fd).abs() / denom);
    }
    Ok(worst)
}

struct DescentOutcome {
    x: [f64; N_FREE_PARAMS],
    objective: f64,
    iterations: usize,
    converged: bool,
    /// Objective after every accepted step; asserted monotone in tests.
    #[allow(dead_code)]
    trace: Vec<f64>,
}

/// Projected descent with damped model-Hessian directions (Gauss-Newton for
/// the data term, precision-weighted for the prior), Armijo backtracking,
/// and projection onto the joint-angle box each step. Every accepted
/// iterate is feasible and never increases the objective.
fn descend(
    ctx: &ObjectiveContext<'_>,
    limit: f64,
    config: &FitConfig,
    mut x: [f64; N_FREE_PARAMS],
) -> Result<DescentOutcome> {
    project_box(&mut x, limit);
    let mut model = ctx.eval_model(&x)?;
    let mut fx = model.value;
    let mut trace = vec![fx];
    let mut mu = 1e-4;
    let mut converged = false;
    let mut iterations = 0;

    let line_search = |x: &[f64; N_FREE_PARAMS],
                       fx: f64,
                       g: &[f64; N_FREE_PARAMS],
                       d: &[f64; N_FREE_PARAMS]|
     -> Option<([f64; N_FREE_PARAMS], f64)> {
        let mut t = 1.0;
        for _ in 0..MAX_BACKTRACKS {
            let mut candidate = *x;
            for i in 0..N_FREE_PARAMS {
                candidate[i] += t * d[i];
            }
            project_box(&mut candidate, limit);
            if let Ok(fc) = ctx.eval_f64(&candidate) {
                let mut decrease = 0.0;
                for i in 0..N_FREE_PARAMS {
                    decrease += g[i] * (x[i] - candidate[i]);
                }
                if decrease > 0.0 && fc <= fx - ARMIJO_SIGMA * decrease {
                    return Some((candidate, fc));
                }
            }
            t *= 0.5;
        }
        None
    };

    'outer: for _ in 0..config.max_iterations {
        iterations += 1;

        // Escalate damping until the damped-Newton direction yields an
        // acceptable step; the diagonal scaling keeps the damping meaningful
        // across the mixed radian/rescaled-millimeter axes.
        let mut accepted = None;
        for _ in 0..25 {
            let mut damped = model.hessian;
            for i in 0..N_FREE_PARAMS {
                damped[(i, i)] += mu * model.hessian[(i, i)].max(1e-8);
            }
            if let Some(chol) = nalgebra::Cholesky::new(damped) {
                let mut rhs = nalgebra::SVector::<f64, N_FREE_PARAMS>::zeros();
                for i in 0..N_FREE_PARAMS {
                    rhs[i] = -model.gradient[i];
                }
                let d_vec = chol.solve(&rhs);
                let mut d = [0.0; N_FREE_PARAMS];
                for i in 0..N_FREE_PARAMS {
                    d[i] = d_vec[i];
                }
                if let Some(hit) = line_search(&x, fx, &model.gradient, &d) {
                    accepted = Some(hit);
                    break;
                }
            }
            mu *= 10.0;
            if mu > 1e12 {
                break;
            }
        }
        let Some((xn, fn_val)) = accepted else {
            // No descent step exists at line-search resolution: stationary.
            converged = true;
            break 'outer;
        };
        mu = (mu / 3.0).max(1e-12);

        let mut dx = 0.0_f64;
        for i in 0..N_FREE_PARAMS {
            dx = dx.max((xn[i] - x[i]).abs());
        }
        let df = fx - fn_val;
        x = xn;
        fx = fn_val;
        trace.push(fx);
        if dx < config.step_tolerance || df < config.objective_tolerance {
            converged = true;
            break;
        }
        model = ctx.eval_model(&x)?;
    }

    Ok(DescentOutcome {
        x,
        objective: fx,
        iterations,
        converged,
        trace,
    })
}

/// Yaw about the camera axis aligning the dorsal neutral pose with the
/// observed 2D keypoints: the least-squares 2D rotation between the
/// centered neutral-pose image-plane coordinates and the centered observed
/// pixels, over every visible chain joint. Averaging over the whole body
/// keeps individual limb bends from biasing the estimate.
fn estimate_yaw(
    skeleton: &Skeleton,
    frame: &KeypointFrame,
    visibility_threshold: f64,
) -> Option<f64> {
    let neutral = neutral_positions(skeleton);
    // Dorsal base rotation Rx(pi) maps body (x, y, z) to camera (x, -y, -z);
    // at a fixed depth the image-plane layout is the (x, -y) projection.
    let mut pairs: Vec<([f64; 2], [f64; 2])> = Vec::new();
    for (ci, joint) in KeypointName::CHAIN.iter().enumerate() {
        let Some(kp) = frame.get(*joint) else { continue };
        if kp.confidence < visibility_threshold {
            continue;
        }
        pairs.push(([neutral[ci][0], -neutral[ci][1]], kp.position));
    }
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mut qc = [0.0; 2];
    let mut oc = [0.0; 2];
    for (q, o) in &pairs {
        qc[0] += q[0] / n;
        qc[1] += q[1] / n;
        oc[0] += o[0] / n;
        oc[1] += o[1] / n;
    }
    let mut dot = 0.0;
    let mut cross = 0.0;
    for (q, o) in &pairs {
        let a = [q[0] - qc[0], q[1] - qc[1]];
        let b = [o[0] - oc[0], o[1] - oc[1]];
        dot += a[0] * b[0] + a[1] * b[1];
        cross += a[0] * b[1] - a[1] * b[0];
    }
    if dot == 0.0 && cross == 0.0 {
        return None;
    }
    Some(cross.atan2(dot))
}

fn neutral_positions(skeleton: &Skeleton) -> [[f64; 3]; N_CHAIN_JOINTS] {
    fk_generic(skeleton, &[0.0; 3], &[0.0; 3], &[[0.0; 2]; N_NON_ROOT])
}

/// Translation placing the neutral-pose centroid over the observation
/// bounding-box center at the pinned depth.
fn centered_translation(
    skeleton: &Skeleton,
    camera: &CameraModel,
    frame: &KeypointFrame,
    rotation: &[f64; 3],
    depth_mm: f64,
) -> Result<[f64; 3]> {
    let bbox = frame.bbox_or_derived()?;
    let center = [bbox[0] + bbox[2] / 2.0, bbox[1] + bbox[3] / 2.0];
    let neutral = neutral_positions(skeleton);
    let mut centroid = [0.0; 3];
    for p in &neutral {
        centroid = vec3::add(&centroid, p);
    }
    centroid = vec3::scale(&centroid, 1.0 / N_CHAIN_JOINTS as f64);
    let r = vec3::euler_xyz(rotation);
    let offset = vec3::mat_vec(&r, &centroid);
    Ok([
        (center[0] - camera.cx) * depth_mm / camera.fx - offset[0],
        (center[1] - camera.cy) * depth_mm / camera.fy - offset[1],
        depth_mm,
    ])
}

/// Kinematic ray-sphere lifting: from the pinned root depth, walk the chain
/// placing every observed joint on its pixel ray at bone-length distance
/// from its parent, choosing the intersection branch closest to the neutral
/// direction under the base rotation. Unobserved joints and rays missing
/// the reachable sphere fall back to the nearest reachable point. The
/// result seeds descent inside the anatomically plausible depth branch.
fn lifted_positions(
    skeleton: &Skeleton,
    camera: &CameraModel,
    frame: &KeypointFrame,
    base_rotation: &[f64; 3],
    fallback_translation: &[f64; 3],
    visibility_threshold: f64,
    depth_mm: f64,
) -> [[f64; 3]; N_CHAIN_JOINTS] {
    let r0 = vec3::euler_xyz(base_rotation);
    let ray_of = |joint: KeypointName| -> Option<[f64; 3]> {
        let kp = frame.get(joint)?;
        if kp.confidence < visibility_threshold {
            return None;
        }
        let dir = [
            (kp.position[0] - camera.cx) / camera.fx,
            (kp.position[1] - camera.cy) / camera.fy,
            1.0,
        ];
        let n = vec3::norm(&dir);
        Some(vec3::scale(&dir, 1.0 / n))
    };

    let mut positions = [[0.0; 3]; N_CHAIN_JOINTS];
    positions[ROOT_CHAIN_INDEX] = match ray_of(KeypointName::TailBase) {
        Some(ray) => vec3::scale(&ray, depth_mm / ray[2]),
        None => *fallback_translation,
    };

    for &ci in skeleton.topo_order().iter().skip(1) {
        let bone = skeleton.bone_by_chain(ci).unwrap();
        let parent = positions[bone.parent.chain_index().unwrap()];
        let neutral_dir = vec3::mat_vec(&r0, &bone.direction);
        let neutral_pos = vec3::add(&parent, &vec3::scale(&neutral_dir, bone.length_mm));

        positions[ci] = match ray_of(KeypointName::CHAIN[ci]) {
            Some(ray) => {
                let rp = vec3::dot(&ray, &parent);
                let disc = rp * rp - vec3::dot(&parent, &parent)
                    + bone.length_mm * bone.length_mm;
                if disc >= 0.0 {
                    let sqrt_disc = disc.sqrt();
                    let candidates = [rp + sqrt_disc, rp - sqrt_disc];
                    let mut best: Option<([f64; 3], f64)> = None;
                    for t in candidates {
                        if t <= 0.0 {
                            continue;
                        }
                        let c = vec3::scale(&ray, t);
                        let dir = vec3::scale(
                            &vec3::sub(&c, &parent),
                            1.0 / bone.length_mm,
                        );
                        let score = vec3::dot(&dir, &neutral_dir);
                        if best.map(|(_, s)| score > s).unwrap_or(true) {
                            best = Some((c, score));
                        }
                    }
                    best.map(|(c, _)| c).unwrap_or(neutral_pos)
                } else {
                    // Ray misses the reachable sphere: nearest sphere point
                    // toward the ray's closest approach.
                    let foot = vec3::scale(&ray, rp.max(0.0));
                    let offset = vec3::sub(&foot, &parent);
                    let n = vec3::norm(&offset);
                    if n > 1e-9 {
                        vec3::add(&parent, &vec3::scale(&offset, bone.length_mm / n))
                    } else {
                        neutral_pos
                    }
                }
            }
            None => neutral_pos,
        };
    }
    positions
}

/// Starting point for restart `r`: the ray-sphere lift for restart 0 (and
/// for every restart when no prior is available), prior component means
/// (placed dorsally, converted through the bone-wise parameter extraction)
/// for later restarts, with seeded jitter of at most 10 degrees per angle
/// from restart 1 on.
fn restart_params(
    skeleton: &Skeleton,
    camera: &CameraModel,
    frame: &KeypointFrame,
    gmm: Option<&GaussianMixture>,
    config: &FitConfig,
    restart: usize,
) -> Result<PoseParams> {
    let depth = config.fixed_distance_mm;
    let yaw = estimate_yaw(skeleton, frame, config.visibility_threshold).unwrap_or(0.0);
    let base_rotation = [std::f64::consts::PI, 0.0, yaw];

    let mut params = if restart == 0 || gmm.is_none() {
        let translation =
            centered_translation(skeleton, camera, frame, &base_rotation, depth)?;
        let lifted = lifted_positions(
            skeleton,
            camera,
            frame,
            &base_rotation,
            &translation,
            config.visibility_threshold,
            depth,
        );
        let mut p = extract_params(skeleton, &Pose3D { positions: lifted });
        p.root_translation[2] = depth;
        p
    } else {
        let gmm = gmm.unwrap();
        let mean = gmm.mean((restart - 1) % gmm.components());

        // Place the normalized mean the way the neutral pose would sit:
        // scale back to skeleton units, map normalized axes to body axes
        // via the neutral pose's own normalization frame, then rotate
        // dorsally. The bone-wise extraction turns the positions into
        // feasible parameters.
        let neutral = neutral_positions(skeleton);
        let n = neutral[KeypointName::NeckBase.chain_index().unwrap()];
        let s = neutral[KeypointName::SpineMid.chain_index().unwrap()];
        let b = neutral[ROOT_CHAIN_INDEX];
        let axis = vec3::sub(&s, &n);
        let scale = vec3::norm(&axis);
        let x_axis = vec3::scale(&axis, 1.0 / scale);
        let t = vec3::sub(&b, &n);
        let t_perp = vec3::sub(&t, &vec3::scale(&x_axis, vec3::dot(&t, &x_axis)));
        let y_axis = vec3::scale(&t_perp, 1.0 / vec3::norm(&t_perp));
        let z_axis = vec3::cross(&x_axis, &y_axis);
        // Columns X, Y, Z: body-from-normalized.
        let m = [
            [x_axis[0], y_axis[0], z_axis[0]],
            [x_axis[1], y_axis[1], z_axis[1]],
            [x_axis[2], y_axis[2], z_axis[2]],
        ];
        let r0 = vec3::euler_xyz(&base_rotation);
        let translation = centered_translation(skeleton, camera, frame, &base_rotation, depth)?;

        let mut root_body = [0.0; 3];
        for (k, rb) in root_body.iter_mut().enumerate() {
            *rb = mean[3 * ROOT_CHAIN_INDEX + k];
        }
        let mut positions = [[0.0; 3]; N_CHAIN_JOINTS];
        for ci in 0..N_CHAIN_JOINTS {
            let q = [
                mean[3 * ci] - root_body[0],
                mean[3 * ci + 1] - root_body[1],
                mean[3 * ci + 2] - root_body[2],
            ];
            let body = vec3::scale(&vec3::mat_vec(&m, &q), scale);
            positions[ci] = vec3::add(&vec3::mat_vec(&r0, &body), &translation);
        }
        extract_params(skeleton, &Pose3D { positions })
    };

    if restart > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(restart as u64));
        let jitter = 10.0_f64.to_radians();
        for pair in &mut params.joint_angles {
            pair[0] += rng.random_range(-jitter..jitter);
            pair[1] += rng.random_range(-jitter..jitter);
        }
        if gmm.is_none() {
            for r in &mut params.root_rotation {
                *r += rng.random_range(-jitter..jitter);
            }
        }
    }
    params.root_translation[2] = depth;
    Ok(clamp_to_limits(skeleton, &params))
}

/// Fits pose parameters to one frame of 2D keypoints. Runs the configured
/// number of restarts and returns the best result by final objective.
/// Deterministic for identical inputs and seed.
pub fn fit_pose(
    skeleton: &Skeleton,
    camera: &CameraModel,
    frame: &KeypointFrame,
    gmm: Option<&GaussianMixture>,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    frame.validate()?;
    let observed = frame.observed_chain_count(config.visibility_threshold);
    if observed < MIN_OBSERVED_JOINTS {
        return Err(Error::Underdetermined {
            observed,
            needed: MIN_OBSERVED_JOINTS,
        });
    }
    let ctx = ObjectiveContext::new(
        skeleton,
        camera,
        frame,
        gmm,
        config.lambda,
        config.visibility_threshold,
        config.fixed_distance_mm,
    )?;
    let limit = skeleton.angle_limit_rad();

    let mut best: Option<DescentOutcome> = None;
    let mut restart_objectives = Vec::with_capacity(config.restarts);
    let mut last_error = None;
    for restart in 0..config.restarts {
        let start = restart_params(skeleton, camera, frame, gmm, config, restart)?;
        match descend(&ctx, limit, config, params_to_x(&start)) {
            Ok(outcome) => {
                restart_objectives.push(outcome.objective);
                let better = best
                    .as_ref()
                    .map(|b| outcome.objective < b.objective)
                    .unwrap_or(true);
                if better {
                    best = Some(outcome);
                }
            }
            Err(e) => {
                restart_objectives.push(f64::INFINITY);
                last_error = Some(e);
            }
        }
    }
    let Some(best) = best else {
        return Err(last_error.unwrap_or_else(|| {
            Error::DegenerateGeometry("every restart failed to evaluate".into())
        }));
    };

    let params = x_to_params(&best.x, config.fixed_distance_mm);
    let pose = forward_kinematics(skeleton, &params)?;
    let residuals = reprojection_residuals(camera, &pose, frame, config.visibility_threshold)?;
    let prior_log_likelihood = match gmm {
        Some(g) => {
            let normalized = crate::skeleton::normalize_pose(&pose)?;
            Some(crate::prior::log_likelihood(g, &normalized)?)
        }
        None => None,
    };
    Ok(FitResult {
        params,
        pose,
        objective: best.objective,
        reprojection_rms_px: residuals.rms_px(),
        prior_log_likelihood,
        iterations: best.iterations,
        converged: best.converged,
        restart_objectives,
    })
}
