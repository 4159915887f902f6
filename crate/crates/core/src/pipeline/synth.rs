//! Seed-deterministic synthetic data: smooth in-limit joint-angle
//! trajectories with a periodic limb component at the gait frequency, run
//! through forward kinematics and projected into one or three cameras, with
//! optional pixel noise and per-joint occlusion.
//!
//! The default angle envelopes keep the poses identifiable from a single
//! top-down view: axial tilts wander only a few degrees, proximal limb
//! elevations stay biased below the horizontal, and distal limbs swing at
//! the gait frequency. Within these ranges every depth-mirrored twin of a
//! bone violates the joint limits, which is what makes the noise-free
//! round-trip fit well-posed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::metrics::SourceTag;
use crate::pipeline::formats::{
    KeypointEntry, LabelFrame, LabelView, MultiviewLabelFile, TrackFile, TrackFrame,
};
use crate::skeleton::{
    forward_kinematics, KeypointName, PoseParams, Skeleton, N_NON_ROOT,
};

/// Root depth (and fitting distance) of the synthetic arena, millimeters.
pub const SYNTH_DISTANCE_MM: f64 = 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraLayout {
    SingleTopDown,
    ThreeViewRig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionOverride {
    pub joint: KeypointName,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub frames: usize,
    pub fps: f64,
    pub gait_hz: f64,
    pub belt_speed_cm_s: f64,
    /// Gaussian pixel noise added to every observed coordinate.
    pub noise_px: f64,
    /// Per-frame, per-joint dropout probability.
    pub occlusion: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub occlusion_per_joint: Vec<OcclusionOverride>,
    pub layout: CameraLayout,
    /// Scales every joint-angle envelope. At 1 the poses stay identifiable
    /// from a single view; larger values make depth-mirrored limb twins
    /// feasible within the joint limits (useful for studying the prior's
    /// effect on ambiguous fits). Angles are clamped to the limits either
    /// way.
    #[serde(default = "default_amplitude_scale")]
    pub amplitude_scale: f64,
    /// Planar body wander range in millimeters. Zero models a treadmill
    /// (the animal stays in place while the feet cycle).
    #[serde(default = "default_wander_mm")]
    pub wander_mm: f64,
    /// Range (radians) of per-joint resting-posture offsets, drawn once per
    /// run. Zero centers the gait on the skeleton's neutral pose; positive
    /// values model a strain-specific stance the skeleton alone does not
    /// predict.
    #[serde(default)]
    pub posture_bias: f64,
}

fn default_wander_mm() -> f64 {
    30.0
}

fn default_amplitude_scale() -> f64 {
    1.0
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            frames: 100,
            fps: 24.0,
            gait_hz: 3.0,
            belt_speed_cm_s: 20.0,
            noise_px: 0.0,
            occlusion: 0.0,
            occlusion_per_joint: Vec::new(),
            layout: CameraLayout::SingleTopDown,
            amplitude_scale: 1.0,
            wander_mm: 30.0,
            posture_bias: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::InvalidSpec("frame count must be positive".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::InvalidSpec(format!("fps must be positive, got {}", self.fps)));
        }
        if !(self.gait_hz > 0.0 && self.gait_hz < self.fps / 2.0) {
            return Err(Error::InvalidSpec(format!(
                "gait frequency {} Hz must lie in (0, Nyquist = {} Hz)",
                self.gait_hz,
                self.fps / 2.0
            )));
        }
        if !(0.0..=1.0).contains(&self.occlusion) {
            return Err(Error::InvalidSpec(format!(
                "occlusion probability {} outside [0, 1]",
                self.occlusion
            )));
        }
        for o in &self.occlusion_per_joint {
            if !(0.0..=1.0).contains(&o.probability) {
                return Err(Error::InvalidSpec(format!(
                    "occlusion probability {} for '{}' outside [0, 1]",
                    o.probability, o.joint
                )));
            }
        }
        if !(self.noise_px >= 0.0) {
            return Err(Error::InvalidSpec("noise must be non-negative".into()));
        }
        if !(self.amplitude_scale > 0.0 && self.amplitude_scale <= 2.5) {
            return Err(Error::InvalidSpec(format!(
                "amplitude scale {} outside (0, 2.5]",
                self.amplitude_scale
            )));
        }
        if !(self.wander_mm >= 0.0) {
            return Err(Error::InvalidSpec("wander must be non-negative".into()));
        }
        if !(0.0..=0.4).contains(&self.posture_bias) {
            return Err(Error::InvalidSpec(format!(
                "posture bias {} outside [0, 0.4]",
                self.posture_bias
            )));
        }
        Ok(())
    }

    fn occlusion_for(&self, joint: KeypointName) -> f64 {
        self.occlusion_per_joint
            .iter()
            .find(|o| o.joint == joint)
            .map(|o| o.probability)
            .unwrap_or(self.occlusion)
    }
}

/// Cameras of a layout; the primary (top-down) camera has identity
/// extrinsics, i.e. poses live in its frame.
pub fn layout_cameras(layout: CameraLayout) -> Vec<CameraModel> {
    let top = CameraModel::identity_extrinsics(
        1000.0,
        1000.0,
        500.0,
        500.0,
        [1000, 1000],
        Some("top".into()),
    );
    match layout {
        CameraLayout::SingleTopDown => vec![top],
        CameraLayout::ThreeViewRig => {
            // The world frame is the top camera's: +z points down into the
            // arena, so world "up" is -z. The arena center sits at depth
            // 400 mm on the optical axis.
            let center = [0.0, 0.0, SYNTH_DISTANCE_MM];
            let up = [0.0, 0.0, -1.0];
            let side_a = CameraModel::look_at(
                [-450.0, 0.0, SYNTH_DISTANCE_MM - 30.0],
                center,
                up,
                1000.0,
                1000.0,
                500.0,
                500.0,
                [1000, 1000],
                Some("side_a".into()),
            )
            .expect("side_a layout is valid");
            let side_b = CameraModel::look_at(
                [0.0, -450.0, SYNTH_DISTANCE_MM - 30.0],
                center,
                up,
                1000.0,
                1000.0,
                500.0,
                500.0,
                [1000, 1000],
                Some("side_b".into()),
            )
            .expect("side_b layout is valid");
            vec![top, side_a, side_b]
        }
    }
}

/// Per-slot trajectory: `center + amplitude * sin(tau * freq * t + phase)`.
#[derive(Clone, Copy)]
struct Oscillation {
    center: f64,
    amplitude: f64,
    frequency_hz: f64,
    phase: f64,
}

impl Oscillation {
    fn at(&self, t: f64) -> f64 {
        self.center + self.amplitude * (std::f64::consts::TAU * self.frequency_hz * t + self.phase).sin()
    }
}

struct TrajectoryPlan {
    yaw: Oscillation,
    pitch: Oscillation,
    roll: Oscillation,
    wander_x: Oscillation,
    wander_y: Oscillation,
    angles: [[Oscillation; 2]; N_NON_ROOT],
}

/// Non-root slots of the proximal limb joints (shoulders and hips), whose
/// elevation is biased below the horizontal.
const PROXIMAL_SLOTS: [usize; 4] = [5, 8, 11, 14];
/// Non-root slots of the axial bones (nose, neck, spine, tail segments).
const AXIAL_SLOTS: [usize; 5] = [0, 1, 2, 3, 4];

fn plan_trajectories(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> TrajectoryPlan {
    let wander = spec.wander_mm;
    let slow = |rng: &mut ChaCha8Rng, center: f64, amplitude: f64| Oscillation {
        center,
        amplitude: amplitude * rng.random_range(0.5..1.0),
        frequency_hz: rng.random_range(0.1..0.35),
        phase: rng.random_range(0.0..std::f64::consts::TAU),
    };
    let yaw_center = rng.random_range(-0.4..0.4);
    let yaw = slow(rng, yaw_center, 0.25);
    let pitch = slow(rng, std::f64::consts::PI, 0.05);
    let roll = slow(rng, 0.0, 0.05);
    let x_center = rng.random_range(-0.67..0.67) * wander;
    let wander_x = slow(rng, x_center, wander);
    let y_center = rng.random_range(-0.67..0.67) * wander;
    let wander_y = slow(rng, y_center, wander);

    // Trot-like phasing: diagonal limb pairs move together, the distal
    // joints lag their parent slightly.
    let base_phase = rng.random_range(0.0..std::f64::consts::TAU);
    let limb_phase = |slot: usize| -> f64 {
        let (side, rank) = match slot {
            5..=7 => (0.0, slot - 5),            // left fore
            8..=10 => (std::f64::consts::PI, slot - 8), // right fore
            11..=13 => (std::f64::consts::PI, slot - 11), // left hind
            _ => (0.0, slot - 14),               // right hind
        };
        base_phase + side + 0.4 * rank as f64
    };

    let mut angles = [[Oscillation {
        center: 0.0,
        amplitude: 0.0,
        frequency_hz: 0.0,
        phase: 0.0,
    }; 2]; N_NON_ROOT];
    for slot in 0..N_NON_ROOT {
        let bias = [
            spec.posture_bias * rng.random_range(-1.0..1.0),
            spec.posture_bias * rng.random_range(-1.0..1.0),
        ];
        if AXIAL_SLOTS.contains(&slot) {
            angles[slot][0] = slow(rng, bias[0], 0.04);
            angles[slot][1] = slow(rng, bias[1], 0.15);
        } else {
            let phase = limb_phase(slot);
            let swing = Oscillation {
                center: bias[0],
                amplitude: rng.random_range(0.15..0.3),
                frequency_hz: spec.gait_hz,
                phase,
            };
            let lift = if PROXIMAL_SLOTS.contains(&slot) {
                Oscillation {
                    center: -0.05 + bias[1],
                    amplitude: rng.random_range(0.05..0.1),
                    frequency_hz: spec.gait_hz,
                    phase: phase + rng.random_range(0.3..0.7),
                }
            } else {
                Oscillation {
                    center: bias[1],
                    amplitude: rng.random_range(0.15..0.3),
                    frequency_hz: spec.gait_hz,
                    phase: phase + rng.random_range(0.3..0.7),
                }
            };
            angles[slot] = [swing, lift];
        }
    }
    TrajectoryPlan {
        yaw,
        pitch,
        roll,
        wander_x,
        wander_y,
        angles,
    }
}

fn params_at(plan: &TrajectoryPlan, scale: f64, t: f64) -> PoseParams {
    let mut params = PoseParams::neutral([
        plan.wander_x.at(t),
        plan.wander_y.at(t),
        SYNTH_DISTANCE_MM,
    ]);
    params.root_rotation = [plan.pitch.at(t), plan.roll.at(t), plan.yaw.at(t)];
    for (slot, pair) in params.joint_angles.iter_mut().enumerate() {
        pair[0] = scale * plan.angles[slot][0].at(t);
        pair[1] = scale * plan.angles[slot][1].at(t);
    }
    params
}

/// Everything one synthetic run produces.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    /// Ground truth: parameters and 3D positions per frame.
    pub truth: TrackFile,
    /// Observed keypoints per camera, in `cameras` order.
    pub observed: Vec<TrackFile>,
    /// Per-frame multiview labels (three-view layout only).
    pub labels: Option<MultiviewLabelFile>,
    pub cameras: Vec<CameraModel>,
}

/// Generates a seed-deterministic synthetic sequence: ground-truth track,
/// per-camera observed keypoint tracks and (for the rig layout) a multiview
/// label file.
pub fn synth_generate(spec: &SynthSpec, skeleton: &Skeleton) -> Result<SynthOutput> {
    spec.validate()?;
    let cameras = layout_cameras(spec.layout);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plan = plan_trajectories(spec, &mut rng);
    let hash = skeleton.content_hash();

    let mut truth = TrackFile::new(spec.fps);
    truth.camera_id = cameras[0].id.clone();
    truth.skeleton_hash = Some(hash.clone());

    let mut observed: Vec<TrackFile> = cameras
        .iter()
        .map(|c| {
            let mut t = TrackFile::new(spec.fps);
            t.camera_id = c.id.clone();
            t.skeleton_hash = Some(hash.clone());
            t
        })
        .collect();
    let mut labels = match spec.layout {
        CameraLayout::ThreeViewRig => Some(MultiviewLabelFile::new(spec.fps)),
        CameraLayout::SingleTopDown => None,
    };

    for frame_idx in 0..spec.frames {
        let t = frame_idx as f64 / spec.fps;
        let params = crate::skeleton::clamp_to_limits(
            skeleton,
            &params_at(&plan, spec.amplitude_scale, t),
        );
        let pose = forward_kinematics(skeleton, &params)?;

        let mut truth_frame = TrackFrame::new(frame_idx as u64);
        truth_frame.params = Some(params);
        truth_frame.set_pose(&pose);
        truth.frames.push(truth_frame);

        let mut label_views = Vec::new();
        for (cam_idx, camera) in cameras.iter().enumerate() {
            let mut entries = Vec::new();
            for (ci, joint) in KeypointName::CHAIN.iter().enumerate() {
                // Draw in a fixed order so the stream stays aligned.
                let dropped = rng.random_range(0.0..1.0) < spec.occlusion_for(*joint);
                let noise = [
                    gaussian(&mut rng) * spec.noise_px,
                    gaussian(&mut rng) * spec.noise_px,
                ];
                if dropped {
                    continue;
                }
                let Ok(p) = camera.project(&pose.positions[ci]) else {
                    continue;
                };
                entries.push(KeypointEntry {
                    name: *joint,
                    position_px: [p[0] + noise[0], p[1] + noise[1]],
                    confidence: 1.0,
                });
            }
            let mut obs_frame = TrackFrame::new(frame_idx as u64);
            obs_frame.source = Some(SourceTag::Predicted);
            obs_frame.keypoints = entries.clone();
            observed[cam_idx].frames.push(obs_frame);
            label_views.push(LabelView {
                camera_id: camera.id.clone().unwrap(),
                keypoints: entries,
            });
        }
        if let Some(labels) = labels.as_mut() {
            labels.frames.push(LabelFrame {
                index: frame_idx as u64,
                views: label_views,
            });
        }
    }

    Ok(SynthOutput {
        truth,
        observed,
        labels,
        cameras,
    })
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one value per call keeps the stream layout simple.
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
