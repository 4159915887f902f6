//! Evaluation: object keypoint similarity (OKS) with threshold-accuracy
//! tables, and registered per-joint 3D error in millimeters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{KeypointName, Pose3D, N_CHAIN_JOINTS, N_KEYPOINTS};

/// Default per-keypoint falloff; the human median value.
pub const DEFAULT_OKS_FALLOFF: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceTag {
    Labeled,
    Predicted,
}

/// One observed 2D keypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub position: [f64; 2],
    pub confidence: f64,
}

/// One frame of 2D keypoints with confidences and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub frame_index: u64,
    pub source: SourceTag,
    pub keypoints: [Option<Keypoint>; N_KEYPOINTS],
    /// Explicit bounding box `(x, y, w, h)`; derived from the present
    /// keypoints when absent.
    pub bounding_box: Option<[f64; 4]>,
}

impl KeypointFrame {
    pub fn empty(frame_index: u64, source: SourceTag) -> KeypointFrame {
        KeypointFrame {
            frame_index,
            source,
            keypoints: [None; N_KEYPOINTS],
            bounding_box: None,
        }
    }

    pub fn set(&mut self, name: KeypointName, position: [f64; 2], confidence: f64) {
        self.keypoints[name.index()] = Some(Keypoint {
            position,
            confidence,
        });
    }

    pub fn get(&self, name: KeypointName) -> Option<&Keypoint> {
        self.keypoints[name.index()].as_ref()
    }

    pub fn present_count(&self) -> usize {
        self.keypoints.iter().flatten().count()
    }

    /// Number of chain joints observed at or above the confidence threshold.
    pub fn observed_chain_count(&self, visibility_threshold: f64) -> usize {
        KeypointName::CHAIN
            .iter()
            .filter_map(|k| self.get(*k))
            .filter(|kp| kp.confidence >= visibility_threshold)
            .count()
    }

    pub fn validate(&self) -> Result<()> {
        for (idx, kp) in self.keypoints.iter().enumerate() {
            if let Some(kp) = kp {
                if !(kp.position[0].is_finite() && kp.position[1].is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "keypoint '{}' position",
                        KeypointName::ALL[idx]
                    )));
                }
                if !(0.0..=1.0).contains(&kp.confidence) {
                    return Err(Error::Format(format!(
                        "keypoint '{}' confidence {} outside [0, 1]",
                        KeypointName::ALL[idx],
                        kp.confidence
                    )));
                }
            }
        }
        Ok(())
    }

    /// The explicit bounding box, or the minimal box encompassing all
    /// present keypoints.
    pub fn bbox_or_derived(&self) -> Result<[f64; 4]> {
        if let Some(bbox) = self.bounding_box {
            return Ok(bbox);
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        let mut any = false;
        for kp in self.keypoints.iter().flatten() {
            any = true;
            for k in 0..2 {
                min[k] = min[k].min(kp.position[k]);
                max[k] = max[k].max(kp.position[k]);
            }
        }
        if !any {
            return Err(Error::NoObservations(
                "frame has no keypoints to derive a bounding box from".into(),
            ));
        }
        Ok([min[0], min[1], max[0] - min[0], max[1] - min[1]])
    }
}

/// Per-keypoint OKS scores plus their mean.
#[derive(Debug, Clone)]
pub struct OksScores {
    /// `None` where the truth keypoint is missing (excluded from the mean).
    pub per_keypoint: [Option<f64>; N_KEYPOINTS],
    pub mean: f64,
    /// The object scale `s` (square root of the truth bounding-box area).
    pub scale: f64,
}

/// Object keypoint similarity of a predicted frame against ground truth.
///
/// Each scored keypoint gets `exp(-d^2 / (2 k^2 s^2))` with `s` the square
/// root of the truth bounding-box area. Keypoints missing from the truth are
/// excluded from both numerator and denominator (so the divisor is the
/// scored-keypoint count rather than a literal 20); keypoints present in the
/// truth but absent from the prediction score 0.
pub fn oks(pred: &KeypointFrame, truth: &KeypointFrame, falloff: f64) -> Result<OksScores> {
    let bbox = truth.bbox_or_derived()?;
    let area = bbox[2] * bbox[3];
    if !(area > 0.0) {
        return Err(Error::DegenerateTruth(format!(
            "truth bounding box has non-positive area {area}"
        )));
    }
    let s2 = area;
    let denom = 2.0 * falloff * falloff * s2;

    let mut per_keypoint = [None; N_KEYPOINTS];
    let mut sum = 0.0;
    let mut count = 0usize;
    for name in KeypointName::ALL {
        let Some(t) = truth.get(name) else { continue };
        let score = match pred.get(name) {
            Some(p) => {
                let dx = p.position[0] - t.position[0];
                let dy = p.position[1] - t.position[1];
                (-(dx * dx + dy * dy) / denom).exp()
            }
            None => 0.0,
        };
        per_keypoint[name.index()] = Some(score);
        sum += score;
        count += 1;
    }
    if count == 0 {
        return Err(Error::DegenerateTruth("truth frame has no keypoints".into()));
    }
    Ok(OksScores {
        per_keypoint,
        mean: sum / count as f64,
        scale: s2.sqrt(),
    })
}

/// A named pooling of keypoints into one table column.
pub type KeypointGroup = (String, Vec<KeypointName>);

/// The standard five columns with left/right joints pooled.
pub fn default_oks_groups() -> Vec<KeypointGroup> {
    use KeypointName::*;
    vec![
        ("nose".into(), vec![Nose]),
        ("shoulder".into(), vec![LeftShoulder, RightShoulder]),
        ("hip".into(), vec![LeftHip, RightHip]),
        ("wrist".into(), vec![LeftWrist, RightWrist]),
        ("ankle".into(), vec![LeftAnkle, RightAnkle]),
    ]
}

pub const DEFAULT_OKS_THRESHOLDS: [f64; 3] = [0.5, 0.7, 0.9];

#[derive(Debug, Clone)]
pub struct OksColumn {
    pub name: String,
    /// Fraction of per-keypoint scores strictly above each threshold.
    pub proportions: Vec<f64>,
    pub scored: usize,
}

#[derive(Debug, Clone)]
pub struct OksTable {
    pub thresholds: Vec<f64>,
    pub columns: Vec<OksColumn>,
    /// Groups omitted because no keypoint of theirs was scored.
    pub omitted: Vec<String>,
}

impl OksTable {
    /// Tab-delimited rendering: one row per threshold, one column per group.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("T");
        for col in &self.columns {
            out.push('\t');
            out.push_str(&col.name);
        }
        out.push('\n');
        for (ti, t) in self.thresholds.iter().enumerate() {
            out.push_str(&format!("{t}"));
            for col in &self.columns {
                out.push_str(&format!("\t{}", col.proportions[ti]));
            }
            out.push('\n');
        }
        out
    }
}

/// Proportion of per-keypoint OKS scores above each threshold, per group.
pub fn oks_accuracy_table(
    pairs: &[(KeypointFrame, KeypointFrame)],
    thresholds: &[f64],
    groups: &[KeypointGroup],
    falloff: f64,
) -> Result<OksTable> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no (pred, truth) pairs".into()));
    }
    let mut scores: Vec<[Option<f64>; N_KEYPOINTS]> = Vec::with_capacity(pairs.len());
    for (pred, truth) in pairs {
        scores.push(oks(pred, truth, falloff)?.per_keypoint);
    }

    let mut columns = Vec::new();
    let mut omitted = Vec::new();
    for (name, members) in groups {
        let pooled: Vec<f64> = scores
            .iter()
            .flat_map(|per| members.iter().filter_map(|m| per[m.index()]))
            .collect();
        if pooled.is_empty() {
            log::warn!("oks table: group '{name}' has no scored keypoints; column omitted");
            omitted.push(name.clone());
            continue;
        }
        let proportions = thresholds
            .iter()
            .map(|t| pooled.iter().filter(|s| **s > *t).count() as f64 / pooled.len() as f64)
            .collect();
        columns.push(OksColumn {
            name: name.clone(),
            proportions,
            scored: pooled.len(),
        });
    }
    Ok(OksTable {
        thresholds: thresholds.to_vec(),
        columns,
        omitted,
    })
}

/// A 3D pose with a per-joint missing mask (e.g. a triangulated ground
/// truth where some joints lacked two views).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedPose {
    pub positions: [Option<[f64; 3]>; N_CHAIN_JOINTS],
}

impl MaskedPose {
    pub fn full(pose: &Pose3D) -> MaskedPose {
        let mut positions = [None; N_CHAIN_JOINTS];
        for (slot, p) in positions.iter_mut().zip(pose.positions.iter()) {
            *slot = Some(*p);
        }
        MaskedPose { positions }
    }

    pub fn present_count(&self) -> usize {
        self.positions.iter().flatten().count()
    }
}

/// Registered per-joint 3D errors in millimeters.
#[derive(Debug, Clone)]
pub struct RegisteredError {
    pub per_joint_mm: [Option<f64>; N_CHAIN_JOINTS],
    pub mean_mm: f64,
    /// The rigid transform (rotation, translation) that aligned `pred` onto
    /// the truth.
    pub rotation: [[f64; 3]; 3],
    pub translation_mm: [f64; 3],
}

fn collinear(points: &[[f64; 3]]) -> bool {
    use nalgebra::{DMatrix, Vector3};
    let n = points.len();
    let mut centroid = Vector3::zeros();
    for p in points {
        centroid += Vector3::from(*p);
    }
    centroid /= n as f64;
    let mut m = DMatrix::<f64>::zeros(n, 3);
    for (i, p) in points.iter().enumerate() {
        let c = Vector3::from(*p) - centroid;
        m.row_mut(i).copy_from_slice(&[c[0], c[1], c[2]]);
    }
    let sv = m.singular_values();
    sv[1] <= 1e-9 * sv[0].max(1e-300)
}

/// Least-squares rigid registration (rotation + translation, no scale) of
/// `pred` onto `truth` over the common joints, then per-joint distances.
/// The mean excludes missing joints. Scale is deliberately not solved for,
/// so depth/scale errors in the prediction remain visible.
pub fn registered_3d_error(pred: &Pose3D, truth: &MaskedPose) -> Result<RegisteredError> {
    use nalgebra::{Matrix3, Vector3};

    let common: Vec<usize> = (0..N_CHAIN_JOINTS)
        .filter(|ci| truth.positions[*ci].is_some())
        .collect();
    if common.len() < 3 {
        return Err(Error::RegistrationDegenerate(format!(
            "{} common joints, need at least 3",
            common.len()
        )));
    }
    let p_pts: Vec<[f64; 3]> = common.iter().map(|ci| pred.positions[*ci]).collect();
    let q_pts: Vec<[f64; 3]> = common
        .iter()
        .map(|ci| truth.positions[*ci].unwrap())
        .collect();
    if collinear(&p_pts) || collinear(&q_pts) {
        return Err(Error::RegistrationDegenerate(
            "common joints are collinear".into(),
        ));
    }

    let centroid = |pts: &[[f64; 3]]| {
        let mut c = Vector3::zeros();
        for p in pts {
            c += Vector3::from(*p);
        }
        c / pts.len() as f64
    };
    let pc = centroid(&p_pts);
    let qc = centroid(&q_pts);

    let mut h = Matrix3::<f64>::zeros();
    for (p, q) in p_pts.iter().zip(q_pts.iter()) {
        h += (Vector3::from(*q) - qc) * (Vector3::from(*p) - pc).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let d = (u * vt).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;
    let t = qc - r * pc;

    let mut per_joint_mm = [None; N_CHAIN_JOINTS];
    let mut sum = 0.0;
    for ci in &common {
        let p = Vector3::from(pred.positions[*ci]);
        let q = Vector3::from(truth.positions[*ci].unwrap());
        let err = (r * p + t - q).norm();
        per_joint_mm[*ci] = Some(err);
        sum += err;
    }
    let mut rotation = [[0.0; 3]; 3];
    for (i, row) in rotation.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = r[(i, j)];
        }
    }
    Ok(RegisteredError {
        per_joint_mm,
        mean_mm: sum / common.len() as f64,
        rotation,
        translation_mm: [t[0], t[1], t[2]],
    })
}
