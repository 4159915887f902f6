//! Deterministic structured-text artifacts: keypoint/pose tracks, multiview
//! label files and triangulated pose files, plus the shared TOML read/write
//! helpers. Serialization order is canonical everywhere, so writing the
//! same data twice produces byte-identical files.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Keypoint, KeypointFrame, MaskedPose, SourceTag};
use crate::skeleton::{KeypointName, Pose3D, PoseParams};
use crate::triangulation::{MultiviewObservation, TriangulatedPose, ViewObservation};

pub const TRACK_FORMAT_VERSION: u32 = 1;
pub const LABELS_FORMAT_VERSION: u32 = 1;
pub const POSE_FORMAT_VERSION: u32 = 1;

pub fn to_toml_string<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Format(format!("serialization failed: {e}")))
}

pub fn from_toml_str<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Format(format!("parse failed: {e}")))
}

pub fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_toml_string(value)?)?;
    Ok(())
}

pub fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    from_toml_str(&text).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Units stamped into every track header.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Units {
    pub position: String,
    pub image: String,
    pub time: String,
}

impl Default for Units {
    fn default() -> Self {
        Units {
            position: "mm".into(),
            image: "px".into(),
            time: "s".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointEntry {
    pub name: KeypointName,
    pub position_px: [f64; 2],
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDiagnostics {
    pub objective: f64,
    pub reprojection_rms_px: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_log_likelihood: Option<f64>,
    pub iterations: u64,
    pub converged: bool,
}

/// One frame of a track: any subset of keypoints, fitted parameters, 3D
/// positions and diagnostics. Scalar fields precede the nested tables so
/// the TOML layout stays canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFrame {
    pub index: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<SourceTag>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounding_box: Option<[f64; 4]>,
    /// Flattened 18x3 camera-frame joint positions, chain order.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pose_mm: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<PoseParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<FrameDiagnostics>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keypoints: Vec<KeypointEntry>,
}

impl TrackFrame {
    pub fn new(index: u64) -> TrackFrame {
        TrackFrame {
            index,
            source: None,
            bounding_box: None,
            pose_mm: None,
            params: None,
            diagnostics: None,
            keypoints: Vec::new(),
        }
    }

    pub fn set_keypoints(&mut self, frame: &KeypointFrame) {
        self.source = Some(frame.source);
        self.bounding_box = frame.bounding_box;
        self.keypoints = KeypointName::ALL
            .iter()
            .filter_map(|name| {
                frame.get(*name).map(|kp| KeypointEntry {
                    name: *name,
                    position_px: kp.position,
                    confidence: kp.confidence,
                })
            })
            .collect();
    }

    pub fn keypoint_frame(&self) -> Option<KeypointFrame> {
        if self.keypoints.is_empty() {
            return None;
        }
        let mut frame = KeypointFrame::empty(
            self.index,
            self.source.unwrap_or(SourceTag::Predicted),
        );
        frame.bounding_box = self.bounding_box;
        for entry in &self.keypoints {
            frame.keypoints[entry.name.index()] = Some(Keypoint {
                position: entry.position_px,
                confidence: entry.confidence,
            });
        }
        Some(frame)
    }

    pub fn set_pose(&mut self, pose: &Pose3D) {
        self.pose_mm = Some(pose.flatten().to_vec());
    }

    pub fn pose(&self) -> Option<Pose3D> {
        let flat = self.pose_mm.as_ref()?;
        let arr: [f64; 54] = flat.as_slice().try_into().ok()?;
        Some(Pose3D::from_flat(&arr))
    }
}

/// A per-frame record file: the common container for observed keypoints and
/// fitted poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFile {
    pub format_version: u32,
    pub fps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub camera_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skeleton_hash: Option<String>,
    #[serde(default)]
    pub units: Units,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<TrackFrame>,
}

impl TrackFile {
    pub fn new(fps: f64) -> TrackFile {
        TrackFile {
            format_version: TRACK_FORMAT_VERSION,
            fps,
            camera_id: None,
            skeleton_hash: None,
            units: Units::default(),
            frames: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != TRACK_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: TRACK_FORMAT_VERSION,
            });
        }
        if !(self.fps > 0.0) {
            return Err(Error::Format(format!("fps must be positive, got {}", self.fps)));
        }
        for pair in self.frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(Error::Format(format!(
                    "frame indices must be strictly increasing ({} then {})",
                    pair[0].index, pair[1].index
                )));
            }
        }
        for frame in &self.frames {
            if let Some(pose) = &frame.pose_mm {
                if pose.len() != 54 {
                    return Err(Error::ShapeMismatch(format!(
                        "frame {}: pose has {} values, expected 54",
                        frame.index,
                        pose.len()
                    )));
                }
            }
            if let Some(kf) = frame.keypoint_frame() {
                kf.validate()?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_toml(path, self)
    }

    pub fn load(path: &Path) -> Result<TrackFile> {
        let track: TrackFile = read_toml(path)?;
        track.validate()?;
        Ok(track)
    }
}

/// Multiview 2D label file: per frame, per camera, per joint pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiviewLabelFile {
    pub format_version: u32,
    pub fps: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<LabelFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFrame {
    pub index: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub views: Vec<LabelView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelView {
    pub camera_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keypoints: Vec<KeypointEntry>,
}

impl MultiviewLabelFile {
    pub fn new(fps: f64) -> MultiviewLabelFile {
        MultiviewLabelFile {
            format_version: LABELS_FORMAT_VERSION,
            fps,
            frames: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != LABELS_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: LABELS_FORMAT_VERSION,
            });
        }
        for pair in self.frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(Error::Format(
                    "label frame indices must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    /// Groups one frame's labels into per-joint multiview observations.
    pub fn observations(&self, frame: &LabelFrame) -> Vec<MultiviewObservation> {
        KeypointName::CHAIN
            .iter()
            .filter_map(|joint| {
                let views: Vec<ViewObservation> = frame
                    .views
                    .iter()
                    .filter_map(|view| {
                        view.keypoints.iter().find(|k| k.name == *joint).map(|k| {
                            ViewObservation {
                                camera_id: view.camera_id.clone(),
                                position_px: k.position_px,
                                confidence: k.confidence,
                            }
                        })
                    })
                    .collect();
                if views.is_empty() {
                    None
                } else {
                    Some(MultiviewObservation {
                        joint: *joint,
                        frame_index: frame.index,
                        views,
                    })
                }
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_toml(path, self)
    }

    pub fn load(path: &Path) -> Result<MultiviewLabelFile> {
        let labels: MultiviewLabelFile = read_toml(path)?;
        labels.validate()?;
        Ok(labels)
    }
}

/// Sparse 3D pose file: triangulated ground truth or externally authored
/// poses, with optional per-joint rms columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFile {
    pub format_version: u32,
    pub fps: f64,
    #[serde(default)]
    pub units: Units,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frames: Vec<PoseFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseFrame {
    pub index: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub joints: Vec<JointEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointEntry {
    pub name: KeypointName,
    pub position_mm: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rms_px: Option<f64>,
}

impl PoseFrame {
    pub fn from_triangulated(t: &TriangulatedPose) -> PoseFrame {
        PoseFrame {
            index: t.frame_index,
            joints: KeypointName::CHAIN
                .iter()
                .enumerate()
                .filter_map(|(ci, name)| {
                    t.joints[ci].map(|j| JointEntry {
                        name: *name,
                        position_mm: j.position_mm,
                        rms_px: Some(j.rms_px),
                    })
                })
                .collect(),
        }
    }

    pub fn to_masked(&self) -> MaskedPose {
        let mut positions = [None; crate::skeleton::N_CHAIN_JOINTS];
        for joint in &self.joints {
            if let Some(ci) = joint.name.chain_index() {
                positions[ci] = Some(joint.position_mm);
            }
        }
        MaskedPose { positions }
    }

    /// Full 18-joint pose, or `None` if any chain joint is missing.
    pub fn full_pose(&self) -> Option<Pose3D> {
        let masked = self.to_masked();
        let mut positions = [[0.0; 3]; crate::skeleton::N_CHAIN_JOINTS];
        for (ci, p) in masked.positions.iter().enumerate() {
            positions[ci] = (*p)?;
        }
        Some(Pose3D { positions })
    }
}

impl PoseFile {
    pub fn new(fps: f64) -> PoseFile {
        PoseFile {
            format_version: POSE_FORMAT_VERSION,
            fps,
            units: Units::default(),
            frames: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != POSE_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: self.format_version,
                expected: POSE_FORMAT_VERSION,
            });
        }
        for pair in self.frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(Error::Format(
                    "pose frame indices must be strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_toml(path, self)
    }

    pub fn load(path: &Path) -> Result<PoseFile> {
        let poses: PoseFile = read_toml(path)?;
        poses.validate()?;
        Ok(poses)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_track() -> TrackFile {
        let mut track = TrackFile::new(24.0);
        track.camera_id = Some("top".into());
        track.skeleton_hash = Some("sha256:abc".into());
        for i in 0..3u64 {
            let mut frame = TrackFrame::new(i);
            let mut kf = KeypointFrame::empty(i, SourceTag::Predicted);
            kf.set(KeypointName::Nose, [10.0 + i as f64, 20.0], 0.9);
            kf.set(KeypointName::TailBase, [40.0, 60.0 + i as f64 / 3.0], 1.0);
            frame.set_keypoints(&kf);
            if i == 1 {
                let pose = Pose3D {
                    positions: [[1.0, 2.0, 3.0]; 18],
                };
                frame.set_pose(&pose);
                frame.params = Some(PoseParams::neutral([0.0, 0.0, 400.0]));
                frame.diagnostics = Some(FrameDiagnostics {
                    objective: 1e-9,
                    reprojection_rms_px: 0.01,
                    prior_log_likelihood: Some(35.5),
                    iterations: 42,
                    converged: true,
                });
            }
            track.frames.push(frame);
        }
        track
    }

    #[test]
    fn track_round_trip_is_byte_identical() {
        let track = sample_track();
        let first = to_toml_string(&track).unwrap();
        let parsed: TrackFile = from_toml_str(&first).unwrap();
        let second = to_toml_string(&parsed).unwrap();
        assert_eq!(first, second);
        assert_eq!(parsed, track);
    }

    #[test]
    fn track_validation_gates() {
        let mut track = sample_track();
        track.frames[1].index = 0;
        assert!(matches!(track.validate(), Err(Error::Format(_))));

        let mut track = sample_track();
        track.format_version = 3;
        assert!(matches!(
            track.validate(),
            Err(Error::FormatVersion { found: 3, .. })
        ));

        let mut track = sample_track();
        track.frames[1].pose_mm = Some(vec![0.0; 10]);
        assert!(matches!(track.validate(), Err(Error::ShapeMismatch(_))));

        let mut track = sample_track();
        track.frames[0].keypoints[0].confidence = 2.0;
        assert!(track.validate().is_err());
    }

    #[test]
    fn keypoint_frame_round_trip_through_track_frame() {
        let mut kf = KeypointFrame::empty(7, SourceTag::Labeled);
        kf.set(KeypointName::LeftEar, [5.0, 6.0], 0.8);
        kf.set(KeypointName::RightAnkle, [9.0, 1.0], 0.3);
        kf.bounding_box = Some([0.0, 0.0, 10.0, 10.0]);
        let mut frame = TrackFrame::new(7);
        frame.set_keypoints(&kf);
        assert_eq!(frame.keypoint_frame().unwrap(), kf);
    }

    #[test]
    fn label_file_builds_observations() {
        let mut labels = MultiviewLabelFile::new(24.0);
        labels.frames.push(LabelFrame {
            index: 0,
            views: vec![
                LabelView {
                    camera_id: "a".into(),
                    keypoints: vec![
                        KeypointEntry {
                            name: KeypointName::Nose,
                            position_px: [1.0, 2.0],
                            confidence: 1.0,
                        },
                        KeypointEntry {
                            name: KeypointName::LeftEar,
                            position_px: [3.0, 4.0],
                            confidence: 1.0,
                        },
                    ],
                },
                LabelView {
                    camera_id: "b".into(),
                    keypoints: vec![KeypointEntry {
                        name: KeypointName::Nose,
                        position_px: [5.0, 6.0],
                        confidence: 0.7,
                    }],
                },
            ],
        });
        let obs = labels.observations(&labels.frames[0]);
        // The ear is not a chain joint, so only the nose yields one.
        assert_eq!(obs.len(), 1);
        assert_eq!(obs[0].joint, KeypointName::Nose);
        assert_eq!(obs[0].views.len(), 2);
        let text = to_toml_string(&labels).unwrap();
        let parsed: MultiviewLabelFile = from_toml_str(&text).unwrap();
        assert_eq!(parsed, labels);
    }

    #[test]
    fn pose_file_round_trip_and_masking() {
        let mut file = PoseFile::new(24.0);
        file.frames.push(PoseFrame {
            index: 3,
            joints: vec![JointEntry {
                name: KeypointName::SpineMid,
                position_mm: [1.0, -2.0, 3.5],
                rms_px: Some(0.25),
            }],
        });
        let text = to_toml_string(&file).unwrap();
        let parsed: PoseFile = from_toml_str(&text).unwrap();
        assert_eq!(parsed, file);
        let masked = parsed.frames[0].to_masked();
        assert_eq!(masked.present_count(), 1);
        assert!(parsed.frames[0].full_pose().is_none());
    }
}
