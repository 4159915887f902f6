//! Export of the four feature representations over fixed-duration windows,
//! for downstream attribute classifiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::formats::{TrackFile, TrackFrame};
use crate::skeleton::{KeypointName, N_KEYPOINTS};

/// How many consecutive missing frames forward-fill may bridge.
pub const MAX_FORWARD_FILL: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Per frame: bounding box `(x, y, w, h)`.
    Box2d,
    /// Per frame: the 20 keypoint positions, absent ones as `(0, 0)`.
    Points2d,
    /// Per frame: the 54 flattened 3D joint coordinates.
    Points3d,
    /// Per frame: root rotation plus the 34 joint angles.
    Angles3d,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::Box2d => "2d_box",
            Representation::Points2d => "2d_points",
            Representation::Points3d => "3d_points",
            Representation::Angles3d => "3d_angles",
        }
    }

    pub fn columns(self) -> usize {
        match self {
            Representation::Box2d => 4,
            Representation::Points2d => 2 * N_KEYPOINTS,
            Representation::Points3d => 54,
            Representation::Angles3d => 3 + 34,
        }
    }
}

impl std::str::FromStr for Representation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d_box" => Ok(Representation::Box2d),
            "2d_points" => Ok(Representation::Points2d),
            "3d_points" => Ok(Representation::Points3d),
            "3d_angles" => Ok(Representation::Angles3d),
            other => Err(Error::Format(format!(
                "unknown representation '{other}' \
                 (expected 2d_box, 2d_points, 3d_points or 3d_angles)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub window_index: u64,
    pub start_frame: u64,
    /// One row per frame, `columns()` values each.
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub representation: Representation,
    pub window_seconds: f64,
    pub fps: f64,
    pub frames_per_window: usize,
    pub windows: Vec<FeatureWindow>,
    /// Window start frames dropped because a gap exceeded forward-fill.
    pub dropped_windows: Vec<u64>,
}

impl FeatureMatrix {
    /// Tab-delimited rendering with a commented header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str("# feature matrix v1\n");
        out.push_str(&format!("# representation: {}\n", self.representation.as_str()));
        out.push_str(&format!("# window_seconds: {}\n", self.window_seconds));
        out.push_str(&format!("# fps: {}\n", self.fps));
        out.push_str(&format!("# columns: {}\n", self.representation.columns()));
        out.push_str("window\tframe");
        for c in 0..self.representation.columns() {
            out.push_str(&format!("\tf{c}"));
        }
        out.push('\n');
        for window in &self.windows {
            for (row_idx, row) in window.rows.iter().enumerate() {
                out.push_str(&format!(
                    "{}\t{}",
                    window.window_index,
                    window.start_frame + row_idx as u64
                ));
                for v in row {
                    out.push_str(&format!("\t{v}"));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn frame_features(frame: &TrackFrame, representation: Representation) -> Option<Vec<f64>> {
    match representation {
        Representation::Box2d => {
            let kf = frame.keypoint_frame()?;
            let bbox = kf.bbox_or_derived().ok()?;
            Some(bbox.to_vec())
        }
        Representation::Points2d => {
            let kf = frame.keypoint_frame()?;
            let mut row = Vec::with_capacity(2 * N_KEYPOINTS);
            for name in KeypointName::ALL {
                match kf.get(name) {
                    Some(kp) => row.extend_from_slice(&kp.position),
                    None => row.extend_from_slice(&[0.0, 0.0]),
                }
            }
            Some(row)
        }
        Representation::Points3d => frame.pose_mm.clone().filter(|p| p.len() == 54),
        Representation::Angles3d => {
            let params = frame.params.as_ref()?;
            let mut row = Vec::with_capacity(37);
            row.extend_from_slice(&params.root_rotation);
            for pair in &params.joint_angles {
                row.extend_from_slice(pair);
            }
            Some(row)
        }
    }
}

/// Cuts the track into consecutive fixed-duration windows of the chosen
/// representation, one flattened row per frame. Gaps of up to
/// [`MAX_FORWARD_FILL`] frames are forward-filled; windows with larger gaps
/// (or gaps before the first usable frame) are dropped with a warning.
pub fn export_features(
    track: &TrackFile,
    representation: Representation,
    window_seconds: f64,
) -> Result<FeatureMatrix> {
    track.validate()?;
    if !(window_seconds > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "window must be positive, got {window_seconds} s"
        )));
    }
    let frames_per_window = (window_seconds * track.fps).round() as usize;
    if frames_per_window == 0 {
        return Err(Error::InvalidSpec(format!(
            "window of {window_seconds} s holds no frame at {} fps",
            track.fps
        )));
    }

    // Features on the regular frame-index grid, with forward fill.
    let mut by_index: std::collections::BTreeMap<u64, Vec<f64>> = std::collections::BTreeMap::new();
    let mut any_stage = false;
    for frame in &track.frames {
        if let Some(row) = frame_features(frame, representation) {
            any_stage = true;
            by_index.insert(frame.index, row);
        }
    }
    if !any_stage {
        return Err(Error::StageMissing(format!(
            "no frame carries the data needed for '{}'",
            representation.as_str()
        )));
    }
    let first = *by_index.keys().next().unwrap();
    let last = *by_index.keys().last().unwrap();

    let mut matrix = FeatureMatrix {
        representation,
        window_seconds,
        fps: track.fps,
        frames_per_window,
        windows: Vec::new(),
        dropped_windows: Vec::new(),
    };

    let total = last - first + 1;
    let n_windows = (total as usize) / frames_per_window;
    if n_windows == 0 {
        log::warn!(
            "track spans {total} frames, shorter than one {window_seconds} s window; \
             exporting zero windows"
        );
        return Ok(matrix);
    }

    // One pass over the whole grid: fill small gaps, mark unfillable rows.
    let mut grid: Vec<Option<Vec<f64>>> = Vec::with_capacity(total as usize);
    let mut last_seen: Option<(u64, &Vec<f64>)> = None;
    for idx in first..=last {
        if let Some(row) = by_index.get(&idx) {
            last_seen = Some((idx, row));
            grid.push(Some(row.clone()));
        } else if let Some((seen_at, row)) = last_seen {
            grid.push((idx - seen_at <= MAX_FORWARD_FILL).then(|| row.clone()));
        } else {
            grid.push(None);
        }
    }

    for w in 0..n_windows {
        let start = first + (w * frames_per_window) as u64;
        let offset = (start - first) as usize;
        let slots = &grid[offset..offset + frames_per_window];
        if slots.iter().all(|s| s.is_some()) {
            matrix.windows.push(FeatureWindow {
                window_index: w as u64,
                start_frame: start,
                rows: slots.iter().map(|s| s.clone().unwrap()).collect(),
            });
        } else {
            log::warn!("window starting at frame {start} dropped: gap exceeds forward fill");
            matrix.dropped_windows.push(start);
        }
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{KeypointFrame, SourceTag};
    use crate::skeleton::{Pose3D, PoseParams};

    fn track_with_boxes(n: u64) -> TrackFile {
        let mut track = TrackFile::new(2.0);
        for i in 0..n {
            let mut frame = TrackFrame::new(i);
            let mut kf = KeypointFrame::empty(i, SourceTag::Predicted);
            kf.bounding_box = Some([i as f64, 2.0 * i as f64, 10.0, 20.0]);
            kf.set(KeypointName::Nose, [0.0, 0.0], 1.0);
            frame.set_keypoints(&kf);
            track.frames.push(frame);
        }
        track
    }

    #[test]
    fn box_windows_reproduce_the_per_frame_sequence() {
        // 2 fps, 2 s windows -> 4 frames per window.
        let track = track_with_boxes(8);
        let matrix = export_features(&track, Representation::Box2d, 2.0).unwrap();
        assert_eq!(matrix.frames_per_window, 4);
        assert_eq!(matrix.windows.len(), 2);
        for window in &matrix.windows {
            for (k, row) in window.rows.iter().enumerate() {
                let i = window.start_frame + k as u64;
                assert_eq!(row, &vec![i as f64, 2.0 * i as f64, 10.0, 20.0]);
            }
        }
    }

    #[test]
    fn short_track_yields_zero_windows() {
        let track = track_with_boxes(3);
        let matrix = export_features(&track, Representation::Box2d, 2.0).unwrap();
        assert!(matrix.windows.is_empty());
    }

    #[test]
    fn forward_fill_bridges_small_gaps_and_drops_large_ones() {
        let mut track = track_with_boxes(12);
        // Remove frame 2: a 1-frame gap, fillable.
        track.frames.retain(|f| f.index != 2);
        let matrix = export_features(&track, Representation::Box2d, 2.0).unwrap();
        assert_eq!(matrix.windows.len(), 3);
        let filled = &matrix.windows[0].rows[2];
        assert_eq!(filled, &vec![1.0, 2.0, 10.0, 20.0]); // copy of frame 1

        // A window that merely starts inside a small gap still fills.
        let mut track = track_with_boxes(12);
        track.frames.retain(|f| f.index != 4);
        let matrix = export_features(&track, Representation::Box2d, 2.0).unwrap();
        assert_eq!(matrix.windows.len(), 3);
        assert_eq!(matrix.windows[1].rows[0], vec![3.0, 6.0, 10.0, 20.0]);

        // Remove frames 1..=4: frame 4 is four past frame 0, beyond fill.
        let mut track = track_with_boxes(12);
        track.frames.retain(|f| !(1..=4).contains(&f.index));
        let matrix = export_features(&track, Representation::Box2d, 2.0).unwrap();
        assert_eq!(matrix.dropped_windows, vec![4]);
        assert_eq!(matrix.windows.len(), 2);
    }

    #[test]
    fn representations_have_expected_shapes() {
        let mut track = TrackFile::new(1.0);
        for i in 0..2u64 {
            let mut frame = TrackFrame::new(i);
            let mut kf = KeypointFrame::empty(i, SourceTag::Predicted);
            kf.set(KeypointName::Nose, [3.0, 4.0], 1.0);
            kf.set(KeypointName::TailTip, [7.0, 9.0], 1.0);
            frame.set_keypoints(&kf);
            frame.set_pose(&Pose3D {
                positions: [[i as f64, 0.0, 1.0]; 18],
            });
            frame.params = Some(PoseParams::neutral([0.0, 0.0, 400.0]));
            track.frames.push(frame);
        }
        let p2 = export_features(&track, Representation::Points2d, 2.0).unwrap();
        assert_eq!(p2.windows[0].rows[0].len(), 40);
        // Absent keypoints encode as zeros.
        assert_eq!(p2.windows[0].rows[0][0..2], [3.0, 4.0]);
        assert_eq!(p2.windows[0].rows[0][2..4], [0.0, 0.0]);

        let p3 = export_features(&track, Representation::Points3d, 2.0).unwrap();
        assert_eq!(p3.windows[0].rows[0].len(), 54);
        let a3 = export_features(&track, Representation::Angles3d, 2.0).unwrap();
        assert_eq!(a3.windows[0].rows[0].len(), 37);

        // TSV rendering is deterministic.
        let tsv1 = a3.to_tsv();
        let tsv2 = export_features(&track, Representation::Angles3d, 2.0)
            .unwrap()
            .to_tsv();
        assert_eq!(tsv1, tsv2);
        assert!(tsv1.starts_with("# feature matrix v1\n"));
    }

    #[test]
    fn missing_stage_is_an_error() {
        let track = track_with_boxes(8);
        assert!(matches!(
            export_features(&track, Representation::Points3d, 2.0),
            Err(Error::StageMissing(_))
        ));
        assert!(matches!(
            export_features(&track, Representation::Angles3d, 2.0),
            Err(Error::StageMissing(_))
        ));
    }
}
