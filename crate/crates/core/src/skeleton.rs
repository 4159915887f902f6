//! Mouse keypoint set, kinematic chain, forward kinematics and the canonical
//! pose normalization used by the pose prior.
//!
//! The 20 keypoints are fixed; the 18-joint chain is the keypoint set minus
//! the two ears, rooted at the tail base. Each non-root joint carries a bone
//! of fixed length and a unit neutral direction expressed in its parent's
//! frame. A joint's own rotation is parameterized by two angles `(azimuth,
//! elevation)` deviating from the neutral direction:
//!
//! ```text
//! dir(az, el) = sin(az)*u + cos(az)*sin(el)*v + cos(az)*cos(el)*w
//! ```
//!
//! where `w` is the neutral direction and `(u, v, w)` is a right-handed
//! orthonormal basis derived deterministically from `w` (`u = ê × w`
//! normalized, with `ê` the coordinate axis least aligned with `w`, ties
//! broken by lowest axis index, and `v = w × u`). The corresponding local
//! rotation `R(u, -el)*R(v, az)` propagates to the joint's descendants, so
//! the chain behaves as a conventional kinematic tree. The root keeps a full
//! 3-DOF rotation (extrinsic x-y-z Euler: `Rz(c)*Ry(b)*Rx(a)`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::vec3::{self, M3, V3};
use crate::real::Real;

/// The canonical ordered keypoint set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointName {
    Nose,
    LeftEar,
    RightEar,
    NeckBase,
    SpineMid,
    TailBase,
    TailMid,
    TailTip,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightShoulder,
    RightElbow,
    RightWrist,
    LeftHip,
    LeftKnee,
    LeftAnkle,
    RightHip,
    RightKnee,
    RightAnkle,
}

pub const N_KEYPOINTS: usize = 20;
pub const N_CHAIN_JOINTS: usize = 18;
pub const N_NON_ROOT: usize = 17;

/// Chain index of the root joint (tail base).
pub const ROOT_CHAIN_INDEX: usize = 3;

use KeypointName::*;

impl KeypointName {
    /// All 20 keypoints in canonical order. This ordering is stable across
    /// every serialization in the crate.
    pub const ALL: [KeypointName; N_KEYPOINTS] = [
        Nose,
        LeftEar,
        RightEar,
        NeckBase,
        SpineMid,
        TailBase,
        TailMid,
        TailTip,
        LeftShoulder,
        LeftElbow,
        LeftWrist,
        RightShoulder,
        RightElbow,
        RightWrist,
        LeftHip,
        LeftKnee,
        LeftAnkle,
        RightHip,
        RightKnee,
        RightAnkle,
    ];

    /// The 18 chain joints: `ALL` minus the ears, order preserved.
    pub const CHAIN: [KeypointName; N_CHAIN_JOINTS] = [
        Nose,
        NeckBase,
        SpineMid,
        TailBase,
        TailMid,
        TailTip,
        LeftShoulder,
        LeftElbow,
        LeftWrist,
        RightShoulder,
        RightElbow,
        RightWrist,
        LeftHip,
        LeftKnee,
        LeftAnkle,
        RightHip,
        RightKnee,
        RightAnkle,
    ];

    /// Index into [`KeypointName::ALL`].
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    /// Index into [`KeypointName::CHAIN`], or `None` for the ears.
    pub fn chain_index(self) -> Option<usize> {
        Self::CHAIN.iter().position(|&k| k == self)
    }

    pub fn is_chain(self) -> bool {
        !matches!(self, LeftEar | RightEar)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Nose => "nose",
            LeftEar => "left_ear",
            RightEar => "right_ear",
            NeckBase => "neck_base",
            SpineMid => "spine_mid",
            TailBase => "tail_base",
            TailMid => "tail_mid",
            TailTip => "tail_tip",
            LeftShoulder => "left_shoulder",
            LeftElbow => "left_elbow",
            LeftWrist => "left_wrist",
            RightShoulder => "right_shoulder",
            RightElbow => "right_elbow",
            RightWrist => "right_wrist",
            LeftHip => "left_hip",
            LeftKnee => "left_knee",
            LeftAnkle => "left_ankle",
            RightHip => "right_hip",
            RightKnee => "right_knee",
            RightAnkle => "right_ankle",
        }
    }
}

impl std::fmt::Display for KeypointName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for KeypointName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        KeypointName::ALL
            .iter()
            .copied()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown keypoint name '{s}'")))
    }
}

/// Slot of a chain joint in the 17-long per-joint angle arrays
/// (chain order with the root removed).
pub fn non_root_slot(chain_index: usize) -> Option<usize> {
    match chain_index {
        i if i == ROOT_CHAIN_INDEX => None,
        i if i < ROOT_CHAIN_INDEX => Some(i),
        i => Some(i - 1),
    }
}

/// The chain joints in non-root slot order.
pub const NON_ROOT_CHAIN: [KeypointName; N_NON_ROOT] = [
    Nose,
    NeckBase,
    SpineMid,
    TailMid,
    TailTip,
    LeftShoulder,
    LeftElbow,
    LeftWrist,
    RightShoulder,
    RightElbow,
    RightWrist,
    LeftHip,
    LeftKnee,
    LeftAnkle,
    RightHip,
    RightKnee,
    RightAnkle,
];

/// One bone of the chain: parent joint, length, and unit neutral direction
/// in the parent frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bone {
    pub parent: KeypointName,
    pub length_mm: f64,
    pub direction: [f64; 3],
}

/// Deterministic right-handed basis `(u, v)` completing a unit direction `w`.
fn direction_basis(w: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let mut axis = 0;
    for i in 1..3 {
        if w[i].abs() < w[axis].abs() {
            axis = i;
        }
    }
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let u_raw = vec3::cross(&e, w);
    let n = vec3::norm(&u_raw);
    let u = vec3::scale(&u_raw, 1.0 / n);
    let v = vec3::cross(w, &u);
    (u, v)
}

/// The mouse kinematic chain: topology, bone geometry and the joint angle
/// limit. Immutable after construction; all derived tables are precomputed.
#[derive(Debug, Clone)]
pub struct Skeleton {
    bones: [Option<Bone>; N_CHAIN_JOINTS],
    basis: [Option<([f64; 3], [f64; 3])>; N_CHAIN_JOINTS],
    topo: Vec<usize>,
    angle_limit_rad: f64,
}

impl Skeleton {
    /// Builds and validates a skeleton from the 17 non-root bones.
    pub fn new(bones: Vec<(KeypointName, Bone)>, angle_limit_deg: f64) -> Result<Skeleton> {
        if !(angle_limit_deg.is_finite() && angle_limit_deg > 0.0) {
            return Err(Error::InvalidSkeleton(format!(
                "angle limit must be positive, got {angle_limit_deg}"
            )));
        }
        let mut slots: [Option<Bone>; N_CHAIN_JOINTS] = Default::default();
        for (joint, bone) in bones {
            let ci = joint.chain_index().ok_or_else(|| {
                Error::InvalidSkeleton(format!("'{joint}' is not a chain joint"))
            })?;
            if ci == ROOT_CHAIN_INDEX {
                return Err(Error::InvalidSkeleton(
                    "the root (tail_base) must not carry a bone".into(),
                ));
            }
            if bone.parent.chain_index().is_none() {
                return Err(Error::InvalidSkeleton(format!(
                    "parent '{}' of '{joint}' is not a chain joint",
                    bone.parent
                )));
            }
            if !(bone.length_mm.is_finite() && bone.length_mm > 0.0) {
                return Err(Error::InvalidSkeleton(format!(
                    "bone length of '{joint}' must be positive, got {}",
                    bone.length_mm
                )));
            }
            let n = vec3::norm(&bone.direction);
            if !n.is_finite() || (n - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidSkeleton(format!(
                    "direction of '{joint}' must have unit norm (|d| = {n})"
                )));
            }
            if slots[ci].replace(bone).is_some() {
                return Err(Error::InvalidSkeleton(format!("duplicate bone for '{joint}'")));
            }
        }
        for (ci, joint) in KeypointName::CHAIN.iter().enumerate() {
            if ci != ROOT_CHAIN_INDEX && slots[ci].is_none() {
                return Err(Error::InvalidSkeleton(format!("missing bone for '{joint}'")));
            }
        }

        // Topological order via breadth-first walk from the root; a full
        // visit certifies the parent map is a tree over all 18 joints.
        let mut topo = vec![ROOT_CHAIN_INDEX];
        let mut visited = [false; N_CHAIN_JOINTS];
        visited[ROOT_CHAIN_INDEX] = true;
        let mut head = 0;
        while head < topo.len() {
            let current = topo[head];
            head += 1;
            for ci in 0..N_CHAIN_JOINTS {
                if let Some(bone) = &slots[ci] {
                    if bone.parent.chain_index() == Some(current) {
                        if visited[ci] {
                            return Err(Error::InvalidSkeleton(format!(
                                "joint '{}' reached twice; parent map is not a tree",
                                KeypointName::CHAIN[ci]
                            )));
                        }
                        visited[ci] = true;
                        topo.push(ci);
                    }
                }
            }
        }
        if topo.len() != N_CHAIN_JOINTS {
            let missing: Vec<&str> = KeypointName::CHAIN
                .iter()
                .enumerate()
                .filter(|(ci, _)| !visited[*ci])
                .map(|(_, k)| k.as_str())
                .collect();
            return Err(Error::InvalidSkeleton(format!(
                "joints not reachable from the root: {}",
                missing.join(", ")
            )));
        }

        let mut basis: [Option<([f64; 3], [f64; 3])>; N_CHAIN_JOINTS] = Default::default();
        for ci in 0..N_CHAIN_JOINTS {
            if let Some(bone) = &slots[ci] {
                basis[ci] = Some(direction_basis(&bone.direction));
            }
        }

        Ok(Skeleton {
            bones: slots,
            basis,
            topo,
            angle_limit_rad: angle_limit_deg.to_radians(),
        })
    }

    /// The bundled default mouse skeleton (100 mm body scale).
    pub fn default_mouse() -> Skeleton {
        let doc: SkeletonDoc = toml::from_str(include_str!("../assets/mouse_skeleton.toml"))
            .expect("bundled skeleton parses");
        Skeleton::from_doc(&doc).expect("bundled skeleton is valid")
    }

    pub fn bone(&self, joint: KeypointName) -> Option<&Bone> {
        joint.chain_index().and_then(|ci| self.bones[ci].as_ref())
    }

    pub fn angle_limit_rad(&self) -> f64 {
        self.angle_limit_rad
    }

    pub fn angle_limit_deg(&self) -> f64 {
        self.angle_limit_rad.to_degrees()
    }

    /// Chain indices in parents-before-children order; the root comes first.
    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub(crate) fn bone_by_chain(&self, ci: usize) -> Option<&Bone> {
        self.bones[ci].as_ref()
    }

    pub(crate) fn basis_by_chain(&self, ci: usize) -> Option<&([f64; 3], [f64; 3])> {
        self.basis[ci].as_ref()
    }

    /// Neck-base bone length, which is the neutral neck-to-mid-spine
    /// separation used to undo pose normalization.
    pub fn neck_spine_length_mm(&self) -> f64 {
        self.bones[NeckBase.chain_index().unwrap()]
            .as_ref()
            .unwrap()
            .length_mm
    }

    pub fn to_doc(&self) -> SkeletonDoc {
        let bones = KeypointName::CHAIN
            .iter()
            .enumerate()
            .filter_map(|(ci, joint)| {
                self.bones[ci].as_ref().map(|b| BoneEntry {
                    joint: *joint,
                    parent: b.parent,
                    length_mm: b.length_mm,
                    direction: b.direction,
                })
            })
            .collect();
        SkeletonDoc {
            format_version: SKELETON_FORMAT_VERSION,
            root: TailBase,
            angle_limit_deg: self.angle_limit_deg(),
            bones,
        }
    }

    pub fn from_doc(doc: &SkeletonDoc) -> Result<Skeleton> {
        if doc.format_version != SKELETON_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: doc.format_version,
                expected: SKELETON_FORMAT_VERSION,
            });
        }
        if doc.root != TailBase {
            return Err(Error::InvalidSkeleton(format!(
                "root must be tail_base, got '{}'",
                doc.root
            )));
        }
        let bones = doc
            .bones
            .iter()
            .map(|e| {
                (
                    e.joint,
                    Bone {
                        parent: e.parent,
                        length_mm: e.length_mm,
                        direction: e.direction,
                    },
                )
            })
            .collect();
        Skeleton::new(bones, doc.angle_limit_deg)
    }

    /// SHA-256 of the canonical serialized form, used to stamp track files.
    pub fn content_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = toml::to_string(&self.to_doc()).expect("skeleton serializes");
        let digest = Sha256::digest(text.as_bytes());
        let mut out = String::with_capacity(7 + 64);
        out.push_str("sha256:");
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

pub const SKELETON_FORMAT_VERSION: u32 = 1;

/// On-disk form of a [`Skeleton`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkeletonDoc {
    pub format_version: u32,
    pub root: KeypointName,
    pub angle_limit_deg: f64,
    pub bones: Vec<BoneEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoneEntry {
    pub joint: KeypointName,
    pub parent: KeypointName,
    pub length_mm: f64,
    pub direction: [f64; 3],
}

/// The optimization variable: root transform plus per-joint deviations.
///
/// `joint_angles[k]` is `(azimuth, elevation)` in radians for
/// `NON_ROOT_CHAIN[k]`; the root rotation is extrinsic x-y-z Euler and the
/// root translation is in camera-frame millimeters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseParams {
    pub root_rotation: [f64; 3],
    pub root_translation: [f64; 3],
    pub joint_angles: [[f64; 2]; N_NON_ROOT],
}

impl PoseParams {
    /// Neutral pose at the given root translation.
    pub fn neutral(root_translation: [f64; 3]) -> PoseParams {
        PoseParams {
            root_rotation: [0.0; 3],
            root_translation,
            joint_angles: [[0.0; 2]; N_NON_ROOT],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.root_rotation.iter().all(|x| x.is_finite())
            && self.root_translation.iter().all(|x| x.is_finite())
            && self
                .joint_angles
                .iter()
                .all(|a| a[0].is_finite() && a[1].is_finite())
    }
}

/// 18 camera-frame joint positions, aligned to [`KeypointName::CHAIN`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub positions: [[f64; 3]; N_CHAIN_JOINTS],
}

impl Pose3D {
    pub fn position(&self, joint: KeypointName) -> Option<[f64; 3]> {
        joint.chain_index().map(|ci| self.positions[ci])
    }

    /// Flattened 54-vector in chain order.
    pub fn flatten(&self) -> [f64; 54] {
        let mut out = [0.0; 54];
        for (ci, p) in self.positions.iter().enumerate() {
            out[3 * ci..3 * ci + 3].copy_from_slice(p);
        }
        out
    }

    pub fn from_flat(flat: &[f64; 54]) -> Pose3D {
        let mut positions = [[0.0; 3]; N_CHAIN_JOINTS];
        for (ci, p) in positions.iter_mut().enumerate() {
            p.copy_from_slice(&flat[3 * ci..3 * ci + 3]);
        }
        Pose3D { positions }
    }
}

/// Local joint rotation `R(u, -el) * R(v, az)`.
fn local_rotation<T: Real>(u: &V3<T>, v: &V3<T>, az: T, el: T) -> M3<T> {
    let ru = vec3::axis_angle(u, -el);
    let rv = vec3::axis_angle(v, az);
    vec3::mat_mul(&ru, &rv)
}

/// Generic forward kinematics over the scalar type; shared by the plain and
/// dual-number evaluation paths.
pub(crate) fn fk_generic<T: Real>(
    skeleton: &Skeleton,
    root_rotation: &V3<T>,
    root_translation: &V3<T>,
    joint_angles: &[[T; 2]; N_NON_ROOT],
) -> [V3<T>; N_CHAIN_JOINTS] {
    let zero = T::cst(0.0);
    let mut rot: [M3<T>; N_CHAIN_JOINTS] = [[[zero; 3]; 3]; N_CHAIN_JOINTS];
    let mut pos: [V3<T>; N_CHAIN_JOINTS] = [[zero; 3]; N_CHAIN_JOINTS];

    rot[ROOT_CHAIN_INDEX] = vec3::euler_xyz(root_rotation);
    pos[ROOT_CHAIN_INDEX] = *root_translation;

    for &ci in skeleton.topo_order().iter().skip(1) {
        let bone = skeleton.bone_by_chain(ci).unwrap();
        let (u, v) = skeleton.basis_by_chain(ci).unwrap();
        let slot = non_root_slot(ci).unwrap();
        let [az, el] = joint_angles[slot];
        let parent = bone.parent.chain_index().unwrap();

        let r_loc = local_rotation(&vec3::from_f64(u), &vec3::from_f64(v), az, el);
        rot[ci] = vec3::mat_mul(&rot[parent], &r_loc);
        let dir = vec3::mat_vec(&rot[ci], &vec3::from_f64(&bone.direction));
        pos[ci] = vec3::add(&pos[parent], &vec3::scale(&dir, T::cst(bone.length_mm)));
    }
    pos
}

/// Computes the 18 joint positions from pose parameters.
pub fn forward_kinematics(skeleton: &Skeleton, params: &PoseParams) -> Result<Pose3D> {
    if !params.is_finite() {
        return Err(Error::NonFinite("pose parameters".into()));
    }
    let positions = fk_generic(
        skeleton,
        &params.root_rotation,
        &params.root_translation,
        &params.joint_angles,
    );
    Ok(Pose3D { positions })
}

/// Clamps every per-joint angle into `[-limit, +limit]`; the root transform
/// is untouched. Idempotent.
pub fn clamp_to_limits(skeleton: &Skeleton, params: &PoseParams) -> PoseParams {
    let limit = skeleton.angle_limit_rad();
    let mut out = params.clone();
    for angles in &mut out.joint_angles {
        angles[0] = angles[0].clamp(-limit, limit);
        angles[1] = angles[1].clamp(-limit, limit);
    }
    out
}

/// Generic pose normalization; see [`normalize_pose`].
pub(crate) fn normalize_generic<T: Real>(
    positions: &[V3<T>; N_CHAIN_JOINTS],
) -> Result<[T; 54]> {
    let neck = positions[NeckBase.chain_index().unwrap()];
    let spine = positions[SpineMid.chain_index().unwrap()];
    let tail = positions[TailBase.chain_index().unwrap()];

    let axis = vec3::sub(&spine, &neck);
    let scale = vec3::norm(&axis);
    if !(scale.val() > 1e-6) {
        return Err(Error::DegeneratePose(format!(
            "neck_base and spine_mid are coincident (separation {} mm)",
            scale.val()
        )));
    }
    let inv = T::cst(1.0) / scale;
    let x_axis = vec3::scale(&axis, inv);

    // Roll is fixed by sending the tail base into the x-y half-plane with
    // non-negative y: the y axis is the tail's component orthogonal to x.
    let t = vec3::sub(&tail, &neck);
    let t_perp = vec3::sub(&t, &vec3::scale(&x_axis, vec3::dot(&t, &x_axis)));
    let t_perp_norm = vec3::norm(&t_perp);
    let y_axis = if t_perp_norm.val() > 1e-9 * scale.val() {
        vec3::scale(&t_perp, T::cst(1.0) / t_perp_norm)
    } else {
        // Tail base sits on the neck-spine axis: the roll is unconstrained,
        // fall back to the deterministic completion basis.
        let xf = [x_axis[0].val(), x_axis[1].val(), x_axis[2].val()];
        let (u, _) = direction_basis(&xf);
        vec3::from_f64(&u)
    };
    let z_axis = vec3::cross(&x_axis, &y_axis);

    let mut out = [T::cst(0.0); 54];
    for (ci, p) in positions.iter().enumerate() {
        let d = vec3::sub(p, &neck);
        out[3 * ci] = vec3::dot(&d, &x_axis) * inv;
        out[3 * ci + 1] = vec3::dot(&d, &y_axis) * inv;
        out[3 * ci + 2] = vec3::dot(&d, &z_axis) * inv;
    }
    Ok(out)
}

/// Canonicalizes a pose against rigid motion and uniform scale: neck base at
/// the origin, neck-to-mid-spine along +x with unit length, and the tail
/// base rolled into the x-y half-plane with non-negative y. Returns the
/// flattened 18×3 coordinates.
pub fn normalize_pose(pose: &Pose3D) -> Result<[f64; 54]> {
    normalize_generic(&pose.positions)
}

/// Maps a normalized 54-vector back to camera-frame positions: scales by the
/// skeleton's neutral neck-to-spine length and applies a rigid placement.
pub fn denormalize_pose(
    skeleton: &Skeleton,
    normalized: &[f64; 54],
    rotation: &M3<f64>,
    translation: &[f64; 3],
) -> Pose3D {
    let scale = skeleton.neck_spine_length_mm();
    let mut positions = [[0.0; 3]; N_CHAIN_JOINTS];
    for (ci, p) in positions.iter_mut().enumerate() {
        let local = [
            normalized[3 * ci] * scale,
            normalized[3 * ci + 1] * scale,
            normalized[3 * ci + 2] * scale,
        ];
        *p = vec3::add(&vec3::mat_vec(rotation, &local), translation);
    }
    Pose3D { positions }
}

/// Recovers pose parameters approximating the given joint positions: the
/// root rotation comes from a rigid alignment of the neutral pose, then the
/// per-joint angles are read off bone by bone and clamped. The per-bone
/// inversion is exact, so the result reproduces the input positions exactly
/// whenever no recovered angle hits the limit clamp; otherwise it is a
/// feasible approximation. Used to turn prior means into optimizer starting
/// points.
pub fn extract_params(skeleton: &Skeleton, target: &Pose3D) -> PoseParams {
    use nalgebra::{Matrix3, Vector3};

    let neutral = fk_generic(
        skeleton,
        &[0.0; 3],
        &[0.0; 3],
        &[[0.0; 2]; N_NON_ROOT],
    );

    // Rigid alignment (rotation only) of neutral onto target, both centered.
    let mean = |pts: &[[f64; 3]; N_CHAIN_JOINTS]| {
        let mut m = [0.0; 3];
        for p in pts {
            m = vec3::add(&m, p);
        }
        vec3::scale(&m, 1.0 / N_CHAIN_JOINTS as f64)
    };
    let nc = mean(&neutral);
    let tc = mean(&target.positions);
    let mut h = Matrix3::<f64>::zeros();
    for ci in 0..N_CHAIN_JOINTS {
        let q = Vector3::from(vec3::sub(&neutral[ci], &nc));
        let p = Vector3::from(vec3::sub(&target.positions[ci], &tc));
        h += p * q.transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let vt = svd.v_t.unwrap();
    let d = (u * vt).determinant().signum();
    let r_mat = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * vt;

    // Euler angles for Rz(c)*Ry(b)*Rx(a).
    let (a, b, c) = {
        let sy = -r_mat[(2, 0)];
        let b = sy.clamp(-1.0, 1.0).asin();
        if b.cos().abs() > 1e-9 {
            (
                r_mat[(2, 1)].atan2(r_mat[(2, 2)]),
                b,
                r_mat[(1, 0)].atan2(r_mat[(0, 0)]),
            )
        } else {
            ((-r_mat[(1, 2)]).atan2(r_mat[(1, 1)]), b, 0.0)
        }
    };
    let root_rotation = [a, b, c];
    let root_translation = target.positions[ROOT_CHAIN_INDEX];

    // Read off joint angles bone by bone, propagating the clamped frames.
    let limit = skeleton.angle_limit_rad();
    let zero3 = [[0.0; 3]; 3];
    let mut rot: [M3<f64>; N_CHAIN_JOINTS] = [zero3; N_CHAIN_JOINTS];
    rot[ROOT_CHAIN_INDEX] = vec3::euler_xyz(&root_rotation);
    let mut joint_angles = [[0.0; 2]; N_NON_ROOT];

    for &ci in skeleton.topo_order().iter().skip(1) {
        let bone = skeleton.bone_by_chain(ci).unwrap();
        let (u, v) = skeleton.basis_by_chain(ci).unwrap();
        let parent = bone.parent.chain_index().unwrap();
        let slot = non_root_slot(ci).unwrap();

        let delta = vec3::sub(&target.positions[ci], &target.positions[parent]);
        let norm = vec3::norm(&delta);
        let (az, el) = if norm > 1e-9 {
            let world_dir = vec3::scale(&delta, 1.0 / norm);
            // Rows of the parent rotation are its frame axes, so applying the
            // transpose maps world directions into the parent frame.
            let rp = &rot[parent];
            let local = [
                rp[0][0] * world_dir[0] + rp[1][0] * world_dir[1] + rp[2][0] * world_dir[2],
                rp[0][1] * world_dir[0] + rp[1][1] * world_dir[1] + rp[2][1] * world_dir[2],
                rp[0][2] * world_dir[0] + rp[1][2] * world_dir[1] + rp[2][2] * world_dir[2],
            ];
            let du = vec3::dot(&local, u);
            let dv = vec3::dot(&local, v);
            let dw = vec3::dot(&local, &bone.direction);
            let az = du.clamp(-1.0, 1.0).asin();
            let el = if az.cos() > 1e-6 { dv.atan2(dw) } else { 0.0 };
            (az.clamp(-limit, limit), el.clamp(-limit, limit))
        } else {
            (0.0, 0.0)
        };
        joint_angles[slot] = [az, el];
        let r_loc = local_rotation(u, v, az, el);
        rot[ci] = vec3::mat_mul(&rot[parent], &r_loc);
    }

    PoseParams {
        root_rotation,
        root_translation,
        joint_angles,
    }
}
