//! Joint-position sequences, root handling, temporal derivatives and half-body splits.

mod io;
mod skeleton;
mod synth;

pub use io::{decode_motion, encode_motion, read_beats, read_motion, write_beats, write_motion};
pub use skeleton::{BodyLandmarks, Half, HalfBodySplit, Skeleton, MINI_JOINTS, SMPL_JOINTS};
pub use synth::{generate_synthetic, BeatGrid, SyntheticCorpusSpec, SyntheticSequence};

use choreo_autograd::Tensor;

use crate::error::{precondition, Result};

/// A `T x J x 3` block of joint positions stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionSequence {
    data: Vec<f32>,
    frames: usize,
    joints: usize,
    fps: f32,
    skeleton_id: String,
}

impl MotionSequence {
    pub fn new(
        data: Vec<f32>,
        frames: usize,
        joints: usize,
        fps: f32,
        skeleton_id: impl Into<String>,
    ) -> Result<Self> {
        if frames < 2 {
            return Err(precondition(format!("motion needs at least 2 frames, got {frames}")));
        }
        if joints == 0 {
            return Err(precondition("motion needs at least one joint"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(precondition(format!("fps must be positive, got {fps}")));
        }
        if data.len() != frames * joints * 3 {
            return Err(precondition(format!(
                "motion data has {} values, expected {frames}x{joints}x3",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(precondition(format!(
                "non-finite value at frame {} joint {}",
                i / (joints * 3),
                (i / 3) % joints
            )));
        }
        Ok(Self {
            data,
            frames,
            joints,
            fps,
            skeleton_id: skeleton_id.into(),
        })
    }

    /// Builds a sequence from a `[T, J*3]` tensor.
    pub fn from_tensor(t: &Tensor<f32>, fps: f32, skeleton_id: impl Into<String>) -> Result<Self> {
        let shape = t.shape();
        if shape.len() != 2 || shape[1] % 3 != 0 {
            return Err(precondition(format!("expected [T, J*3] tensor, got {shape:?}")));
        }
        Self::new(t.data().to_vec(), shape[0], shape[1] / 3, fps, skeleton_id)
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(&[self.frames, self.joints * 3], self.data.clone())
            .expect("motion shape is consistent")
    }

    pub fn frame_count(&self) -> usize {
        self.frames
    }

    pub fn joint_count(&self) -> usize {
        self.joints
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn skeleton_id(&self) -> &str {
        &self.skeleton_id
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Flattened `J*3` row for frame `t`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let w = self.joints * 3;
        &self.data[t * w..(t + 1) * w]
    }

    pub fn joint(&self, t: usize, j: usize) -> [f32; 3] {
        let o = (t * self.joints + j) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Keeps the first `frames` frames.
    pub fn crop(&self, frames: usize) -> Result<Self> {
        if frames > self.frames {
            return Err(precondition(format!(
                "cannot crop {} frames to {frames}",
                self.frames
            )));
        }
        Self::new(
            self.data[..frames * self.joints * 3].to_vec(),
            frames,
            self.joints,
            self.fps,
            self.skeleton_id.clone(),
        )
    }

    /// Frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frames {
            return Err(precondition(format!(
                "window [{start}, {}) exceeds {} frames",
                start + len,
                self.frames
            )));
        }
        let w = self.joints * 3;
        Self::new(
            self.data[start * w..(start + len) * w].to_vec(),
            len,
            self.joints,
            self.fps,
            self.skeleton_id.clone(),
        )
    }

    pub fn root_trajectory(&self, root: usize) -> Vec<[f32; 3]> {
        (0..self.frames).map(|t| self.joint(t, root)).collect()
    }

    pub fn derivatives(&self) -> Result<(Vec<f32>, Vec<f32>)> {
        derivatives(&self.data, self.joints * 3)
    }

    /// Mean over joints of the per-frame speed, using central differences
    /// (one-sided at the ends).
    pub fn mean_joint_speed(&self) -> Vec<f32> {
        let (t_len, j_len) = (self.frames, self.joints);
        (0..t_len)
            .map(|t| {
                let (a, b, h) = if t == 0 {
                    (0, 1, 1.0)
                } else if t == t_len - 1 {
                    (t - 1, t, 1.0)
                } else {
                    (t - 1, t + 1, 2.0)
                };
                let total: f32 = (0..j_len)
                    .map(|j| {
                        let p = self.joint(a, j);
                        let q = self.joint(b, j);
                        dist(&p, &q) / h
                    })
                    .sum();
                total / j_len as f32
            })
            .collect()
    }
}

/// Root displacement per frame: row `t` is `root(t+1) - root(t)`, `T-1` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalVelocity {
    pub values: Vec<[f32; 3]>,
}

impl GlobalVelocity {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new(
            &[self.values.len(), 3],
            self.values.iter().flatten().copied().collect(),
        )
        .expect("velocity shape is consistent")
    }

    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        if t.shape().len() != 2 || t.shape()[1] != 3 {
            return Err(precondition(format!("expected [T-1, 3] velocity, got {:?}", t.shape())));
        }
        Ok(Self {
            values: t.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }
}

/// Translates every frame so the root sits at the origin.
///
/// Returns the root-centred motion, the root velocity and the initial root position.
pub fn normalize_root(
    motion: &MotionSequence,
    root: usize,
) -> Result<(MotionSequence, GlobalVelocity, [f32; 3])> {
    if root >= motion.joints {
        return Err(precondition(format!(
            "root index {root} out of range for {} joints",
            motion.joints
        )));
    }
    let traj = motion.root_trajectory(root);
    let mut data = motion.data.clone();
    for (t, r) in traj.iter().enumerate() {
        for j in 0..motion.joints {
            let o = (t * motion.joints + j) * 3;
            for k in 0..3 {
                data[o + k] -= r[k];
            }
        }
    }
    let values = traj
        .windows(2)
        .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]])
        .collect();
    let centred = MotionSequence {
        data,
        ..motion.clone()
    };
    Ok((centred, GlobalVelocity { values }, traj[0]))
}

/// Prefix-sums a velocity from `start`, giving `len + 1` root positions.
pub fn integrate_root(velocity: &GlobalVelocity, start: [f32; 3]) -> Vec<[f32; 3]> {
    let mut out = Vec::with_capacity(velocity.len() + 1);
    let mut cur = start;
    out.push(cur);
    for v in &velocity.values {
        for k in 0..3 {
            cur[k] += v[k];
        }
        out.push(cur);
    }
    out
}

/// Adds a per-frame root translation to every joint.
pub fn apply_root(motion: &MotionSequence, trajectory: &[[f32; 3]]) -> Result<MotionSequence> {
    if trajectory.len() != motion.frames {
        return Err(precondition(format!(
            "root trajectory has {} frames, motion has {}",
            trajectory.len(),
            motion.frames
        )));
    }
    let mut data = motion.data.clone();
    for (t, r) in trajectory.iter().enumerate() {
        for j in 0..motion.joints {
            let o = (t * motion.joints + j) * 3;
            for k in 0..3 {
                data[o + k] += r[k];
            }
        }
    }
    MotionSequence::new(data, motion.frames, motion.joints, motion.fps, motion.skeleton_id.clone())
}

/// Forward differences of a row-major `[T, width]` block: `(P', P'')` with
/// `T-1` and `T-2` rows.
pub fn derivatives(data: &[f32], width: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    if width == 0 || data.len() % width != 0 {
        return Err(precondition(format!(
            "data length {} is not a multiple of width {width}",
            data.len()
        )));
    }
    let frames = data.len() / width;
    if frames < 3 {
        return Err(precondition(format!("derivatives need T >= 3, got {frames}")));
    }
    let diff = |x: &[f32]| -> Vec<f32> {
        x[width..].iter().zip(x).map(|(b, a)| b - a).collect()
    };
    let vel = diff(data);
    let acc = diff(&vel);
    Ok((vel, acc))
}

/// Splits columns into `(upper, lower)` sequences following the split's index order.
pub fn split_half_bodies(
    motion: &MotionSequence,
    split: &HalfBodySplit,
) -> Result<(MotionSequence, MotionSequence)> {
    split.validate(motion.joints)?;
    let pick = |idx: &[usize], half: Half| {
        let mut data = Vec::with_capacity(motion.frames * idx.len() * 3);
        for t in 0..motion.frames {
            for &j in idx {
                data.extend_from_slice(&motion.joint(t, j));
            }
        }
        MotionSequence::new(
            data,
            motion.frames,
            idx.len(),
            motion.fps,
            format!("{}:{}", motion.skeleton_id, half.as_str()),
        )
    };
    Ok((pick(&split.upper, Half::Upper)?, pick(&split.lower, Half::Lower)?))
}

/// Inverse of [`split_half_bodies`].
pub fn merge_half_bodies(
    upper: &MotionSequence,
    lower: &MotionSequence,
    split: &HalfBodySplit,
    skeleton_id: &str,
) -> Result<MotionSequence> {
    if upper.joints != split.upper.len() || lower.joints != split.lower.len() {
        return Err(precondition(format!(
            "half sizes ({}, {}) do not match split ({}, {})",
            upper.joints,
            lower.joints,
            split.upper.len(),
            split.lower.len()
        )));
    }
    if upper.frames != lower.frames {
        return Err(precondition(format!(
            "half frame counts differ: {} vs {}",
            upper.frames, lower.frames
        )));
    }
    let joints = upper.joints + lower.joints;
    split.validate(joints)?;
    let mut data = vec![0.0; upper.frames * joints * 3];
    for t in 0..upper.frames {
        for (half, idx) in [(upper, &split.upper), (lower, &split.lower)] {
            for (k, &j) in idx.iter().enumerate() {
                let o = (t * joints + j) * 3;
                data[o..o + 3].copy_from_slice(&half.joint(t, k));
            }
        }
    }
    MotionSequence::new(data, upper.frames, joints, upper.fps, skeleton_id)
}

pub(crate) fn dist(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
