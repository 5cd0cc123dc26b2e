//! Per-frame music features, code-step alignment, onset beat picking and a
//! synthetic track generator paired with the motion corpus.

use std::path::Path;

use choreo_autograd::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{push_f32s, push_u32, read_file, write_atomic, Reader};
use crate::error::{precondition, Result};
use crate::motion::SyntheticCorpusSpec;

pub const DEFAULT_FEATURE_DIM: usize = 438;

/// Number of phase channels written by the synthetic generator.
pub const PHASE_CHANNELS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct MusicFeatureTrack {
    features: Tensor<f32>,
    fps: f32,
    beats: Vec<usize>,
    onset_channel: Option<usize>,
}

impl MusicFeatureTrack {
    pub fn new(
        features: Tensor<f32>,
        fps: f32,
        beats: Vec<usize>,
        onset_channel: Option<usize>,
    ) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(precondition(format!(
                "music features must be [T, F], got {:?}",
                features.shape()
            )));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(precondition(format!("fps must be positive, got {fps}")));
        }
        if !features.all_finite() {
            return Err(precondition("music features contain non-finite values"));
        }
        let (t, f) = (features.rows(), features.cols());
        if let Some(&b) = beats.iter().find(|&&b| b >= t) {
            return Err(precondition(format!("beat {b} outside [0, {t})")));
        }
        if beats.windows(2).any(|w| w[0] >= w[1]) {
            return Err(precondition("beats must be strictly increasing"));
        }
        if let Some(c) = onset_channel.filter(|&c| c >= f) {
            return Err(precondition(format!("onset channel {c} outside [0, {f})")));
        }
        Ok(Self {
            features,
            fps,
            beats,
            onset_channel,
        })
    }

    pub fn features(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn frame_count(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn beats(&self) -> &[usize] {
        &self.beats
    }

    pub fn onset_channel(&self) -> Option<usize> {
        self.onset_channel
    }

    pub fn with_beats(mut self, beats: Vec<usize>) -> Result<Self> {
        self.beats = beats;
        Self::new(self.features, self.fps, self.beats, self.onset_channel)
    }

    pub fn onset(&self) -> Option<Vec<f32>> {
        let c = self.onset_channel?;
        Some((0..self.frame_count()).map(|t| self.features.row(t)[c]).collect())
    }

    /// Frames `[start, start + len)`, with beats re-indexed into the window.
    pub fn window(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.frame_count() {
            return Err(precondition(format!(
                "window [{start}, {}) exceeds {} frames",
                start + len,
                self.frame_count()
            )));
        }
        let f = self.feature_dim();
        let data = self.features.data()[start * f..(start + len) * f].to_vec();
        let beats = self
            .beats
            .iter()
            .filter(|&&b| b >= start && b < start + len)
            .map(|&b| b - start)
            .collect();
        Self::new(Tensor::new(&[len, f], data)?, self.fps, beats, self.onset_channel)
    }
}

/// Music features pooled onto the code-step timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct CodeStepFeatures {
    pub features: Tensor<f32>,
    pub step: usize,
}

impl CodeStepFeatures {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    /// Rows `[start, end)`.
    pub fn rows(&self, start: usize, end: usize) -> Result<Tensor<f32>> {
        if start > end || end > self.len() {
            return Err(precondition(format!(
                "rows [{start}, {end}) outside {} code steps",
                self.len()
            )));
        }
        let f = self.feature_dim();
        Ok(Tensor::new(
            &[end - start, f],
            self.features.data()[start * f..end * f].to_vec(),
        )?)
    }

    /// Repeats each row `step` times (inverse of mean pooling on window-constant input).
    pub fn upsample_repeat(&self) -> Tensor<f32> {
        let f = self.feature_dim();
        let mut data = Vec::with_capacity(self.len() * self.step * f);
        for t in 0..self.len() {
            for _ in 0..self.step {
                data.extend_from_slice(self.features.row(t));
            }
        }
        Tensor::new(&[self.len() * self.step, f], data).expect("consistent shape")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    Stride,
}

/// Pools frames `[t*d, (t+1)*d)` into code step `t`; trailing frames are dropped.
pub fn downsample_features(
    track: &MusicFeatureTrack,
    d: usize,
    mode: Pooling,
) -> Result<CodeStepFeatures> {
    if d == 0 {
        return Err(precondition("downsample rate must be >= 1"));
    }
    let (t_len, f) = (track.frame_count(), track.feature_dim());
    if t_len < d {
        return Err(precondition(format!(
            "track has {t_len} frames, fewer than one code step of {d}"
        )));
    }
    let steps = t_len / d;
    let mut data = Vec::with_capacity(steps * f);
    for s in 0..steps {
        match mode {
            Pooling::Stride => data.extend_from_slice(track.features.row(s * d)),
            Pooling::Mean => {
                let mut acc = vec![0.0f64; f];
                for t in s * d..(s + 1) * d {
                    for (a, &v) in acc.iter_mut().zip(track.features.row(t)) {
                        *a += v as f64;
                    }
                }
                data.extend(acc.into_iter().map(|a| (a / d as f64) as f32));
            }
        }
    }
    Ok(CodeStepFeatures {
        features: Tensor::new(&[steps, f], data)?,
        step: d,
    })
}

/// Whether each of `steps` code steps holds a beat in `[t*d, (t+1)*d)`.
pub fn beats_at_steps(beats: &[usize], d: usize, steps: usize) -> Vec<bool> {
    let mut out = vec![false; steps];
    for &b in beats {
        if let Some(slot) = out.get_mut(b / d.max(1)) {
            *slot = true;
        }
    }
    out
}

/// Greedy peak picking: local maxima strictly above `threshold`, strongest
/// first (ties to the earlier frame), then suppressing anything closer than
/// `min_gap`. Returned frames are sorted.
pub fn pick_beats_from_onset(onset: &[f32], min_gap: usize, threshold: f32) -> Vec<usize> {
    let n = onset.len();
    let mut peaks: Vec<usize> = (0..n)
        .filter(|&t| {
            let v = onset[t];
            v > threshold && (t == 0 || v > onset[t - 1]) && (t + 1 == n || v >= onset[t + 1])
        })
        .collect();
    peaks.sort_by(|&a, &b| onset[b].total_cmp(&onset[a]).then(a.cmp(&b)));
    let gap = min_gap.max(1);
    let mut kept: Vec<usize> = Vec::new();
    for p in peaks {
        if kept.iter().all(|&k| k.abs_diff(p) >= gap) {
            kept.push(p);
        }
    }
    kept.sort_unstable();
    kept
}

/// One track per sequence of the paired motion corpus.
///
/// Channels `0..4` hold `cos/sin` of the two-beat and one-beat phase, the last
/// channel is an onset envelope with unit impulses on the beat grid over a
/// small noise floor, and the rest are slowly varying noise.
pub fn generate_synthetic_music(
    spec: &SyntheticCorpusSpec,
    feature_dim: usize,
) -> Result<Vec<MusicFeatureTrack>> {
    spec.validate()?;
    if feature_dim == 0 {
        return Err(precondition("feature dimension must be >= 1"));
    }
    let onset_ch = feature_dim - 1;
    let phase_ch = PHASE_CHANNELS.min(onset_ch);
    (0..spec.num_sequences)
        .map(|index| {
            let (_, grid) = spec.timing(index);
            let beats = grid.beats(spec.frames);
            let mut rng = spec.rng(index, 2);
            let noise: Vec<[f64; 3]> = (phase_ch..onset_ch)
                .map(|_| {
                    [
                        rng.random_range(0.5..3.0) / spec.fps as f64,
                        rng.random_range(0.0..std::f64::consts::TAU),
                        rng.random_range(0.02..0.2),
                    ]
                })
                .collect();
            let mut data = Vec::with_capacity(spec.frames * feature_dim);
            let mut next_beat = beats.iter().peekable();
            for t in 0..spec.frames {
                let theta = grid.theta(t as f64);
                let phase = [theta.cos(), theta.sin(), (2.0 * theta).cos(), (2.0 * theta).sin()];
                data.extend(phase[..phase_ch].iter().map(|&v| v as f32));
                data.extend(noise.iter().map(|&[freq, off, amp]| {
                    (amp * (std::f64::consts::TAU * freq * t as f64 + off).sin()) as f32
                }));
                let floor = rng.random_range(0.0..0.1f32);
                let onset = if next_beat.peek() == Some(&&t) {
                    next_beat.next();
                    1.0
                } else {
                    floor
                };
                data.push(onset);
            }
            let features = Tensor::new(&[spec.frames, feature_dim], data)?;
            MusicFeatureTrack::new(features, spec.fps, beats, Some(onset_ch))
        })
        .collect()
}

const MAGIC: &[u8; 4] = b"MFEA";
const VERSION: u32 = 1;

pub fn encode_features(track: &MusicFeatureTrack) -> Vec<u8> {
    let mut buf = Vec::with_capacity(24 + track.features.len() * 4);
    buf.extend_from_slice(MAGIC);
    push_u32(&mut buf, VERSION);
    push_u32(&mut buf, track.frame_count() as u32);
    push_u32(&mut buf, track.feature_dim() as u32);
    buf.extend_from_slice(&track.fps.to_le_bytes());
    let onset = track.onset_channel.map_or(-1, |c| c as i32);
    buf.extend_from_slice(&onset.to_le_bytes());
    push_f32s(&mut buf, track.features.data());
    buf
}

/// Parses `.mfeat` bytes. Beats live in a sidecar file, so the result has none.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<MusicFeatureTrack> {
    let mut r = Reader::new(bytes, path);
    r.magic(MAGIC)?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(4, format!("unsupported version {version}")));
    }
    let frames = r.u32("frame count")? as usize;
    let dim = r.u32("feature dim")? as usize;
    let fps = r.f32("fps")?;
    let onset = r.i32("onset channel")?;
    let header_end = r.offset();
    let data = r.payload(frames * dim, &format!("T={frames}, F={dim}"))?;
    let onset = match onset {
        -1 => None,
        c if c >= 0 => Some(c as usize),
        c => return Err(r.error(20, format!("invalid onset channel {c}"))),
    };
    let features = Tensor::new(&[frames, dim], data).map_err(|e| r.error(header_end, e.to_string()))?;
    MusicFeatureTrack::new(features, fps, Vec::new(), onset)
        .map_err(|e| r.error(header_end, e.to_string()))
}

pub fn read_features(path: &Path) -> Result<MusicFeatureTrack> {
    decode_features(&read_file(path)?, path)
}

pub fn write_features(path: &Path, track: &MusicFeatureTrack) -> Result<()> {
    write_atomic(path, &encode_features(track))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CoreError;
    use proptest::prelude::*;

    fn track(data: Vec<f32>, f: usize) -> MusicFeatureTrack {
        let t = data.len() / f;
        MusicFeatureTrack::new(Tensor::new(&[t, f], data).unwrap(), 60.0, vec![], None).unwrap()
    }

    #[test]
    fn mean_pooling_example() {
        let cs = downsample_features(&track(vec![1.0, 1.0, 2.0, 2.0], 1), 2, Pooling::Mean).unwrap();
        assert_eq!(cs.features.data(), &[1.0, 2.0]);
        assert_eq!(cs.step, 2);
    }

    #[test]
    fn unit_rate_is_identity_and_stride_picks_first_frame() {
        let data: Vec<f32> = (0..12).map(|v| v as f32 * 0.5).collect();
        let tr = track(data.clone(), 3);
        for mode in [Pooling::Mean, Pooling::Stride] {
            assert_eq!(downsample_features(&tr, 1, mode).unwrap().features.data(), &data[..]);
        }
        let cs = downsample_features(&tr, 2, Pooling::Stride).unwrap();
        assert_eq!(cs.features.row(1), tr.features().row(2));
        assert!(downsample_features(&tr, 5, Pooling::Mean).is_err());
        assert!(downsample_features(&tr, 0, Pooling::Mean).is_err());
    }

    #[test]
    fn peak_picking_examples() {
        let mut x = vec![0.0; 10];
        x[5] = 1.0;
        assert_eq!(pick_beats_from_onset(&x, 1, 0.5), vec![5]);
        let mut y = vec![0.0; 12];
        y[4] = 1.0;
        y[7] = 1.0;
        assert_eq!(pick_beats_from_onset(&y, 5, 0.5), vec![4]);
        assert!(pick_beats_from_onset(&[0.0; 8], 1, 0.5).is_empty());
        let mut z = vec![0.0; 12];
        z[4] = 0.8;
        z[7] = 1.0;
        assert_eq!(pick_beats_from_onset(&z, 5, 0.5), vec![7]);
    }

    #[test]
    fn step_beats() {
        assert_eq!(beats_at_steps(&[0, 9, 17, 40], 8, 4), vec![true, true, true, false]);
    }

    fn spec() -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            num_sequences: 6,
            frames: 256,
            joints: 8,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn synthetic_music_shares_motion_beats() {
        let motion = crate::motion::generate_synthetic(&spec()).unwrap();
        let music = generate_synthetic_music(&spec(), 16).unwrap();
        assert_eq!(motion.len(), music.len());
        for (m, s) in motion.iter().zip(&music) {
            assert_eq!(m.beats, s.beats());
            assert_eq!(s.fps(), m.motion.fps());
            assert_eq!(s.frame_count(), m.motion.frame_count());
        }
        assert_eq!(music, generate_synthetic_music(&spec(), 16).unwrap());
    }

    #[test]
    fn picker_recovers_synthetic_beats() {
        for tr in generate_synthetic_music(&spec(), DEFAULT_FEATURE_DIM).unwrap() {
            let onset = tr.onset().unwrap();
            let gap = (0.25 * tr.fps()).round() as usize;
            assert_eq!(pick_beats_from_onset(&onset, gap, 0.5), tr.beats());
        }
    }

    #[test]
    fn features_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mfeat");
        let tr = generate_synthetic_music(&spec(), 7).unwrap().remove(0);
        write_features(&path, &tr).unwrap();
        let back = read_features(&path).unwrap().with_beats(tr.beats().to_vec()).unwrap();
        assert_eq!(back, tr);
        let bytes = encode_features(&tr);
        assert!(matches!(
            decode_features(&bytes[..bytes.len() - 1], &path),
            Err(CoreError::Parse { .. })
        ));
    }

    proptest! {
        #[test]
        fn pooled_then_repeated_is_exact_on_window_constant_input(
            vals in proptest::collection::vec(-8i32..8, 1..10), d in 1usize..6, f in 1usize..3,
        ) {
            let mut data = Vec::new();
            for &v in &vals {
                for _ in 0..d {
                    for c in 0..f {
                        data.push(v as f32 + c as f32);
                    }
                }
            }
            let tr = track(data.clone(), f);
            let cs = downsample_features(&tr, d, Pooling::Mean).unwrap();
            prop_assert_eq!(cs.upsample_repeat().into_data(), data);
        }

        #[test]
        fn picked_beats_sorted_and_spaced(
            onset in proptest::collection::vec(0.0f32..1.0, 0..80), gap in 1usize..10, th in 0.0f32..0.8,
        ) {
            let beats = pick_beats_from_onset(&onset, gap, th);
            for w in beats.windows(2) {
                prop_assert!(w[0] < w[1]);
                prop_assert!(w[1] - w[0] >= gap);
            }
            for &b in &beats {
                prop_assert!(onset[b] > th);
            }
        }
    }
}
