//! Motion quality, diversity and music-beat alignment metrics.

use serde::{Deserialize, Serialize};

use crate::error::{config, precondition, CoreError, Result};
use crate::motion::{MotionSequence, Skeleton};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Kinetic,
    Geometric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureKind,
    pub values: Vec<f64>,
}

fn sub(a: [f32; 3], b: [f32; 3]) -> [f64; 3] {
    [
        a[0] as f64 - b[0] as f64,
        a[1] as f64 - b[1] as f64,
        a[2] as f64 - b[2] as f64,
    ]
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Per joint: mean speed, mean squared speed and mean acceleration magnitude,
/// in length units per second (and per second squared).
pub fn kinetic_features(m: &MotionSequence) -> Result<FeatureVector> {
    let (t_len, j_len) = (m.frame_count(), m.joint_count());
    if t_len < 3 {
        return Err(precondition(format!("kinetic features need T >= 3, got {t_len}")));
    }
    let fps = m.fps() as f64;
    let mut values = Vec::with_capacity(3 * j_len);
    for j in 0..j_len {
        let (mut speed, mut energy, mut accel) = (0.0, 0.0, 0.0);
        for t in 0..t_len - 1 {
            let s = norm(sub(m.joint(t + 1, j), m.joint(t, j))) * fps;
            speed += s;
            energy += s * s;
        }
        for t in 0..t_len - 2 {
            let v1 = sub(m.joint(t + 2, j), m.joint(t + 1, j));
            let v0 = sub(m.joint(t + 1, j), m.joint(t, j));
            accel += norm([v1[0] - v0[0], v1[1] - v0[1], v1[2] - v0[2]]) * fps * fps;
        }
        let n1 = (t_len - 1) as f64;
        values.extend([speed / n1, energy / n1, accel / (t_len - 2) as f64]);
    }
    Ok(FeatureVector {
        kind: FeatureKind::Kinetic,
        values,
    })
}

/// Thresholds of the relational pose templates, in skeleton length units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricThresholds {
    pub foot_front: f64,
    pub hands_together: f64,
    pub feet_apart: f64,
    pub foot_raised: f64,
    pub lean_forward: f64,
    pub hands_behind: f64,
}

impl Default for GeometricThresholds {
    fn default() -> Self {
        Self {
            foot_front: 0.2,
            hands_together: 0.15,
            feet_apart: 0.5,
            foot_raised: 0.15,
            lean_forward: 0.3,
            hands_behind: 0.1,
        }
    }
}

/// Names of the geometric templates in output order.
pub const GEOMETRIC_TEMPLATES: [&str; 16] = [
    "left_hand_above_head",
    "right_hand_above_head",
    "left_foot_in_front",
    "right_foot_in_front",
    "hands_together",
    "feet_apart",
    "left_elbow_bent",
    "right_elbow_bent",
    "left_knee_bent",
    "right_knee_bent",
    "left_hand_above_shoulder",
    "right_hand_above_shoulder",
    "torso_lean_forward",
    "hands_behind_back",
    "left_foot_raised",
    "right_foot_raised",
];

/// Fraction of frames on which each template in [`GEOMETRIC_TEMPLATES`] holds.
pub fn geometric_features(
    m: &MotionSequence,
    skeleton: &Skeleton,
    th: &GeometricThresholds,
) -> Result<FeatureVector> {
    if skeleton.joint_count() != m.joint_count() {
        return Err(config(format!(
            "skeleton {} has {} joints, motion has {}",
            skeleton.id,
            skeleton.joint_count(),
            m.joint_count()
        )));
    }
    let idx = |name: &str| {
        skeleton
            .index_of(name)
            .ok_or_else(|| config(format!("skeleton {} lacks joint `{name}`", skeleton.id)))
    };
    let [pelvis, spine1, neck, head] = ["pelvis", "spine1", "neck", "head"].map(idx);
    let [lhip, rhip, lknee, rknee] = ["left_hip", "right_hip", "left_knee", "right_knee"].map(idx);
    let [lank, rank, lsh, rsh] = ["left_ankle", "right_ankle", "left_shoulder", "right_shoulder"].map(idx);
    let [lel, rel, lwr, rwr] = ["left_elbow", "right_elbow", "left_wrist", "right_wrist"].map(idx);
    let (pelvis, spine1, neck, head) = (pelvis?, spine1?, neck?, head?);
    let (lhip, rhip, lknee, rknee) = (lhip?, rhip?, lknee?, rknee?);
    let (lank, rank, lsh, rsh) = (lank?, rank?, lsh?, rsh?);
    let (lel, rel, lwr, rwr) = (lel?, rel?, lwr?, rwr?);

    let mut counts = [0usize; 16];
    for t in 0..m.frame_count() {
        let p = |j: usize| m.joint(t, j);
        let up = sub(p(spine1), p(pelvis));
        let across = sub(p(rhip), p(lhip));
        let f = cross(up, across);
        let fxz = [f[0], 0.0, f[2]];
        let fn_ = norm(fxz);
        let forward = if fn_ > 1e-9 { fxz.map(|v| v / fn_) } else { [0.0, 0.0, 1.0] };
        let ahead = |j: usize| dot(sub(p(j), p(pelvis)), forward);
        let bent = |a: usize, joint: usize, c: usize| dot(sub(p(a), p(joint)), sub(p(c), p(joint))) > 0.0;
        let torso = sub(p(neck), p(pelvis));
        let flags = [
            p(lwr)[1] > p(head)[1],
            p(rwr)[1] > p(head)[1],
            ahead(lank) > th.foot_front,
            ahead(rank) > th.foot_front,
            norm(sub(p(lwr), p(rwr))) < th.hands_together,
            norm(sub(p(lank), p(rank))) > th.feet_apart,
            bent(lsh, lel, lwr),
            bent(rsh, rel, rwr),
            bent(lhip, lknee, lank),
            bent(rhip, rknee, rank),
            p(lwr)[1] > p(lsh)[1],
            p(rwr)[1] > p(rsh)[1],
            dot(torso, forward) > th.lean_forward * norm(torso),
            ahead(lwr) < -th.hands_behind && ahead(rwr) < -th.hands_behind,
            (p(lank)[1] - p(rank)[1]) as f64 > th.foot_raised,
            (p(rank)[1] - p(lank)[1]) as f64 > th.foot_raised,
        ];
        for (c, f) in counts.iter_mut().zip(flags) {
            *c += f as usize;
        }
    }
    Ok(FeatureVector {
        kind: FeatureKind::Geometric,
        values: counts.iter().map(|&c| c as f64 / m.frame_count() as f64).collect(),
    })
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations: returns
/// eigenvalues and row-major eigenvectors (column `k` pairs with value `k`).
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i * n + i] * a[i * n + i]).sum::<f64>() + off;
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Square root of a symmetric PSD matrix. Eigenvalues below zero are clamped;
/// below `-tol·max(1, max|λ|)` they are reported as an error.
pub fn sqrt_psd(a: &[f64], n: usize, tol: f64) -> Result<Vec<f64>> {
    let (vals, vecs) = symmetric_eigen(a, n);
    let biggest = vals.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if let Some(v) = vals.iter().find(|&&v| v < -tol * biggest) {
        return Err(CoreError::Numerical(format!("matrix is not PSD (eigenvalue {v})")));
    }
    if vals.iter().any(|&v| v < 0.0) {
        log::warn!("clamping negative eigenvalues of a near-singular covariance");
    }
    let roots: Vec<f64> = vals.iter().map(|&v| v.max(0.0).sqrt()).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| vecs[i * n + k] * roots[k] * vecs[j * n + k]).sum();
        }
    }
    Ok(out)
}

fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Row-major `D x D`.
    pub cov: Vec<f64>,
}

impl GaussianStats {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(precondition(format!("covariance has {} entries for D = {d}", cov.len())));
        }
        for i in 0..d {
            for j in 0..i {
                if (cov[i * d + j] - cov[j * d + i]).abs() > 1e-6 {
                    return Err(precondition(format!("covariance not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    /// Sample mean and unbiased covariance of at least two vectors.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(precondition(format!("need at least 2 samples, got {n}")));
        }
        let d = samples[0].len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(precondition("feature vectors differ in length"));
        }
        let mean: Vec<f64> = (0..d)
            .map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / n as f64)
            .collect();
        let mut cov = vec![0.0; d * d];
        for s in samples {
            for i in 0..d {
                let di = s[i] - mean[i];
                for j in 0..=i {
                    cov[i * d + j] += di * (s[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov[i * d + j] / (n - 1) as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `|μa − μb|² + Tr(Σa + Σb − 2 (Σa Σb)^{1/2})`, using
/// `Tr((Σa Σb)^{1/2}) = Tr((Σa^{1/2} Σb Σa^{1/2})^{1/2})`.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let d = a.dim();
    if b.dim() != d {
        return Err(precondition(format!("dimensions differ: {d} vs {}", b.dim())));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum();
    let sa = sqrt_psd(&a.cov, d, 1e-6)?;
    let mut m = matmul_sq(&matmul_sq(&sa, &b.cov, d), &sa, d);
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = s;
            m[j * d + i] = s;
        }
    }
    let root = sqrt_psd(&m, d, 1e-6)?;
    let tr = |x: &[f64]| (0..d).map(|i| x[i * d + i]).sum::<f64>();
    Ok((mean_term + tr(&a.cov) + tr(&b.cov) - 2.0 * tr(&root)).max(0.0))
}

/// Mean Euclidean distance over all unordered pairs.
pub fn diversity(features: &[Vec<f64>]) -> Result<f64> {
    let n = features.len();
    if n < 2 {
        return Err(precondition(format!("diversity needs at least 2 vectors, got {n}")));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += features[i]
                .iter()
                .zip(&features[j])
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
        }
    }
    Ok(total / (n * (n - 1) / 2) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DanceBeatConfig {
    /// Centred moving-average width applied to the speed envelope.
    pub smooth_window: usize,
    /// Minimum spacing as a fraction of the frame rate.
    pub min_gap_seconds: f64,
}

impl Default for DanceBeatConfig {
    fn default() -> Self {
        Self {
            smooth_window: 5,
            min_gap_seconds: 0.25,
        }
    }
}

impl DanceBeatConfig {
    pub fn min_gap_frames(&self, fps: f32) -> usize {
        ((self.min_gap_seconds * fps as f64).round() as usize).max(1)
    }
}

/// Centred moving average; windows are truncated at the ends.
pub fn smooth(x: &[f32], window: usize) -> Vec<f32> {
    let half = window / 2;
    (0..x.len())
        .map(|t| {
            let lo = t.saturating_sub(half);
            let hi = (t + half + 1).min(x.len());
            x[lo..hi].iter().map(|&v| v as f64).sum::<f64>() as f32 / (hi - lo) as f32
        })
        .collect()
}

/// Strict local minima of `env` (a flat run counts once, at its first frame,
/// when both neighbours of the run are higher), kept deepest first with
/// `min_gap` suppression. Returned sorted. Differences within `1e-5·max|env|`
/// count as flat so float jitter on a constant envelope is ignored.
pub fn local_minima(env: &[f32], min_gap: usize) -> Vec<usize> {
    let n = env.len();
    let tol = 1e-5 * env.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let mut cands = Vec::new();
    let mut t = 1;
    while t + 1 < n {
        let mut end = t;
        while end + 1 < n && (env[end + 1] - env[t]).abs() <= tol {
            end += 1;
        }
        if end + 1 < n && env[t - 1] - env[t] > tol && env[end + 1] - env[t] > tol {
            cands.push(t);
        }
        t = end + 1;
    }
    cands.sort_by(|&a, &b| env[a].total_cmp(&env[b]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in cands {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_gap.max(1)) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Strictly increasing beat frames at a frame rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeatSet {
    pub frames: Vec<usize>,
    pub fps: f32,
}

impl BeatSet {
    pub fn new(frames: Vec<usize>, fps: f32) -> Result<Self> {
        if frames.windows(2).any(|w| w[0] >= w[1]) {
            return Err(precondition("beat frames must be strictly increasing"));
        }
        Ok(Self { frames, fps })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Dance beats: minima of the smoothed mean joint speed.
pub fn extract_dance_beats(m: &MotionSequence, cfg: &DanceBeatConfig) -> Result<BeatSet> {
    if m.frame_count() < 3 {
        return Err(precondition("dance beats need T >= 3"));
    }
    let env = smooth(&m.mean_joint_speed(), cfg.smooth_window.max(1));
    BeatSet::new(local_minima(&env, cfg.min_gap_frames(m.fps())), m.fps())
}

/// Mean over music beats of `exp(−d²/(2σ²))`, `d` the distance to the nearest dance beat.
pub fn beat_align_score(dance: &[usize], music: &[usize], sigma: f64) -> Result<f64> {
    if music.is_empty() {
        return Err(precondition("beat align score needs at least one music beat"));
    }
    if dance.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = music
        .iter()
        .map(|&tm| {
            let d = dance.iter().map(|&td| td.abs_diff(tm)).min().expect("nonempty") as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / music.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Beat-align kernel width in frames at 60 fps; scaled by `fps / 60`.
    pub sigma: f64,
    #[serde(default)]
    pub dance_beats: DanceBeatConfig,
    #[serde(default)]
    pub geometric: GeometricThresholds,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            sigma: 3.0,
            dance_beats: DanceBeatConfig::default(),
            geometric: GeometricThresholds::default(),
        }
    }
}

impl EvalConfig {
    pub fn sigma_frames(&self, fps: f32) -> f64 {
        self.sigma * fps as f64 / 60.0
    }
}

/// A motion with the music beats it was generated for.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub id: String,
    pub motion: MotionSequence,
    pub music_beats: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub id: String,
    pub bas: f64,
    pub dance_beats: usize,
    pub music_beats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fid_k: f64,
    pub fid_g: f64,
    pub div_k: f64,
    pub div_g: f64,
    pub bas: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub config_hash: String,
    #[serde(skip)]
    pub per_sequence: Vec<SequenceScore>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("sequence,bas,dance_beats,music_beats\n");
        for r in &self.per_sequence {
            s.push_str(&format!("{},{:.6},{},{}\n", r.id, r.bas, r.dance_beats, r.music_beats));
        }
        s
    }
}

/// Full metric suite of a generated set against a reference set. BAS is the
/// mean over generated sequences that have at least one music beat.
pub fn evaluate_suite(
    generated: &[EvalSample],
    reference: &[MotionSequence],
    skeleton: &Skeleton,
    cfg: &EvalConfig,
    config_hash: &str,
) -> Result<EvalReport> {
    if generated.len() < 2 || reference.len() < 2 {
        return Err(precondition(format!(
            "need at least 2 generated and 2 reference sequences, got {} and {}",
            generated.len(),
            reference.len()
        )));
    }
    let feats = |ms: &mut dyn Iterator<Item = &MotionSequence>| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let mut k = Vec::new();
        let mut g = Vec::new();
        for m in ms {
            k.push(kinetic_features(m)?.values);
            g.push(geometric_features(m, skeleton, &cfg.geometric)?.values);
        }
        Ok((k, g))
    };
    let (gk, gg) = feats(&mut generated.iter().map(|s| &s.motion))?;
    let (rk, rg) = feats(&mut reference.iter())?;
    let fid = |a: &[Vec<f64>], b: &[Vec<f64>]| -> Result<f64> {
        frechet_distance(&GaussianStats::fit(a)?, &GaussianStats::fit(b)?)
    };
    let mut per_sequence = Vec::new();
    let mut bas_sum = 0.0;
    let mut bas_n = 0;
    for s in generated {
        let dance = extract_dance_beats(&s.motion, &cfg.dance_beats)?.frames;
        let bas = if s.music_beats.is_empty() {
            f64::NAN
        } else {
            let b = beat_align_score(&dance, &s.music_beats, cfg.sigma_frames(s.motion.fps()))?;
            bas_sum += b;
            bas_n += 1;
            b
        };
        per_sequence.push(SequenceScore {
            id: s.id.clone(),
            bas,
            dance_beats: dance.len(),
            music_beats: s.music_beats.len(),
        });
    }
    if bas_n == 0 {
        return Err(precondition("no generated sequence has music beats"));
    }
    Ok(EvalReport {
        fid_k: fid(&gk, &rk)?,
        fid_g: fid(&gg, &rg)?,
        div_k: diversity(&gk)?,
        div_g: diversity(&gg)?,
        bas: bas_sum / bas_n as f64,
        n_generated: generated.len(),
        n_reference: reference.len(),
        config_hash: config_hash.to_string(),
        per_sequence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats1(mu: f64, var: f64) -> GaussianStats {
        GaussianStats::new(vec![mu], vec![var]).unwrap()
    }

    #[test]
    fn fid_one_dimensional_cases() {
        assert!((frechet_distance(&stats1(0.0, 1.0), &stats1(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!((frechet_distance(&stats1(0.0, 1.0), &stats1(0.0, 4.0)).unwrap() - 1.0).abs() < 1e-12);
        assert!(frechet_distance(&stats1(0.3, 2.0), &stats1(0.3, 2.0)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn bas_cases() {
        assert_eq!(beat_align_score(&[5, 20], &[5, 20], 3.0).unwrap(), 1.0);
        assert!((beat_align_score(&[13], &[10], 3.0).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(beat_align_score(&[], &[10], 3.0).unwrap(), 0.0);
        assert!(beat_align_score(&[1], &[], 3.0).is_err());
    }

    #[test]
    fn diversity_cases() {
        assert_eq!(diversity(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(diversity(&[vec![0.0, 0.0], vec![0.0, 2.0]]).unwrap(), 2.0);
        assert_eq!(diversity(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap(), 4.0 / 3.0);
        assert!(diversity(&[vec![0.0]]).is_err());
    }

    fn translating(speed: f32, frames: usize, joints: usize) -> MotionSequence {
        let fps = 30.0;
        let mut data = Vec::new();
        for t in 0..frames {
            for j in 0..joints {
                data.extend([speed * t as f32 / fps + j as f32, 0.5, -(j as f32)]);
            }
        }
        MotionSequence::new(data, frames, joints, fps, "g").unwrap()
    }

    #[test]
    fn kinetic_examples() {
        let still = translating(0.0, 6, 3);
        assert!(kinetic_features(&still).unwrap().values.iter().all(|&v| v == 0.0));
        let moving = kinetic_features(&translating(2.0, 8, 3)).unwrap().values;
        for j in 0..3 {
            assert!((moving[3 * j] - 2.0).abs() < 1e-4);
            assert!((moving[3 * j + 1] - 4.0).abs() < 1e-3);
            assert!(moving[3 * j + 2].abs() < 1e-2);
        }
    }

    #[test]
    fn geometric_tpose_is_symmetric() {
        let sk = Skeleton::smpl24();
        let data: Vec<f32> = (0..5).flat_map(|_| sk.rest_pose.iter().flatten().copied()).collect();
        let m = MotionSequence::new(data, 5, 24, 60.0, "smpl24").unwrap();
        let f = geometric_features(&m, &sk, &GeometricThresholds::default()).unwrap().values;
        assert_eq!(f.len(), 16);
        assert!(f.iter().all(|&v| (0.0..=1.0).contains(&v)));
        for (l, r) in [(0, 1), (2, 3), (6, 7), (8, 9), (10, 11), (14, 15)] {
            assert_eq!(f[l], f[r], "{}", GEOMETRIC_TEMPLATES[l]);
        }
        assert_eq!(f[0], 0.0);
        assert!(geometric_features(&m, &Skeleton::mini8(), &GeometricThresholds::default()).is_err());
    }

    #[test]
    fn time_reversal_keeps_speed_and_energy() {
        use crate::motion::{generate_synthetic, SyntheticCorpusSpec};
        let m = generate_synthetic(&SyntheticCorpusSpec { num_sequences: 1, frames: 30, joints: 4, ..Default::default() })
            .unwrap()
            .remove(0)
            .motion;
        let rev: Vec<f32> = (0..30).rev().flat_map(|t| m.frame(t).to_vec()).collect();
        let r = MotionSequence::new(rev, 30, 4, m.fps(), "g").unwrap();
        let (a, b) = (kinetic_features(&m).unwrap().values, kinetic_features(&r).unwrap().values);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn constant_velocity_has_no_dance_beats() {
        let m = translating(1.0, 40, 2);
        assert!(extract_dance_beats(&m, &DanceBeatConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn single_sinusoid_beats_at_reversals() {
        let (fps, period) = (60.0f32, 40.0f64);
        let frames = 160;
        let data: Vec<f32> = (0..frames)
            .flat_map(|t| {
                let x = (2.0 * std::f64::consts::PI * t as f64 / period).sin() as f32;
                [x, 0.0, 0.0]
            })
            .collect();
        let m = MotionSequence::new(data, frames, 1, fps, "g").unwrap();
        let beats = extract_dance_beats(&m, &DanceBeatConfig::default()).unwrap().frames;
        // velocity ∝ cos(2πt/P) vanishes at t = P/4 + kP/2
        let expected: Vec<f64> = (0..8).map(|k| period / 4.0 + k as f64 * period / 2.0).collect();
        let interior: Vec<f64> = expected.into_iter().filter(|&e| e > 2.0 && e < frames as f64 - 3.0).collect();
        assert_eq!(beats.len(), interior.len(), "{beats:?}");
        for (b, e) in beats.iter().zip(&interior) {
            assert!((*b as f64 - e).abs() <= 1.0, "{b} vs {e}");
        }
    }

    #[test]
    fn plateau_minimum_reports_earliest_frame() {
        assert_eq!(local_minima(&[3.0, 1.0, 1.0, 1.0, 2.0], 1), vec![1]);
        assert!(local_minima(&[1.0, 1.0, 1.0], 1).is_empty());
        assert_eq!(local_minima(&[2.0, 0.5, 2.0, 0.4, 2.0], 3), vec![3]);
    }

    fn random_psd(seed: u64, d: usize) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut s = matmul_sq(&a, &crate::metrics::tests::transpose(&a, d), d);
        for i in 0..d {
            s[i * d + i] += 1e-3;
        }
        s
    }

    fn transpose(a: &[f64], d: usize) -> Vec<f64> {
        (0..d * d).map(|k| a[(k % d) * d + k / d]).collect()
    }

    proptest! {
        #[test]
        fn sqrt_squares_back(seed in any::<u64>(), d in 1usize..7) {
            let s = random_psd(seed, d);
            let r = sqrt_psd(&s, d, 1e-6).unwrap();
            let back = matmul_sq(&r, &r, d);
            let num: f64 = back.iter().zip(&s).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let den: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(num / den < 1e-5);
        }

        #[test]
        fn fid_symmetric_nonnegative(s1 in any::<u64>(), s2 in any::<u64>(), d in 1usize..5) {
            let a = GaussianStats::new(vec![0.1; d], random_psd(s1, d)).unwrap();
            let b = GaussianStats::new((0..d).map(|i| i as f64 * 0.3).collect(), random_psd(s2, d)).unwrap();
            let ab = frechet_distance(&a, &b).unwrap();
            let ba = frechet_distance(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-6 * (1.0 + ab));
            prop_assert!(frechet_distance(&a, &a).unwrap() < 1e-6);
        }

        #[test]
        fn bas_decreases_as_beat_moves_away(m in 20usize..200, o1 in 0usize..10, extra in 0usize..10, sigma in 0.5f64..6.0) {
            let near = beat_align_score(&[m + o1], &[m], sigma).unwrap();
            let far = beat_align_score(&[m + o1 + extra], &[m], sigma).unwrap();
            prop_assert!(far <= near + 1e-12);
        }

        #[test]
        fn kinetic_translation_invariant(dx in -5.0f32..5.0, dz in -5.0f32..5.0) {
            use crate::motion::{generate_synthetic, SyntheticCorpusSpec};
            let m = generate_synthetic(&SyntheticCorpusSpec { num_sequences: 1, frames: 40, joints: 4, ..Default::default() }).unwrap().remove(0).motion;
            let shifted: Vec<f32> = m.data().chunks(3).flat_map(|p| [p[0] + dx, p[1], p[2] + dz]).collect();
            let m2 = MotionSequence::new(shifted, 40, 4, m.fps(), "g").unwrap();
            let (a, b) = (kinetic_features(&m).unwrap().values, kinetic_features(&m2).unwrap().values);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-3 * (1.0 + x.abs()));
            }
        }

        #[test]
        fn diversity_order_invariant(v in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 3), 2..6)) {
            let mut r = v.clone();
            r.reverse();
            prop_assert!((diversity(&v).unwrap() - diversity(&r).unwrap()).abs() < 1e-12);
        }
    }
}
