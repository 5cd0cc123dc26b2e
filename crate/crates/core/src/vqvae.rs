//! Per-half-body pose VQ-VAE: temporal conv encoder, nearest-code quantizer,
//! pose decoder and (lower body only) root-velocity decoder.

use choreo_autograd::{Adam, Bound, Graph, ParamStore, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, precondition, CoreError, Result};
use crate::layers::{conv, init_conv, init_res_block, res_block};
use crate::motion::{
    apply_root, integrate_root, merge_half_bodies, normalize_root, split_half_bodies, GlobalVelocity,
    Half, HalfBodySplit, MotionSequence,
};
use crate::training::{adam, apply, check_loss, sample_indices, step_rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqLossWeights {
    pub beta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for VqLossWeights {
    fn default() -> Self {
        Self {
            beta: 0.1,
            alpha1: 1.0,
            alpha2: 1.0,
        }
    }
}

/// Distance used for the codebook and commitment terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookNorm {
    /// Mean squared error.
    #[default]
    Squared,
    /// Mean over code steps of the Euclidean distance.
    Unsquared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqVaeConfig {
    /// Number of codebook entries `N`.
    pub codebook_size: usize,
    /// Code feature width `C`.
    pub code_dim: usize,
    /// Temporal downsampling rate `d`, a power of two.
    pub downsample: usize,
    /// Channel width at full temporal resolution; widths grow to `code_dim` at the bottleneck.
    pub hidden: usize,
    pub bottleneck_blocks: usize,
    #[serde(default)]
    pub weights: VqLossWeights,
    #[serde(default)]
    pub codebook_norm: CodebookNorm,
    pub dead_code_reset: bool,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        Self {
            codebook_size: 512,
            code_dim: 512,
            downsample: 8,
            hidden: 256,
            bottleneck_blocks: 2,
            weights: VqLossWeights::default(),
            codebook_norm: CodebookNorm::Squared,
            dead_code_reset: true,
        }
    }
}

impl VqVaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.codebook_size < 2 {
            return Err(config("codebook_size must be >= 2"));
        }
        if self.code_dim == 0 || self.hidden == 0 {
            return Err(config("code_dim and hidden must be positive"));
        }
        if !self.downsample.is_power_of_two() {
            return Err(config(format!("downsample {} is not a power of two", self.downsample)));
        }
        let w = self.weights;
        if !(w.beta >= 0.0 && w.alpha1 >= 0.0 && w.alpha2 >= 0.0) {
            return Err(config("loss weights must be non-negative"));
        }
        Ok(())
    }

    fn stages(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }

    /// Channel width after `i` downsampling stages.
    fn width(&self, i: usize) -> usize {
        if i > 0 && i == self.stages() {
            self.code_dim
        } else {
            self.hidden
        }
    }
}

/// Codebook entries plus lifetime usage counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub entries: Tensor<f32>,
    pub usage: Vec<u64>,
}

impl Codebook {
    pub fn size(&self) -> usize {
        self.entries.rows()
    }

    pub fn quantize(&self, e: &Tensor<f32>) -> Result<(Tensor<f32>, Vec<usize>)> {
        quantize(e, &self.entries)
    }
}

/// Nearest codebook row for every row of `e` (squared Euclidean distance,
/// ties to the lowest index) and the gathered rows.
pub fn quantize<F: Real>(e: &Tensor<F>, codebook: &Tensor<F>) -> Result<(Tensor<F>, Vec<usize>)> {
    let indices = nearest_codes(e, codebook)?;
    let c = codebook.cols();
    let mut data = Vec::with_capacity(indices.len() * c);
    for &i in &indices {
        data.extend_from_slice(codebook.row(i));
    }
    Ok((Tensor::new(&[indices.len(), c], data)?, indices))
}

pub fn nearest_codes<F: Real>(e: &Tensor<F>, codebook: &Tensor<F>) -> Result<Vec<usize>> {
    if e.shape().len() != 2 || codebook.shape().len() != 2 || e.cols() != codebook.cols() {
        return Err(precondition(format!(
            "cannot quantize {:?} against codebook {:?}",
            e.shape(),
            codebook.shape()
        )));
    }
    Ok((0..e.rows())
        .map(|r| {
            let x = e.row(r);
            let mut best = (f64::INFINITY, 0);
            for j in 0..codebook.rows() {
                let d: f64 = x
                    .iter()
                    .zip(codebook.row(j))
                    .map(|(&a, &b)| {
                        let t = a.to_f64_lossy() - b.to_f64_lossy();
                        t * t
                    })
                    .sum();
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect())
}

/// Scalar loss values of one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VqLossComponents {
    /// Position term of the reconstruction loss.
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
    /// Full reconstruction loss including the derivative terms.
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub total: f64,
}

/// Mean-L1 reconstruction loss with first and second difference terms.
/// Difference terms whose length would be zero are skipped.
pub fn reconstruction_loss<'g, F: Real>(
    p_hat: Var<'g, F>,
    p: Var<'g, F>,
    alpha1: f64,
    alpha2: f64,
) -> Result<(Var<'g, F>, [f64; 3])> {
    let pos = p_hat.l1(p)?;
    let mut total = pos;
    let mut parts = [pos.item().to_f64_lossy(), 0.0, 0.0];
    let rows = p.value().rows();
    if rows >= 2 {
        let (v_hat, v) = (p_hat.diff_rows()?, p.diff_rows()?);
        let vel = v_hat.l1(v)?;
        parts[1] = vel.item().to_f64_lossy();
        if alpha1 != 0.0 {
            total = total.add(vel.scale(F::lit(alpha1)))?;
        }
        if rows >= 3 {
            let acc = v_hat.diff_rows()?.l1(v.diff_rows()?)?;
            parts[2] = acc.item().to_f64_lossy();
            if alpha2 != 0.0 {
                total = total.add(acc.scale(F::lit(alpha2)))?;
            }
        }
    }
    Ok((total, parts))
}

fn code_distance<'g, F: Real>(a: Var<'g, F>, b: Var<'g, F>, norm: CodebookNorm) -> Result<Var<'g, F>> {
    match norm {
        CodebookNorm::Squared => Ok(a.mse(b)?),
        CodebookNorm::Unsquared => {
            let rows = a.value().rows();
            let mut acc: Option<Var<'g, F>> = None;
            for r in 0..rows {
                let d = a.slice_rows(r, r + 1)?.l2_dist(b.slice_rows(r, r + 1)?)?;
                acc = Some(match acc {
                    Some(s) => s.add(d)?,
                    None => d,
                });
            }
            Ok(acc.expect("at least one row").scale(F::one() / F::lit(rows as f64)))
        }
    }
}

/// `L_rec(p_hat, p) + dist(sg[e], e_q) + beta * dist(e, sg[e_q])`.
pub fn vq_loss<'g, F: Real>(
    p_hat: Var<'g, F>,
    p: Var<'g, F>,
    e: Var<'g, F>,
    e_q: Var<'g, F>,
    weights: VqLossWeights,
    norm: CodebookNorm,
) -> Result<(Var<'g, F>, VqLossComponents)> {
    let (rec, parts) = reconstruction_loss(p_hat, p, weights.alpha1, weights.alpha2)?;
    let cb = code_distance(e.stop_gradient(), e_q, norm)?;
    let commit = code_distance(e, e_q.stop_gradient(), norm)?;
    let total = rec.add(cb)?.add(commit.scale(F::lit(weights.beta)))?;
    let comps = VqLossComponents {
        position: parts[0],
        velocity: parts[1],
        acceleration: parts[2],
        reconstruction: rec.item().to_f64_lossy(),
        codebook: cb.item().to_f64_lossy(),
        commitment: commit.item().to_f64_lossy(),
        total: total.item().to_f64_lossy(),
    };
    Ok((total, comps))
}

/// Result of a differentiable forward pass through encoder, quantizer and pose decoder.
pub struct VqForward<'g, F: Real> {
    pub loss: Var<'g, F>,
    pub components: VqLossComponents,
    pub indices: Vec<usize>,
    pub e: Var<'g, F>,
    pub p_hat: Var<'g, F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqVaeModel {
    pub config: VqVaeConfig,
    pub half: Half,
    /// Joints in this half body; inputs have `3 * joints` channels.
    pub joints: usize,
    pub params: ParamStore<f32>,
    pub usage: Vec<u64>,
}

impl VqVaeModel {
    pub fn new(config: VqVaeConfig, half: Half, joints: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if joints == 0 {
            return Err(config_err("half body has no joints"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let s = config.stages();
        let in_dim = joints * 3;
        init_conv(&mut p, &mut rng, "enc.in", 3, in_dim, config.width(0))?;
        for i in 0..s {
            let name = format!("enc.down{i}");
            init_conv(&mut p, &mut rng, &name, 4, config.width(i), config.width(i + 1))?;
            init_res_block(&mut p, &mut rng, &format!("{name}.res"), config.width(i + 1))?;
        }
        for j in 0..config.bottleneck_blocks {
            init_res_block(&mut p, &mut rng, &format!("enc.mid{j}"), config.width(s))?;
        }
        init_conv(&mut p, &mut rng, "enc.out", 3, config.width(s), config.code_dim)?;
        let n = config.codebook_size;
        p.insert(
            "codebook",
            Tensor::uniform(&[n, config.code_dim], -1.0 / n as f64, 1.0 / n as f64, &mut rng),
        )?;
        init_decoder(&mut p, &mut rng, &config, "dec", config.bottleneck_blocks, in_dim)?;
        if half == Half::Lower {
            init_decoder(&mut p, &mut rng, &config, "vel", 2, 3)?;
        }
        Ok(Self {
            usage: vec![0; n],
            config,
            half,
            joints,
            params: p,
        })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_params(
        config: VqVaeConfig,
        half: Half,
        joints: usize,
        params: ParamStore<f32>,
        usage: Vec<u64>,
    ) -> Result<Self> {
        let template = Self::new(config, half, joints, 0)?;
        check_same_layout(&template.params, &params)?;
        if usage.len() != template.config.codebook_size {
            return Err(precondition(format!(
                "usage has {} entries, codebook has {}",
                usage.len(),
                template.config.codebook_size
            )));
        }
        Ok(Self {
            params,
            usage,
            ..template
        })
    }

    pub fn codebook(&self) -> Codebook {
        Codebook {
            entries: self.params.get("codebook").expect("codebook exists").clone(),
            usage: self.usage.clone(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.joints * 3
    }

    pub fn has_velocity_branch(&self) -> bool {
        self.half == Half::Lower
    }

    /// Length after cropping to a multiple of `d`.
    pub fn usable_frames(&self, frames: usize) -> Result<usize> {
        let d = self.config.downsample;
        if frames < d {
            return Err(precondition(format!("{frames} frames is fewer than d = {d}")));
        }
        Ok(frames / d * d)
    }

    fn crop(&self, pose: &Tensor<f32>) -> Result<Tensor<f32>> {
        if pose.shape().len() != 2 || pose.cols() != self.in_dim() {
            return Err(precondition(format!(
                "expected [T, {}] pose, got {:?}",
                self.in_dim(),
                pose.shape()
            )));
        }
        let t = self.usable_frames(pose.rows())?;
        Ok(Tensor::new(&[t, pose.cols()], pose.data()[..t * pose.cols()].to_vec())?)
    }

    /// Encoder features `e`, `[T/d, C]`; trailing frames beyond a multiple of `d` are dropped.
    pub fn encode(&self, pose: &Tensor<f32>) -> Result<Tensor<f32>> {
        let x = self.crop(pose)?;
        let g = Graph::new();
        let b = self.params.bind(&g, |_| false);
        let e = encode_var(&self.config, &b, g.constant(x))?;
        Ok((*e.value()).clone())
    }

    /// Independent encodings of several sequences.
    pub fn encode_batch(&self, poses: &[Tensor<f32>]) -> Result<Vec<Tensor<f32>>> {
        poses.iter().map(|p| self.encode(p)).collect()
    }

    pub fn quantize(&self, e: &Tensor<f32>) -> Result<(Tensor<f32>, Vec<usize>)> {
        quantize(e, self.params.get("codebook")?)
    }

    pub fn encode_codes(&self, pose: &Tensor<f32>) -> Result<Vec<usize>> {
        Ok(self.quantize(&self.encode(pose)?)?.1)
    }

    pub fn lookup(&self, codes: &[usize]) -> Result<Tensor<f32>> {
        let cb = self.params.get("codebook")?;
        if let Some(&bad) = codes.iter().find(|&&c| c >= cb.rows()) {
            return Err(precondition(format!("code {bad} outside [0, {})", cb.rows())));
        }
        if codes.is_empty() {
            return Err(precondition("empty code sequence"));
        }
        let mut data = Vec::with_capacity(codes.len() * cb.cols());
        for &c in codes {
            data.extend_from_slice(cb.row(c));
        }
        Ok(Tensor::new(&[codes.len(), cb.cols()], data)?)
    }

    /// Pose frames `[T'·d, 3·joints]` from quantized features.
    pub fn decode_pose(&self, e_q: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.check_features(e_q)?;
        let g = Graph::new();
        let b = self.params.bind(&g, |_| false);
        Ok((*decode_var(&self.config, &b, "dec", g.constant(e_q.clone()))?.value()).clone())
    }

    /// Root velocity `[T'·d − 1, 3]`; lower-body models only.
    pub fn decode_velocity(&self, e_q: &Tensor<f32>) -> Result<Tensor<f32>> {
        if !self.has_velocity_branch() {
            return Err(precondition("decode_velocity called on the upper-body model"));
        }
        self.check_features(e_q)?;
        let g = Graph::new();
        let b = self.params.bind(&g, |_| false);
        Ok((*velocity_var(&self.config, &b, g.constant(e_q.clone()))?.value()).clone())
    }

    pub fn decode_codes(&self, codes: &[usize]) -> Result<Tensor<f32>> {
        self.decode_pose(&self.lookup(codes)?)
    }

    fn check_features(&self, e_q: &Tensor<f32>) -> Result<()> {
        if e_q.shape().len() != 2 || e_q.cols() != self.config.code_dim || e_q.rows() == 0 {
            return Err(precondition(format!(
                "expected [T', {}] features, got {:?}",
                self.config.code_dim,
                e_q.shape()
            )));
        }
        Ok(())
    }
}

fn config_err(msg: &str) -> CoreError {
    config(msg)
}

pub(crate) fn check_same_layout(expected: &ParamStore<f32>, got: &ParamStore<f32>) -> Result<()> {
    if expected.len() != got.len() {
        return Err(precondition(format!(
            "expected {} parameters, found {}",
            expected.len(),
            got.len()
        )));
    }
    for (name, t) in expected.iter() {
        let other = got
            .get(name)
            .map_err(|_| precondition(format!("missing parameter `{name}`")))?;
        if other.shape() != t.shape() {
            return Err(precondition(format!(
                "parameter `{name}` has shape {:?}, expected {:?}",
                other.shape(),
                t.shape()
            )));
        }
    }
    Ok(())
}

fn init_decoder<R: Rng>(
    p: &mut ParamStore<f32>,
    rng: &mut R,
    cfg: &VqVaeConfig,
    prefix: &str,
    mid_blocks: usize,
    out_dim: usize,
) -> Result<()> {
    let s = cfg.stages();
    init_conv(p, rng, &format!("{prefix}.in"), 3, cfg.code_dim, cfg.width(s))?;
    for j in 0..mid_blocks {
        init_res_block(p, rng, &format!("{prefix}.mid{j}"), cfg.width(s))?;
    }
    for i in (0..s).rev() {
        let name = format!("{prefix}.up{i}");
        init_conv(p, rng, &name, 3, cfg.width(i + 1), cfg.width(i))?;
        init_res_block(p, rng, &format!("{name}.res"), cfg.width(i))?;
    }
    Ok(init_conv(p, rng, &format!("{prefix}.out"), 3, cfg.width(0), out_dim)?)
}

pub fn encode_var<'g, F: Real>(cfg: &VqVaeConfig, b: &Bound<'g, F>, x: Var<'g, F>) -> Result<Var<'g, F>> {
    let mut h = conv(b, "enc.in", x, 1)?;
    for i in 0..cfg.stages() {
        let name = format!("enc.down{i}");
        h = conv(b, &name, h.relu(), 2)?;
        h = res_block(b, &format!("{name}.res"), h)?;
    }
    for j in 0..cfg.bottleneck_blocks {
        h = res_block(b, &format!("enc.mid{j}"), h)?;
    }
    Ok(conv(b, "enc.out", h.relu(), 1)?)
}

pub fn decode_var<'g, F: Real>(
    cfg: &VqVaeConfig,
    b: &Bound<'g, F>,
    prefix: &str,
    e_q: Var<'g, F>,
) -> Result<Var<'g, F>> {
    let mid = if prefix == "vel" { 2 } else { cfg.bottleneck_blocks };
    let mut h = conv(b, &format!("{prefix}.in"), e_q, 1)?;
    for j in 0..mid {
        h = res_block(b, &format!("{prefix}.mid{j}"), h)?;
    }
    for i in (0..cfg.stages()).rev() {
        let name = format!("{prefix}.up{i}");
        h = conv(b, &name, h.relu().upsample_rows(2)?, 1)?;
        h = res_block(b, &format!("{name}.res"), h)?;
    }
    Ok(conv(b, &format!("{prefix}.out"), h.relu(), 1)?)
}

/// Velocity head output with its final row dropped (`T − 1` rows).
pub fn velocity_var<'g, F: Real>(cfg: &VqVaeConfig, b: &Bound<'g, F>, e_q: Var<'g, F>) -> Result<Var<'g, F>> {
    let v = decode_var(cfg, b, "vel", e_q)?;
    let t = v.value().rows();
    Ok(v.slice_rows(0, t - 1)?)
}

/// Encoder → quantizer (straight-through) → pose decoder, with the full VQ loss.
pub fn vq_forward<'g, F: Real>(
    cfg: &VqVaeConfig,
    b: &Bound<'g, F>,
    pose: &Tensor<F>,
) -> Result<VqForward<'g, F>> {
    let g = b.var("codebook")?.graph();
    let p = g.constant(pose.clone());
    let e = encode_var(cfg, b, p)?;
    let codebook = b.var("codebook")?;
    let (e_q_val, indices) = quantize(&e.value(), &codebook.value())?;
    let e_q = codebook.embedding(&indices)?;
    let z = e.straight_through(e_q_val)?;
    let p_hat = decode_var(cfg, b, "dec", z)?;
    let (loss, components) = vq_loss(p_hat, p, e, e_q, cfg.weights, cfg.codebook_norm)?;
    Ok(VqForward {
        loss,
        components,
        indices,
        e,
        p_hat,
    })
}

/// Root-centred half-body training tensors for one VQ-VAE.
#[derive(Clone, Debug, PartialEq)]
pub struct VqTrainData {
    /// `[T, 3·joints]` per sequence.
    pub poses: Vec<Tensor<f32>>,
    /// `[T − 1, 3]` root velocity per sequence (lower body only).
    pub velocities: Vec<Tensor<f32>>,
}

impl VqTrainData {
    pub fn from_motions(motions: &[MotionSequence], split: &HalfBodySplit, half: Half) -> Result<Self> {
        let mut poses = Vec::with_capacity(motions.len());
        let mut velocities = Vec::new();
        for m in motions {
            let (centred, vel, _) = normalize_root(m, split.root)?;
            let (upper, lower) = split_half_bodies(&centred, split)?;
            poses.push(match half {
                Half::Upper => upper.to_tensor(),
                Half::Lower => lower.to_tensor(),
            });
            if half == Half::Lower {
                velocities.push(vel.to_tensor());
            }
        }
        Ok(Self { poses, velocities })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqSchedule {
    /// Joint encoder/decoder/codebook steps.
    pub steps: u64,
    /// Velocity-branch steps that follow, with everything else frozen.
    pub velocity_steps: u64,
    pub batch_size: usize,
    /// Training crop length in frames (a multiple of `d`); 0 uses whole sequences.
    pub window: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for VqSchedule {
    fn default() -> Self {
        Self {
            steps: 2000,
            velocity_steps: 500,
            batch_size: 32,
            window: 0,
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VqPhase {
    Codebook,
    Velocity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqStepRecord {
    pub step: u64,
    pub phase: VqPhase,
    pub loss: f64,
    pub components: VqLossComponents,
    /// Distinct codes selected in this batch.
    pub codes_used: usize,
    /// Entries reinitialised after this step.
    pub codes_reset: usize,
}

/// Resumable VQ-VAE training state.
#[derive(Clone, Debug)]
pub struct VqTrainer {
    pub model: VqVaeModel,
    pub schedule: VqSchedule,
    pub opt: Adam<f32>,
    pub velocity_opt: Adam<f32>,
    /// Next step index.
    pub step: u64,
    /// Per-code selection counts since the last dead-code sweep.
    pub epoch_usage: Vec<u64>,
}

impl VqTrainer {
    pub fn new(model: VqVaeModel, schedule: VqSchedule) -> Self {
        let n = model.config.codebook_size;
        Self {
            opt: adam(schedule.lr, schedule.beta1, schedule.beta2),
            velocity_opt: adam(schedule.lr, schedule.beta1, schedule.beta2),
            model,
            schedule,
            step: 0,
            epoch_usage: vec![0; n],
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.schedule.steps
            + if self.model.has_velocity_branch() {
                self.schedule.velocity_steps
            } else {
                0
            }
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.total_steps()
    }

    fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.schedule.batch_size.max(1)).max(1) as u64
    }

    fn batch(&self, data: &VqTrainData, rng: &mut ChaCha8Rng) -> Result<Vec<(Tensor<f32>, Option<Tensor<f32>>)>> {
        let d = self.model.config.downsample;
        let idx = sample_indices(data.len(), self.schedule.batch_size.max(1), rng);
        idx.into_iter()
            .map(|i| {
                let pose = &data.poses[i];
                let frames = pose.rows();
                let win = if self.schedule.window == 0 {
                    self.model.usable_frames(frames)?
                } else {
                    self.schedule.window
                };
                if win % d != 0 || win > frames || win < d {
                    return Err(config(format!(
                        "window {win} must be a multiple of d = {d} within {frames} frames"
                    )));
                }
                let start = if frames > win { rng.random_range(0..=frames - win) } else { 0 };
                let w = pose.cols();
                let p = Tensor::new(&[win, w], pose.data()[start * w..(start + win) * w].to_vec())?;
                let v = match data.velocities.get(i) {
                    Some(v) => Some(Tensor::new(
                        &[win - 1, 3],
                        v.data()[start * 3..(start + win - 1) * 3].to_vec(),
                    )?),
                    None => None,
                };
                Ok((p, v))
            })
            .collect()
    }

    /// Runs one optimisation step.
    pub fn run_step(&mut self, data: &VqTrainData) -> Result<VqStepRecord> {
        if data.is_empty() {
            return Err(precondition("training corpus is empty"));
        }
        if self.model.has_velocity_branch() && data.velocities.len() != data.len() {
            return Err(precondition("lower-body training needs root velocities"));
        }
        let step = self.step;
        let mut rng = step_rng(self.schedule.seed, step);
        let batch = self.batch(data, &mut rng)?;
        let record = if step < self.schedule.steps {
            self.codebook_step(step, &batch, data.len(), &mut rng)?
        } else {
            self.velocity_step(step, &batch)?
        };
        self.step += 1;
        Ok(record)
    }

    fn codebook_step(
        &mut self,
        step: u64,
        batch: &[(Tensor<f32>, Option<Tensor<f32>>)],
        corpus_len: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<VqStepRecord> {
        let cfg = self.model.config.clone();
        let g = Graph::new();
        let b = self.model.params.bind(&g, |name| !name.starts_with("vel."));
        let mut total: Option<Var<f32>> = None;
        let mut comps = VqLossComponents::default();
        let mut used = vec![false; cfg.codebook_size];
        let mut features = Vec::new();
        for (pose, _) in batch {
            let fw = vq_forward(&cfg, &b, pose)?;
            total = Some(match total {
                Some(t) => t.add(fw.loss)?,
                None => fw.loss,
            });
            accumulate(&mut comps, &fw.components);
            for &i in &fw.indices {
                used[i] = true;
                self.epoch_usage[i] += 1;
                self.model.usage[i] += 1;
            }
            let e = fw.e.value();
            features.extend((0..e.rows()).map(|r| e.row(r).to_vec()));
        }
        let scale = 1.0 / batch.len() as f32;
        let loss = total.expect("nonempty batch").scale(scale);
        scale_components(&mut comps, scale as f64);
        check_loss("vqvae", step, comps.total)?;
        let grads = b.gradients(&g.backward(loss)?);
        drop(b);
        apply("vqvae", step, &mut self.opt, &mut self.model.params, &grads)?;

        let mut reset = 0;
        if (step + 1) % self.steps_per_epoch(corpus_len) == 0 {
            if cfg.dead_code_reset {
                let cb = self.model.params.get_mut("codebook")?;
                let c = cb.cols();
                for j in 0..cfg.codebook_size {
                    if self.epoch_usage[j] == 0 {
                        let src = &features[rng.random_range(0..features.len())];
                        cb.data_mut()[j * c..(j + 1) * c].copy_from_slice(src);
                        reset += 1;
                    }
                }
            }
            self.epoch_usage.iter_mut().for_each(|u| *u = 0);
        }
        Ok(VqStepRecord {
            step,
            phase: VqPhase::Codebook,
            loss: comps.total,
            components: comps,
            codes_used: used.iter().filter(|&&u| u).count(),
            codes_reset: reset,
        })
    }

    fn velocity_step(&mut self, step: u64, batch: &[(Tensor<f32>, Option<Tensor<f32>>)]) -> Result<VqStepRecord> {
        let cfg = self.model.config.clone();
        let g = Graph::new();
        let b = self.model.params.bind(&g, |name| name.starts_with("vel."));
        let mut total: Option<Var<f32>> = None;
        let mut comps = VqLossComponents::default();
        for (pose, vel) in batch {
            let vel = vel.as_ref().expect("lower-body batch carries velocities");
            let e = encode_var(&cfg, &b, g.constant(pose.clone()))?;
            let (e_q, _) = quantize(&e.value(), &b.var("codebook")?.value())?;
            let v_hat = velocity_var(&cfg, &b, g.constant(e_q))?;
            let (rec, parts) =
                reconstruction_loss(v_hat, g.constant(vel.clone()), cfg.weights.alpha1, cfg.weights.alpha2)?;
            total = Some(match total {
                Some(t) => t.add(rec)?,
                None => rec,
            });
            comps.position += parts[0];
            comps.velocity += parts[1];
            comps.acceleration += parts[2];
            comps.reconstruction += rec.item() as f64;
            comps.total += rec.item() as f64;
        }
        let scale = 1.0 / batch.len() as f32;
        let loss = total.expect("nonempty batch").scale(scale);
        scale_components(&mut comps, scale as f64);
        check_loss("velocity", step, comps.total)?;
        let grads = b.gradients(&g.backward(loss)?);
        drop(b);
        apply("velocity", step, &mut self.velocity_opt, &mut self.model.params, &grads)?;
        Ok(VqStepRecord {
            step,
            phase: VqPhase::Velocity,
            loss: comps.total,
            components: comps,
            codes_used: 0,
            codes_reset: 0,
        })
    }

    /// Runs the remaining steps; `on_step` sees every record as it is produced.
    pub fn train(
        &mut self,
        data: &VqTrainData,
        mut on_step: impl FnMut(&VqStepRecord),
    ) -> Result<Vec<VqStepRecord>> {
        let mut curve = Vec::new();
        while !self.is_done() {
            let rec = self.run_step(data)?;
            on_step(&rec);
            curve.push(rec);
        }
        Ok(curve)
    }
}

fn accumulate(acc: &mut VqLossComponents, c: &VqLossComponents) {
    acc.position += c.position;
    acc.velocity += c.velocity;
    acc.acceleration += c.acceleration;
    acc.reconstruction += c.reconstruction;
    acc.codebook += c.codebook;
    acc.commitment += c.commitment;
    acc.total += c.total;
}

fn scale_components(c: &mut VqLossComponents, s: f64) {
    for v in [
        &mut c.position,
        &mut c.velocity,
        &mut c.acceleration,
        &mut c.reconstruction,
        &mut c.codebook,
        &mut c.commitment,
        &mut c.total,
    ] {
        *v *= s;
    }
}

/// Trains a fresh copy of `model` to completion and returns it with its loss curve.
pub fn train_vqvae(
    model: VqVaeModel,
    data: &VqTrainData,
    schedule: VqSchedule,
) -> Result<(VqVaeModel, Vec<VqStepRecord>)> {
    let mut trainer = VqTrainer::new(model, schedule);
    let curve = trainer.train(data, |_| {})?;
    Ok((trainer.model, curve))
}

/// Paired upper/lower code indices for one sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeSequence {
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
    pub downsample: usize,
    pub fps: f32,
}

impl CodeSequence {
    pub fn new(upper: Vec<usize>, lower: Vec<usize>, downsample: usize, fps: f32) -> Result<Self> {
        if upper.len() != lower.len() {
            return Err(precondition(format!(
                "upper has {} codes, lower has {}",
                upper.len(),
                lower.len()
            )));
        }
        Ok(Self {
            upper,
            lower,
            downsample,
            fps,
        })
    }

    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    pub fn validate(&self, codebook_size: usize) -> Result<()> {
        match self.upper.iter().chain(&self.lower).find(|&&c| c >= codebook_size) {
            Some(c) => Err(precondition(format!("code {c} outside [0, {codebook_size})"))),
            None => Ok(()),
        }
    }
}

fn check_pair(upper: &VqVaeModel, lower: &VqVaeModel, split: &HalfBodySplit) -> Result<()> {
    if upper.half != Half::Upper || lower.half != Half::Lower {
        return Err(precondition("models must be (upper, lower)"));
    }
    if upper.config.downsample != lower.config.downsample {
        return Err(precondition(format!(
            "downsample rates differ: {} vs {}",
            upper.config.downsample, lower.config.downsample
        )));
    }
    if upper.joints != split.upper.len() || lower.joints != split.lower.len() {
        return Err(precondition(format!(
            "models cover ({}, {}) joints, split has ({}, {})",
            upper.joints,
            lower.joints,
            split.upper.len(),
            split.lower.len()
        )));
    }
    Ok(())
}

/// Codes for a full-body sequence (root-centred first).
pub fn encode_corpus_to_codes(
    upper: &VqVaeModel,
    lower: &VqVaeModel,
    split: &HalfBodySplit,
    motion: &MotionSequence,
) -> Result<CodeSequence> {
    check_pair(upper, lower, split)?;
    let (centred, _, _) = normalize_root(motion, split.root)?;
    let (u, l) = split_half_bodies(&centred, split)?;
    CodeSequence::new(
        upper.encode_codes(&u.to_tensor())?,
        lower.encode_codes(&l.to_tensor())?,
        upper.config.downsample,
        motion.fps(),
    )
}

/// Full-body motion from paired codes: both poses are decoded, merged, and
/// the root trajectory is integrated from the predicted velocity starting at `start_root`.
pub fn decode_code_sequence(
    upper: &VqVaeModel,
    lower: &VqVaeModel,
    split: &HalfBodySplit,
    codes: &CodeSequence,
    skeleton_id: &str,
    start_root: [f32; 3],
) -> Result<MotionSequence> {
    check_pair(upper, lower, split)?;
    let pu = upper.decode_codes(&codes.upper)?;
    let e_l = lower.lookup(&codes.lower)?;
    let pl = lower.decode_pose(&e_l)?;
    let vel = GlobalVelocity::from_tensor(&lower.decode_velocity(&e_l)?)?;
    let fps = codes.fps;
    let mu = MotionSequence::from_tensor(&pu, fps, "upper")?;
    let ml = MotionSequence::from_tensor(&pl, fps, "lower")?;
    let merged = merge_half_bodies(&mu, &ml, split, skeleton_id)?;
    apply_root(&merged, &integrate_root(&vel, start_root))
}
