//! Cross-conditional motion transformer over paired pose codes.
//!
//! The input is the concatenation `[m; u; l]` of projected music features and
//! upper/lower code embeddings (`3·L` rows for a window of `L` code steps).
//! Row `t` of the upper and lower segments scores the codes of step `t + 1`.

use choreo_autograd::{Adam, Bound, Graph, ParamStore, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, precondition, Result};
use crate::layers::{init_layer_norm, layer_norm, linear};
use crate::music::CodeStepFeatures;
use crate::training::{adam, apply, check_loss, sample_indices, step_rng};
use crate::vqvae::{check_same_layout, CodeSequence};

/// Additive value for disallowed attention logits.
pub const MASKED_LOGIT: f64 = -1e9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Every segment sees all three segments up to the same time step.
    #[default]
    CrossConditional,
    /// Upper and lower rows never see each other (both still see music).
    Independent,
}

/// Denominator of the attention logits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScale {
    /// `sqrt(channels)`.
    #[default]
    Model,
    /// `sqrt(channels / heads)`.
    Head,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GptConfig {
    pub layers: usize,
    pub heads: usize,
    pub channels: usize,
    pub dropout: f64,
    /// Code steps per window `T'`.
    pub block_size: usize,
    pub codebook_size: usize,
    pub feature_dim: usize,
    #[serde(default)]
    pub mask: MaskKind,
    #[serde(default)]
    pub attention_scale: AttentionScale,
}

impl Default for GptConfig {
    fn default() -> Self {
        Self {
            layers: 12,
            heads: 12,
            channels: 768,
            dropout: 0.1,
            block_size: 29,
            codebook_size: 512,
            feature_dim: crate::music::DEFAULT_FEATURE_DIM,
            mask: MaskKind::CrossConditional,
            attention_scale: AttentionScale::Model,
        }
    }
}

impl GptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(config(format!(
                "channels {} not divisible by heads {}",
                self.channels, self.heads
            )));
        }
        if self.block_size < 2 {
            return Err(config("block_size must be >= 2"));
        }
        if self.layers == 0 || self.codebook_size < 2 || self.feature_dim == 0 {
            return Err(config("layers, codebook_size and feature_dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(config("dropout must be in [0, 1)"));
        }
        Ok(())
    }

    fn scale_dim(&self) -> usize {
        match self.attention_scale {
            AttentionScale::Model => self.channels,
            AttentionScale::Head => self.channels / self.heads,
        }
    }
}

/// Boolean attention mask over `3·T'` positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CrossConditionalMask {
    pub steps: usize,
    pub allowed: Vec<bool>,
}

impl CrossConditionalMask {
    pub fn size(&self) -> usize {
        3 * self.steps
    }

    pub fn is_allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.size() + j]
    }

    /// `0` where allowed, [`MASKED_LOGIT`] elsewhere.
    pub fn additive<F: Real>(&self) -> Tensor<F> {
        let n = self.size();
        let data = self
            .allowed
            .iter()
            .map(|&a| if a { F::zero() } else { F::lit(MASKED_LOGIT) })
            .collect();
        Tensor::new(&[n, n], data).expect("square mask")
    }
}

/// Row `b_i·T' + t_i` may attend to column `b_j·T' + t_j` iff `t_j <= t_i`.
pub fn build_mask(steps: usize) -> CrossConditionalMask {
    build_mask_kind(steps, MaskKind::CrossConditional)
}

pub fn build_mask_kind(steps: usize, kind: MaskKind) -> CrossConditionalMask {
    let n = 3 * steps;
    let mut allowed = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let (bi, ti) = (i / steps.max(1), i % steps.max(1));
            let (bj, tj) = (j / steps.max(1), j % steps.max(1));
            let segment_ok = match kind {
                MaskKind::CrossConditional => true,
                MaskKind::Independent => bj == 0 || bi == bj,
            };
            allowed[i * n + j] = tj <= ti && segment_ok;
        }
    }
    CrossConditionalMask { steps, allowed }
}

/// `softmax((q kᵀ + mask) / sqrt(scale_dim)) v`.
pub fn attention<'g, F: Real>(
    q: Var<'g, F>,
    k: Var<'g, F>,
    v: Var<'g, F>,
    mask: &Tensor<F>,
    scale_dim: usize,
) -> Result<Var<'g, F>> {
    let logits = q.matmul(k.transpose()?)?.add_const(mask)?;
    let w = logits.scale(F::one() / F::lit((scale_dim as f64).sqrt())).softmax_rows();
    Ok(w.matmul(v)?)
}

fn init_normal(store: &mut ParamStore<f32>, rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) -> Result<()> {
    Ok(store.insert(name, Tensor::randn(shape, 0.02, rng))?)
}

fn init_linear_normal(
    store: &mut ParamStore<f32>,
    rng: &mut ChaCha8Rng,
    name: &str,
    cin: usize,
    cout: usize,
    bias: bool,
) -> Result<()> {
    init_normal(store, rng, &format!("{name}.w"), &[cin, cout])?;
    if bias {
        store.insert(format!("{name}.b"), Tensor::zeros(&[cout]))?;
    }
    Ok(())
}

/// Parameters of one pre-LN transformer block named `prefix`.
pub fn init_block(store: &mut ParamStore<f32>, rng: &mut ChaCha8Rng, prefix: &str, c: usize) -> Result<()> {
    init_layer_norm(store, &format!("{prefix}.ln1"), c)?;
    init_linear_normal(store, rng, &format!("{prefix}.attn.qkv"), c, 3 * c, true)?;
    init_linear_normal(store, rng, &format!("{prefix}.attn.proj"), c, c, true)?;
    init_layer_norm(store, &format!("{prefix}.ln2"), c)?;
    init_linear_normal(store, rng, &format!("{prefix}.mlp.fc"), c, 4 * c, true)?;
    init_linear_normal(store, rng, &format!("{prefix}.mlp.proj"), 4 * c, c, true)
}

/// Dropout state for a forward pass; `None` means evaluation mode.
pub type DropoutRng<'a> = Option<&'a mut ChaCha8Rng>;

fn maybe_dropout<'g, F: Real>(x: Var<'g, F>, p: f64, rng: &mut DropoutRng<'_>) -> Result<Var<'g, F>> {
    match rng {
        Some(r) if p > 0.0 => Ok(x.dropout(p, true, &mut **r)?),
        _ => Ok(x),
    }
}

/// LN → masked multi-head attention → residual → LN → GELU MLP → residual.
pub fn block<'g, F: Real>(
    cfg: &GptConfig,
    b: &Bound<'g, F>,
    prefix: &str,
    x: Var<'g, F>,
    mask: &Tensor<F>,
    rng: &mut DropoutRng<'_>,
) -> Result<Var<'g, F>> {
    let c = cfg.channels;
    let hd = c / cfg.heads;
    let h = layer_norm(b, &format!("{prefix}.ln1"), x)?;
    let qkv = linear(b, &format!("{prefix}.attn.qkv"), h)?;
    let mut heads = Vec::with_capacity(cfg.heads);
    for i in 0..cfg.heads {
        let q = qkv.slice_cols(i * hd, (i + 1) * hd)?;
        let k = qkv.slice_cols(c + i * hd, c + (i + 1) * hd)?;
        let v = qkv.slice_cols(2 * c + i * hd, 2 * c + (i + 1) * hd)?;
        heads.push(attention(q, k, v, mask, cfg.scale_dim())?);
    }
    let att = if heads.len() == 1 { heads[0] } else { Var::concat_cols(&heads)? };
    let att = linear(b, &format!("{prefix}.attn.proj"), att)?;
    let x = x.add(maybe_dropout(att, cfg.dropout, rng)?)?;
    let h = layer_norm(b, &format!("{prefix}.ln2"), x)?;
    let h = linear(b, &format!("{prefix}.mlp.fc"), h)?.gelu();
    let h = linear(b, &format!("{prefix}.mlp.proj"), h)?;
    Ok(x.add(maybe_dropout(h, cfg.dropout, rng)?)?)
}

/// Logits of one window: rows `[L, 2L)` score upper codes, `[2L, 3L)` lower codes.
#[derive(Clone, Debug, PartialEq)]
pub struct GptOutput {
    pub logits: Tensor<f32>,
    pub steps: usize,
}

impl GptOutput {
    pub fn upper_logits(&self, t: usize) -> &[f32] {
        self.logits.row(self.steps + t)
    }

    pub fn lower_logits(&self, t: usize) -> &[f32] {
        self.logits.row(2 * self.steps + t)
    }

    pub fn probabilities(&self) -> Tensor<f32> {
        let (r, c) = (self.logits.rows(), self.logits.cols());
        let data = choreo_autograd::kernels::softmax_rows(self.logits.data(), r, c);
        Tensor::new(&[r, c], data).expect("same shape")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GptModel {
    pub config: GptConfig,
    pub params: ParamStore<f32>,
}

impl GptModel {
    pub fn new(config: GptConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let (n, c) = (config.codebook_size, config.channels);
        init_normal(&mut p, &mut rng, "emb.u", &[n, c])?;
        init_normal(&mut p, &mut rng, "emb.l", &[n, c])?;
        init_linear_normal(&mut p, &mut rng, "music", config.feature_dim, c, true)?;
        init_normal(&mut p, &mut rng, "pos", &[3 * config.block_size, c])?;
        for i in 0..config.layers {
            init_block(&mut p, &mut rng, &format!("blocks.{i}"), c)?;
        }
        init_layer_norm(&mut p, "ln_f", c)?;
        init_linear_normal(&mut p, &mut rng, "head", c, n, false)?;
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: GptConfig, params: ParamStore<f32>) -> Result<Self> {
        let template = Self::new(config, 0)?;
        check_same_layout(&template.params, &params)?;
        Ok(Self {
            config: template.config,
            params,
        })
    }

    /// Evaluation-mode logits for one window.
    pub fn forward(&self, music: &Tensor<f32>, upper: &[usize], lower: &[usize]) -> Result<GptOutput> {
        let g = Graph::new();
        let b = self.params.bind(&g, |_| false);
        let logits = forward_var(&self.config, &b, music, upper, lower, &mut None)?;
        Ok(GptOutput {
            logits: (*logits.value()).clone(),
            steps: upper.len(),
        })
    }

    /// Greedy autoregressive generation of `length` code pairs starting from
    /// `start`. Step `k + 1` is predicted from the most recent `T'` code
    /// pairs and music rows `k + 2 − w ..= k + 1` (window-relative positions).
    pub fn generate(&self, music: &CodeStepFeatures, start: (usize, usize), length: usize) -> Result<CodeSequence> {
        self.generate_with(music, start, length, None)
    }

    /// As [`GptModel::generate`]; with `sampling = Some((temperature, rng))` codes are drawn
    /// from the tempered distribution instead of taking the argmax.
    pub fn generate_with(
        &self,
        music: &CodeStepFeatures,
        start: (usize, usize),
        length: usize,
        mut sampling: Option<(f64, &mut ChaCha8Rng)>,
    ) -> Result<CodeSequence> {
        let n = self.config.codebook_size;
        if length == 0 {
            return Err(precondition("generation length must be >= 1"));
        }
        if music.len() < length {
            return Err(precondition(format!(
                "music covers {} code steps, {length} requested",
                music.len()
            )));
        }
        if start.0 >= n || start.1 >= n {
            return Err(precondition(format!("start codes {start:?} outside [0, {n})")));
        }
        let mut up = vec![start.0];
        let mut lo = vec![start.1];
        while up.len() < length {
            let k = up.len() - 1;
            let w = up.len().min(self.config.block_size);
            let s = k + 1 - w;
            let m = music.rows(s + 1, k + 2)?;
            let out = self.forward(&m, &up[s..], &lo[s..])?;
            let pick = |row: &[f32], sampling: &mut Option<(f64, &mut ChaCha8Rng)>| match sampling {
                Some((temp, rng)) => sample(row, *temp, rng),
                None => choreo_autograd::kernels::argmax(row),
            };
            let nu = pick(out.upper_logits(w - 1), &mut sampling);
            let nl = pick(out.lower_logits(w - 1), &mut sampling);
            up.push(nu);
            lo.push(nl);
        }
        CodeSequence::new(up, lo, music.step, 0.0)
    }
}

fn sample(logits: &[f32], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let t = temperature.max(1e-6);
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
    let w: Vec<f64> = logits.iter().map(|&l| ((l as f64 - max) / t).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.len() - 1
}

/// Input embedding `[m; u; l] + pos` for a window of `L = upper.len()` steps.
pub fn embed<'g, F: Real>(
    cfg: &GptConfig,
    b: &Bound<'g, F>,
    music: &Tensor<F>,
    upper: &[usize],
    lower: &[usize],
) -> Result<Var<'g, F>> {
    let l = upper.len();
    if l == 0 || l != lower.len() {
        return Err(precondition(format!(
            "code lengths must match and be nonzero, got {} and {}",
            l,
            lower.len()
        )));
    }
    if l > cfg.block_size {
        return Err(precondition(format!(
            "window of {l} steps exceeds block size {}",
            cfg.block_size
        )));
    }
    if music.shape() != [l, cfg.feature_dim] {
        return Err(precondition(format!(
            "music window must be [{l}, {}], got {:?}",
            cfg.feature_dim,
            music.shape()
        )));
    }
    if let Some(&c) = upper.iter().chain(lower).find(|&&c| c >= cfg.codebook_size) {
        return Err(precondition(format!("code {c} outside [0, {})", cfg.codebook_size)));
    }
    let g = b.var("pos")?.graph();
    let m = linear(b, "music", g.constant(music.clone()))?;
    let u = b.var("emb.u")?.embedding(upper)?;
    let lo = b.var("emb.l")?.embedding(lower)?;
    let positions: Vec<usize> = (0..3)
        .flat_map(|seg| (0..l).map(move |t| seg * cfg.block_size + t))
        .collect();
    let pos = b.var("pos")?.embedding(&positions)?;
    Ok(Var::concat_rows(&[m, u, lo])?.add(pos)?)
}

/// Runs blocks `range` of the stack named `prefix` (e.g. `"blocks"`).
pub fn run_blocks<'g, F: Real>(
    cfg: &GptConfig,
    b: &Bound<'g, F>,
    prefix: &str,
    range: std::ops::Range<usize>,
    mut x: Var<'g, F>,
    rng: &mut DropoutRng<'_>,
) -> Result<Var<'g, F>> {
    let steps = x.value().rows() / 3;
    let mask = build_mask_kind(steps, cfg.mask).additive::<F>();
    for i in range {
        x = block(cfg, b, &format!("{prefix}.{i}"), x, &mask, rng)?;
    }
    Ok(x)
}

pub fn head<'g, F: Real>(b: &Bound<'g, F>, x: Var<'g, F>) -> Result<Var<'g, F>> {
    Ok(linear(b, "head", layer_norm(b, "ln_f", x)?)?)
}

/// Full logits `[3L, N]`.
pub fn forward_var<'g, F: Real>(
    cfg: &GptConfig,
    b: &Bound<'g, F>,
    music: &Tensor<F>,
    upper: &[usize],
    lower: &[usize],
    rng: &mut DropoutRng<'_>,
) -> Result<Var<'g, F>> {
    let mut x = embed(cfg, b, music, upper, lower)?;
    x = maybe_dropout(x, cfg.dropout, rng)?;
    let x = run_blocks(cfg, b, "blocks", 0..cfg.layers, x, rng)?;
    head(b, x)
}

/// Mean over steps of the summed upper and lower cross-entropies.
pub fn ce_loss<'g, F: Real>(
    logits: Var<'g, F>,
    target_upper: &[usize],
    target_lower: &[usize],
) -> Result<Var<'g, F>> {
    let l = target_upper.len();
    if logits.value().rows() != 3 * l || target_lower.len() != l {
        return Err(precondition(format!(
            "logits {:?} do not match {l} targets",
            logits.shape()
        )));
    }
    let cu = logits.slice_rows(l, 2 * l)?.cross_entropy_rows(target_upper)?;
    let cl = logits.slice_rows(2 * l, 3 * l)?.cross_entropy_rows(target_lower)?;
    Ok(cu.add(cl)?.mean())
}

/// Per-step `CE(upper) + CE(lower)` for steps `range` of a `[3L, N]` logit block.
pub fn ce_loss_rows<'g, F: Real>(
    logits: Var<'g, F>,
    steps: usize,
    range: std::ops::Range<usize>,
    target_upper: &[usize],
    target_lower: &[usize],
) -> Result<Var<'g, F>> {
    let n = range.len();
    if logits.value().rows() != 3 * steps || range.end > steps || target_upper.len() != n || target_lower.len() != n {
        return Err(precondition(format!(
            "logits {:?} do not match steps {range:?} of {steps}",
            logits.shape()
        )));
    }
    let cu = logits
        .slice_rows(steps + range.start, steps + range.end)?
        .cross_entropy_rows(target_upper)?;
    let cl = logits
        .slice_rows(2 * steps + range.start, 2 * steps + range.end)?
        .cross_entropy_rows(target_lower)?;
    Ok(cu.add(cl)?)
}

/// Code sequences with their pooled music, aligned step for step.
#[derive(Clone, Debug, PartialEq)]
pub struct GptTrainData {
    pub codes: Vec<CodeSequence>,
    pub music: Vec<CodeStepFeatures>,
}

impl GptTrainData {
    pub fn new(codes: Vec<CodeSequence>, music: Vec<CodeStepFeatures>) -> Result<Self> {
        if codes.len() != music.len() {
            return Err(precondition(format!(
                "{} code sequences but {} music tracks",
                codes.len(),
                music.len()
            )));
        }
        for (i, (c, m)) in codes.iter().zip(&music).enumerate() {
            if c.len() < 2 {
                return Err(precondition(format!("sequence {i} has fewer than 2 code steps")));
            }
            if m.len() < c.len() {
                return Err(precondition(format!(
                    "sequence {i}: music covers {} steps, codes {}",
                    m.len(),
                    c.len()
                )));
            }
        }
        Ok(Self { codes, music })
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    /// Training window at `start`: inputs `p[s..s+L]`, music rows `s+1..=s+L`, targets `p[s+1..=s+L]`.
    pub fn window(&self, seq: usize, start: usize, len: usize) -> Result<GptWindow> {
        let c = &self.codes[seq];
        if start + len + 1 > c.len() {
            return Err(precondition(format!(
                "window [{start}, {}] exceeds {} codes",
                start + len,
                c.len()
            )));
        }
        Ok(GptWindow {
            music: self.music[seq].rows(start + 1, start + len + 1)?,
            upper: c.upper[start..start + len].to_vec(),
            lower: c.lower[start..start + len].to_vec(),
            target_upper: c.upper[start + 1..start + len + 1].to_vec(),
            target_lower: c.lower[start + 1..start + len + 1].to_vec(),
        })
    }

    /// Every window of length `min(T', len − 1)` at each valid start.
    pub fn all_windows(&self, block_size: usize) -> Result<Vec<GptWindow>> {
        let mut out = Vec::new();
        for (i, c) in self.codes.iter().enumerate() {
            let len = block_size.min(c.len() - 1);
            for s in 0..c.len() - len {
                out.push(self.window(i, s, len)?);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GptWindow {
    pub music: Tensor<f32>,
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
    pub target_upper: Vec<usize>,
    pub target_lower: Vec<usize>,
}

/// Fraction of upper and lower next-code predictions that hit their targets.
pub fn next_code_accuracy(model: &GptModel, windows: &[GptWindow]) -> Result<(f64, f64)> {
    let (mut hu, mut hl, mut n) = (0usize, 0usize, 0usize);
    for w in windows {
        let out = model.forward(&w.music, &w.upper, &w.lower)?;
        for t in 0..w.upper.len() {
            hu += (choreo_autograd::kernels::argmax(out.upper_logits(t)) == w.target_upper[t]) as usize;
            hl += (choreo_autograd::kernels::argmax(out.lower_logits(t)) == w.target_lower[t]) as usize;
            n += 1;
        }
    }
    if n == 0 {
        return Err(precondition("no windows to evaluate"));
    }
    Ok((hu as f64 / n as f64, hl as f64 / n as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GptSchedule {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Fraction of `steps` after which the learning rate is multiplied by `decay_factor`.
    pub decay_at: f64,
    pub decay_factor: f64,
    pub seed: u64,
}

impl Default for GptSchedule {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 32,
            lr: 3e-4,
            beta1: 0.5,
            beta2: 0.99,
            decay_at: 0.5,
            decay_factor: 0.1,
            seed: 0,
        }
    }
}

impl GptSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        if (step as f64) >= self.decay_at * self.steps as f64 {
            self.lr * self.decay_factor
        } else {
            self.lr
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GptStepRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

/// Resumable GPT training state.
#[derive(Clone, Debug)]
pub struct GptTrainer {
    pub model: GptModel,
    pub schedule: GptSchedule,
    pub opt: Adam<f32>,
    pub step: u64,
}

impl GptTrainer {
    pub fn new(model: GptModel, schedule: GptSchedule) -> Self {
        Self {
            opt: adam(schedule.lr, schedule.beta1, schedule.beta2),
            model,
            schedule,
            step: 0,
        }
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.schedule.steps
    }

    pub fn run_step(&mut self, data: &GptTrainData) -> Result<GptStepRecord> {
        if data.is_empty() {
            return Err(precondition("training corpus is empty"));
        }
        let cfg = self.model.config.clone();
        let step = self.step;
        let mut rng = step_rng(self.schedule.seed, step);
        let bs = self.schedule.batch_size.max(1);
        let seqs: Vec<usize> = if bs >= data.len() {
            sample_indices(data.len(), data.len(), &mut rng)
        } else {
            (0..bs).map(|_| rng.random_range(0..data.len())).collect()
        };
        let g = Graph::new();
        let b = self.model.params.bind(&g, |_| true);
        let mut total: Option<Var<f32>> = None;
        for &i in &seqs {
            let len = cfg.block_size.min(data.codes[i].len() - 1);
            let start = rng.random_range(0..=data.codes[i].len() - 1 - len);
            let w = data.window(i, start, len)?;
            let logits = forward_var(&cfg, &b, &w.music, &w.upper, &w.lower, &mut Some(&mut rng))?;
            let loss = ce_loss(logits, &w.target_upper, &w.target_lower)?;
            total = Some(match total {
                Some(t) => t.add(loss)?,
                None => loss,
            });
        }
        let loss = total.expect("nonempty batch").scale(1.0 / seqs.len() as f32);
        let value = loss.item() as f64;
        check_loss("gpt", step, value)?;
        let grads = b.gradients(&g.backward(loss)?);
        drop(b);
        let lr = self.schedule.lr_at(step);
        self.opt.config.lr = lr;
        apply("gpt", step, &mut self.opt, &mut self.model.params, &grads)?;
        self.step += 1;
        Ok(GptStepRecord { step, loss: value, lr })
    }

    pub fn train(
        &mut self,
        data: &GptTrainData,
        mut on_step: impl FnMut(&GptStepRecord),
    ) -> Result<Vec<GptStepRecord>> {
        let mut curve = Vec::new();
        while !self.is_done() {
            let r = self.run_step(data)?;
            on_step(&r);
            curve.push(r);
        }
        Ok(curve)
    }
}

pub fn train_gpt(model: GptModel, data: &GptTrainData, schedule: GptSchedule) -> Result<(GptModel, Vec<GptStepRecord>)> {
    let mut t = GptTrainer::new(model, schedule);
    let curve = t.train(data, |_| {})?;
    Ok((t.model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy_config() -> GptConfig {
        GptConfig {
            layers: 2,
            heads: 2,
            channels: 8,
            dropout: 0.0,
            block_size: 4,
            codebook_size: 5,
            feature_dim: 3,
            ..Default::default()
        }
    }

    #[test]
    fn mask_examples() {
        let m = build_mask(1);
        assert!(m.allowed.iter().all(|&a| a));
        let m = build_mask(2);
        // order m0 m1 u0 u1 l0 l1
        let row_u0: Vec<bool> = (0..6).map(|j| m.is_allowed(2, j)).collect();
        assert_eq!(row_u0, vec![true, false, true, false, true, false]);
        assert!((0..6).all(|j| m.is_allowed(3, j)));
        let ind = build_mask_kind(2, MaskKind::Independent);
        assert!(!ind.is_allowed(3, 4) && ind.is_allowed(3, 0) && ind.is_allowed(3, 2));
        assert!(!ind.is_allowed(0, 2));
    }

    #[test]
    fn mask_repeats_over_segments() {
        let m = build_mask(3);
        for (bi, bj) in [(0, 1), (1, 2), (2, 0)] {
            for ti in 0..3 {
                for tj in 0..3 {
                    assert_eq!(m.is_allowed(bi * 3 + ti, bj * 3 + tj), m.is_allowed(ti, tj));
                }
            }
        }
    }

    #[test]
    fn attention_examples() {
        let g = Graph::<f64>::new();
        let q = g.constant(Tensor::zeros(&[2, 2]));
        let k = g.constant(Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap());
        let v = g.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 3.0, 2.0]).unwrap());
        let open = Tensor::zeros(&[2, 2]);
        let out = attention(q, k, v, &open, 4).unwrap().value();
        assert_eq!(out.data(), &[2.0, 1.0, 2.0, 1.0]);
        let causal = Tensor::from_f64(&[2, 2], &[0.0, MASKED_LOGIT, 0.0, 0.0]).unwrap();
        let q = g.constant(Tensor::from_f64(&[2, 2], &[0.3, -0.1, 0.2, 0.5]).unwrap());
        let out = attention(q, k, v, &causal, 4).unwrap().value();
        assert_eq!(out.row(0), &[1.0, 0.0]);
        let v2 = g.constant(Tensor::from_f64(&[2, 2], &[1.0, 0.0, 9.0, -7.0]).unwrap());
        let out2 = attention(q, k, v2, &causal, 4).unwrap().value();
        assert_eq!(out2.row(0), out.row(0));
    }

    #[test]
    fn uniform_logits_give_two_ln_n() {
        let g = Graph::<f64>::new();
        let logits = g.constant(Tensor::zeros(&[3 * 4, 512]));
        let loss = ce_loss(logits, &[1, 2, 3, 4], &[5, 6, 7, 8]).unwrap();
        assert!((loss.item() - 2.0 * 512f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn probabilities_are_distributions() {
        let m = GptModel::new(toy_config(), 1).unwrap();
        let music = Tensor::uniform(&[3, 3], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let out = m.forward(&music, &[0, 1, 2], &[3, 4, 0]).unwrap();
        assert_eq!(out.logits.shape(), &[9, 5]);
        let p = out.probabilities();
        for r in 0..9 {
            let s: f32 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        assert!(m.forward(&Tensor::zeros(&[5, 3]), &[0; 5], &[0; 5]).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_starts_with_the_seed_pair() {
        let m = GptModel::new(toy_config(), 4).unwrap();
        let music = CodeStepFeatures {
            features: Tensor::uniform(&[10, 3], -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(9)),
            step: 8,
        };
        let one = m.generate(&music, (2, 3), 1).unwrap();
        assert_eq!((one.upper.clone(), one.lower.clone()), (vec![2], vec![3]));
        let a = m.generate(&music, (2, 3), 10).unwrap();
        let b = m.generate(&music, (2, 3), 10).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(m.generate(&music, (2, 3), 11).is_err());
    }
}
