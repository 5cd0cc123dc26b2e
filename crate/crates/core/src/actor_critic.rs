//! Actor-critic finetuning of the motion GPT with beat-align and half-body
//! consistency rewards computed on decoded motion.

use choreo_autograd::{Adam, Graph, ParamStore, Tensor, Var};
use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, precondition, Result};
use crate::gpt::{ce_loss_rows, embed, head, init_block, run_blocks, GptConfig, GptModel};
use crate::layers::{init_layer_norm, layer_norm, linear};
use crate::metrics::{beat_align_score, cross, extract_dance_beats, DanceBeatConfig};
use crate::motion::{HalfBodySplit, MotionSequence, Skeleton};
use crate::music::CodeStepFeatures;
use crate::training::{adam, check_loss, apply, step_rng};
use crate::vqvae::{decode_code_sequence, CodeSequence, VqVaeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub gamma_b: f64,
    pub gamma_c: f64,
    #[serde(default)]
    pub dance_beats: DanceBeatConfig,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            gamma_b: 5.0,
            gamma_c: 1.0,
            dance_beats: DanceBeatConfig::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_b >= 0.0 && self.gamma_c >= 0.0) {
            return Err(config(format!(
                "reward weights must be >= 0, got gamma_b = {}, gamma_c = {}",
                self.gamma_b, self.gamma_c
            )));
        }
        Ok(())
    }
}

/// `+1`, or `−1` for each window `[t·d, (t+1)·d)` that holds a music beat but no dance beat.
pub fn beat_align_reward(dance: &[usize], music: &[usize], d: usize, steps: usize) -> Vec<f32> {
    let in_window = |beats: &[usize], t: usize| beats.iter().any(|&b| b >= t * d && b < (t + 1) * d);
    (0..steps)
        .map(|t| if in_window(music, t) && !in_window(dance, t) { -1.0 } else { 1.0 })
        .collect()
}

/// Agreement of two unit facing directions in the x-z plane: their dot
/// product when it is negative, otherwise 1.
pub fn facing_agreement(upper: [f64; 2], lower: [f64; 2]) -> f64 {
    let dot = upper[0] * lower[0] + upper[1] * lower[1];
    if dot < 0.0 {
        dot
    } else {
        1.0
    }
}

fn facing(a: [f64; 3], b: [f64; 3]) -> Option<[f64; 2]> {
    let n = cross(a, b);
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    if len < 1e-6 {
        return None;
    }
    let (x, z) = (n[0] / len, n[2] / len);
    let planar = (x * x + z * z).sqrt();
    if planar < 1e-6 {
        return None;
    }
    Some([x / planar, z / planar])
}

/// Per-frame consistency of upper and lower body facing, with the number of
/// frames whose normals were degenerate (scored as consistent).
pub fn frame_consistency(m: &MotionSequence, skeleton: &Skeleton) -> Result<(Vec<f64>, usize)> {
    let lm = skeleton
        .landmarks()
        .ok_or_else(|| config(format!("skeleton {} lacks torso landmarks", skeleton.id)))?;
    if skeleton.joint_count() != m.joint_count() {
        return Err(precondition(format!(
            "skeleton {} has {} joints, motion has {}",
            skeleton.id,
            skeleton.joint_count(),
            m.joint_count()
        )));
    }
    let mut degenerate = 0;
    let scores = (0..m.frame_count())
        .map(|t| {
            let v = |a: usize, b: usize| {
                let (pa, pb) = (m.joint(t, a), m.joint(t, b));
                [0, 1, 2].map(|k| pb[k] as f64 - pa[k] as f64)
            };
            let nu = facing(v(lm.left_shoulder, lm.right_shoulder), v(lm.pelvis, lm.neck));
            let nl = facing(v(lm.left_hip, lm.right_hip), v(lm.pelvis, lm.spine1));
            match (nu, nl) {
                (Some(u), Some(l)) => facing_agreement(u, l),
                _ => {
                    degenerate += 1;
                    1.0
                }
            }
        })
        .collect();
    if degenerate > 0 {
        debug!("{degenerate} frames with degenerate body normals scored as consistent");
    }
    Ok((scores, degenerate))
}

/// Infimum of per-frame scores over each window `[t·d, (t+1)·d)`.
pub fn consistency_reward(frame_scores: &[f64], d: usize, steps: usize) -> Result<Vec<f32>> {
    if frame_scores.len() < d * steps {
        return Err(precondition(format!(
            "{} frames cannot fill {steps} windows of {d}",
            frame_scores.len()
        )));
    }
    Ok((0..steps)
        .map(|t| frame_scores[t * d..(t + 1) * d].iter().cloned().fold(f64::INFINITY, f64::min) as f32)
        .collect())
}

/// `ε_t = r_t + v_{t+1} − v_t` for `t` in `0..T'−1`.
pub fn td_error(r: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if v.len() < 2 || r.len() + 1 < v.len() {
        return Err(precondition(format!(
            "td error needs >= 2 values and >= T'−1 rewards, got {} and {}",
            v.len(),
            r.len()
        )));
    }
    Ok((0..v.len() - 1).map(|t| r[t] + v[t + 1] - v[t]).collect())
}

/// TD errors on the graph with the bootstrap term detached. `v` is `[T', 1]`.
pub fn td_error_var<'g>(r: &[f32], v: Var<'g, f32>) -> Result<Var<'g, f32>> {
    let n = v.value().rows();
    if n < 2 || r.len() + 1 < n {
        return Err(precondition(format!("td error: {} rewards for {n} values", r.len())));
    }
    let r = Tensor::new(&[n - 1, 1], r[..n - 1].to_vec())?;
    let next = v.slice_rows(1, n)?.stop_gradient();
    Ok(next.sub(v.slice_rows(0, n - 1)?)?.add_const(&r)?)
}

/// `(1/(T'−1)) Σ_t [CE(a^u_t, p̂^u_{t+1}) + CE(a^l_t, p̂^l_{t+1})] · ε_t`, with `ε` a constant.
/// `logits` is the `[3T', N]` policy output; `upper`/`lower` hold `p̂_0..p̂_{T'−1}` (or longer).
pub fn ac_loss<'g>(logits: Var<'g, f32>, upper: &[usize], lower: &[usize], eps: &[f32]) -> Result<Var<'g, f32>> {
    let steps = logits.value().rows() / 3;
    if steps < 2 || eps.len() != steps - 1 || upper.len() < steps || lower.len() < steps {
        return Err(precondition(format!(
            "ac loss: {steps} steps, {} TD errors, {} / {} codes",
            eps.len(),
            upper.len(),
            lower.len()
        )));
    }
    let n = steps - 1;
    let ce = ce_loss_rows(logits, steps, 0..n, &upper[1..steps], &lower[1..steps])?;
    let w = Tensor::new(&[n], eps.to_vec())?;
    Ok(ce.mul_const(&w)?.sum().scale(1.0 / n as f32))
}

/// `(1/(T'−1)) ‖ε‖²`.
pub fn critic_loss<'g>(eps: Var<'g, f32>) -> Result<Var<'g, f32>> {
    Ok(eps.sqr().mean())
}

/// A GPT split into a frozen state network, a trainable policy network, and a critic.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorCriticModel {
    pub gpt: GptModel,
    pub critic: ParamStore<f32>,
    pub critic_layers: usize,
}

impl ActorCriticModel {
    pub fn new(gpt: GptModel, critic_layers: usize, seed: u64) -> Result<Self> {
        if critic_layers == 0 {
            return Err(config("critic needs at least one layer"));
        }
        if gpt.config.layers < 2 {
            return Err(config("actor-critic split needs a GPT with at least 2 layers"));
        }
        let c = gpt.config.channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut critic = ParamStore::new();
        for i in 0..critic_layers {
            init_block(&mut critic, &mut rng, &format!("critic.blocks.{i}"), c)?;
        }
        init_layer_norm(&mut critic, "critic.ln_f", c)?;
        critic.insert("critic.head.w", Tensor::zeros(&[c, 1]))?;
        critic.insert("critic.head.b", Tensor::zeros(&[1]))?;
        Ok(Self {
            gpt,
            critic,
            critic_layers,
        })
    }

    pub fn from_parts(gpt: GptModel, critic: ParamStore<f32>, critic_layers: usize) -> Result<Self> {
        let template = Self::new(gpt, critic_layers, 0)?;
        crate::vqvae::check_same_layout(&template.critic, &critic)?;
        Ok(Self { critic, ..template })
    }

    /// Number of GPT blocks in the state network.
    pub fn split(&self) -> usize {
        self.gpt.config.layers / 2
    }

    /// True for GPT parameters owned by the frozen state network.
    pub fn is_state_param(&self, name: &str) -> bool {
        match name.strip_prefix("blocks.") {
            Some(rest) => rest
                .split('.')
                .next()
                .and_then(|i| i.parse::<usize>().ok())
                .is_some_and(|i| i < self.split()),
            None => !(name.starts_with("ln_f.") || name.starts_with("head.")),
        }
    }

    /// State `s` of one window, `[3T', C]`.
    pub fn state(&self, music: &Tensor<f32>, upper: &[usize], lower: &[usize]) -> Result<Tensor<f32>> {
        let g = Graph::new();
        let b = self.gpt.params.bind(&g, |_| false);
        let x = embed(&self.gpt.config, &b, music, upper, lower)?;
        let s = run_blocks(&self.gpt.config, &b, "blocks", 0..self.split(), x, &mut None)?;
        Ok((*s.value()).clone())
    }

    /// Critic values `v_t = v^u_t + v^l_t` of a state.
    pub fn critic_values(&self, s: &Tensor<f32>) -> Result<Vec<f32>> {
        let g = Graph::new();
        let b = self.critic.bind(&g, |_| false);
        let v = critic_var(&self.gpt.config, self.critic_layers, &b, g.constant(s.clone()))?;
        Ok(v.value().data().to_vec())
    }
}

/// Policy network on a state: the upper GPT blocks and the output head.
pub fn policy_var<'g>(
    cfg: &GptConfig,
    b: &choreo_autograd::Bound<'g, f32>,
    split: usize,
    s: Var<'g, f32>,
) -> Result<Var<'g, f32>> {
    let x = run_blocks(cfg, b, "blocks", split..cfg.layers, s, &mut None)?;
    head(b, x)
}

/// Critic values `[T', 1]` of a state `[3T', C]`.
pub fn critic_var<'g>(
    cfg: &GptConfig,
    layers: usize,
    b: &choreo_autograd::Bound<'g, f32>,
    s: Var<'g, f32>,
) -> Result<Var<'g, f32>> {
    let steps = s.value().rows() / 3;
    let x = run_blocks(cfg, b, "critic.blocks", 0..layers, s, &mut None)?;
    let out = linear(b, "critic.head", layer_norm(b, "critic.ln_f", x)?)?;
    Ok(out.slice_rows(steps, 2 * steps)?.add(out.slice_rows(2 * steps, 3 * steps)?)?)
}

/// Decoding context shared by rollouts and evaluation.
pub struct Decoder<'a> {
    pub upper: &'a VqVaeModel,
    pub lower: &'a VqVaeModel,
    pub split: &'a HalfBodySplit,
    pub skeleton: &'a Skeleton,
    pub fps: f32,
}

impl Decoder<'_> {
    pub fn decode(&self, upper: &[usize], lower: &[usize]) -> Result<MotionSequence> {
        let codes = CodeSequence::new(upper.to_vec(), lower.to_vec(), self.upper.config.downsample, self.fps)?;
        decode_code_sequence(self.upper, self.lower, self.split, &codes, &self.skeleton.id, [0.0; 3])
    }
}

/// One on-policy trajectory and its learning signals.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutTrace {
    pub sequence: usize,
    pub start: usize,
    /// `p̂_0..p̂_{T'}`: the given start pair followed by `T'` greedy actions.
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
    pub music: Tensor<f32>,
    pub states: Tensor<f32>,
    pub values: Vec<f32>,
    pub reward_beat: Vec<f32>,
    pub reward_consistency: Vec<f32>,
    pub rewards: Vec<f32>,
    pub td: Vec<f32>,
}

impl RolloutTrace {
    pub fn steps(&self) -> usize {
        self.values.len()
    }
}

/// Music and starting codes the rollouts are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct AcCorpus {
    pub codes: Vec<CodeSequence>,
    pub music: Vec<CodeStepFeatures>,
    /// Music beats in frames.
    pub beats: Vec<Vec<usize>>,
}

impl AcCorpus {
    pub fn new(codes: Vec<CodeSequence>, music: Vec<CodeStepFeatures>, beats: Vec<Vec<usize>>) -> Result<Self> {
        if codes.len() != music.len() || codes.len() != beats.len() || codes.is_empty() {
            return Err(precondition(format!(
                "corpus parts differ in length or are empty: {} codes, {} music, {} beat lists",
                codes.len(),
                music.len(),
                beats.len()
            )));
        }
        for (i, (c, m)) in codes.iter().zip(&music).enumerate() {
            if c.len() != m.len() {
                return Err(precondition(format!(
                    "sequence {i}: {} code steps but {} music steps",
                    c.len(),
                    m.len()
                )));
            }
        }
        Ok(Self { codes, music, beats })
    }
}

/// Greedy rollout of `T'` actions from the corpus codes at `start`. Reward
/// `r_t` scores the code produced by action `t`, i.e. the decoded window of
/// step `t + 1`, against the music beats of that window.
pub fn rollout(
    model: &ActorCriticModel,
    dec: &Decoder<'_>,
    corpus: &AcCorpus,
    rewards: &RewardConfig,
    sequence: usize,
    start: usize,
) -> Result<RolloutTrace> {
    let cfg = &model.gpt.config;
    let music = &corpus.music[sequence];
    let tp = cfg.block_size;
    if start + tp + 1 > music.len() {
        return Err(precondition(format!(
            "rollout at {start} needs {} music steps, sequence has {}",
            start + tp + 1,
            music.len()
        )));
    }
    let codes = &corpus.codes[sequence];
    let mut up = vec![codes.upper[start]];
    let mut lo = vec![codes.lower[start]];
    let window = music.rows(start + 1, start + tp + 1)?;
    for k in 0..tp {
        let m = music.rows(start + 1, start + k + 2)?;
        let out = model.gpt.forward(&m, &up, &lo)?;
        up.push(choreo_autograd::kernels::argmax(out.upper_logits(k)));
        lo.push(choreo_autograd::kernels::argmax(out.lower_logits(k)));
    }
    let states = model.state(&window, &up[..tp], &lo[..tp])?;
    let values = model.critic_values(&states)?;

    let d = dec.upper.config.downsample;
    let full = dec.decode(&up, &lo)?;
    let dance: Vec<usize> = extract_dance_beats(&full, &rewards.dance_beats)?
        .frames
        .into_iter()
        .filter(|&b| b >= d)
        .map(|b| b - d)
        .collect();
    let offset = (start + 1) * d;
    let beats: Vec<usize> = corpus.beats[sequence]
        .iter()
        .filter(|&&b| b >= offset && b < offset + tp * d)
        .map(|&b| b - offset)
        .collect();
    let reward_beat = beat_align_reward(&dance, &beats, d, tp);
    let shifted = full.window(d, tp * d)?;
    let (scores, _) = frame_consistency(&shifted, dec.skeleton)?;
    let reward_consistency = consistency_reward(&scores, d, tp)?;
    let r: Vec<f32> = reward_beat
        .iter()
        .zip(&reward_consistency)
        .map(|(&b, &c)| (rewards.gamma_b * b as f64 + rewards.gamma_c * c as f64) as f32)
        .collect();
    let r64: Vec<f64> = r.iter().map(|&x| x as f64).collect();
    let v64: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    let td = td_error(&r64, &v64)?.into_iter().map(|x| x as f32).collect();
    Ok(RolloutTrace {
        sequence,
        start,
        upper: up,
        lower: lo,
        music: window,
        states,
        values,
        reward_beat,
        reward_consistency,
        rewards: r,
        td,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    /// Spacing of rollout start steps within each sequence.
    pub start_stride: usize,
    pub lr: f64,
    pub critic_lr: f64,
    /// Critic steps after each policy step.
    pub critic_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
}

impl Default for AcSchedule {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            start_stride: 1,
            lr: 1e-5,
            critic_lr: 1e-5,
            critic_steps: 1,
            beta1: 0.5,
            beta2: 0.99,
            seed: 0,
        }
    }
}

/// One row of the reward curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcEpochRecord {
    pub epoch: usize,
    pub mean_beat: f64,
    pub mean_consistency: f64,
    pub mean_reward: f64,
    pub bas: Option<f64>,
    pub policy_loss: f64,
    pub critic_loss: f64,
}

pub fn reward_curve_csv(curve: &[AcEpochRecord]) -> String {
    let mut s = String::from("epoch,mean_r_b,mean_r_c,mean_r,bas\n");
    for r in curve {
        let bas = r.bas.map(|b| format!("{b:.6}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{}\n",
            r.epoch, r.mean_beat, r.mean_consistency, r.mean_reward, bas
        ));
    }
    s
}

/// Held-out music for measuring beat alignment of full generations.
#[derive(Clone, Debug, PartialEq)]
pub struct BasProbe {
    pub music: Vec<CodeStepFeatures>,
    pub beats: Vec<Vec<usize>>,
    pub starts: Vec<(usize, usize)>,
    /// Kernel width in frames.
    pub sigma: f64,
}

/// Mean BAS of greedy generations over the probe's music.
pub fn probe_bas(gpt: &GptModel, dec: &Decoder<'_>, probe: &BasProbe, beats_cfg: &DanceBeatConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for ((music, beats), &start) in probe.music.iter().zip(&probe.beats).zip(&probe.starts) {
        let codes = gpt.generate(music, start, music.len())?;
        let motion = dec.decode(&codes.upper, &codes.lower)?;
        let within: Vec<usize> = beats.iter().copied().filter(|&b| b < motion.frame_count()).collect();
        if within.is_empty() {
            continue;
        }
        let dance = extract_dance_beats(&motion, beats_cfg)?;
        total += beat_align_score(&dance.frames, &within, probe.sigma)?;
        n += 1;
    }
    if n == 0 {
        return Err(precondition("BAS probe has no music beats"));
    }
    Ok(total / n as f64)
}

/// Alternating policy / critic optimizer state.
pub struct AcTrainer {
    pub model: ActorCriticModel,
    pub schedule: AcSchedule,
    pub rewards: RewardConfig,
    pub policy_opt: Adam<f32>,
    pub critic_opt: Adam<f32>,
    pub epoch: usize,
    pub step: u64,
}

impl AcTrainer {
    pub fn new(model: ActorCriticModel, schedule: AcSchedule, rewards: RewardConfig) -> Result<Self> {
        rewards.validate()?;
        if schedule.batch_size == 0 || schedule.start_stride == 0 || schedule.critic_steps == 0 {
            return Err(config("actor-critic batch size, start stride and critic steps must be >= 1"));
        }
        Ok(Self {
            policy_opt: adam(schedule.lr, schedule.beta1, schedule.beta2),
            critic_opt: adam(schedule.critic_lr, schedule.beta1, schedule.beta2),
            model,
            schedule,
            rewards,
            epoch: 0,
            step: 0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.schedule.epochs
    }

    fn starts(&self, corpus: &AcCorpus) -> Vec<(usize, usize)> {
        let tp = self.model.gpt.config.block_size;
        let mut out = Vec::new();
        for (i, m) in corpus.music.iter().enumerate() {
            if m.len() < tp + 1 {
                continue;
            }
            out.extend((0..=m.len() - tp - 1).step_by(self.schedule.start_stride).map(|s| (i, s)));
        }
        out
    }

    /// One policy step and one critic step on a batch of fresh rollouts.
    fn batch_step(&mut self, traces: &[RolloutTrace]) -> Result<(f64, f64)> {
        let cfg = self.model.gpt.config.clone();
        let split = self.model.split();
        let n = traces.len() as f32;

        let g = Graph::new();
        let frozen: Vec<String> = self
            .model
            .gpt
            .params
            .names()
            .filter(|k| self.model.is_state_param(k))
            .map(|k| k.to_string())
            .collect();
        let b = self.model.gpt.params.bind(&g, |k| !frozen.iter().any(|f| f == k));
        let mut total: Option<Var<f32>> = None;
        for tr in traces {
            let s = g.constant(tr.states.clone());
            let logits = policy_var(&cfg, &b, split, s)?;
            let loss = ac_loss(logits, &tr.upper, &tr.lower, &tr.td)?;
            total = Some(match total {
                Some(t) => t.add(loss)?,
                None => loss,
            });
        }
        let loss = total.expect("nonempty batch").scale(1.0 / n);
        let policy_loss = loss.item() as f64;
        check_loss("actor-critic policy", self.step, policy_loss)?;
        let grads = b.gradients(&g.backward(loss)?);
        drop(b);
        apply("actor-critic policy", self.step, &mut self.policy_opt, &mut self.model.gpt.params, &grads)?;

        let mut value_loss = 0.0;
        for _ in 0..self.schedule.critic_steps {
            value_loss = self.critic_step(traces)?;
        }
        self.step += 1;
        Ok((policy_loss, value_loss))
    }

    fn critic_step(&mut self, traces: &[RolloutTrace]) -> Result<f64> {
        let cfg = &self.model.gpt.config;
        let n = traces.len() as f32;
        let g = Graph::new();
        let b = self.model.critic.bind(&g, |_| true);
        let mut total: Option<Var<f32>> = None;
        for tr in traces {
            let v = critic_var(cfg, self.model.critic_layers, &b, g.constant(tr.states.clone()))?;
            let loss = critic_loss(td_error_var(&tr.rewards, v)?)?;
            total = Some(match total {
                Some(t) => t.add(loss)?,
                None => loss,
            });
        }
        let loss = total.expect("nonempty batch").scale(1.0 / n);
        let value_loss = loss.item() as f64;
        check_loss("actor-critic critic", self.step, value_loss)?;
        let grads = b.gradients(&g.backward(loss)?);
        drop(b);
        apply("actor-critic critic", self.step, &mut self.critic_opt, &mut self.model.critic, &grads)?;
        Ok(value_loss)
    }

    /// One epoch: every start position once, in a seeded order, in batches.
    pub fn run_epoch(
        &mut self,
        dec: &Decoder<'_>,
        corpus: &AcCorpus,
        probe: Option<&BasProbe>,
    ) -> Result<AcEpochRecord> {
        let mut starts = self.starts(corpus);
        if starts.is_empty() {
            return Err(precondition(format!(
                "no sequence is longer than the block size {}",
                self.model.gpt.config.block_size
            )));
        }
        let mut rng = step_rng(self.schedule.seed, self.epoch as u64);
        starts.shuffle(&mut rng);
        let (mut rb, mut rc, mut r, mut count) = (0.0, 0.0, 0.0, 0usize);
        let (mut pl, mut cl, mut batches) = (0.0, 0.0, 0usize);
        for chunk in starts.chunks(self.schedule.batch_size) {
            let traces = chunk
                .iter()
                .map(|&(i, s)| rollout(&self.model, dec, corpus, &self.rewards, i, s))
                .collect::<Result<Vec<_>>>()?;
            for tr in &traces {
                let k = tr.steps() as f64;
                rb += tr.reward_beat.iter().map(|&x| x as f64).sum::<f64>() / k;
                rc += tr.reward_consistency.iter().map(|&x| x as f64).sum::<f64>() / k;
                r += tr.rewards.iter().map(|&x| x as f64).sum::<f64>() / k;
                count += 1;
            }
            let (p, c) = self.batch_step(&traces)?;
            pl += p;
            cl += c;
            batches += 1;
        }
        self.epoch += 1;
        let bas = probe
            .map(|p| probe_bas(&self.model.gpt, dec, p, &self.rewards.dance_beats))
            .transpose()?;
        let c = count as f64;
        Ok(AcEpochRecord {
            epoch: self.epoch,
            mean_beat: rb / c,
            mean_consistency: rc / c,
            mean_reward: r / c,
            bas,
            policy_loss: pl / batches as f64,
            critic_loss: cl / batches as f64,
        })
    }
}

/// Runs all remaining epochs; returns the finetuned model and its reward curve.
pub fn finetune(
    model: ActorCriticModel,
    dec: &Decoder<'_>,
    corpus: &AcCorpus,
    rewards: RewardConfig,
    schedule: AcSchedule,
    probe: Option<&BasProbe>,
    mut on_epoch: impl FnMut(&AcEpochRecord),
) -> Result<(ActorCriticModel, Vec<AcEpochRecord>)> {
    let mut t = AcTrainer::new(model, schedule, rewards)?;
    let mut curve = Vec::new();
    while !t.is_done() {
        let rec = t.run_epoch(dec, corpus, probe)?;
        on_epoch(&rec);
        curve.push(rec);
    }
    Ok((t.model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpt::{GptConfig, MaskKind, AttentionScale};

    fn toy_gpt() -> GptModel {
        GptModel::new(
            GptConfig {
                layers: 2,
                heads: 2,
                channels: 8,
                dropout: 0.0,
                block_size: 3,
                codebook_size: 5,
                feature_dim: 4,
                mask: MaskKind::CrossConditional,
                attention_scale: AttentionScale::Model,
            },
            7,
        )
        .unwrap()
    }

    #[test]
    fn td_examples() {
        assert_eq!(td_error(&[1.0], &[0.5, 0.2]).unwrap(), vec![1.0 + 0.2 - 0.5]);
        assert_eq!(td_error(&[0.0, 0.0, 0.0], &[0.4, 0.4, 0.4]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn td_var_gradient_is_minus_one_on_current_value() {
        let g = Graph::new();
        let v = g.leaf(Tensor::new(&[3, 1], vec![0.1f32, 0.2, 0.3]).unwrap(), true);
        let eps = td_error_var(&[1.0, 1.0, 1.0], v).unwrap();
        assert_eq!(eps.value().data(), &[1.1, 1.1]);
        let grads = g.backward(eps.sum()).unwrap();
        assert_eq!(grads.get(v).unwrap().data(), &[-1.0, -1.0, 0.0]);
    }

    #[test]
    fn critic_loss_example() {
        let g = Graph::new();
        let e = g.constant(Tensor::new(&[2, 1], vec![1.0f32, 1.0]).unwrap());
        assert_eq!(critic_loss(e).unwrap().item(), 1.0);
    }

    #[test]
    fn reward_unit_cases() {
        assert_eq!(beat_align_reward(&[], &[3], 4, 1), vec![-1.0]);
        assert_eq!(beat_align_reward(&[1], &[], 4, 1), vec![1.0]);
        assert_eq!(beat_align_reward(&[2], &[3], 4, 1), vec![1.0]);
        assert_eq!(beat_align_reward(&[6], &[3, 5], 4, 2), vec![-1.0, 1.0]);
        assert_eq!(facing_agreement([1.0, 0.0], [-1.0, 0.0]), -1.0);
        assert_eq!(facing_agreement([1.0, 0.0], [0.0, 1.0]), 1.0);
        assert_eq!(consistency_reward(&[1.0, -0.3, 1.0], 3, 1).unwrap(), vec![-0.3f32]);
    }

    #[test]
    fn rest_pose_is_consistent_and_twist_is_not() {
        let sk = Skeleton::mini8();
        let rest: Vec<f32> = sk.rest_pose.iter().flatten().copied().collect();
        let mut twisted = rest.clone();
        let lm = sk.landmarks().unwrap();
        for j in [lm.left_shoulder, lm.right_shoulder] {
            twisted[3 * j] = -twisted[3 * j];
        }
        let m = MotionSequence::new([rest, twisted].concat(), 2, 8, 60.0, "mini8").unwrap();
        let (scores, degenerate) = frame_consistency(&m, &sk).unwrap();
        assert_eq!(degenerate, 0);
        assert_eq!(scores[0], 1.0);
        assert!((scores[1] + 1.0).abs() < 1e-9, "{scores:?}");
    }

    #[test]
    fn zero_critic_head_gives_zero_values() {
        let ac = ActorCriticModel::new(toy_gpt(), 3, 1).unwrap();
        let music = Tensor::zeros(&[3, 4]);
        let s = ac.state(&music, &[0, 1, 2], &[3, 4, 0]).unwrap();
        assert_eq!(s.shape(), &[9, 8]);
        assert_eq!(ac.critic_values(&s).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn state_and_policy_reproduce_gpt_logits() {
        let ac = ActorCriticModel::new(toy_gpt(), 1, 1).unwrap();
        let music = Tensor::new(&[3, 4], (0..12).map(|i| i as f32 * 0.1).collect()).unwrap();
        let (u, l) = ([1, 2, 3], [4, 0, 1]);
        let s = ac.state(&music, &u, &l).unwrap();
        let g = Graph::new();
        let b = ac.gpt.params.bind(&g, |_| false);
        let logits = policy_var(&ac.gpt.config, &b, ac.split(), g.constant(s)).unwrap();
        assert_eq!(*logits.value(), ac.gpt.forward(&music, &u, &l).unwrap().logits);
    }

    #[test]
    fn state_params_are_embeddings_and_lower_blocks() {
        let ac = ActorCriticModel::new(toy_gpt(), 1, 1).unwrap();
        assert!(ac.is_state_param("emb.u"));
        assert!(ac.is_state_param("pos"));
        assert!(ac.is_state_param("blocks.0.ln1.g"));
        assert!(!ac.is_state_param("blocks.1.ln1.g"));
        assert!(!ac.is_state_param("ln_f.g"));
        assert!(!ac.is_state_param("head.w"));
    }

    fn chosen_prob_after_step(eps: f32) -> (f32, f32) {
        let mut ac = ActorCriticModel::new(toy_gpt(), 1, 1).unwrap();
        let music = Tensor::zeros(&[3, 4]);
        let (u, l) = (vec![0, 1, 2, 3], vec![4, 3, 2, 1]);
        let s = ac.state(&music, &u[..3], &l[..3]).unwrap();
        let prob = |ac: &ActorCriticModel| {
            let out = ac.gpt.forward(&music, &u[..3], &l[..3]).unwrap();
            let p = out.probabilities();
            p.data()[3 * 5 + u[1]]
        };
        let before = prob(&ac);
        let g = Graph::new();
        let split = ac.split();
        let names: Vec<String> = ac.gpt.params.names().map(String::from).collect();
        let state: Vec<bool> = names.iter().map(|n| ac.is_state_param(n)).collect();
        let b = ac.gpt.params.bind(&g, |k| !state[names.iter().position(|n| n == k).unwrap()]);
        let logits = policy_var(&ac.gpt.config, &b, split, g.constant(s)).unwrap();
        let loss = ac_loss(logits, &u, &l, &[eps, 0.0]).unwrap();
        let grads = b.gradients(&g.backward(loss).unwrap());
        drop(b);
        let mut opt = adam(1e-2, 0.9, 0.999);
        opt.step(&mut ac.gpt.params, &grads).unwrap();
        (before, prob(&ac))
    }

    #[test]
    fn positive_td_error_raises_chosen_probability() {
        let (before, after) = chosen_prob_after_step(1.0);
        assert!(after > before, "{before} -> {after}");
        let (before, after) = chosen_prob_after_step(-1.0);
        assert!(after < before, "{before} -> {after}");
    }

    #[test]
    fn zero_td_error_gives_zero_loss() {
        let ac = ActorCriticModel::new(toy_gpt(), 1, 1).unwrap();
        let s = ac.state(&Tensor::zeros(&[3, 4]), &[0, 1, 2], &[0, 1, 2]).unwrap();
        let g = Graph::new();
        let b = ac.gpt.params.bind(&g, |_| true);
        let logits = policy_var(&ac.gpt.config, &b, ac.split(), g.constant(s)).unwrap();
        assert_eq!(ac_loss(logits, &[0, 1, 2], &[0, 1, 2], &[0.0, 0.0]).unwrap().item(), 0.0);
    }

    #[test]
    fn critic_training_reaches_td_fixed_point() {
        let ac = ActorCriticModel::new(toy_gpt(), 1, 3).unwrap();
        let s = ac.state(&Tensor::zeros(&[3, 4]), &[0, 1, 2], &[3, 4, 0]).unwrap();
        let r = [1.0f32, -0.5, 2.0];
        let mut critic = ac.critic.clone();
        let mut opt = adam(1e-2, 0.9, 0.999);
        for _ in 0..2000 {
            let g = Graph::new();
            let b = critic.bind(&g, |_| true);
            let v = critic_var(&ac.gpt.config, 1, &b, g.constant(s.clone())).unwrap();
            let loss = critic_loss(td_error_var(&r, v).unwrap()).unwrap();
            let grads = b.gradients(&g.backward(loss).unwrap());
            drop(b);
            opt.step(&mut critic, &grads).unwrap();
        }
        let trained = ActorCriticModel { critic, ..ac };
        let v = trained.critic_values(&s).unwrap();
        // backward recursion from the unconstrained final value
        let mut oracle = vec![0.0f64; 3];
        oracle[2] = v[2] as f64;
        for t in (0..2).rev() {
            oracle[t] = r[t] as f64 + oracle[t + 1];
        }
        for t in 0..3 {
            assert!((v[t] as f64 - oracle[t]).abs() < 1e-2, "{v:?} vs {oracle:?}");
        }
    }
}
