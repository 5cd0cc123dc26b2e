//! Pipeline stages shared by the command-line entry points and the tests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use choreo_core::actor_critic::{
    reward_curve_csv, AcCorpus, AcEpochRecord, AcTrainer, ActorCriticModel, BasProbe, Decoder,
};
use choreo_core::gpt::{GptModel, GptStepRecord, GptTrainData, GptTrainer};
use choreo_core::metrics::{evaluate_suite, EvalReport, EvalSample};
use choreo_core::motion::{
    generate_synthetic, read_beats, read_motion, write_beats, write_motion, Half, HalfBodySplit,
    MotionSequence, Skeleton, SyntheticCorpusSpec,
};
use choreo_core::music::{
    downsample_features, generate_synthetic_music, pick_beats_from_onset, read_features, write_features, CodeStepFeatures,
    MusicFeatureTrack, Pooling,
};
use choreo_core::vqvae::{
    decode_code_sequence, encode_corpus_to_codes, CodeSequence, VqPhase, VqStepRecord, VqTrainData, VqTrainer,
    VqVaeModel,
};
use choreo_core::write_atomic;
use log::info;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::checkpoint::ModelCheckpoint;
use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

pub const VQ_UPPER: &str = "vqvae_upper.ckpt";
pub const VQ_LOWER: &str = "vqvae_lower.ckpt";
pub const GPT_CKPT: &str = "gpt.ckpt";
pub const AC_CKPT: &str = "actor_critic.ckpt";
pub const CORPUS_MANIFEST: &str = "manifest.json";

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(choreo_core::CoreError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Index of a corpus directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub skeleton: String,
    pub fps: f32,
    pub joints: usize,
    pub feature_dim: usize,
    pub sequences: Vec<String>,
}

/// A corpus loaded from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub manifest: CorpusManifest,
    pub motions: Vec<MotionSequence>,
    pub music: Vec<MusicFeatureTrack>,
    pub beats: Vec<Vec<usize>>,
}

impl Corpus {
    pub fn skeleton(&self) -> Result<Skeleton> {
        Ok(Skeleton::from_id(&self.manifest.skeleton)?)
    }
}

/// Writes `<id>.motn`, `<id>.mfeat` and `<id>.beats.json` per sequence plus the manifest.
pub fn gen_synth(spec: &SyntheticCorpusSpec, feature_dim: usize, out: &Path) -> Result<CorpusManifest> {
    create_dir(out)?;
    let seqs = generate_synthetic(spec)?;
    let music = generate_synthetic_music(spec, feature_dim)?;
    let skeleton = Skeleton::for_joint_count(spec.joints);
    for (s, m) in seqs.iter().zip(&music) {
        write_motion(&out.join(format!("{}.motn", s.id)), &s.motion)?;
        write_features(&out.join(format!("{}.mfeat", s.id)), m)?;
        write_beats(&out.join(format!("{}.beats.json", s.id)), &s.beats)?;
    }
    let manifest = CorpusManifest {
        skeleton: skeleton.id,
        fps: spec.fps,
        joints: spec.joints,
        feature_dim,
        sequences: seqs.iter().map(|s| s.id.clone()).collect(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&out.join(CORPUS_MANIFEST), &text)?;
    info!("wrote {} sequences to {}", seqs.len(), out.display());
    Ok(manifest)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let path = dir.join(CORPUS_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let mut motions = Vec::new();
    let mut music = Vec::new();
    let mut beats = Vec::new();
    for id in &manifest.sequences {
        motions.push(read_motion(&dir.join(format!("{id}.motn")))?);
        music.push(read_features(&dir.join(format!("{id}.mfeat")))?);
        beats.push(read_beats(&dir.join(format!("{id}.beats.json")))?);
    }
    Ok(Corpus {
        manifest,
        motions,
        music,
        beats,
    })
}

/// Limits for one invocation of a training stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RunOptions {
    /// Stop once the stage's step (or epoch) counter reaches this value.
    pub stop_at: Option<u64>,
    /// Continue from the stage's existing checkpoint.
    pub resume: bool,
}

fn require(path: &Path, stage: &'static str, run: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::StageOrder {
            stage,
            missing: path.to_path_buf(),
            run,
        })
    }
}

// ---- VQ-VAE ----

fn vq_checkpoint(t: &VqTrainer, skeleton: &str, hash: &str) -> ModelCheckpoint {
    let mut c = ModelCheckpoint::new("vqvae", hash, t.step);
    c.set_meta("half", &t.model.half);
    c.set_meta("joints", &t.model.joints);
    c.set_meta("skeleton", &skeleton);
    c.set_meta("config", &t.model.config);
    c.set_meta("schedule", &t.schedule);
    c.set_meta("usage", &t.model.usage);
    c.set_meta("epoch_usage", &t.epoch_usage);
    c.push_params("model", &t.model.params);
    c.push_adam("opt", &t.opt);
    c.push_adam("velocity_opt", &t.velocity_opt);
    c
}

fn vq_trainer_from(c: &ModelCheckpoint, path: &Path) -> Result<VqTrainer> {
    c.expect_kind("vqvae", path)?;
    let model = VqVaeModel::from_params(
        c.meta("config")?,
        c.meta("half")?,
        c.meta("joints")?,
        c.params("model")?,
        c.meta("usage")?,
    )?;
    Ok(VqTrainer {
        model,
        schedule: c.meta("schedule")?,
        opt: c.adam("opt")?,
        velocity_opt: c.adam("velocity_opt")?,
        step: c.manifest.step,
        epoch_usage: c.meta("epoch_usage")?,
    })
}

/// A trained VQ-VAE with the skeleton it was trained on.
pub fn load_vqvae(path: &Path) -> Result<(VqVaeModel, String)> {
    let c = ModelCheckpoint::load(path)?;
    Ok((vq_trainer_from(&c, path)?.model, c.meta("skeleton")?))
}

fn vq_row(r: &VqStepRecord) -> String {
    let c = &r.components;
    let phase = match r.phase {
        VqPhase::Codebook => "codebook",
        VqPhase::Velocity => "velocity",
    };
    format!(
        "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}\n",
        r.step,
        phase,
        r.loss,
        c.position,
        c.velocity,
        c.acceleration,
        c.reconstruction,
        c.codebook,
        c.commitment,
        r.codes_used,
        r.codes_reset
    )
}

const VQ_CSV_HEADER: &str =
    "step,phase,loss,position,velocity,acceleration,reconstruction,codebook,commitment,codes_used,codes_reset\n";

fn append_csv(path: &Path, header: &str, rows: &str, resume: bool) -> Result<()> {
    let mut text = if resume && path.is_file() {
        std::fs::read_to_string(path).map_err(|e| io_err(path, e))?
    } else {
        header.to_string()
    };
    text.push_str(rows);
    write_text(path, &text)
}

/// Trains the upper and lower VQ-VAEs; writes both checkpoints and `vqvae_loss.csv`.
pub fn train_vqvae(cfg: &PipelineConfig, corpus_dir: &Path, ckpt_dir: &Path, opts: RunOptions) -> Result<()> {
    let corpus = &load_corpus(corpus_dir)?;
    create_dir(ckpt_dir)?;
    let skeleton = corpus.skeleton()?;
    let split = skeleton.default_split();
    let hash = cfg.hash();
    for (half, name) in [(Half::Upper, VQ_UPPER), (Half::Lower, VQ_LOWER)] {
        let path = ckpt_dir.join(name);
        let mut t = if opts.resume && path.is_file() {
            vq_trainer_from(&ModelCheckpoint::load(&path)?, &path)?
        } else {
            let joints = split.joints(half).len();
            VqTrainer::new(
                VqVaeModel::new(cfg.vqvae.clone(), half, joints, cfg.vqvae_train.seed)?,
                cfg.vqvae_train.clone(),
            )
        };
        let data = VqTrainData::from_motions(&corpus.motions, &split, half)?;
        let stop = opts.stop_at.unwrap_or(u64::MAX);
        let mut rows = String::new();
        while !t.is_done() && t.step < stop {
            let r = t.run_step(&data)?;
            if r.step % 100 == 0 {
                info!("vqvae {} step {} loss {:.5} codes {}", half.as_str(), r.step, r.loss, r.codes_used);
            }
            rows.push_str(&vq_row(&r));
        }
        vq_checkpoint(&t, &skeleton.id, &hash).save(&path)?;
        let csv = ckpt_dir.join(format!("vqvae_{}_loss.csv", half.as_str()));
        append_csv(&csv, VQ_CSV_HEADER, &rows, opts.resume)?;
    }
    Ok(())
}

/// Both VQ-VAEs, the body split, and the skeleton they were trained on.
pub struct VqPair {
    pub upper: VqVaeModel,
    pub lower: VqVaeModel,
    pub split: HalfBodySplit,
    pub skeleton: Skeleton,
}

impl VqPair {
    pub fn load(ckpt_dir: &Path, stage: &'static str) -> Result<Self> {
        let (pu, pl) = (ckpt_dir.join(VQ_UPPER), ckpt_dir.join(VQ_LOWER));
        require(&pu, stage, "train-vqvae")?;
        require(&pl, stage, "train-vqvae")?;
        let (upper, sk) = load_vqvae(&pu)?;
        let (lower, _) = load_vqvae(&pl)?;
        let skeleton = Skeleton::from_id(&sk)?;
        Ok(Self {
            upper,
            lower,
            split: skeleton.default_split(),
            skeleton,
        })
    }

    pub fn decoder(&self, fps: f32) -> Decoder<'_> {
        Decoder {
            upper: &self.upper,
            lower: &self.lower,
            split: &self.split,
            skeleton: &self.skeleton,
            fps,
        }
    }

    pub fn encode(&self, m: &MotionSequence) -> Result<CodeSequence> {
        Ok(encode_corpus_to_codes(&self.upper, &self.lower, &self.split, m)?)
    }

    pub fn downsample(&self) -> usize {
        self.upper.config.downsample
    }
}

fn pooled(music: &[MusicFeatureTrack], d: usize) -> Result<Vec<CodeStepFeatures>> {
    Ok(music
        .iter()
        .map(|t| downsample_features(t, d, Pooling::Mean))
        .collect::<choreo_core::Result<Vec<_>>>()?)
}

/// Code sequences of the corpus with music pooled to the same steps.
pub fn code_corpus(vq: &VqPair, corpus: &Corpus) -> Result<(Vec<CodeSequence>, Vec<CodeStepFeatures>)> {
    let codes = corpus.motions.iter().map(|m| vq.encode(m)).collect::<Result<Vec<_>>>()?;
    let mut music = pooled(&corpus.music, vq.downsample())?;
    for (c, m) in codes.iter().zip(music.iter_mut()) {
        if m.len() < c.len() {
            return Err(CliError::Data(format!(
                "music has {} code steps, motion has {}",
                m.len(),
                c.len()
            )));
        }
        m.features = m.rows(0, c.len())?;
    }
    Ok((codes, music))
}

// ---- GPT ----

fn gpt_checkpoint(t: &GptTrainer, hash: &str) -> ModelCheckpoint {
    let mut c = ModelCheckpoint::new("gpt", hash, t.step);
    c.set_meta("config", &t.model.config);
    c.set_meta("schedule", &t.schedule);
    c.push_params("model", &t.model.params);
    c.push_adam("opt", &t.opt);
    c
}

fn gpt_trainer_from(c: &ModelCheckpoint, path: &Path) -> Result<GptTrainer> {
    c.expect_kind("gpt", path)?;
    Ok(GptTrainer {
        model: GptModel::from_params(c.meta("config")?, c.params("model")?)?,
        schedule: c.meta("schedule")?,
        opt: c.adam("opt")?,
        step: c.manifest.step,
    })
}

pub fn load_gpt(path: &Path) -> Result<GptModel> {
    Ok(gpt_trainer_from(&ModelCheckpoint::load(path)?, path)?.model)
}

fn gpt_row(r: &GptStepRecord) -> String {
    format!("{},{:.6},{:e}\n", r.step, r.loss, r.lr)
}

/// Trains the motion GPT on the corpus codes; the VQ-VAE checkpoints are only read.
pub fn train_gpt(cfg: &PipelineConfig, corpus_dir: &Path, ckpt_dir: &Path, opts: RunOptions) -> Result<()> {
    let vq = VqPair::load(ckpt_dir, "train-gpt")?;
    let corpus = &load_corpus(corpus_dir)?;
    let (codes, music) = code_corpus(&vq, corpus)?;
    let data = GptTrainData::new(codes, music)?;
    let path = ckpt_dir.join(GPT_CKPT);
    let mut t = if opts.resume && path.is_file() {
        gpt_trainer_from(&ModelCheckpoint::load(&path)?, &path)?
    } else {
        GptTrainer::new(GptModel::new(cfg.gpt.clone(), cfg.gpt_train.seed)?, cfg.gpt_train.clone())
    };
    let stop = opts.stop_at.unwrap_or(u64::MAX);
    let mut rows = String::new();
    while !t.is_done() && t.step < stop {
        let r = t.run_step(&data)?;
        if r.step % 100 == 0 {
            info!("gpt step {} loss {:.5}", r.step, r.loss);
        }
        rows.push_str(&gpt_row(&r));
    }
    gpt_checkpoint(&t, &cfg.hash()).save(&path)?;
    append_csv(&ckpt_dir.join("gpt_loss.csv"), "step,loss,lr\n", &rows, opts.resume)
}

// ---- actor-critic ----

fn ac_checkpoint(t: &AcTrainer, hash: &str) -> ModelCheckpoint {
    let mut c = ModelCheckpoint::new("actor-critic", hash, t.step);
    c.set_meta("gpt_config", &t.model.gpt.config);
    c.set_meta("critic_layers", &t.model.critic_layers);
    c.set_meta("schedule", &t.schedule);
    c.set_meta("rewards", &t.rewards);
    c.set_meta("epoch", &t.epoch);
    c.push_params("gpt", &t.model.gpt.params);
    c.push_params("value", &t.model.critic);
    c.push_adam("policy_opt", &t.policy_opt);
    c.push_adam("critic_opt", &t.critic_opt);
    c
}

fn ac_trainer_from(c: &ModelCheckpoint, path: &Path) -> Result<AcTrainer> {
    c.expect_kind("actor-critic", path)?;
    let gpt = GptModel::from_params(c.meta("gpt_config")?, c.params("gpt")?)?;
    let model = ActorCriticModel::from_parts(gpt, c.params("value")?, c.meta("critic_layers")?)?;
    let mut t = AcTrainer::new(model, c.meta("schedule")?, c.meta("rewards")?)?;
    t.policy_opt = c.adam("policy_opt")?;
    t.critic_opt = c.adam("critic_opt")?;
    t.epoch = c.meta("epoch")?;
    t.step = c.manifest.step;
    Ok(t)
}

pub fn load_actor_critic(path: &Path) -> Result<ActorCriticModel> {
    Ok(ac_trainer_from(&ModelCheckpoint::load(path)?, path)?.model)
}

/// Held-out synthetic music for the BAS column of the reward curve.
pub fn bas_probe(cfg: &PipelineConfig, vq: &VqPair) -> Result<Option<BasProbe>> {
    let n = cfg.actor_critic.probe_sequences;
    if n == 0 {
        return Ok(None);
    }
    let spec = SyntheticCorpusSpec {
        num_sequences: n,
        seed: cfg.corpus.seed ^ 0x00C0_FFEE_D00D_F00D,
        ..cfg.corpus.clone()
    };
    let seqs = generate_synthetic(&spec)?;
    let music = generate_synthetic_music(&spec, cfg.feature_dim)?;
    let starts = seqs
        .iter()
        .map(|s| vq.encode(&s.motion).map(|c| (c.upper[0], c.lower[0])))
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(BasProbe {
        music: pooled(&music, vq.downsample())?,
        beats: seqs.into_iter().map(|s| s.beats).collect(),
        starts,
        sigma: cfg.eval.sigma_frames(spec.fps),
    }))
}

/// Actor-critic finetuning of the trained GPT; writes the checkpoint and `reward_curve.csv`.
pub fn finetune(
    cfg: &PipelineConfig,
    corpus_dir: &Path,
    ckpt_dir: &Path,
    opts: RunOptions,
) -> Result<Vec<AcEpochRecord>> {
    let vq = VqPair::load(ckpt_dir, "finetune-ac")?;
    let gpt_path = ckpt_dir.join(GPT_CKPT);
    require(&gpt_path, "finetune-ac", "train-gpt")?;
    let corpus = &load_corpus(corpus_dir)?;
    let pretrained = load_gpt(&gpt_path)?;
    let path = ckpt_dir.join(AC_CKPT);
    let mut t = if opts.resume && path.is_file() {
        ac_trainer_from(&ModelCheckpoint::load(&path)?, &path)?
    } else {
        let ac = ActorCriticModel::new(
            pretrained.clone(),
            cfg.actor_critic.critic_layers,
            cfg.actor_critic.schedule.seed,
        )?;
        AcTrainer::new(ac, cfg.actor_critic.schedule.clone(), cfg.actor_critic.rewards.clone())?
    };
    let (codes, music) = code_corpus(&vq, corpus)?;
    let ac_corpus = AcCorpus::new(codes, music, corpus.beats.clone())?;
    let probe = bas_probe(cfg, &vq)?;
    let dec = vq.decoder(corpus.manifest.fps);
    let stop = opts.stop_at.unwrap_or(u64::MAX);
    let mut curve = Vec::new();
    while !t.is_done() && (t.epoch as u64) < stop {
        let r = t.run_epoch(&dec, &ac_corpus, probe.as_ref())?;
        info!(
            "actor-critic epoch {} mean reward {:.4} (beat {:.4}, consistency {:.4})",
            r.epoch, r.mean_reward, r.mean_beat, r.mean_consistency
        );
        curve.push(r);
    }
    for (name, p) in pretrained.params.iter() {
        if t.model.is_state_param(name) && t.model.gpt.params.get(name)? != p {
            return Err(CliError::Core(choreo_core::CoreError::Numerical(format!(
                "state network parameter `{name}` changed during finetuning"
            ))));
        }
    }
    ac_checkpoint(&t, &cfg.hash()).save(&path)?;
    let csv = reward_curve_csv(&curve);
    let rows = csv.split_once('\n').map(|(_, r)| r).unwrap_or("");
    append_csv(&ckpt_dir.join("reward_curve.csv"), "epoch,mean_r_b,mean_r_c,mean_r,bas\n", rows, opts.resume)?;
    Ok(curve)
}

// ---- generation ----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StartCodes {
    Codes(usize, usize),
    Seed(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeTrace {
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
    pub downsample: usize,
    pub codebook_size: usize,
}

/// Sidecar paths written next to a generated motion file.
pub fn sidecars(out: &Path) -> (PathBuf, PathBuf) {
    let stem = out.with_extension("");
    (
        PathBuf::from(format!("{}.codes.json", stem.display())),
        PathBuf::from(format!("{}.beats.json", stem.display())),
    )
}

/// Generates `length` code steps for `music_path` with the finetuned model and writes the
/// decoded motion, its code trace, and the music beats it covers.
pub fn generate(ckpt_dir: &Path, music_path: &Path, start: StartCodes, length: usize, out: &Path) -> Result<MotionSequence> {
    let vq = VqPair::load(ckpt_dir, "generate")?;
    require(&ckpt_dir.join(GPT_CKPT), "generate", "train-gpt")?;
    let ac_path = ckpt_dir.join(AC_CKPT);
    require(&ac_path, "generate", "finetune-ac")?;
    let gpt = load_actor_critic(&ac_path)?.gpt;
    let track = read_features(music_path)?;
    let d = vq.downsample();
    let music = downsample_features(&track, d, Pooling::Mean)?;
    if length == 0 || music.len() < length {
        return Err(CliError::Data(format!(
            "{} covers {} code steps, {length} requested",
            music_path.display(),
            music.len()
        )));
    }
    let n = gpt.config.codebook_size;
    let (su, sl) = match start {
        StartCodes::Codes(u, l) => {
            if u >= n || l >= n {
                return Err(CliError::Config(format!("start codes ({u}, {l}) outside [0, {n})")));
            }
            (u, l)
        }
        StartCodes::Seed(seed) => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            (rng.random_range(0..n), rng.random_range(0..n))
        }
    };
    let mut codes = gpt.generate(&music, (su, sl), length)?;
    codes.fps = track.fps();
    let motion = decode_code_sequence(&vq.upper, &vq.lower, &vq.split, &codes, &vq.skeleton.id, [0.0; 3])?;
    write_motion(out, &motion)?;
    let (codes_path, beats_path) = sidecars(out);
    let trace = CodeTrace {
        upper: codes.upper,
        lower: codes.lower,
        downsample: d,
        codebook_size: n,
    };
    write_text(&codes_path, &serde_json::to_string(&trace).expect("trace serializes"))?;
    let beats: Vec<usize> = music_beats(music_path, &track)?
        .into_iter()
        .filter(|&b| b < motion.frame_count())
        .collect();
    write_beats(&beats_path, &beats)?;
    Ok(motion)
}

/// Music beats from `<stem>.beats.json` next to the feature file, else peaks of the onset channel.
pub fn music_beats(music_path: &Path, track: &MusicFeatureTrack) -> Result<Vec<usize>> {
    let (_, sidecar) = sidecars(music_path);
    if sidecar.is_file() {
        return Ok(read_beats(&sidecar)?);
    }
    Ok(match track.onset() {
        Some(onset) => {
            let min_gap = (track.fps() * 0.25).round().max(1.0) as usize;
            pick_beats_from_onset(&onset, min_gap, ONSET_THRESHOLD)
        }
        None => Vec::new(),
    })
}

const ONSET_THRESHOLD: f32 = 0.5;

// ---- evaluation ----

fn motion_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| io_err(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "motn") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Metric suite of every `.motn` in `generated` against `reference`; music beats come
/// from `<stem>.beats.json` next to each generated file when present.
pub fn evaluate(cfg: &PipelineConfig, generated: &Path, reference: &Path, out_dir: &Path) -> Result<EvalReport> {
    let mut samples = Vec::new();
    for p in motion_files(generated)? {
        let motion = read_motion(&p)?;
        let (_, beats_path) = sidecars(&p);
        let music_beats = if beats_path.is_file() { read_beats(&beats_path)? } else { Vec::new() };
        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        samples.push(EvalSample { id, motion, music_beats });
    }
    let refs = motion_files(reference)?
        .iter()
        .map(|p| read_motion(p))
        .collect::<choreo_core::Result<Vec<_>>>()?;
    let first = samples
        .first()
        .ok_or_else(|| CliError::Data(format!("{} holds no .motn files", generated.display())))?;
    let skeleton = Skeleton::from_id(first.motion.skeleton_id())?;
    let report = evaluate_suite(&samples, &refs, &skeleton, &cfg.eval, &cfg.hash())?;
    create_dir(out_dir)?;
    write_text(
        &out_dir.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    write_text(&out_dir.join("report.csv"), &report.to_csv())?;
    Ok(report)
}

// ---- codebook inspection ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CodeReport {
    pub code: usize,
    pub usage: u64,
    /// Mean per-joint frame-to-frame displacement away from the sequence ends.
    pub interior_displacement: f64,
}

/// Mean joint displacement between consecutive frames in `[margin, T − margin)`.
pub fn interior_displacement(m: &MotionSequence, margin: usize) -> f64 {
    let t_len = m.frame_count();
    if t_len < 2 * margin + 2 {
        return 0.0;
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for t in margin..t_len - margin - 1 {
        for j in 0..m.joint_count() {
            let (a, b) = (m.joint(t, j), m.joint(t + 1, j));
            total += (0..3).map(|k| (b[k] as f64 - a[k] as f64).powi(2)).sum::<f64>().sqrt();
            n += 1;
        }
    }
    total / n as f64
}

/// Decodes a sequence of codes through one half-body model.
pub fn decode_half(model: &VqVaeModel, codes: &[usize], fps: f32, skeleton: &str) -> Result<MotionSequence> {
    let pose = model.decode_codes(codes)?;
    Ok(MotionSequence::from_tensor(&pose, fps, &format!("{skeleton}:{}", model.half.as_str()))?)
}

/// Decodes `steps` repetitions of each requested code to `code_XXXX.motn` and
/// writes `codebook.csv` with usage and interior displacement per code.
pub fn inspect_codebook(ckpt: &Path, code: Option<usize>, steps: usize, fps: f32, out_dir: &Path) -> Result<Vec<CodeReport>> {
    let (model, skeleton) = load_vqvae(ckpt)?;
    let n = model.config.codebook_size;
    let codes: Vec<usize> = match code {
        Some(k) if k >= n => {
            return Err(CliError::Config(format!("code {k} outside [0, {n})")));
        }
        Some(k) => vec![k],
        None => (0..n).collect(),
    };
    if steps == 0 {
        return Err(CliError::Config("inspect-codebook needs at least one step".into()));
    }
    create_dir(out_dir)?;
    let d = model.config.downsample;
    let mut reports = Vec::new();
    let mut csv = String::from("code,usage,interior_displacement\n");
    for k in codes {
        let m = decode_half(&model, &vec![k; steps], fps, &skeleton)?;
        write_motion(&out_dir.join(format!("code_{k:04}.motn")), &m)?;
        let r = CodeReport {
            code: k,
            usage: model.usage.get(k).copied().unwrap_or(0),
            interior_displacement: interior_displacement(&m, d),
        };
        let _ = writeln!(csv, "{},{},{:e}", r.code, r.usage, r.interior_displacement);
        reports.push(r);
    }
    write_text(&out_dir.join("codebook.csv"), &csv)?;
    Ok(reports)
}
