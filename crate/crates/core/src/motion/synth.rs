//! Procedural dance corpus with a known beat grid.
//!
//! Each sequence follows an integer beat period `b` and phase `t0`. Writing
//! `theta = pi * (t - t0) / b`, a lower-body joint moves as
//! `a * u * (1 - cos theta) / 2 + e * w * (1 - cos 2 theta) / 2`, so every
//! joint comes to rest on each beat. The lower body picks a new move from a
//! corpus-wide library at even beats (where its displacement is zero); the
//! upper body uses the `(1 + cos theta)` form, switches at odd beats and
//! replays the move the lower body started one beat earlier.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

use super::{MotionSequence, Skeleton};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub num_sequences: usize,
    pub frames: usize,
    pub joints: usize,
    pub fps: f32,
    pub tempo_min: f32,
    pub tempo_max: f32,
    pub seed: u64,
    /// Number of distinct moves in the corpus-wide library.
    #[serde(default = "default_moves")]
    pub moves: usize,
    #[serde(default = "default_amp_min")]
    pub amplitude_min: f32,
    #[serde(default = "default_amp_max")]
    pub amplitude_max: f32,
}

fn default_moves() -> usize {
    4
}
fn default_amp_min() -> f32 {
    0.1
}
fn default_amp_max() -> f32 {
    0.5
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            num_sequences: 16,
            frames: 64,
            joints: 24,
            fps: 60.0,
            tempo_min: 100.0,
            tempo_max: 140.0,
            seed: 0,
            moves: default_moves(),
            amplitude_min: default_amp_min(),
            amplitude_max: default_amp_max(),
        }
    }
}

/// Beat grid of one synthetic sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatGrid {
    /// Beat period in frames.
    pub period: usize,
    /// First beat frame, in `[0, period)`.
    pub phase: usize,
}

impl BeatGrid {
    pub fn beats(&self, frames: usize) -> Vec<usize> {
        (self.phase..frames).step_by(self.period).collect()
    }

    /// Beat phase angle `pi * (t - t0) / b` at frame `t`.
    pub fn theta(&self, t: f64) -> f64 {
        std::f64::consts::PI * (t - self.phase as f64) / self.period as f64
    }

    /// Index of the beat interval containing frame `t` (negative before the first beat).
    pub fn beat_index(&self, t: usize) -> i64 {
        (t as i64 - self.phase as i64).div_euclid(self.period as i64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSequence {
    pub id: String,
    pub motion: MotionSequence,
    pub beats: Vec<usize>,
    pub tempo_bpm: f32,
    pub grid: BeatGrid,
}

#[derive(Clone, Debug)]
struct Move {
    dir: Vec<[f64; 3]>,
    amp: Vec<f64>,
    harm_dir: Vec<[f64; 3]>,
    harm_amp: Vec<f64>,
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(config("synthetic frames must be >= 2"));
        }
        if self.joints == 0 {
            return Err(config("synthetic joints must be >= 1"));
        }
        if !(self.fps > 0.0) {
            return Err(config("synthetic fps must be positive"));
        }
        if !(self.tempo_min > 0.0 && self.tempo_min <= self.tempo_max) {
            return Err(config("tempo range must satisfy 0 < tempo_min <= tempo_max"));
        }
        if self.moves == 0 {
            return Err(config("move library must be nonempty"));
        }
        if !(self.amplitude_min >= 0.0 && self.amplitude_min <= self.amplitude_max) {
            return Err(config("amplitude range must satisfy 0 <= min <= max"));
        }
        Ok(())
    }

    /// Deterministic generator for stream `stream` of sequence `index`.
    pub fn rng(&self, index: usize, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        rng.set_stream(stream);
        rng
    }

    /// Tempo and beat grid of sequence `index`, shared with the music generator.
    pub fn timing(&self, index: usize) -> (f32, BeatGrid) {
        let mut rng = self.rng(index, 0);
        let bpm = if self.tempo_max > self.tempo_min {
            rng.random_range(self.tempo_min..=self.tempo_max)
        } else {
            self.tempo_min
        };
        let period = ((60.0 * self.fps / bpm).round() as usize).max(2);
        let phase = rng.random_range(0..period);
        (60.0 * self.fps / period as f32, BeatGrid { period, phase })
    }

    pub fn sequence_id(&self, index: usize) -> String {
        format!("seq{index:04}")
    }
}

fn unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|x| x / n);
        }
    }
}

fn library(spec: &SyntheticCorpusSpec) -> Vec<Move> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    (0..spec.moves)
        .map(|_| {
            let mut mv = Move {
                dir: Vec::new(),
                amp: Vec::new(),
                harm_dir: Vec::new(),
                harm_amp: Vec::new(),
            };
            for _ in 0..spec.joints {
                let a = if spec.amplitude_max > spec.amplitude_min {
                    rng.random_range(spec.amplitude_min..=spec.amplitude_max) as f64
                } else {
                    spec.amplitude_min as f64
                };
                mv.dir.push(unit(&mut rng));
                mv.amp.push(a);
                mv.harm_dir.push(unit(&mut rng));
                mv.harm_amp.push(a * rng.random_range(0.0..0.1));
            }
            mv
        })
        .collect()
}

/// Generates the corpus; identical specs give identical output.
pub fn generate_synthetic(spec: &SyntheticCorpusSpec) -> Result<Vec<SyntheticSequence>> {
    spec.validate()?;
    let skeleton = Skeleton::for_joint_count(spec.joints);
    let split = skeleton.default_split();
    let mut is_upper = vec![false; spec.joints];
    for &j in &split.upper {
        is_upper[j] = true;
    }
    let moves = library(spec);
    (0..spec.num_sequences)
        .map(|index| {
            let (tempo_bpm, grid) = spec.timing(index);
            let mut rng = spec.rng(index, 1);
            // Lower move for each even-beat pair; pair -1 covers frames before the first beat.
            let pairs = spec.frames / (2 * grid.period) + 3;
            let lower_moves: Vec<usize> =
                (0..pairs).map(|_| rng.random_range(0..spec.moves)).collect();
            let lower_move = |pair: i64| lower_moves[(pair + 1) as usize];

            let mut data = Vec::with_capacity(spec.frames * spec.joints * 3);
            for t in 0..spec.frames {
                let theta = grid.theta(t as f64);
                let k = grid.beat_index(t);
                let low = &moves[lower_move(k.div_euclid(2))];
                let up = &moves[lower_move((k - 1).div_euclid(2))];
                let (c1, c2) = (theta.cos(), (2.0 * theta).cos());
                for j in 0..spec.joints {
                    let (mv, s1) = if is_upper[j] {
                        (up, 1.0 + c1)
                    } else {
                        (low, 1.0 - c1)
                    };
                    let s2 = 1.0 - c2;
                    let rest = skeleton.rest_pose[j];
                    for x in 0..3 {
                        let v = rest[x] as f64
                            + 0.5 * mv.amp[j] * mv.dir[j][x] * s1
                            + 0.5 * mv.harm_amp[j] * mv.harm_dir[j][x] * s2;
                        data.push(v as f32);
                    }
                }
            }
            let motion =
                MotionSequence::new(data, spec.frames, spec.joints, spec.fps, skeleton.id.clone())?;
            Ok(SyntheticSequence {
                id: spec.sequence_id(index),
                motion,
                beats: grid.beats(spec.frames),
                tempo_bpm,
                grid,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            num_sequences: 4,
            frames: 128,
            joints: 8,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_synthetic(&spec()).unwrap();
        let b = generate_synthetic(&spec()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticCorpusSpec { seed: 12, ..spec() }).unwrap();
        assert_ne!(a[0].motion, c[0].motion);
    }

    #[test]
    fn tempo_120_at_60fps_gives_30_frame_beats() {
        let s = SyntheticCorpusSpec {
            tempo_min: 120.0,
            tempo_max: 120.0,
            num_sequences: 3,
            frames: 200,
            ..spec()
        };
        for seq in generate_synthetic(&s).unwrap() {
            assert_eq!(seq.grid.period, 30);
            assert_eq!(seq.tempo_bpm, 120.0);
            for w in seq.beats.windows(2) {
                assert_eq!(w[1] - w[0], 30);
            }
            assert!(seq.beats[0] < 30);
        }
    }

    #[test]
    fn joints_rest_on_every_beat() {
        for seq in generate_synthetic(&spec()).unwrap() {
            let speed = seq.motion.mean_joint_speed();
            let peak = speed.iter().cloned().fold(0.0, f32::max);
            for &b in &seq.beats {
                assert!(speed[b] < 0.1 * peak, "beat {b}: {} vs {peak}", speed[b]);
            }
        }
    }

    #[test]
    fn library_moves_are_shared_across_sequences() {
        let a = generate_synthetic(&spec()).unwrap();
        let more = generate_synthetic(&SyntheticCorpusSpec {
            num_sequences: 6,
            ..spec()
        })
        .unwrap();
        assert_eq!(a[..], more[..4]);
    }
}
