use choreo_autograd::{Graph, Tensor};
use choreo_core::gpt::{build_mask_kind, embed, head, run_blocks, GptConfig, GptModel, MaskKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy(seed: u64, mask: MaskKind) -> GptModel {
    let cfg = GptConfig {
        layers: 2,
        heads: 2,
        channels: 8,
        dropout: 0.1,
        block_size: 6,
        codebook_size: 7,
        feature_dim: 4,
        mask,
        ..GptConfig::default()
    };
    GptModel::new(cfg, seed).unwrap()
}

struct Input {
    music: Tensor<f32>,
    upper: Vec<usize>,
    lower: Vec<usize>,
}

fn input(rng: &mut ChaCha8Rng, l: usize) -> Input {
    Input {
        music: Tensor::randn(&[l, 4], 1.0, rng),
        upper: (0..l).map(|_| rng.random_range(0..7)).collect(),
        lower: (0..l).map(|_| rng.random_range(0..7)).collect(),
    }
}

fn rows_up_to(logits: &Tensor<f32>, steps: usize, t0: usize) -> Vec<f32> {
    let n = logits.cols();
    (0..3)
        .flat_map(|seg| (0..=t0).map(move |t| seg * steps + t))
        .flat_map(|r| logits.data()[r * n..(r + 1) * n].to_vec())
        .collect()
}

#[test]
fn future_perturbations_leave_past_outputs_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..4 {
        let model = toy(seed, MaskKind::CrossConditional);
        let l = 6;
        let base = input(&mut rng, l);
        let out = model.forward(&base.music, &base.upper, &base.lower).unwrap().logits;
        for t0 in 0..l - 1 {
            for which in 0..3 {
                let mut p = Input {
                    music: base.music.clone(),
                    upper: base.upper.clone(),
                    lower: base.lower.clone(),
                };
                let t = rng.random_range(t0 + 1..l);
                match which {
                    0 => p.music.data_mut()[t * 4 + rng.random_range(0..4)] += 3.0,
                    1 => p.upper[t] = (p.upper[t] + 1) % 7,
                    _ => p.lower[t] = (p.lower[t] + 3) % 7,
                }
                let po = model.forward(&p.music, &p.upper, &p.lower).unwrap().logits;
                assert_eq!(rows_up_to(&out, l, t0), rows_up_to(&po, l, t0), "seed {seed} t0 {t0} input {which} at {t}");
                assert_ne!(out.data(), po.data());
            }
        }
    }
}

/// `d logits[row] / d x[col]` magnitudes over the embedded input rows.
fn influence(model: &GptModel, inp: &Input, out_row: usize) -> Vec<f64> {
    let cfg = &model.config;
    let g = Graph::new();
    let b = model.params.bind(&g, |_| false);
    let x0 = embed(cfg, &b, &inp.music, &inp.upper, &inp.lower).unwrap().value().as_ref().clone();
    let x = g.param(x0);
    let logits = head(&b, run_blocks(cfg, &b, "blocks", 0..cfg.layers, x, &mut None).unwrap()).unwrap();
    let row = logits.slice_rows(out_row, out_row + 1).unwrap().sum();
    let grads = g.backward(row).unwrap();
    let gx = grads.get(x).unwrap();
    (0..gx.rows()).map(|r| gx.row(r).iter().map(|v| v.abs() as f64).sum()).collect()
}

#[test]
fn upper_and_lower_influence_follows_the_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let l = 5;
    for kind in [MaskKind::CrossConditional, MaskKind::Independent] {
        let model = toy(3, kind);
        let inp = input(&mut rng, l);
        let mask = build_mask_kind(l, kind);
        for (out_seg, in_seg) in [(1, 2), (2, 1)] {
            for t in 0..l {
                let infl = influence(&model, &inp, out_seg * l + t);
                for s in 0..l {
                    let col = in_seg * l + s;
                    let allowed = mask.is_allowed(out_seg * l + t, col);
                    assert_eq!(allowed, kind == MaskKind::CrossConditional && s <= t);
                    if allowed {
                        assert!(infl[col] > 0.0, "{kind:?} seg {out_seg} t {t} <- seg {in_seg} s {s}");
                    } else {
                        assert_eq!(infl[col], 0.0, "{kind:?} seg {out_seg} t {t} <- seg {in_seg} s {s}");
                    }
                }
            }
        }
    }
}

#[test]
fn truncated_windows_reproduce_prefix_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for seed in 0..3 {
        let model = toy(seed, MaskKind::CrossConditional);
        for l in 1..=4 {
            let inp = input(&mut rng, l);
            let full = model.forward(&inp.music, &inp.upper, &inp.lower).unwrap().logits;
            for k in 1..=l {
                let m = Tensor::new(&[k, 4], inp.music.data()[..k * 4].to_vec()).unwrap();
                let part = model.forward(&m, &inp.upper[..k], &inp.lower[..k]).unwrap().logits;
                assert_eq!(rows_up_to(&full, l, k - 1), rows_up_to(&part, k, k - 1), "seed {seed} L {l} k {k}");
            }
        }
    }
}
