use choreo_autograd::{Graph, Tensor};
use choreo_core::vqvae::quantize;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lowest index among the codes at minimal squared distance.
fn brute_force(x: &[f32], codebook: &Tensor<f32>) -> usize {
    let dist = |j: usize| -> f64 {
        x.iter()
            .zip(codebook.row(j))
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum()
    };
    let mut best = 0;
    for j in 1..codebook.rows() {
        if dist(j) < dist(best) {
            best = j;
        }
    }
    best
}

#[test]
fn quantize_matches_brute_force_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, c) = (64, 6);
    // Small integer grid so exact ties are common; a few rows are duplicated outright.
    let mut book: Vec<f32> = (0..n * c).map(|_| rng.random_range(-2i32..=2) as f32).collect();
    for (dst, src) in [(40, 3), (41, 3), (50, 17)] {
        let row: Vec<f32> = book[src * c..(src + 1) * c].to_vec();
        book[dst * c..(dst + 1) * c].copy_from_slice(&row);
    }
    let codebook = Tensor::new(&[n, c], book).unwrap();
    let mut data = Vec::new();
    for i in 0..1000 {
        if i % 4 == 0 {
            let j = rng.random_range(0..n);
            data.extend_from_slice(codebook.row(j));
        } else {
            data.extend((0..c).map(|_| rng.random_range(-4i32..=4) as f32 * 0.5));
        }
    }
    let e = Tensor::new(&[1000, c], data).unwrap();
    let (q, idx) = quantize(&e, &codebook).unwrap();
    let mut ties = 0;
    for r in 0..1000 {
        let want = brute_force(e.row(r), &codebook);
        assert_eq!(idx[r], want, "row {r}");
        assert_eq!(q.row(r), codebook.row(want));
        let d = |j: usize| -> f64 { e.row(r).iter().zip(codebook.row(j)).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum() };
        ties += (0..n).filter(|&j| j != want && d(j) == d(want)).count().min(1);
    }
    assert!(ties > 50, "only {ties} rows exercised ties");
}

#[test]
fn straight_through_gradient_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let e_val: Tensor<f64> = Tensor::randn(&[5, 3], 1.0, &mut rng);
    let book: Tensor<f64> = Tensor::randn(&[7, 3], 1.0, &mut rng);
    let w: Tensor<f64> = Tensor::randn(&[5, 3], 1.0, &mut rng);
    let (q, _) = quantize(&e_val, &book).unwrap();
    let g = Graph::new();
    let e = g.param(e_val);
    let z = e.straight_through(q.clone()).unwrap();
    assert_eq!(z.value().data(), q.data());
    let loss = z.mul_const(&w).unwrap().sum();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(e).unwrap().data(), w.data());
}
