use choreo_autograd::{Graph, Padding, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn conv1d_identity_kernel() {
    let g = Graph::new();
    let x = g.constant(t(&[3, 1], &[1.0, 2.0, 3.0]));
    let w = g.constant(t(&[1, 1, 1], &[1.0]));
    let y = x.conv1d(w, 1, Padding::NONE).unwrap();
    assert_eq!(y.value().data(), &[1.0, 2.0, 3.0]);
}

#[test]
fn conv1d_pair_average_with_stride() {
    let g = Graph::new();
    let x = g.constant(t(&[4, 1], &[1.0; 4]));
    let w = g.constant(t(&[2, 1, 1], &[0.5, 0.5]));
    let y = x.conv1d(w, 2, Padding::NONE).unwrap();
    assert_eq!(y.value().data(), &[1.0, 1.0]);
}

#[test]
fn conv1d_output_length_and_errors() {
    let g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[9, 2]));
    let w = g.constant(Tensor::zeros(&[4, 2, 3]));
    let y = x.conv1d(w, 2, Padding::symmetric(1)).unwrap();
    assert_eq!(y.shape(), vec![(9 + 2 - 4) / 2 + 1, 3]);
    let bad = g.constant(Tensor::zeros(&[4, 3, 3]));
    assert!(x.conv1d(bad, 1, Padding::NONE).is_err());
    let long = g.constant(Tensor::zeros(&[12, 2, 1]));
    assert!(x.conv1d(long, 1, Padding::NONE).is_err());
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let g = Graph::new();
    let p = g.constant(t(&[1, 2], &[0.0, 0.0])).softmax_rows();
    assert_eq!(p.value().data(), &[0.5, 0.5]);
}

#[test]
fn cross_entropy_of_uniform_logits() {
    let g = Graph::new();
    let logits = g.constant(t(&[2, 4], &[0.3; 8]));
    for target in 0..4 {
        let ce = logits.cross_entropy(&[target, 3 - target]).unwrap();
        assert!((ce.item() - 4f64.ln()).abs() < 1e-12);
    }
    assert!((4f64.ln() - 1.3863).abs() < 1e-4);
}

#[test]
fn layer_norm_of_constant_row_is_zero() {
    let g = Graph::new();
    let y = g.constant(t(&[1, 5], &[2.5; 5])).layer_norm_rows(1e-5);
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn stop_gradient_examples() {
    let g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    assert_eq!(x.stop_gradient().value().data(), &[1.0, 2.0]);

    let g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = x.stop_gradient().mul(x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 3.0);

    let g = Graph::new();
    let x = g.param(t(&[3], &[1.0, -2.0, 5.0]));
    let y = x.stop_gradient().sum();
    let grads = g.backward(y).unwrap();
    assert!(grads.get(x).is_none());
    assert_eq!(grads.get_or_zeros(x).data(), &[0.0, 0.0, 0.0]);
}

#[test]
fn straight_through_copies_gradient() {
    let g = Graph::new();
    let e = g.param(t(&[1, 2], &[0.9, 0.1]));
    let q = e.straight_through(t(&[1, 2], &[1.0, 0.0])).unwrap();
    assert_eq!(q.value().data(), &[1.0, 0.0]);
    let loss = q.mul_const(&t(&[1, 2], &[2.0, -3.0])).unwrap().sum();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.get(e).unwrap().data(), &[2.0, -3.0]);
}

#[test]
fn dropout_eval_mode_is_identity_and_train_mode_is_seeded() {
    let g = Graph::new();
    let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = x.dropout(0.5, false, &mut rng).unwrap();
    assert_eq!(y.value().data(), x.value().data());
    let a = x.dropout(0.5, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let b = x.dropout(0.5, true, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    assert_eq!(a.value().data(), b.value().data());
    assert!(x.dropout(1.0, true, &mut rng).is_err());
}

#[test]
fn non_scalar_loss_is_rejected() {
    let g = Graph::new();
    let x = g.param(t(&[2], &[1.0, 2.0]));
    assert!(g.backward(x).is_err());
}

#[test]
fn multiple_backward_passes_share_a_tape() {
    let g = Graph::new();
    let a = g.param(Tensor::scalar(2.0));
    let b = g.param(Tensor::scalar(5.0));
    let la = a.sqr().sum();
    let lb = b.scale(3.0).sum();
    let ga = g.backward(la).unwrap();
    let gb = g.backward(lb).unwrap();
    assert_eq!(ga.get(a).unwrap().item(), 4.0);
    assert!(ga.get(b).is_none());
    assert_eq!(gb.get(b).unwrap().item(), 3.0);
    assert!(gb.get(a).is_none());
}

proptest! {
    /// Adding a branch that only passes through stop_gradient never changes
    /// the gradient reaching the input.
    #[test]
    fn stopped_branches_do_not_alter_gradients(
        xs in prop::collection::vec(-2.0f64..2.0, 1..8),
        w in -3.0f64..3.0,
    ) {
        let n = xs.len();
        let base = |with_branch: bool| {
            let g = Graph::new();
            let x = g.param(Tensor::from_f64(&[n], &xs).unwrap());
            let mut loss = x.sqr().scale(w).sum();
            if with_branch {
                let cut = x.gelu().stop_gradient();
                loss = loss.add(cut.mul(cut).unwrap().sum()).unwrap();
            }
            let grads = g.backward(loss).unwrap();
            grads.get(x).unwrap().clone()
        };
        prop_assert_eq!(base(false), base(true));
    }

    #[test]
    fn softmax_rows_are_distributions(
        xs in prop::collection::vec(-20.0f64..20.0, 6),
    ) {
        let g = Graph::new();
        let p = g.constant(Tensor::from_f64(&[2, 3], &xs).unwrap()).softmax_rows();
        for row in p.value().data().chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
