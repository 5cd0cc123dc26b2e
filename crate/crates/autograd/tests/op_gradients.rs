use choreo_autograd::{
    gradient_check, gradient_check_params, Bound, GradCheckConfig, Graph, Padding, ParamStore,
    Real, Result, Tensor, Var,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed pseudo-random projection so vector-valued ops reduce to a scalar
/// with all output entries contributing distinct weights.
fn project<'g, F: Real>(y: Var<'g, F>) -> Result<Var<'g, F>> {
    let shape = y.shape();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| (1.37 * i as f64 + 0.4).sin() + 0.1).collect();
    y.mul_const(&Tensor::from_f64(&shape, &w)?).map(|v| v.sum())
}

fn store<F: Real>(inputs: &[(&str, Tensor<f64>)]) -> ParamStore<F> {
    let mut p = ParamStore::new();
    for (name, t) in inputs {
        p.insert(*name, t.cast()).unwrap();
    }
    p
}

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Inputs bounded away from zero, for ops with a kink there.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    randn(shape, seed).map(|v| v.signum() * (0.2 + v.abs()))
}

fn check_both<F32, F64>(label: &str, inputs: &[(&str, Tensor<f64>)], f32_fn: F32, f64_fn: F64)
where
    F32: for<'g> Fn(&'g Graph<f32>, &Bound<'g, f32>) -> Result<Var<'g, f32>>,
    F64: for<'g> Fn(&'g Graph<f64>, &Bound<'g, f64>) -> Result<Var<'g, f64>>,
{
    let r32 = gradient_check_params(f32_fn, &store::<f32>(inputs), GradCheckConfig::f32_default()).unwrap();
    assert!(r32.passed(1e-3), "{label} f32: {r32:?}");
    let r64 = gradient_check_params(f64_fn, &store::<f64>(inputs), GradCheckConfig::f64_default()).unwrap();
    assert!(r64.passed(1e-6), "{label} f64: {r64:?}");
}

macro_rules! check {
    ($label:expr, $inputs:expr, $f:ident) => {
        check_both($label, &$inputs, $f::<f32>, $f::<f64>)
    };
}

const SHAPES: [(usize, usize); 3] = [(1, 3), (4, 5), (7, 2)];

#[test]
fn elementwise_binary_ops() {
    for (s, &(r, c)) in SHAPES.iter().enumerate() {
        let a = randn(&[r, c], 10 + s as u64);
        let b = randn(&[r, c], 20 + s as u64);
        let inputs = [("a", a), ("b", b)];
        fn add<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.add(p.var("b")?)?)
        }
        fn sub<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.sub(p.var("b")?)?)
        }
        fn mul<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.mul(p.var("b")?)?)
        }
        check!("add", inputs, add);
        check!("sub", inputs, sub);
        check!("mul", inputs, mul);
    }
}

#[test]
fn row_broadcast_ops() {
    for (s, &(r, c)) in SHAPES.iter().enumerate() {
        let inputs = [("a", randn(&[r, c], 30 + s as u64)), ("v", randn(&[c], 40 + s as u64))];
        fn add_row<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.add_row(p.var("v")?)?)
        }
        fn mul_row<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.mul_row(p.var("v")?)?)
        }
        check!("add_row", inputs, add_row);
        check!("mul_row", inputs, mul_row);
    }
}

#[test]
fn smooth_unary_ops() {
    for (s, &(r, c)) in SHAPES.iter().enumerate() {
        let inputs = [("a", randn(&[r, c], 50 + s as u64))];
        fn gelu<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.gelu())
        }
        fn sqr<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.sqr().scale(F::lit(0.5)).add_scalar(F::one()))
        }
        fn mean<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            Ok(p.var("a")?.sqr().mean())
        }
        fn softmax<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.softmax_rows())
        }
        fn log_softmax<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.log_softmax_rows())
        }
        fn transpose<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.transpose()?)
        }
        check!("gelu", inputs, gelu);
        check!("sqr", inputs, sqr);
        check!("mean", inputs, mean);
        check!("softmax", inputs, softmax);
        check!("log_softmax", inputs, log_softmax);
        check!("transpose", inputs, transpose);
    }
}

#[test]
fn layer_norm_rows() {
    for (s, &(r, c)) in [(1, 8), (3, 16), (5, 12)].iter().enumerate() {
        let inputs = [("a", randn(&[r, c], 60 + s as u64))];
        fn ln<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.layer_norm_rows(F::lit(1e-5)))
        }
        check!("layer_norm", inputs, ln);
    }
}

#[test]
fn kinked_unary_ops() {
    for (s, &(r, c)) in SHAPES.iter().enumerate() {
        let inputs = [("a", away_from_zero(&[r, c], 70 + s as u64)), ("b", randn(&[r, c], 80 + s as u64))];
        fn relu<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.relu())
        }
        fn abs<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.abs())
        }
        fn mse<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            p.var("a")?.mse(p.var("b")?)
        }
        fn l2<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            p.var("a")?.l2_dist(p.var("b")?)
        }
        check!("relu", inputs, relu);
        check!("abs", inputs, abs);
        check!("mse", inputs, mse);
        check!("l2_dist", inputs, l2);
    }
}

#[test]
fn l1_distance() {
    for (s, &(r, c)) in SHAPES.iter().enumerate() {
        let b = randn(&[r, c], 90 + s as u64);
        let offset = away_from_zero(&[r, c], 95 + s as u64);
        let a = Tensor::from_f64(
            &[r, c],
            &b.data().iter().zip(offset.data()).map(|(x, o)| x + o).collect::<Vec<_>>(),
        )
        .unwrap();
        let inputs = [("a", a), ("b", b)];
        fn l1<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            p.var("a")?.l1(p.var("b")?)
        }
        check!("l1", inputs, l1);
    }
}

#[test]
fn matmul() {
    for (s, &(m, k, n)) in [(1, 2, 3), (4, 3, 2), (5, 6, 4)].iter().enumerate() {
        let inputs = [("a", randn(&[m, k], 100 + s as u64)), ("b", randn(&[k, n], 110 + s as u64))];
        fn mm<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.matmul(p.var("b")?)?)
        }
        check!("matmul", inputs, mm);
    }
}

#[test]
fn conv1d_configurations() {
    // (t, cin, k, cout, stride, pad_left, pad_right)
    let configs = [
        (5, 2, 3, 3, 1, 1, 1),
        (8, 3, 4, 2, 2, 1, 1),
        (6, 1, 2, 4, 2, 0, 0),
        (7, 2, 3, 2, 1, 2, 0),
    ];
    for (s, &(t, cin, k, cout, stride, pl, pr)) in configs.iter().enumerate() {
        let inputs = [
            ("x", randn(&[t, cin], 120 + s as u64)),
            ("w", randn(&[k, cin, cout], 130 + s as u64)),
        ];
        let pad = Padding { left: pl, right: pr };
        let r = gradient_check_params(
            |_, p| project(p.var("x")?.conv1d(p.var("w")?, stride, pad)?),
            &store::<f64>(&inputs),
            GradCheckConfig::f64_default(),
        )
        .unwrap();
        assert!(r.passed(1e-6), "conv1d f64 {r:?}");
        let r = gradient_check_params(
            |_, p| project(p.var("x")?.conv1d(p.var("w")?, stride, pad)?),
            &store::<f32>(&inputs),
            GradCheckConfig::f32_default(),
        )
        .unwrap();
        assert!(r.passed(1e-3), "conv1d f32 {r:?}");
    }
}

#[test]
fn structural_ops() {
    for (s, &(r, c)) in [(3, 4), (4, 2), (6, 3)].iter().enumerate() {
        let inputs = [
            ("a", randn(&[r, c], 140 + s as u64)),
            ("b", randn(&[r, c], 150 + s as u64)),
            ("table", randn(&[5, c], 160 + s as u64)),
        ];
        fn concat_rows<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(Var::concat_rows(&[p.var("a")?, p.var("b")?.sqr()])?)
        }
        fn concat_cols<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(Var::concat_cols(&[p.var("b")?, p.var("a")?.gelu()])?)
        }
        fn slices<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            let a = p.var("a")?;
            let rows = a.shape()[0];
            let cols = a.shape()[1];
            let x = a.slice_rows(rows / 2, rows)?.slice_cols(0, cols.div_ceil(2))?;
            project(x.sqr())
        }
        fn diff<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.diff_rows()?.diff_rows()?.mul(p.var("b")?.slice_rows(0, p.var("b")?.shape()[0] - 2)?)?)
        }
        fn embed<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("table")?.embedding(&[4, 0, 4, 2])?.gelu())
        }
        fn upsample<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            project(p.var("a")?.upsample_rows(3)?.sqr())
        }
        fn reshape<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            let a = p.var("a")?;
            let n: usize = a.shape().iter().product();
            project(a.reshape(&[n])?.sqr())
        }
        check!("concat_rows", inputs, concat_rows);
        check!("concat_cols", inputs, concat_cols);
        check!("slices", inputs, slices);
        check!("diff_rows", inputs, diff);
        check!("embedding", inputs, embed);
        check!("upsample_rows", inputs, upsample);
        check!("reshape", inputs, reshape);
    }
}

#[test]
fn cross_entropy_and_dropout() {
    for (s, &(r, c)) in SHAPES.iter().enumerate() {
        let inputs = [("a", randn(&[r, c], 170 + s as u64))];
        fn ce<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            let a = p.var("a")?;
            let rows = a.shape()[0];
            let cols = a.shape()[1];
            let targets: Vec<usize> = (0..rows).map(|i| (i * 7 + 1) % cols).collect();
            a.cross_entropy(&targets)
        }
        fn dropout<'g, F: Real>(_: &'g Graph<F>, p: &Bound<'g, F>) -> Result<Var<'g, F>> {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            project(p.var("a")?.dropout(0.3, true, &mut rng)?)
        }
        check!("cross_entropy", inputs, ce);
        check!("dropout", inputs, dropout);
    }
}

#[test]
fn sum_of_squares_in_f64_mode() {
    let x = randn(&[3, 4], 7);
    let r = gradient_check(
        |_, x| Ok(x.sqr().sum()),
        &x,
        GradCheckConfig {
            eps: 1e-3,
            ..GradCheckConfig::f64_default()
        },
    )
    .unwrap();
    assert!(r.max_rel_error < 1e-6, "{r:?}");
}

#[test]
fn non_finite_evaluations_fail_the_check() {
    let x = Tensor::<f64>::from_f64(&[2], &[1.0, -1.0]).unwrap();
    // sqrt-free way to reach inf: log_softmax of an infinite logit.
    let r = gradient_check(
        |_, x| Ok(x.scale(f64::INFINITY).log_softmax_rows().sum()),
        &x,
        GradCheckConfig::f64_default(),
    )
    .unwrap();
    assert!(!r.finite);
    assert!(!r.passed(1.0));
}
