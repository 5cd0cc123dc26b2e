//! Differentiable operations on [`Var`].

use std::rc::Rc;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::Var;
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        msg: msg.into(),
    }
}

/// Zero-padding applied to the time axis of a convolution input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padding {
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub const NONE: Padding = Padding { left: 0, right: 0 };

    pub fn symmetric(p: usize) -> Self {
        Self { left: p, right: p }
    }

    /// Output keeps the input length for stride 1 and odd kernels.
    pub fn same(kernel: usize) -> Self {
        Self {
            left: (kernel - 1) / 2,
            right: kernel / 2,
        }
    }
}

impl<'g, F: Real> Var<'g, F> {
    fn unary(
        self,
        value: Vec<F>,
        backward: impl Fn(&Tensor<F>) -> Tensor<F> + 'static,
    ) -> Var<'g, F> {
        let shape = self.shape();
        self.graph
            .push_op(Tensor::from_parts(shape, value), &[self], move |g, _| {
                vec![Some(backward(g))]
            })
    }

    fn same_shape(&self, other: &Var<'g, F>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(mismatch(op, &a, &b));
        }
        Ok(())
    }

    pub fn add(self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        self.same_shape(&other, "add")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
        Ok(self.graph.push_op(
            Tensor::from_parts(a.shape().to_vec(), data),
            &[self, other],
            |g, _| vec![Some(g.clone()), Some(g.clone())],
        ))
    }

    pub fn sub(self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        self.same_shape(&other, "sub")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x - y).collect();
        Ok(self.graph.push_op(
            Tensor::from_parts(a.shape().to_vec(), data),
            &[self, other],
            |g, _| vec![Some(g.clone()), Some(g.map(|v| -v))],
        ))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        self.same_shape(&other, "mul")?;
        let (a, b) = (self.value(), other.value());
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
        Ok(self.graph.push_op(
            Tensor::from_parts(a.shape().to_vec(), data),
            &[self, other],
            move |g, needs| {
                let ga = needs[0].then(|| {
                    let d = g.data().iter().zip(b.data()).map(|(&u, &y)| u * y).collect();
                    Tensor::from_parts(g.shape().to_vec(), d)
                });
                let gb = needs[1].then(|| {
                    let d = g.data().iter().zip(a.data()).map(|(&u, &x)| u * x).collect();
                    Tensor::from_parts(g.shape().to_vec(), d)
                });
                vec![ga, gb]
            },
        ))
    }

    /// Adds a length-`cols` vector to every row.
    pub fn add_row(self, bias: Var<'g, F>) -> Result<Var<'g, F>> {
        let (a, b) = (self.value(), bias.value());
        let cols = a.cols();
        if b.len() != cols {
            return Err(mismatch("add_row", a.shape(), b.shape()));
        }
        let data = a
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(b.data()).map(|(&x, &y)| x + y))
            .collect();
        let bshape = b.shape().to_vec();
        Ok(self.graph.push_op(
            Tensor::from_parts(a.shape().to_vec(), data),
            &[self, bias],
            move |g, needs| {
                let gb = needs[1].then(|| {
                    let mut acc = vec![F::zero(); cols];
                    for row in g.data().chunks(cols) {
                        for (s, &v) in acc.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    Tensor::from_parts(bshape.clone(), acc)
                });
                vec![Some(g.clone()), gb]
            },
        ))
    }

    /// Multiplies every row elementwise by a length-`cols` vector.
    pub fn mul_row(self, scale: Var<'g, F>) -> Result<Var<'g, F>> {
        let (a, s) = (self.value(), scale.value());
        let cols = a.cols();
        if s.len() != cols {
            return Err(mismatch("mul_row", a.shape(), s.shape()));
        }
        let data = a
            .data()
            .chunks(cols)
            .flat_map(|row| row.iter().zip(s.data()).map(|(&x, &y)| x * y))
            .collect();
        let sshape = s.shape().to_vec();
        Ok(self.graph.push_op(
            Tensor::from_parts(a.shape().to_vec(), data),
            &[self, scale],
            move |g, needs| {
                let ga = needs[0].then(|| {
                    let d = g
                        .data()
                        .chunks(cols)
                        .flat_map(|row| row.iter().zip(s.data()).map(|(&u, &y)| u * y))
                        .collect();
                    Tensor::from_parts(g.shape().to_vec(), d)
                });
                let gs = needs[1].then(|| {
                    let mut acc = vec![F::zero(); cols];
                    for (grow, xrow) in g.data().chunks(cols).zip(a.data().chunks(cols)) {
                        for ((s, &u), &x) in acc.iter_mut().zip(grow).zip(xrow) {
                            *s += u * x;
                        }
                    }
                    Tensor::from_parts(sshape.clone(), acc)
                });
                vec![ga, gs]
            },
        ))
    }

    pub fn scale(self, c: F) -> Var<'g, F> {
        let data = self.value().data().iter().map(|&x| x * c).collect();
        self.unary(data, move |g| g.map(|v| v * c))
    }

    pub fn neg(self) -> Var<'g, F> {
        self.scale(-F::one())
    }

    pub fn add_scalar(self, c: F) -> Var<'g, F> {
        let data = self.value().data().iter().map(|&x| x + c).collect();
        self.unary(data, |g| g.clone())
    }

    pub fn sqr(self) -> Var<'g, F> {
        let x = self.value();
        let data = x.data().iter().map(|&v| v * v).collect();
        self.unary(data, move |g| {
            let two = F::lit(2.0);
            let d = g.data().iter().zip(x.data()).map(|(&u, &v)| two * u * v).collect();
            Tensor::from_parts(g.shape().to_vec(), d)
        })
    }

    /// Absolute value; the subgradient at zero is zero.
    pub fn abs(self) -> Var<'g, F> {
        let x = self.value();
        let data = x.data().iter().map(|&v| v.abs()).collect();
        self.unary(data, move |g| {
            let d = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&u, &v)| {
                    if v > F::zero() {
                        u
                    } else if v < F::zero() {
                        -u
                    } else {
                        F::zero()
                    }
                })
                .collect();
            Tensor::from_parts(g.shape().to_vec(), d)
        })
    }

    pub fn relu(self) -> Var<'g, F> {
        let x = self.value();
        let data = x.data().iter().map(|&v| v.max(F::zero())).collect();
        self.unary(data, move |g| {
            let d = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&u, &v)| if v > F::zero() { u } else { F::zero() })
                .collect();
            Tensor::from_parts(g.shape().to_vec(), d)
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'g, F> {
        let x = self.value();
        let k = F::lit((2.0 / std::f64::consts::PI).sqrt());
        let c = F::lit(0.044715);
        let half = F::lit(0.5);
        let data = x
            .data()
            .iter()
            .map(|&v| half * v * (F::one() + (k * (v + c * v * v * v)).tanh()))
            .collect();
        self.unary(data, move |g| {
            let three = F::lit(3.0);
            let d = g
                .data()
                .iter()
                .zip(x.data())
                .map(|(&u, &v)| {
                    let th = (k * (v + c * v * v * v)).tanh();
                    let dinner = k * (F::one() + three * c * v * v);
                    u * (half * (F::one() + th) + half * v * (F::one() - th * th) * dinner)
                })
                .collect();
            Tensor::from_parts(g.shape().to_vec(), d)
        })
    }

    pub fn sum(self) -> Var<'g, F> {
        let x = self.value();
        // Accumulate wide; f32 reductions over long tapes otherwise dominate
        // finite-difference noise.
        let total = F::lit(x.data().iter().map(|v| v.to_f64_lossy()).sum::<f64>());
        let shape = x.shape().to_vec();
        self.graph
            .push_op(Tensor::scalar(total), &[self], move |g, _| {
                vec![Some(Tensor::full(&shape, g.item()))]
            })
    }

    pub fn mean(self) -> Var<'g, F> {
        let n = F::lit(self.value().len() as f64);
        self.sum().scale(F::one() / n)
    }

    /// Mean absolute difference.
    pub fn l1(self, target: Var<'g, F>) -> Result<Var<'g, F>> {
        Ok(self.sub(target)?.abs().mean())
    }

    /// Mean squared difference.
    pub fn mse(self, target: Var<'g, F>) -> Result<Var<'g, F>> {
        Ok(self.sub(target)?.sqr().mean())
    }

    /// Euclidean norm of the flattened difference.
    pub fn l2_dist(self, target: Var<'g, F>) -> Result<Var<'g, F>> {
        let sq = self.sub(target)?.sqr().sum();
        let v = sq.item();
        let n = v.sqrt();
        let data = vec![n];
        Ok(sq.unary(data, move |g| {
            let d = if n > F::zero() {
                g.item() / (F::lit(2.0) * n)
            } else {
                F::zero()
            };
            Tensor::scalar(d)
        }))
    }

    /// `[m×k] · [k×n]`
    pub fn matmul(self, other: Var<'g, F>) -> Result<Var<'g, F>> {
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
            return Err(mismatch("matmul", a.shape(), b.shape()));
        }
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let out = kernels::matmul(a.data(), b.data(), m, k, n);
        Ok(self.graph.push_op(
            Tensor::from_parts(vec![m, n], out),
            &[self, other],
            move |g, needs| {
                let ga = needs[0]
                    .then(|| Tensor::from_parts(vec![m, k], kernels::matmul_nt(g.data(), b.data(), m, n, k)));
                let gb = needs[1]
                    .then(|| Tensor::from_parts(vec![k, n], kernels::matmul_tn(a.data(), g.data(), m, k, n)));
                vec![ga, gb]
            },
        ))
    }

    pub fn transpose(self) -> Result<Var<'g, F>> {
        let a = self.value();
        if a.shape().len() != 2 {
            return Err(invalid("transpose", format!("expected a matrix, got {:?}", a.shape())));
        }
        let (r, c) = (a.shape()[0], a.shape()[1]);
        Ok(self.graph.push_op(
            Tensor::from_parts(vec![c, r], kernels::transpose(a.data(), r, c)),
            &[self],
            move |g, _| vec![Some(Tensor::from_parts(vec![r, c], kernels::transpose(g.data(), c, r)))],
        ))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g, F>> {
        let a = self.value();
        let t = a.reshape(shape)?;
        let orig = a.shape().to_vec();
        Ok(self.graph.push_op(t, &[self], move |g, _| {
            vec![Some(Tensor::from_parts(orig.clone(), g.data().to_vec()))]
        }))
    }

    pub fn softmax_rows(self) -> Var<'g, F> {
        let x = self.value();
        let (r, c) = (x.rows(), x.cols());
        let p = Rc::new(Tensor::from_parts(
            x.shape().to_vec(),
            kernels::softmax_rows(x.data(), r, c),
        ));
        let out = (*p).clone();
        self.graph.push_op(out, &[self], move |g, _| {
            let mut d = vec![F::zero(); r * c];
            for i in 0..r {
                let pr = &p.data()[i * c..(i + 1) * c];
                let gr = &g.data()[i * c..(i + 1) * c];
                let dot: F = pr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..c {
                    d[i * c + j] = pr[j] * (gr[j] - dot);
                }
            }
            vec![Some(Tensor::from_parts(g.shape().to_vec(), d))]
        })
    }

    pub fn log_softmax_rows(self) -> Var<'g, F> {
        let x = self.value();
        let (r, c) = (x.rows(), x.cols());
        let ls = kernels::log_softmax_rows(x.data(), r, c);
        let p: Vec<F> = ls.iter().map(|v| v.exp()).collect();
        self.graph.push_op(
            Tensor::from_parts(x.shape().to_vec(), ls),
            &[self],
            move |g, _| {
                let mut d = vec![F::zero(); r * c];
                for i in 0..r {
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let s: F = gr.iter().copied().sum();
                    for j in 0..c {
                        d[i * c + j] = gr[j] - p[i * c + j] * s;
                    }
                }
                vec![Some(Tensor::from_parts(g.shape().to_vec(), d))]
            },
        )
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine).
    pub fn layer_norm_rows(self, eps: F) -> Var<'g, F> {
        let x = self.value();
        let (r, c) = (x.rows(), x.cols());
        let cf = F::lit(c as f64);
        let mut xhat = vec![F::zero(); r * c];
        let mut inv_std = vec![F::zero(); r];
        for i in 0..r {
            let row = &x.data()[i * c..(i + 1) * c];
            let mu = row.iter().copied().sum::<F>() / cf;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() / cf;
            let is = F::one() / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                xhat[i * c + j] = (row[j] - mu) * is;
            }
        }
        let xh = xhat.clone();
        self.graph.push_op(
            Tensor::from_parts(x.shape().to_vec(), xhat),
            &[self],
            move |g, _| {
                let mut d = vec![F::zero(); r * c];
                for i in 0..r {
                    let gr = &g.data()[i * c..(i + 1) * c];
                    let xr = &xh[i * c..(i + 1) * c];
                    let mg = gr.iter().copied().sum::<F>() / cf;
                    let mgx = gr.iter().zip(xr).map(|(&a, &b)| a * b).sum::<F>() / cf;
                    for j in 0..c {
                        d[i * c + j] = inv_std[i] * (gr[j] - mg - xr[j] * mgx);
                    }
                }
                vec![Some(Tensor::from_parts(g.shape().to_vec(), d))]
            },
        )
    }

    /// Row lookup into an `[n×c]` table.
    pub fn embedding(self, indices: &[usize]) -> Result<Var<'g, F>> {
        let table = self.value();
        let (n, c) = (table.rows(), table.cols());
        if indices.is_empty() {
            return Err(invalid("embedding", "no indices"));
        }
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= n {
                return Err(TensorError::OutOfRange {
                    op: "embedding",
                    index: i,
                    extent: n,
                });
            }
            out.extend_from_slice(table.row(i));
        }
        let idx = indices.to_vec();
        let tshape = table.shape().to_vec();
        Ok(self.graph.push_op(
            Tensor::from_parts(vec![indices.len(), c], out),
            &[self],
            move |g, _| {
                let mut d = vec![F::zero(); n * c];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += g.data()[r * c + j];
                    }
                }
                vec![Some(Tensor::from_parts(tshape.clone(), d))]
            },
        ))
    }

    /// Temporal convolution of `[t×cin]` with a `[k, cin, cout]` kernel.
    pub fn conv1d(self, kernel: Var<'g, F>, stride: usize, padding: Padding) -> Result<Var<'g, F>> {
        let (x, w) = (self.value(), kernel.value());
        if stride == 0 {
            return Err(invalid("conv1d", "stride must be positive"));
        }
        if w.shape().len() != 3 {
            return Err(invalid("conv1d", format!("kernel must be [k, cin, cout], got {:?}", w.shape())));
        }
        let (k, cin, cout) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        let (t, xc) = (x.rows(), x.cols());
        if xc != cin {
            return Err(mismatch("conv1d", x.shape(), w.shape()));
        }
        let padded = t + padding.left + padding.right;
        if padded < k {
            return Err(invalid(
                "conv1d",
                format!("padded length {padded} shorter than kernel {k}"),
            ));
        }
        let t_out = (padded - k) / stride + 1;
        let cols = kernels::im2col(x.data(), t, cin, k, stride, padding.left, t_out);
        let out = kernels::matmul(&cols, w.data(), t_out, k * cin, cout);
        let pl = padding.left;
        Ok(self.graph.push_op(
            Tensor::from_parts(vec![t_out, cout], out),
            &[self, kernel],
            move |g, needs| {
                let gx = needs[0].then(|| {
                    let dcols = kernels::matmul_nt(g.data(), w.data(), t_out, cout, k * cin);
                    Tensor::from_parts(
                        vec![t, cin],
                        kernels::col2im(&dcols, t, cin, k, stride, pl, t_out),
                    )
                });
                let gw = needs[1].then(|| {
                    Tensor::from_parts(
                        vec![k, cin, cout],
                        kernels::matmul_tn(&cols, g.data(), t_out, k * cin, cout),
                    )
                });
                vec![gx, gw]
            },
        ))
    }

    /// Repeats every row `factor` times (nearest-neighbour upsampling in time).
    pub fn upsample_rows(self, factor: usize) -> Result<Var<'g, F>> {
        if factor == 0 {
            return Err(invalid("upsample_rows", "factor must be positive"));
        }
        let x = self.value();
        let (t, c) = (x.rows(), x.cols());
        let mut out = Vec::with_capacity(t * factor * c);
        for i in 0..t {
            for _ in 0..factor {
                out.extend_from_slice(x.row(i));
            }
        }
        Ok(self.graph.push_op(
            Tensor::from_parts(vec![t * factor, c], out),
            &[self],
            move |g, _| {
                let mut d = vec![F::zero(); t * c];
                for i in 0..t * factor {
                    let src = i / factor;
                    for j in 0..c {
                        d[src * c + j] += g.data()[i * c + j];
                    }
                }
                vec![Some(Tensor::from_parts(vec![t, c], d))]
            },
        ))
    }

    /// Inverted dropout. With `train == false` or `p == 0` this is the identity.
    pub fn dropout<R: Rng + ?Sized>(self, p: f64, train: bool, rng: &mut R) -> Result<Var<'g, F>> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("dropout", format!("probability {p} outside [0, 1)")));
        }
        if !train || p == 0.0 {
            return Ok(self);
        }
        let x = self.value();
        let keep = F::lit(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..x.len())
            .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
            .collect();
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.unary(data, move |g| {
            let d = g.data().iter().zip(&mask).map(|(&u, &m)| u * m).collect();
            Tensor::from_parts(g.shape().to_vec(), d)
        }))
    }

    /// Per-row negative log-likelihood of `targets` under softmax logits.
    /// Returns a `[rows]` vector.
    pub fn cross_entropy_rows(self, targets: &[usize]) -> Result<Var<'g, F>> {
        let x = self.value();
        let (r, c) = (x.rows(), x.cols());
        if targets.len() != r {
            return Err(invalid(
                "cross_entropy",
                format!("{} targets for {r} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::OutOfRange {
                op: "cross_entropy",
                index: bad,
                extent: c,
            });
        }
        let ls = kernels::log_softmax_rows(x.data(), r, c);
        let losses: Vec<F> = targets
            .iter()
            .enumerate()
            .map(|(i, &t)| -ls[i * c + t])
            .collect();
        let tg = targets.to_vec();
        Ok(self.graph.push_op(
            Tensor::from_parts(vec![r], losses),
            &[self],
            move |g, _| {
                let mut d = vec![F::zero(); r * c];
                for i in 0..r {
                    let gi = g.data()[i];
                    for j in 0..c {
                        d[i * c + j] = gi * ls[i * c + j].exp();
                    }
                    d[i * c + tg[i]] -= gi;
                }
                vec![Some(Tensor::from_parts(vec![r, c], d))]
            },
        ))
    }

    /// Mean cross-entropy over rows.
    pub fn cross_entropy(self, targets: &[usize]) -> Result<Var<'g, F>> {
        Ok(self.cross_entropy_rows(targets)?.mean())
    }

    /// Stacks along the row axis; all parts must share the column count.
    pub fn concat_rows(parts: &[Var<'g, F>]) -> Result<Var<'g, F>> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat_rows", "nothing to concatenate"))?;
        let c = first.value().cols();
        let mut rows = Vec::with_capacity(parts.len());
        let mut data = Vec::new();
        for p in parts {
            let v = p.value();
            if v.cols() != c {
                return Err(mismatch("concat_rows", first.value().shape(), v.shape()));
            }
            rows.push(v.rows());
            data.extend_from_slice(v.data());
        }
        let total: usize = rows.iter().sum();
        Ok(first.graph.push_op(
            Tensor::from_parts(vec![total, c], data),
            parts,
            move |g, needs| {
                let mut off = 0;
                rows.iter()
                    .zip(needs)
                    .map(|(&r, &need)| {
                        let slice = need.then(|| {
                            Tensor::from_parts(vec![r, c], g.data()[off * c..(off + r) * c].to_vec())
                        });
                        off += r;
                        slice
                    })
                    .collect()
            },
        ))
    }

    /// Stacks along the column axis; all parts must share the row count.
    pub fn concat_cols(parts: &[Var<'g, F>]) -> Result<Var<'g, F>> {
        let first = parts
            .first()
            .ok_or_else(|| invalid("concat_cols", "nothing to concatenate"))?;
        let r = first.value().rows();
        let values: Vec<Rc<Tensor<F>>> = parts.iter().map(|p| p.value()).collect();
        for v in &values {
            if v.rows() != r {
                return Err(mismatch("concat_cols", first.value().shape(), v.shape()));
            }
        }
        let widths: Vec<usize> = values.iter().map(|v| v.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for v in &values {
                data.extend_from_slice(v.row(i));
            }
        }
        Ok(first.graph.push_op(
            Tensor::from_parts(vec![r, total], data),
            parts,
            move |g, needs| {
                let mut off = 0;
                widths
                    .iter()
                    .zip(needs)
                    .map(|(&w, &need)| {
                        let part = need.then(|| {
                            let mut d = Vec::with_capacity(r * w);
                            for i in 0..r {
                                d.extend_from_slice(&g.data()[i * total + off..i * total + off + w]);
                            }
                            Tensor::from_parts(vec![r, w], d)
                        });
                        off += w;
                        part
                    })
                    .collect()
            },
        ))
    }

    /// Rows `[start, end)`, keeping trailing extents.
    pub fn slice_rows(self, start: usize, end: usize) -> Result<Var<'g, F>> {
        let x = self.value();
        let (r, c) = (x.rows(), x.cols());
        if start >= end || end > r {
            return Err(invalid("slice_rows", format!("range {start}..{end} of {r} rows")));
        }
        let mut shape = x.shape().to_vec();
        shape[0] = end - start;
        let oshape = x.shape().to_vec();
        Ok(self.graph.push_op(
            Tensor::from_parts(shape, x.data()[start * c..end * c].to_vec()),
            &[self],
            move |g, _| {
                let mut d = vec![F::zero(); r * c];
                d[start * c..end * c].copy_from_slice(g.data());
                vec![Some(Tensor::from_parts(oshape.clone(), d))]
            },
        ))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'g, F>> {
        let x = self.value();
        let (r, c) = (x.rows(), x.cols());
        if start >= end || end > c {
            return Err(invalid("slice_cols", format!("range {start}..{end} of {c} cols")));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&x.row(i)[start..end]);
        }
        Ok(self.graph.push_op(
            Tensor::from_parts(vec![r, w], data),
            &[self],
            move |g, _| {
                let mut d = vec![F::zero(); r * c];
                for i in 0..r {
                    d[i * c + start..i * c + end].copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                }
                vec![Some(Tensor::from_parts(vec![r, c], d))]
            },
        ))
    }

    /// Forward difference along rows: `x[t+1] − x[t]`, one row shorter.
    pub fn diff_rows(self) -> Result<Var<'g, F>> {
        let r = self.value().rows();
        if r < 2 {
            return Err(invalid("diff_rows", "need at least two rows"));
        }
        self.slice_rows(1, r)?.sub(self.slice_rows(0, r - 1)?)
    }

    /// Identity forward; contributes no gradient to `self`.
    pub fn stop_gradient(self) -> Var<'g, F> {
        self.graph.push_detached(self.value())
    }

    /// Forward value `replacement`, backward identity onto `self`
    /// (straight-through estimator).
    pub fn straight_through(self, replacement: Tensor<F>) -> Result<Var<'g, F>> {
        let x = self.value();
        if x.shape() != replacement.shape() {
            return Err(mismatch("straight_through", x.shape(), replacement.shape()));
        }
        Ok(self.graph.push_op(replacement, &[self], |g, _| vec![Some(g.clone())]))
    }

    /// Adds a constant tensor of the same shape (e.g. an additive attention mask).
    pub fn add_const(self, c: &Tensor<F>) -> Result<Var<'g, F>> {
        let x = self.value();
        if x.shape() != c.shape() {
            return Err(mismatch("add_const", x.shape(), c.shape()));
        }
        let data = x.data().iter().zip(c.data()).map(|(&a, &b)| a + b).collect();
        Ok(self.unary(data, |g| g.clone()))
    }

    /// Elementwise product with a constant tensor of the same shape.
    pub fn mul_const(self, c: &Tensor<F>) -> Result<Var<'g, F>> {
        let x = self.value();
        if x.shape() != c.shape() {
            return Err(mismatch("mul_const", x.shape(), c.shape()));
        }
        let data = x.data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
        let c = c.clone();
        Ok(self.unary(data, move |g| {
            let d = g.data().iter().zip(c.data()).map(|(&u, &b)| u * b).collect();
            Tensor::from_parts(g.shape().to_vec(), d)
        }))
    }
}
