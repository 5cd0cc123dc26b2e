//! Named-parameter building blocks shared by the models.

use choreo_autograd::{Bound, Padding, ParamStore, Real, Result, Tensor, Var};
use rand::Rng;

/// Uniform `±1/sqrt(fan_in)` initialisation.
fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<f32> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

pub fn init_conv<R: Rng + ?Sized>(
    store: &mut ParamStore<f32>,
    rng: &mut R,
    name: &str,
    k: usize,
    cin: usize,
    cout: usize,
) -> Result<()> {
    store.insert(format!("{name}.w"), fan_in_uniform(&[k, cin, cout], k * cin, rng))?;
    store.insert(format!("{name}.b"), fan_in_uniform(&[cout], k * cin, rng))
}

pub fn init_linear<R: Rng + ?Sized>(
    store: &mut ParamStore<f32>,
    rng: &mut R,
    name: &str,
    cin: usize,
    cout: usize,
    bias: bool,
) -> Result<()> {
    store.insert(format!("{name}.w"), fan_in_uniform(&[cin, cout], cin, rng))?;
    if bias {
        store.insert(format!("{name}.b"), Tensor::zeros(&[cout]))?;
    }
    Ok(())
}

pub fn init_layer_norm(store: &mut ParamStore<f32>, name: &str, dim: usize) -> Result<()> {
    store.insert(format!("{name}.g"), Tensor::full(&[dim], 1.0))?;
    store.insert(format!("{name}.b"), Tensor::zeros(&[dim]))
}

/// Extends the time axis by repeating the first and last rows.
pub fn replicate_pad<'g, F: Real>(x: Var<'g, F>, left: usize, right: usize) -> Result<Var<'g, F>> {
    if left == 0 && right == 0 {
        return Ok(x);
    }
    let t = x.value().rows();
    let mut parts = Vec::with_capacity(left + right + 1);
    let first = x.slice_rows(0, 1)?;
    let last = x.slice_rows(t - 1, t)?;
    parts.extend(std::iter::repeat_n(first, left));
    parts.push(x);
    parts.extend(std::iter::repeat_n(last, right));
    Var::concat_rows(&parts)
}

/// Convolution with edge-replicating padding; `(k - stride)` frames of
/// padding are split evenly so the output has `T / stride` rows.
pub fn conv<'g, F: Real>(b: &Bound<'g, F>, name: &str, x: Var<'g, F>, stride: usize) -> Result<Var<'g, F>> {
    let w = b.var(&format!("{name}.w"))?;
    let k = w.value().shape()[0];
    let total = k.saturating_sub(stride);
    let xp = replicate_pad(x, total / 2, total - total / 2)?;
    xp.conv1d(w, stride, Padding::NONE)?
        .add_row(b.var(&format!("{name}.b"))?)
}

pub fn linear<'g, F: Real>(b: &Bound<'g, F>, name: &str, x: Var<'g, F>) -> Result<Var<'g, F>> {
    let y = x.matmul(b.var(&format!("{name}.w"))?)?;
    match b.var(&format!("{name}.b")) {
        Ok(bias) => y.add_row(bias),
        Err(_) => Ok(y),
    }
}

pub fn layer_norm<'g, F: Real>(b: &Bound<'g, F>, name: &str, x: Var<'g, F>) -> Result<Var<'g, F>> {
    x.layer_norm_rows(F::lit(1e-5))
        .mul_row(b.var(&format!("{name}.g"))?)?
        .add_row(b.var(&format!("{name}.b"))?)
}

/// `x + conv1(relu(conv3(relu(x))))`, width preserving.
pub fn init_res_block<R: Rng + ?Sized>(
    store: &mut ParamStore<f32>,
    rng: &mut R,
    name: &str,
    width: usize,
) -> Result<()> {
    init_conv(store, rng, &format!("{name}.c1"), 3, width, width)?;
    init_conv(store, rng, &format!("{name}.c2"), 1, width, width)
}

pub fn res_block<'g, F: Real>(b: &Bound<'g, F>, name: &str, x: Var<'g, F>) -> Result<Var<'g, F>> {
    let h = conv(b, &format!("{name}.c1"), x.relu(), 1)?;
    let h = conv(b, &format!("{name}.c2"), h.relu(), 1)?;
    x.add(h)
}
