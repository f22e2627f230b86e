//! Layers with explicit forward and backward passes.
//!
//! Activations are row-major matrices. Convolution feature maps use an
//! NHWC layout flattened to `[batch * height * width, channels]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use std::fmt::{Debug, Display};

pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub(crate) fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn relu_inplace<F: Scalar>(a: &mut Array2<F>) {
    a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Zero the gradient wherever the (post-ReLU) activation was not positive.
fn relu_backward<F: Scalar>(grad: &mut Array2<F>, activation: &Array2<F>) {
    Zip::from(grad).and(activation).for_each(|g, &a| {
        if a <= F::zero() {
            *g = F::zero();
        }
    });
}

fn uniform<F: Scalar, R: Rng + ?Sized>(
    shape: (usize, usize),
    bound: f64,
    rng: &mut R,
) -> Array2<F> {
    Array2::from_shape_simple_fn(shape, || F::c(rng.random_range(-bound..=bound)))
}

/// Affine map `y = x W + b`, `W: [in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            weight: uniform((input, output), bound, rng),
            bias: Array1::from_shape_simple_fn(output, || F::c(rng.random_range(-bound..=bound))),
        }
    }

    /// He-style init for layers followed by a ReLU.
    pub fn init_relu<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / input as f64).sqrt();
        Linear {
            weight: uniform((input, output), bound, rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Linear {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Array2<F> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    pub fn forward_vec(&self, x: ArrayView1<F>) -> Array1<F> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulate parameter gradients into `grad`; returns `dL/dx` when asked.
    pub fn backward(
        &self,
        x: ArrayView2<F>,
        dy: ArrayView2<F>,
        grad: &mut Linear<F>,
        need_dx: bool,
    ) -> Option<Array2<F>> {
        general_mat_mul(F::one(), &x.t(), &dy, F::one(), &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        need_dx.then(|| dy.dot(&self.weight.t()))
    }
}

/// Two affine maps with a ReLU between them.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<F> {
    pub l1: Linear<F>,
    pub l2: Linear<F>,
}

pub struct MlpCache<F> {
    hidden: Array2<F>,
}

impl<F: Scalar> Mlp<F> {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Mlp {
            l1: Linear::init_relu(input, hidden, rng),
            l2: Linear::init(hidden, output, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Mlp {
            l1: self.l1.zeros_like(),
            l2: self.l2.zeros_like(),
        }
    }

    pub fn forward(&self, x: ArrayView2<F>) -> (Array2<F>, MlpCache<F>) {
        let mut hidden = self.l1.forward(x);
        relu_inplace(&mut hidden);
        let y = self.l2.forward(hidden.view());
        (y, MlpCache { hidden })
    }

    pub fn backward(
        &self,
        x: ArrayView2<F>,
        cache: &MlpCache<F>,
        dy: ArrayView2<F>,
        grad: &mut Mlp<F>,
        need_dx: bool,
    ) -> Option<Array2<F>> {
        let mut dh = self
            .l2
            .backward(cache.hidden.view(), dy, &mut grad.l2, true)
            .expect("requested");
        relu_backward(&mut dh, &cache.hidden);
        self.l1.backward(x, dh.view(), &mut grad.l1, need_dx)
    }
}

/// Gated attention pooling scores: `w^T (tanh(V h) * sigmoid(U h))`,
/// softmax-normalized within consecutive groups of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedAttention<F> {
    pub v: Linear<F>,
    pub u: Linear<F>,
    pub w: Array1<F>,
}

pub struct AttentionCache<F> {
    tanh: Array2<F>,
    gate: Array2<F>,
}

impl<F: Scalar> GatedAttention<F> {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GatedAttention {
            v: Linear::init(input, hidden, rng),
            u: Linear::init(input, hidden, rng),
            w: Array1::from_shape_simple_fn(hidden, || F::c(rng.random_range(-bound..=bound))),
        }
    }

    pub fn zeros_like(&self) -> Self {
        GatedAttention {
            v: self.v.zeros_like(),
            u: self.u.zeros_like(),
            w: Array1::zeros(self.w.len()),
        }
    }

    /// Raw scores for each row of `x`.
    pub fn scores(&self, x: ArrayView2<F>) -> (Array1<F>, AttentionCache<F>) {
        let tanh = self.v.forward(x).mapv_into(|v| v.tanh());
        let gate = self.u.forward(x).mapv_into(sigmoid);
        let scores = (&tanh * &gate).dot(&self.w);
        (scores, AttentionCache { tanh, gate })
    }

    /// Attention weights, softmax over each group of `group` consecutive rows.
    pub fn forward(&self, x: ArrayView2<F>, group: usize) -> (Array1<F>, AttentionCache<F>) {
        let (scores, cache) = self.scores(x);
        (grouped_softmax(scores.view(), group), cache)
    }

    /// Backward from `dL/dalpha` to parameters and, optionally, `dL/dx`.
    pub fn backward(
        &self,
        x: ArrayView2<F>,
        cache: &AttentionCache<F>,
        alpha: ArrayView1<F>,
        dalpha: ArrayView1<F>,
        group: usize,
        grad: &mut GatedAttention<F>,
        need_dx: bool,
    ) -> Option<Array2<F>> {
        let dscore = grouped_softmax_backward(alpha, dalpha, group);
        let prod = &cache.tanh * &cache.gate;
        grad.w += &prod.t().dot(&dscore);
        // d(prod)[n, j] = dscore[n] * w[j]
        let dprod = outer(dscore.view(), self.w.view());
        let mut dpre_v = &dprod * &cache.gate;
        Zip::from(&mut dpre_v)
            .and(&cache.tanh)
            .for_each(|d, &t| *d *= F::one() - t * t);
        let mut dpre_u = &dprod * &cache.tanh;
        Zip::from(&mut dpre_u)
            .and(&cache.gate)
            .for_each(|d, &g| *d = *d * g * (F::one() - g));
        let dx_v = self.v.backward(x, dpre_v.view(), &mut grad.v, need_dx);
        let dx_u = self.u.backward(x, dpre_u.view(), &mut grad.u, need_dx);
        match (dx_v, dx_u) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        }
    }
}

pub(crate) fn outer<F: Scalar>(a: ArrayView1<F>, b: ArrayView1<F>) -> Array2<F> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}

pub fn softmax<F: Scalar>(x: ArrayView1<F>) -> Array1<F> {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let e = x.mapv(|v| (v - max).exp());
    let total = e.sum();
    e / total
}

pub(crate) fn grouped_softmax<F: Scalar>(x: ArrayView1<F>, group: usize) -> Array1<F> {
    assert!(
        group > 0 && x.len().is_multiple_of(group),
        "softmax groups must tile the input"
    );
    let mut out = Array1::zeros(x.len());
    for (src, mut dst) in x
        .exact_chunks(group)
        .into_iter()
        .zip(out.exact_chunks_mut(group))
    {
        dst.assign(&softmax(src));
    }
    out
}

/// `ds = alpha * (dalpha - <alpha, dalpha>)` within each group.
pub(crate) fn grouped_softmax_backward<F: Scalar>(
    alpha: ArrayView1<F>,
    dalpha: ArrayView1<F>,
    group: usize,
) -> Array1<F> {
    let mut out = Array1::zeros(alpha.len());
    for ((a, da), mut ds) in alpha
        .exact_chunks(group)
        .into_iter()
        .zip(dalpha.exact_chunks(group))
        .zip(out.exact_chunks_mut(group))
    {
        let dot = a.dot(&da);
        Zip::from(&mut ds)
            .and(&a)
            .and(&da)
            .for_each(|s, &ai, &dai| *s = ai * (dai - dot));
    }
    out
}

/// 3x3 convolution, stride 2, zero padding 1, followed by ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<F> {
    /// `[9 * in_channels, out_channels]`, rows ordered (ky, kx, c_in).
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

pub struct ConvCache<F> {
    cols: Array2<F>,
    output: Array2<F>,
    in_hw: (usize, usize),
}

pub fn conv_output_side(n: usize) -> usize {
    n.div_ceil(2)
}

impl<F: Scalar> Conv<F> {
    pub fn init<R: Rng + ?Sized>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        let fan_in = 9 * in_channels;
        let bound = (6.0 / fan_in as f64).sqrt();
        Conv {
            weight: uniform((fan_in, out_channels), bound, rng),
            bias: Array1::zeros(out_channels),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Conv {
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.nrows() / 9
    }

    pub fn out_channels(&self) -> usize {
        self.weight.ncols()
    }

    /// `input`: `[batch * h * w, c_in]` → `[batch * ho * wo, c_out]`.
    pub fn forward(
        &self,
        input: ArrayView2<F>,
        batch: usize,
        hw: (usize, usize),
    ) -> (Array2<F>, ConvCache<F>) {
        let cols = im2col(input, batch, hw, self.in_channels());
        let mut output = cols.dot(&self.weight);
        output += &self.bias;
        relu_inplace(&mut output);
        let cache = ConvCache {
            output: output.clone(),
            cols,
            in_hw: hw,
        };
        (output, cache)
    }

    pub fn backward(
        &self,
        cache: &ConvCache<F>,
        dout: &Array2<F>,
        batch: usize,
        grad: &mut Conv<F>,
        need_dx: bool,
    ) -> Option<Array2<F>> {
        let mut dpre = dout.clone();
        relu_backward(&mut dpre, &cache.output);
        general_mat_mul(F::one(), &cache.cols.t(), &dpre, F::one(), &mut grad.weight);
        grad.bias += &dpre.sum_axis(Axis(0));
        if !need_dx {
            return None;
        }
        let dcols = dpre.dot(&self.weight.t());
        Some(col2im(dcols.view(), batch, cache.in_hw, self.in_channels()))
    }
}

fn im2col<F: Scalar>(
    input: ArrayView2<F>,
    batch: usize,
    (h, w): (usize, usize),
    cin: usize,
) -> Array2<F> {
    let (ho, wo) = (conv_output_side(h), conv_output_side(w));
    let input = input.as_standard_layout();
    let src = input.as_slice().expect("standard layout");
    assert_eq!(src.len(), batch * h * w * cin);
    let width = 9 * cin;
    let mut cols = Array2::<F>::zeros((batch * ho * wo, width));
    let dst = cols.as_slice_mut().expect("fresh array");
    for b in 0..batch {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * width;
                for ky in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let s = ((b * h + iy as usize) * w + ix as usize) * cin;
                        let d = row + (ky * 3 + kx) * cin;
                        dst[d..d + cin].copy_from_slice(&src[s..s + cin]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<F: Scalar>(
    dcols: ArrayView2<F>,
    batch: usize,
    (h, w): (usize, usize),
    cin: usize,
) -> Array2<F> {
    let (ho, wo) = (conv_output_side(h), conv_output_side(w));
    let dcols = dcols.as_standard_layout();
    let src = dcols.as_slice().expect("standard layout");
    let width = 9 * cin;
    let mut dx = Array2::<F>::zeros((batch * h * w, cin));
    let dst = dx.as_slice_mut().expect("fresh array");
    for b in 0..batch {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * width;
                for ky in 0..3 {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let d = ((b * h + iy as usize) * w + ix as usize) * cin;
                        let s = row + (ky * 3 + kx) * cin;
                        for c in 0..cin {
                            dst[d + c] += src[s + c];
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let x = array![1.0f64, -2.0, 0.5, 3.0];
        let a = softmax(x.view());
        assert!((a.sum() - 1.0).abs() < 1e-12);
        let b = softmax((&x + 17.0).view());
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv: Conv<f64> = Conv::init(2, 3, &mut rng);
        let (b, h, w, cin) = (2, 5, 6, 2);
        let input = Array2::from_shape_fn((b * h * w, cin), |(i, c)| {
            ((i * 7 + c * 3) % 11) as f64 / 11.0 - 0.4
        });
        let (out, _) = conv.forward(input.view(), b, (h, w));
        let (ho, wo) = (3, 3);
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    for co in 0..3 {
                        let mut acc = conv.bias[co];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let iy = 2 * oy as isize + ky as isize - 1;
                                let ix = 2 * ox as isize + kx as isize - 1;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let v = input[[(bi * h + iy as usize) * w + ix as usize, ci]];
                                    acc += v * conv.weight[[(ky * 3 + kx) * cin + ci, co]];
                                }
                            }
                        }
                        let expect = acc.max(0.0);
                        let got = out[[(bi * ho + oy) * wo + ox, co]];
                        assert!((got - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (b, h, w, cin) = (2, 4, 5, 3);
        let x = Array2::from_shape_fn((b * h * w, cin), |(i, c)| ((i + 2 * c) % 5) as f64 - 2.0);
        let cols = im2col(x.view(), b, (h, w), cin);
        let y = Array2::from_shape_fn(cols.raw_dim(), |(i, j)| ((3 * i + j) % 7) as f64 - 3.0);
        let back = col2im(y.view(), b, (h, w), cin);
        let lhs: f64 = (&cols * &y).sum();
        let rhs: f64 = (&x * &back).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn grouped_softmax_backward_matches_finite_difference() {
        let x = array![0.3f64, -1.2, 0.8, 2.0, 0.1, -0.5];
        let upstream = array![1.0f64, 0.5, -2.0, 0.3, 0.0, 1.5];
        let f = |x: &Array1<f64>| grouped_softmax(x.view(), 3).dot(&upstream);
        let a = grouped_softmax(x.view(), 3);
        let ds = grouped_softmax_backward(a.view(), upstream.view(), 3);
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += 1e-6;
            let mut m = x.clone();
            m[i] -= 1e-6;
            let fd = (f(&p) - f(&m)) / 2e-6;
            assert!((fd - ds[i]).abs() < 1e-8);
        }
    }
}
