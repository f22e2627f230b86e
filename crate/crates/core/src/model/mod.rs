//! The two-tier concept MIL network.
//!
//! Tier 1 embeds every patch with a shared conv encoder, projects the
//! embedding into four concept subspaces (sh, nu, ao, un) and pools patches
//! per slice with one gated attention per concept. Tier 2 concatenates the
//! slice vectors, blocking task gradients into the three predefined segments,
//! and pools slices with a second gated attention before the ordinal task
//! head. Concept heads read the predefined subspaces; adversary heads read
//! the residual subspace through a gradient reversal.
//!
//! Backpropagation is written out by hand so that the stop-gradient and the
//! reversal are exact by construction.

mod checkpoint;
pub mod layers;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, RngState};
pub use layers::{GatedAttention, Linear, Mlp, Scalar};
pub use params::{Encoder, ModelConfig, ModelParams, ParamSet};

use crate::concept::Concept;
use crate::error::{Error, Result};
use layers::{grouped_softmax, outer, AttentionCache, ConvCache, MlpCache};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayView4, Axis, Zip};

/// Identity on the forward pass; multiplies the gradient by `-lambda` on the
/// backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientReversal<F> {
    pub lambda: F,
}

impl<F: Scalar> GradientReversal<F> {
    pub fn new(lambda: F) -> Self {
        GradientReversal { lambda }
    }

    pub fn forward<'a>(&self, x: ArrayView2<'a, F>) -> ArrayView2<'a, F> {
        x
    }

    pub fn backward(&self, grad: Array2<F>) -> Array2<F> {
        grad * (-self.lambda)
    }
}

/// How gradients are routed during backpropagation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientRules<F> {
    /// Block task gradients into the predefined concept segments of the
    /// fused slice vector.
    pub stop_gradient: bool,
    /// Reversal between the residual subspace and the adversary heads;
    /// `None` passes the adversary gradient through unchanged.
    pub reversal: Option<GradientReversal<F>>,
}

impl<F: Scalar> GradientRules<F> {
    pub fn training(lambda_adv: F) -> Self {
        GradientRules {
            stop_gradient: true,
            reversal: Some(GradientReversal::new(lambda_adv)),
        }
    }

    /// Plain chain rule: the true gradient of the summed objective.
    pub fn plain() -> Self {
        GradientRules {
            stop_gradient: false,
            reversal: None,
        }
    }
}

/// Per-slice view of Tier-1 output.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceRepresentation<F> {
    /// Indexed by `Concept::index()`.
    pub z: Vec<Array1<F>>,
    pub alpha: Vec<Array1<F>>,
}

/// Output of the fusion + Tier-2 pooling + task head.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutput<F> {
    /// `[slices, 4L]`, segments ordered sh, nu, ao, un.
    pub fused: Array2<F>,
    pub beta: Array1<F>,
    pub v_vol: Array1<F>,
    pub task_logits: Array1<F>,
}

struct EncoderCache<F> {
    convs: Vec<ConvCache<F>>,
    pooled: Array2<F>,
}

struct Cache<F> {
    encoder: EncoderCache<F>,
    proj: Vec<MlpCache<F>>,
    attn1: Vec<AttentionCache<F>>,
    attn2: AttentionCache<F>,
    adv: Vec<MlpCache<F>>,
}

pub struct Forward<F> {
    pub num_slices: usize,
    pub patches_per_slice: usize,
    /// Shared patch embeddings `[S*K, d]`.
    pub embeddings: Array2<F>,
    /// Projected patch features per concept, `[S*K, L]`.
    pub projected: Vec<Array2<F>>,
    /// Attention over patches per concept, `[S, K]`; rows sum to one.
    pub alpha: Vec<Array2<F>>,
    /// Slice vectors per concept, `[S, L]`.
    pub z: Vec<Array2<F>>,
    pub head: HeadOutput<F>,
    /// Slice-averaged logits per predefined concept.
    pub concept_logits: Vec<Array1<F>>,
    /// Slice-averaged adversary logits per predefined concept.
    pub adv_logits: Vec<Array1<F>>,
    cache: Option<Cache<F>>,
}

impl<F: Scalar> Forward<F> {
    pub fn task_logits(&self) -> &Array1<F> {
        &self.head.task_logits
    }

    pub fn beta(&self) -> &Array1<F> {
        &self.head.beta
    }

    pub fn slice(&self, m: usize) -> SliceRepresentation<F> {
        SliceRepresentation {
            z: self.z.iter().map(|z| z.row(m).to_owned()).collect(),
            alpha: self.alpha.iter().map(|a| a.row(m).to_owned()).collect(),
        }
    }
}

/// Upstream gradients of the network outputs. `None` entries contribute
/// nothing.
#[derive(Clone, Debug)]
pub struct OutputGrads<F> {
    pub task_logits: Option<Array1<F>>,
    pub concept_logits: Vec<Option<Array1<F>>>,
    pub adv_logits: Vec<Option<Array1<F>>>,
    /// Direct gradients on the attention maps `[S, K]`, per concept.
    pub alpha: Vec<Option<Array2<F>>>,
}

impl<F> Default for OutputGrads<F> {
    fn default() -> Self {
        OutputGrads {
            task_logits: None,
            concept_logits: vec![None, None, None],
            adv_logits: vec![None, None, None],
            alpha: vec![None, None, None, None],
        }
    }
}

pub struct Gradients<F> {
    pub params: ModelParams<F>,
    /// `dL/dZ` arriving at each concept subspace `[S, L]`, after the
    /// stop-gradient and reversal rules.
    pub z: Vec<Array2<F>>,
}

/// Linear task head on the pooled volume vector.
pub fn predict_task<F: Scalar>(head: &Linear<F>, v_vol: ArrayView1<F>) -> Array1<F> {
    head.forward_vec(v_vol)
}

/// Per-slice concept logits averaged over slices.
pub fn predict_concept<F: Scalar>(head: &Linear<F>, z: ArrayView2<F>) -> Array1<F> {
    let per_slice = head.forward(z);
    per_slice.mean_axis(Axis(0)).expect("at least one slice")
}

/// Adversary logits on the residual subspace, averaged over slices. The
/// reversal is the identity on this forward pass.
pub fn adversary_forward<F: Scalar>(
    head: &Mlp<F>,
    z_residual: ArrayView2<F>,
    reversal: &GradientReversal<F>,
) -> Array1<F> {
    let (per_slice, _) = head.forward(reversal.forward(z_residual));
    per_slice.mean_axis(Axis(0)).expect("at least one slice")
}

/// Weighted sum of the rows of each group: `out[m] = sum_k w[m,k] x[m*K+k]`.
fn pool_rows<F: Scalar>(weights: ArrayView2<F>, x: ArrayView2<F>) -> Array2<F> {
    let (s, k) = weights.dim();
    let mut out = Array2::zeros((s, x.ncols()));
    for m in 0..s {
        let block = x.slice(s![m * k..(m + 1) * k, ..]);
        out.row_mut(m).assign(&weights.row(m).dot(&block));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcMil<F> {
    pub config: ModelConfig,
    pub params: ModelParams<F>,
}

impl<F: Scalar> AcMil<F> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(AcMil { config, params })
    }

    fn check_input(&self, pixels: &ArrayView4<f32>) -> Result<()> {
        let (s, k, h, w) = pixels.dim();
        if s == 0 {
            return Err(Error::validation("bag has no slices"));
        }
        if k == 0 {
            return Err(Error::validation("slice has no patches"));
        }
        let p = self.config.patch_size;
        if h != p || w != p {
            return Err(Error::validation(format!(
                "patches are {h}x{w}, model expects {p}x{p}"
            )));
        }
        Ok(())
    }

    /// Shared extractor: `[S, K, p, p]` pixels to `[S*K, d]` embeddings.
    pub fn embed_patches(&self, pixels: ArrayView4<f32>) -> Result<Array2<F>> {
        self.check_input(&pixels)?;
        Ok(self.encode(pixels).0)
    }

    fn encode(&self, pixels: ArrayView4<f32>) -> (Array2<F>, EncoderCache<F>) {
        let (s, k, p, _) = pixels.dim();
        let batch = s * k;
        let half = F::c(0.5);
        let mut x: Array2<F> = Array2::from_shape_vec(
            (batch * p * p, 1),
            pixels.iter().map(|&v| F::c(f64::from(v)) - half).collect(),
        )
        .expect("pixel count");
        let mut side = p;
        let mut convs = Vec::with_capacity(4);
        for conv in &self.params.phi.convs {
            let (out, cache) = conv.forward(x.view(), batch, (side, side));
            convs.push(cache);
            x = out;
            side = layers::conv_output_side(side);
        }
        let area = side * side;
        let channels = x.ncols();
        let pooled = x
            .into_shape_with_order((batch, area, channels))
            .expect("feature layout")
            .mean_axis(Axis(1))
            .expect("non-empty feature map");
        let mut h = self.params.phi.fc.forward(pooled.view());
        h.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
        (h, EncoderCache { convs, pooled })
    }

    /// Attention weights of one concept for a set of projected patches,
    /// softmax over each slice's `k` patches.
    pub fn gated_attention(
        &self,
        concept: Concept,
        projected: ArrayView2<F>,
        k: usize,
    ) -> Result<Array1<F>> {
        if k == 0 || projected.nrows() == 0 {
            return Err(Error::validation("attention over zero patches"));
        }
        Ok(self.params.attn1[concept.index()].forward(projected, k).0)
    }

    /// Fuse slice vectors, pool slices with Tier-2 attention and apply the
    /// task head.
    pub fn fuse_and_tier2(&self, z: &[Array2<F>]) -> Result<HeadOutput<F>> {
        if z.len() != 4 || z[0].nrows() == 0 {
            return Err(Error::validation(
                "fusion needs four non-empty concept slice sets",
            ));
        }
        Ok(self.head_forward(z).0)
    }

    fn head_forward(&self, z: &[Array2<F>]) -> (HeadOutput<F>, AttentionCache<F>) {
        let views: Vec<_> = z.iter().map(|a| a.view()).collect();
        let fused = ndarray::concatenate(Axis(1), &views).expect("equal slice counts");
        let s = fused.nrows();
        let (beta, cache) = self.params.attn2.forward(fused.view(), s);
        let v_vol = beta.dot(&fused);
        let task_logits = predict_task(&self.params.task_head, v_vol.view());
        (
            HeadOutput {
                fused,
                beta,
                v_vol,
                task_logits,
            },
            cache,
        )
    }

    /// Full forward pass on a `[S, K, p, p]` bag. `keep_cache` retains what
    /// `backward` needs.
    pub fn forward(&self, pixels: ArrayView4<f32>, keep_cache: bool) -> Result<Forward<F>> {
        self.check_input(&pixels)?;
        let (s, k, _, _) = pixels.dim();
        let (embeddings, enc_cache) = self.encode(pixels);

        let mut projected = Vec::with_capacity(4);
        let mut proj_cache = Vec::with_capacity(4);
        let mut alpha = Vec::with_capacity(4);
        let mut attn1_cache = Vec::with_capacity(4);
        let mut z = Vec::with_capacity(4);
        for c in Concept::ALL {
            let (hc, pc) = self.params.proj[c.index()].forward(embeddings.view());
            let (a, ac) = self.params.attn1[c.index()].forward(hc.view(), k);
            let a = a.into_shape_with_order((s, k)).expect("attention layout");
            z.push(pool_rows(a.view(), hc.view()));
            alpha.push(a);
            projected.push(hc);
            proj_cache.push(pc);
            attn1_cache.push(ac);
        }

        let (head, attn2_cache) = self.head_forward(&z);

        let concept_logits = Concept::PREDEFINED
            .iter()
            .map(|c| predict_concept(&self.params.concept_head[c.index()], z[c.index()].view()))
            .collect();

        let z_un = z[Concept::Residual.index()].view();
        let mut adv_logits = Vec::with_capacity(3);
        let mut adv_cache = Vec::with_capacity(3);
        for head in &self.params.adv_head {
            let (per_slice, cache) = head.forward(z_un);
            adv_logits.push(per_slice.mean_axis(Axis(0)).expect("slices"));
            adv_cache.push(cache);
        }

        let cache = keep_cache.then(|| Cache {
            encoder: enc_cache,
            proj: proj_cache,
            attn1: attn1_cache,
            attn2: attn2_cache,
            adv: adv_cache,
        });

        Ok(Forward {
            num_slices: s,
            patches_per_slice: k,
            embeddings,
            projected,
            alpha,
            z,
            head,
            concept_logits,
            adv_logits,
            cache,
        })
    }

    /// Backward from the fused slice vectors through Tier-2 and the task
    /// head. Returns `dL/dfused` and accumulates head/attention gradients.
    fn head_backward(
        &self,
        head: &HeadOutput<F>,
        attn2_cache: &AttentionCache<F>,
        dlogits: ArrayView1<F>,
        grads: &mut ModelParams<F>,
    ) -> Array2<F> {
        let task = &self.params.task_head;
        grads.task_head.weight += &outer(head.v_vol.view(), dlogits);
        grads.task_head.bias += &dlogits;
        let dv_vol = task.weight.dot(&dlogits);
        let mut dfused = outer(head.beta.view(), dv_vol.view());
        let dbeta = head.fused.dot(&dv_vol);
        let s = head.fused.nrows();
        let dx = self
            .params
            .attn2
            .backward(
                head.fused.view(),
                attn2_cache,
                head.beta.view(),
                dbeta.view(),
                s,
                &mut grads.attn2,
                true,
            )
            .expect("requested");
        dfused += &dx;
        dfused
    }

    /// Gradient of a task-logit objective with respect to every concept's
    /// slice vectors, without stop-gradient (forward sensitivity).
    pub fn head_input_gradient(&self, z: &[Array2<F>], dlogits: ArrayView1<F>) -> Vec<Array2<F>> {
        let (head, cache) = self.head_forward(z);
        let mut scratch = self.params.zeros_like();
        let dfused = self.head_backward(&head, &cache, dlogits, &mut scratch);
        let l = self.config.concept_dim;
        (0..4)
            .map(|c| dfused.slice(s![.., c * l..(c + 1) * l]).to_owned())
            .collect()
    }

    pub fn backward(
        &self,
        fwd: &Forward<F>,
        out: &OutputGrads<F>,
        rules: &GradientRules<F>,
    ) -> Result<Gradients<F>> {
        let cache = fwd
            .cache
            .as_ref()
            .ok_or_else(|| Error::validation("forward pass was run without a cache"))?;
        let (s, k) = (fwd.num_slices, fwd.patches_per_slice);
        let l = self.config.concept_dim;
        let mut grads = self.params.zeros_like();
        let mut dz: Vec<Array2<F>> = (0..4).map(|_| Array2::zeros((s, l))).collect();
        let inv_s = F::one() / F::c(s as f64);

        if let Some(dt) = &out.task_logits {
            let dfused = self.head_backward(&fwd.head, &cache.attn2, dt.view(), &mut grads);
            for c in Concept::ALL {
                if c.is_predefined() && rules.stop_gradient {
                    continue;
                }
                dz[c.index()] += &dfused.slice(s![.., c.index() * l..(c.index() + 1) * l]);
            }
        }

        for c in Concept::PREDEFINED {
            let Some(dc) = &out.concept_logits[c.index()] else {
                continue;
            };
            let dc_slice = dc * inv_s;
            let head = &self.params.concept_head[c.index()];
            let g = &mut grads.concept_head[c.index()];
            let zsum = fwd.z[c.index()].sum_axis(Axis(0));
            g.weight += &outer(zsum.view(), dc_slice.view());
            g.bias += dc;
            let dzi = head.weight.dot(&dc_slice);
            dz[c.index()] += &dzi;
        }

        let residual = Concept::Residual.index();
        for c in Concept::PREDEFINED {
            let Some(da) = &out.adv_logits[c.index()] else {
                continue;
            };
            let dy = Array2::from_shape_fn((s, da.len()), |(_, j)| da[j] * inv_s);
            let head = &self.params.adv_head[c.index()];
            let dx = head
                .backward(
                    fwd.z[residual].view(),
                    &cache.adv[c.index()],
                    dy.view(),
                    &mut grads.adv_head[c.index()],
                    true,
                )
                .expect("requested");
            let dx = match &rules.reversal {
                Some(grl) => grl.backward(dx),
                None => dx,
            };
            dz[residual] += &dx;
        }

        let mut dh: Option<Array2<F>> = None;
        for c in Concept::ALL {
            let i = c.index();
            let extra = out.alpha[i].as_ref();
            let dz_zero = dz[i].iter().all(|v| *v == F::zero());
            if dz_zero && extra.is_none_or(|e| e.iter().all(|v| *v == F::zero())) {
                continue;
            }
            let hc = &fwd.projected[i];
            let alpha = &fwd.alpha[i];
            // Z[m] = sum_k alpha[m,k] H[mK+k]
            let mut dalpha = Array2::<F>::zeros((s, k));
            let mut dhc = Array2::<F>::zeros(hc.raw_dim());
            for m in 0..s {
                let block = hc.slice(s![m * k..(m + 1) * k, ..]);
                let dzm = dz[i].row(m);
                dalpha.row_mut(m).assign(&block.dot(&dzm));
                let mut dblock = dhc.slice_mut(s![m * k..(m + 1) * k, ..]);
                Zip::from(dblock.rows_mut())
                    .and(alpha.row(m))
                    .for_each(|mut row, &a| row.assign(&(&dzm * a)));
            }
            if let Some(e) = extra {
                dalpha += e;
            }
            let alpha_flat = alpha
                .view()
                .into_shape_with_order(s * k)
                .expect("contiguous");
            let dalpha_flat = dalpha
                .view()
                .into_shape_with_order(s * k)
                .expect("contiguous");
            let dx = self.params.attn1[i]
                .backward(
                    hc.view(),
                    &cache.attn1[i],
                    alpha_flat,
                    dalpha_flat,
                    k,
                    &mut grads.attn1[i],
                    true,
                )
                .expect("requested");
            dhc += &dx;
            let dxe = self.params.proj[i]
                .backward(
                    fwd.embeddings.view(),
                    &cache.proj[i],
                    dhc.view(),
                    &mut grads.proj[i],
                    true,
                )
                .expect("requested");
            match dh.as_mut() {
                Some(acc) => *acc += &dxe,
                None => dh = Some(dxe),
            }
        }

        if let Some(mut dh) = dh {
            self.encoder_backward(&fwd.embeddings, &cache.encoder, &mut dh, s * k, &mut grads);
        }

        Ok(Gradients {
            params: grads,
            z: dz,
        })
    }

    fn encoder_backward(
        &self,
        h: &Array2<F>,
        cache: &EncoderCache<F>,
        dh: &mut Array2<F>,
        batch: usize,
        grads: &mut ModelParams<F>,
    ) {
        Zip::from(&mut *dh).and(h).for_each(|g, &a| {
            if a <= F::zero() {
                *g = F::zero();
            }
        });
        let dpooled = self
            .params
            .phi
            .fc
            .backward(cache.pooled.view(), dh.view(), &mut grads.phi.fc, true)
            .expect("requested");
        let side = self.config.final_feature_side();
        let area = side * side;
        let channels = dpooled.ncols();
        let scale = F::one() / F::c(area as f64);
        let mut dx = Array2::<F>::zeros((batch * area, channels));
        for b in 0..batch {
            let row = dpooled.row(b).mapv(|v| v * scale);
            for a in 0..area {
                dx.row_mut(b * area + a).assign(&row);
            }
        }
        let convs = &self.params.phi.convs;
        for i in (0..convs.len()).rev() {
            let need_dx = i > 0;
            match convs[i].backward(
                &cache.convs[i],
                &dx,
                batch,
                &mut grads.phi.convs[i],
                need_dx,
            ) {
                Some(next) => dx = next,
                None => break,
            }
        }
    }

    /// Hard softmax check helper used by tests and probes.
    pub fn attention_from_scores(scores: ArrayView1<F>, k: usize) -> Array1<F> {
        grouped_softmax(scores, k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array4, ArrayView4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            concept_dim: 4,
            attn_hidden: 5,
            num_classes: 4,
            conv_channels: [2, 3, 3, 4],
            proj_hidden: 6,
            adv_hidden: 5,
            patch_size: 16,
        }
    }

    fn random_pixels(s: usize, k: usize, p: usize, seed: u64) -> Array4<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn((s, k, p, p), || rng.random_range(0.0..1.0))
    }

    fn forward(model: &AcMil<f64>, px: ArrayView4<f32>) -> Forward<f64> {
        model.forward(px, true).unwrap()
    }

    #[test]
    fn attention_rows_normalized() {
        let model = AcMil::<f64>::new(tiny_config(), 1).unwrap();
        let px = random_pixels(3, 5, 16, 2);
        let f = forward(&model, px.view());
        for a in &f.alpha {
            for row in a.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
        assert!((f.head.beta.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_patch_and_single_slice() {
        let model = AcMil::<f64>::new(tiny_config(), 1).unwrap();
        let px = random_pixels(1, 1, 16, 3);
        let f = forward(&model, px.view());
        for a in &f.alpha {
            assert_eq!(a[[0, 0]], 1.0);
        }
        assert_eq!(f.head.beta[0], 1.0);
        let v1 = f.head.fused.row(0).to_owned();
        for (a, b) in f.head.v_vol.iter().zip(v1.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_patches_give_uniform_attention() {
        let model = AcMil::<f64>::new(tiny_config(), 4).unwrap();
        let one = random_pixels(1, 1, 16, 5);
        let px = Array4::from_shape_fn((2, 4, 16, 16), |(_, _, y, x)| one[[0, 0, y, x]]);
        let f = forward(&model, px.view());
        for a in &f.alpha {
            assert!(a.iter().all(|&v| (v - 0.25).abs() < 1e-12));
        }
        let e = &f.embeddings;
        for r in 1..e.nrows() {
            assert_eq!(e.row(r), e.row(0));
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let model = AcMil::<f64>::new(tiny_config(), 1).unwrap();
        assert!(model
            .forward(Array4::<f32>::zeros((0, 3, 16, 16)).view(), false)
            .is_err());
        assert!(model
            .forward(Array4::<f32>::zeros((2, 0, 16, 16)).view(), false)
            .is_err());
        assert!(model
            .forward(Array4::<f32>::zeros((2, 3, 8, 8)).view(), false)
            .is_err());
        assert!(model
            .gated_attention(Concept::Aorta, Array2::zeros((0, 4)).view(), 1)
            .is_err());
    }

    #[test]
    fn z_is_attention_weighted_sum() {
        let model = AcMil::<f64>::new(tiny_config(), 7).unwrap();
        let px = random_pixels(2, 6, 16, 8);
        let f = forward(&model, px.view());
        for c in 0..4 {
            for m in 0..2 {
                for j in 0..4 {
                    let mut acc = 0.0;
                    for kk in 0..6 {
                        acc += f.alpha[c][[m, kk]] * f.projected[c][[m * 6 + kk, j]];
                    }
                    assert!((acc - f.z[c][[m, j]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_without_cache_is_an_error() {
        let model = AcMil::<f64>::new(tiny_config(), 1).unwrap();
        let f = model
            .forward(random_pixels(1, 2, 16, 0).view(), false)
            .unwrap();
        assert!(model
            .backward(&f, &OutputGrads::default(), &GradientRules::plain())
            .is_err());
    }

    #[test]
    fn reversal_is_identity_forward() {
        let x = Array2::from_shape_fn((3, 2), |(i, j)| (i * 2 + j) as f64);
        let grl = GradientReversal::new(0.5);
        assert_eq!(grl.forward(x.view()), x.view());
        assert_eq!(grl.backward(x.clone()), x * -0.5);
    }
}
