//! Training objectives: CORN ordinal loss, concept supervision, the
//! adversarial term, spatial attention diversity and their weighted sum.

use crate::error::{Error, Result};
use crate::model::layers::{sigmoid, softmax, Scalar};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

/// `log(1 + e^x)` without overflow.
fn softplus<F: Scalar>(x: F) -> F {
    let zero = F::zero();
    x.max(zero) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy on a logit.
fn bce_with_logit<F: Scalar>(logit: F, target: bool) -> F {
    if target {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

fn check_label(num_logits: usize, label: usize) -> Result<()> {
    if num_logits == 0 {
        return Err(Error::validation("CORN needs at least one logit"));
    }
    if label > num_logits {
        return Err(Error::validation(format!(
            "label {label} out of range for {} classes",
            num_logits + 1
        )));
    }
    Ok(())
}

/// CORN loss of one sample and its gradient with respect to the logits.
///
/// Task `j` is trained only on samples with `label >= j`; its target is
/// `label > j`. The loss is the mean BCE over the admitted tasks.
pub fn corn_loss_grad<F: Scalar>(logits: ArrayView1<F>, label: usize) -> Result<(F, Array1<F>)> {
    check_label(logits.len(), label)?;
    let admitted = (label + 1).min(logits.len());
    let scale = F::one() / F::c(admitted as f64);
    let mut loss = F::zero();
    let mut grad = Array1::zeros(logits.len());
    for j in 0..admitted {
        let target = label > j;
        loss += bce_with_logit(logits[j], target);
        let t = if target { F::one() } else { F::zero() };
        grad[j] = (sigmoid(logits[j]) - t) * scale;
    }
    Ok((loss * scale, grad))
}

pub fn corn_loss<F: Scalar>(logits: ArrayView1<F>, label: usize) -> Result<F> {
    Ok(corn_loss_grad(logits, label)?.0)
}

/// Mean CORN loss over a batch of rows.
pub fn corn_loss_batch<F: Scalar>(logits: ArrayView2<F>, labels: &[usize]) -> Result<F> {
    if logits.nrows() != labels.len() {
        return Err(Error::validation(format!(
            "{} logit rows for {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let mut total = F::zero();
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        total += corn_loss(row, y)?;
    }
    Ok(total / F::c(labels.len() as f64))
}

/// `P(y > j)` for every threshold, by chaining conditional probabilities.
pub fn corn_probabilities<F: Scalar>(logits: ArrayView1<F>) -> Array1<F> {
    let mut p = F::one();
    logits
        .iter()
        .map(|&l| {
            p *= sigmoid(l);
            p
        })
        .collect()
}

pub fn corn_rank<F: Scalar>(logits: ArrayView1<F>) -> usize {
    let half = F::c(0.5);
    corn_probabilities(logits)
        .iter()
        .filter(|&&p| p > half)
        .count()
}

/// Task loss used for the ordinal head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskLoss {
    #[default]
    Corn,
    /// Softmax cross-entropy over `[0, l_0, .., l_{K-2}]`, i.e. the head's
    /// logits with class 0 pinned at zero.
    CrossEntropy,
}

impl TaskLoss {
    pub fn loss_grad<F: Scalar>(
        self,
        logits: ArrayView1<F>,
        label: usize,
    ) -> Result<(F, Array1<F>)> {
        match self {
            TaskLoss::Corn => corn_loss_grad(logits, label),
            TaskLoss::CrossEntropy => {
                check_label(logits.len(), label)?;
                let full = pinned_logits(logits);
                let p = softmax(full.view());
                let loss = -p[label].ln();
                let mut grad = p.slice(ndarray::s![1..]).to_owned();
                if label > 0 {
                    grad[label - 1] -= F::one();
                }
                Ok((loss, grad))
            }
        }
    }

    pub fn predict<F: Scalar>(self, logits: ArrayView1<F>) -> usize {
        match self {
            TaskLoss::Corn => corn_rank(logits),
            TaskLoss::CrossEntropy => {
                let full = pinned_logits(logits);
                let mut best = 0;
                for (i, &v) in full.iter().enumerate() {
                    if v > full[best] {
                        best = i;
                    }
                }
                best
            }
        }
    }

    /// Score used for `P(y >= 2)`-style binarized probes.
    pub fn exceedance<F: Scalar>(self, logits: ArrayView1<F>, threshold: usize) -> F {
        match self {
            TaskLoss::Corn => corn_probabilities(logits)[threshold],
            TaskLoss::CrossEntropy => {
                let p = softmax(pinned_logits(logits).view());
                p.iter().skip(threshold + 1).copied().sum()
            }
        }
    }
}

fn pinned_logits<F: Scalar>(logits: ArrayView1<F>) -> Array1<F> {
    std::iter::once(F::zero())
        .chain(logits.iter().copied())
        .collect()
}

/// Sum of CORN losses over three heads, with per-head gradients.
pub fn summed_corn_grad<F: Scalar>(
    logits: &[Array1<F>],
    labels: &[usize],
) -> Result<(F, Vec<Array1<F>>)> {
    if logits.len() != labels.len() {
        return Err(Error::validation("one label per head required"));
    }
    let mut total = F::zero();
    let mut grads = Vec::with_capacity(logits.len());
    for (l, &y) in logits.iter().zip(labels) {
        let (v, g) = corn_loss_grad(l.view(), y)?;
        total += v;
        grads.push(g);
    }
    Ok((total, grads))
}

/// Concept supervision: CORN on each predefined concept head.
pub fn cbm_loss<F: Scalar>(concept_logits: &[Array1<F>], concept_labels: &[usize]) -> Result<F> {
    Ok(summed_corn_grad(concept_logits, concept_labels)?.0)
}

/// Adversary objective: CORN on each adversary head reading the residual.
pub fn adv_loss<F: Scalar>(adv_logits: &[Array1<F>], concept_labels: &[usize]) -> Result<F> {
    Ok(summed_corn_grad(adv_logits, concept_labels)?.0)
}

const COSINE_FLOOR: f64 = 1e-12;

/// Cosine similarity and its gradients with respect to both inputs.
fn cosine_grad<F: Scalar>(a: ArrayView1<F>, b: ArrayView1<F>) -> Result<(F, Array1<F>, Array1<F>)> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == F::zero() || nb == F::zero() {
        return Err(Error::validation("attention map with zero norm"));
    }
    let floor = F::c(COSINE_FLOOR);
    let denom = (na * nb).max(floor);
    let dot = a.dot(&b);
    let cos = dot / denom;
    if na * nb < floor {
        return Ok((cos, b.mapv(|v| v / denom), a.mapv(|v| v / denom)));
    }
    let ga = &b / denom - &a * (cos / (na * na));
    let gb = &a / denom - &b * (cos / (nb * nb));
    Ok((cos, ga, gb))
}

/// Sum of pairwise cosine similarities of three maps over the unordered
/// pairs (0,1), (0,2), (1,2), with gradients per map.
pub fn sad_slice_grad<F: Scalar>(maps: [ArrayView1<F>; 3]) -> Result<(F, [Array1<F>; 3])> {
    let k = maps[0].len();
    if maps.iter().any(|m| m.len() != k) {
        return Err(Error::validation("attention maps differ in length"));
    }
    let mut grads = [Array1::zeros(k), Array1::zeros(k), Array1::zeros(k)];
    let mut total = F::zero();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let (c, gi, gj) = cosine_grad(maps[i], maps[j])?;
        total += c;
        grads[i] += &gi;
        grads[j] += &gj;
    }
    Ok((total, grads))
}

pub fn sad_slice<F: Scalar>(maps: [ArrayView1<F>; 3]) -> Result<F> {
    Ok(sad_slice_grad(maps)?.0)
}

/// Spatial attention diversity over a sub-bag: per-slice pairwise cosine
/// sums averaged over slices. Maps are `[slices, patches]` for nu, ao, un.
pub fn sad_loss_grad<F: Scalar>(maps: [ArrayView2<F>; 3]) -> Result<(F, [Array2<F>; 3])> {
    let dim = maps[0].dim();
    if maps.iter().any(|m| m.dim() != dim) {
        return Err(Error::validation("attention map sets differ in shape"));
    }
    if dim.0 == 0 {
        return Err(Error::validation("no slices"));
    }
    let inv = F::one() / F::c(dim.0 as f64);
    let mut grads = [Array2::zeros(dim), Array2::zeros(dim), Array2::zeros(dim)];
    let mut total = F::zero();
    for m in 0..dim.0 {
        let (v, g) = sad_slice_grad([maps[0].row(m), maps[1].row(m), maps[2].row(m)])?;
        total += v;
        for (dst, src) in grads.iter_mut().zip(g) {
            dst.row_mut(m).assign(&(src * inv));
        }
    }
    Ok((total * inv, grads))
}

pub fn sad_loss<F: Scalar>(maps: [ArrayView2<F>; 3]) -> Result<F> {
    Ok(sad_loss_grad(maps)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cbm: f64,
    pub lambda_adv: f64,
    pub lambda_sad: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cbm: 1.0,
            lambda_adv: 0.5,
            lambda_sad: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_cbm", self.lambda_cbm),
            ("lambda_adv", self.lambda_adv),
            ("lambda_sad", self.lambda_sad),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::validation(format!(
                    "{name} must be a finite non-negative number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Where `lambda_adv` is applied.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialScaling {
    /// Unweighted adversary loss; the reversal multiplies by `-lambda_adv`.
    #[default]
    GrlOnly,
    /// `lambda_adv` on the loss and again inside the reversal.
    Both,
    /// `lambda_adv` on the loss; the reversal multiplies by `-1`.
    LossOnly,
}

impl AdversarialScaling {
    pub fn loss_weight(self, lambda_adv: f64) -> f64 {
        match self {
            AdversarialScaling::GrlOnly => 1.0,
            AdversarialScaling::Both | AdversarialScaling::LossOnly => lambda_adv,
        }
    }

    pub fn reversal_lambda(self, lambda_adv: f64) -> f64 {
        match self {
            AdversarialScaling::GrlOnly | AdversarialScaling::Both => lambda_adv,
            AdversarialScaling::LossOnly => 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub task: f64,
    /// Per predefined concept, ordered sh, nu, ao.
    pub cbm: [f64; 3],
    pub adv: [f64; 3],
    pub sad: f64,
    pub total: f64,
}

impl LossReport {
    pub fn cbm_sum(&self) -> f64 {
        self.cbm.iter().sum()
    }

    pub fn adv_sum(&self) -> f64 {
        self.adv.iter().sum()
    }
}

/// Assemble the weighted objective from its components.
pub fn total_loss(
    task: f64,
    cbm: [f64; 3],
    adv: [f64; 3],
    sad: f64,
    weights: &LossWeights,
    scaling: AdversarialScaling,
) -> Result<LossReport> {
    weights.validate()?;
    let total = task
        + weights.lambda_cbm * cbm.iter().sum::<f64>()
        + scaling.loss_weight(weights.lambda_adv) * adv.iter().sum::<f64>()
        + weights.lambda_sad * sad;
    Ok(LossReport {
        task,
        cbm,
        adv,
        sad,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    /// Oracle: enumerate the conditional subsets directly from probabilities.
    fn corn_oracle(logits: &[f64], label: usize) -> f64 {
        let mut terms = Vec::new();
        for (j, &l) in logits.iter().enumerate() {
            // The subset for task j holds samples whose label exceeds j - 1.
            if label as i64 > j as i64 - 1 {
                let p = 1.0 / (1.0 + (-l).exp());
                let t = if label > j { 1.0 } else { 0.0 };
                terms.push(-(t * p.ln() + (1.0 - t) * (1.0 - p).ln()));
            }
        }
        terms.iter().sum::<f64>() / terms.len() as f64
    }

    #[test]
    fn corn_matches_oracle_examples() {
        let l = array![0.3, -1.2, 2.0];
        let v0 = corn_loss(l.view(), 0).unwrap();
        let bce0 = (1.0 + 0.3f64.exp()).ln();
        assert!((v0 - bce0).abs() < 1e-12);
        let v3 = corn_loss(l.view(), 3).unwrap();
        assert!((v3 - corn_oracle(&[0.3, -1.2, 2.0], 3)).abs() < 1e-12);
        assert!(corn_loss(array![100.0, 100.0, 100.0].view(), 3).unwrap() < 1e-6);
        assert!(corn_loss(l.view(), 4).is_err());
    }

    #[test]
    fn corn_rank_examples() {
        assert_eq!(corn_rank(array![-100.0, -100.0, -100.0].view()), 0);
        assert_eq!(corn_rank(array![100.0, 100.0, 100.0].view()), 3);
        let p = corn_probabilities(array![2.0f64, 0.5, -1.0].view());
        assert!((p[0] - 0.8808).abs() < 1e-4);
        assert!((p[1] - 0.5483).abs() < 1e-4);
        assert!((p[2] - 0.1474).abs() < 1e-4);
        assert_eq!(corn_rank(array![2.0, 0.5, -1.0].view()), 2);
    }

    #[test]
    fn batch_is_mean() {
        let l = array![[0.1f64, 0.2, 0.3], [-1.0, 0.0, 1.0]];
        let b = corn_loss_batch(l.view(), &[1, 2]).unwrap();
        let m = (corn_loss(l.row(0), 1).unwrap() + corn_loss(l.row(1), 2).unwrap()) / 2.0;
        assert!((b - m).abs() < 1e-15);
        assert!(corn_loss_batch(l.view(), &[1]).is_err());
    }

    #[test]
    fn cross_entropy_switch() {
        let l = array![0.0, 0.0, 0.0];
        let (v, _) = TaskLoss::CrossEntropy.loss_grad(l.view(), 2).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        assert_eq!(
            TaskLoss::CrossEntropy.predict(array![-1.0, 3.0, 0.5].view()),
            2
        );
        assert_eq!(
            TaskLoss::CrossEntropy.predict(array![-1.0, -3.0, -0.5].view()),
            0
        );
        let e = TaskLoss::CrossEntropy.exceedance(l.view(), 1);
        assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sad_examples() {
        let u = array![[0.2f64, 0.3, 0.5]];
        assert!((sad_loss([u.view(), u.view(), u.view()]).unwrap() - 3.0).abs() < 1e-12);
        let a = array![[1.0, 0.0, 0.0]];
        let b = array![[0.0, 1.0, 0.0]];
        let c = array![[0.0, 0.0, 1.0]];
        assert_eq!(sad_loss([a.view(), b.view(), c.view()]).unwrap(), 0.0);
        let (cos, _, _) = cosine_grad(array![1.0, 0.0].view(), array![0.5, 0.5].view()).unwrap();
        assert!((cos - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let z = array![[0.0, 0.0, 0.0]];
        assert!(sad_loss([z.view(), a.view(), b.view()]).is_err());
    }

    #[test]
    fn copying_a_map_can_lower_the_penalty() {
        // Two orthogonal maps and one between them: overwriting the middle
        // map with a copy of an outer one trades two 0.71 terms for 1 + 0.
        let a = array![[1.0, 0.0]];
        let b = array![[0.0, 1.0]];
        let c = array![[0.5, 0.5]];
        let base = sad_loss([a.view(), b.view(), c.view()]).unwrap();
        let copied = sad_loss([a.view(), b.view(), a.view()]).unwrap();
        assert!((base - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((copied - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_examples() {
        let w0 = LossWeights {
            lambda_cbm: 0.0,
            lambda_adv: 0.0,
            lambda_sad: 0.0,
        };
        let r = total_loss(
            1.5,
            [1.0; 3],
            [1.0; 3],
            2.0,
            &w0,
            AdversarialScaling::LossOnly,
        )
        .unwrap();
        assert_eq!(r.total, 1.5);
        let w = LossWeights::default();
        let r = total_loss(
            1.0,
            [0.1, 0.2, 0.3],
            [0.4, 0.5, 0.6],
            0.7,
            &w,
            AdversarialScaling::GrlOnly,
        )
        .unwrap();
        assert!((r.total - (1.0 + 0.6 + 1.5 + 0.07)).abs() < 1e-12);
        let r = total_loss(
            1.0,
            [0.1, 0.2, 0.3],
            [0.4, 0.5, 0.6],
            0.7,
            &w,
            AdversarialScaling::Both,
        )
        .unwrap();
        assert!((r.total - (1.0 + 0.6 + 0.75 + 0.07)).abs() < 1e-12);
        let bad = LossWeights {
            lambda_sad: -0.1,
            ..w
        };
        assert!(total_loss(
            0.0,
            [0.0; 3],
            [0.0; 3],
            0.0,
            &bad,
            AdversarialScaling::GrlOnly
        )
        .is_err());
    }

    fn central_diff(f: impl Fn(&Array1<f64>) -> f64, x: &Array1<f64>) -> Array1<f64> {
        let h = 1e-6;
        Array1::from_shape_fn(x.len(), |i| {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
    }

    fn rel_err(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
        let diff = (a - b).mapv(f64::abs).sum();
        let scale = a.mapv(f64::abs).sum() + b.mapv(f64::abs).sum();
        if scale < 1e-12 {
            diff
        } else {
            diff / scale
        }
    }

    proptest! {
        #[test]
        fn corn_agrees_with_oracle(l in prop::collection::vec(-8.0f64..8.0, 3), y in 0usize..4) {
            let v = corn_loss(Array1::from(l.clone()).view(), y).unwrap();
            prop_assert!((v - corn_oracle(&l, y)).abs() < 1e-9);
            prop_assert!(v >= 0.0);
        }

        #[test]
        fn corn_grad_matches_fd(l in prop::collection::vec(-4.0f64..4.0, 3), y in 0usize..4) {
            let x = Array1::from(l);
            let (_, g) = corn_loss_grad(x.view(), y).unwrap();
            let fd = central_diff(|v| corn_loss(v.view(), y).unwrap(), &x);
            prop_assert!(rel_err(&g, &fd) < 1e-4);
        }

        #[test]
        fn cross_entropy_grad_matches_fd(l in prop::collection::vec(-4.0f64..4.0, 3), y in 0usize..4) {
            let x = Array1::from(l);
            let (_, g) = TaskLoss::CrossEntropy.loss_grad(x.view(), y).unwrap();
            let fd = central_diff(|v| TaskLoss::CrossEntropy.loss_grad(v.view(), y).unwrap().0, &x);
            prop_assert!(rel_err(&g, &fd) < 1e-4);
        }

        #[test]
        fn rank_consistent(l in prop::collection::vec(-10.0f64..10.0, 3)) {
            let p = corn_probabilities(Array1::from(l).view());
            prop_assert!(p[0] >= p[1] && p[1] >= p[2]);
        }

        #[test]
        fn sad_symmetric_and_bounded(
            raw in prop::collection::vec(0.01f64..1.0, 12),
            perm in Just([0usize, 1, 2]).prop_shuffle(),
        ) {
            let maps: Vec<Array2<f64>> = raw
                .chunks(4)
                .map(|c| {
                    let s: f64 = c.iter().sum();
                    Array2::from_shape_fn((1, 4), |(_, j)| c[j] / s)
                })
                .collect();
            let base = sad_loss([maps[0].view(), maps[1].view(), maps[2].view()]).unwrap();
            let permuted = sad_loss([maps[perm[0]].view(), maps[perm[1]].view(), maps[perm[2]].view()]).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12);
            prop_assert!((0.0..=3.0 + 1e-12).contains(&base));
            // Copying map 0 over map 1 saturates their pair and duplicates
            // the (0, 2) term.
            let copied = sad_loss([maps[0].view(), maps[0].view(), maps[2].view()]).unwrap();
            let c02 = sad_loss([maps[0].view(), maps[2].view(), maps[2].view()]).unwrap();
            prop_assert!((copied - c02).abs() < 1e-12);
        }

        #[test]
        fn sad_grad_matches_fd(raw in prop::collection::vec(0.05f64..1.0, 15)) {
            let maps: Vec<Array2<f64>> = raw
                .chunks(5)
                .map(|c| Array2::from_shape_fn((1, 5), |(_, j)| c[j]))
                .collect();
            let (_, g) = sad_loss_grad([maps[0].view(), maps[1].view(), maps[2].view()]).unwrap();
            for which in 0..3 {
                let x = maps[which].row(0).to_owned();
                let fd = central_diff(
                    |v| {
                        let mut m = maps.clone();
                        m[which].row_mut(0).assign(v);
                        sad_loss([m[0].view(), m[1].view(), m[2].view()]).unwrap()
                    },
                    &x,
                );
                prop_assert!(rel_err(&g[which].row(0).to_owned(), &fd) < 1e-5);
            }
        }
    }
}
