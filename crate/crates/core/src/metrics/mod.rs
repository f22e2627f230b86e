//! Evaluation quantities: agreement metrics, attention divergence, ROC,
//! feature-distribution distances, localization, probes and attacks.

mod attack;
mod probe;
mod report;

pub use attack::{attack_min_perturbation, AttackConfig, AttackOutcome};
pub use probe::{probe_adversary, ProbeConfig, ProbeResult, ProbeSample, PROBE_POSITIVE_GRADE};
pub use report::{
    branch_features, evaluate, jsd_pairs, mean_localization, median, write_report, EvalInputs,
    Evaluation, Measured, MetricsReport, PairJsd, PredictionRow,
};

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

fn check_labels(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<()> {
    if y_true.len() != y_pred.len() {
        return Err(Error::validation(format!(
            "{} labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.is_empty() {
        return Err(Error::validation("no samples"));
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&v| v >= num_classes) {
        return Err(Error::validation(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }
    Ok(())
}

/// Quadratic weighted kappa. When the expected disagreement is zero (both
/// raters constant on the same class) the result is 1.0 for perfect
/// agreement and 0.0 otherwise.
pub fn qwk(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64> {
    check_labels(y_true, y_pred, num_classes)?;
    if num_classes < 2 {
        return Err(Error::validation("qwk needs at least 2 classes"));
    }
    let k = num_classes;
    let n = y_true.len() as f64;
    let mut observed = Array2::<f64>::zeros((k, k));
    for (&a, &b) in y_true.iter().zip(y_pred) {
        observed[[a, b]] += 1.0;
    }
    let rows = observed.sum_axis(Axis(1));
    let cols = observed.sum_axis(Axis(0));
    let scale = ((k - 1) * (k - 1)) as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            let w = ((i as f64) - (j as f64)).powi(2) / scale;
            num += w * observed[[i, j]];
            den += w * rows[i] * cols[j] / n;
        }
    }
    if den == 0.0 {
        return Ok(if y_true == y_pred { 1.0 } else { 0.0 });
    }
    Ok(1.0 - num / den)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Amae {
    pub value: f64,
    /// Mean absolute error per class; `None` for classes absent from `y_true`.
    pub per_class: Vec<Option<f64>>,
}

impl Amae {
    pub fn absent_classes(&self) -> Vec<usize> {
        (0..self.per_class.len())
            .filter(|&c| self.per_class[c].is_none())
            .collect()
    }
}

/// Macro-averaged MAE: per-class mean absolute error averaged over the
/// classes present in `y_true`.
pub fn amae_detail(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<Amae> {
    check_labels(y_true, y_pred, num_classes)?;
    let mut sums = vec![0.0; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&a, &b) in y_true.iter().zip(y_pred) {
        sums[a] += (a as f64 - b as f64).abs();
        counts[a] += 1;
    }
    let per_class: Vec<Option<f64>> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let value = present.iter().sum::<f64>() / present.len() as f64;
    Ok(Amae { value, per_class })
}

pub fn amae(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64> {
    Ok(amae_detail(y_true, y_pred, num_classes)?.value)
}

/// Base-2 Jensen-Shannon divergence of two probability vectors.
pub fn jsd(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::validation(format!(
            "distributions of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    for (name, v) in [("first", &a), ("second", &b)] {
        let s = v.sum();
        if (s - 1.0).abs() > 1e-5 || v.iter().any(|&x| x < 0.0) {
            return Err(Error::validation(format!(
                "{name} distribution is not normalized (sum {s})"
            )));
        }
    }
    let kl_to_mid = |p: &ArrayView1<f64>| -> f64 {
        p.iter()
            .zip(a.iter().zip(b.iter()))
            .filter(|(&pi, _)| pi > 0.0)
            .map(|(&pi, (&ai, &bi))| pi * (pi / ((ai + bi) / 2.0)).log2())
            .sum()
    };
    let v = 0.5 * kl_to_mid(&a) + 0.5 * kl_to_mid(&b);
    Ok(v.clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC curve over all distinct score thresholds, with trapezoidal AUC.
pub fn roc_curve(scores: &[f64], positive: &[bool]) -> Result<Roc> {
    if scores.len() != positive.len() || scores.is_empty() {
        return Err(Error::validation(
            "scores and labels must be non-empty and equal in length",
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::validation("non-finite score"));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::validation(
            "ROC needs both positive and negative samples",
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: t,
        });
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();
    Ok(Roc { points, auc })
}

/// 1-D Wasserstein-1 distance between two samples: mean absolute difference
/// of their quantile functions. Unequal sizes are resampled onto a common
/// grid by linear interpolation between order statistics.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation("empty sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        return Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64);
    }
    let n = a.len().max(b.len());
    let quantile = |s: &[f64], t: f64| -> f64 {
        if s.len() == 1 {
            return s[0];
        }
        let pos = t * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(s.len() - 1);
        let frac = pos - lo as f64;
        s[lo] + frac * (s[hi] - s[lo])
    };
    let total: f64 = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            (quantile(&a, t) - quantile(&b, t)).abs()
        })
        .sum();
    Ok(total / n as f64)
}

/// Random unit directions used by [`sliced_wasserstein`], `[n, dim]`.
pub fn random_projections(n: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n, dim));
    for mut row in out.rows_mut() {
        loop {
            row.mapv_inplace(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            });
            let norm = row.dot(&row).sqrt();
            if norm > 1e-12 {
                row /= norm;
                break;
            }
        }
    }
    out
}

pub const DEFAULT_PROJECTIONS: usize = 128;

/// Sliced Wasserstein-1 distance between two point sets (rows).
pub fn sliced_wasserstein(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    n_projections: usize,
    seed: u64,
) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    if a.nrows() < 2 || b.nrows() < 2 {
        return Err(Error::validation("each point set needs at least 2 points"));
    }
    if n_projections == 0 {
        return Err(Error::validation("need at least one projection"));
    }
    let dirs = random_projections(n_projections, a.ncols(), seed);
    let pa = a.dot(&dirs.t());
    let pb = b.dot(&dirs.t());
    let mut total = 0.0;
    for j in 0..n_projections {
        let xa: Vec<f64> = pa.column(j).to_vec();
        let xb: Vec<f64> = pb.column(j).to_vec();
        total += wasserstein_1d(&xa, &xb)?;
    }
    Ok(total / n_projections as f64)
}

/// Attention mass on tiles whose centre lies inside the mask, averaged over
/// the slices where the mask is non-empty. `None` when the mask is empty on
/// every slice.
pub fn localization_score(
    alpha: ArrayView2<f64>,
    slices: &[usize],
    origins: &[(usize, usize)],
    patch_size: usize,
    mask: &ndarray::Array3<bool>,
) -> Result<Option<f64>> {
    if alpha.nrows() != slices.len() || alpha.ncols() != origins.len() {
        return Err(Error::validation(format!(
            "attention is {:?}, expected [{}, {}]",
            alpha.dim(),
            slices.len(),
            origins.len()
        )));
    }
    let (d, h, w) = mask.dim();
    let mut total = 0.0;
    let mut used = 0usize;
    for (m, &z) in slices.iter().enumerate() {
        if z >= d {
            return Err(Error::validation(format!(
                "slice {z} outside mask depth {d}"
            )));
        }
        let plane = mask.index_axis(Axis(0), z);
        if !plane.iter().any(|&b| b) {
            continue;
        }
        let mut mass = 0.0;
        for (k, &(r, c)) in origins.iter().enumerate() {
            let (cy, cx) = (r + patch_size / 2, c + patch_size / 2);
            if cy < h && cx < w && plane[[cy, cx]] {
                mass += alpha[[m, k]];
            }
        }
        total += mass;
        used += 1;
    }
    Ok((used > 0).then(|| total / used as f64))
}

/// Projection of rows onto their top two principal components.
pub fn pca_2d(x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.nrows() < 2 || x.ncols() == 0 {
        return Err(Error::validation("PCA needs at least 2 points"));
    }
    let mean = x.mean_axis(Axis(0)).expect("rows");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (x.nrows() - 1) as f64;
    let mut comps: Vec<Array1<f64>> = Vec::new();
    let mut deflated = cov.clone();
    for i in 0..2.min(x.ncols()) {
        let mut v = Array1::from_shape_fn(x.ncols(), |j| 1.0 + (j + i) as f64 * 0.01);
        for _ in 0..500 {
            let nv = deflated.dot(&v);
            let norm = nv.dot(&nv).sqrt();
            if norm < 1e-300 {
                break;
            }
            v = nv / norm;
        }
        let lambda = v.dot(&deflated.dot(&v));
        deflated = deflated - lambda * crate::model::layers::outer(v.view(), v.view());
        comps.push(v);
    }
    while comps.len() < 2 {
        comps.push(Array1::zeros(x.ncols()));
    }
    let basis = ndarray::stack(Axis(1), &[comps[0].view(), comps[1].view()]).expect("equal length");
    Ok(centered.dot(&basis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    #[test]
    fn qwk_examples() {
        assert_eq!(qwk(&[0, 1, 2, 3, 1], &[0, 1, 2, 3, 1], 4).unwrap(), 1.0);
        let v = qwk(&[0, 1, 2, 3], &[3, 2, 1, 0], 4).unwrap();
        // Observed: anti-diagonal. Weighted disagreement 2*(1 + 1/9) = 20/9,
        // expected 1/4 * sum over all cells of w = 1/4 * 40/9 = 10/9.
        assert!((v - (1.0 - 2.0)).abs() < 1e-12);
        assert_eq!(qwk(&[2, 2, 2], &[2, 2, 2], 4).unwrap(), 1.0);
        assert_eq!(qwk(&[2, 2, 2], &[1, 1, 1], 4).unwrap(), 0.0);
        assert!(qwk(&[0, 1], &[0], 4).is_err());
        assert!(qwk(&[], &[], 4).is_err());
        assert!(qwk(&[0, 4], &[0, 1], 4).is_err());
    }

    #[test]
    fn qwk_shuffled_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let mut total = 0.0;
        for _ in 0..1000 {
            let mut p = y.clone();
            p.shuffle(&mut rng);
            total += qwk(&y, &p, 4).unwrap();
        }
        assert!((total / 1000.0).abs() < 0.05);
    }

    /// Direct confusion-matrix evaluation, written independently.
    fn qwk_oracle(a: &[usize], b: &[usize], k: usize) -> f64 {
        let n = a.len() as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..k {
            for j in 0..k {
                let w = ((i as f64 - j as f64) / (k as f64 - 1.0)).powi(2);
                let o = a.iter().zip(b).filter(|(&x, &y)| x == i && y == j).count() as f64;
                let ra = a.iter().filter(|&&x| x == i).count() as f64;
                let cb = b.iter().filter(|&&y| y == j).count() as f64;
                num += w * o;
                den += w * ra * cb / n;
            }
        }
        1.0 - num / den
    }

    #[test]
    fn amae_examples() {
        assert_eq!(amae(&[0, 1, 2, 3], &[0, 1, 2, 3], 4).unwrap(), 0.0);
        let d = amae_detail(&[0, 0, 3, 3], &[1, 1, 3, 3], 4).unwrap();
        assert_eq!(d.value, 0.5);
        assert_eq!(d.per_class, vec![Some(1.0), None, None, Some(0.0)]);
        assert_eq!(d.absent_classes(), vec![1, 2]);
        let y: Vec<usize> = (0..40).map(|i| i % 4).collect();
        assert_eq!(amae(&y, &[0; 40], 4).unwrap(), 1.5);
        assert!(amae(&[], &[], 4).is_err());
    }

    #[test]
    fn jsd_examples() {
        let a = array![0.2, 0.3, 0.5];
        assert_eq!(jsd(a.view(), a.view()).unwrap(), 0.0);
        assert!(
            (jsd(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap() - 1.0).abs() < 1e-12
        );
        let v = jsd(array![1.0, 0.0].view(), array![0.5, 0.5].view()).unwrap();
        let hand = 0.5 * (1.0f64 / 0.75).log2()
            + 0.5 * (0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2());
        assert!((v - hand).abs() < 1e-12);
        // The hand expression evaluates to 0.31128, not the 0.2075 sometimes quoted.
        assert!((v - 0.311278).abs() < 1e-6);
        assert!(jsd(array![0.5, 0.6].view(), array![0.5, 0.5].view()).is_err());
    }

    #[test]
    fn roc_examples() {
        let labels = [false, false, true, true];
        let r = roc_curve(&[0.0, 0.0, 1.0, 1.0], &labels).unwrap();
        assert_eq!(r.auc, 1.0);
        let r = roc_curve(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-12);
        let r = roc_curve(&[0.5; 4], &labels).unwrap();
        assert!((r.auc - 0.5).abs() < 1e-12);
        assert!(roc_curve(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn roc_independent_scores_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels: Vec<bool> = (0..40).map(|i| i % 2 == 0).collect();
        let mut aucs = Vec::new();
        for _ in 0..200 {
            let scores: Vec<f64> = (0..40)
                .map(|_| rand::Rng::random::<f64>(&mut rng))
                .collect();
            aucs.push(roc_curve(&scores, &labels).unwrap().auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        assert!((mean - 0.5).abs() < 0.03);
        let within = aucs.iter().filter(|a| (*a - 0.5).abs() <= 0.1).count();
        assert!(within as f64 / aucs.len() as f64 > 0.6);
    }

    #[test]
    fn wasserstein_examples() {
        let a = array![[0.0], [0.0]];
        let b = array![[1.0], [1.0]];
        assert!((sliced_wasserstein(a.view(), b.view(), 16, 0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(sliced_wasserstein(a.view(), a.view(), 16, 0).unwrap(), 0.0);
        assert!(sliced_wasserstein(a.view(), array![[1.0, 2.0], [0.0, 0.0]].view(), 4, 0).is_err());
        assert_eq!(wasserstein_1d(&[0.0, 1.0, 2.0], &[0.0, 2.0]).unwrap(), 0.0);
    }

    /// Sorting oracle for equal-size samples: mean |a_(i) - b_(i)|.
    fn w1_oracle(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let mut s = 0.0;
        for i in 0..a.len() {
            s += (a[i] - b[i]).abs();
        }
        s / a.len() as f64
    }

    #[test]
    fn sliced_wasserstein_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array2::from_shape_simple_fn((50, 4), || StandardNormal.sample(&mut rng));
        let b = Array2::from_shape_simple_fn((50, 4), || {
            2.0 + rand_distr::Distribution::<f64>::sample(&StandardNormal, &mut rng)
        });
        let got = sliced_wasserstein(a.view(), b.view(), DEFAULT_PROJECTIONS, 3).unwrap();
        let dirs = random_projections(DEFAULT_PROJECTIONS, 4, 3);
        let mut expect = 0.0;
        for d in dirs.rows() {
            let pa: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&d)).collect();
            let pb: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&d)).collect();
            expect += w1_oracle(pa, pb);
        }
        expect /= DEFAULT_PROJECTIONS as f64;
        assert!((got - expect).abs() < 1e-6);
        for row in dirs.rows() {
            assert!((row.dot(&row) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn localization_examples() {
        let mut mask = ndarray::Array3::from_elem((1, 4, 8), false);
        // Tiles of size 2 at origins (0,0),(0,2),(0,4),(0,6): centres (1,1),(1,3),(1,5),(1,7).
        mask[[0, 1, 1]] = true;
        mask[[0, 1, 5]] = true;
        let origins = [(0, 0), (0, 2), (0, 4), (0, 6)];
        let uniform = Array2::from_elem((1, 4), 0.25);
        let s = localization_score(uniform.view(), &[0], &origins, 2, &mask).unwrap();
        assert_eq!(s, Some(0.5));
        let onehot = array![[0.0, 0.0, 1.0, 0.0]];
        assert_eq!(
            localization_score(onehot.view(), &[0], &origins, 2, &mask).unwrap(),
            Some(1.0)
        );
        let empty = ndarray::Array3::from_elem((1, 4, 8), false);
        assert_eq!(
            localization_score(uniform.view(), &[0], &origins, 2, &empty).unwrap(),
            None
        );
    }

    #[test]
    fn pca_recovers_dominant_axis() {
        let x = Array2::from_shape_fn((20, 3), |(i, j)| match j {
            0 => i as f64,
            1 => (i % 2) as f64 * 0.1,
            _ => 0.0,
        });
        let p = pca_2d(x.view()).unwrap();
        let spread0 = p.column(0).mapv(|v| v * v).sum();
        let spread1 = p.column(1).mapv(|v| v * v).sum();
        assert!(spread0 > 100.0 * spread1);
    }

    proptest! {
        #[test]
        fn qwk_matches_oracle_and_is_flip_symmetric(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 2..40)
        ) {
            let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let v = qwk(&a, &b, 4).unwrap();
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&v));
            let fa: Vec<usize> = a.iter().map(|x| 3 - x).collect();
            let fb: Vec<usize> = b.iter().map(|x| 3 - x).collect();
            prop_assert!((v - qwk(&fa, &fb, 4).unwrap()).abs() < 1e-12);
            let na = a.iter().collect::<std::collections::HashSet<_>>().len();
            let nb = b.iter().collect::<std::collections::HashSet<_>>().len();
            if na > 1 || nb > 1 {
                prop_assert!((v - qwk_oracle(&a, &b, 4)).abs() < 1e-9);
            }
        }

        #[test]
        fn amae_order_invariant(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..30),
            seed in 0u64..100,
        ) {
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            let sa: Vec<usize> = shuffled.iter().map(|p| p.0).collect();
            let sb: Vec<usize> = shuffled.iter().map(|p| p.1).collect();
            let v = amae(&a, &b, 4).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert!((v - amae(&sa, &sb, 4).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn jsd_symmetric_bounded(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 2..10)) {
            let sa: f64 = raw.iter().map(|p| p.0).sum::<f64>() + 1e-9;
            let sb: f64 = raw.iter().map(|p| p.1).sum::<f64>() + 1e-9;
            let a = Array1::from_iter(raw.iter().map(|p| p.0 / sa));
            let b = Array1::from_iter(raw.iter().map(|p| p.1 / sb));
            let ab = jsd(a.view(), b.view()).unwrap();
            prop_assert!((ab - jsd(b.view(), a.view()).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn sliced_wasserstein_symmetric(seed in 0u64..50, na in 2usize..12, nb in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Array2::from_shape_simple_fn((na, 3), || StandardNormal.sample(&mut rng));
            let b = Array2::from_shape_simple_fn((nb, 3), || StandardNormal.sample(&mut rng));
            let ab = sliced_wasserstein(a.view(), b.view(), 32, seed).unwrap();
            let ba = sliced_wasserstein(b.view(), a.view(), 32, seed).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert_eq!(sliced_wasserstein(a.view(), a.view(), 32, seed).unwrap(), 0.0);
        }
    }
}
