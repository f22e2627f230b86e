//! Minimum-norm perturbation of one concept branch's slice vectors that
//! pulls a top-grade prediction below the top grade.

use crate::concept::Concept;
use crate::error::{Error, Result};
use crate::losses::corn_rank;
use crate::model::{AcMil, Scalar};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    /// Upper end of the search bracket on `||delta||_2`.
    pub bracket: f64,
    /// Fixed scan step along the attack direction; the scan stops at the
    /// first degrading magnitude, so enlarging the bracket never raises the
    /// reported cost.
    pub scan_step: f64,
    pub bisection_steps: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            bracket: 100.0,
            scan_step: 100.0 / 512.0,
            bisection_steps: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "cost", rename_all = "snake_case")]
pub enum AttackOutcome {
    Cost(f64),
    NotDegradable,
}

impl AttackOutcome {
    pub fn cost(self) -> Option<f64> {
        match self {
            AttackOutcome::Cost(c) => Some(c),
            AttackOutcome::NotDegradable => None,
        }
    }
}

/// `z` holds the slice vectors of every concept, `[slices, L]` each, from a
/// dense forward pass of the volume.
pub fn attack_min_perturbation<F: Scalar>(
    model: &AcMil<F>,
    z: &[Array2<F>],
    branch: Concept,
    cfg: &AttackConfig,
) -> Result<AttackOutcome> {
    let top = model.config.num_classes - 1;
    if !(cfg.bracket > 0.0 && cfg.scan_step > 0.0) {
        return Err(Error::validation(
            "attack bracket and step must be positive",
        ));
    }
    let rank_at = |delta: &Array2<F>, t: F| -> Result<usize> {
        let mut zz = z.to_vec();
        zz[branch.index()] = &zz[branch.index()] + &(delta * t);
        let head = model.fuse_and_tier2(&zz)?;
        Ok(corn_rank(head.task_logits.view()))
    };
    let head = model.fuse_and_tier2(z)?;
    if corn_rank(head.task_logits.view()) != top {
        return Err(Error::validation(format!(
            "volume is not predicted at the top grade {top}"
        )));
    }
    // Margin of the top decision: log P(y > top-1) - log 0.5. Its gradient
    // with respect to the logits is 1 - sigmoid(l_j).
    let dlogits: Array1<F> = head
        .task_logits
        .mapv(|l| F::one() - crate::model::layers::sigmoid(l));
    let grads = model.head_input_gradient(z, dlogits.view());
    let g = &grads[branch.index()];
    let norm = g
        .iter()
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Ok(AttackOutcome::NotDegradable);
    }
    let direction = g.mapv(|v| F::c(-v.as_f64() / norm));

    let steps = (cfg.bracket / cfg.scan_step).ceil() as usize;
    let mut lo = 0.0;
    let mut hi = None;
    for i in 1..=steps {
        let t = (i as f64 * cfg.scan_step).min(cfg.bracket);
        if rank_at(&direction, F::c(t))? < top {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let Some(mut hi) = hi else {
        return Ok(AttackOutcome::NotDegradable);
    };
    for _ in 0..cfg.bisection_steps {
        let mid = 0.5 * (lo + hi);
        if rank_at(&direction, F::c(mid))? < top {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(AttackOutcome::Cost(hi))
}
