//! Leakage probe: fresh adversary heads retrained on frozen residual
//! features, scored by ROC on held-out volumes.

use super::{roc_curve, Roc};
use crate::concept::Concept;
use crate::error::{Error, Result};
use crate::losses::{corn_loss_grad, corn_probabilities};
use crate::model::Mlp;
use crate::training::AdamW;
use ndarray::{s, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: 64,
            epochs: 400,
            lr: 3e-3,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

/// Features of one volume: per-slice residual vectors and concept grades.
pub struct ProbeSample<'a> {
    pub z: ArrayView2<'a, f64>,
    /// Grades ordered sh, nu, ao.
    pub grades: [u8; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub concept: Concept,
    /// `None` when the test labels contain a single binarized class.
    pub roc: Option<Roc>,
    pub reason: Option<String>,
    pub final_train_loss: f64,
}

impl ProbeResult {
    pub fn auc(&self) -> Option<f64> {
        self.roc.as_ref().map(|r| r.auc)
    }
}

/// Grade threshold for the binarized ROC: positive means grade >= 2.
pub const PROBE_POSITIVE_GRADE: u8 = 2;

struct Stacked {
    x: Array2<f64>,
    /// Row ranges per volume.
    spans: Vec<(usize, usize)>,
}

fn stack(samples: &[ProbeSample]) -> Result<Stacked> {
    let dim = samples
        .first()
        .map(|s| s.z.ncols())
        .ok_or_else(|| Error::validation("probe needs at least one volume"))?;
    let rows: usize = samples.iter().map(|s| s.z.nrows()).sum();
    let mut x = Array2::zeros((rows, dim));
    let mut spans = Vec::with_capacity(samples.len());
    let mut at = 0;
    for s in samples {
        if s.z.ncols() != dim || s.z.nrows() == 0 {
            return Err(Error::validation("probe features have inconsistent shapes"));
        }
        x.slice_mut(s![at..at + s.z.nrows(), ..]).assign(&s.z);
        spans.push((at, at + s.z.nrows()));
        at += s.z.nrows();
    }
    Ok(Stacked { x, spans })
}

fn volume_logits(
    head: &Mlp<f64>,
    data: &Stacked,
) -> (
    Array2<f64>,
    crate::model::layers::MlpCache<f64>,
    Array2<f64>,
) {
    let (per_row, cache) = head.forward(data.x.view());
    let mut per_volume = Array2::zeros((data.spans.len(), per_row.ncols()));
    for (v, &(a, b)) in data.spans.iter().enumerate() {
        per_volume.row_mut(v).assign(
            &per_row
                .slice(s![a..b, ..])
                .mean_axis(Axis(0))
                .expect("rows"),
        );
    }
    (per_volume, cache, per_row)
}

fn train_head(
    train: &Stacked,
    labels: &[usize],
    num_logits: usize,
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<(Mlp<f64>, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = Mlp::<f64>::init(train.x.ncols(), cfg.hidden, num_logits, &mut rng);
    let mut opt = AdamW::new(&head, cfg.lr, cfg.weight_decay);
    let n = labels.len() as f64;
    let mut last = f64::NAN;
    for _ in 0..cfg.epochs {
        let (logits, cache, _) = volume_logits(&head, train);
        let mut dy = Array2::zeros((train.x.nrows(), num_logits));
        let mut loss = 0.0;
        for (v, &(a, b)) in train.spans.iter().enumerate() {
            let (l, g) = corn_loss_grad(logits.row(v), labels[v])?;
            loss += l / n;
            let g = g / (n * (b - a) as f64);
            for r in a..b {
                dy.row_mut(r).assign(&g);
            }
        }
        last = loss;
        let mut grad = head.zeros_like();
        head.backward(train.x.view(), &cache, dy.view(), &mut grad, false);
        opt.step(&mut head, &grad)?;
    }
    Ok((head, last))
}

/// Retrain one adversary per predefined concept on `train` residual features
/// and report ROC/AUC of `P(grade >= 2)` on `test`.
pub fn probe_adversary(
    train: &[ProbeSample],
    test: &[ProbeSample],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeResult>> {
    if num_classes < 3 {
        return Err(Error::validation(
            "probe binarization needs at least 3 grades",
        ));
    }
    let train_x = stack(train)?;
    let test_x = stack(test)?;
    if train_x.x.ncols() != test_x.x.ncols() {
        return Err(Error::validation("train and test features differ in width"));
    }
    let mut out = Vec::with_capacity(3);
    for c in Concept::PREDEFINED {
        let i = c.index();
        let labels: Vec<usize> = train.iter().map(|s| s.grades[i] as usize).collect();
        let (head, loss) = train_head(
            &train_x,
            &labels,
            num_classes - 1,
            cfg,
            cfg.seed.wrapping_add(i as u64),
        )?;
        let (logits, _, _) = volume_logits(&head, &test_x);
        let scores: Vec<f64> = logits
            .rows()
            .into_iter()
            .map(|l| corn_probabilities(l)[(PROBE_POSITIVE_GRADE - 1) as usize])
            .collect();
        let positive: Vec<bool> = test
            .iter()
            .map(|s| s.grades[i] >= PROBE_POSITIVE_GRADE)
            .collect();
        let (roc, reason) = match roc_curve(&scores, &positive) {
            Ok(r) => (Some(r), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(ProbeResult {
            concept: c,
            roc,
            reason,
            final_train_loss: loss,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn samples(n: usize, informative: bool, seed: u64) -> (Vec<Array2<f64>>, Vec<[u8; 3]>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut zs = Vec::new();
        let mut gs = Vec::new();
        for i in 0..n {
            let g = [(i % 4) as u8, ((i / 4) % 4) as u8, ((i / 16) % 4) as u8];
            let z = Array2::from_shape_fn((3, 6), |(_, j)| {
                let noise: f64 = rng.random_range(-0.5..0.5);
                if informative && j < 3 {
                    g[j] as f64 + noise
                } else {
                    noise
                }
            });
            zs.push(z);
            gs.push(g);
        }
        (zs, gs)
    }

    fn run(informative: bool) -> Vec<f64> {
        let (ztr, gtr) = samples(64, informative, 1);
        let (zte, gte) = samples(40, informative, 2);
        let tr: Vec<ProbeSample> = ztr
            .iter()
            .zip(&gtr)
            .map(|(z, &g)| ProbeSample {
                z: z.view(),
                grades: g,
            })
            .collect();
        let te: Vec<ProbeSample> = zte
            .iter()
            .zip(&gte)
            .map(|(z, &g)| ProbeSample {
                z: z.view(),
                grades: g,
            })
            .collect();
        let cfg = ProbeConfig {
            hidden: 16,
            epochs: 300,
            ..ProbeConfig::default()
        };
        probe_adversary(&tr, &te, 4, &cfg)
            .unwrap()
            .iter()
            .map(|r| r.auc().unwrap())
            .collect()
    }

    #[test]
    fn informative_features_are_detected() {
        for auc in run(true) {
            assert!(auc > 0.9, "{auc}");
        }
    }

    #[test]
    fn pure_noise_stays_near_chance() {
        for auc in run(false) {
            assert!((auc - 0.5).abs() < 0.2, "{auc}");
        }
    }

    #[test]
    fn single_class_test_set_reports_reason() {
        let (ztr, gtr) = samples(16, true, 1);
        let tr: Vec<ProbeSample> = ztr
            .iter()
            .zip(&gtr)
            .map(|(z, &g)| ProbeSample {
                z: z.view(),
                grades: g,
            })
            .collect();
        let te = vec![
            ProbeSample {
                z: ztr[0].view(),
                grades: [0, 0, 0],
            },
            ProbeSample {
                z: ztr[1].view(),
                grades: [1, 0, 0],
            },
        ];
        let cfg = ProbeConfig {
            epochs: 5,
            ..ProbeConfig::default()
        };
        let res = probe_adversary(&tr, &te, 4, &cfg).unwrap();
        assert!(res.iter().all(|r| r.roc.is_none() && r.reason.is_some()));
    }
}
