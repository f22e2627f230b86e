//! Ablation grid: every arm trained and evaluated on every fold.

use super::{make_folds, train_fold, AblationArm, Fold, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, AttackConfig, EvalInputs, MetricsReport, ProbeConfig};
use crate::synthdata::PhantomVolume;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use std::collections::BTreeMap;
use std::path::Path;

pub struct AblationRun<'a> {
    pub base: TrainConfig,
    pub arms: Vec<AblationArm>,
    pub volumes: &'a [PhantomVolume],
    pub probe: Option<ProbeConfig>,
    pub attack: Option<AttackConfig>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArmFoldResult {
    pub arm: AblationArm,
    pub fold: usize,
    pub best_epoch: usize,
    pub report: MetricsReport,
    pub history: TrainHistory,
}

impl ArmFoldResult {
    /// Scalar metrics by name; unavailable values are left out.
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let r = &self.report;
        let mut out = BTreeMap::new();
        out.insert("qwk".to_string(), r.qwk);
        out.insert("amae".to_string(), r.amae);
        let mut jsd_total = 0.0;
        for p in &r.jsd_pairs {
            out.insert(format!("jsd_{}", p.pair), p.mean);
            jsd_total += p.mean;
        }
        if !r.jsd_pairs.is_empty() {
            out.insert("jsd_mean".to_string(), jsd_total / r.jsd_pairs.len() as f64);
        }
        let mut add = |prefix: &str, m: &BTreeMap<String, crate::metrics::Measured>| {
            for (k, v) in m {
                if let Some(x) = v.value {
                    out.insert(format!("{prefix}_{k}"), x);
                }
            }
        };
        add("adv_auc", &r.adversary_auc);
        add("attack", &r.attack_median);
        add("wasserstein", &r.wasserstein);
        add("loc", &r.localization);
        out.retain(|_, v| v.is_finite());
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    /// 95% Student-t interval; NaN with fewer than two folds.
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: AblationArm,
    pub metrics: BTreeMap<String, MetricSummary>,
}

fn summary(values: &[f64]) -> MetricSummary {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MetricSummary {
            mean,
            std: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            n,
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("dof is positive")
        .inverse_cdf(0.975);
    let half = t * std / (n as f64).sqrt();
    MetricSummary {
        mean,
        std,
        ci_low: mean - half,
        ci_high: mean + half,
        n,
    }
}

pub fn summarize(results: &[ArmFoldResult]) -> Vec<ArmSummary> {
    let mut arms: Vec<AblationArm> = results.iter().map(|r| r.arm).collect();
    arms.sort();
    arms.dedup();
    arms.into_iter()
        .map(|arm| {
            let mut per: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in results.iter().filter(|r| r.arm == arm) {
                for (k, v) in r.scalars() {
                    per.entry(k).or_default().push(v);
                }
            }
            ArmSummary {
                arm,
                metrics: per.into_iter().map(|(k, v)| (k, summary(&v))).collect(),
            }
        })
        .collect()
}

/// Long format: `arm, metric, mean, std, ci_low, ci_high, n`.
pub fn write_ablation_csv(path: &Path, summaries: &[ArmSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["arm", "metric", "mean", "std", "ci_low", "ci_high", "n"])?;
    for s in summaries {
        for (metric, m) in &s.metrics {
            w.write_record([
                s.arm.name().to_string(),
                metric.clone(),
                m.mean.to_string(),
                m.std.to_string(),
                m.ci_low.to_string(),
                m.ci_high.to_string(),
                m.n.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn pick<'a>(volumes: &'a [PhantomVolume], idx: &[usize]) -> Vec<&'a PhantomVolume> {
    idx.iter().map(|&i| &volumes[i]).collect()
}

/// Train and evaluate every (arm, fold) pair. Fold `f` uses model seed
/// `base.seed + f` for every arm, so arms are compared on identical
/// initializations and sampling streams.
pub fn run_ablation(run: &AblationRun) -> Result<(Vec<Fold>, Vec<ArmFoldResult>)> {
    if run.arms.is_empty() {
        return Err(Error::validation("no ablation arms selected"));
    }
    let labels: Vec<u8> = run.volumes.iter().map(|v| v.y_vol).collect();
    let folds = make_folds(
        &labels,
        run.base.folds,
        run.base.seed,
        run.base.val_fraction,
    )?;
    let jobs: Vec<(AblationArm, usize)> = run
        .arms
        .iter()
        .flat_map(|&a| (0..folds.len()).map(move |f| (a, f)))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(arm, f)| {
            let fold = &folds[f];
            let config = TrainConfig {
                ablation: arm.flags(),
                seed: run.base.seed.wrapping_add(f as u64),
                ..run.base.clone()
            };
            let train = pick(run.volumes, &fold.train);
            let val = pick(run.volumes, &fold.val);
            let test = pick(run.volumes, &fold.test);
            let outcome = train_fold(&config, &train, &val)?;
            let eval = evaluate(&EvalInputs {
                model: &outcome.model,
                task_loss: config.task_loss,
                test: &test,
                train: Some(&train),
                probe: run.probe.clone().map(|p| ProbeConfig {
                    seed: p.seed.wrapping_add(f as u64),
                    ..p
                }),
                attack: run.attack,
                seed: config.seed,
            })?;
            Ok(ArmFoldResult {
                arm,
                fold: f,
                best_epoch: outcome.history.best_epoch,
                report: eval.report,
                history: outcome.history,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((folds, results))
}
