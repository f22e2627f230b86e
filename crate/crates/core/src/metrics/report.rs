//! Full evaluation of a trained model and its on-disk report.

use super::probe::ProbeSample;
use super::{
    amae_detail, attack_min_perturbation, jsd, localization_score, probe_adversary, qwk,
    sliced_wasserstein, AttackConfig, ProbeConfig, Roc, DEFAULT_PROJECTIONS,
};
use crate::concept::Concept;
use crate::error::{Error, Result};
use crate::inference::{infer_all, VolumeInference};
use crate::jsonio;
use crate::losses::TaskLoss;
use crate::model::AcMil;
use crate::synthdata::{PhantomVolume, Structure};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// A value that may be unavailable, with the reason when it is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: Option<f64>,
    pub reason: Option<String>,
}

impl Measured {
    pub fn some(v: f64) -> Self {
        Measured {
            value: Some(v),
            reason: None,
        }
    }

    pub fn absent(reason: impl Into<String>) -> Self {
        Measured {
            value: None,
            reason: Some(reason.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub volume_id: usize,
    pub y_true: u8,
    pub y_pred: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairJsd {
    pub pair: String,
    /// One value per (volume, slice).
    pub values: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_volumes: usize,
    pub qwk: f64,
    pub amae: f64,
    pub amae_absent_classes: Vec<usize>,
    pub predictions: Vec<PredictionRow>,
    pub jsd_pairs: Vec<PairJsd>,
    /// Keyed by concept short name.
    pub adversary_auc: BTreeMap<String, Measured>,
    /// Per branch, one entry per top-grade test volume; `None` means not
    /// degradable within the bracket.
    pub attack_cost: BTreeMap<String, Vec<Option<f64>>>,
    pub attack_median: BTreeMap<String, Measured>,
    pub wasserstein: BTreeMap<String, Measured>,
    pub localization: BTreeMap<String, Measured>,
}

pub struct EvalInputs<'a> {
    pub model: &'a AcMil<f32>,
    pub task_loss: TaskLoss,
    pub test: &'a [&'a PhantomVolume],
    /// Training volumes, needed for the probe and the distribution distance.
    pub train: Option<&'a [&'a PhantomVolume]>,
    pub probe: Option<ProbeConfig>,
    pub attack: Option<AttackConfig>,
    pub seed: u64,
}

pub struct Evaluation {
    pub report: MetricsReport,
    pub rocs: BTreeMap<String, Roc>,
    pub test: Vec<VolumeInference>,
    pub train: Vec<VolumeInference>,
}

fn to_f64(a: &Array2<f32>) -> Array2<f64> {
    a.mapv(f64::from)
}

/// Per-slice JSD between the attention maps of every localized pair.
pub fn jsd_pairs(inferences: &[VolumeInference]) -> Result<Vec<PairJsd>> {
    let mut out = Vec::new();
    for (a, b) in Concept::localized_pairs() {
        let mut values = Vec::new();
        for inf in inferences {
            let (ma, mb) = (&inf.alpha[a.index()], &inf.alpha[b.index()]);
            for m in 0..ma.nrows() {
                let pa = normalized(ma.row(m).mapv(f64::from));
                let pb = normalized(mb.row(m).mapv(f64::from));
                values.push(jsd(pa.view(), pb.view())?);
            }
        }
        let mean = if values.is_empty() {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        out.push(PairJsd {
            pair: format!("{a}-{b}"),
            values,
            mean,
        });
    }
    Ok(out)
}

/// Renormalize in f64; single-precision softmax rows drift by ~1e-7.
fn normalized(v: Array1<f64>) -> Array1<f64> {
    let s = v.sum();
    v / s
}

/// Mean localization of one concept's attention over the volumes that
/// carry masks.
pub fn mean_localization(
    inferences: &[VolumeInference],
    volumes: &[&PhantomVolume],
    concept: Concept,
) -> Result<Measured> {
    let Some(structure) = Structure::for_concept(concept) else {
        return Err(Error::validation(format!(
            "{concept} has no ground-truth structure"
        )));
    };
    let mut scores = Vec::new();
    let mut missing = 0;
    for (inf, vol) in inferences.iter().zip(volumes) {
        let Some(masks) = &vol.masks else {
            missing += 1;
            continue;
        };
        let alpha = to_f64(&inf.alpha[concept.index()]);
        if let Some(s) = localization_score(
            alpha.view(),
            &inf.slices,
            &inf.origins,
            inf.patch_size,
            masks.get(structure),
        )? {
            scores.push(s);
        }
    }
    if scores.is_empty() {
        let reason = if missing == volumes.len() {
            "no masks available".to_string()
        } else {
            format!("{structure:?} mask empty on every evaluated slice")
        };
        return Ok(Measured::absent(reason));
    }
    Ok(Measured::some(
        scores.iter().sum::<f64>() / scores.len() as f64,
    ))
}

/// Per-volume branch features: the branch's segment of `V_vol`.
pub fn branch_features(inferences: &[VolumeInference], concept: Concept) -> Array2<f64> {
    let l = inferences.first().map_or(0, |i| i.z[0].ncols());
    let mut out = Array2::zeros((inferences.len(), l));
    for (r, inf) in inferences.iter().enumerate() {
        let beta = inf.beta.mapv(f64::from);
        out.row_mut(r)
            .assign(&beta.dot(&to_f64(&inf.z[concept.index()])));
    }
    out
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

pub fn evaluate(inputs: &EvalInputs) -> Result<Evaluation> {
    let model = inputs.model;
    let k = model.config.num_classes;
    if inputs.test.is_empty() {
        return Err(Error::validation("no test volumes"));
    }
    let test = infer_all(model, inputs.test, inputs.task_loss)?;
    let y_true: Vec<usize> = test.iter().map(|i| i.y_true as usize).collect();
    let y_pred: Vec<usize> = test.iter().map(|i| i.pred).collect();
    let q = if test.len() >= 2 {
        qwk(&y_true, &y_pred, k)?
    } else {
        f64::NAN
    };
    let am = amae_detail(&y_true, &y_pred, k)?;

    let mut localization = BTreeMap::new();
    for c in [Concept::Nulling, Concept::Aorta] {
        localization.insert(
            c.short_name().to_string(),
            mean_localization(&test, inputs.test, c)?,
        );
    }

    let train = match inputs.train {
        Some(t) if !t.is_empty() => infer_all(model, t, inputs.task_loss)?,
        _ => Vec::new(),
    };

    let mut adversary_auc = BTreeMap::new();
    let mut rocs = BTreeMap::new();
    if let Some(cfg) = &inputs.probe {
        if train.is_empty() {
            for c in Concept::PREDEFINED {
                adversary_auc.insert(
                    c.short_name().to_string(),
                    Measured::absent("no training volumes for the probe"),
                );
            }
        } else {
            let un = Concept::Residual.index();
            let tr_z: Vec<Array2<f64>> = train.iter().map(|i| to_f64(&i.z[un])).collect();
            let te_z: Vec<Array2<f64>> = test.iter().map(|i| to_f64(&i.z[un])).collect();
            let tr: Vec<ProbeSample> = tr_z
                .iter()
                .zip(&train)
                .map(|(z, i)| ProbeSample {
                    z: z.view(),
                    grades: i.grades.to_array(),
                })
                .collect();
            let te: Vec<ProbeSample> = te_z
                .iter()
                .zip(&test)
                .map(|(z, i)| ProbeSample {
                    z: z.view(),
                    grades: i.grades.to_array(),
                })
                .collect();
            for r in probe_adversary(&tr, &te, k, cfg)? {
                let key = r.concept.short_name().to_string();
                match &r.roc {
                    Some(roc) => {
                        adversary_auc.insert(key.clone(), Measured::some(roc.auc));
                        rocs.insert(key, roc.clone());
                    }
                    None => {
                        adversary_auc
                            .insert(key, Measured::absent(r.reason.clone().unwrap_or_default()));
                    }
                }
            }
        }
    }

    let mut attack_cost = BTreeMap::new();
    let mut attack_median = BTreeMap::new();
    if let Some(cfg) = &inputs.attack {
        let top: Vec<&VolumeInference> = test.iter().filter(|i| i.pred == k - 1).collect();
        for c in Concept::ALL {
            let mut costs = Vec::with_capacity(top.len());
            for inf in &top {
                costs.push(attack_min_perturbation(model, &inf.z, c, cfg)?.cost());
            }
            let as_inf: Vec<f64> = costs.iter().map(|c| c.unwrap_or(f64::INFINITY)).collect();
            let m = match median(&as_inf) {
                Some(v) if v.is_finite() => Measured::some(v),
                Some(_) => Measured::absent("median volume not degradable within the bracket"),
                None => Measured::absent("no test volume predicted at the top grade"),
            };
            attack_cost.insert(c.short_name().to_string(), costs);
            attack_median.insert(c.short_name().to_string(), m);
        }
    }

    let mut wasserstein = BTreeMap::new();
    for c in Concept::ALL {
        let m = if train.len() < 2 || test.len() < 2 {
            Measured::absent("need at least 2 train and 2 test volumes")
        } else {
            let a = branch_features(&train, c);
            let b = branch_features(&test, c);
            Measured::some(sliced_wasserstein(
                a.view(),
                b.view(),
                DEFAULT_PROJECTIONS,
                inputs.seed,
            )?)
        };
        wasserstein.insert(c.short_name().to_string(), m);
    }

    let report = MetricsReport {
        n_volumes: test.len(),
        qwk: q,
        amae: am.value,
        amae_absent_classes: am.absent_classes(),
        predictions: test
            .iter()
            .map(|i| PredictionRow {
                volume_id: i.volume_id,
                y_true: i.y_true,
                y_pred: i.pred,
            })
            .collect(),
        jsd_pairs: jsd_pairs(&test)?,
        adversary_auc,
        attack_cost,
        attack_median,
        wasserstein,
        localization,
    };
    Ok(Evaluation {
        report,
        rocs,
        test,
        train,
    })
}

/// Write `metrics.json`, `roc_<concept>.csv` and `jsd_pairs.csv` into `dir`.
pub fn write_report(dir: &Path, eval: &Evaluation) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    jsonio::write_sorted(&dir.join("metrics.json"), &eval.report)?;
    for (concept, roc) in &eval.rocs {
        let path = dir.join(format!("roc_{concept}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["fpr", "tpr", "threshold"])?;
        for p in &roc.points {
            w.write_record([
                p.fpr.to_string(),
                p.tpr.to_string(),
                p.threshold.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    let path = dir.join("jsd_pairs.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["pair", "volume_id", "slice", "jsd"])?;
    for pair in &eval.report.jsd_pairs {
        let mut values = pair.values.iter();
        for inf in &eval.test {
            for &z in &inf.slices {
                if let Some(v) = values.next() {
                    w.write_record([
                        pair.pair.clone(),
                        inf.volume_id.to_string(),
                        z.to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(())
}
