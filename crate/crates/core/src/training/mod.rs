//! Optimization loop, cross-validation folds, early stopping and ablation
//! arms.

mod ablation;
mod folds;
mod optim;

pub use ablation::{
    run_ablation, summarize, write_ablation_csv, AblationRun, ArmFoldResult, ArmSummary,
    MetricSummary,
};
pub use folds::{make_folds, Fold};
pub use optim::AdamW;

use crate::bagging::{sample_subbag, SubBagConfig};
use crate::error::{Error, Result};
use crate::inference::infer_all;
use crate::jsonio;
use crate::losses::{
    sad_loss_grad, summed_corn_grad, total_loss, AdversarialScaling, LossReport, LossWeights,
    TaskLoss,
};
use crate::metrics::{amae, qwk};
use crate::model::{
    save_checkpoint, AcMil, Forward, GradientReversal, GradientRules, ModelConfig, OutputGrads,
    RngState, Scalar,
};
use crate::synthdata::PhantomVolume;
use crate::Concept;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Which auxiliary objectives are active. The task loss always is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    pub cbm: bool,
    pub sad: bool,
    pub adv: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            cbm: true,
            sad: true,
            adv: true,
        }
    }
}

impl AblationFlags {
    pub const NONE: AblationFlags = AblationFlags {
        cbm: false,
        sad: false,
        adv: false,
    };

    /// Parse a comma-separated list drawn from `cbm`, `sad`, `adv`. The
    /// empty string disables all three.
    pub fn parse(tokens: &str) -> Result<Self> {
        let mut flags = AblationFlags::NONE;
        for raw in tokens.split(',') {
            match raw.trim() {
                "" => {}
                "cbm" => flags.cbm = true,
                "sad" => flags.sad = true,
                "adv" => flags.adv = true,
                other => {
                    return Err(Error::validation(format!(
                        "unknown ablation token {other:?} (expected cbm, sad, adv)"
                    )))
                }
            }
        }
        Ok(flags)
    }
}

impl fmt::Display for AblationFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.cbm {
            parts.push("cbm");
        }
        if self.sad {
            parts.push("sad");
        }
        if self.adv {
            parts.push("adv");
        }
        f.write_str(&parts.join(","))
    }
}

/// The five configurations compared in the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationArm {
    #[serde(rename = "task-only")]
    TaskOnly,
    #[serde(rename = "+cbm")]
    Cbm,
    #[serde(rename = "+cbm+sad")]
    CbmSad,
    #[serde(rename = "+cbm+adv")]
    CbmAdv,
    #[serde(rename = "full")]
    Full,
}

impl AblationArm {
    pub const ALL: [AblationArm; 5] = [
        AblationArm::TaskOnly,
        AblationArm::Cbm,
        AblationArm::CbmSad,
        AblationArm::CbmAdv,
        AblationArm::Full,
    ];

    pub fn flags(self) -> AblationFlags {
        let (cbm, sad, adv) = match self {
            AblationArm::TaskOnly => (false, false, false),
            AblationArm::Cbm => (true, false, false),
            AblationArm::CbmSad => (true, true, false),
            AblationArm::CbmAdv => (true, false, true),
            AblationArm::Full => (true, true, true),
        };
        AblationFlags { cbm, sad, adv }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationArm::TaskOnly => "task-only",
            AblationArm::Cbm => "+cbm",
            AblationArm::CbmSad => "+cbm+sad",
            AblationArm::CbmAdv => "+cbm+adv",
            AblationArm::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        AblationArm::ALL.into_iter().find(|a| a.name() == name)
    }
}

impl fmt::Display for AblationArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs_max: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub folds: usize,
    pub seed: u64,
    pub ablation: AblationFlags,
    pub weights: LossWeights,
    pub adversarial_scaling: AdversarialScaling,
    pub task_loss: TaskLoss,
    pub subbag: SubBagConfig,
    /// Sub-bags drawn per training volume per epoch.
    pub subbags_per_volume: usize,
    pub val_fraction: f64,
    /// Learning-rate multiplier for the adversary heads only.
    pub adv_lr_scale: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-3,
            epochs_max: 200,
            patience: 20,
            folds: 3,
            seed: 0,
            ablation: AblationFlags::default(),
            weights: LossWeights::default(),
            adversarial_scaling: AdversarialScaling::default(),
            task_loss: TaskLoss::default(),
            subbag: SubBagConfig::default(),
            subbags_per_volume: 1,
            val_fraction: 0.1,
            adv_lr_scale: 1.0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::validation(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::validation(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(self.adv_lr_scale > 0.0 && self.adv_lr_scale.is_finite()) {
            return Err(Error::validation(format!(
                "adv_lr_scale must be positive, got {}",
                self.adv_lr_scale
            )));
        }
        if self.patience == 0 {
            return Err(Error::validation("patience must be at least 1"));
        }
        if self.epochs_max == 0 {
            return Err(Error::validation("epochs_max must be at least 1"));
        }
        if self.subbags_per_volume == 0 {
            return Err(Error::validation("subbags_per_volume must be at least 1"));
        }
        if self.subbag.patch_size != self.model.patch_size {
            return Err(Error::validation(format!(
                "sub-bag patch size {} differs from model patch size {}",
                self.subbag.patch_size, self.model.patch_size
            )));
        }
        self.weights.validate()?;
        self.model.validate()
    }

    pub fn objective(&self) -> Objective {
        Objective {
            flags: self.ablation,
            weights: self.weights,
            scaling: self.adversarial_scaling,
            task_loss: self.task_loss,
        }
    }
}

/// Labels attached to one training bag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BagLabels {
    pub y: usize,
    /// Ordered sh, nu, ao.
    pub concepts: [usize; 3],
}

impl BagLabels {
    pub fn of(volume: &PhantomVolume) -> Self {
        let g = volume.grades.to_array();
        BagLabels {
            y: volume.y_vol as usize,
            concepts: [g[0] as usize, g[1] as usize, g[2] as usize],
        }
    }
}

/// The active loss terms with their weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Objective {
    pub flags: AblationFlags,
    pub weights: LossWeights,
    pub scaling: AdversarialScaling,
    pub task_loss: TaskLoss,
}

impl Objective {
    /// Gradient routing for training: stop-gradient always on, reversal on
    /// the adversary input when the adversarial term is active.
    pub fn rules<F: Scalar>(&self) -> GradientRules<F> {
        GradientRules {
            stop_gradient: true,
            reversal: self.flags.adv.then(|| {
                GradientReversal::new(F::c(self.scaling.reversal_lambda(self.weights.lambda_adv)))
            }),
        }
    }

    /// Loss breakdown and the upstream gradients of the weighted total.
    pub fn evaluate<F: Scalar>(
        &self,
        fwd: &Forward<F>,
        labels: &BagLabels,
    ) -> Result<(LossReport, OutputGrads<F>)> {
        let mut grads = OutputGrads::default();
        let (task, dtask) = self
            .task_loss
            .loss_grad(fwd.head.task_logits.view(), labels.y)?;
        grads.task_logits = Some(dtask);

        let mut cbm = [0.0; 3];
        if self.flags.cbm {
            let (_, g) = summed_corn_grad(&fwd.concept_logits, &labels.concepts)?;
            let w = F::c(self.weights.lambda_cbm);
            for (i, gi) in g.into_iter().enumerate() {
                cbm[i] =
                    crate::losses::corn_loss(fwd.concept_logits[i].view(), labels.concepts[i])?
                        .as_f64();
                grads.concept_logits[i] = Some(gi * w);
            }
        }

        let mut adv = [0.0; 3];
        if self.flags.adv {
            let (_, g) = summed_corn_grad(&fwd.adv_logits, &labels.concepts)?;
            let w = F::c(self.scaling.loss_weight(self.weights.lambda_adv));
            for (i, gi) in g.into_iter().enumerate() {
                adv[i] = crate::losses::corn_loss(fwd.adv_logits[i].view(), labels.concepts[i])?
                    .as_f64();
                grads.adv_logits[i] = Some(gi * w);
            }
        }

        let mut sad = 0.0;
        if self.flags.sad {
            let [nu, ao, un] = Concept::LOCALIZED.map(|c| fwd.alpha[c.index()].view());
            let (v, g) = sad_loss_grad([nu, ao, un])?;
            sad = v.as_f64();
            let w = F::c(self.weights.lambda_sad);
            for (c, gi) in Concept::LOCALIZED.into_iter().zip(g) {
                grads.alpha[c.index()] = Some(gi * w);
            }
        }

        let report = total_loss(task.as_f64(), cbm, adv, sad, &self.weights, self.scaling)?;
        Ok((report, grads))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub task: f64,
    /// `None` when the term is disabled.
    pub cbm: Option<f64>,
    pub adv: Option<f64>,
    pub sad: Option<f64>,
    pub total: f64,
    pub val_qwk: f64,
    pub val_amae: f64,
    pub is_best: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.records.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epoch", "task", "cbm", "adv", "sad", "total", "val_qwk", "val_amae", "is_best",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.task.to_string(),
                opt(r.cbm),
                opt(r.adv),
                opt(r.sad),
                r.total.to_string(),
                r.val_qwk.to_string(),
                r.val_amae.to_string(),
                r.is_best.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub model: AcMil<f32>,
    pub history: TrainHistory,
    pub steps: u64,
    /// Sampling stream position after the last epoch.
    pub rng: RngState,
}

fn sampling_seed(seed: u64) -> u64 {
    seed ^ 0x5DEE_CE66_D1CE_5EED
}

/// Validation QWK and AMAE with dense inference.
pub fn validate(
    model: &AcMil<f32>,
    volumes: &[&PhantomVolume],
    task_loss: TaskLoss,
) -> Result<(f64, f64)> {
    let k = model.config.num_classes;
    let inf = infer_all(model, volumes, task_loss)?;
    let y: Vec<usize> = inf.iter().map(|i| i.y_true as usize).collect();
    let p: Vec<usize> = inf.iter().map(|i| i.pred).collect();
    let q = if y.len() >= 2 {
        qwk(&y, &p, k)?
    } else if y == p {
        1.0
    } else {
        0.0
    };
    Ok((q, amae(&y, &p, k)?))
}

pub fn train_fold(
    config: &TrainConfig,
    train: &[&PhantomVolume],
    val: &[&PhantomVolume],
) -> Result<TrainOutcome> {
    train_fold_with(config, train, val, &mut |_| {})
}

/// Train one fold; `observer` sees every epoch record as it is produced.
pub fn train_fold_with(
    config: &TrainConfig,
    train: &[&PhantomVolume],
    val: &[&PhantomVolume],
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::validation("no training volumes"));
    }
    if val.is_empty() {
        return Err(Error::validation("no validation volumes"));
    }
    let mut model = AcMil::<f32>::new(config.model.clone(), config.seed)?;
    let mut opt = AdamW::new(&model.params, config.lr, config.weight_decay)
        .with_group_scale("adv_head", config.adv_lr_scale);
    let sample_seed = sampling_seed(config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let objective = config.objective();
    let rules = objective.rules::<f32>();

    let mut history = TrainHistory::default();
    let mut best: Option<((f64, f64), AcMil<f32>)> = None;
    let mut since_best = 0;
    let mut last_finite = None;

    for epoch in 1..=config.epochs_max {
        let mut order: Vec<usize> = (0..train.len())
            .flat_map(|i| std::iter::repeat_n(i, config.subbags_per_volume))
            .collect();
        order.shuffle(&mut rng);
        let mut sum = LossReport::default();
        for &i in &order {
            let volume = train[i];
            let bag = sample_subbag(volume, &config.subbag, &mut rng)?;
            let fwd = model.forward(bag.grid.pixel_tensor().view(), true)?;
            let (report, out) = objective.evaluate(&fwd, &BagLabels::of(volume))?;
            if !report.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_finite_epoch: last_finite,
                });
            }
            let grads = model.backward(&fwd, &out, &rules)?;
            opt.step(&mut model.params, &grads.params)?;
            sum.task += report.task;
            for j in 0..3 {
                sum.cbm[j] += report.cbm[j];
                sum.adv[j] += report.adv[j];
            }
            sum.sad += report.sad;
            sum.total += report.total;
        }
        last_finite = Some(epoch);
        let n = order.len() as f64;

        let (val_qwk, val_amae) = validate(&model, val, config.task_loss)?;
        let key = (val_qwk, -val_amae);
        let improved = match &best {
            None => true,
            Some((b, _)) => key.0 > b.0 || (key.0 == b.0 && key.1 > b.1),
        };
        if improved {
            best = Some((key, model.clone()));
            history.best_epoch = epoch;
            since_best = 0;
            for r in history.records.iter_mut() {
                r.is_best = false;
            }
        } else {
            since_best += 1;
        }
        let flags = config.ablation;
        let record = EpochRecord {
            epoch,
            task: sum.task / n,
            cbm: flags.cbm.then(|| sum.cbm_sum() / n),
            adv: flags.adv.then(|| sum.adv_sum() / n),
            sad: flags.sad.then(|| sum.sad / n),
            total: sum.total / n,
            val_qwk,
            val_amae,
            is_best: improved,
        };
        observer(&record);
        history.records.push(record);
        if since_best >= config.patience {
            history.stopped_early = epoch < config.epochs_max;
            break;
        }
    }

    let (_, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        model: best_model,
        history,
        steps: opt.steps_taken(),
        rng: RngState::capture(sample_seed, &rng),
    })
}

/// Contents of `folds.json`: every fold of the split and the one trained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub fold: usize,
    pub folds: Vec<Fold>,
}

impl FoldAssignment {
    pub fn read(path: &Path) -> Result<Self> {
        jsonio::read(path)
    }

    pub fn current(&self) -> Result<&Fold> {
        self.folds.get(self.fold).ok_or_else(|| {
            Error::validation(format!(
                "fold {} out of range ({} folds)",
                self.fold,
                self.folds.len()
            ))
        })
    }
}

/// Checkpoint metadata key holding the training config as JSON.
pub const TRAIN_CONFIG_KEY: &str = "train_config";

/// Recover the training config stored by [`write_run_dir`].
pub fn train_config_from_meta(meta: &BTreeMap<String, String>) -> Result<Option<TrainConfig>> {
    meta.get(TRAIN_CONFIG_KEY)
        .map(|text| serde_json::from_str(text).map_err(|e| Error::json(TRAIN_CONFIG_KEY, e)))
        .transpose()
}

/// Write `config.json`, `history.csv`, `best.ckpt` and `folds.json`.
pub fn write_run_dir(
    dir: &Path,
    config: &TrainConfig,
    fold_index: usize,
    folds: &[Fold],
    outcome: &TrainOutcome,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    jsonio::write_sorted(&dir.join("config.json"), config)?;
    outcome.history.write_csv(&dir.join("history.csv"))?;
    let mut meta = BTreeMap::new();
    meta.insert("fold".to_string(), fold_index.to_string());
    meta.insert("ablation".to_string(), config.ablation.to_string());
    meta.insert(
        TRAIN_CONFIG_KEY.to_string(),
        jsonio::to_sorted_string(config)?,
    );
    save_checkpoint(
        &dir.join("best.ckpt"),
        &outcome.model.config,
        &outcome.model.params,
        outcome.steps,
        outcome.history.best_epoch,
        Some(outcome.rng.clone()),
        meta,
    )?;
    jsonio::write_sorted(
        &dir.join("folds.json"),
        &FoldAssignment {
            fold: fold_index,
            folds: folds.to_vec(),
        },
    )
}
