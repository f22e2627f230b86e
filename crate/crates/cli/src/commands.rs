use crate::args::{
    check_out_dir, AblateArgs, AttackArgs, CheckpointArgs, Cli, Command, EvalArgs, GenDataArgs,
    ProbeArgs, Split, TrainArgs,
};
use crate::manifest::RunManifest;
use crate::plots;
use acmil::concept::Concept;
use acmil::losses::TaskLoss;
use acmil::metrics::{
    branch_features, evaluate, pca_2d, write_report, AttackConfig, EvalInputs, Evaluation,
    ProbeConfig,
};
use acmil::model::{load_checkpoint, AcMil};
use acmil::synthdata::{
    generate_dataset, read_dataset, read_dataset_with, write_dataset, DatasetConfig, PhantomVolume,
    ReadOptions,
};
use acmil::training::{
    make_folds, run_ablation, summarize, train_config_from_meta, train_fold_with,
    write_ablation_csv, write_run_dir, AblationArm, AblationRun, Fold, FoldAssignment,
};
use anyhow::{bail, Context, Result};
use ndarray::{concatenate, s, Axis};
use serde::Serialize;
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Probe(a) => probe(a),
        Command::Attack(a) => attack(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let v = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn inputs(pairs: &[(&str, &Path)]) -> BTreeMap<String, PathBuf> {
    pairs
        .iter()
        .map(|(k, p)| (k.to_string(), p.to_path_buf()))
        .collect()
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    check_out_dir(&a.out, a.force)?;
    let [d, h, w] = a.shape;
    let config = DatasetConfig::new(a.count, a.seed).with_shape(d, h, w);
    // Fail on an unbalanceable count before touching the directory.
    config.class_targets()?;
    if a.force && a.out.exists() {
        for entry in std::fs::read_dir(&a.out)? {
            let path = entry?.path();
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            if path.is_file() && (name.starts_with("vol_") || name == "meta.json") {
                std::fs::remove_file(&path)?;
            }
        }
    }
    let manifest = RunManifest::begin(&a.out, "gen-data", &config, a.seed, BTreeMap::new())?;
    let volumes = generate_dataset(&config)?;
    write_dataset(&volumes, &a.out, Some(a.seed))?;
    manifest.finish()
}

fn train(a: TrainArgs) -> Result<()> {
    let config = a.settings.resolve()?;
    let data = read_dataset(&a.data)?;
    if a.fold >= config.folds {
        bail!("fold {} out of range for {} folds", a.fold, config.folds);
    }
    let manifest = RunManifest::begin(
        &a.out,
        "train",
        &json!({ "fold": a.fold, "train": &config }),
        config.seed,
        inputs(&[("data", &a.data)]),
    )?;
    let labels: Vec<u8> = data.volumes.iter().map(|v| v.y_vol).collect();
    let folds = make_folds(&labels, config.folds, config.seed, config.val_fraction)?;
    let fold = &folds[a.fold];
    let train = pick(&data.volumes, &fold.train);
    let val = pick(&data.volumes, &fold.val);
    let quiet = a.quiet;
    let outcome = train_fold_with(&config, &train, &val, &mut |r| {
        if !quiet {
            eprintln!(
                "epoch {:>4}  total {:.4}  task {:.4}  val_qwk {:.3}  val_amae {:.3}{}",
                r.epoch,
                r.total,
                r.task,
                r.val_qwk,
                r.val_amae,
                if r.is_best { "  *" } else { "" }
            );
        }
    })?;
    write_run_dir(&a.out, &config, a.fold, &folds, &outcome)?;
    plots::history(&a.out.join("history.png"), &outcome.history)?;
    manifest.finish()
}

fn pick<'a>(volumes: &'a [PhantomVolume], idx: &[usize]) -> Vec<&'a PhantomVolume> {
    idx.iter().map(|&i| &volumes[i]).collect()
}

/// Model, dataset and volume selection for the checkpoint commands.
struct Loaded {
    model: AcMil<f32>,
    task_loss: TaskLoss,
    volumes: Vec<PhantomVolume>,
    fold: Option<Fold>,
}

impl Loaded {
    fn open(c: &CheckpointArgs) -> Result<Self> {
        let ckpt = load_checkpoint(&c.ckpt)?;
        let task_loss = train_config_from_meta(&ckpt.header.meta)?
            .map(|t| t.task_loss)
            .unwrap_or_default();
        let folds_path = match &c.folds_file {
            Some(p) => Some(p.clone()),
            None => c
                .ckpt
                .parent()
                .map(|d| d.join("folds.json"))
                .filter(|p| p.exists()),
        };
        let fold = match &folds_path {
            Some(p) => Some(FoldAssignment::read(p)?.current()?.clone()),
            None if c.split == Split::All => None,
            None => bail!(
                "no folds.json next to {}; pass --folds-file or use --split all",
                c.ckpt.display()
            ),
        };
        let data = read_dataset_with(
            &c.data,
            ReadOptions {
                require_masks: false,
            },
        )?;
        let p = ckpt.header.config.patch_size;
        let [_, h, w] = data.meta.shape;
        if h < p || w < p {
            bail!(
                "checkpoint expects {p}x{p} patches but dataset slices are {h}x{w} (config/shape mismatch)"
            );
        }
        if let Some(f) = &fold {
            let n = data.volumes.len();
            if let Some(&i) = f
                .train
                .iter()
                .chain(&f.val)
                .chain(&f.test)
                .find(|&&i| i >= n)
            {
                bail!("fold assignment refers to volume index {i} but the dataset has {n} volumes");
            }
        }
        Ok(Loaded {
            model: AcMil {
                config: ckpt.header.config,
                params: ckpt.params,
            },
            task_loss,
            volumes: data.volumes,
            fold,
        })
    }

    fn split(&self, split: Split) -> Vec<&PhantomVolume> {
        match (&self.fold, split) {
            (Some(f), Split::Train) => pick(&self.volumes, &f.train),
            (Some(f), Split::Val) => pick(&self.volumes, &f.val),
            (Some(f), Split::Test) => pick(&self.volumes, &f.test),
            _ => self.volumes.iter().collect(),
        }
    }

    /// Reference set for the probe and the distribution distance.
    fn train(&self) -> Option<Vec<&PhantomVolume>> {
        self.fold.as_ref().map(|f| pick(&self.volumes, &f.train))
    }

    fn evaluate(
        &self,
        c: &CheckpointArgs,
        probe: Option<ProbeConfig>,
        attack: Option<AttackConfig>,
    ) -> Result<Evaluation> {
        let test = self.split(c.split);
        let train = self.train();
        Ok(evaluate(&EvalInputs {
            model: &self.model,
            task_loss: self.task_loss,
            test: &test,
            train: train.as_deref(),
            probe,
            attack,
            seed: c.seed,
        })?)
    }
}

fn checkpoint_inputs(c: &CheckpointArgs) -> BTreeMap<String, PathBuf> {
    let mut m = inputs(&[("ckpt", &c.ckpt), ("data", &c.data)]);
    if let Some(f) = &c.folds_file {
        m.insert("folds".to_string(), f.clone());
    }
    m
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "val",
        Split::Test => "test",
        Split::All => "all",
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let c = &a.common;
    let loaded = Loaded::open(c)?;
    let probe = (!a.no_probe).then(|| ProbeConfig {
        seed: c.seed,
        ..ProbeConfig::default()
    });
    let attack = (!a.no_attack).then(AttackConfig::default);
    let manifest = RunManifest::begin(
        &c.out,
        "eval",
        &json!({ "split": split_name(c.split), "probe": &probe, "attack": &attack }),
        c.seed,
        checkpoint_inputs(c),
    )?;
    let ev = loaded.evaluate(c, probe, attack)?;
    write_report(&c.out, &ev)?;
    roc_plot(&c.out, &ev)?;
    let jsd: Vec<(String, Vec<f64>)> = ev
        .report
        .jsd_pairs
        .iter()
        .map(|p| (p.pair.clone(), p.values.clone()))
        .collect();
    plots::boxplot(
        &c.out.join("jsd_pairs.png"),
        "attention JSD per slice",
        "JSD (bits)",
        &jsd,
    )?;
    if attack.is_some() {
        attack_plot(&c.out, &ev)?;
    }
    for concept in Concept::ALL {
        pca_plot(&c.out, &ev, concept)?;
    }
    manifest.finish()
}

fn roc_plot(dir: &Path, ev: &Evaluation) -> Result<()> {
    if ev.rocs.is_empty() {
        return Ok(());
    }
    let curves: Vec<(String, &acmil::metrics::Roc)> =
        ev.rocs.iter().map(|(k, r)| (k.clone(), r)).collect();
    plots::roc(&dir.join("probe_roc.png"), "residual-branch probe", &curves)
}

fn attack_plot(dir: &Path, ev: &Evaluation) -> Result<()> {
    let groups: Vec<(String, Vec<f64>)> = Concept::ALL
        .iter()
        .map(|c| {
            let name = c.short_name().to_string();
            let costs = ev
                .report
                .attack_cost
                .get(&name)
                .map(|v| v.iter().flatten().copied().collect())
                .unwrap_or_default();
            (name, costs)
        })
        .collect();
    plots::boxplot(
        &dir.join("attack_cost.png"),
        "minimum attack cost",
        "L2 norm",
        &groups,
    )
}

/// Train and test branch features projected on shared principal axes.
fn pca_plot(dir: &Path, ev: &Evaluation, concept: Concept) -> Result<()> {
    let test = branch_features(&ev.test, concept);
    let train = branch_features(&ev.train, concept);
    let stacked = if train.nrows() > 0 {
        concatenate(Axis(0), &[train.view(), test.view()])?
    } else {
        test.clone()
    };
    if stacked.nrows() < 2 {
        return Ok(());
    }
    let proj = pca_2d(stacked.view())?;
    let rows = |a: usize, b: usize| -> Vec<(f64, f64)> {
        proj.slice(s![a..b, ..])
            .rows()
            .into_iter()
            .map(|r| (r[0], r[1]))
            .collect()
    };
    let n = train.nrows();
    let mut clouds = Vec::new();
    if n > 0 {
        clouds.push(("train".to_string(), rows(0, n)));
    }
    clouds.push(("test".to_string(), rows(n, stacked.nrows())));
    let name = concept.short_name();
    plots::scatter(
        &dir.join(format!("pca_{name}.png")),
        &format!("{name} branch features"),
        &clouds,
    )
}

fn probe(a: ProbeArgs) -> Result<()> {
    let c = &a.common;
    let loaded = Loaded::open(c)?;
    let cfg = ProbeConfig {
        hidden: a.hidden,
        epochs: a.epochs,
        seed: c.seed,
        ..ProbeConfig::default()
    };
    let manifest = RunManifest::begin(
        &c.out,
        "probe",
        &json!({ "split": split_name(c.split), "probe": &cfg }),
        c.seed,
        checkpoint_inputs(c),
    )?;
    if loaded.fold.is_none() {
        bail!("the probe trains on the fold's training volumes; a fold assignment is required");
    }
    let ev = loaded.evaluate(c, Some(cfg), None)?;
    write_json(
        &c.out.join("probe.json"),
        &json!({ "adversary_auc": ev.report.adversary_auc, "roc": ev.rocs }),
    )?;
    roc_plot(&c.out, &ev)?;
    manifest.finish()
}

fn attack(a: AttackArgs) -> Result<()> {
    let c = &a.common;
    let loaded = Loaded::open(c)?;
    let cfg = AttackConfig {
        bracket: a.bracket,
        scan_step: a.bracket / 512.0,
        ..AttackConfig::default()
    };
    let manifest = RunManifest::begin(
        &c.out,
        "attack",
        &json!({ "split": split_name(c.split), "attack": &cfg }),
        c.seed,
        checkpoint_inputs(c),
    )?;
    let ev = loaded.evaluate(c, None, Some(cfg))?;
    write_json(
        &c.out.join("attack.json"),
        &json!({
            "attack_cost": ev.report.attack_cost,
            "attack_median": ev.report.attack_median,
            "predictions": ev.report.predictions,
        }),
    )?;
    attack_plot(&c.out, &ev)?;
    manifest.finish()
}

fn ablate(a: AblateArgs) -> Result<()> {
    let base = a.settings.resolve()?;
    let arms = if a.arms.is_empty() {
        AblationArm::ALL.to_vec()
    } else {
        a.arms.clone()
    };
    let data = read_dataset(&a.data)?;
    let probe = (!a.no_probe).then(|| ProbeConfig {
        seed: base.seed,
        ..ProbeConfig::default()
    });
    let attack = (!a.no_attack).then(AttackConfig::default);
    let manifest = RunManifest::begin(
        &a.out,
        "ablate",
        &json!({ "arms": &arms, "train": &base, "probe": &probe, "attack": &attack }),
        base.seed,
        inputs(&[("data", &a.data)]),
    )?;
    let (folds, results) = run_ablation(&AblationRun {
        base,
        arms,
        volumes: &data.volumes,
        probe,
        attack,
    })?;
    let summaries = summarize(&results);
    write_ablation_csv(&a.out.join("ablation.csv"), &summaries)?;
    write_json(&a.out.join("results.json"), &results)?;
    write_json(&a.out.join("folds.json"), &folds)?;
    manifest.finish()
}
