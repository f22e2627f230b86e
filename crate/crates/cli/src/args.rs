use acmil::losses::{AdversarialScaling, TaskLoss};
use acmil::training::{AblationArm, AblationFlags, TrainConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "acmil",
    version,
    about = "Concept-disentangled MIL on synthetic phantoms",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a class-balanced phantom dataset.
    GenData(GenDataArgs),
    /// Train one cross-validation fold.
    Train(TrainArgs),
    /// Dense inference and the full metric report for a checkpoint.
    Eval(EvalArgs),
    /// Leakage probe on the residual branch.
    Probe(ProbeArgs),
    /// Minimum-perturbation attack per branch.
    Attack(AttackArgs),
    /// Every ablation arm on every fold.
    Ablate(AblateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Probe(_) => "probe",
            Command::Attack(_) => "attack",
            Command::Ablate(_) => "ablate",
        }
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 120)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Volume shape as D,H,W.
    #[arg(long, default_value = "24,192,192", value_parser = parse_shape)]
    pub shape: [usize; 3],
    /// Replace an existing dataset in a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[usize; 3]>::try_from(parts).map_err(|_| format!("expected D,H,W, got {s:?}"))
}

fn parse_channels(s: &str) -> Result<[usize; 4], String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    <[usize; 4]>::try_from(parts).map_err(|_| format!("expected four channel counts, got {s:?}"))
}

fn parse_ablation(s: &str) -> Result<AblationFlags, String> {
    AblationFlags::parse(s).map_err(|e| e.to_string())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum TaskLossArg {
    Corn,
    CrossEntropy,
}

impl From<TaskLossArg> for TaskLoss {
    fn from(v: TaskLossArg) -> Self {
        match v {
            TaskLossArg::Corn => TaskLoss::Corn,
            TaskLossArg::CrossEntropy => TaskLoss::CrossEntropy,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScalingArg {
    GrlOnly,
    Both,
    LossOnly,
}

impl From<ScalingArg> for AdversarialScaling {
    fn from(v: ScalingArg) -> Self {
        match v {
            ScalingArg::GrlOnly => AdversarialScaling::GrlOnly,
            ScalingArg::Both => AdversarialScaling::Both,
            ScalingArg::LossOnly => AdversarialScaling::LossOnly,
        }
    }
}

/// Training settings. Each flag overrides the matching field of the JSON
/// file given with `--config`, which in turn overrides the defaults.
#[derive(Args, Debug, Default)]
pub struct TrainSettings {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated subset of cbm,sad,adv; "" trains the task head only.
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<AblationFlags>,
    #[arg(long)]
    pub lambda_cbm: Option<f64>,
    #[arg(long)]
    pub lambda_adv: Option<f64>,
    #[arg(long)]
    pub lambda_sad: Option<f64>,
    #[arg(long, value_enum)]
    pub adversarial_scaling: Option<ScalingArg>,
    #[arg(long, value_enum)]
    pub task_loss: Option<TaskLossArg>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub wd: Option<f64>,
    #[arg(long)]
    pub adv_lr_scale: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Slices per training sub-bag.
    #[arg(long)]
    pub subbag_slices: Option<usize>,
    /// Patches per slice in a training sub-bag.
    #[arg(long)]
    pub subbag_patches: Option<usize>,
    #[arg(long)]
    pub subbags_per_volume: Option<usize>,
    /// Patch side, applied to both the model and the sampler.
    #[arg(long)]
    pub patch_size: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub concept_dim: Option<usize>,
    #[arg(long)]
    pub attn_hidden: Option<usize>,
    #[arg(long)]
    pub proj_hidden: Option<usize>,
    #[arg(long)]
    pub adv_hidden: Option<usize>,
    #[arg(long, value_parser = parse_channels)]
    pub conv_channels: Option<[usize; 4]>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl TrainSettings {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(path) => read_config(path)?,
            None => TrainConfig::default(),
        };
        set(&mut c.ablation, self.ablation);
        set(&mut c.weights.lambda_cbm, self.lambda_cbm);
        set(&mut c.weights.lambda_adv, self.lambda_adv);
        set(&mut c.weights.lambda_sad, self.lambda_sad);
        set(
            &mut c.adversarial_scaling,
            self.adversarial_scaling.map(Into::into),
        );
        set(&mut c.task_loss, self.task_loss.map(Into::into));
        set(&mut c.lr, self.lr);
        set(&mut c.weight_decay, self.wd);
        set(&mut c.adv_lr_scale, self.adv_lr_scale);
        set(&mut c.epochs_max, self.epochs);
        set(&mut c.patience, self.patience);
        set(&mut c.folds, self.folds);
        set(&mut c.seed, self.seed);
        set(&mut c.val_fraction, self.val_fraction);
        set(&mut c.subbag.n_slices, self.subbag_slices);
        set(&mut c.subbag.n_patches, self.subbag_patches);
        set(&mut c.subbags_per_volume, self.subbags_per_volume);
        if let Some(p) = self.patch_size {
            c.model.patch_size = p;
            c.subbag.patch_size = p;
        }
        set(&mut c.model.embed_dim, self.embed_dim);
        set(&mut c.model.concept_dim, self.concept_dim);
        set(&mut c.model.attn_hidden, self.attn_hidden);
        set(&mut c.model.proj_hidden, self.proj_hidden);
        set(&mut c.model.adv_hidden, self.adv_hidden);
        set(&mut c.model.conv_channels, self.conv_channels);
        c.validate()?;
        Ok(c)
    }
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
    #[command(flatten)]
    pub settings: TrainSettings,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

/// Checkpoint and dataset selection shared by the evaluation commands.
#[derive(Args, Debug)]
pub struct CheckpointArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Test)]
    pub split: Split,
    /// Fold assignment; defaults to `folds.json` next to the checkpoint.
    #[arg(long)]
    pub folds_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    #[arg(long)]
    pub no_probe: bool,
    #[arg(long)]
    pub no_attack: bool,
}

#[derive(Args, Debug)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
}

#[derive(Args, Debug)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    /// Upper end of the perturbation-norm search.
    #[arg(long, default_value_t = 100.0)]
    pub bracket: f64,
}

fn parse_arm(s: &str) -> Result<AblationArm, String> {
    AblationArm::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = AblationArm::ALL.iter().map(|a| a.name()).collect();
        format!("unknown arm {s:?} (expected one of {})", names.join(", "))
    })
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Arms to run; all five by default.
    #[arg(long, value_delimiter = ',', value_parser = parse_arm)]
    pub arms: Vec<AblationArm>,
    #[arg(long)]
    pub no_probe: bool,
    #[arg(long)]
    pub no_attack: bool,
    #[command(flatten)]
    pub settings: TrainSettings,
}

pub fn check_out_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            bail!("output path {} is not a directory", dir.display());
        }
        let nonempty = std::fs::read_dir(dir)?.next().is_some();
        if nonempty && !force {
            bail!(
                "output directory {} is not empty (use --force to replace)",
                dir.display()
            );
        }
    }
    Ok(())
}
