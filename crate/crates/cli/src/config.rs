//! Run configuration: a TOML file with `[run]`, `[model]`, `[train]`,
//! `[distill]` and `[sweep]` sections, overridden by command-line flags.

use std::path::{Path, PathBuf};

use bgnn::distill::{KdOptions, KdReduction, TempVariant, TemperatureConfig};
use bgnn::graph::Fanout;
use bgnn::models::{Architecture, ModelConfig, Task};
use bgnn::pipeline::{Aggregation, DistillConfig, KdScope, TrainHyper};
use bgnn::tensor::AdamConfig;
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PlanKind {
    /// Supervised student only.
    Nokd,
    /// One teacher, constant temperature, no boosting.
    Kd,
    /// Sequential boosted distillation through every teacher.
    Bgnn,
    /// Mean logits of supervised teachers and student.
    Ensemble,
}

impl PlanKind {
    pub fn name(self) -> &'static str {
        match self {
            PlanKind::Nokd => "nokd",
            PlanKind::Kd => "kd",
            PlanKind::Bgnn => "bgnn",
            PlanKind::Ensemble => "ensemble",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Tau,
    Lambda,
    Lr,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub distill: DistillSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub plan: Option<PlanKind>,
    pub dataset: Option<String>,
    pub teachers: Option<Vec<String>>,
    pub student: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub checkpoints: Option<bool>,
    pub aggregation: Option<Aggregation>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Option<usize>,
    pub heads: Option<usize>,
    pub head_dim: Option<usize>,
    pub out_heads: Option<usize>,
    pub dropout: Option<f64>,
    pub batch_norm: Option<bool>,
    pub layers: Option<usize>,
    pub fanout: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub decoupled_decay: Option<bool>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistillSection {
    pub lambda: Option<f64>,
    pub boosting: Option<bool>,
    pub adaptive: Option<bool>,
    pub tau_min: Option<f64>,
    pub tau_max: Option<f64>,
    pub temp_hidden: Option<usize>,
    pub fixed_tau: Option<f64>,
    pub variant: Option<TempVariant>,
    pub scope: Option<KdScope>,
    pub reduction: Option<KdReduction>,
    pub tau_squared: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub param: Option<SweepParam>,
    pub values: Option<Vec<f64>>,
}

/// Flags shared by `train` and `sweep`; each one wins over the file.
#[derive(Debug, Default, Clone, clap::Args)]
pub struct RunFlags {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub plan: Option<PlanKind>,
    /// `sbm:small`, `sbm:fixture`, `graphs:small`, `json:PATH`, `tu:DIR/NAME`,
    /// a `.json` bundle path, or a name looked up under `BGNN_DATA_DIR`.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Comma-separated teacher architectures, first trained first.
    #[arg(long, value_delimiter = ',')]
    pub teachers: Option<Vec<String>>,
    #[arg(long)]
    pub student: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub tau_min: Option<f64>,
    #[arg(long)]
    pub tau_max: Option<f64>,
    /// Constant temperature (KD baseline, or BGNN with `--no-adaptive-temp`).
    #[arg(long)]
    pub fixed_tau: Option<f64>,
    #[arg(long)]
    pub no_boost: bool,
    #[arg(long)]
    pub no_adaptive_temp: bool,
    /// `0,1,2`, `0..5` or a mix.
    #[arg(long, alias = "seed")]
    pub seeds: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Save a checkpoint for every trained model.
    #[arg(long)]
    pub save_checkpoints: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved and validated settings for one `train` invocation.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub plan: PlanKind,
    pub dataset: String,
    pub teachers: Vec<Architecture>,
    pub student: Architecture,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub checkpoints: bool,
    pub aggregation: Aggregation,
    pub model: ModelSection,
    /// `None` means the task default.
    pub epochs: Option<usize>,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub distill: DistillConfig,
    pub sweep_param: Option<SweepParam>,
    pub sweep_values: Option<Vec<f64>>,
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("invalid seed list `{s}` (use `0,1,2` or `0..5`)"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (u64, u64) = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
            if b <= a {
                return Err(bad());
            }
            out.extend(a..b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn arch(s: &str) -> Result<Architecture, CliError> {
    s.parse().map_err(|e: bgnn::BgnnError| CliError::Usage(e.to_string()))
}

pub fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    // toml errors carry the line and column
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn resolve(flags: &RunFlags) -> Result<Self, CliError> {
        let file = match &flags.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let plan = flags.plan.or(file.run.plan).unwrap_or(PlanKind::Bgnn);
        let dataset = flags
            .dataset
            .clone()
            .or(file.run.dataset)
            .ok_or_else(|| CliError::Usage("no dataset given (--dataset or [run] dataset)".into()))?;
        let teachers = flags
            .teachers
            .clone()
            .or(file.run.teachers)
            .unwrap_or_else(|| vec!["gat".into()])
            .iter()
            .map(|s| arch(s))
            .collect::<Result<Vec<_>, _>>()?;
        let student = arch(flags.student.as_deref().or(file.run.student.as_deref()).unwrap_or("gcn"))?;
        let seeds = match &flags.seeds {
            Some(s) => parse_seeds(s)?,
            None => file.run.seeds.unwrap_or_else(|| vec![0]),
        };
        if seeds.is_empty() {
            return Err(CliError::Usage("the seed list is empty".into()));
        }
        if matches!(plan, PlanKind::Kd | PlanKind::Bgnn) && teachers.is_empty() {
            return Err(CliError::Usage(format!("plan `{}` needs at least one teacher", plan.name())));
        }
        let out = flags.out.clone().or(file.run.out).unwrap_or_else(|| PathBuf::from("runs"));

        let t = &file.train;
        let mut adam = AdamConfig::default();
        adam.lr = flags.lr.or(t.lr).unwrap_or(adam.lr);
        adam.weight_decay = t.weight_decay.unwrap_or(adam.weight_decay);
        adam.decoupled = t.decoupled_decay.unwrap_or(adam.decoupled);

        let d = &file.distill;
        let defaults = DistillConfig::default();
        let distill = DistillConfig {
            lambda: flags.lambda.or(d.lambda).unwrap_or(defaults.lambda),
            boosting: !flags.no_boost && d.boosting.unwrap_or(defaults.boosting),
            adaptive: !flags.no_adaptive_temp && d.adaptive.unwrap_or(defaults.adaptive),
            temperature: TemperatureConfig {
                tau_min: flags.tau_min.or(d.tau_min).unwrap_or(defaults.temperature.tau_min),
                tau_max: flags.tau_max.or(d.tau_max).unwrap_or(defaults.temperature.tau_max),
                hidden: d.temp_hidden.unwrap_or(defaults.temperature.hidden),
            },
            fixed_tau: flags.fixed_tau.or(d.fixed_tau).unwrap_or(defaults.fixed_tau),
            variant: d.variant,
            kd: KdOptions {
                reduction: d.reduction.unwrap_or_default(),
                tau_squared: d.tau_squared.unwrap_or(false),
            },
            scope: d.scope.unwrap_or_default(),
        };
        let cfg = RunConfig {
            plan,
            dataset,
            teachers,
            student,
            seeds,
            out,
            checkpoints: flags.save_checkpoints || file.run.checkpoints.unwrap_or(false),
            aggregation: file.run.aggregation.unwrap_or(Aggregation::Mean),
            model: file.model,
            epochs: flags.epochs.or(t.epochs),
            adam,
            batch_size: t.batch_size.unwrap_or(32),
            distill,
            sweep_param: file.sweep.param,
            sweep_values: file.sweep.values,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let usage = |e: bgnn::BgnnError| CliError::Usage(e.to_string());
        self.distill.validate().map_err(usage)?;
        self.hyper(Task::Node).validate().map_err(usage)?;
        // architecture-level checks with placeholder dimensions
        for a in self.teachers.iter().chain([&self.student]) {
            self.model_config(*a, 1, 2, Task::Node)?.validate().map_err(usage)?;
        }
        if self.aggregation == Aggregation::Top5Of10 && self.seeds.len() != 10 {
            return Err(CliError::Usage(format!(
                "top5of10 aggregation needs 10 seeds, got {}",
                self.seeds.len()
            )));
        }
        Ok(())
    }

    pub fn hyper(&self, task: Task) -> TrainHyper {
        let mut h = TrainHyper::for_task(task);
        h.epochs = self.epochs.unwrap_or(h.epochs);
        h.adam = self.adam;
        h.batch_size = self.batch_size;
        h
    }

    pub fn model_config(&self, arch: Architecture, in_dim: usize, n_classes: usize, task: Task) -> Result<ModelConfig, CliError> {
        let m = &self.model;
        let mut cfg = ModelConfig::new(arch, in_dim, n_classes);
        cfg.task = task;
        cfg.hidden_dim = m.hidden.unwrap_or(cfg.hidden_dim);
        cfg.heads = m.heads.unwrap_or(cfg.heads);
        cfg.head_dim = m.head_dim.unwrap_or(cfg.head_dim);
        cfg.out_heads = m.out_heads.unwrap_or(cfg.out_heads);
        cfg.dropout = m.dropout.unwrap_or(cfg.dropout);
        cfg.batch_norm = m.batch_norm.unwrap_or(cfg.batch_norm);
        cfg.n_layers = m.layers.unwrap_or(cfg.n_layers);
        if let Some(f) = &m.fanout {
            cfg.fanout = f.parse::<Fanout>().map_err(|e| CliError::Usage(e.to_string()))?;
        }
        Ok(cfg)
    }

    /// `kd(tau=4):gat>gcn`-style run label.
    pub fn label(&self) -> String {
        let chain: Vec<String> = match self.plan {
            PlanKind::Nokd => vec![self.student.to_string()],
            PlanKind::Kd => vec![self.teachers[0].to_string(), self.student.to_string()],
            _ => self
                .teachers
                .iter()
                .chain([&self.student])
                .map(ToString::to_string)
                .collect(),
        };
        let chain = chain.join(">");
        match self.plan {
            PlanKind::Kd => format!("kd-tau{}-{chain}", self.distill.fixed_tau),
            p => format!("{}-{chain}", p.name()),
        }
    }
}
