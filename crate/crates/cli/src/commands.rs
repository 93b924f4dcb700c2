//! Subcommand implementations. Everything is validated before the first
//! model trains; outputs are written atomically.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use bgnn::analysis::{cka_csv, cka_matrix, extract_layer_representations, RepresentationSet};
use bgnn::boosting::init_weights;
use bgnn::graph::{generate_graph_classification, generate_sbm, to_json_bundle, write_tu_dataset, GraphSetConfig, SbmConfig};
use bgnn::models::{load_checkpoint, save_checkpoint, GnnModel, GraphInput};
use bgnn::pipeline::{
    aggregate, ensemble_predict, evaluate_logits, mean_std, predictions_csv, run_sequential, step_seed,
    train_bgnn_step, train_supervised, write_atomic, Dataset, DistillConfig, RunReport, SplitKind, TrainMetrics,
    TrainPlan,
};
use rayon::prelude::*;

use crate::config::{PlanKind, RunConfig, SweepParam};
use crate::data::{self, Source};
use crate::CliError;

fn runtime(e: bgnn::BgnnError) -> CliError {
    CliError::Runtime(e.to_string())
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Filesystem-safe form of a run label.
fn stem(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

struct RunOutput {
    report: RunReport,
    predictions: String,
    models: Vec<GnnModel>,
}

fn run_one(cfg: &RunConfig, source: &Source, seed: u64) -> Result<RunOutput, CliError> {
    let data = source.for_seed(seed).map_err(runtime)?;
    let task = data.task();
    let hyper = cfg.hyper(task);
    let model_cfg = |a| cfg.model_config(a, data.feature_dim(), data.n_classes(), task);
    let student = model_cfg(cfg.student)?;
    let label = cfg.label();
    let (models, metrics, logits, ensemble_acc): (Vec<GnnModel>, Vec<TrainMetrics>, _, _) = match cfg.plan {
        PlanKind::Nokd => {
            let (m, metrics) = train_supervised(&student, &data, &hyper, seed).map_err(runtime)?;
            let logits = data.eval_logits(&m).map_err(runtime)?;
            (vec![m], vec![metrics], logits, None)
        }
        PlanKind::Kd => {
            let (teacher, tm) = train_supervised(&model_cfg(cfg.teachers[0])?, &data, &hyper, seed).map_err(runtime)?;
            let distill = DistillConfig {
                boosting: false,
                adaptive: false,
                ..cfg.distill.clone()
            };
            let w = init_weights(data.split(SplitKind::Train).len()).map_err(runtime)?;
            let out = train_bgnn_step(&teacher, &student, &data, &w, &distill, &hyper, step_seed(seed, 1), 1)
                .map_err(runtime)?;
            let logits = data.eval_logits(&out.model).map_err(runtime)?;
            (vec![teacher, out.model], vec![tm, out.metrics], logits, None)
        }
        PlanKind::Bgnn => {
            let mut models = cfg
                .teachers
                .iter()
                .map(|&a| model_cfg(a))
                .collect::<Result<Vec<_>, _>>()?;
            models.push(student);
            let plan = TrainPlan {
                models,
                hyper,
                distill: cfg.distill.clone(),
                seed,
            };
            let run = run_sequential(&plan, &data).map_err(runtime)?;
            let logits = data.eval_logits(run.final_model()).map_err(runtime)?;
            (run.models, run.metrics, logits, None)
        }
        PlanKind::Ensemble => {
            let mut models = Vec::new();
            let mut metrics = Vec::new();
            for (i, &a) in cfg.teachers.iter().chain([&cfg.student]).enumerate() {
                let (m, mut mm) = train_supervised(&model_cfg(a)?, &data, &hyper, step_seed(seed, i)).map_err(runtime)?;
                mm.step = i;
                models.push(m);
                metrics.push(mm);
            }
            let e = ensemble_predict(&models, &data).map_err(runtime)?;
            (models, metrics, e.logits, Some(e.test.accuracy))
        }
    };
    let mut report = RunReport::new(&label, seed, &metrics).map_err(runtime)?;
    let eval = evaluate_logits(&logits, &data, SplitKind::Test).map_err(runtime)?;
    if let Some(acc) = ensemble_acc {
        report.test_acc = acc;
        report.teacher_mis_acc = None;
    }
    debug_assert!((report.test_acc - eval.accuracy).abs() < 1e-12);
    Ok(RunOutput {
        report,
        predictions: predictions_csv(&eval, data.labels()),
        models,
    })
}

/// Runs every seed, writes per-run files and `summary.csv`; returns the
/// test accuracies in seed order.
pub fn train(cfg: &RunConfig) -> Result<Vec<f64>, CliError> {
    let source = data::load(&cfg.dataset)?;
    train_with(cfg, &source)
}

fn train_with(cfg: &RunConfig, source: &Source) -> Result<Vec<f64>, CliError> {
    ensure_dir(&cfg.out)?;
    let outputs: Vec<RunOutput> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_one(cfg, source, s))
        .collect::<Result<_, _>>()?;
    let base = stem(&cfg.label());
    let mut summary = String::from("plan,seed,test_acc\n");
    for out in &outputs {
        let seed = out.report.seed;
        let prefix = format!("{base}-seed{seed}");
        let metrics_path = cfg.out.join(format!("{prefix}.metrics.json"));
        write_atomic(metrics_path, out.report.to_json().as_bytes()).map_err(runtime)?;
        write_atomic(cfg.out.join(format!("{prefix}.test.csv")), out.predictions.as_bytes()).map_err(runtime)?;
        if cfg.checkpoints {
            for (i, m) in out.models.iter().enumerate() {
                let p = cfg
                    .out
                    .join(format!("{base}-seed{seed}-step{i}-{}.json", m.config().arch));
                save_checkpoint(m, &p).map_err(runtime)?;
            }
        }
        let _ = writeln!(summary, "{},{seed},{:.6}", out.report.plan, out.report.test_acc);
    }
    write_atomic(cfg.out.join("summary.csv"), summary.as_bytes()).map_err(runtime)?;
    let accs: Vec<f64> = outputs.iter().map(|o| o.report.test_acc).collect();
    let (mean, std) = mean_std(&accs);
    let agg = aggregate(&accs, cfg.aggregation).map_err(runtime)?;
    println!(
        "{}: test accuracy {mean:.4} ± {std:.4} over {} seed(s); {:?} = {agg:.4}",
        cfg.label(),
        accs.len(),
        cfg.aggregation
    );
    Ok(accs)
}

fn apply(cfg: &RunConfig, param: SweepParam, v: f64) -> Result<RunConfig, CliError> {
    let mut c = cfg.clone();
    match param {
        SweepParam::Tau => {
            // fixed temperatures are compared without weight boosting
            c.distill.fixed_tau = v;
            c.distill.adaptive = false;
            c.distill.boosting = false;
        }
        SweepParam::Lambda => c.distill.lambda = v,
        SweepParam::Lr => c.adam.lr = v,
    }
    c.distill
        .validate()
        .and_then(|_| c.hyper(bgnn::models::Task::Node).validate())
        .map_err(|e| CliError::Usage(format!("sweep value {v}: {e}")))?;
    c.out = cfg.out.join(format!("{}-{v}", param_name(param)));
    Ok(c)
}

fn param_name(p: SweepParam) -> &'static str {
    match p {
        SweepParam::Tau => "tau",
        SweepParam::Lambda => "lambda",
        SweepParam::Lr => "lr",
    }
}

/// One full `train` per value; writes `sweep-<param>.csv`.
pub fn sweep(cfg: &RunConfig, param: Option<SweepParam>, values: Option<Vec<f64>>) -> Result<(), CliError> {
    let param = param
        .or(cfg.sweep_param)
        .ok_or_else(|| CliError::Usage("no sweep parameter (--param or [sweep] param)".into()))?;
    let values = values.or_else(|| cfg.sweep_values.clone()).unwrap_or_default();
    if values.is_empty() {
        return Err(CliError::Usage("the sweep value list is empty".into()));
    }
    let configs = values
        .iter()
        .map(|&v| apply(cfg, param, v))
        .collect::<Result<Vec<_>, _>>()?;
    let source = data::load(&cfg.dataset)?;
    ensure_dir(&cfg.out)?;
    let results: Vec<Vec<f64>> = configs
        .par_iter()
        .map(|c| train_with(c, &source))
        .collect::<Result<_, _>>()?;
    let mut csv = String::from("value,mean_acc,std\n");
    for (v, accs) in values.iter().zip(&results) {
        let (m, s) = mean_std(accs);
        let _ = writeln!(csv, "{v},{m:.6},{s:.6}");
    }
    let path = cfg.out.join(format!("sweep-{}.csv", param_name(param)));
    write_atomic(&path, csv.as_bytes()).map_err(runtime)?;
    print!("{csv}");
    Ok(())
}

/// Layer-wise linear CKA between checkpoints on one dataset.
pub fn cka(checkpoints: &[PathBuf], dataset: &str, out: &Path) -> Result<(), CliError> {
    if checkpoints.is_empty() {
        return Err(CliError::Usage("cka needs at least one checkpoint".into()));
    }
    let mut models = Vec::new();
    for p in checkpoints {
        if !p.exists() {
            return Err(CliError::Usage(format!("checkpoint {} does not exist", p.display())));
        }
        let m = load_checkpoint(p).map_err(|e| CliError::Usage(e.to_string()))?;
        let mut tag = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into());
        if models.iter().any(|(t, _): &(String, GnnModel)| *t == tag) {
            tag = format!("{tag}#{}", models.len());
        }
        models.push((tag, m));
    }
    let source = data::load(dataset)?;
    let sets = models
        .iter()
        .map(|(tag, m)| match &source {
            Source::Graphs { graphs, .. } => extract_layer_representations(m, graphs, tag),
            Source::Node(d) => {
                let Dataset::Node(nd) = d.as_ref() else {
                    unreachable!("node sources hold node data")
                };
                d.check_model(m.config())?;
                Ok(RepresentationSet {
                    tag: tag.clone(),
                    layers: m.representations(&GraphInput::from_graph(nd.graph()))?,
                })
            }
        })
        .collect::<bgnn::Result<Vec<_>>>()
        .map_err(runtime)?;
    let entries = cka_matrix(&sets).map_err(runtime)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    write_atomic(out, cka_csv(&entries).as_bytes()).map_err(runtime)?;
    println!("wrote {} CKA entries to {}", entries.len(), out.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum FixtureKind {
    /// The 600-node, three-block SBM bundle (`sbm.json`).
    Sbm,
    /// A small TU-format graph-classification set (`TU_TOY/`).
    TuToy,
    /// A 100-node SBM bundle (`toy.json`).
    JsonToy,
}

pub const TU_TOY_NAME: &str = "TU_TOY";

pub fn make_fixtures(kind: FixtureKind, seed: u64, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let written = match kind {
        FixtureKind::Sbm | FixtureKind::JsonToy => {
            let (cfg, file, name) = match kind {
                FixtureKind::Sbm => (SbmConfig { seed, ..SbmConfig::fixture() }, "sbm.json", "sbm-fixture"),
                _ => (SbmConfig::small(seed), "toy.json", "sbm-toy"),
            };
            let g = generate_sbm(&cfg).map_err(runtime)?;
            let path = out.join(file);
            write_atomic(&path, to_json_bundle(&g, Some(name)).map_err(runtime)?.as_bytes()).map_err(runtime)?;
            vec![path]
        }
        FixtureKind::TuToy => {
            let (graphs, labels) = generate_graph_classification(&GraphSetConfig::small(seed)).map_err(runtime)?;
            let dir = out.join(TU_TOY_NAME);
            write_tu_dataset(&dir, TU_TOY_NAME, &graphs, &labels).map_err(runtime)?;
            vec![dir]
        }
    };
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(written)
}
