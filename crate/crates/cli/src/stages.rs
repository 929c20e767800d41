//! One function per subcommand. Each validates its inputs, writes an
//! incomplete manifest, computes, then records its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use errmine::active::{evaluate, render_table, retrain, run_loop, trimmed_metrics, Metrics, RoundReport};
use errmine::checkpoint::Checkpoint;
use errmine::config::RunConfig;
use errmine::dataset::{label_with, load_csv, merge, sample_uniform, save_csv, LabeledSet};
use errmine::miner::mine_with;
use errmine::nn::{init_mlp, train};
use errmine::oracle::Oracle;
use errmine::par::Exec;

use crate::manifest::{Manifest, Status};
use crate::ValidationError;

/// Everything a stage needs besides its own arguments.
pub struct Ctx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub seed_override: Option<u64>,
    pub exec: Exec,
}

impl Ctx {
    fn manifest(&self, stage: &str) -> Manifest {
        Manifest::new(stage, self.cfg.to_json(), self.seed_override)
    }

    fn begin(&self, stage: &str, inputs: &[PathBuf]) -> Result<Manifest> {
        let mut m = self.manifest(stage);
        m.add_inputs(&self.out, inputs)?;
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        m.write(&self.out)?;
        Ok(m)
    }

    fn finish(&self, mut m: Manifest, outputs: &[PathBuf]) -> Result<()> {
        m.add_outputs(&self.out, outputs)?;
        m.status = Status::Complete;
        m.write(&self.out)
    }

    fn path_or(&self, given: Option<PathBuf>, default: &str) -> PathBuf {
        given.unwrap_or_else(|| self.out.join(default))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_set(path: &Path, oracle: &dyn Oracle) -> Result<LabeledSet> {
    let set = load_csv(path).with_context(|| format!("loading {}", path.display()))?;
    if set.normalizer() != &oracle.normalizer()? {
        return Err(ValidationError(format!(
            "{} was written for a different domain than the configured oracle",
            path.display()
        ))
        .into());
    }
    if !set.is_labeled() {
        return Err(ValidationError(format!("{} has no targets", path.display())).into());
    }
    Ok(set)
}

fn load_model(path: &Path, oracle: &dyn Oracle) -> Result<Checkpoint> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    if ck.model.input_dim() != oracle.dim() {
        return Err(ValidationError(format!(
            "{} expects {} inputs, the oracle has {}",
            path.display(),
            ck.model.input_dim(),
            oracle.dim()
        ))
        .into());
    }
    Ok(ck)
}

pub fn gen_data(ctx: &Ctx) -> Result<()> {
    let oracle = ctx.cfg.oracle.build()?;
    let z = oracle.as_ref();
    let m = ctx.begin("gen-data", &[])?;
    let data = &ctx.cfg.data;
    let s0 = label_with(sample_uniform(z, data.train_size, data.train_seed)?, z, ctx.exec)?
        .with_name("S0");
    let test = label_with(sample_uniform(z, data.test_size, data.test_seed)?, z, ctx.exec)?
        .with_name("test");
    let s0_path = ctx.out.join("S0.csv");
    let test_path = ctx.out.join("test.csv");
    save_csv(&s0, &s0_path)?;
    save_csv(&test, &test_path)?;
    log::info!("wrote {} training and {} test samples", s0.len(), test.len());
    ctx.finish(m, &[s0_path, test_path])
}

pub fn train_stage(ctx: &Ctx, data: Option<PathBuf>) -> Result<()> {
    let oracle = ctx.cfg.oracle.build()?;
    let data = ctx.path_or(data, "S0.csv");
    let m = ctx.begin("train", std::slice::from_ref(&data))?;
    let set = load_set(&data, oracle.as_ref())?;
    let model = init_mlp(&ctx.cfg.model.layer_dims(oracle.dim()), ctx.cfg.model.init_seed)?;
    let (model, history) = train(model, &set.to_weighted(1.0)?, &ctx.cfg.train, ctx.cfg.model.train_seed)?;
    log::info!(
        "trained {} epochs, final loss {:.6e}, converged {}",
        history.epochs.len(),
        history.final_loss().unwrap_or(f64::NAN),
        history.converged
    );
    let ck_path = ctx.out.join("model.ckpt");
    let hist_path = ctx.out.join("history.json");
    Checkpoint::new(model, Some(ctx.cfg.model.train_seed), ctx.cfg.to_json()).save(&ck_path)?;
    write_json(&hist_path, &history)?;
    ctx.finish(m, &[ck_path, hist_path])
}

#[derive(Debug, Serialize)]
struct MineSummary {
    round: usize,
    seeds: usize,
    kept: usize,
    shortfall: Option<usize>,
    initial_step: f64,
    stop_rel_change: f64,
}

pub fn mine_stage(
    ctx: &Ctx,
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    round: usize,
) -> Result<()> {
    let oracle = ctx.cfg.oracle.build()?;
    let z = oracle.as_ref();
    let model_path = ctx.path_or(model, "model.ckpt");
    let data = ctx.path_or(data, "S0.csv");
    let m = ctx.begin("mine", &[model_path.clone(), data.clone()])?;
    let ck = load_model(&model_path, z)?;
    let set = load_set(&data, z)?;
    let schedule = ctx.cfg.rounds.tightened(&ctx.cfg.mine, round);
    let outcome = mine_with(&ck.model, z, &set, &schedule, &ctx.cfg.oracle.fd, round, ctx.exec)?;
    let mined_path = ctx.out.join(format!("M{round}.csv"));
    let ascents_path = ctx.out.join(format!("ascents_{round}.jsonl"));
    let summary_path = ctx.out.join(format!("mine_{round}.json"));
    save_csv(&outcome.maximizers, &mined_path)?;
    errmine::active::write_ascents_jsonl(&ascents_path, &outcome.ascents)?;
    write_json(
        &summary_path,
        &MineSummary {
            round,
            seeds: outcome.ascents.len(),
            kept: outcome.kept.len(),
            shortfall: outcome.shortfall,
            initial_step: schedule.initial_step,
            stop_rel_change: schedule.stop_rel_change,
        },
    )?;
    log::info!("kept {} of {} ascents", outcome.kept.len(), outcome.ascents.len());
    ctx.finish(m, &[mined_path, ascents_path, summary_path])
}

fn alpha_dir_name(alpha: f64) -> String {
    format!("alpha_{alpha}")
}

pub struct RetrainArgs {
    pub model: Option<PathBuf>,
    pub base: Option<PathBuf>,
    pub mined: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub alphas: Option<Vec<f64>>,
}

/// Trains one independent model per α on the same base and mined sets, and
/// reports each on the merged set, the test set and the mined set.
pub fn retrain_stage(ctx: &Ctx, args: RetrainArgs) -> Result<()> {
    let oracle = ctx.cfg.oracle.build()?;
    let z = oracle.as_ref();
    let model_path = ctx.path_or(args.model, "model.ckpt");
    let base_path = ctx.path_or(args.base, "S0.csv");
    let mined_path = ctx.path_or(args.mined, "M0.csv");
    let test_path = ctx.path_or(args.test, "test.csv");
    let alphas = args.alphas.unwrap_or_else(|| ctx.cfg.rounds.alphas.clone());
    if alphas.is_empty() {
        return Err(ValidationError("empty alpha list".into()).into());
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(ValidationError(format!("alpha {a} outside [0, 1]")).into());
    }
    let m = ctx.begin(
        "retrain",
        &[model_path.clone(), base_path.clone(), mined_path.clone(), test_path.clone()],
    )?;
    let ck = load_model(&model_path, z)?;
    let base = load_set(&base_path, z)?;
    let mined = load_set(&mined_path, z)?;
    let test = load_set(&test_path, z)?;
    let merged = merge(&base, &mined)?.with_name("S1");
    let trim = ctx.cfg.rounds.trim_fraction;

    let mut outputs = Vec::new();
    let mut reports = Vec::new();
    for &alpha in &alphas {
        let (model, history) = retrain(
            &ck.model,
            &base,
            &mined,
            alpha,
            ctx.cfg.rounds.retrain_mode,
            &ctx.cfg.train,
            ctx.cfg.model.train_seed,
        )?;
        let dir = ctx.out.join("retrain").join(alpha_dir_name(alpha));
        fs::create_dir_all(&dir)?;
        let (maximizers, maximizers_trimmed) = if mined.is_empty() {
            (None, None)
        } else {
            (
                Some(evaluate(&model, &mined)?),
                trimmed_metrics(&model, &mined, trim).ok(),
            )
        };
        let report = RoundReport {
            round: 1,
            alpha,
            base_size: base.len(),
            mined_size: mined.len(),
            train_size: merged.len(),
            train: evaluate(&model, &merged)?,
            test: evaluate(&model, &test)?,
            maximizers,
            maximizers_trimmed,
            trim_fraction: trim,
            maximizer_eval_size: mined.len(),
            epochs: history.epochs.len(),
            converged: history.converged,
            newly_mined: None,
            shortfall: false,
        };
        log::info!(
            "alpha {alpha}: test mae {:.4e}, maximizer mae {:?}",
            report.test.mae,
            report.maximizers.map(|m| m.mae)
        );
        let ck_path = dir.join("model.ckpt");
        let hist_path = dir.join("history.json");
        let report_path = dir.join("report.json");
        Checkpoint::new(model, Some(ctx.cfg.model.train_seed), ctx.cfg.to_json()).save(&ck_path)?;
        write_json(&hist_path, &history)?;
        write_json(&report_path, &report)?;
        outputs.extend([ck_path, hist_path, report_path]);
        reports.push(report);
    }
    let reports_path = ctx.out.join("retrain").join("reports.json");
    let table_path = ctx.out.join("retrain").join("table.md");
    write_json(&reports_path, &reports)?;
    fs::write(&table_path, render_table(&reports))?;
    outputs.extend([reports_path, table_path]);
    ctx.finish(m, &outputs)
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub set: String,
    pub n: usize,
    pub mse: f64,
    pub mae: f64,
    pub trim_fraction: Option<f64>,
    pub trimmed: Option<Metrics>,
}

pub fn eval_stage(
    ctx: &Ctx,
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    trim: Option<f64>,
    report: Option<PathBuf>,
) -> Result<EvalReport> {
    let oracle = ctx.cfg.oracle.build()?;
    let z = oracle.as_ref();
    let model_path = ctx.path_or(model, "model.ckpt");
    let data = ctx.path_or(data, "test.csv");
    if let Some(t) = trim {
        if !(0.0..1.0).contains(&t) {
            return Err(ValidationError(format!("trim fraction {t} outside [0, 1)")).into());
        }
    }
    let m = ctx.begin("eval", &[model_path.clone(), data.clone()])?;
    let ck = load_model(&model_path, z)?;
    let set = load_set(&data, z)?;
    let metrics = evaluate(&ck.model, &set)?;
    let trimmed = trim
        .map(|t| trimmed_metrics(&ck.model, &set, t))
        .transpose()?;
    let out = EvalReport {
        set: set.name.clone(),
        n: set.len(),
        mse: metrics.mse,
        mae: metrics.mae,
        trim_fraction: trim,
        trimmed,
    };
    let report_path = ctx.path_or(report, "eval.json");
    write_json(&report_path, &out)?;
    ctx.finish(m, &[report_path])?;
    Ok(out)
}

pub fn loop_stage(ctx: &Ctx) -> Result<()> {
    let m = ctx.begin("loop", &[])?;
    let outcome = run_loop(&ctx.cfg, Some(&ctx.out), ctx.exec)?;
    log::info!(
        "loop stopped after {} rounds: {:?}",
        outcome.reports.len(),
        outcome.stop
    );
    let mut outputs: Vec<PathBuf> = vec![
        ctx.out.join("S0.csv"),
        ctx.out.join("test.csv"),
        ctx.out.join("reports.json"),
        ctx.out.join("table.md"),
    ];
    for r in &outcome.reports {
        let dir = ctx.out.join(format!("round_{}", r.round));
        for name in ["model.ckpt", "history.json", "mined.csv", "ascents.jsonl"] {
            let p = dir.join(name);
            if p.is_file() {
                outputs.push(p);
            }
        }
    }
    ctx.finish(m, &outputs)
}
