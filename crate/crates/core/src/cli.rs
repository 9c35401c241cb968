//! The `reflab` command line.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::ablate::{run_ablation, AblationConfig};
use crate::checkpoint;
use crate::config::{resolve, RunConfig};
use crate::data::ConditionBuilder;
use crate::error::{Error, Result};
use crate::eval::{
    detect_presence, run_benchmark, BenchManifest, EvalReport, Generator, ModelGenerator, NoiseGenerator,
    OracleGenerator,
};
use crate::interval::{decay_profile_with, IntervalEncoding, IntervalMode, IntervalSpec, RightAnchor, WeRoPEWeights};
use crate::rope::make_frequency_bank;
use crate::synth::generate_dataset;
use crate::train::Trainer;

#[derive(Parser, Debug)]
#[command(name = "reflab", version, about = "Interval-conditioned reference video toy lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Export the temporal attention decay profile of an interval encoding.
    Profile(ProfileArgs),
    /// Write seeded synthetic scenes to disk.
    GenData(GenDataArgs),
    /// Train a model in run/<name>.
    Train(TrainArgs),
    /// Sample one benchmark case from a trained model.
    Sample(SampleArgs),
    /// Score a model (or the oracle / noise baselines) on the benchmark.
    Eval(EvalArgs),
    /// Train and score every positional-encoding and tag variant.
    Ablate(AblateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub run_root: Option<PathBuf>,
    /// Seeds model init, training data and sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Extra override as `dotted.key=json`, e.g. `--set model.hidden=64`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[arg(long, default_value = "we")]
    pub variant: IntervalMode,
    #[arg(long)]
    pub t0: f64,
    #[arg(long)]
    pub t1: f64,
    #[arg(long)]
    pub frames: usize,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub wp: f64,
    #[arg(long, default_value_t = -0.5, allow_negative_numbers = true)]
    pub wn: f64,
    /// Temporal channel count.
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 10_000.0)]
    pub base: f64,
    /// Put the right anchor at (t1 + T) / 2 instead of (T - t1) / 2.
    #[arg(long)]
    pub mirrored_right: bool,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Continue from run/<name>/ckpt/last.bin when it exists.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint; defaults to run/<name>/ckpt/last.bin.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub case: usize,
    /// Output JSON; defaults to run/<name>/samples/case_<n>.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Score the ground-truth scenes instead of a model.
    #[arg(long, conflicts_with = "noise")]
    pub oracle: bool,
    /// Score pure noise instead of a model.
    #[arg(long)]
    pub noise: bool,
    #[arg(long)]
    pub cases: Option<usize>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub cases: Option<usize>,
}

fn overrides(common: &Common, extra: &[(&str, Value)]) -> Result<Vec<(String, Value)>> {
    let mut out: Vec<(String, Value)> = Vec::new();
    if let Some(n) = &common.name {
        out.push(("name".into(), json!(n)));
    }
    if let Some(r) = &common.run_root {
        out.push(("run_root".into(), json!(r)));
    }
    for s in &common.set {
        let (k, v) = s.split_once('=').ok_or_else(|| Error::invalid(format!("--set expects KEY=VALUE, got {s:?}")))?;
        let v = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        out.push((k.to_string(), v));
    }
    out.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    Ok(out)
}

fn run_config(common: &Common, extra: &[(&str, Value)]) -> Result<RunConfig> {
    let ov = overrides(common, extra)?;
    let refs: Vec<(&str, Value)> = ov.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
    let mut cfg: RunConfig = resolve(common.config.as_deref(), &refs)?;
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    let cfg = cfg.normalize();
    cfg.validate()?;
    Ok(cfg)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn cmd_profile(a: &ProfileArgs, out: &mut dyn Write) -> Result<()> {
    let interval = IntervalSpec::new(a.t0, a.t1, a.frames)?;
    let weights = WeRoPEWeights::new(a.wp, a.wn)?;
    let right_anchor = if a.mirrored_right { RightAnchor::Mirrored } else { RightAnchor::Literal };
    let bank = make_frequency_bank(a.dim, a.base)?;
    let profile = decay_profile_with(IntervalEncoding { mode: a.variant, weights, right_anchor }, &interval, &bank)?;
    match &a.out {
        Some(path) => {
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            profile.write_csv(fs::File::create(path)?)?;
            writeln!(out, "wrote {} (argmax frame {})", path.display(), profile.argmax())?;
        }
        None => profile.write_csv(out)?,
    }
    Ok(())
}

fn cmd_gen_data(a: &GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = run_config(&a.common, &[])?;
    let dirs = generate_dataset(&a.out, &cfg.train.scene, a.first_seed..a.first_seed + a.count)?;
    writeln!(out, "wrote {} scenes under {}", dirs.len(), a.out.join("scenes").display())?;
    Ok(())
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let extra: Vec<(&str, Value)> = a.steps.map(|s| ("train.steps", json!(s))).into_iter().collect();
    let cfg = run_config(&a.common, &extra)?;
    let dir = cfg.run_dir();
    let ckpt_dir = dir.join("ckpt");
    let last = ckpt_dir.join("last.bin");
    let mut trainer = if a.resume && last.exists() {
        let ck = checkpoint::load(&last)?;
        if ck.model.cfg != cfg.model {
            return Err(Error::invalid("checkpoint model config differs from the run config"));
        }
        Trainer::resume(ck, cfg.train.clone())?
    } else {
        Trainer::new(cfg.model.clone(), cfg.train.clone())?
    };
    cfg.echo()?;
    let start = trainer.step();
    let mut log = fs::OpenOptions::new().create(true).append(start > 0).write(true).truncate(start == 0).open(dir.join("logs.jsonl"))?;
    let logs = trainer.run(Some(&mut log), Some(&ckpt_dir))?;
    let last_loss = logs.last().map(|l| l.loss);
    writeln!(
        out,
        "trained {} -> {} steps ({} parameters); last loss {}; checkpoint {}",
        start,
        trainer.step(),
        trainer.model.param_count(),
        last_loss.map_or("n/a".to_string(), |l| format!("{l:.5}")),
        last.display()
    )?;
    Ok(())
}

fn manifest_for(cfg: &RunConfig, cases: usize) -> Result<BenchManifest> {
    BenchManifest::build(&cfg.train.scene, cases, cfg.bench_seed)
}

fn load_model(cfg: &RunConfig, ckpt: &Option<PathBuf>) -> Result<crate::model::FlowTransformer> {
    let path = ckpt.clone().unwrap_or_else(|| cfg.run_dir().join("ckpt").join("last.bin"));
    if !path.exists() {
        return Err(Error::invalid(format!("checkpoint {} not found", path.display())));
    }
    Ok(checkpoint::load(&path)?.model)
}

#[derive(Serialize)]
struct SampleOutput {
    case_id: usize,
    seed: u64,
    ground_truth: Vec<(f64, f64)>,
    detected: Vec<Option<(usize, usize)>>,
    video: crate::tokens::TokenGrid,
}

fn cmd_sample(a: &SampleArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = run_config(&a.common, &[])?;
    let model = load_model(&cfg, &a.ckpt)?;
    let manifest = manifest_for(&cfg, a.case + 1)?;
    let case = &manifest.cases[a.case];
    let scene = manifest.scene(case)?;
    let builder = ConditionBuilder::new(&model.cfg, &cfg.train.conditions);
    let cond = builder.build(&scene, None, &mut crate::synth::scene_rng(case.seed))?;
    let generator = ModelGenerator { model: &model, cfg: cfg.guidance, sampler: cfg.sampler };
    let video = generator.generate(&scene, &cond, case.seed)?;
    let detected = scene
        .entities
        .iter()
        .map(|e| detect_presence(&video, &e.pattern, cfg.bench.detect_threshold).map(|d| d.map(|p| (p.t0, p.t1))))
        .collect::<Result<Vec<_>>>()?;
    let path = a.out.clone().unwrap_or_else(|| cfg.run_dir().join("samples").join(format!("case_{}.json", a.case)));
    let result = SampleOutput { case_id: case.case_id, seed: case.seed, ground_truth: case.intervals.clone(), detected, video };
    write_json(&path, &result)?;
    writeln!(out, "case {}: ground truth {:?}, detected {:?} -> {}", case.case_id, result.ground_truth, result.detected, path.display())?;
    Ok(())
}

fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    report.write_csv(fs::File::create(dir.join("report.csv"))?)?;
    fs::write(dir.join("report.json"), report.aggregates_json()?)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let extra: Vec<(&str, Value)> = a.cases.map(|c| ("bench_cases", json!(c))).into_iter().collect();
    let cfg = run_config(&a.common, &extra)?;
    let manifest = manifest_for(&cfg, cfg.bench_cases)?;
    let builder = ConditionBuilder::new(&cfg.model, &cfg.train.conditions);
    let report = if a.oracle {
        run_benchmark(&OracleGenerator, &manifest, &builder, &cfg.bench)?
    } else if a.noise {
        run_benchmark(&NoiseGenerator, &manifest, &builder, &cfg.bench)?
    } else {
        let model = load_model(&cfg, &a.ckpt)?;
        let builder = ConditionBuilder::new(&model.cfg, &cfg.train.conditions);
        let generator = ModelGenerator { model: &model, cfg: cfg.guidance, sampler: cfg.sampler };
        run_benchmark(&generator, &manifest, &builder, &cfg.bench)?
    };
    let dir = cfg.run_dir();
    write_report(&dir, &report)?;
    writeln!(out, "ref_count,rows,failed_cases,t_iou,t_l2,pattern_sim")?;
    for (k, agg) in &report.aggregates {
        writeln!(out, "{k},{},{},{:.4},{:.4},{:.4}", agg.rows, agg.failed_cases, agg.t_iou, agg.t_l2, agg.pattern_sim)?;
    }
    writeln!(out, "report: {}", dir.join("report.csv").display())?;
    Ok(())
}

fn cmd_ablate(a: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let mut extra: Vec<(&str, Value)> = Vec::new();
    if let Some(s) = a.steps {
        extra.push(("train.steps", json!(s)));
    }
    if let Some(c) = a.cases {
        extra.push(("bench_cases", json!(c)));
    }
    let cfg = run_config(&a.common, &extra)?;
    cfg.echo()?;
    let ab = AblationConfig {
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        bench_cases: cfg.bench_cases,
        bench_seed: cfg.bench_seed,
        bench: cfg.bench,
        guidance: cfg.guidance,
        sampler: cfg.sampler,
        ..Default::default()
    };
    let table = run_ablation(&ab, |row| {
        let _ = writeln!(out, "{}: t_iou {:.4}, t_l2 {:.4}, pattern_sim {:.4}", row.variant, row.t_iou, row.t_l2, row.pattern_sim);
    })?;
    let dir = cfg.run_dir();
    table.write_csv(fs::File::create(dir.join("ablation.csv"))?)?;
    write_json(&dir.join("ablation.json"), &table)?;
    table.write_markdown(&mut *out)?;
    writeln!(out, "noise baseline t_iou {:.4}", table.noise_t_iou)?;
    Ok(())
}

/// Exit code for an error: 3 for numeric failures, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric { .. } => 3,
        _ => 2,
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Profile(a) => cmd_profile(a, out),
        Command::GenData(a) => cmd_gen_data(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Sample(a) => cmd_sample(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Ablate(a) => cmd_ablate(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{}", e.render());
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
