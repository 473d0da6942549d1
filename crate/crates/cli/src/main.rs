use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use limao_core::checkpoint;
use limao_core::config::{ExperimentConfig, SystemKind};
use limao_core::decompose::{decompose, BreakOperatorSet};
use limao_core::encode::{encode_plan_tasks, PlanRowEstimates, SelectivityProvider};
use limao_core::plan::{parse_explain_json, parse_native_plans, serialize_native, PlanTree, TableId, WorkloadSchema};
use limao_core::selfcheck::run_checks;
use limao_core::sim::{
    resume_experiment, run_experiment, ExperimentOutcome, ExperimentState, Manifest, Summary, CHECKPOINT_FILE,
    ITERATIONS_CSV, MANIFEST_JSON, SUMMARY_JSON,
};
use log::info;
use serde_json::json;

#[derive(Parser)]
#[command(name = "limao", version, about = "Lifelong modular plan-cost prediction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a drift experiment and write its outputs to a directory.
    Run(RunArgs),
    /// Compare the summaries of two run directories.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Print the tasks of each plan as JSON lines.
    Decompose(PlanArgs),
    /// Print the task encodings of each plan as JSON lines.
    Encode(PlanArgs),
    /// Predict plan costs with a model from a finished run.
    Predict(PredictArgs),
    /// Write a run's per-iteration series as tidy CSV.
    PlotData {
        #[arg(long)]
        run: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run gradient and invariant self-checks.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        plans: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML config; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    resume: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlanFormat {
    /// `OP[table](child,child){flags}`, one plan per line.
    Native,
    /// EXPLAIN (FORMAT JSON) output, one plan per file.
    Explain,
}

#[derive(Args)]
struct PlanInput {
    /// Plan file.
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, value_enum, default_value_t = PlanFormat::Native)]
    format: PlanFormat,
    /// Per-table selectivities, e.g. `title=0.1,cast_info=0.5`. Tables not
    /// listed take the plan's row estimates over the table size.
    #[arg(long)]
    sel: Option<String>,
}

#[derive(Args)]
struct PlanArgs {
    /// `tableName,rowCount` lines, in encoding slot order.
    #[arg(long)]
    schema: PathBuf,
    #[command(flatten)]
    input: PlanInput,
    #[arg(long, default_value = "HJ,MJ,NL")]
    breaks: String,
    #[arg(long, default_value_t = limao_core::encode::DEFAULT_C_MAX)]
    c_max: usize,
}

#[derive(Args)]
struct PredictArgs {
    /// Run directory holding a checkpoint.
    #[arg(long)]
    run: PathBuf,
    #[arg(long, default_value = "limao")]
    system: String,
    #[command(flatten)]
    input: PlanInput,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_plans(input: &PlanInput, schema: &WorkloadSchema) -> Result<Vec<PlanTree>> {
    let text = read(&input.plan)?;
    let plans = match input.format {
        PlanFormat::Native => parse_native_plans(&text, schema)?,
        PlanFormat::Explain => vec![parse_explain_json(&text, schema)?],
    };
    if plans.is_empty() {
        bail!("{} contains no plans", input.plan.display());
    }
    Ok(plans)
}

struct Selectivities {
    explicit: BTreeMap<usize, f64>,
    estimated: PlanRowEstimates,
}

impl SelectivityProvider for Selectivities {
    fn selectivity(&self, table: TableId) -> f64 {
        self.explicit
            .get(&table.0)
            .copied()
            .unwrap_or_else(|| self.estimated.selectivity(table))
    }
}

fn parse_sel(spec: Option<&str>, schema: &WorkloadSchema) -> Result<BTreeMap<usize, f64>> {
    let mut out = BTreeMap::new();
    for item in spec.unwrap_or("").split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (name, value) = item.split_once('=').with_context(|| format!("expected `table=value`, got `{item}`"))?;
        let id = schema.lookup(name.trim()).with_context(|| format!("unknown table `{}`", name.trim()))?;
        let v: f64 = value.trim().parse().with_context(|| format!("bad selectivity `{}`", value.trim()))?;
        if !(0.0..=1.0).contains(&v) {
            bail!("selectivity of `{}` must lie in [0, 1]", name.trim());
        }
        out.insert(id.0, v);
    }
    Ok(out)
}

fn selectivities(explicit: &BTreeMap<usize, f64>, plan: &PlanTree, schema: &WorkloadSchema) -> Selectivities {
    Selectivities {
        explicit: explicit.clone(),
        estimated: PlanRowEstimates::from_plan(plan, schema),
    }
}

fn system_kind(name: &str) -> Result<SystemKind> {
    match name {
        "limao" => Ok(SystemKind::Limao),
        "baseline" => Ok(SystemKind::Baseline),
        other => bail!("unknown system `{other}` (expected limao or baseline)"),
    }
}

fn print_summary(summary: &Summary, out: &mut String) -> Result<()> {
    writeln!(out, "seed {} | {} iterations | warmup {}", summary.seed, summary.iterations, summary.warmup)?;
    for s in &summary.systems {
        writeln!(out, 
            "{:<9} total latency {:>12.3}  min iteration {:>10.3}  variance {:>12.4e}  spike ratio {:>6}  timeouts {:>4} ({} after warmup)",
            s.system.name(),
            s.total_latency,
            s.min_iteration_latency,
            s.metrics.variance,
            s.metrics.spike_ratio.map_or("-".into(), |r| format!("{r:.3}")),
            s.metrics.timeouts,
            s.post_warmup_timeouts,
        )?;
    }
    Ok(())
}

fn cmd_run(args: RunArgs, out: &mut String) -> Result<()> {
    let outcome: ExperimentOutcome = if args.resume {
        if args.config.is_some() || args.seed.is_some() {
            bail!("--resume takes the config from the checkpoint; drop --config and --seed");
        }
        let manifest: Option<Manifest> = std::fs::read_to_string(args.out.join(MANIFEST_JSON))
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok());
        let defaulted = manifest.map(|m| m.defaulted_fields).unwrap_or_default();
        info!("resuming from {}", args.out.join(CHECKPOINT_FILE).display());
        resume_experiment(&args.out, defaulted)?
    } else {
        let (mut cfg, mut defaulted) = match &args.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::from_toml("")?,
        };
        if let Some(seed) = args.seed {
            cfg.seed = seed;
            defaulted.retain(|f| f != "seed");
            cfg.validate()?;
        }
        run_experiment(&cfg, defaulted, Some(&args.out))?
    };
    // The final state doubles as the model store for `predict`.
    checkpoint::save(&outcome.state, &args.out.join(CHECKPOINT_FILE))?;
    print_summary(&outcome.summary, out)?;
    writeln!(out, "outputs written to {}", args.out.display())?;
    Ok(())
}

fn load_summary(dir: &Path) -> Result<Summary> {
    serde_json::from_str(&read(&dir.join(SUMMARY_JSON))?).with_context(|| format!("bad summary in {}", dir.display()))
}

fn cmd_compare(a: &Path, b: &Path, out: &mut String) -> Result<()> {
    let (sa, sb) = (load_summary(a)?, load_summary(b)?);
    writeln!(out, "a: {} (seed {}, {} iterations)", a.display(), sa.seed, sa.iterations)?;
    writeln!(out, "b: {} (seed {}, {} iterations)", b.display(), sb.seed, sb.iterations)?;
    writeln!(out, "{:<9} {:<22} {:>14} {:>14} {:>10}", "system", "metric", "a", "b", "b/a")?;
    for x in &sa.systems {
        let Some(y) = sb.systems.iter().find(|y| y.system == x.system) else {
            writeln!(out, "{:<9} only in a", x.system.name())?;
            continue;
        };
        let rows = [
            ("total latency", Some(x.total_latency), Some(y.total_latency)),
            ("min iteration latency", Some(x.min_iteration_latency), Some(y.min_iteration_latency)),
            ("variance", Some(x.metrics.variance), Some(y.metrics.variance)),
            ("post-warmup variance", x.metrics.post_warmup_variance, y.metrics.post_warmup_variance),
            ("spike ratio", x.metrics.spike_ratio, y.metrics.spike_ratio),
            ("timeouts", Some(x.metrics.timeouts as f64), Some(y.metrics.timeouts as f64)),
            ("mean test error", x.mean_test_error, y.mean_test_error),
        ];
        for (name, va, vb) in rows {
            let show = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
            let ratio = match (va, vb) {
                (Some(p), Some(q)) if p != 0.0 => format!("{:.3}", q / p),
                _ => "-".into(),
            };
            writeln!(out, "{:<9} {:<22} {:>14} {:>14} {:>10}", x.system.name(), name, show(va), show(vb), ratio)?;
        }
    }
    for y in sb.systems.iter().filter(|y| !sa.systems.iter().any(|x| x.system == y.system)) {
        writeln!(out, "{:<9} only in b", y.system.name())?;
    }
    Ok(())
}

fn cmd_plan(args: &PlanArgs, encode: bool, out: &mut String) -> Result<()> {
    let schema = WorkloadSchema::parse(&read(&args.schema)?)?;
    let breaks: BreakOperatorSet = args.breaks.parse()?;
    let plans = load_plans(&args.input, &schema)?;
    let explicit = parse_sel(args.input.sel.as_deref(), &schema)?;
    for (p, plan) in plans.iter().enumerate() {
        let tasks = decompose(plan, &breaks);
        if encode {
            let sel = selectivities(&explicit, plan, &schema);
            let encs = encode_plan_tasks(plan, &tasks, &schema, &sel, args.c_max)?;
            for (i, (t, e)) in tasks.iter().zip(encs).enumerate() {
                writeln!(out, 
                    "{}",
                    json!({"plan": p, "task": i, "kind": t.kind.to_string(), "a": e.a, "b": e.b, "c": e.c, "d": e.d})
                )?;
            }
        } else {
            for (i, t) in tasks.iter().enumerate() {
                writeln!(out, 
                    "{}",
                    json!({
                        "plan": p,
                        "task": i,
                        "kind": t.kind.to_string(),
                        "root": t.root().0,
                        "nodes": t.subtree.len(),
                        "subtree": serialize_native(&t.subtree, &schema),
                    })
                )?;
            }
        }
    }
    Ok(())
}

fn cmd_predict(args: &PredictArgs, out: &mut String) -> Result<()> {
    let path = args.run.join(CHECKPOINT_FILE);
    let state: ExperimentState = checkpoint::load(&path).with_context(|| format!("cannot load {}", path.display()))?;
    let kind = system_kind(&args.system)?;
    let run = state
        .runs
        .iter()
        .find(|r| r.system == kind)
        .with_context(|| format!("run has no `{}` system", args.system))?;
    let trainer = &run.trainer;
    let plans = load_plans(&args.input, &trainer.schema)?;
    let explicit = parse_sel(args.input.sel.as_deref(), &trainer.schema)?;
    for (p, plan) in plans.iter().enumerate() {
        let sel = selectivities(&explicit, plan, &trainer.schema);
        let prepared = trainer.model.prepare(plan, &trainer.schema, &sel)?;
        let est = trainer.model.estimate(&prepared)?;
        writeln!(out, "{}", json!({"plan": p, "log_cost": est.value, "latency": est.latency()}))?;
    }
    Ok(())
}

fn cmd_plot_data(run: &Path, dest: Option<&Path>, out: &mut String) -> Result<()> {
    let csv = read(&run.join(ITERATIONS_CSV))?;
    let summary = load_summary(run)?;
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().context("empty iterations file")?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).with_context(|| format!("missing column `{name}`"));
    let (sys, it) = (col("system")?, col("iteration")?);
    let series = ["total_latency", "timeouts", "online_error", "test_error", "test_latency", "modules"];
    let idx: Vec<usize> = series.iter().map(|s| col(s)).collect::<Result<_>>()?;
    let mut text = String::from("system,iteration,metric,value\n");
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        for (name, &i) in series.iter().zip(&idx) {
            if !fields[i].is_empty() {
                writeln!(text, "{},{},{},{}", fields[sys], fields[it], name, fields[i])?;
            }
        }
    }
    for s in &summary.systems {
        for (i, v) in s.metrics.smoothed.iter().enumerate() {
            writeln!(text, "{},{},smoothed_latency,{v}", s.system.name(), i + 1)?;
        }
        for (i, v) in s.metrics.derivative.iter().enumerate() {
            writeln!(text, "{},{},latency_derivative,{v}", s.system.name(), i + 2)?;
        }
    }
    match dest {
        Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?,
        None => out.push_str(&text),
    }
    Ok(())
}

fn cmd_check(seed: u64, plans: usize, out: &mut String) -> Result<()> {
    let results = run_checks(seed, plans)?;
    let mut failed = 0;
    for r in &results {
        writeln!(out, "[{}] {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail)?;
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        bail!("{failed} of {} checks failed", results.len());
    }
    Ok(())
}

/// Writes `text` to stdout; a reader that went away early is not an error.
fn emit(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut out = String::new();
    let result = match Cli::parse().command {
        Command::Run(args) => cmd_run(args, &mut out),
        Command::Compare { a, b } => cmd_compare(&a, &b, &mut out),
        Command::Decompose(args) => cmd_plan(&args, false, &mut out),
        Command::Encode(args) => cmd_plan(&args, true, &mut out),
        Command::Predict(args) => cmd_predict(&args, &mut out),
        Command::PlotData { run, out: dest } => cmd_plot_data(&run, dest.as_deref(), &mut out),
        Command::Check { seed, plans } => cmd_check(seed, plans, &mut out),
    };
    emit(&out)?;
    result
}
