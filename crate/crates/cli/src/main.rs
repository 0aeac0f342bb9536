//! `rfprove` command-line entry point.
//!
//! Exit codes: 0 on success (and, for `verify`, coverage target met), 2 when
//! `verify` finished without reaching the target, 1 on any error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use rfprove::bench::{
    default_ablation_cases, run_ablation_suite, run_scalability_suite, HalfspaceShape, ScalabilityConfig,
};
use rfprove::guarantees::{plan_budget, GuaranteeParams};
use rfprove::oracle::build_oracle;
use rfprove::synthetic::{generate_synthetic, SyntheticSpec, Truth};
use rfprove::verifier::{run_mode, Mode, VerificationTask};
use rfprove::{AxisBox, MarginLabeler, Network, OutputProperty};

#[derive(Parser)]
#[command(
    name = "rfprove",
    version,
    about = "Probabilistic preimage approximation with randomized decision forests"
)]
struct Cli {
    /// Worker threads for parallel stages (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Approximate the preimage of a property and write report.json and boxes.csv.
    Verify(Box<VerifyArgs>),
    /// Tabulate the resampling budget over a grid of forest shapes.
    Plan(PlanArgs),
    /// Bracket the preimage volume of a low-dimensional task on a fine grid.
    Oracle(OracleArgs),
    /// Run the ablation or dimension-sweep suite and write CSV tables.
    Bench(BenchArgs),
}

#[derive(Args, Clone, Default)]
struct TaskArgs {
    /// Network weights (JSON). May carry a "property" section.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Output property (JSON list of linear constraints).
    #[arg(long)]
    property: Option<PathBuf>,
    /// Built-in synthetic task instead of a network file, e.g. box2d,
    /// noisy_box2d, multi_box2d, checkerboard2d, halfspace:5, axis_halfspace:5.
    #[arg(long)]
    task: Option<String>,
    /// Input region as "lo:hi,lo:hi,...".
    #[arg(long, allow_hyphen_values = true)]
    region: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    task: TaskArgs,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long = "R")]
    purity: Option<f64>,
    #[arg(long)]
    coverage: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    depth: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory for report.json and boxes.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_resamples: Option<u64>,
    #[arg(long)]
    error_samples: Option<usize>,
    /// Fixed resamples per box instead of the tolerance-limit size.
    #[arg(long)]
    resamples: Option<u64>,
}

#[derive(Debug, Copy, Clone, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
enum ModeArg {
    Verify,
    NoFilter,
    SingleTree,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Verify => Mode::Verify,
            ModeArg::NoFilter => Mode::NoFilter,
            ModeArg::SingleTree => Mode::SingleTree,
        }
    }
}

/// Run configuration as read from a file; every field is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    network: Option<PathBuf>,
    property: Option<PathBuf>,
    task: Option<String>,
    region: Option<String>,
    delta: Option<f64>,
    #[serde(rename = "R")]
    purity: Option<f64>,
    coverage: Option<f64>,
    epsilon: Option<f64>,
    m: Option<usize>,
    k: Option<usize>,
    trees: Option<usize>,
    depth: Option<u32>,
    seed: Option<u64>,
    mode: Option<ModeArg>,
    out: Option<PathBuf>,
    max_resamples: Option<u64>,
    error_samples: Option<usize>,
    resamples: Option<u64>,
}

/// Fully resolved configuration, echoed into report.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunConfig {
    network: Option<PathBuf>,
    property: Option<PathBuf>,
    task: Option<String>,
    region: String,
    delta: f64,
    #[serde(rename = "R")]
    purity: f64,
    coverage: f64,
    epsilon: f64,
    m: usize,
    k: usize,
    trees: usize,
    depth: u32,
    seed: u64,
    mode: ModeArg,
    out: PathBuf,
    max_resamples: Option<u64>,
    error_samples: Option<usize>,
    resamples: Option<u64>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, default_value_t = 0.001)]
    delta: f64,
    #[arg(long = "R", default_value_t = 0.995)]
    purity: f64,
    /// Tree counts: comma list and/or inclusive ranges like "1..4".
    #[arg(long, default_value = "1,500,1000,2000")]
    trees: String,
    /// Depths: comma list and/or inclusive ranges.
    #[arg(long, default_value = "5..11")]
    depth: String,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    task: TaskArgs,
    /// Grid depth; the grid has 2^(N·depth) cells.
    #[arg(long, default_value_t = 8)]
    depth: u32,
    /// Seed for synthetic noise placement.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Suite {
    Ablation,
    Scalability,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    suite: Suite,
    /// Number of seeds; runs use seeds 0..n.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Input dimensions for the dimension sweep.
    #[arg(long, default_value = "2,5,7,10")]
    dims: String,
    /// Modes compared by the ablation suite.
    #[arg(long, value_delimiter = ',', default_value = "verify,no_filter")]
    modes: Vec<ModeArg>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    /// Halfspace used by the dimension sweep.
    #[arg(long, value_enum, default_value = "diagonal")]
    shape: ShapeArg,
    /// Output directory for the CSV tables.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum ShapeArg {
    Diagonal,
    Axis,
}

fn main() -> ExitCode {
    // usage errors exit with 1 so that 2 keeps meaning "target not met"
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.verbose);
    let result = configure_threads(cli.threads).and_then(|()| match cli.command {
        Command::Verify(args) => cmd_verify(*args),
        Command::Plan(args) => cmd_plan(args).map(|()| ExitCode::SUCCESS),
        Command::Oracle(args) => cmd_oracle(args).map(|()| ExitCode::SUCCESS),
        Command::Bench(args) => cmd_bench(args).map(|()| ExitCode::SUCCESS),
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing_subscriber::filter::LevelFilter::WARN,
        1 => tracing_subscriber::filter::LevelFilter::INFO,
        _ => tracing_subscriber::filter::LevelFilter::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            bail!("threads: must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("threads: cannot build the worker pool")?;
    }
    Ok(())
}

fn resolve(args: VerifyArgs) -> Result<RunConfig> {
    let file = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("config: cannot read {}", path.display()))?;
            serde_json::from_str::<FileConfig>(&text)
                .with_context(|| format!("config: invalid JSON in {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    let defaults = GuaranteeParams::default();
    let task = args.task.task.or(file.task);
    let network = args.task.network.or(file.network);
    let region = match args.task.region.or(file.region) {
        Some(r) => r,
        None if task.is_some() => String::new(),
        None => bail!("region: required with --network (format \"lo:hi,lo:hi,...\")"),
    };
    Ok(RunConfig {
        network,
        property: args.task.property.or(file.property),
        task,
        region,
        delta: args.delta.or(file.delta).unwrap_or(defaults.delta),
        purity: args.purity.or(file.purity).unwrap_or(defaults.purity),
        coverage: args.coverage.or(file.coverage).unwrap_or(defaults.coverage_target),
        epsilon: args.epsilon.or(file.epsilon).unwrap_or(defaults.epsilon),
        m: args.m.or(file.m).unwrap_or(20_000),
        k: args.k.or(file.k).unwrap_or(10_000),
        trees: args.trees.or(file.trees).unwrap_or(500),
        depth: args.depth.or(file.depth).unwrap_or(5),
        seed: args.seed.or(file.seed).unwrap_or(0),
        mode: args.mode.or(file.mode).unwrap_or(ModeArg::Verify),
        out: args.out.or(file.out).unwrap_or_else(|| PathBuf::from("rfprove-out")),
        max_resamples: args.max_resamples.or(file.max_resamples),
        error_samples: args.error_samples.or(file.error_samples),
        resamples: args.resamples.or(file.resamples),
    })
}

fn parse_region(text: &str) -> Result<AxisBox> {
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for (i, part) in text.split(',').enumerate() {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| anyhow!("region: axis {i} is \"{part}\", expected \"lo:hi\""))?;
        let lo: f64 = lo
            .trim()
            .parse()
            .with_context(|| format!("region: axis {i} lower bound"))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .with_context(|| format!("region: axis {i} upper bound"))?;
        lower.push(lo);
        upper.push(hi);
    }
    let b = AxisBox::new(lower, upper).context("region")?;
    b.ensure_nondegenerate().context("region")?;
    Ok(b)
}

fn synthetic_spec(name: &str) -> Result<SyntheticSpec> {
    let dim_of = |s: &str| -> Result<usize> {
        s.parse::<usize>()
            .ok()
            .filter(|&d| d >= 1)
            .ok_or_else(|| anyhow!("task: bad dimension in \"{name}\""))
    };
    Ok(match name {
        "box2d" => SyntheticSpec::box2d(),
        "noisy_box2d" => SyntheticSpec::noisy_box2d(),
        "multi_box2d" => SyntheticSpec::multi_box2d(),
        "checkerboard2d" => SyntheticSpec::Checkerboard { dim: 2, period: 4 },
        _ => match name.split_once(':') {
            Some(("halfspace", d)) => SyntheticSpec::diagonal_halfspace(dim_of(d)?),
            Some(("axis_halfspace", d)) => SyntheticSpec::axis_halfspace(dim_of(d)?),
            _ => bail!("task: unknown synthetic task \"{name}\""),
        },
    })
}

/// Task from either a built-in synthetic spec or a network file, plus the
/// analytic truth when known.
fn build_task(
    task: Option<&str>,
    network: Option<&Path>,
    property: Option<&Path>,
    region: &str,
    seed: u64,
) -> Result<(VerificationTask, Option<Truth>)> {
    match (task, network) {
        (Some(_), Some(_)) => bail!("task: give either --task or --network, not both"),
        (None, None) => bail!("network: one of --network or --task is required"),
        (Some(name), None) => {
            let synth = generate_synthetic(&synthetic_spec(name)?, seed).context("task")?;
            let mut t = synth.task;
            if !region.is_empty() {
                let r = parse_region(region)?;
                if r != t.region {
                    bail!("region: synthetic tasks are defined on the unit cube");
                }
            }
            t.region = AxisBox::unit(t.dim());
            Ok((t, Some(synth.truth)))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("network: cannot read {}", path.display()))?;
            let net = Network::from_json_str(&text).with_context(|| format!("network: {}", path.display()))?;
            let property = match property {
                Some(p) => OutputProperty::load(p).with_context(|| format!("property: {}", p.display()))?,
                None => embedded_property(&text)?.map_or_else(
                    || {
                        if net.output_dim() == 1 {
                            Ok(OutputProperty::threshold(0.0))
                        } else {
                            Err(anyhow!(
                                "property: required for a network with {} outputs",
                                net.output_dim()
                            ))
                        }
                    },
                    Ok,
                )?,
            };
            let labeler = MarginLabeler::new(net, property).context("property")?;
            let region = parse_region(region)?;
            if region.dim() != labeler.network().input_dim() {
                bail!(
                    "region: has {} axes but the network takes {} inputs",
                    region.dim(),
                    labeler.network().input_dim()
                );
            }
            Ok((VerificationTask::new(labeler, region), None))
        }
    }
}

fn embedded_property(network_text: &str) -> Result<Option<OutputProperty>> {
    let value: serde_json::Value = serde_json::from_str(network_text).context("network: invalid JSON")?;
    match value.get("property") {
        Some(p) => Ok(Some(
            OutputProperty::from_json_str(&p.to_string()).context("property: embedded section")?,
        )),
        None => Ok(None),
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let config = resolve(args)?;
    let (mut task, _) = build_task(
        config.task.as_deref(),
        config.network.as_deref(),
        config.property.as_deref(),
        &config.region,
        config.seed,
    )?;
    task.params = GuaranteeParams {
        delta: config.delta,
        purity: config.purity,
        coverage_target: config.coverage,
        epsilon: config.epsilon,
    };
    task.m = config.m;
    task.k = config.k;
    task.forest.n_trees = config.trees;
    task.forest.max_depth = config.depth;
    task.options.max_resamples = config.max_resamples;
    task.options.error_samples = config.error_samples;
    task.options.resample_override = config.resamples;

    let report = run_mode(&task, config.seed, config.mode.into())?;

    fs::create_dir_all(&config.out).with_context(|| format!("out: cannot create {}", config.out.display()))?;
    let mut doc = serde_json::to_value(&report)?;
    doc["config"] = serde_json::to_value(&config)?;
    let report_path = config.out.join("report.json");
    fs::write(&report_path, serde_json::to_string_pretty(&doc)? + "\n")
        .with_context(|| format!("out: cannot write {}", report_path.display()))?;
    let boxes_path = config.out.join("boxes.csv");
    let file = fs::File::create(&boxes_path).with_context(|| format!("out: cannot write {}", boxes_path.display()))?;
    report.write_boxes_csv(file)?;

    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "boxes={} coverage={:.4} error={:.4} trees={} time_ms={:.0} target_met={}",
        report.boxes.len(),
        report.coverage_estimate,
        report.error_estimate,
        report.trees_used,
        report.wall_time_ms,
        report.coverage_met
    );
    Ok(if report.coverage_met {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

/// Comma list of values and inclusive `a..b` ranges.
fn parse_list<T>(field: &str, text: &str) -> Result<Vec<T>>
where
    T: std::str::FromStr + Copy + PartialOrd + Into<u64> + TryFrom<u64>,
{
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let parse = |s: &str| {
            s.trim()
                .parse::<T>()
                .map_err(|_| anyhow!("{field}: cannot parse \"{s}\""))
        };
        match part.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (parse(a)?.into(), parse(b)?.into());
                if a > b {
                    bail!("{field}: empty range \"{part}\"");
                }
                for v in a..=b {
                    out.push(T::try_from(v).map_err(|_| anyhow!("{field}: {v} out of range"))?);
                }
            }
            None => out.push(parse(part)?),
        }
    }
    if out.is_empty() {
        bail!("{field}: no values given");
    }
    Ok(out)
}

#[derive(Serialize)]
struct PlanRow {
    trees: u64,
    depth: u32,
    n_per_box: u64,
    max_boxes: u64,
    total_resamples: u64,
}

fn cmd_plan(args: PlanArgs) -> Result<()> {
    let trees: Vec<u64> = parse_list("trees", &args.trees)?;
    let depths: Vec<u32> = parse_list("depth", &args.depth)?;
    let params = GuaranteeParams {
        delta: args.delta,
        purity: args.purity,
        ..GuaranteeParams::default()
    };
    params.validate()?;
    let mut rows = Vec::new();
    for &t in &trees {
        for &d in &depths {
            let p = plan_budget(&params, t, d).with_context(|| format!("plan for T={t}, D={d}"))?;
            rows.push(PlanRow {
                trees: t,
                depth: d,
                n_per_box: p.n_per_box,
                max_boxes: p.max_boxes,
                total_resamples: p.total_resamples,
            });
        }
    }
    println!(
        "{:>8} {:>6} {:>10} {:>12} {:>16}",
        "trees", "depth", "n_per_box", "max_boxes", "total_resamples"
    );
    for r in &rows {
        println!(
            "{:>8} {:>6} {:>10} {:>12} {:>16}",
            r.trees, r.depth, r.n_per_box, r.max_boxes, r.total_resamples
        );
    }
    if let Some(path) = args.out {
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("out: cannot write {}", path.display()))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let t = &args.task;
    let (task, truth) = build_task(
        t.task.as_deref(),
        t.network.as_deref(),
        t.property.as_deref(),
        t.region.as_deref().unwrap_or(""),
        args.seed,
    )?;
    let oracle = build_oracle(&task, args.depth)?;
    let b = oracle.bracket();
    let (lo, hi) = b.bounds();
    let region_volume = task.region.volume();
    println!(
        "preimage volume in [{:.6}, {:.6}] (fraction of region; {} cells at depth {})",
        lo,
        hi,
        oracle.cell_count(),
        args.depth
    );
    println!(
        "positive {:.6}  mixed {:.6}  negative {:.6}  region volume {}",
        b.positive, b.mixed, b.negative, region_volume
    );
    if let Some(v) = truth.and_then(|t| t.analytic_volume()) {
        println!("analytic volume {v:.6}");
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    if args.seeds == 0 {
        bail!("seeds: must be at least 1");
    }
    let seeds: Vec<u64> = (0..args.seeds).collect();
    fs::create_dir_all(&args.out).with_context(|| format!("out: cannot create {}", args.out.display()))?;
    match args.suite {
        Suite::Ablation => {
            let mut cases = default_ablation_cases()?;
            for c in &mut cases {
                if let Some(m) = args.m {
                    c.task.m = m;
                }
                if let Some(t) = args.trees {
                    c.task.forest.n_trees = t;
                }
            }
            let modes: Vec<Mode> = args.modes.iter().map(|&m| m.into()).collect();
            let table = run_ablation_suite(&cases, &seeds, &modes)?;
            table.write_csv(create(&args.out.join("ablation.csv"))?)?;
            table.write_summary_csv(create(&args.out.join("ablation_summary.csv"))?)?;
            println!(
                "{:<14} {:<12} {:>8} {:>9} {:>9} {:>10}",
                "task", "mode", "boxes", "coverage", "error", "time_ms"
            );
            for s in table.summary() {
                println!(
                    "{:<14} {:<12} {:>8.1} {:>9.4} {:>9.5} {:>10.1}",
                    s.task,
                    s.mode.as_str(),
                    s.n_boxes,
                    s.coverage,
                    s.error,
                    s.wall_time_ms
                );
            }
        }
        Suite::Scalability => {
            let dims: Vec<u64> = parse_list("dims", &args.dims)?;
            let dims: Vec<usize> = dims.into_iter().map(|d| d as usize).collect();
            if dims.contains(&0) {
                bail!("dims: dimensions must be positive");
            }
            let mut config = ScalabilityConfig {
                shape: match args.shape {
                    ShapeArg::Diagonal => HalfspaceShape::Diagonal,
                    ShapeArg::Axis => HalfspaceShape::Axis,
                },
                ..ScalabilityConfig::default()
            };
            if let Some(m) = args.m {
                config.m = m;
            }
            if let Some(t) = args.trees {
                config.n_trees = t;
            }
            let table = run_scalability_suite(&dims, &config, &seeds)?;
            table.write_csv(create(&args.out.join("scalability.csv"))?)?;
            table.write_summary_csv(create(&args.out.join("scalability_summary.csv"))?)?;
            println!(
                "{:>4} {:>9} {:>9} {:>8} {:>8} {:>10}",
                "n", "coverage", "error", "boxes", "trees", "time_ms"
            );
            for r in table.summary() {
                println!(
                    "{:>4} {:>9.4} {:>9.5} {:>8.1} {:>8.1} {:>10.1}",
                    r.n, r.coverage, r.error, r.n_boxes, r.n_trees_used, r.wall_time_ms
                );
            }
        }
    }
    Ok(())
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).with_context(|| format!("out: cannot write {}", path.display()))
}
