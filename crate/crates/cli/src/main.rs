//! `causal-debias`: run the debiasing pipeline from files.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use causal_debias::discovery::DiscoveryConfig;
use causal_debias::learners::{ClassifierId, ClassifierSpec};
use causal_debias::metrics::{self, EvaluationConfig, GroupSpec};
use causal_debias::pipeline::{self, GraphDocument};
use causal_debias::simulate::SimulationConfig;
use causal_debias::synthgen::{self, SynthConfig};
use causal_debias::tabular::{self, Dataset};
use causal_debias::{Error, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "causal-debias", version, about = "Causal-model based dataset debiasing")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Discover a causal model and write graph.json and fit.json.
    Discover {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        discovery: DiscoveryArgs,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Replay an edit script, simulate, and write debiased.csv.
    Debias {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        discovery: DiscoveryArgs,
        /// JSON array of {stage, op, source, target, slider?}; omitted means no edits.
        #[arg(long)]
        script: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Compare original and debiased datasets and write report.json.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        debiased: PathBuf,
        /// Column defining the two groups.
        #[arg(long, conflicts_with = "groups")]
        group: Option<String>,
        /// Level of --group forming group A; the other levels form group B.
        #[arg(long, requires = "group")]
        group_a: Option<String>,
        /// Group spec JSON file (column or custom predicates).
        #[arg(long)]
        groups: Option<PathBuf>,
        #[arg(long, default_value = "logistic")]
        learner: String,
        /// Learner hyperparameters as a JSON object, e.g. '{"n_trees": 50}'.
        #[arg(long)]
        learner_params: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Neighbours for individual bias.
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Repeated 50:50 splits for classifier metrics.
        #[arg(long, default_value_t = 3)]
        splits: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Write the synthetic hiring dataset and its schema file.
    SynthGen {
        #[arg(long, default_value_t = 4000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.6)]
        p_male: f64,
        /// CSV path; the schema goes next to it as <stem>.schema.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the session service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Label column; overrides the schema file.
    #[arg(long)]
    label: Option<String>,
    /// Favorable label level; overrides the schema file.
    #[arg(long)]
    favorable: Option<String>,
}

#[derive(Args)]
struct DiscoveryArgs {
    /// CI-test significance level.
    #[arg(long, default_value_t = 0.01)]
    p_value: f64,
    #[arg(long)]
    max_cond_size: Option<usize>,
}

impl DiscoveryArgs {
    fn config(&self) -> Result<DiscoveryConfig> {
        let cfg = DiscoveryConfig {
            alpha: self.p_value,
            max_cond_size: self.max_cond_size,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load(args: &DataArgs) -> Result<Dataset> {
    let mut data = pipeline::load_dataset(&args.data, args.schema.as_deref())?;
    if args.label.is_some() || args.favorable.is_some() {
        let label = args
            .label
            .clone()
            .or_else(|| data.label.clone())
            .ok_or_else(|| Error::Config("--favorable needs a label column".into()))?;
        data.set_label(&label, args.favorable.as_deref())?;
    }
    pipeline::check_size(&data)?;
    Ok(data)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn discover(data: &DataArgs, discovery: &DiscoveryArgs, out: &Path) -> Result<()> {
    let d = load(data)?;
    let (cpdag, model) = pipeline::discover_model(&d, &discovery.config()?)?;
    ensure_dir(out)?;
    let doc = GraphDocument {
        graph: model.summary(&d)?,
        warnings: cpdag.warnings.clone(),
    };
    write_json(&out.join("graph.json"), &doc)?;
    write_json(&out.join("fit.json"), &pipeline::fit_report(&model))?;
    println!(
        "discovered {} edges over {} columns; wrote {}",
        doc.graph.edges.len(),
        d.n_cols(),
        out.join("graph.json").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    seed: u64,
    simulated: &'a [String],
    rescale: &'a std::collections::BTreeMap<String, causal_debias::simulate::RescaleReport>,
    warnings: &'a [String],
}

fn debias(data: &DataArgs, discovery: &DiscoveryArgs, script: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let d = load(data)?;
    let script = script.map(pipeline::load_script).transpose()?.unwrap_or_default();
    let (_, discovered) = pipeline::discover_model(&d, &discovery.config()?)?;
    let (model, sim) = pipeline::debias(&d, &discovered, &script, &SimulationConfig::new(seed))?;
    ensure_dir(out)?;
    let csv = out.join("debiased.csv");
    sim.data.write_csv(&csv)?;
    write_json(&out.join("edit_log.json"), &model.log().to_script())?;
    write_json(
        &out.join("simulation.json"),
        &SimulationSummary {
            seed,
            simulated: &sim.simulated,
            rescale: &sim.rescale,
            warnings: &sim.warnings,
        },
    )?;
    println!(
        "replayed {} edits, re-simulated [{}]; wrote {}",
        script.len(),
        sim.simulated.join(", "),
        csv.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    data: &DataArgs,
    debiased: &Path,
    groups: GroupSpec,
    learner: ClassifierSpec,
    seed: u64,
    k: usize,
    splits: usize,
    out: &Path,
) -> Result<()> {
    let original = load(data)?;
    let label = original
        .label
        .clone()
        .ok_or_else(|| Error::Config("no label column; pass --label or a schema file with \"label\"".into()))?;
    let favorable = original
        .spec(&label)?
        .favorable_level
        .clone()
        .ok_or_else(|| Error::Config("no favorable level; pass --favorable".into()))?;
    let deb = tabular::load_csv(debiased, Some(&original.schema_file()))?
        .conform_to(&original)
        .map_err(|e| Error::Schema(format!("`{}` does not match the original: {e}", debiased.display())))?;
    if deb.n_rows() != original.n_rows() {
        return Err(Error::Schema(format!(
            "`{}` has {} rows, the original has {}",
            debiased.display(),
            deb.n_rows(),
            original.n_rows()
        )));
    }
    let cfg = EvaluationConfig {
        learner,
        k,
        n_splits: splits,
        seed,
    };
    let report = metrics::evaluate(&original, &deb, &groups, &label, &favorable, &cfg)?;
    ensure_dir(out)?;
    let path = out.join("report.json");
    write_json(&path, &report)?;
    println!(
        "parity_diff {:.4} -> {:.4}, accuracy {:.4} -> {:.4}, distortion {:.4}; wrote {}",
        report.original.parity_diff,
        report.debiased.parity_diff,
        report.original.accuracy,
        report.debiased.accuracy,
        report.debiased.distortion,
        path.display()
    );
    Ok(())
}

fn group_spec(group: Option<String>, group_a: Option<String>, groups: Option<PathBuf>) -> Result<GroupSpec> {
    match (group, groups) {
        (Some(column), None) => Ok(GroupSpec::Column { column, group_a }),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("`{}`: {e}", path.display())))
        }
        _ => Err(Error::Config("pass either --group or --groups".into())),
    }
}

fn learner_spec(name: &str, params: Option<&str>, seed: u64) -> Result<ClassifierSpec> {
    let mut spec = ClassifierSpec::new(ClassifierId::parse(name)?, seed);
    if let Some(p) = params {
        spec.hyperparams = serde_json::from_str(p).map_err(|e| Error::Config(format!("--learner-params: {e}")))?;
    }
    spec.validate()?;
    Ok(spec)
}

fn synth_gen(n: usize, seed: u64, p_male: f64, out: &Path) -> Result<()> {
    let data = synthgen::generate_hiring(&SynthConfig {
        n,
        seed,
        p_male,
        ..Default::default()
    })?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    data.write_csv(out)?;
    let schema = out.with_extension("schema.json");
    std::fs::write(&schema, data.schema_file().to_json() + "\n").map_err(|e| Error::io(&schema, e))?;
    println!("wrote {} rows to {} and {}", n, out.display(), schema.display());
    Ok(())
}

fn serve(addr: SocketAddr, snapshot_dir: Option<PathBuf>) -> Result<()> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Config(format!("cannot start runtime: {e}")))?;
    println!("serving on http://{addr}");
    rt.block_on(causal_debias_service::serve(
        addr,
        causal_debias_service::ServiceOptions { snapshot_dir },
    ))
    .map_err(|e| Error::Config(format!("cannot serve on {addr}: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Discover { data, discovery, out } => discover(&data, &discovery, &out),
        Command::Debias {
            data,
            discovery,
            script,
            seed,
            out,
        } => debias(&data, &discovery, script.as_deref(), seed, &out),
        Command::Evaluate {
            data,
            debiased,
            group,
            group_a,
            groups,
            learner,
            learner_params,
            seed,
            k,
            splits,
            out,
        } => {
            let groups = group_spec(group, group_a, groups)?;
            let learner = learner_spec(&learner, learner_params.as_deref(), seed)?;
            evaluate(&data, &debiased, groups, learner, seed, k, splits, &out)
        }
        Command::SynthGen { n, seed, p_male, out } => synth_gen(n, seed, p_male, &out),
        Command::Serve { addr, snapshot_dir } => serve(addr, snapshot_dir),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Error messages already include their cause; keep them on one line.
            eprintln!("error: {}", e.to_string().replace(['\n', '\r'], " "));
            ExitCode::from(2)
        }
    }
}
