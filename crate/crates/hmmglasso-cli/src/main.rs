//! Command-line front end: fit, prune, simulate, eval and bench.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numeric failure,
//! 4 state collapse during fitting.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;

use hmmglasso::em::{fit_hmmglasso, FitConfig, Initialization, Lambda, PiMin, Termination};
use hmmglasso::io::{
    self, ConfigRecord, EvalRecord, ModelDocument, ModelRecord, PruneDocument, ReadOptions,
    TruthDocument, SCHEMA_VERSION,
};
use hmmglasso::sim::{
    run_experiment_1, run_experiment_2, Exp1Method, Exp1Options, Exp2Method, SimSpec,
};
use hmmglasso::{
    backward_prune, forward_backward, generate, kmeans_init, Criterion, Error, PenaltyKind,
};

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;
const EXIT_COLLAPSE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "hmmglasso",
    about = "Gaussian HMMs with state-specific sparse inverse covariances",
    version
)]
struct Cli {
    /// Bound on internal parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a K-state model and write it as a JSON document.
    Fit(FitCmd),
    /// Explore state counts by greedy backward pruning.
    Prune(PruneCmd),
    /// Draw a data set from one of the benchmark models.
    Simulate(SimulateCmd),
    /// Held-out log-likelihood of a saved model on a data matrix.
    Eval(EvalCmd),
    /// Run a benchmark experiment and write line-delimited records.
    Bench(BenchCmd),
}

#[derive(Args)]
struct InputOpts {
    /// Input matrix (one observation per row).
    #[arg(long)]
    data: PathBuf,
    /// Cell delimiter; use "tab" for tab-separated input.
    #[arg(long, default_value = ",")]
    delimiter: String,
    /// Skip the first input line.
    #[arg(long, default_value_t = false)]
    header: bool,
}

impl InputOpts {
    fn read_options(&self) -> Result<ReadOptions, Error> {
        let delimiter = match self.delimiter.as_str() {
            "tab" | "\\t" => '\t',
            s if s.chars().count() == 1 => s.chars().next().unwrap(),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "delimiter must be a single character or 'tab', got '{other}'"
                )))
            }
        };
        Ok(ReadOptions {
            delimiter,
            header: self.header,
        })
    }

    fn read(&self) -> Result<DMatrix<f64>, Error> {
        io::read_matrix(&self.data, &self.read_options()?)
    }
}

#[derive(Args)]
struct FitOpts {
    /// Penalty level: "uni" for sqrt(2 n ln p)/2, or an explicit number.
    #[arg(long, default_value = "uni")]
    lambda: String,
    /// Penalty variant.
    #[arg(long, default_value = "parcor")]
    penalty: String,
    /// Convergence threshold on relative covariance change.
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    /// Minimum scaled state size before a fit stops (default 5/n).
    #[arg(long)]
    pi_min: Option<f64>,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Initialization: "kmeans" or "file".
    #[arg(long, default_value = "kmeans")]
    init: String,
    /// Initialization file (labels or soft assignments) when --init file.
    #[arg(long)]
    init_file: Option<PathBuf>,
    /// K-means restarts.
    #[arg(long, default_value_t = 100)]
    restarts: usize,
    /// Seed for all randomness in the command.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitOpts {
    fn config(&self) -> Result<FitConfig, Error> {
        let lambda = match self.lambda.as_str() {
            "uni" => Lambda::Universal,
            s => {
                let v: f64 = s.parse().map_err(|_| {
                    Error::InvalidParameter(format!(
                        "--lambda must be 'uni' or a number, got '{s}'"
                    ))
                })?;
                Lambda::Fixed(v)
            }
        };
        let penalty: PenaltyKind = self.penalty.parse()?;
        let pi_min = match self.pi_min {
            Some(v) => PiMin::Fixed(v),
            None => PiMin::Auto,
        };
        let config = FitConfig {
            lambda,
            penalty,
            eps: self.eps,
            pi_min,
            max_iter: self.max_iter,
        };
        config.validate()?;
        Ok(config)
    }

    fn initialization(
        &self,
        data: &DMatrix<f64>,
        k: usize,
        read_options: &ReadOptions,
    ) -> Result<Initialization, Error> {
        match self.init.as_str() {
            "kmeans" => kmeans_init(data, k, self.restarts, self.seed),
            "file" => {
                let path = self.init_file.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("--init file requires --init-file".into())
                })?;
                io::read_initialization(path, k, read_options)
            }
            other => Err(Error::InvalidParameter(format!(
                "--init must be 'kmeans' or 'file', got '{other}'"
            ))),
        }
    }

    fn config_record(&self, config: &FitConfig, n: usize, p: usize) -> ConfigRecord {
        ConfigRecord {
            lambda: config.lambda.resolve(n, p),
            penalty: config.penalty.as_str().to_string(),
            eps: config.eps,
            pi_min: config.pi_min.resolve(n),
            max_iter: config.max_iter,
            seed: Some(self.seed),
        }
    }
}

#[derive(Args)]
struct FitCmd {
    #[command(flatten)]
    input: InputOpts,
    /// Number of hidden states.
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    fit: FitOpts,
    /// Output model document.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneCmd {
    #[command(flatten)]
    input: InputOpts,
    #[arg(long, default_value_t = 1)]
    kmin: usize,
    #[arg(long)]
    kmax: usize,
    /// Model selection criterion guiding merge-vs-delete choices.
    #[arg(long, default_value = "mmdl")]
    criterion: String,
    #[command(flatten)]
    fit: FitOpts,
    /// Output pruning-trace document.
    #[arg(long)]
    out: PathBuf,
    /// Optionally also write the selected model as a standalone document.
    #[arg(long)]
    out_model: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateCmd {
    /// Benchmark model, 1 through 4.
    #[arg(long)]
    model: u8,
    /// True number of states.
    #[arg(long)]
    k: usize,
    /// Mean separation.
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Observations (defaults to the benchmark's standard size).
    #[arg(long)]
    n: Option<usize>,
    /// Dimensions (defaults to the benchmark's standard size).
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prefix for <prefix>.data.csv, <prefix>.labels.csv, <prefix>.truth.json.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Args)]
struct EvalCmd {
    /// Saved model document.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputOpts,
    /// Write the evaluation record here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchCmd {
    /// Experiment: "exp1" (state recovery) or "exp2" (graph recovery).
    #[arg(long)]
    experiment: String,
    #[arg(long)]
    model: u8,
    #[arg(long)]
    k: usize,
    /// Mean separations, comma separated.
    #[arg(long, default_value = "2")]
    alphas: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    /// Methods, comma separated (exp1: bwprun,hmmgl,unpen,diagcov;
    /// exp2: bwprun,hmmgl,km+glasso,glasso).
    #[arg(long, default_value = "bwprun,diagcov")]
    methods: String,
    /// Criteria for exp1, comma separated.
    #[arg(long, default_value = "mmdl")]
    criteria: String,
    #[arg(long, default_value_t = 1)]
    kmin: usize,
    #[arg(long, default_value_t = 8)]
    kmax: usize,
    /// Fitting options; --seed also drives data generation, --restarts
    /// bounds the K-means starts used inside each method.
    #[command(flatten)]
    fit: FitOpts,
    /// Output report (one JSON record per line).
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let outcome = match cli.command {
        Command::Fit(cmd) => cmd_fit(cmd),
        Command::Prune(cmd) => cmd_prune(cmd),
        Command::Simulate(cmd) => cmd_simulate(cmd),
        Command::Eval(cmd) => cmd_eval(cmd),
        Command::Bench(cmd) => cmd_bench(cmd),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::Io(_)
        | Error::InvalidParameter(_)
        | Error::DimensionMismatch(_)
        | Error::Serde(_) => EXIT_USAGE,
        _ => EXIT_NUMERIC,
    }
}

fn cmd_fit(cmd: FitCmd) -> Result<u8, Error> {
    let read_options = cmd.input.read_options()?;
    let data = cmd.input.read()?;
    let (n, p) = (data.nrows(), data.ncols());
    let config = cmd.fit.config()?;
    let init = cmd.fit.initialization(&data, cmd.k, &read_options)?;
    let fit = fit_hmmglasso(&data, cmd.k, &config, &init)?;
    let doc = ModelDocument::from_fit(&fit, cmd.fit.config_record(&config, n, p))?;
    doc.write_to(&cmd.out)?;
    if let Termination::StateCollapsed { state } = fit.termination {
        eprintln!(
            "state {state} collapsed below pi_min = {} after {} iterations; \
             partial model written to {}",
            fit.pi_min,
            fit.iterations,
            cmd.out.display()
        );
        return Ok(EXIT_COLLAPSE);
    }
    Ok(0)
}

fn cmd_prune(cmd: PruneCmd) -> Result<u8, Error> {
    let read_options = cmd.input.read_options()?;
    let data = cmd.input.read()?;
    let (n, p) = (data.nrows(), data.ncols());
    let config = cmd.fit.config()?;
    let criterion: Criterion = cmd.criterion.parse()?;
    let fit_opts = &cmd.fit;
    let trace = backward_prune(&data, cmd.kmin, cmd.kmax, &config, criterion, |d, k| {
        fit_opts.initialization(d, k, &read_options)
    })?;
    let doc = PruneDocument::from_trace(&trace, cmd.fit.config_record(&config, n, p));
    doc.write_to(&cmd.out)?;
    if let Some(model_path) = cmd.out_model {
        let selected = trace.selected_step();
        let model_doc =
            ModelDocument::from_fit(&selected.fit, cmd.fit.config_record(&config, n, p))?;
        model_doc.write_to(&model_path)?;
    }
    println!("selected_k: {}", trace.selected_k());
    Ok(0)
}

fn cmd_simulate(cmd: SimulateCmd) -> Result<u8, Error> {
    let mut spec = SimSpec::standard(cmd.model, cmd.k, cmd.alpha, cmd.seed)?;
    if let Some(n) = cmd.n {
        spec.n = n;
    }
    if let Some(p) = cmd.p {
        spec.p = p;
    }
    let (data, labels, truth) = generate(&spec)?;

    let data_path = format!("{}.data.csv", cmd.out_prefix);
    let mut file = std::fs::File::create(&data_path)?;
    io::write_matrix(&mut file, &data, ',')?;

    let labels_path = format!("{}.labels.csv", cmd.out_prefix);
    let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(&labels_path, text)?;

    let truth_path = format!("{}.truth.json", cmd.out_prefix);
    let edges: Vec<Vec<(usize, usize)>> = hmmglasso::sim::truth_graphs(&truth)
        .into_iter()
        .map(|g| g.into_iter().collect())
        .collect();
    let doc = TruthDocument {
        schema_version: SCHEMA_VERSION,
        spec,
        model: ModelRecord::from_model(&truth),
        edges,
    };
    std::fs::write(&truth_path, io::to_json17(&doc)?)?;
    println!("wrote {data_path}, {labels_path}, {truth_path}");
    Ok(0)
}

fn cmd_eval(cmd: EvalCmd) -> Result<u8, Error> {
    let doc = ModelDocument::read_from(&cmd.model)?;
    let model = doc.model.to_model()?;
    let data = cmd.input.read()?;
    if data.ncols() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "model has dimension {}, data has {} columns",
            model.dim(),
            data.ncols()
        )));
    }
    let resp = forward_backward(&data, &model)?;
    let record = EvalRecord {
        schema_version: SCHEMA_VERSION,
        n_test: data.nrows(),
        p: data.ncols(),
        log_likelihood: resp.log_likelihood,
        log_likelihood_per_obs: resp.log_likelihood / data.nrows() as f64,
    };
    let text = io::to_json17(&record)?;
    match cmd.out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_bench(cmd: BenchCmd) -> Result<u8, Error> {
    let config = cmd.fit.config()?;
    let alphas: Vec<f64> = cmd
        .alphas
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad alpha '{s}'")))
        })
        .collect::<Result<_, _>>()?;
    let mut specs = Vec::new();
    for &alpha in &alphas {
        let mut spec = SimSpec::standard(cmd.model, cmd.k, alpha, cmd.fit.seed)?;
        if let Some(n) = cmd.n {
            spec.n = n;
        }
        if let Some(p) = cmd.p {
            spec.p = p;
        }
        specs.push(spec);
    }
    let opts = Exp1Options {
        k_min: cmd.kmin,
        k_max: cmd.kmax,
        restarts: cmd.fit.restarts,
    };

    let mut lines = Vec::new();
    match cmd.experiment.as_str() {
        "exp1" => {
            let methods = parse_list(&cmd.methods, |s| match s {
                "bwprun" => Some(Exp1Method::Bwprun),
                "hmmgl" => Some(Exp1Method::Hmmgl),
                "unpen" => Some(Exp1Method::Unpen),
                "diagcov" => Some(Exp1Method::Diagcov),
                _ => None,
            })?;
            let criteria = parse_list(&cmd.criteria, |s| match s {
                "bic" => Some(Criterion::Bic),
                "mmdl" => Some(Criterion::Mmdl),
                _ => None,
            })?;
            let records = run_experiment_1(
                &specs,
                &methods,
                &criteria,
                cmd.replicates,
                cmd.fit.seed,
                &config,
                &opts,
            )?;
            for r in &records {
                lines.push(serde_json::to_string(r)?);
            }
        }
        "exp2" => {
            let methods = parse_list(&cmd.methods, |s| match s {
                "bwprun" => Some(Exp2Method::Bwprun),
                "hmmgl" => Some(Exp2Method::HmmglTrueK),
                "km+glasso" => Some(Exp2Method::KmeansGlasso),
                "glasso" => Some(Exp2Method::PooledGlasso),
                _ => None,
            })?;
            let records = run_experiment_2(
                &specs,
                &methods,
                cmd.replicates,
                cmd.fit.seed,
                &config,
                &opts,
            )?;
            for r in &records {
                lines.push(serde_json::to_string(r)?);
            }
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "--experiment must be exp1 or exp2, got '{other}'"
            )))
        }
    }
    let mut text = lines.join("\n");
    text.push('\n');
    std::fs::write(&cmd.out, text)?;
    println!("wrote {} records to {}", lines.len(), cmd.out.display());
    Ok(0)
}

fn parse_list<T>(input: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, Error> {
    let mut out = Vec::new();
    for item in input.split(',') {
        let item = item.trim();
        match f(item) {
            Some(v) => out.push(v),
            None => {
                return Err(Error::InvalidParameter(format!(
                    "unknown list entry '{item}'"
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidParameter("empty list".into()));
    }
    Ok(out)
}
