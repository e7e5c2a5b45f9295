use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use streamalign::assets;
use streamalign::experiments::{evaluate_log, generate_log, GeneratorConfig, MetricsTable, Noise, RunError};
use streamalign::heuristic::HeuristicMode;
use streamalign::petri::{Activity, WorkflowNet};
use streamalign::search::SearchError;
use streamalign::stream::{
    parse_log, Algorithm, Engine, EngineError, EventLog, JsonLinesSink, Sink, StreamOrder,
    StreamRecord,
};

#[derive(Parser)]
#[command(name = "iconf", version, about = "Online conformance checking with optimal prefix-alignments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replay logs as event streams and write per-event records and metrics.
    Replay(ReplayArgs),
    /// Align one trace and print the alignment.
    Align(AlignArgs),
    /// Write a synthetic log generated from a model.
    Generate(GenerateArgs),
    /// Check that a model is a workflow net.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct ModelArg {
    /// Model file (JSON) or bundled name: n1, choice-loop, parallel-tau, adversarial.
    #[arg(long)]
    model: String,
}

#[derive(Args, Clone, Copy)]
struct NoiseArgs {
    #[arg(long, default_value_t = 0.0)]
    swap_p: f64,
    #[arg(long, default_value_t = 0.0)]
    drop_p: f64,
    #[arg(long, default_value_t = 0.0)]
    insert_p: f64,
    #[arg(long, default_value_t = 8)]
    max_len: usize,
}

impl NoiseArgs {
    fn config(&self, n_traces: usize, seed: u64) -> GeneratorConfig {
        GeneratorConfig {
            n_traces,
            noise: Noise {
                swap_p: self.swap_p,
                drop_p: self.drop_p,
                insert_p: self.insert_p,
            },
            max_len: self.max_len,
            seed,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Log file (CSV or line-delimited JSON) or bundled name; repeatable.
    #[arg(long)]
    log: Vec<String>,
    /// Generate a synthetic log with this many traces (uses --seed).
    #[arg(long)]
    synthetic: Option<usize>,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, value_delimiter = ',', default_value = "ias,iasr,occ,occ-w1,occ-w2,occ-w5,occ-w10")]
    algorithms: Vec<Algorithm>,
    #[arg(long, default_value = "ilp")]
    heuristic: HeuristicMode,
    #[arg(long, default_value = "sequential")]
    order: StreamOrder,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print "-" instead of wall time so outputs are reproducible.
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Args)]
struct AlignArgs {
    #[command(flatten)]
    model: ModelArg,
    /// Comma-separated activities.
    #[arg(long, value_delimiter = ',', required = true)]
    trace: Vec<String>,
    #[arg(long, default_value = "ias")]
    algorithm: Algorithm,
    #[arg(long, default_value = "ilp")]
    heuristic: HeuristicMode,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    model: ModelArg,
    #[arg(long, default_value_t = 100)]
    traces: usize,
    #[command(flatten)]
    noise: NoiseArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV file; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    model: ModelArg,
}

enum Failure {
    Usage(String),
    Data(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Internal(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Internal(m) => m,
        }
    }
}

fn data<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Data(e.to_string())
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn search_failure(e: &SearchError) -> Failure {
    match e {
        SearchError::InvalidAlignment | SearchError::Alignment(_) => Failure::Internal(e.to_string()),
        _ => Failure::Data(e.to_string()),
    }
}

fn run_failure(e: RunError) -> Failure {
    match &e {
        RunError::Engine(EngineError::Search { source, .. }) | RunError::Search(source) => {
            match search_failure(source) {
                Failure::Internal(_) => Failure::Internal(e.to_string()),
                _ => data(e),
            }
        }
        _ => data(e),
    }
}

fn load_model(arg: &str) -> Result<WorkflowNet, Failure> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        return WorkflowNet::from_json(&text).map_err(|e| Failure::Data(format!("{arg}: {e}")));
    }
    assets::model(arg).ok_or_else(|| {
        Failure::Data(format!(
            "{arg}: no such file or bundled model ({})",
            assets::MODEL_NAMES.join(", ")
        ))
    })
}

fn load_log(arg: &str) -> Result<EventLog, Failure> {
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(io_err(path))?
    } else {
        assets::log_csv(arg)
            .ok_or_else(|| {
                Failure::Data(format!(
                    "{arg}: no such file or bundled log ({})",
                    assets::LOG_NAMES.join(", ")
                ))
            })?
            .to_string()
    };
    parse_log(&text).map_err(|e| Failure::Data(format!("{arg}: {e}")))
}

fn log_name(arg: &str) -> String {
    Path::new(arg)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| arg.to_string())
}

fn validated(model: WorkflowNet) -> Result<Arc<WorkflowNet>, Failure> {
    let report = model.validate();
    if report.is_ok() {
        Ok(Arc::new(model))
    } else {
        let v: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        Err(Failure::Data(format!("model is not a workflow net: {}", v.join("; "))))
    }
}

/// Files created so far; removed if the command fails.
#[derive(Default)]
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn create(&mut self, path: PathBuf) -> Result<BufWriter<fs::File>, Failure> {
        let f = fs::File::create(&path).map_err(io_err(&path))?;
        self.0.push(path);
        Ok(BufWriter::new(f))
    }

    fn remove_all(&self) {
        for p in &self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

fn replay(args: &ReplayArgs, outputs: &mut Outputs) -> Result<(), Failure> {
    let model = validated(load_model(&args.model.model)?)?;
    let mut logs: Vec<(String, EventLog)> = Vec::new();
    for l in &args.log {
        logs.push((log_name(l), load_log(l)?));
    }
    if let Some(n) = args.synthetic {
        let traces = generate_log(&model, &args.noise.config(n, args.seed)).map_err(data)?;
        logs.push((format!("synthetic-{}", args.seed), EventLog::from_traces(traces)));
    }
    if logs.is_empty() {
        return Err(Failure::Usage("replay needs --log or --synthetic".into()));
    }
    if args.algorithms.is_empty() {
        return Err(Failure::Usage("--algorithms is empty".into()));
    }
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;

    let mut table = MetricsTable::new(args.algorithms.clone());
    for (name, log) in &logs {
        let (runs, metrics) = evaluate_log(
            &model,
            log,
            &args.algorithms,
            args.heuristic,
            args.order,
            !args.no_wall_time,
        )
        .map_err(run_failure)?;
        for run in &runs {
            let path = args.out.join(format!("events_{name}_{}.ndjson", run.algorithm));
            let mut sink = JsonLinesSink::new(outputs.create(path.clone())?);
            for r in &run.events {
                let trace = &log.traces[&r.case][..r.event_index];
                let rec = StreamRecord::new(&Ok(r.clone()), &model, trace);
                sink.emit(&rec).map_err(io_err(&path))?;
            }
            sink.into_inner().flush().map_err(io_err(&path))?;
        }
        table.push(name.clone(), metrics);
    }

    let csv_path = args.out.join("metrics.csv");
    let w = outputs.create(csv_path.clone())?;
    table.write_csv(w).map_err(|e| Failure::Data(format!("{}: {e}", csv_path.display())))?;
    let text = table.render_text();
    let txt_path = args.out.join("metrics.txt");
    let mut w = outputs.create(txt_path.clone())?;
    w.write_all(text.as_bytes()).map_err(io_err(&txt_path))?;
    w.flush().map_err(io_err(&txt_path))?;
    print!("{text}");
    Ok(())
}

fn align(args: &AlignArgs) -> Result<(), Failure> {
    let model = validated(load_model(&args.model.model)?)?;
    let mut engine = Engine::new(model.clone(), args.algorithm, args.heuristic).map_err(data)?;
    let mut last = None;
    for (i, a) in args.trace.iter().enumerate() {
        let r = engine.process_raw("1", a.trim(), i as u64).map_err(|e| match &e {
            EngineError::Search { source, .. } => search_failure(source),
            EngineError::Rejected { .. } => data(e),
        })?;
        last = Some(r);
    }
    let r = last.ok_or_else(|| Failure::Usage("--trace is empty".into()))?;
    let trace: Vec<Activity> = engine.trace("1").expect("case exists").to_vec();
    print!("{}", r.alignment.render_table(&model, &trace));
    Ok(())
}

fn generate(args: &GenerateArgs, outputs: &mut Outputs) -> Result<(), Failure> {
    let model = validated(load_model(&args.model.model)?)?;
    let traces = generate_log(&model, &args.noise.config(args.traces, args.seed)).map_err(data)?;
    let log = EventLog::from_traces(traces);
    match &args.out {
        Some(path) => {
            let w = outputs.create(path.clone())?;
            log.write_csv(w).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
        }
        None => log.write_csv(io::stdout().lock()).map_err(data),
    }
}

fn validate(args: &ValidateArgs) -> Result<(), Failure> {
    let model = load_model(&args.model.model)?;
    let report = model.validate();
    if report.is_ok() {
        println!("ok: workflow net with {} places and {} transitions", model.place_ids().len(), model.transitions().len());
        Ok(())
    } else {
        for v in &report.violations {
            println!("{v}");
        }
        Err(Failure::Data(format!("{} violation(s)", report.violations.len())))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let mut outputs = Outputs::default();
    let result = match &cli.command {
        Command::Replay(a) => replay(a, &mut outputs),
        Command::Align(a) => align(a),
        Command::Generate(a) => generate(a, &mut outputs),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            outputs.remove_all();
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
