//! Command-line front end. Exit codes: 0 success, 1 data or analysis
//! failure, 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{Config, PolicyKind};
use crate::eval::{run_benchmark, Matching, MemoryMode};
use crate::llm::LlmPolicy;
use crate::memory::{verify_file, Memory};
use crate::reasoner::{analyze_window, DeterministicPolicy, Policy, StoredAnalysis};
use crate::scenario::{corpus_specs, duplicate_alerts, generate, FaultKind, Jitter, Scenario, ScenarioSpec, TRUTH_FILE};
use crate::telemetry::{ingest, AlertWindow, Level, Millis, SourceFormat, SourcePaths};

#[derive(Debug, Parser)]
#[command(name = "rootcause", version, about = "Root-cause localization over traces, logs and metrics")]
#[command(subcommand_required = false, arg_required_else_help = true)]
pub struct Cli {
    /// TOML configuration file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub window_ms: Option<Millis>,
    #[arg(long, global = true)]
    pub n_sigma: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub tau_skip: Option<f64>,
    #[arg(long, global = true)]
    pub tau_partial: Option<f64>,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub policy: Option<PolicyKind>,
    /// Persisted memory (JSONL).
    #[arg(long, global = true)]
    pub memory: Option<PathBuf>,
    /// Alerts analyzed concurrently.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    /// Scenario generator seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze every alert window of a telemetry directory.
    Analyze(AnalyzeArgs),
    /// Write a synthetic scenario (or a corpus of them).
    Generate(GenerateArgs),
    /// Benchmark a corpus of scenarios against their truth files.
    Eval(EvalArgs),
    /// Inspect a persisted memory.
    Memory {
        #[command(subcommand)]
        action: MemoryAction,
    },
    /// Render a stored transcript and check its ranking is reproduced.
    Replay { transcript: PathBuf },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Analyze one explicit window instead of detecting them.
    #[arg(long, requires = "window_end")]
    pub window_start: Option<Millis>,
    #[arg(long, requires = "window_start")]
    pub window_end: Option<Millis>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value = "latency_inflation")]
    pub fault: FaultKind,
    /// Defaults to the fault's natural level.
    #[arg(long)]
    pub level: Option<Level>,
    /// Write N scenarios cycling through all fault kinds, seeded from --seed.
    #[arg(long)]
    pub corpus: Option<usize>,
    /// Copies of the earliest alert to add.
    #[arg(long, default_value_t = 0)]
    pub duplicates: usize,
    /// Perturb the last copy's target pod by this many baseline sigmas.
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub services: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub fault_traces: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum, default_value = "on")]
    pub memory_mode: MemoryMode,
    #[arg(long, value_enum, default_value = "exact")]
    pub matching: Matching,
}

#[derive(Debug, Subcommand)]
pub enum MemoryAction {
    List,
    Show { alert_id: String },
    /// Re-check checksums, fingerprints and embeddings.
    Verify,
}

#[derive(Debug)]
pub enum Failure {
    /// Exit 2.
    Usage(String),
    /// Exit 1.
    Data(String),
}

impl Failure {
    pub fn code(&self) -> ExitCode {
        match self {
            Failure::Usage(_) => ExitCode::from(2),
            Failure::Data(_) => ExitCode::from(1),
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

fn data(m: impl Into<String>) -> Failure {
    Failure::Data(m.into())
}

fn write(path: &Path, text: &str) -> Outcome {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| data(format!("{}: {e}", path.display())))
}

impl Cli {
    /// File configuration (or defaults) with flag overrides applied.
    pub fn effective_config(&self) -> Result<Config, Failure> {
        let mut c = match &self.config {
            Some(p) => Config::load(p).map_err(usage)?,
            None => Config::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = self.$f { c.$f = v; })* };
        }
        set!(window_ms, n_sigma, alpha, tau_skip, tau_partial, delta, policy, parallel);
        if let Some(m) = &self.memory {
            c.memory_path = Some(m.clone());
        }
        c.validate().map_err(usage)?;
        Ok(c)
    }

    fn data_dir(&self) -> Result<&Path, Failure> {
        self.data.as_deref().ok_or_else(|| usage("--data is required"))
    }

    fn out_dir(&self) -> Result<&Path, Failure> {
        self.out.as_deref().ok_or_else(|| usage("--out is required"))
    }
}

fn build_policy(c: &Config) -> Result<Box<dyn Policy>, Failure> {
    Ok(match c.policy {
        PolicyKind::Deterministic => Box::new(DeterministicPolicy {
            timeout_factor: c.timeout_factor,
        }),
        PolicyKind::Llm => Box::new(LlmPolicy::from_config(c.llm.clone()).map_err(|e| usage(e.to_string()))?),
    })
}

pub fn run(cli: Cli) -> ExitCode {
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    let config = cli.effective_config()?;
    if cli.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    match &cli.command {
        None => Err(usage("no subcommand given (see --help)")),
        Some(Command::Analyze(a)) => analyze(cli, &config, a),
        Some(Command::Generate(g)) => generate_cmd(cli, g),
        Some(Command::Eval(e)) => eval_cmd(cli, &config, e),
        Some(Command::Memory { action }) => memory_cmd(&config, action),
        Some(Command::Replay { transcript }) => replay(transcript),
    }
}

const REQUIRED: [(&str, fn(&SourcePaths) -> bool); 5] = [
    ("traces.csv", |p| p.traces.is_some()),
    ("logs.csv", |p| p.logs.is_some()),
    ("metrics.csv", |p| p.metrics.is_some()),
    ("alerts.csv", |p| p.alerts.is_some()),
    ("topology.csv", |p| p.topology.is_some()),
];

fn analyze(cli: &Cli, config: &Config, args: &AnalyzeArgs) -> Outcome {
    let dir = cli.data_dir()?;
    let out = cli.out_dir()?;
    let paths = SourcePaths::from_dir(dir);
    for (name, present) in REQUIRED {
        if !present(&paths) {
            return Err(usage(format!("missing input file {}", dir.join(name).display())));
        }
    }
    let (store, counts) = ingest(&paths, SourceFormat::GenericCsv).map_err(|e| data(e.to_string()))?;
    let policy = build_policy(config)?;
    let cfg = config.analysis();
    // a persisted memory spans windows; otherwise each window starts empty
    let mut persisted = match &config.memory_path {
        Some(p) => Some(Memory::load_or_new(p, cfg.embedding_dim, cfg.alpha).map_err(|e| data(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let windows = match (args.window_start, args.window_end) {
        (Some(s), Some(e)) => {
            let inside = store.alerts().iter().filter(|a| a.timestamp >= s && a.timestamp <= e).cloned().collect();
            vec![AlertWindow::new(s, e, inside).map_err(|e| usage(e.to_string()))?]
        }
        _ => AlertWindow::detect(store.alerts(), cfg.window_ms),
    };

    let mut summary = format!(
        "# configuration\n{}\n# input\n{}: {} spans, {} traces, {} logs, {} metric samples, {} alerts\n\n",
        config.to_toml(),
        dir.display(),
        counts.spans,
        counts.traces,
        counts.logs,
        counts.metrics,
        counts.alerts
    );
    let mut alert_rows = String::from("window,alert_id,decision,similarity,policy_calls,agent_calls,top\n");
    let mut failed = Vec::new();
    let weights = cfg.consolidator();
    for (w, window) in windows.iter().enumerate() {
        let mut scratch = cfg.new_memory();
        let memory = persisted.as_mut().unwrap_or(&mut scratch);
        let report = analyze_window(window, &store, Some(memory), &*policy, &cfg);
        write(&out.join(format!("window-{w:03}.csv")), &report.ranking_csv())?;
        let c = report.counters();
        summary += &format!(
            "window {w} [{}, {}]: {} alerts, {} failed, {} policy calls\n",
            window.start,
            window.end,
            report.alerts.len(),
            report.failed.len(),
            c.policy
        );
        for (i, cand) in report.ranking.iter().take(5).enumerate() {
            summary += &format!("  {:>2}. {} {} {:.4}\n", i + 1, cand.level, cand.root_cause, cand.score);
        }
        for a in &report.alerts {
            alert_rows += &format!(
                "{w},{},{},{:.6},{},{},{}\n",
                a.alert_id,
                a.decision.kind.as_str(),
                a.decision.similarity,
                a.counters.policy,
                a.counters.agents(),
                a.ranking.top().map_or(String::new(), |t| format!("{}:{}", t.level, t.root_cause))
            );
            let stored = StoredAnalysis::new(a, weights);
            write(&out.join("transcripts").join(format!("{}.json", a.alert_id)), &stored.to_json())?;
            write(&out.join("rankings").join(format!("{}.csv", a.alert_id)), &a.ranking.to_csv())?;
            if let Some(e) = &a.save_error {
                eprintln!("warning: alert {} not saved to memory: {e}", a.alert_id);
            }
        }
        failed.extend(report.failed);
    }
    write(&out.join("alerts.csv"), &alert_rows)?;
    write(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    if let (Some(m), Some(p)) = (&persisted, &config.memory_path) {
        m.persist(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        let names: Vec<String> = failed.iter().map(|f| format!("{} ({})", f.alert_id, f.error)).collect();
        Err(data(format!("{} alert(s) failed: {}", failed.len(), names.join("; "))))
    }
}

fn generate_cmd(cli: &Cli, g: &GenerateArgs) -> Outcome {
    let out = cli.out_dir()?;
    let tune = |s: ScenarioSpec| ScenarioSpec {
        services: g.services.unwrap_or(s.services),
        layers: g.layers.unwrap_or(s.layers),
        fault_traces: g.fault_traces.unwrap_or(s.fault_traces),
        ..s
    };
    let specs: Vec<(PathBuf, ScenarioSpec)> = match g.corpus {
        Some(n) => corpus_specs(n, cli.seed)
            .into_iter()
            .enumerate()
            .map(|(i, s)| (out.join(format!("scenario-{i:03}")), tune(s)))
            .collect(),
        None => {
            let level = g.level.unwrap_or_else(|| g.fault.default_level());
            vec![(out.to_path_buf(), tune(ScenarioSpec::new(g.fault, level, cli.seed)))]
        }
    };
    let jitter = match g.jitter {
        Some(m) => Jitter::perturb_last(1, m),
        None => Jitter::exact(),
    };
    for (dir, spec) in specs {
        spec.validate().map_err(|e| usage(e.to_string()))?;
        let mut s = generate(&spec).map_err(|e| data(e.to_string()))?;
        if g.duplicates > 0 {
            s = duplicate_alerts(&s, g.duplicates, &jitter).map_err(|e| data(e.to_string()))?;
        }
        s.write(&dir).map_err(|e| data(e.to_string()))?;
        println!(
            "{}: {} {} at {} ({} alerts)",
            dir.display(),
            s.truth.fault_kind,
            s.truth.level,
            s.truth.component,
            s.records.alerts.len()
        );
    }
    Ok(())
}

/// Scenario directories under `dir`, or `dir` itself when it holds a truth file.
fn scenario_dirs(dir: &Path) -> Result<Vec<PathBuf>, Failure> {
    if dir.join(TRUTH_FILE).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = fs::read_dir(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join(TRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(usage(format!("{}: no scenario directories (none contain {TRUTH_FILE})", dir.display())));
    }
    Ok(dirs)
}

fn eval_cmd(cli: &Cli, config: &Config, e: &EvalArgs) -> Outcome {
    let dirs = scenario_dirs(cli.data_dir()?)?;
    let out = cli.out_dir()?;
    let mut corpus = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let (s, _) = Scenario::read(d).map_err(|e| data(e.to_string()))?;
        corpus.push(s);
    }
    let policy = build_policy(config)?;
    let bench = run_benchmark(&corpus, &config.analysis(), &*policy, e.memory_mode, e.matching);
    let io = |err: std::io::Error| data(format!("{}: {err}", out.display()));
    bench.write(out).map_err(io)?;
    bench.write_artifacts(out).map_err(io)?;
    print!("{}", bench.report.to_text());
    for f in &bench.report.failures {
        eprintln!("scenario {} alert {}: {}", dirs[f.scenario].display(), f.alert_id, f.error);
    }
    if bench.report.failures.is_empty() {
        Ok(())
    } else {
        Err(data(format!("{} failure(s)", bench.report.failures.len())))
    }
}

fn memory_cmd(config: &Config, action: &MemoryAction) -> Outcome {
    let path = config.memory_path.as_deref().ok_or_else(|| usage("--memory is required"))?;
    if !path.is_file() {
        return Err(usage(format!("memory file {} does not exist", path.display())));
    }
    let load = || Memory::load(path).map_err(|e| data(format!("{}: {e}", path.display())));
    match action {
        MemoryAction::List => {
            let m = load()?;
            println!("{} entries (dim {}, alpha {})", m.len(), m.dim(), m.alpha());
            for e in m.entries() {
                println!(
                    "{}  {}  t={}  nodes={}  steps={}",
                    e.fingerprint,
                    e.meta.alert_id,
                    e.meta.timestamp,
                    e.graph.nodes.len(),
                    e.transcript.len()
                );
            }
            Ok(())
        }
        MemoryAction::Show { alert_id } => {
            let m = load()?;
            let e = m.get(alert_id).ok_or_else(|| data(format!("no entry for alert {alert_id}")))?;
            println!("fingerprint {}\nstored at {}\n", e.fingerprint, e.meta.timestamp);
            print!("{}", e.transcript);
            Ok(())
        }
        MemoryAction::Verify => {
            let violations = verify_file(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
            if violations.is_empty() {
                println!("{}: ok", path.display());
                Ok(())
            } else {
                for v in &violations {
                    println!("{v}");
                }
                Err(data(format!("{}: {} violation(s)", path.display(), violations.len())))
            }
        }
    }
}

fn replay(path: &Path) -> Outcome {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let stored: StoredAnalysis =
        serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", path.display())))?;
    print!("{}", stored.transcript);
    println!(
        "\ndecision: {} (similarity {:.4})",
        stored.decision.kind.as_str(),
        stored.decision.similarity
    );
    let again = stored.recompute();
    print!("\nranking:\n{}", again.to_csv());
    if again == stored.ranking {
        println!("\nranking reproduced");
        Ok(())
    } else {
        Err(data(format!("{}: recomputed ranking differs from the stored one", path.display())))
    }
}
