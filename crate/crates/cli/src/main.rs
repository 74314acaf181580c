use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::RwLock;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use clinicsim_core::domain::{Ontology, Split};
use clinicsim_core::eval::experiment::{collect_summaries, load_backend_file, RunManifest};
use clinicsim_core::eval::fixtures::{generate_fixtures, write_fixture_bundle, FixtureOptions};
use clinicsim_core::eval::report::{emit_report, render_text};
use clinicsim_core::eval::{run_matrix, ExperimentConfig, MemoryVariant, RunConfig, Runtime, Scenario};
use clinicsim_core::memory::MemoryStore;
use clinicsim_core::session::{run_session, write_session_log, SessionOutcome, Setting};

#[derive(Parser)]
#[command(name = "clinicsim", version, about = "Simulated psychiatric consultations with layered memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MemoryArg {
    None,
    Emr,
    Skills,
    Both,
}

impl From<MemoryArg> for MemoryVariant {
    fn from(m: MemoryArg) -> Self {
        match m {
            MemoryArg::None => MemoryVariant::None,
            MemoryArg::Emr => MemoryVariant::Emr,
            MemoryArg::Skills => MemoryVariant::Skills,
            MemoryArg::Both => MemoryVariant::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Simulated,
    Original,
}

/// Overrides shared by `run` and `session`.
#[derive(Args)]
struct Overrides {
    /// Run file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seed; repeat to run several. Replaces the seeds in the run file.
    #[arg(long)]
    seed: Vec<u64>,
    /// TOML file holding a backend table that replaces the run file's.
    #[arg(long)]
    backend: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Force the tracking plugin on.
    #[arg(long, conflicts_with = "no_plugin")]
    plugin: bool,
    /// Force the tracking plugin off.
    #[arg(long)]
    no_plugin: bool,
    #[arg(long, value_enum)]
    memory: Option<MemoryArg>,
}

impl Overrides {
    fn plugin(&self) -> Option<bool> {
        match (self.plugin, self.no_plugin) {
            (true, _) => Some(true),
            (_, true) => Some(false),
            _ => None,
        }
    }

    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        let base = self.config.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        if let Some(path) = &self.backend {
            cfg.backend = load_backend_file(path)?;
        }
        if !self.seed.is_empty() {
            cfg.run.seeds = self.seed.clone();
            for e in &mut cfg.experiment {
                e.seeds.clear();
            }
        }
        if let Some(c) = self.concurrency {
            cfg.run.concurrency = c;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment matrix described by a run file.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one case and print everything it produced.
    Session {
        case_id: String,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_enum, default_value = "simulated")]
        scenario: ScenarioArg,
        /// Memory snapshot to start from; empty memory otherwise.
        #[arg(long)]
        memory_snapshot: Option<PathBuf>,
        /// Also write the session log and final memory here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic case bundle with a matching backend script.
    Fixtures {
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        n_train: u64,
        #[arg(long, default_value_t = 132, value_parser = clap::value_parser!(u64).range(1..))]
        n_test: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild the reports of a finished run from its metrics files.
    Report {
        /// Directory written by `run`.
        run_dir: PathBuf,
        /// Where to write the reports; defaults to the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("CLINICSIM_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run { overrides, out } => cmd_run(&overrides, &out),
        Command::Session {
            case_id,
            overrides,
            scenario,
            memory_snapshot,
            out,
        } => cmd_session(&case_id, &overrides, scenario, memory_snapshot.as_deref(), out.as_deref()),
        Command::Fixtures {
            n_train,
            n_test,
            seed,
            out,
        } => cmd_fixtures(n_train as usize, n_test as usize, seed, &out),
        Command::Report { run_dir, out } => cmd_report(&run_dir, out.as_deref()),
    }
}

fn cmd_run(o: &Overrides, out: &Path) -> Result<()> {
    let mut cfg = o.load()?;
    let mut exps = cfg.experiments();
    if let Some(m) = o.memory {
        let m = MemoryVariant::from(m);
        exps.retain(|e| e.memory == m);
    }
    if let Some(p) = o.plugin() {
        exps.retain(|e| e.plugin == p);
    }
    if exps.is_empty() {
        bail!("no experiment matches the --memory/--plugin filters");
    }
    cfg.experiment = exps;
    let manifest = RunManifest::new(&o.config, &cfg, out);
    let rt = Runtime::new(cfg)?;
    manifest.write(out)?;
    let summaries = run_matrix(&rt, out)?;
    print!("{}", render_text(&summaries));
    Ok(())
}

fn cmd_session(
    case_id: &str,
    o: &Overrides,
    scenario: ScenarioArg,
    snapshot: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = o.load()?;
    let seed = cfg.run.seeds[0];
    let rt = Runtime::new(cfg)?;
    let case = rt.find_case(case_id)?;
    let setting = match case.split {
        Split::Train => Setting::Quiz,
        Split::Test => Setting::Exam,
    };
    let scenario = match scenario {
        ScenarioArg::Simulated => Scenario::SimulatedDialogue,
        ScenarioArg::Original => Scenario::OriginalDialogue,
    };
    let memory = o.memory.map(MemoryVariant::from).unwrap_or(MemoryVariant::Both);
    let exp = ExperimentConfig::new(scenario, setting, memory, o.plugin().unwrap_or(true));
    let config = rt.config.session_config(&exp, seed);
    let store = match snapshot {
        Some(p) => MemoryStore::restore(p)?,
        None => MemoryStore::new(),
    };
    let store = RwLock::new(store);
    let outcome = run_session(&case, &config, &store, rt.session_env())?;
    print_outcome(&outcome, store.read().expect("store lock").len());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        write_session_log(&dir.join("session.jsonl"), std::slice::from_ref(&outcome))?;
        store.read().expect("store lock").snapshot(&dir.join("memory.json"))?;
    }
    if let Some(e) = &outcome.error {
        bail!("session failed: {e}");
    }
    Ok(())
}

fn print_outcome(o: &SessionOutcome, memory_nodes: usize) {
    println!("case {} (session seed {})", o.case_id, o.session_seed);
    println!();
    let mut marks = o.transcript.stage_marks.iter().peekable();
    let mut instructions = o.instructions.iter().peekable();
    for u in &o.transcript.utterances {
        while let Some(m) = marks.next_if(|m| m.turn_index == u.turn_index) {
            println!("== stage {} ==", m.stage);
        }
        while let Some(r) = instructions.next_if(|r| r.turn_index == u.turn_index) {
            let focus: Vec<&str> = r.instruction.focus_symptoms.iter().map(|s| s.as_str()).collect();
            println!(
                "   [instruction] {:?} focus=[{}] {}",
                r.instruction.stage_directive,
                focus.join(", "),
                r.instruction.guidance_text
            );
        }
        println!("{:>3} {}: {}", u.turn_index, u.speaker.label(), u.text);
    }
    for r in &o.retrievals {
        if !r.node_ids.is_empty() {
            let ids: Vec<String> = r.node_ids.iter().map(ToString::to_string).collect();
            println!("retrieved {:?}@{}: {}", r.phase, r.at, ids.join(" "));
        }
    }
    println!();
    for a in &o.attempts {
        let d = &a.diagnosis;
        println!(
            "attempt {}: depression={} suicide={} correct={}",
            a.attempt_index,
            d.depression_risk.as_str(),
            d.suicide_risk.as_str(),
            a.correct
        );
        for (i, v) in a.votes.samples.iter().enumerate() {
            println!("  vote {i}: depression={} suicide={}", v.depression_risk.as_str(), v.suicide_risk.as_str());
        }
        for f in &a.votes.parse_failures {
            println!("  unparsed sample: {f:?}");
        }
        if !a.retrieved_node_ids.is_empty() {
            let ids: Vec<String> = a.retrieved_node_ids.iter().map(ToString::to_string).collect();
            println!("  memory: {}", ids.join(" "));
        }
    }
    if let Some(s) = &o.skill {
        println!();
        println!("skill: {}", s.text.trim());
    }
    println!();
    println!("memory nodes after session: {memory_nodes}");
    if let Some(e) = &o.error {
        println!("error: {e}");
    }
}

fn cmd_fixtures(n_train: usize, n_test: usize, seed: u64, out: &Path) -> Result<()> {
    let opts = FixtureOptions {
        n_train,
        n_test,
        seed,
        ..FixtureOptions::default()
    };
    let bundle = generate_fixtures(&opts, &Ontology::default())?;
    write_fixture_bundle(&bundle, &opts, out)?;
    println!(
        "wrote {} train and {} test cases to {}",
        bundle.train.len(),
        bundle.test.len(),
        out.display()
    );
    Ok(())
}

fn cmd_report(run_dir: &Path, out: Option<&Path>) -> Result<()> {
    let echo = run_dir.join("config.toml");
    let cfg = RunConfig::load(&echo).with_context(|| format!("{} is not a run directory", run_dir.display()))?;
    let summaries = collect_summaries(&cfg, run_dir)?;
    let out = out.unwrap_or(run_dir);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    emit_report(&summaries, out)?;
    print!("{}", render_text(&summaries));
    Ok(())
}
