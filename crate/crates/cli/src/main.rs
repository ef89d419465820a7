use std::error::Error;
use std::fs;
use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use remove_core::expert::{generate_demos, DemonstrationSet};
use remove_core::feedback::{interpret, Instruction, LanguageModel, LlmClient, LlmConfig, PromptTemplate};
use remove_core::gridworld::{AgentState, Grid, Pos};
use remove_core::observe::{ObsParams, ObservationKind};
use remove_core::par::Execution;
use remove_core::policy::{train_ensemble, train_mc_dropout, PolicyMode, TrainHyper};
use remove_core::runner::{format_table, load_scenarios, run_suite_with, write_outputs, EpisodeLog, RunConfig};
use remove_core::uncertainty::series_csv;
use remove_service::store::LogStore;
use remove_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "remove", version, about = "Uncertainty-gated grid navigation with language feedback")]
struct Cli {
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations on obstacle-free grids.
    Demos {
        #[arg(long, default_value_t = 10)]
        l: usize,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, value_parser = parse_kind, default_value = "goal-conditioned")]
        obs: ObservationKind,
        #[arg(long, default_value_t = 5)]
        lp: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy from a demonstration file.
    Train {
        #[arg(long)]
        demos: PathBuf,
        /// Must match the demonstrations' observation kind.
        #[arg(long, value_parser = parse_kind)]
        obs: ObservationKind,
        #[arg(long = "K", default_value_t = 10)]
        k: usize,
        #[arg(long, value_enum, default_value_t = Mode::Ensemble)]
        mode: Mode,
        /// Stochastic passes per prediction in mc-dropout mode.
        #[arg(long = "M", default_value_t = 20)]
        m: usize,
        #[arg(long, default_value_t = 0.1)]
        dropout: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn an instruction into action codes.
    Interpret {
        #[arg(long)]
        text: String,
        /// Fall back to the chat model for text outside the grammar.
        #[arg(long)]
        llm: bool,
        /// Run config supplying the `[llm]` block and prompt template.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a seeded suite and write logs, CSV and table.
    RunSuite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also append the logs to this episode store.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Render a scenario as a 100x100 graymap.
    Render {
        /// Bundled scenario name or scenario file.
        #[arg(long)]
        scenario: String,
        /// Agent position `row,col`; defaults to the start.
        #[arg(long, value_parser = parse_pos)]
        at: Option<Pos>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the uncertainty series of one logged episode as CSV.
    Series {
        #[arg(long)]
        log: PathBuf,
        /// Zero-based line in the JSONL file.
        #[arg(long, default_value_t = 0)]
        line: usize,
    },
    /// Serve sessions over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "store")]
        store: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Ensemble,
    McDropout,
}

fn parse_kind(s: &str) -> Result<ObservationKind, String> {
    ObservationKind::parse(s)
        .ok_or_else(|| format!("unknown observation kind {s:?} (global, goal, partial, visual, costmap)"))
}

fn parse_pos(s: &str) -> Result<Pos, String> {
    let (r, c) = s.split_once(',').ok_or("expected row,col")?;
    Ok(Pos::new(r.trim().parse().map_err(|e| format!("{e}"))?, c.trim().parse().map_err(|e| format!("{e}"))?))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match run(cli.command, exec) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, exec: Execution) -> Result<ExitCode, Box<dyn Error>> {
    match command {
        Command::Demos { l, n, obs, lp, seed, out } => {
            let demos = generate_demos(l, n, &ObsParams::new(obs, lp), seed, exec)?;
            demos.save(&out)?;
            println!("{} trajectories, {} samples -> {}", demos.trajectories.len(), demos.num_samples(), out.display());
        }
        Command::Train { demos, obs, k, mode, m, dropout, seed, out } => {
            let demos = DemonstrationSet::load(&demos)?;
            if demos.kind() != obs {
                return Err(format!("demonstrations hold {:?} observations, not {obs:?}", demos.kind()).into());
            }
            let (policy, reports) = match mode {
                Mode::Ensemble => train_ensemble(&demos, k, seed, &TrainHyper::default(), exec)?,
                Mode::McDropout => {
                    let hyper = TrainHyper { dropout, ..Default::default() };
                    let (p, r) = train_mc_dropout(&demos, m, seed, &hyper)?;
                    (p, vec![r])
                }
            };
            policy.save(&out)?;
            for (i, r) in reports.iter().enumerate() {
                println!("member {i}: nll {:.4} -> {:.4} on {} samples", r.initial_nll, r.final_nll, r.samples);
            }
            let label = if policy.mode() == PolicyMode::Ensemble { "members" } else { "passes" };
            println!("{} {label} -> {}", policy.k().max(policy.mc_samples()), out.display());
        }
        Command::Interpret { text, llm, config } => {
            let config = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let client = llm.then(|| LlmClient::new(config.llm.clone().unwrap_or_else(LlmConfig::default)));
            let instr = Instruction::operator(text)?;
            let template: &PromptTemplate = &config.prompt;
            match interpret(&instr, template, client.as_ref().map(|c| c as &dyn LanguageModel)) {
                Ok(seq) => println!("{}", serde_json::to_string(&seq.codes())?),
                Err(e) => {
                    eprintln!("{}", serde_json::to_string(&e)?);
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(2));
                }
            }
        }
        Command::RunSuite { config, out, store } => {
            let config = RunConfig::load(&config)?;
            let (report, logs) = run_suite_with(&config, exec)?;
            write_outputs(&out, &report, &logs)?;
            if let Some(dir) = store {
                let mut store = LogStore::open(dir)?;
                let name = out.file_name().and_then(|n| n.to_str()).unwrap_or("suite");
                let suite: String =
                    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
                for log in &logs {
                    store.append(&suite, log)?;
                }
            }
            print!("{}", format_table(&report));
        }
        Command::Render { scenario, at, out } => {
            let spec = load_scenarios(&[scenario])?.remove(0);
            let grid = Grid::build(&spec)?;
            let image = grid.render(&AgentState::at(at.unwrap_or(grid.start())))?;
            fs::write(&out, image.to_pgm())?;
        }
        Command::Series { log, line } => {
            let reader = BufReader::new(fs::File::open(&log)?);
            let text = reader.lines().nth(line).ok_or_else(|| format!("{} has no line {line}", log.display()))??;
            let log: EpisodeLog = serde_json::from_str(&text)?;
            let records: Vec<_> = log.steps.iter().filter_map(|s| s.uncertainty.clone()).collect();
            print!("{}", series_csv(&records));
        }
        Command::Serve { addr, store } => {
            tracing_subscriber::fmt().with_writer(std::io::stderr).init();
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(remove_service::serve(addr, ServiceConfig { store_dir: store }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
