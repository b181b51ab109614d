use std::fs;
use std::io::{self, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use asap::config::{load_config, save_config};
use asap::driver::{run_policy, Policy, RunConfig, Trace};
use asap::environment::{make_aligned_suite, make_shifting_suite, SuiteSpec};
use asap::protocol::{serve, ServeOptions, SessionDefaults, SessionOutcome};
use asap::trace::audit;
use asap::Error;

#[derive(Parser)]
#[command(name = "asap", version, about = "Bandit scheduling of auxiliary tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the UCB scheduler on a synthetic suite and write its trace.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a reference policy on the same suite.
    Baseline {
        #[arg(long)]
        config: PathBuf,
        /// ucb, uniform_random, round_robin, fixed_best_initial or all_mixed.
        #[arg(long)]
        policy: Policy,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Serve one sidecar session to an external trainer.
    Serve {
        #[arg(long, conflicts_with = "listen", required_unless_present = "listen")]
        stdio: bool,
        /// Address to accept a single TCP connection on, e.g. 127.0.0.1:7070.
        #[arg(long)]
        listen: Option<String>,
        /// Supplies beta, the alpha schedule, pm evaluation and normalization.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Rewritten with the policy state after every completed turn.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Written when the session ends.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Audit a trace by recomputing every logged decision.
    Replay {
        #[arg(long)]
        trace: PathBuf,
    },
    /// Generate a synthetic suite configuration with a known alignment pattern.
    Suite {
        #[arg(long, value_enum, default_value_t = SuiteName::Aligned)]
        name: SuiteName,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        arms: usize,
        #[arg(long)]
        cos: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        aligned_index: usize,
        #[arg(long, default_value_t = 500)]
        horizon: u64,
        /// Shifting suite: arm that becomes aligned.
        #[arg(long)]
        new_index: Option<usize>,
        /// Shifting suite: turn at which the alignment moves.
        #[arg(long)]
        switch_turn: Option<u64>,
        #[arg(long)]
        emit: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteName {
    Aligned,
    Shifting,
}

enum Failure {
    Usage(Error),
    Runtime(Error),
    Audit(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Construction(_) => Failure::Usage(e),
            other => Failure::Runtime(other),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ASAP_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("asap: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("asap: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Audit(msg)) => {
            eprintln!("asap: {msg}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, Failure> {
    match command {
        Command::Run { config, out, seed } => {
            let cfg = synthetic_config(&config, seed)?;
            execute(&cfg, Policy::Ucb, Some(&out))
        }
        Command::Baseline {
            config,
            policy,
            out,
            seed,
        } => {
            let cfg = synthetic_config(&config, seed)?;
            execute(&cfg, policy, out.as_deref())
        }
        Command::Serve {
            stdio,
            listen,
            config,
            checkpoint,
            trace,
        } => {
            let defaults = match &config {
                Some(path) => SessionDefaults::from(&load_config(path)?),
                None => SessionDefaults::default(),
            };
            let options = ServeOptions {
                checkpoint_path: checkpoint,
                trace_path: trace,
            };
            let outcome = if stdio {
                let stdin = io::stdin().lock();
                serve(stdin, io::stdout().lock(), defaults, &options)?.0
            } else {
                let addr = listen.expect("clap requires --listen without --stdio");
                let listener = TcpListener::bind(&addr).map_err(|e| Error::io(&addr, e))?;
                let local = listener.local_addr().map_err(|e| Error::io(&addr, e))?;
                eprintln!("listening on {local}");
                let (stream, peer) = listener.accept().map_err(|e| Error::io(&addr, e))?;
                log::info!("session from {peer}");
                let reader = BufReader::new(stream.try_clone().map_err(|e| Error::io(&addr, e))?);
                serve(reader, stream, defaults, &options)?.0
            };
            Ok(match outcome {
                SessionOutcome::Completed => ExitCode::SUCCESS,
                SessionOutcome::Rejected { code } => {
                    eprintln!("asap: session ended with {code} error");
                    ExitCode::from(1)
                }
                SessionOutcome::Disconnected => {
                    eprintln!("asap: client disconnected before shutdown");
                    ExitCode::from(1)
                }
            })
        }
        Command::Replay { trace } => {
            let report = audit(&trace)?;
            if let Some(first) = report.findings.first() {
                for f in &report.findings {
                    eprintln!("{f}");
                }
                let at = match first.turn {
                    Some(t) => format!("turn {t}"),
                    None => "file level".to_string(),
                };
                return Err(Failure::Audit(format!(
                    "replay mismatch at {at} ({} findings)",
                    report.findings.len()
                )));
            }
            println!(
                "replay ok: {} turns verified{}",
                report.turns,
                if report.resimulated { ", re-simulated" } else { "" }
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Suite {
            name,
            dim,
            arms,
            cos,
            seed,
            aligned_index,
            horizon,
            new_index,
            switch_turn,
            emit,
        } => {
            let spec = SuiteSpec {
                dim,
                num_aux: arms,
                aligned_index,
                alignment_cos: cos,
                seed,
            };
            let (env, certificate) = match name {
                SuiteName::Aligned => make_aligned_suite(spec)?,
                SuiteName::Shifting => {
                    let new_index = new_index
                        .ok_or_else(|| Error::Config("shifting suite needs --new-index".into()))?;
                    make_shifting_suite(spec, new_index, switch_turn.unwrap_or(horizon / 2))?
                }
            };
            let mut run = RunConfig::synthetic(horizon, env);
            run.seed = seed;
            save_config(&emit, &run)?;
            let cert_path = certificate_path(&emit);
            let text = serde_json::to_string_pretty(&certificate).expect("certificate serializes");
            fs::write(&cert_path, text).map_err(|e| Error::io(&cert_path, e))?;
            println!("wrote {} and {}", emit.display(), cert_path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn certificate_path(config: &Path) -> PathBuf {
    config.with_extension("certificate.json")
}

fn synthetic_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, Failure> {
    let mut cfg = load_config(path)?;
    if cfg.environment.is_none() {
        return Err(Failure::Usage(Error::Config(format!(
            "{} has no [run.environment]; external trainers use `asap serve`",
            path.display()
        ))));
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn execute(cfg: &RunConfig, policy: Policy, out: Option<&Path>) -> Result<ExitCode, Failure> {
    let mut cfg = cfg.clone();
    cfg.trace_path = match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(dir.join(format!("{}.csv", policy.name())))
        }
        None => None,
    };
    let trace = match run_policy(&cfg, policy) {
        Ok(t) => t,
        Err(e) => {
            if let Some(path) = &cfg.trace_path {
                eprintln!("asap: partial trace in {}", path.display());
            }
            return Err(e.into());
        }
    };
    summarize(&trace);
    if let Some(path) = &cfg.trace_path {
        println!("trace: {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn summarize(trace: &Trace) {
    println!("policy: {}", trace.policy);
    println!("turns: {}", trace.records.len());
    if let Some(loss) = trace.final_target_loss() {
        println!("final target loss: {loss:.6e}");
    }
    let counts = trace.selection_counts();
    let shown: Vec<String> = counts.iter().map(u64::to_string).collect();
    println!("selections: [{}]", shown.join(", "));
}
