use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use madroid_core::action::parse_action;
use madroid_core::agents::{coordinator_system_text, plan_task, AgentError, Templates};
use madroid_core::config::{CliConfig, Overrides};
use madroid_core::eval::evaluate;
use madroid_core::gateway::{BackendKind, Gateway, OracleBinding, Role, Transcript};
use madroid_core::orchestrator::{replay_transcript, run_dir, run_with_gateway, write_outputs, ReplayError};
use madroid_core::sim::{load_scenario, DeviceFarm, Scenario};
use madroid_core::{users, view};

const EXIT_OK: u8 = 0;
const EXIT_FAILED: u8 = 1;
const EXIT_INFRA: u8 = 2;

#[derive(Parser)]
#[command(name = "madroid", version, about = "Multi-agent testing of multi-user app features")]
struct Cli {
    /// TOML configuration file (flags and environment take precedence).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More logging (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one task against a scenario.
    Run {
        /// Task description; defaults to the scenario's own.
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        scenario: PathBuf,
        /// Name of the results subdirectory; defaults to the scenario name.
        #[arg(long)]
        task_id: Option<String>,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Ask the Coordinator for a plan and print it.
    Plan {
        #[arg(long)]
        task: String,
        /// Needed by the oracle backend only.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
    /// Run every task of a dataset and write report.json / report.csv.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Re-execute a transcript on a fresh farm and check the outcomes match.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
    },
    /// Drive a scenario by hand: lines of "<user> <action>", or "success?".
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Default)]
struct BackendArgs {
    /// remote, scripted, oracle or fault.
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long)]
    timeout: Option<u64>,
    #[arg(long)]
    max_retries: Option<u32>,
    /// Rule file for the scripted backend.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Backend wrapped by the fault backend (default oracle).
    #[arg(long)]
    inner: Option<BackendKind>,
    #[arg(long)]
    fault_user: Option<String>,
    #[arg(long)]
    fault_step: Option<usize>,
    #[arg(long)]
    fault_action: Option<String>,
}

#[derive(Args, Default)]
struct RunArgs {
    #[arg(long)]
    cadence: Option<usize>,
    #[arg(long)]
    max_actions_per_user: Option<usize>,
    #[arg(long)]
    max_total_actions: Option<usize>,
    #[arg(long)]
    max_restarts: Option<usize>,
    #[arg(long)]
    token_budget: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Results root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
}

fn overrides(b: &BackendArgs, r: &RunArgs) -> Overrides {
    Overrides {
        backend: b.backend,
        endpoint_url: b.endpoint.clone(),
        model_name: b.model.clone(),
        api_key_env: b.api_key_env.clone(),
        timeout_secs: b.timeout,
        max_retries: b.max_retries,
        script: b.script.clone(),
        inner: b.inner,
        fault_user: b.fault_user.clone(),
        fault_step: b.fault_step,
        fault_action: b.fault_action.clone(),
        observer_cadence: r.cadence,
        max_actions_per_user: r.max_actions_per_user,
        max_total_actions: r.max_total_actions,
        max_restarts: r.max_restarts,
        record_token_budget: r.token_budget,
        runs: r.runs,
        seed: r.seed,
        output_dir: r.out.clone(),
        templates: r.templates.clone(),
    }
}

/// A configuration or infrastructure problem: reported, exit 2.
struct Infra(String);

impl<E: std::fmt::Display> From<E> for Infra {
    fn from(e: E) -> Self {
        Infra(e.to_string())
    }
}

fn resolve(config: Option<&Path>, o: &Overrides) -> Result<CliConfig, Infra> {
    Ok(CliConfig::resolve(config, |k| std::env::var(k).ok(), o)?)
}

fn load(path: &Path) -> Result<Arc<Scenario>, Infra> {
    Ok(Arc::new(load_scenario(path)?))
}

fn cmd_run(
    cli_config: Option<&Path>,
    task: Option<String>,
    scenario_path: &Path,
    task_id: Option<String>,
    o: &Overrides,
) -> Result<u8, Infra> {
    let cfg = resolve(cli_config, o)?;
    let scenario = load(scenario_path)?;
    let task = task.unwrap_or_else(|| scenario.task_text());
    if task.trim().is_empty() {
        return Err(Infra("task text is empty".into()));
    }
    let templates = Templates::load(cfg.templates.as_deref())?;
    let binding = OracleBinding { scenario: Arc::clone(&scenario), seed: cfg.run.seed };
    let gateway = Gateway::new(&cfg.backend, Some(&binding))?;
    let mut result = run_with_gateway(&task, Arc::clone(&scenario), &gateway, &cfg.run, &templates)?;
    let task_id = task_id.unwrap_or_else(|| scenario.name.clone());
    write_outputs(&mut result, &run_dir(&cfg.output_dir, &task_id, 0))?;
    print!("{}", result.summary());
    if let Some(path) = &result.transcript_path {
        println!("transcript: {}", path.display());
    }
    Ok(match result.failure_reason {
        None => EXIT_OK,
        Some(madroid_core::orchestrator::FailureReason::InfraError) => {
            eprintln!("infrastructure error: {}", result.detail.as_deref().unwrap_or("unknown"));
            EXIT_INFRA
        }
        Some(_) => EXIT_FAILED,
    })
}

fn cmd_plan(
    cli_config: Option<&Path>,
    task: &str,
    scenario: Option<&Path>,
    templates: Option<&Path>,
    o: &Overrides,
) -> Result<u8, Infra> {
    if task.trim().is_empty() {
        return Err(Infra("task text is empty".into()));
    }
    let cfg = resolve(cli_config, o)?;
    let binding = match scenario {
        Some(p) => Some(OracleBinding { scenario: load(p)?, seed: cfg.run.seed }),
        None => None,
    };
    let gateway = Gateway::new(&cfg.backend, binding.as_ref())?;
    let templates = Templates::load(templates.or(cfg.templates.as_deref()))?;
    let mut session = gateway.open_session(Role::Coordinator, &coordinator_system_text(&templates)?);
    match plan_task(task, &mut session, &templates) {
        Ok(plan) => {
            println!("task: {}", plan.task);
            println!("users: {}", plan.user_count);
            println!("first: {}", plan.first_user);
            for s in &plan.sub_tasks {
                println!("{}: {}", s.user, s.text);
            }
            Ok(EXIT_OK)
        }
        Err(AgentError::Plan(e)) => {
            eprintln!("plan rejected: {e}");
            Ok(EXIT_FAILED)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_eval(cli_config: Option<&Path>, dataset: &Path, o: &Overrides) -> Result<u8, Infra> {
    let cfg = resolve(cli_config, o)?;
    if cfg.templates.is_some() {
        log::warn!("template overrides are not used by eval");
    }
    let report = evaluate(dataset, &cfg.backend, &cfg.run, Some(&cfg.output_dir))?;
    for t in &report.tasks {
        match &t.error {
            Some(e) => println!("{:<24} error: {e}", t.task_id),
            None => println!(
                "{:<24} success {:>5.1}%  similarity {:.3}",
                t.task_id,
                t.success_rate * 100.0,
                t.mean_similarity
            ),
        }
    }
    println!(
        "average success rate {:.1}%, average action similarity {:.3} over {} tasks",
        report.average_success_rate * 100.0,
        report.average_similarity,
        report.tasks.len()
    );
    println!("report: {}", cfg.output_dir.join("report.json").display());
    let all_failed = !report.tasks.is_empty() && report.tasks.iter().all(|t| t.infra_failed());
    Ok(if all_failed { EXIT_INFRA } else { EXIT_OK })
}

fn cmd_replay(path: &Path) -> Result<u8, Infra> {
    let transcript = Transcript::load(path).map_err(|e| Infra(format!("{}: {e}", path.display())))?;
    match replay_transcript(&transcript) {
        Ok(s) => {
            println!("replayed {} steps, {} restarts, success={}: no divergence", s.steps_executed, s.restarts, s.success);
            Ok(EXIT_OK)
        }
        Err(e @ ReplayError::Divergence { .. }) => {
            eprintln!("{e}");
            Ok(EXIT_FAILED)
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_simulate(path: &Path, seed: u64) -> Result<u8, Infra> {
    let mut farm = DeviceFarm::spawn(load(path)?, seed);
    let stdin = std::io::stdin();
    let mut out = std::io::stdout().lock();
    for line in stdin.lock().lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.eq_ignore_ascii_case("success?") {
            writeln!(out, "{}", farm.check_success())?;
            continue;
        }
        let (who, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let Some(user) = users::index_of(who).filter(|u| *u < farm.user_count()) else {
            eprintln!("unknown user {who:?} in line {line:?}");
            continue;
        };
        let action = match parse_action(rest) {
            Ok(a) => a,
            Err(e) => {
                eprintln!("{e}");
                continue;
            }
        };
        match farm.execute(user, &action) {
            Ok(outcome) => {
                writeln!(out, "step {} changed={}", farm.step(), outcome.changed)?;
                for note in &outcome.notes {
                    writeln!(out, "  {note}")?;
                }
                let tree = farm.screen_tree(user)?;
                writeln!(out, "{} on {}:", users::label(user), farm.screen_id(user).unwrap_or("?"))?;
                write!(out, "{}", view::serialize_prompt(&tree))?;
            }
            Err(e) => eprintln!("{e}"),
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let config = cli.config.as_deref();
    let outcome = match &cli.command {
        Command::Run { task, scenario, task_id, backend, run } => {
            cmd_run(config, task.clone(), scenario, task_id.clone(), &overrides(backend, run))
        }
        Command::Plan { task, scenario, backend, templates } => {
            cmd_plan(config, task, scenario.as_deref(), templates.as_deref(), &overrides(backend, &RunArgs::default()))
        }
        Command::Eval { dataset, backend, run } => cmd_eval(config, dataset, &overrides(backend, run)),
        Command::Replay { transcript } => cmd_replay(transcript),
        Command::Simulate { scenario, seed } => cmd_simulate(scenario, *seed),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Infra(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(EXIT_INFRA)
        }
    }
}
