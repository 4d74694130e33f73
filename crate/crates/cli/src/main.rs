use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use gibbsnet::bounds::verify_lemmas;
use gibbsnet::config::{echo, parse_config};
use gibbsnet::exec::{set_worker_threads, Execution};
use gibbsnet::harness::{evaluate_bound, run_cell_full, validate_assumptions, write_json, SUB_GAMMA_MAX_ORDER};
use gibbsnet::network::ArchitectureFile;
use gibbsnet::risk::{misclassification_excess, sign_label};
use gibbsnet::sampler::{posterior_predict_mean, save_draws};
use gibbsnet::synthesis::{validate_sub_gamma, NoiseModel};
use gibbsnet::{run_sweep, Error, SweepPlan, SweepTask};

#[derive(Parser)]
#[command(name = "gibbsnet", version, about = "Gibbs-posterior deep network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment plan (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for every file the command writes.
    #[arg(long, global = true, default_value = "gibbsnet-out")]
    out: PathBuf,
    /// Overrides the plan's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// -v for progress, -vv for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one regression or classification cell and save data, draws and predictions.
    Simulate,
    /// Run the plan's n-sweep and fit the rate exponent.
    Sweep,
    /// Evaluate the PAC-Bayes bound against held-out risk for one cell.
    Bound,
    /// Run the numerical lemma checks.
    VerifyLemmas,
    /// Fit a classification cell and report labels and 0-1 excess risk.
    Classify,
    /// Check the noise and margin assumptions of a plan (or of the shipped defaults).
    ValidateAssumptions,
}

enum Failure {
    /// Bad input, or a check that did not pass.
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Format(_) => Failure::Runtime(e.to_string()),
            _ => Failure::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Failure::Validation("--jobs must be at least 1".into()));
        }
        set_worker_threads(j)?;
    }
    let exec = Execution::Parallel;
    match cli.command {
        Command::Simulate => simulate(&load_plan(cli)?, &cli.out, exec),
        Command::Sweep => sweep(&load_plan(cli)?, &cli.out, exec),
        Command::Bound => bound(&load_plan(cli)?, &cli.out, exec),
        Command::Classify => classify(&load_plan(cli)?, &cli.out, exec),
        Command::VerifyLemmas => {
            let seed = match (&cli.config, cli.seed) {
                (_, Some(s)) => s,
                (Some(_), None) => load_plan(cli)?.master_seed,
                (None, None) => 0,
            };
            lemmas(seed, &cli.out, exec)
        }
        Command::ValidateAssumptions => match cli.config {
            Some(_) => assumptions(&load_plan(cli)?, &cli.out, exec),
            None => default_assumptions(cli.seed.unwrap_or(0), &cli.out, exec),
        },
    }
}

fn load_plan(cli: &Cli) -> Result<SweepPlan, Failure> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Failure::Validation("this command needs --config <plan.toml>".into()))?;
    let mut plan = parse_config(path)?;
    if let Some(s) = cli.seed {
        plan.master_seed = s;
    }
    fs::create_dir_all(&cli.out)?;
    fs::write(cli.out.join("config.echo.toml"), echo(&plan)?)?;
    Ok(plan)
}

fn write_meta(out: &Path, command: &str) -> Outcome {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = serde_json::json!({
        "generator": concat!("gibbsnet ", env!("CARGO_PKG_VERSION")),
        "command": command,
        "finished_unix_s": now,
    });
    write_json(&out.join("meta.json"), &meta)?;
    Ok(())
}

fn announce(path: &Path) {
    println!("{}", path.display());
}

fn simulate(plan: &SweepPlan, out: &Path, exec: Execution) -> Outcome {
    let n = plan.single_n();
    log::info!("simulating {} at n = {n}", plan.task.name());
    let run = run_cell_full(plan, n, 0, exec)?;
    fs::create_dir_all(out)?;
    run.data.save(out, "data")?;
    let arch = ArchitectureFile::new(run.network.arch(), plan.prior.bound(), run.network.clamp());
    fs::write(out.join("architecture.json"), arch.to_json())?;
    save_draws(&out.join("draws"), &run.draws)?;

    let preds = posterior_predict_mean(&run.network, &run.draws, &run.data.x)?;
    let path = out.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = (1..=run.data.dim()).map(|j| format!("x{j}")).collect();
    header.extend(["y".into(), "posterior_mean".into()]);
    w.write_record(&header)?;
    for (i, p) in preds.iter().enumerate() {
        let mut row: Vec<String> = run.data.x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(run.data.y[i].to_string());
        row.push(p.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    write_json(&out.join("report.json"), &run.report)?;
    write_meta(out, "simulate")?;
    for f in ["data.csv", "predictions.csv", "report.json"] {
        announce(&out.join(f));
    }
    if !run.report.usable {
        return Err(Failure::Runtime("sampler failure: the cell is unusable".into()));
    }
    Ok(())
}

fn sweep(plan: &SweepPlan, out: &Path, exec: Execution) -> Outcome {
    let outcome = run_sweep(plan, Some(out), exec)?;
    for p in [&outcome.csv_path, &outcome.json_path].into_iter().flatten() {
        announce(p);
    }
    let s = &outcome.summary;
    if let Some(fit) = &s.fit {
        log::info!(
            "fitted exponent {:.3} ± {:.3} (theory {:.3})",
            fit.exponent,
            fit.stderr,
            fit.theory_exponent
        );
    }
    if s.failed {
        return Err(Failure::Runtime(format!(
            "sweep failed: only {} of {} cells usable",
            s.usable_cells, s.total_cells
        )));
    }
    Ok(())
}

fn bound(plan: &SweepPlan, out: &Path, exec: Execution) -> Outcome {
    let report = evaluate_bound(plan, plan.single_n(), 0, exec)?;
    let path = out.join("bound.json");
    write_json(&path, &report)?;
    write_meta(out, "bound")?;
    announce(&path);
    if !report.holds {
        return Err(Failure::Validation(format!(
            "bound {:.4} is below the held-out risk {:.4}",
            report.bound.value, report.held_out_risk.value
        )));
    }
    Ok(())
}

fn classify(plan: &SweepPlan, out: &Path, exec: Execution) -> Outcome {
    if plan.task == SweepTask::Regression {
        return Err(Failure::Validation("classify needs a classification plan".into()));
    }
    let run = run_cell_full(plan, plan.single_n(), 0, exec)?;
    let excess = misclassification_excess(&run.network, &run.draws, &run.target, plan.mc_n, plan.cell_seed(plan.single_n(), 0), exec)?;
    fs::create_dir_all(out)?;
    let path = out.join("predictions.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = (1..=run.data.dim()).map(|j| format!("x{j}")).collect();
    header.extend(["y".into(), "posterior_mean_logit".into(), "plug_in".into(), "majority_vote".into()]);
    w.write_record(&header)?;
    let means = posterior_predict_mean(&run.network, &run.draws, &run.data.x)?;
    let mut votes = vec![0.0; run.data.len()];
    for th in &run.draws {
        for (v, u) in votes.iter_mut().zip(run.network.forward_batch(th, &run.data.x)?) {
            *v += sign_label(u);
        }
    }
    for i in 0..run.data.len() {
        let mut row: Vec<String> = run.data.x.row(i).iter().map(|v| v.to_string()).collect();
        row.push(run.data.y[i].to_string());
        row.push(means[i].to_string());
        row.push(sign_label(means[i]).to_string());
        row.push(sign_label(votes[i]).to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    let report = serde_json::json!({ "cell": run.report, "misclassification_excess": excess });
    let rpath = out.join("report.json");
    write_json(&rpath, &report)?;
    write_meta(out, "classify")?;
    announce(&path);
    announce(&rpath);
    Ok(())
}

fn lemmas(seed: u64, out: &Path, exec: Execution) -> Outcome {
    let reports = verify_lemmas(seed, exec)?;
    fs::create_dir_all(out)?;
    let path = out.join("lemmas.json");
    write_json(&path, &reports)?;
    write_meta(out, "verify-lemmas")?;
    announce(&path);
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.check_name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Failure::Validation(format!("lemma checks failed: {}", failed.join(", "))));
    }
    Ok(())
}

const ASSUMPTION_MC_N: usize = 1_000_000;

fn assumptions(plan: &SweepPlan, out: &Path, exec: Execution) -> Outcome {
    let report = validate_assumptions(plan, ASSUMPTION_MC_N, exec)?;
    let path = out.join("assumptions.json");
    write_json(&path, &report)?;
    write_meta(out, "validate-assumptions")?;
    announce(&path);
    if !report.pass {
        return Err(Failure::Validation("assumption checks failed".into()));
    }
    Ok(())
}

/// Shipped noise defaults must pass; the Student-t control must fail.
fn default_assumptions(seed: u64, out: &Path, exec: Execution) -> Outcome {
    let mut models = NoiseModel::defaults();
    models.push(NoiseModel::StudentT { df: 3.0 });
    let mut reports = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let (sigma, varsigma) = m.declared_sub_gamma();
        let seed = gibbsnet::exec::split_seed(seed, i as u64);
        reports.push(validate_sub_gamma(m, sigma, varsigma, SUB_GAMMA_MAX_ORDER, ASSUMPTION_MC_N, seed, exec)?);
    }
    fs::create_dir_all(out)?;
    let path = out.join("assumptions.json");
    write_json(&path, &reports)?;
    write_meta(out, "validate-assumptions")?;
    announce(&path);
    let (controls, shipped): (Vec<_>, Vec<_>) = reports.iter().partition(|r| matches!(r.noise, NoiseModel::StudentT { .. }));
    if shipped.iter().any(|r| !r.pass) || controls.iter().any(|r| r.pass) {
        return Err(Failure::Validation("sub-Gamma validation did not separate defaults from the heavy-tailed control".into()));
    }
    Ok(())
}
