use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use netjump::designer::{read_schedule, write_schedule, FixedPointSystem, GainSchedule, JumpOperator};
use netjump::exec::Execution;
use netjump::experiment::{
    current_trace, design_strategies, evaluate_rho, grouping_for, parse_config, parse_config_str, run_experiment,
    summary, write_sweep_csv, ExperimentConfig, ExperimentReport, StrategySpec, SEC5_EXAMPLE,
};
use netjump::model::build_augmented;
use netjump::outcome_chain::OutcomeChain;
use netjump::simulator::{make_inputs, monte_carlo, run_observer, sample_network, write_trajectory_csv, InputSignal};
use netjump::{Error, Result};

/// Jump observers for networked systems with delays and dropouts.
#[derive(Parser)]
#[command(name = "netjump", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize gain schedules and write them as text files.
    Design(Common),
    /// Simulate plant, network and observer; write a trajectory and per-state statistics.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Use this schedule instead of designing one.
        #[arg(long)]
        schedule: Option<PathBuf>,
    },
    /// Design, verify and compare against the Kalman filter at one rho.
    Evaluate(Common),
    /// Evaluate every strategy over a rho grid.
    Sweep(Common),
    /// Build the outcome chain and dump states, transition matrix and availability map.
    ValidateChain(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML). Defaults to the bundled two-sensor example.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory. Defaults to the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte-Carlo seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte-Carlo runs.
    #[arg(long)]
    runs: Option<usize>,
    /// S1..S5 or custom:<grouping file>; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    /// rho values: `0.25`, `0,0.25,0.5` or `start:step:stop`.
    #[arg(long)]
    rho: Option<String>,
}

struct Setup {
    config: ExperimentConfig,
    base: PathBuf,
    out: PathBuf,
    specs: Vec<StrategySpec>,
    rho: Vec<f64>,
}

fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |m: String| Error::Config {
        key: "--rho".into(),
        message: m,
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [start, step, stop] => {
            let (start, step, stop) = (num(start)?, num(step)?, num(stop)?);
            if !(step > 0.0) || stop < start {
                return Err(bad("need step > 0 and stop >= start".into()));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|k| start + k as f64 * step).collect())
        }
        [_] => text.split(',').map(num).collect(),
        _ => Err(bad(format!("cannot parse grid `{text}`"))),
    }
}

impl Common {
    fn setup(&self) -> Result<Setup> {
        let (mut config, base) = match &self.config {
            Some(path) => (parse_config(path)?, path.parent().unwrap_or(Path::new(".")).to_path_buf()),
            None => (
                parse_config_str(SEC5_EXAMPLE, "sec5_example.toml", Path::new("."))?,
                PathBuf::from("."),
            ),
        };
        if let Some(seed) = self.seed {
            config.monte_carlo.seed = seed;
        }
        if let Some(runs) = self.runs {
            if runs < 2 {
                return Err(Error::Config {
                    key: "--runs".into(),
                    message: "need at least 2 runs".into(),
                });
            }
            config.monte_carlo.runs = runs;
        }
        if !self.strategy.is_empty() {
            config.design.strategies = self.strategy.clone();
        }
        let specs = config.strategies(&base)?;
        for spec in &specs {
            if let StrategySpec::Custom(path) = spec {
                if !path.is_file() {
                    return Err(Error::Config {
                        key: "--strategy".into(),
                        message: format!("grouping file {} does not exist", path.display()),
                    });
                }
            }
        }
        let rho = match &self.rho {
            Some(grid) => parse_grid(grid)?,
            None => config.sweep.rho.clone(),
        };
        if rho.is_empty() {
            return Err(Error::Config {
                key: "--rho".into(),
                message: "empty grid".into(),
            });
        }
        let out = self.out.clone().unwrap_or_else(|| base.join(&config.output.dir));
        fs::create_dir_all(&out)?;
        Ok(Setup {
            config,
            base,
            out,
            specs,
            rho,
        })
    }
}

fn create(dir: &Path, name: &str, files: &mut Vec<String>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    files.push(path.display().to_string());
    Ok(BufWriter::new(File::create(path)?))
}

fn spec_tag(spec: &StrategySpec) -> String {
    match spec {
        StrategySpec::Preset(s) => s.to_string(),
        StrategySpec::Custom(p) => format!(
            "custom-{}",
            p.file_stem().map_or("grouping".into(), |s| s.to_string_lossy().into_owned())
        ),
    }
}

fn design(common: &Common) -> Result<Vec<String>> {
    let s = common.setup()?;
    let dist = s.config.delays()?;
    let chain = OutcomeChain::build(&dist)?;
    let mut files = Vec::new();
    let mut table = create(&s.out, "design.csv", &mut files)?;
    writeln!(
        table,
        "rho,strategy,num_gains,objective,value_iterations,refinement_iterations,residual,converged"
    )?;
    for &rho in &s.rho {
        let model = build_augmented(&s.config.plant(rho), s.config.network.d_max)?;
        let designs = design_strategies(&chain, &model, &s.specs, &s.config.synthesis_options());
        for (spec, design) in s.specs.iter().zip(designs) {
            let syn = design?;
            let name = format!("schedule_{}_rho{rho}.txt", spec_tag(spec));
            create(&s.out, &name, &mut files)?.write_all(write_schedule(&syn.schedule).as_bytes())?;
            let r = &syn.report;
            writeln!(
                table,
                "{rho},{},{},{:e},{},{},{:e},{}",
                spec.label(),
                syn.schedule.num_gains(&chain.pi),
                r.objective,
                r.value_iterations,
                r.refinement_iterations,
                r.residual,
                r.converged
            )?;
        }
    }
    table.flush()?;
    Ok(files)
}

fn simulate(common: &Common, schedule_path: Option<&Path>) -> Result<Vec<String>> {
    let s = common.setup()?;
    let rho = s.rho[0];
    let dist = s.config.delays()?;
    let chain = OutcomeChain::build(&dist)?;
    let model = build_augmented(&s.config.plant(rho), s.config.network.d_max)?;
    let schedule: GainSchedule = match schedule_path {
        Some(path) => read_schedule(&fs::read_to_string(path)?, &path.display().to_string())?,
        None => {
            let spec = &s.specs[..1];
            design_strategies(&chain, &model, spec, &s.config.synthesis_options())
                .remove(0)?
                .schedule
        }
    };
    let mc = s.config.monte_carlo_options();
    let mut files = Vec::new();

    let trace = sample_network(&dist, mc.horizon, mc.seed)?;
    let n_u = model.bu_bar.ncols();
    let inputs = match mc.input {
        InputSignal::Zero => Vec::new(),
        signal => make_inputs(signal, n_u, mc.horizon, mc.seed),
    };
    let run = run_observer(&model, &schedule, &chain, &trace, &inputs, mc.seed, mc.x0_cov)?;
    let mut traj = create(&s.out, "trajectory.csv", &mut files)?;
    write_trajectory_csv(&run, &mut traj)?;
    traj.flush()?;

    let result = monte_carlo(&model, &schedule, &chain, &dist, &mc, Execution::default())?;
    let op = JumpOperator::new(&chain, &model, &schedule)?;
    let p_bar = FixedPointSystem::new(&op).solve(&op.offset());
    let mut stats = create(&s.out, "statistics.csv", &mut files)?;
    writeln!(stats, "theta_index,count,pi,pi_hat,trace_empirical,trace_designed")?;
    let cov = &result.covariance;
    for j in 0..chain.len() {
        let emp = cov.per_state[j].as_ref().map_or(f64::NAN, |p| model.current_state_trace(p));
        let des = p_bar.as_ref().map_or(f64::NAN, |p| model.current_state_trace(&p.p[j]));
        writeln!(stats, "{j},{},{:e},{:e},{:e},{:e}", cov.counts[j], chain.pi[j], cov.pi_hat[j], emp, des)?;
    }
    writeln!(
        stats,
        "overall,{},1,1,{:e},{:e}",
        cov.samples,
        model.current_state_trace(&cov.overall),
        p_bar.as_ref().map_or(f64::NAN, |p| current_trace(&chain, &model, p))
    )?;
    stats.flush()?;
    Ok(files)
}

fn write_report(out: &Path, csv: &str, report: &ExperimentReport, files: &mut Vec<String>) -> Result<()> {
    let mut w = create(out, csv, files)?;
    write_sweep_csv(&report.rows, &mut w)?;
    w.flush()?;
    create(out, "summary.txt", files)?.write_all(summary(report).as_bytes())?;
    Ok(())
}

fn evaluate(common: &Common) -> Result<Vec<String>> {
    let s = common.setup()?;
    let (rows, baseline) = evaluate_rho(&s.config, &s.specs, s.rho[0], Execution::default())?;
    let report = ExperimentReport {
        rows,
        kalman: vec![baseline],
    };
    let mut files = Vec::new();
    write_report(&s.out, "evaluate.csv", &report, &mut files)?;
    Ok(files)
}

fn sweep(common: &Common) -> Result<Vec<String>> {
    let s = common.setup()?;
    let report = run_experiment(&s.config, &s.base, Some(&s.rho), Execution::default())?;
    let mut files = Vec::new();
    write_report(&s.out, "sweep.csv", &report, &mut files)?;
    Ok(files)
}

fn validate_chain(common: &Common) -> Result<(Vec<String>, serde_json::Value)> {
    let s = common.setup()?;
    let dist = s.config.delays()?;
    let chain = OutcomeChain::build(&dist)?;
    let mut files = Vec::new();
    let mut w = create(&s.out, "chain.csv", &mut files)?;
    chain.write_csv_dump(&mut w)?;
    w.flush()?;
    let row_error = chain
        .lambda
        .row_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    let residual = stationary_residual(&chain);
    let patterns = chain.xi.len();
    let groups: Vec<serde_json::Value> = s
        .specs
        .iter()
        .map(|spec| {
            let n = grouping_for(&chain, spec).map(|g| {
                let mut ids: Vec<usize> = g
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| chain.is_reachable(*j))
                    .filter_map(|(_, g)| *g)
                    .collect();
                ids.sort_unstable();
                ids.dedup();
                ids.len()
            });
            json!({"strategy": spec.label(), "num_gains": n.ok()})
        })
        .collect();
    let info = json!({
        "states": chain.len(),
        "patterns": patterns,
        "row_sum_error": row_error,
        "stationary_residual": residual,
        "gains": groups,
    });
    Ok((files, info))
}

/// `max_j |(Λᵀπ − π)_j|`.
fn stationary_residual(chain: &OutcomeChain) -> f64 {
    let n = chain.len();
    (0..n)
        .map(|j| {
            let inflow: f64 = (0..n).map(|i| chain.lambda[(i, j)] * chain.pi[i]).sum();
            (inflow - chain.pi[j]).abs()
        })
        .fold(0.0, f64::max)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let detail = e.to_string();
            let first = detail.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", json!({"error": {"kind": "usage", "message": first}}));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Design(c) => design(c).map(|f| (f, json!(null))),
        Command::Simulate { common, schedule } => simulate(common, schedule.as_deref()).map(|f| (f, json!(null))),
        Command::Evaluate(c) => evaluate(c).map(|f| (f, json!(null))),
        Command::Sweep(c) => sweep(c).map(|f| (f, json!(null))),
        Command::ValidateChain(c) => validate_chain(c),
    };
    match result {
        Ok((files, info)) => {
            let mut status = json!({"status": "ok", "files": files});
            if !info.is_null() {
                status["chain"] = info;
            }
            println!("{status}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": e.to_string()}}));
            ExitCode::from(2)
        }
    }
}
