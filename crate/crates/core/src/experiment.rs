//! Experiment configuration and the design → verify → simulate sweep.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::designer::{
    custom_grouping, group_assignment, read_grouping, synthesize_grouping, verify_fixed_point, verify_stability,
    CovarianceTuple, FixedPointOptions, GainSchedule, Strategy, Synthesis, SynthesisOptions,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::flops;
use crate::kalman::{kalman_expected_covariance, KalmanOptions};
use crate::linalg;
use crate::model::{build_augmented, validate_plant, AugmentedModel, PlantModel};
use crate::outcome_chain::{DelayDistribution, OutcomeChain};
use crate::simulator::{monte_carlo, Coordinates, InputSignal, MonteCarloOptions};

/// The bundled two-sensor example.
pub const SEC5_EXAMPLE: &str = include_str!("../configs/sec5_example.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantConfig,
    pub network: NetworkConfig,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Plant matrices, row-major. `ρ` is added to every entry of `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: Vec<Vec<f64>>,
    pub bu: Vec<Vec<f64>>,
    pub bw: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub d_max: usize,
    /// Per sensor, `β_{s,0..=d_max}`; the remainder is the loss probability.
    pub beta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DesignConfig {
    /// `S1`…`S5` or `custom:<grouping file>`.
    pub strategies: Vec<String>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DesignConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::PRESETS.iter().map(|s| s.to_string()).collect(),
            tol: 1e-9,
            max_iter: 5000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub rho: Vec<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            rho: vec![0.0],
            rho_min: 0.0,
            rho_max: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    /// Runs of the full plant/observer simulation.
    pub runs: usize,
    /// Runs of the Kalman covariance recursion.
    pub kalman_runs: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub x0_cov: f64,
    /// Zero means no input.
    pub input_amplitude: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self {
            runs: 200,
            kalman_runs: 2000,
            horizon: 500,
            burn_in: 200,
            seed: 1,
            x0_cov: 1.0,
            input_amplitude: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

/// A strategy entry of the configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategySpec {
    Preset(Strategy),
    Custom(PathBuf),
}

impl StrategySpec {
    pub fn label(&self) -> String {
        match self {
            StrategySpec::Preset(s) => s.to_string(),
            StrategySpec::Custom(p) => format!("custom:{}", p.display()),
        }
    }
}

impl FromStr for StrategySpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("custom:") {
            Some(path) if !path.is_empty() => Ok(StrategySpec::Custom(PathBuf::from(path))),
            Some(_) => Err(Error::UnknownStrategy(s.to_string())),
            None => Ok(StrategySpec::Preset(s.parse()?)),
        }
    }
}

/// Line of the first assignment to `key` inside `[section]`, 1-based.
fn key_line(source: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section && key.is_empty() {
                return Some(i + 1);
            }
        } else if current == section && !key.is_empty() {
            if let Some((lhs, _)) = line.split_once('=') {
                if lhs.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Validator<'a> {
    source: &'a str,
}

impl Validator<'_> {
    fn fail(&self, section: &str, key: &str, index: Option<usize>, message: String) -> Error {
        let mut path = section.to_string();
        if !key.is_empty() {
            path = format!("{path}.{key}");
        }
        if let Some(i) = index {
            path = format!("{path}[{i}]");
        }
        let message = match key_line(self.source, section, key) {
            Some(line) => format!("line {line}: {message}"),
            None => message,
        };
        Error::Config { key: path, message }
    }
}

fn matrix(v: &Validator<'_>, key: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(v.fail("plant", key, None, "matrix is empty".into()));
    }
    linalg::from_rows(rows).ok_or_else(|| v.fail("plant", key, None, "rows have different lengths".into()))
}

impl ExperimentConfig {
    /// Plant with `ρ` added to every entry of `A`.
    pub fn plant(&self, rho: f64) -> PlantModel {
        let a = linalg::from_rows(&self.plant.a).expect("validated");
        PlantModel {
            a: a.add_scalar(rho),
            bu: linalg::from_rows(&self.plant.bu).expect("validated"),
            bw: linalg::from_rows(&self.plant.bw).expect("validated"),
            c: linalg::from_rows(&self.plant.c).expect("validated"),
            w: linalg::from_rows(&self.plant.w).expect("validated"),
            sigma2: self.plant.sigma2.clone(),
        }
    }

    pub fn delays(&self) -> Result<DelayDistribution> {
        DelayDistribution::new(self.network.beta.clone())
    }

    /// Strategies with custom grouping files resolved against `base`.
    pub fn strategies(&self, base: &Path) -> Result<Vec<StrategySpec>> {
        self.design
            .strategies
            .iter()
            .map(|s| {
                Ok(match s.parse()? {
                    StrategySpec::Custom(p) if p.is_relative() => StrategySpec::Custom(base.join(p)),
                    other => other,
                })
            })
            .collect()
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            tol: self.design.tol,
            max_iter: self.design.max_iter,
            ..Default::default()
        }
    }

    pub fn monte_carlo_options(&self) -> MonteCarloOptions {
        let mc = &self.monte_carlo;
        MonteCarloOptions {
            runs: mc.runs,
            horizon: mc.horizon,
            burn_in: mc.burn_in,
            seed: mc.seed,
            x0_cov: mc.x0_cov,
            input: if mc.input_amplitude > 0.0 {
                InputSignal::Random {
                    amplitude: mc.input_amplitude,
                }
            } else {
                InputSignal::Zero
            },
            coordinates: Coordinates::Auto,
        }
    }

    pub fn kalman_options(&self) -> KalmanOptions {
        let mc = &self.monte_carlo;
        KalmanOptions {
            runs: mc.kalman_runs,
            horizon: mc.horizon,
            burn_in: mc.burn_in,
            seed: mc.seed,
            p0: mc.x0_cov,
            ..Default::default()
        }
    }

    fn validate(&self, source: &str, base: &Path) -> Result<()> {
        let v = Validator { source };
        let p = &self.plant;
        for (key, rows) in [("a", &p.a), ("bu", &p.bu), ("bw", &p.bw), ("c", &p.c), ("w", &p.w)] {
            matrix(&v, key, rows)?;
        }
        let n_y = p.c.len();
        if p.sigma2.len() != n_y {
            return Err(v.fail(
                "plant",
                "sigma2",
                None,
                format!("{} noise variances for {n_y} sensors", p.sigma2.len()),
            ));
        }
        let plant = self.plant(0.0);
        build_augmented(&plant, self.network.d_max).map_err(|e| v.fail("plant", "", None, e.to_string()))?;
        let diagnostics = validate_plant(&plant);
        if !diagnostics.is_valid() {
            return Err(v.fail("plant", "", None, diagnostics.violations.join("; ")));
        }

        let beta = &self.network.beta;
        if beta.len() < n_y {
            return Err(v.fail(
                "network",
                "beta",
                Some(beta.len()),
                format!("missing delay distribution for sensor {}", beta.len()),
            ));
        }
        if beta.len() > n_y {
            return Err(v.fail(
                "network",
                "beta",
                Some(n_y),
                format!("{} delay distributions for {n_y} sensors", beta.len()),
            ));
        }
        for (s, row) in beta.iter().enumerate() {
            if row.len() != self.network.d_max + 1 {
                return Err(v.fail(
                    "network",
                    "beta",
                    Some(s),
                    format!("sensor {s} needs {} probabilities, got {}", self.network.d_max + 1, row.len()),
                ));
            }
        }
        if let Err(e) = self.delays() {
            let sensor = match &e {
                Error::InvalidDistribution { sensor, .. } => Some(*sensor),
                _ => None,
            };
            return Err(v.fail("network", "beta", sensor, e.to_string()));
        }

        let d = &self.design;
        if d.strategies.is_empty() {
            return Err(v.fail("design", "strategies", None, "no strategies listed".into()));
        }
        for (i, s) in d.strategies.iter().enumerate() {
            match s.parse::<StrategySpec>() {
                Err(e) => return Err(v.fail("design", "strategies", Some(i), e.to_string())),
                Ok(StrategySpec::Custom(path)) => {
                    let full = if path.is_relative() { base.join(&path) } else { path };
                    if !full.is_file() {
                        return Err(v.fail(
                            "design",
                            "strategies",
                            Some(i),
                            format!("grouping file {} does not exist", full.display()),
                        ));
                    }
                }
                Ok(_) => {}
            }
        }
        if !(d.tol > 0.0) {
            return Err(v.fail("design", "tol", None, "must be positive".into()));
        }
        if d.max_iter == 0 {
            return Err(v.fail("design", "max_iter", None, "must be positive".into()));
        }

        let sw = &self.sweep;
        if sw.rho.is_empty() {
            return Err(v.fail("sweep", "rho", None, "empty grid".into()));
        }
        if let Some((i, r)) = sw
            .rho
            .iter()
            .enumerate()
            .find(|(_, r)| !(sw.rho_min..=sw.rho_max).contains(*r))
        {
            return Err(v.fail(
                "sweep",
                "rho",
                Some(i),
                format!("{r} outside [{}, {}]", sw.rho_min, sw.rho_max),
            ));
        }

        let mc = &self.monte_carlo;
        if mc.runs < 2 {
            return Err(v.fail("monte_carlo", "runs", None, "need at least 2 runs".into()));
        }
        if mc.kalman_runs < 2 {
            return Err(v.fail("monte_carlo", "kalman_runs", None, "need at least 2 runs".into()));
        }
        if mc.burn_in < self.network.d_max + 1 {
            return Err(v.fail("monte_carlo", "burn_in", None, "must cover the reception window".into()));
        }
        if mc.horizon <= mc.burn_in {
            return Err(v.fail("monte_carlo", "horizon", None, "must exceed burn_in".into()));
        }
        if !(mc.x0_cov >= 0.0) || !(mc.input_amplitude >= 0.0) {
            return Err(v.fail("monte_carlo", "", None, "x0_cov and input_amplitude must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Parse and validate configuration text. `base` resolves relative paths.
pub fn parse_config_str(text: &str, path: &str, base: &Path) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_string(),
        message: e.to_string().trim().to_string(),
    })?;
    config.validate(text, base)?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, &path.display().to_string(), base)
}

pub fn emit_config(config: &ExperimentConfig) -> String {
    toml::to_string(config).expect("plain data serializes")
}

/// `ε(%) = tr(P_S − P_Kal) / tr(P_Kal) · 100`; positive means worse than Kalman.
pub fn epsilon(trace_s: f64, trace_kal: f64) -> Result<f64> {
    if !(trace_kal > 0.0) {
        return Err(Error::NonPositiveDenominator(trace_kal));
    }
    Ok((trace_s - trace_kal) / trace_kal * 100.0)
}

/// Matrix form of [`epsilon`].
pub fn epsilon_matrix(p_s: &DMatrix<f64>, p_kal: &DMatrix<f64>) -> Result<f64> {
    epsilon(p_s.trace(), p_kal.trace())
}

/// `Σ_j π_j tr(C_x P_j C_xᵀ)`.
pub fn current_trace(chain: &OutcomeChain, model: &AugmentedModel, p: &CovarianceTuple) -> f64 {
    p.p.iter()
        .zip(&chain.pi)
        .map(|(m, w)| w * model.current_state_trace(m))
        .sum()
}

/// Worst-case update cost of the jump observer over reachable states.
pub fn jump_flops(chain: &OutcomeChain, model: &AugmentedModel, schedule: &GainSchedule) -> u64 {
    (0..chain.len())
        .filter(|&j| chain.is_reachable(j) && schedule.gain_for(j).is_some())
        .map(|j| flops::jump_update(model.state_dim(), chain.active_slots(j).len()))
        .max()
        .unwrap_or(0)
}

/// Worst-case Kalman cost over reachable states.
pub fn kalman_flops(chain: &OutcomeChain, model: &AugmentedModel) -> u64 {
    (0..chain.len())
        .filter(|&j| chain.is_reachable(j))
        .map(|j| flops::kalman_step(model.state_dim(), chain.active_slots(j).len()))
        .max()
        .unwrap_or(0)
}

/// `coarse`'s gain-sharing constraints are implied by `fine`'s.
fn refines(coarse: Strategy, fine: Strategy) -> bool {
    use Strategy::*;
    matches!(
        (coarse, fine),
        (S1, S2 | S3 | S4 | S5) | (S2, S4 | S5) | (S3, S4 | S5) | (S4, S5)
    )
}

/// Grouping of a strategy entry.
pub fn grouping_for(chain: &OutcomeChain, spec: &StrategySpec) -> Result<Vec<Option<usize>>> {
    match spec {
        StrategySpec::Preset(s) => group_assignment(chain, *s),
        StrategySpec::Custom(path) => {
            let text = std::fs::read_to_string(path)?;
            custom_grouping(chain, &read_grouping(&text, &path.display().to_string())?)
        }
    }
}

/// Design every listed strategy. Finer presets start from the best design
/// of a coarser preset whose constraints they relax, so the objectives of
/// nested strategies never increase.
pub fn design_strategies(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    specs: &[StrategySpec],
    opts: &SynthesisOptions,
) -> Vec<Result<Synthesis>> {
    let mut order: Vec<usize> = (0..specs.len()).collect();
    order.sort_by_key(|&i| match &specs[i] {
        StrategySpec::Preset(s) => (0, *s as usize),
        StrategySpec::Custom(_) => (1, i),
    });
    let mut results: Vec<Option<Result<Synthesis>>> = (0..specs.len()).map(|_| None).collect();
    for &i in &order {
        let mut opts = opts.clone();
        let strategy = match &specs[i] {
            StrategySpec::Preset(s) => *s,
            StrategySpec::Custom(_) => Strategy::Custom,
        };
        if strategy != Strategy::Custom {
            opts.warm_start = results
                .iter()
                .zip(specs)
                .filter_map(|(r, spec)| match (r, spec) {
                    (Some(Ok(syn)), StrategySpec::Preset(s)) if refines(*s, strategy) => Some(syn),
                    _ => None,
                })
                .min_by(|a, b| a.report.objective.total_cmp(&b.report.objective))
                .map(|syn| syn.schedule.clone());
        }
        let result = grouping_for(chain, &specs[i])
            .and_then(|grouping| synthesize_grouping(chain, model, strategy, grouping, &opts));
        results[i] = Some(result);
    }
    results.into_iter().map(|r| r.expect("every entry designed")).collect()
}

/// One line of the sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub rho: f64,
    pub strategy: String,
    pub num_gains: usize,
    pub objective: f64,
    pub epsilon: f64,
    pub flops_jump: u64,
    pub flops_kalman: u64,
    pub verdicts: String,
    /// Simulated `tr(C_x E{x̃x̃ᵀ} C_xᵀ)`, for the summary.
    pub simulated_trace: f64,
    /// `Σ_j π_j tr(C_x P̄_j C_xᵀ)`.
    pub designed_trace: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<SweepRow>,
    /// `(ρ, tr P_Kal, standard error)` per grid point; NaN when the baseline failed.
    pub kalman: Vec<(f64, f64, f64)>,
}

fn failed_row(rho: f64, strategy: String, err: &Error) -> SweepRow {
    SweepRow {
        rho,
        strategy,
        num_gains: 0,
        objective: f64::NAN,
        epsilon: f64::NAN,
        flops_jump: 0,
        flops_kalman: 0,
        verdicts: format!("error:{}", err.kind()),
        simulated_trace: f64::NAN,
        designed_trace: f64::NAN,
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

/// Design, verify and evaluate every strategy at one `ρ`.
pub fn evaluate_rho(
    config: &ExperimentConfig,
    specs: &[StrategySpec],
    rho: f64,
    exec: Execution,
) -> Result<(Vec<SweepRow>, (f64, f64, f64))> {
    let dist = config.delays()?;
    let chain = OutcomeChain::build(&dist)?;
    let model = build_augmented(&config.plant(rho), config.network.d_max)?;
    let kalman = kalman_expected_covariance(&model, &dist, &config.kalman_options(), exec);
    let baseline = match &kalman {
        Ok(k) => (rho, k.trace, k.std_error),
        Err(_) => (rho, f64::NAN, f64::NAN),
    };
    let flops_kalman = kalman_flops(&chain, &model);
    let designs = design_strategies(&chain, &model, specs, &config.synthesis_options());
    let mc_opts = config.monte_carlo_options();

    let rows = specs
        .iter()
        .zip(designs)
        .map(|(spec, design)| {
            let label = spec.label();
            let syn = match design {
                Ok(s) => s,
                Err(e) => return failed_row(rho, label, &e),
            };
            let designed_trace = current_trace(&chain, &model, &syn.covariance);
            let eps = match &kalman {
                Ok(k) => epsilon(designed_trace, k.trace).unwrap_or(f64::NAN),
                Err(_) => f64::NAN,
            };
            let stability = verify_stability(&chain, &model, &syn.schedule, &syn.covariance);
            let fixed = verify_fixed_point(&chain, &model, &syn.schedule, &FixedPointOptions::default());
            let verdicts = match (&stability, &fixed) {
                (Ok(s), Ok(f)) => format!(
                    "stability:{};fixed_point:{};monotone:{}",
                    pass(s.pass),
                    pass(f.pass),
                    pass(f.monotone_from_zero)
                ),
                (Err(e), _) | (_, Err(e)) => format!("error:{}", e.kind()),
            };
            let simulated_trace = monte_carlo(&model, &syn.schedule, &chain, &dist, &mc_opts, exec)
                .map(|mc| model.current_state_trace(&mc.covariance.overall))
                .unwrap_or(f64::NAN);
            SweepRow {
                rho,
                strategy: label,
                num_gains: syn.schedule.num_gains(&chain.pi),
                objective: syn.report.objective,
                epsilon: eps,
                flops_jump: jump_flops(&chain, &model, &syn.schedule),
                flops_kalman,
                verdicts,
                simulated_trace,
                designed_trace,
            }
        })
        .collect();
    Ok((rows, baseline))
}

/// Run the sweep over the configured (or given) `ρ` grid. Failures of
/// single cells are recorded in their rows.
pub fn run_experiment(config: &ExperimentConfig, base: &Path, rho: Option<&[f64]>, exec: Execution) -> Result<ExperimentReport> {
    let specs = config.strategies(base)?;
    let grid = rho.unwrap_or(&config.sweep.rho).to_vec();
    let cells = exec.map(grid.len(), |k| evaluate_rho(config, &specs, grid[k], exec));
    let mut rows = Vec::new();
    let mut kalman = Vec::new();
    for (k, cell) in cells.into_iter().enumerate() {
        match cell {
            Ok((r, b)) => {
                rows.extend(r);
                kalman.push(b);
            }
            Err(e) => {
                rows.extend(specs.iter().map(|s| failed_row(grid[k], s.label(), &e)));
                kalman.push((grid[k], f64::NAN, f64::NAN));
            }
        }
    }
    Ok(ExperimentReport { rows, kalman })
}

pub const SWEEP_HEADER: &str = "rho,strategy,num_gains,objective,epsilon,flops_jump,flops_kalman,verdicts";

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:e},{:e},{},{},{}",
            r.rho, r.strategy, r.num_gains, r.objective, r.epsilon, r.flops_jump, r.flops_kalman, r.verdicts
        )?;
    }
    Ok(())
}

/// Human-readable table of a report.
pub fn summary(report: &ExperimentReport) -> String {
    let mut s = String::new();
    for &(rho, trace, se) in &report.kalman {
        let _ = writeln!(s, "rho = {rho}: Kalman tr P = {trace:.6} (se {se:.2e})");
        let _ = writeln!(
            s,
            "  {:<10} {:>6} {:>10} {:>10} {:>10} {:>14} {:>8}  verdicts",
            "strategy", "gains", "designed", "simulated", "eps %", "flops jump/kf", "ratio"
        );
        for r in report.rows.iter().filter(|r| r.rho == rho) {
            let _ = writeln!(
                s,
                "  {:<10} {:>6} {:>10.6} {:>10.6} {:>10.3} {:>14} {:>7.1}%  {}",
                r.strategy,
                r.num_gains,
                r.designed_trace,
                r.simulated_trace,
                r.epsilon,
                format!("{}/{}", r.flops_jump, r.flops_kalman),
                100.0 * r.flops_jump as f64 / r.flops_kalman.max(1) as f64,
                r.verdicts
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference;

    fn bundled() -> ExperimentConfig {
        parse_config_str(SEC5_EXAMPLE, "sec5_example.toml", Path::new(".")).unwrap()
    }

    #[test]
    fn bundled_config_is_the_reference_plant() {
        let cfg = bundled();
        for rho in [0.0, 0.5] {
            let a = cfg.plant(rho);
            let b = reference::plant(rho);
            assert_eq!(a.a, b.a);
            assert_eq!(a.bu, b.bu);
            assert_eq!(a.bw, b.bw);
            assert_eq!(a.c, b.c);
            assert_eq!(a.w, b.w);
            assert_eq!(a.sigma2, b.sigma2);
        }
        assert_eq!(cfg.delays().unwrap(), reference::delays());
    }

    #[test]
    fn emit_round_trips() {
        let cfg = bundled();
        let again = parse_config_str(&emit_config(&cfg), "emitted", Path::new(".")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = SEC5_EXAMPLE.replace("d_max = 1", "d_max = 1\ncolour = 3");
        let err = parse_config_str(&text, "x.toml", Path::new(".")).unwrap_err();
        match err {
            Error::Parse { message, .. } => assert!(message.contains("colour") && message.contains("line")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_beta_names_the_sensor() {
        let text = SEC5_EXAMPLE.replace("beta = [[0.32, 0.22], [0.22, 0.32]]", "beta = [[0.32, 0.22]]");
        match parse_config_str(&text, "x.toml", Path::new(".")).unwrap_err() {
            Error::Config { key, message } => {
                assert_eq!(key, "network.beta[1]");
                assert!(message.contains("sensor 1") && message.starts_with("line 13"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rho_outside_range_is_rejected() {
        let text = SEC5_EXAMPLE.replace("0.45, 0.5]", "0.45, 0.7]");
        assert!(matches!(
            parse_config_str(&text, "x.toml", Path::new(".")),
            Err(Error::Config { key, .. }) if key == "sweep.rho[10]"
        ));
    }

    #[test]
    fn epsilon_conventions() {
        assert_eq!(epsilon(2.0, 2.0).unwrap(), 0.0);
        assert!((epsilon(3.0, 2.0).unwrap() - 50.0).abs() < 1e-12);
        assert!(matches!(epsilon(1.0, 0.0), Err(Error::NonPositiveDenominator(_))));
        let p = DMatrix::from_diagonal_element(2, 2, 1.5);
        assert_eq!(epsilon_matrix(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn strategy_specs_parse() {
        assert_eq!("S3".parse::<StrategySpec>().unwrap(), StrategySpec::Preset(Strategy::S3));
        assert_eq!(
            "custom:g.txt".parse::<StrategySpec>().unwrap(),
            StrategySpec::Custom(PathBuf::from("g.txt"))
        );
        assert!("custom:".parse::<StrategySpec>().is_err());
        assert!("S7".parse::<StrategySpec>().is_err());
    }
}
