//! Monte-Carlo simulation of plant, network and jump observer.
//!
//! Samples taken before `t = 0` were never sent. Process and measurement
//! noise are Gaussian. Every run draws from its own ChaCha8 streams keyed by
//! `(seed, run)`, so results do not depend on how runs are scheduled.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::designer::{check_schedule, masked_gain, GainSchedule};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::flops;
use crate::linalg;
use crate::model::AugmentedModel;
use crate::outcome_chain::{ChainLayout, DelayDistribution, OutcomeChain};

/// States with fewer samples than this are flagged in [`EmpiricalCovariance`].
pub const LOW_COUNT: u64 = 100;

const STREAM_NETWORK: u64 = 0;
const STREAM_NOISE: u64 = 1;
const STREAM_INPUT: u64 = 2;

/// Independent random stream for one purpose of one run.
pub fn run_rng(seed: u64, run: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run * 3 + purpose);
    rng
}

/// Sliding reception window of the network, advanced one instant at a time.
#[derive(Debug, Clone)]
pub struct NetworkWindow {
    layout: ChainLayout,
    cumulative: Vec<Vec<f64>>,
    /// Delay of the sample of sensor `s` taken at `t'`, at `s·(d+1) + t' mod (d+1)`.
    ring: Vec<Option<u8>>,
    symbols: Vec<u8>,
    pattern: Vec<bool>,
    t: usize,
}

impl NetworkWindow {
    pub fn new(dist: &DelayDistribution) -> Self {
        let layout = ChainLayout::new(dist.n_sensors(), dist.d_max());
        let cumulative = dist
            .rows()
            .iter()
            .map(|row| {
                row.iter()
                    .scan(0.0, |acc, &b| {
                        *acc += b;
                        Some(*acc)
                    })
                    .collect()
            })
            .collect();
        let slots = layout.ny_bar();
        Self {
            layout,
            cumulative,
            ring: vec![None; slots],
            symbols: vec![0; slots],
            pattern: vec![false; slots],
            t: 0,
        }
    }

    pub fn reset(&mut self) {
        self.ring.fill(None);
        self.pattern.fill(false);
        self.t = 0;
    }

    /// Draw the delays of the samples taken now, `None` meaning lost.
    pub fn draw(&self, rng: &mut impl Rng, out: &mut [Option<u8>]) {
        for (s, cum) in self.cumulative.iter().enumerate() {
            let u: f64 = rng.random();
            out[s] = cum.iter().position(|&c| u < c).map(|d| d as u8);
        }
    }

    /// Register the delays of the samples taken at the current instant and
    /// return the outcome-state index of this instant.
    pub fn push(&mut self, delays: &[Option<u8>]) -> usize {
        let blocks = self.layout.d_max + 1;
        let t = self.t;
        for (s, &tau) in delays.iter().enumerate() {
            self.ring[s * blocks + t % blocks] = tau.filter(|&d| (d as usize) < blocks);
        }
        for s in 0..self.layout.n_y {
            for age in 0..blocks {
                let slot = s * blocks + age;
                let tau = if t >= age {
                    self.ring[s * blocks + (t - age) % blocks]
                } else {
                    None
                };
                let sym = match tau {
                    Some(d) if d as usize <= age => d + 1,
                    _ => 0,
                };
                self.symbols[slot] = sym;
                self.pattern[slot] = sym as usize == age + 1;
            }
        }
        self.t += 1;
        self.layout.encode(&self.symbols)
    }

    /// Availability pattern of the last pushed instant.
    pub fn pattern(&self) -> &[bool] {
        &self.pattern
    }

    pub fn active(&self) -> usize {
        self.pattern.iter().filter(|&&on| on).count()
    }
}

/// Realized network behaviour over a horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTrace {
    pub d_max: usize,
    /// `delays[s][t]`: delay of the sample of sensor `s` taken at `t`; `None` if lost.
    pub delays: Vec<Vec<Option<u8>>>,
    /// `receptions[t][slot]`: `α_{s,d}[t]`.
    pub receptions: Vec<Vec<bool>>,
    pub theta_indices: Vec<usize>,
    /// Leading instants whose window still contains unsent samples.
    pub warm_up: usize,
}

impl NetworkTrace {
    pub fn horizon(&self) -> usize {
        self.theta_indices.len()
    }

    /// Rebuild receptions and state indices from delays.
    pub fn from_delays(dist: &DelayDistribution, delays: Vec<Vec<Option<u8>>>) -> Result<Self> {
        if delays.len() != dist.n_sensors() {
            return Err(Error::DimensionMismatch {
                left: "delays",
                right: "distribution",
                detail: format!("{} sensors vs {}", delays.len(), dist.n_sensors()),
            });
        }
        let horizon = delays.first().map_or(0, Vec::len);
        if delays.iter().any(|d| d.len() != horizon) {
            return Err(Error::InvalidWindow("ragged delay trace".into()));
        }
        let d_max = dist.d_max();
        let delays: Vec<Vec<Option<u8>>> = delays
            .into_iter()
            .map(|row| row.into_iter().map(|d| d.filter(|&d| d as usize <= d_max)).collect())
            .collect();
        let mut window = NetworkWindow::new(dist);
        let mut now = vec![None; dist.n_sensors()];
        let mut receptions = Vec::with_capacity(horizon);
        let mut theta_indices = Vec::with_capacity(horizon);
        for t in 0..horizon {
            for (s, row) in delays.iter().enumerate() {
                now[s] = row[t];
            }
            theta_indices.push(window.push(&now));
            receptions.push(window.pattern().to_vec());
        }
        Ok(Self {
            d_max,
            delays,
            receptions,
            theta_indices,
            warm_up: d_max + 1,
        })
    }
}

/// Draw delays i.i.d. per sensor and sample; delays beyond `d_max` are lost.
pub fn sample_network(dist: &DelayDistribution, horizon: usize, seed: u64) -> Result<NetworkTrace> {
    if horizon < dist.d_max() + 1 {
        return Err(Error::InvalidWindow(format!(
            "horizon {horizon} shorter than the window {}",
            dist.d_max() + 1
        )));
    }
    let window = NetworkWindow::new(dist);
    let mut rng = run_rng(seed, 0, STREAM_NETWORK);
    let mut now = vec![None; dist.n_sensors()];
    let mut delays = vec![Vec::with_capacity(horizon); dist.n_sensors()];
    for _ in 0..horizon {
        window.draw(&mut rng, &mut now);
        for (s, row) in delays.iter_mut().enumerate() {
            row.push(now[s]);
        }
    }
    NetworkTrace::from_delays(dist, delays)
}

/// Control input applied to the plant and fed forward to the observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InputSignal {
    Zero,
    /// i.i.d. uniform entries in `[-amplitude, amplitude]`.
    Random { amplitude: f64 },
}

/// One simulated run.
#[derive(Debug, Clone)]
pub struct RunResult {
    /// Augmented true state `[x[t]; …; x[t−d]]`.
    pub x_true: Vec<DVector<f64>>,
    pub x_est: Vec<DVector<f64>>,
    pub err: Vec<DVector<f64>>,
    pub theta_indices: Vec<usize>,
    pub flops_per_step: Vec<u64>,
    pub seed: u64,
}

/// Preallocated plant + observer loop.
#[derive(Clone)]
struct Engine<'a> {
    model: &'a AugmentedModel,
    /// `L_{g(j)} f(ϑ_j)` per state.
    gains: Vec<DMatrix<f64>>,
    w_sqrt: DMatrix<f64>,
    sigma: Vec<f64>,
    x0_sd: f64,
    blocks: usize,
    x: DVector<f64>,
    x_next: DVector<f64>,
    xh: DVector<f64>,
    xh_prior: DVector<f64>,
    err: DVector<f64>,
    m_bar: DVector<f64>,
    innov: DVector<f64>,
    m_ring: Vec<f64>,
    z_w: DVector<f64>,
    noise: DVector<f64>,
    u: DVector<f64>,
}

impl<'a> Engine<'a> {
    fn new(model: &'a AugmentedModel, chain: &OutcomeChain, schedule: &GainSchedule, x0_cov: f64) -> Result<Self> {
        check_schedule(chain, model, schedule)?;
        let dim = model.state_dim();
        let gains = (0..chain.len())
            .map(|j| match schedule.gain_for(j) {
                Some(g) => masked_gain(g, chain.pattern(j)),
                None => DMatrix::zeros(dim, model.ny_bar),
            })
            .collect();
        let blocks = model.d_max + 1;
        let sigma = (0..model.n_y)
            .map(|s| {
                let slot = model.slot(s, 0);
                model.v[(slot, slot)].max(0.0).sqrt()
            })
            .collect();
        let n_w = model.w.nrows();
        Ok(Self {
            model,
            gains,
            w_sqrt: linalg::psd_sqrt(&model.w),
            sigma,
            x0_sd: x0_cov.max(0.0).sqrt(),
            blocks,
            x: DVector::zeros(dim),
            x_next: DVector::zeros(dim),
            xh: DVector::zeros(dim),
            xh_prior: DVector::zeros(dim),
            err: DVector::zeros(dim),
            m_bar: DVector::zeros(model.ny_bar),
            innov: DVector::zeros(model.ny_bar),
            m_ring: vec![0.0; model.ny_bar],
            z_w: DVector::zeros(n_w),
            noise: DVector::zeros(n_w),
            u: DVector::zeros(model.bu_bar.ncols()),
        })
    }

    /// Advance plant and observer to instant `t`. `u_prev` is the input applied
    /// at `t − 1`; `pattern` and `theta` describe the network at `t`.
    fn step(&mut self, t: usize, noise_rng: &mut ChaCha8Rng, pattern: &[bool], theta: usize) -> u64 {
        let m = self.model;
        let n = m.n;
        if t == 0 {
            self.x.fill(0.0);
            for i in 0..n {
                let z: f64 = noise_rng.sample(StandardNormal);
                self.x[i] = self.x0_sd * z;
            }
            self.xh_prior.fill(0.0);
        } else {
            for i in 0..self.z_w.len() {
                self.z_w[i] = noise_rng.sample(StandardNormal);
            }
            self.noise.gemv(1.0, &self.w_sqrt, &self.z_w, 0.0);
            self.x_next.gemv(1.0, &m.a_bar, &self.x, 0.0);
            self.x_next.gemv(1.0, &m.bu_bar, &self.u, 1.0);
            self.x_next.gemv(1.0, &m.bw_bar, &self.noise, 1.0);
            std::mem::swap(&mut self.x, &mut self.x_next);
            self.xh_prior.gemv(1.0, &m.a_bar, &self.xh, 0.0);
            self.xh_prior.gemv(1.0, &m.bu_bar, &self.u, 1.0);
        }

        // sample every sensor now; keep the last d_max + 1 samples
        for s in 0..m.n_y {
            let z: f64 = noise_rng.sample(StandardNormal);
            let row = m.slot(s, 0);
            let clean = m.c_bar.row(row).dot(&self.x.transpose());
            self.m_ring[s * self.blocks + t % self.blocks] = clean + self.sigma[s] * z;
        }

        let mut active = 0;
        for s in 0..m.n_y {
            for d in 0..self.blocks {
                let slot = s * self.blocks + d;
                self.m_bar[slot] = if pattern[slot] {
                    active += 1;
                    self.m_ring[s * self.blocks + (t - d) % self.blocks]
                } else {
                    0.0
                };
            }
        }
        self.xh.copy_from(&self.xh_prior);
        if active > 0 {
            self.innov.copy_from(&self.m_bar);
            self.innov.gemv(-1.0, &m.c_bar, &self.xh_prior, 1.0);
            self.xh.gemv(1.0, &self.gains[theta], &self.innov, 1.0);
        }
        self.err.copy_from(&self.x);
        self.err -= &self.xh;
        flops::jump_update(m.state_dim(), active)
    }

    /// Same step in error coordinates, `x̃⁻ = Āx̃ + B̄_w w`,
    /// `x̃ = x̃⁻ − L f(ϑ)(C̄x̃⁻ + v̄)`. Draws the same random numbers as
    /// [`Engine::step`], so both agree up to rounding; this form stays
    /// accurate when the plant state itself grows without bound.
    fn step_error(&mut self, t: usize, noise_rng: &mut ChaCha8Rng, pattern: &[bool], theta: usize) -> u64 {
        let m = self.model;
        if t == 0 {
            self.err.fill(0.0);
            for i in 0..m.n {
                let z: f64 = noise_rng.sample(StandardNormal);
                self.err[i] = self.x0_sd * z;
            }
        } else {
            for i in 0..self.z_w.len() {
                self.z_w[i] = noise_rng.sample(StandardNormal);
            }
            self.noise.gemv(1.0, &self.w_sqrt, &self.z_w, 0.0);
            self.x_next.gemv(1.0, &m.a_bar, &self.err, 0.0);
            self.x_next.gemv(1.0, &m.bw_bar, &self.noise, 1.0);
            std::mem::swap(&mut self.err, &mut self.x_next);
        }
        for s in 0..m.n_y {
            let z: f64 = noise_rng.sample(StandardNormal);
            self.m_ring[s * self.blocks + t % self.blocks] = self.sigma[s] * z;
        }
        let mut active = 0;
        for s in 0..m.n_y {
            for d in 0..self.blocks {
                let slot = s * self.blocks + d;
                self.m_bar[slot] = if pattern[slot] {
                    active += 1;
                    self.m_ring[s * self.blocks + (t - d) % self.blocks]
                } else {
                    0.0
                };
            }
        }
        if active > 0 {
            self.innov.copy_from(&self.m_bar);
            self.innov.gemv(1.0, &m.c_bar, &self.err, 1.0);
            self.err.gemv(-1.0, &self.gains[theta], &self.innov, 1.0);
        }
        flops::jump_update(m.state_dim(), active)
    }

    fn set_input(&mut self, signal: InputSignal, rng: &mut ChaCha8Rng) {
        match signal {
            InputSignal::Zero => self.u.fill(0.0),
            InputSignal::Random { amplitude } => {
                for i in 0..self.u.len() {
                    self.u[i] = rng.random_range(-1.0..=1.0) * amplitude;
                }
            }
        }
    }
}

/// Run the observer along a given network trace.
///
/// `inputs[t]` is applied between `t` and `t + 1`; an empty slice means zero input.
pub fn run_observer(
    model: &AugmentedModel,
    schedule: &GainSchedule,
    chain: &OutcomeChain,
    trace: &NetworkTrace,
    inputs: &[DVector<f64>],
    seed: u64,
    x0_cov: f64,
) -> Result<RunResult> {
    let mut engine = Engine::new(model, chain, schedule, x0_cov)?;
    if trace.receptions.first().is_some_and(|p| p.len() != model.ny_bar) {
        return Err(Error::ScheduleMismatch("trace slot count differs from model".into()));
    }
    if !inputs.is_empty() && (inputs.len() < trace.horizon() || inputs.iter().any(|u| u.len() != engine.u.len())) {
        return Err(Error::DimensionMismatch {
            left: "inputs",
            right: "B_u",
            detail: format!("need {} inputs of length {}", trace.horizon(), engine.u.len()),
        });
    }
    let mut noise_rng = run_rng(seed, 0, STREAM_NOISE);
    let horizon = trace.horizon();
    let mut out = RunResult {
        x_true: Vec::with_capacity(horizon),
        x_est: Vec::with_capacity(horizon),
        err: Vec::with_capacity(horizon),
        theta_indices: trace.theta_indices.clone(),
        flops_per_step: Vec::with_capacity(horizon),
        seed,
    };
    for t in 0..horizon {
        if t > 0 {
            match inputs.get(t - 1) {
                Some(u) => engine.u.copy_from(u),
                None => engine.u.fill(0.0),
            }
        }
        let flops = engine.step(t, &mut noise_rng, &trace.receptions[t], trace.theta_indices[t]);
        out.x_true.push(engine.x.clone());
        out.x_est.push(engine.xh.clone());
        out.err.push(engine.err.clone());
        out.flops_per_step.push(flops);
    }
    Ok(out)
}

/// Inputs for one run drawn from the run's input stream.
pub fn make_inputs(signal: InputSignal, n_u: usize, horizon: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = run_rng(seed, 0, STREAM_INPUT);
    (0..horizon)
        .map(|_| match signal {
            InputSignal::Zero => DVector::zeros(n_u),
            InputSignal::Random { amplitude } => {
                DVector::from_fn(n_u, |_, _| rng.random_range(-1.0..=1.0) * amplitude)
            }
        })
        .collect()
}

/// Running sums of `x̃x̃ᵀ` grouped by outcome state.
#[derive(Debug, Clone)]
struct Accumulator {
    sums: Vec<DMatrix<f64>>,
    counts: Vec<u64>,
}

impl Accumulator {
    fn new(states: usize, dim: usize) -> Self {
        Self {
            sums: vec![DMatrix::zeros(dim, dim); states],
            counts: vec![0; states],
        }
    }

    fn add(&mut self, theta: usize, err: &DVector<f64>) {
        self.sums[theta].ger(1.0, err, err, 1.0);
        self.counts[theta] += 1;
    }

    fn merge(&mut self, other: &Accumulator) {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    fn finish(self, chain: &OutcomeChain) -> EmpiricalCovariance {
        let dim = self.sums.first().map_or(0, |m| m.nrows());
        let samples: u64 = self.counts.iter().sum();
        let mut overall = DMatrix::zeros(dim, dim);
        for s in &self.sums {
            overall += s;
        }
        if samples > 0 {
            overall /= samples as f64;
        }
        let per_state = self
            .sums
            .iter()
            .zip(&self.counts)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect();
        let pi_hat = self
            .counts
            .iter()
            .map(|&c| if samples > 0 { c as f64 / samples as f64 } else { 0.0 })
            .collect();
        let low_count_states = (0..chain.len())
            .filter(|&j| chain.is_reachable(j) && self.counts[j] < LOW_COUNT)
            .collect();
        EmpiricalCovariance {
            per_state,
            counts: self.counts,
            pi_hat,
            overall,
            samples,
            low_count_states,
        }
    }
}

/// Empirical error covariances, overall and conditioned on the outcome state.
#[derive(Debug, Clone)]
pub struct EmpiricalCovariance {
    pub per_state: Vec<Option<DMatrix<f64>>>,
    pub counts: Vec<u64>,
    /// Empirical frequency of each state.
    pub pi_hat: Vec<f64>,
    pub overall: DMatrix<f64>,
    pub samples: u64,
    /// Reachable states with fewer than [`LOW_COUNT`] samples.
    pub low_count_states: Vec<usize>,
}

/// Group the post-burn-in errors of several runs by outcome state.
pub fn empirical_covariance(results: &[RunResult], chain: &OutcomeChain, burn_in: usize) -> Result<EmpiricalCovariance> {
    if results.len() < 2 {
        return Err(Error::InsufficientSamples(format!("{} runs, need at least 2", results.len())));
    }
    let dim = results[0].err.first().map_or(0, |e| e.len());
    let mut acc = Accumulator::new(chain.len(), dim);
    for r in results {
        for (t, (e, &theta)) in r.err.iter().zip(&r.theta_indices).enumerate() {
            if t >= burn_in {
                acc.add(theta, e);
            }
        }
    }
    Ok(acc.finish(chain))
}

/// How [`monte_carlo`] propagates each run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coordinates {
    /// Plant and observer states, error taken as their difference.
    State,
    /// The estimation error directly.
    Error,
    /// `State` for a stable `A`, `Error` otherwise.
    #[default]
    Auto,
}

#[derive(Debug, Clone)]
pub struct MonteCarloOptions {
    pub runs: usize,
    pub horizon: usize,
    /// Leading steps excluded from statistics.
    pub burn_in: usize,
    pub seed: u64,
    /// `x₀ ~ N(0, x0_cov · I)`.
    pub x0_cov: f64,
    pub input: InputSignal,
    pub coordinates: Coordinates,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            runs: 1000,
            horizon: 500,
            burn_in: 200,
            seed: 0,
            x0_cov: 1.0,
            input: InputSignal::Zero,
            coordinates: Coordinates::Auto,
        }
    }
}

/// Summary of a batch of simulated runs.
#[derive(Debug, Clone)]
pub struct MonteCarloResult {
    pub covariance: EmpiricalCovariance,
    /// Largest per-step update cost seen.
    pub max_flops: u64,
    /// Mean update cost per step.
    pub mean_flops: f64,
}

const CHUNKS: usize = 64;

/// Simulate many independent runs without storing trajectories.
pub fn monte_carlo(
    model: &AugmentedModel,
    schedule: &GainSchedule,
    chain: &OutcomeChain,
    dist: &DelayDistribution,
    opts: &MonteCarloOptions,
    exec: Execution,
) -> Result<MonteCarloResult> {
    if opts.runs < 2 {
        return Err(Error::InsufficientSamples(format!("{} runs, need at least 2", opts.runs)));
    }
    if opts.burn_in < dist.d_max() + 1 || opts.horizon <= opts.burn_in {
        return Err(Error::InvalidWindow(format!(
            "burn-in {} must cover the warm-up {} and be shorter than the horizon {}",
            opts.burn_in,
            dist.d_max() + 1,
            opts.horizon
        )));
    }
    if chain.layout != ChainLayout::new(dist.n_sensors(), dist.d_max()) {
        return Err(Error::ScheduleMismatch("distribution does not match the chain".into()));
    }
    let engine = Engine::new(model, chain, schedule, opts.x0_cov)?;
    let window = NetworkWindow::new(dist);
    let chunks = opts.runs.min(CHUNKS);
    let in_state = match opts.coordinates {
        Coordinates::State => true,
        Coordinates::Error => false,
        Coordinates::Auto => {
            let a = model.a_bar.view((0, 0), (model.n, model.n)).clone_owned();
            linalg::spectral_radius(&a) < 1.0
        }
    };
    let dim = model.state_dim();

    let partial = exec.map(chunks, |c| {
        let mut engine = engine.clone();
        let mut window = window.clone();
        let mut acc = Accumulator::new(chain.len(), dim);
        let mut now = vec![None; dist.n_sensors()];
        let mut max_flops = 0u64;
        let mut total_flops = 0u64;
        for run in (c * opts.runs / chunks)..((c + 1) * opts.runs / chunks) {
            let run = run as u64;
            let mut net_rng = run_rng(opts.seed, run, STREAM_NETWORK);
            let mut noise_rng = run_rng(opts.seed, run, STREAM_NOISE);
            let mut input_rng = run_rng(opts.seed, run, STREAM_INPUT);
            window.reset();
            engine.u.fill(0.0);
            for t in 0..opts.horizon {
                window.draw(&mut net_rng, &mut now);
                let theta = window.push(&now);
                let flops = if in_state {
                    engine.step(t, &mut noise_rng, window.pattern(), theta)
                } else {
                    engine.step_error(t, &mut noise_rng, window.pattern(), theta)
                };
                max_flops = max_flops.max(flops);
                total_flops += flops;
                if t >= opts.burn_in {
                    acc.add(theta, &engine.err);
                }
                engine.set_input(opts.input, &mut input_rng);
            }
        }
        (acc, max_flops, total_flops)
    });

    let mut acc = Accumulator::new(chain.len(), dim);
    let mut max_flops = 0;
    let mut total_flops = 0;
    for (a, m, t) in &partial {
        acc.merge(a);
        max_flops = max_flops.max(*m);
        total_flops += t;
    }
    Ok(MonteCarloResult {
        covariance: acc.finish(chain),
        max_flops,
        mean_flops: total_flops as f64 / (opts.runs * opts.horizon) as f64,
    })
}

/// Write a run as CSV: `t, theta_index, x_true_*, x_est_*, err_*`.
pub fn write_trajectory_csv<W: Write>(run: &RunResult, mut out: W) -> std::io::Result<()> {
    let dim = run.err.first().map_or(0, |e| e.len());
    let mut header = vec!["t".to_string(), "theta_index".to_string()];
    for prefix in ["x_true", "x_est", "err"] {
        header.extend((0..dim).map(|i| format!("{prefix}_{i}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for t in 0..run.err.len() {
        write!(out, "{t},{}", run.theta_indices[t])?;
        for v in [&run.x_true[t], &run.x_est[t], &run.err[t]] {
            for x in v.iter() {
                write!(out, ",{x:e}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
