//! Time-varying Kalman filter on the augmented model.
//!
//! Only the slots available at each instant enter the correction. The filter
//! is the reference for both estimation quality and online cost.

use nalgebra::{DMatrix, DVector};

use crate::designer::{check_schedule, masked_gain, GainSchedule};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::flops;
use crate::linalg;
use crate::model::AugmentedModel;
use crate::outcome_chain::{DelayDistribution, OutcomeChain};
use crate::simulator::{run_rng, NetworkWindow};

#[derive(Debug, Clone)]
pub struct KalmanState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
    pub flops: u64,
}

impl KalmanState {
    pub fn new(x_hat: DVector<f64>, p: DMatrix<f64>) -> Self {
        Self { x_hat, p, flops: 0 }
    }
}

fn active_slots(pattern: &[bool]) -> Vec<usize> {
    pattern.iter().enumerate().filter(|(_, &on)| on).map(|(k, _)| k).collect()
}

/// Covariance part of a Kalman step. Returns the corrected covariance and
/// the gain restricted to the active slots.
fn covariance_update(model: &AugmentedModel, p: &DMatrix<f64>, active: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let mut prior = &model.a_bar * p * model.a_bar.transpose() + &model.q_bar;
    linalg::symmetrize(&mut prior);
    if active.is_empty() {
        return Ok((prior, DMatrix::zeros(model.state_dim(), 0)));
    }
    let c = model.c_bar.select_rows(active.iter());
    let v = DMatrix::from_fn(active.len(), active.len(), |i, j| model.v[(active[i], active[j])]);
    let cp = &c * &prior;
    let s = &cp * c.transpose() + &v;
    let s_inv = s.clone().cholesky().ok_or(Error::SingularSystem { group: 0 })?.inverse();
    let k = cp.transpose() * s_inv;
    let f = DMatrix::identity(model.state_dim(), model.state_dim()) - &k * &c;
    let mut post = &f * prior * f.transpose() + &k * v * k.transpose();
    linalg::symmetrize(&mut post);
    Ok((post, k))
}

/// One predict/correct step.
///
/// `m` holds a value for every slot; entries of inactive slots are ignored.
pub fn kalman_step(
    state: &mut KalmanState,
    model: &AugmentedModel,
    pattern: &[bool],
    m: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<()> {
    if pattern.len() != model.ny_bar || m.len() != model.ny_bar {
        return Err(Error::DimensionMismatch {
            left: "pattern",
            right: "C_bar",
            detail: format!("expected {} slots", model.ny_bar),
        });
    }
    let active = active_slots(pattern);
    let (p, k) = covariance_update(model, &state.p, &active)?;
    let mut x = &model.a_bar * &state.x_hat + &model.bu_bar * u;
    if !active.is_empty() {
        let c = model.c_bar.select_rows(active.iter());
        let innovation = DVector::from_fn(active.len(), |i, _| m[active[i]]) - &c * &x;
        x += k * innovation;
    }
    state.x_hat = x;
    state.p = p;
    state.flops += flops::kalman_step(model.state_dim(), active.len());
    Ok(())
}

/// Kalman covariance recursion `P ↦ P⁺` for a given availability pattern.
pub fn kalman_covariance_step(model: &AugmentedModel, p: &DMatrix<f64>, pattern: &[bool]) -> Result<DMatrix<f64>> {
    Ok(covariance_update(model, p, &active_slots(pattern))?.0)
}

#[derive(Debug, Clone)]
pub struct KalmanOptions {
    pub runs: usize,
    pub horizon: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Initial covariance `p0 · I`.
    pub p0: f64,
    /// Divergence ceiling on `tr P`, as a multiple of `tr W`.
    pub ceiling_factor: f64,
}

impl Default for KalmanOptions {
    fn default() -> Self {
        Self {
            runs: 1000,
            horizon: 500,
            burn_in: 200,
            seed: 0,
            p0: 1.0,
            ceiling_factor: 1e9,
        }
    }
}

/// Monte-Carlo estimate of `C_x E{P} C_xᵀ` for the Kalman filter.
#[derive(Debug, Clone)]
pub struct KalmanEstimate {
    /// Mean current-state covariance.
    pub p: DMatrix<f64>,
    pub trace: f64,
    /// Standard error of `trace` across runs.
    pub std_error: f64,
    pub runs: usize,
    /// Largest per-step cost seen.
    pub max_flops: u64,
}

fn check_mc(runs: usize, horizon: usize, burn_in: usize, dist: &DelayDistribution) -> Result<()> {
    if runs < 2 {
        return Err(Error::InsufficientSamples(format!("{runs} runs, need at least 2")));
    }
    if burn_in < dist.d_max() + 1 || horizon <= burn_in {
        return Err(Error::InvalidWindow(format!(
            "burn-in {burn_in} must cover the warm-up and be shorter than the horizon {horizon}"
        )));
    }
    Ok(())
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Average the Kalman covariance over random reception traces.
///
/// The covariance recursion does not depend on measured values, so only the
/// network is simulated. Uses the same network streams as
/// [`crate::simulator::monte_carlo`] for equal seeds.
pub fn kalman_expected_covariance(
    model: &AugmentedModel,
    dist: &DelayDistribution,
    opts: &KalmanOptions,
    exec: Execution,
) -> Result<KalmanEstimate> {
    check_mc(opts.runs, opts.horizon, opts.burn_in, dist)?;
    let dim = model.state_dim();
    let ceiling = opts.ceiling_factor * model.w.trace().max(f64::MIN_POSITIVE);
    let selector = model.current_state_selector();
    let window = NetworkWindow::new(dist);

    let per_run = exec.map(opts.runs, |run| -> Result<(DMatrix<f64>, u64)> {
        let mut window = window.clone();
        let mut rng = run_rng(opts.seed, run as u64, 0);
        let mut now = vec![None; dist.n_sensors()];
        let mut p = DMatrix::from_diagonal_element(dim, dim, opts.p0);
        let mut sum = DMatrix::zeros(model.n, model.n);
        let mut max_flops = 0;
        for t in 0..opts.horizon {
            window.draw(&mut rng, &mut now);
            window.push(&now);
            p = kalman_covariance_step(model, &p, window.pattern())?;
            let trace = p.trace();
            if !trace.is_finite() || trace > ceiling {
                return Err(Error::CovarianceDivergence { trace, ceiling });
            }
            max_flops = max_flops.max(flops::kalman_step(dim, window.active()));
            if t >= opts.burn_in {
                sum += &selector * &p * selector.transpose();
            }
        }
        Ok((sum / (opts.horizon - opts.burn_in) as f64, max_flops))
    });

    let mut mean = DMatrix::zeros(model.n, model.n);
    let mut traces = Vec::with_capacity(opts.runs);
    let mut max_flops = 0;
    for r in per_run {
        let (p, f) = r?;
        traces.push(p.trace());
        mean += p;
        max_flops = max_flops.max(f);
    }
    mean /= opts.runs as f64;
    let (trace, std_error) = mean_and_se(&traces);
    Ok(KalmanEstimate {
        p: mean,
        trace,
        std_error,
        runs: opts.runs,
        max_flops,
    })
}

/// Jump-observer and Kalman covariances on identical reception traces.
#[derive(Debug, Clone)]
pub struct MatchedComparison {
    /// Mean `tr(C_x P C_xᵀ)` of the jump observer.
    pub jump_trace: f64,
    pub kalman_trace: f64,
    /// Mean of the per-run difference `jump − kalman`.
    pub mean_difference: f64,
    pub std_error: f64,
    /// Smallest per-step difference seen, over all runs and steps.
    pub min_step_difference: f64,
}

/// Run both covariance recursions on the same sampled traces.
pub fn matched_comparison(
    model: &AugmentedModel,
    chain: &OutcomeChain,
    schedule: &GainSchedule,
    dist: &DelayDistribution,
    opts: &KalmanOptions,
    exec: Execution,
) -> Result<MatchedComparison> {
    check_mc(opts.runs, opts.horizon, opts.burn_in, dist)?;
    check_schedule(chain, model, schedule)?;
    let dim = model.state_dim();
    let selector = model.current_state_selector();
    let gains: Vec<DMatrix<f64>> = (0..chain.len())
        .map(|j| match schedule.gain_for(j) {
            Some(g) => masked_gain(g, chain.pattern(j)),
            None => DMatrix::zeros(dim, model.ny_bar),
        })
        .collect();
    let window = NetworkWindow::new(dist);
    let current = |p: &DMatrix<f64>| (&selector * p * selector.transpose()).trace();

    let per_run = exec.map(opts.runs, |run| -> Result<(f64, f64, f64)> {
        let mut window = window.clone();
        let mut rng = run_rng(opts.seed, run as u64, 0);
        let mut now = vec![None; dist.n_sensors()];
        let mut pk = DMatrix::from_diagonal_element(dim, dim, opts.p0);
        let mut pj = pk.clone();
        let (mut sj, mut sk, mut min_diff) = (0.0, 0.0, f64::INFINITY);
        for t in 0..opts.horizon {
            window.draw(&mut rng, &mut now);
            let theta = window.push(&now);
            pk = kalman_covariance_step(model, &pk, window.pattern())?;
            let x = &gains[theta];
            let f = DMatrix::identity(dim, dim) - x * &model.c_bar;
            let prior = &model.a_bar * &pj * model.a_bar.transpose() + &model.q_bar;
            pj = &f * prior * f.transpose() + x * &model.v * x.transpose();
            linalg::symmetrize(&mut pj);
            if t >= opts.burn_in {
                let (a, b) = (current(&pj), current(&pk));
                sj += a;
                sk += b;
                min_diff = f64::min(min_diff, a - b);
            }
        }
        let steps = (opts.horizon - opts.burn_in) as f64;
        Ok((sj / steps, sk / steps, min_diff))
    });

    let mut jump = Vec::with_capacity(opts.runs);
    let mut kalman = Vec::with_capacity(opts.runs);
    let mut diff = Vec::with_capacity(opts.runs);
    let mut min_step_difference = f64::INFINITY;
    for r in per_run {
        let (a, b, m) = r?;
        jump.push(a);
        kalman.push(b);
        diff.push(a - b);
        min_step_difference = min_step_difference.min(m);
    }
    let (mean_difference, std_error) = mean_and_se(&diff);
    Ok(MatchedComparison {
        jump_trace: mean_and_se(&jump).0,
        kalman_trace: mean_and_se(&kalman).0,
        mean_difference,
        std_error,
        min_step_difference,
    })
}
