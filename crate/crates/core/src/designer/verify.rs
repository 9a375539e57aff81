//! Stability and convergence checks for a fixed gain schedule.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg;
use crate::model::AugmentedModel;
use crate::outcome_chain::OutcomeChain;

use super::operator::{FixedPointSystem, JumpOperator};
use super::{CovarianceTuple, GainSchedule};

const BOUND_STEPS: usize = 50;
const START_SCALE: f64 = 100.0;

#[derive(Debug, Clone)]
pub struct StabilityVerdict {
    pub pass: bool,
    /// `𝒯(𝒫̄) ⪯ 𝒫̄` on every reachable state.
    pub contraction: bool,
    /// `min_j λ_min(P̄_j − T_j(𝒫̄))`.
    pub contraction_margin: f64,
    /// `𝒴̄ = (I − 𝒯)⁻¹(I)` exists and is positive definite, so `𝒯(𝒴̄) ≺ 𝒴̄`.
    pub certificate: bool,
    /// `min_j λ_min(Ȳ_j)`; negative or NaN when no certificate exists.
    pub certificate_margin: f64,
    /// Contraction factor `max_j λ_max(Ȳ_j^{-1/2} T_j(𝒴̄) Ȳ_j^{-1/2})`.
    pub gamma: f64,
    /// `𝒫_t ⪯ M_𝒫` for the first 50 iterates from `100·I`.
    pub bounded: bool,
    /// `min_{t,j} λ_min(M_j − P_{t,j})`.
    pub bound_margin: f64,
    /// `tr Σ_j P_{50,j} / tr Σ_j P_{0,j}`.
    pub growth: f64,
}

/// Check that the covariance recursion stays bounded under `schedule`.
///
/// Boundedness uses a Lyapunov certificate `𝒴̄ ≻ 0` with `𝒯(𝒴̄) = 𝒴̄ − I`.
/// From it, `𝒯(𝒴̄) ⪯ γ𝒴̄`, `𝒫₀ ⪯ a𝒴̄` and `U ⪯ b𝒴̄` give
/// `𝒫_t ⪯ (a + b/(1−γ))𝒴̄ = M_𝒫` for every `t`.
pub fn verify_stability(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    schedule: &GainSchedule,
    p_bar: &CovarianceTuple,
) -> crate::Result<StabilityVerdict> {
    let op = JumpOperator::new(chain, model, schedule)?;
    let dim = model.state_dim();
    let reachable: Vec<usize> = (0..chain.len()).filter(|&j| chain.is_reachable(j)).collect();

    let tp = op.noise_free(p_bar);
    let contraction_margin = reachable
        .iter()
        .map(|&j| linalg::min_eigenvalue(&(&p_bar.p[j] - &tp.p[j])))
        .fold(f64::INFINITY, f64::min);
    let contraction = reachable.iter().all(|&j| linalg::psd_leq(&tp.p[j], &p_bar.p[j]));

    let system = FixedPointSystem::new(&op);
    let cert = system.solve(&system.identity_tuple());
    let certificate_margin = cert.as_ref().map_or(f64::NAN, |y| {
        reachable
            .iter()
            .map(|&j| linalg::min_eigenvalue(&y.p[j]))
            .fold(f64::INFINITY, f64::min)
    });
    let certificate = certificate_margin > 0.0;

    let mut p = CovarianceTuple::scaled_identity(chain.len(), dim, START_SCALE);
    for j in 0..chain.len() {
        if !chain.is_reachable(j) {
            p.p[j].fill(0.0);
        }
    }
    let start_trace = p.objective(&chain.pi);

    let mut gamma = f64::NAN;
    let mut bound: Option<Vec<DMatrix<f64>>> = None;
    if let (true, Some(y)) = (certificate, &cert) {
        let ty = op.noise_free(y);
        let offset = op.offset();
        let mut a: f64 = 0.0;
        let mut b: f64 = 0.0;
        gamma = 0.0;
        for &j in &reachable {
            let eig = y.p[j].clone().symmetric_eigen();
            let inv_sqrt = &eig.eigenvectors
                * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
                * eig.eigenvectors.transpose();
            let rel = |m: &DMatrix<f64>| linalg::max_eigenvalue(&(&inv_sqrt * m * &inv_sqrt));
            gamma = gamma.max(rel(&ty.p[j]));
            a = a.max(rel(&p.p[j]));
            b = b.max(rel(&offset.p[j]));
        }
        if gamma < 1.0 {
            let scale = a + b / (1.0 - gamma);
            bound = Some(y.p.iter().map(|m| m * scale).collect());
        }
    }

    let mut bound_margin = f64::INFINITY;
    for _ in 0..=BOUND_STEPS {
        if let Some(m) = &bound {
            for &j in &reachable {
                bound_margin = bound_margin.min(linalg::min_eigenvalue(&(&m[j] - &p.p[j])));
            }
        }
        p = op.apply(&p);
    }
    let growth = p.objective(&chain.pi) / start_trace;
    let bounded = match &bound {
        Some(m) => {
            bound_margin >= -linalg::psd_tolerance(&m[reachable[0]]) && growth.is_finite()
        }
        None => {
            bound_margin = f64::NAN;
            false
        }
    };

    Ok(StabilityVerdict {
        pass: contraction && certificate && bounded,
        contraction,
        contraction_margin,
        certificate,
        certificate_margin,
        gamma,
        bounded,
        bound_margin,
        growth,
    })
}

#[derive(Debug, Clone)]
pub struct FixedPointOptions {
    /// Stop when successive iterates differ by less than this (relative Frobenius).
    pub step_tol: f64,
    pub max_iter: usize,
    /// Required agreement of the three limits (relative Frobenius).
    pub agreement: f64,
    /// Number of initial from-zero steps checked for PSD monotonicity.
    pub monotone_steps: usize,
    pub seed: u64,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            step_tol: 1e-14,
            max_iter: 200_000,
            agreement: 1e-6,
            monotone_steps: 500,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPointVerdict {
    pub pass: bool,
    /// Largest pairwise relative distance between the three limits.
    pub max_distance: f64,
    /// Iterations used from `0`, `𝒫̄ + Δ` and `100·I`.
    pub iterations: [usize; 3],
    pub converged: [bool; 3],
    /// The from-zero iterates were nondecreasing in the PSD order.
    pub monotone_from_zero: bool,
    /// Limit reached from zero.
    pub limit: CovarianceTuple,
}

fn iterate(op: &JumpOperator<'_>, mut p: CovarianceTuple, opts: &FixedPointOptions, mut check: impl FnMut(usize, &CovarianceTuple, &CovarianceTuple)) -> (CovarianceTuple, usize, bool) {
    for k in 1..=opts.max_iter {
        let next = op.apply(&p);
        check(k, &p, &next);
        let step = next.relative_distance(&p);
        p = next;
        if !step.is_finite() {
            return (p, k, false);
        }
        if step < opts.step_tol {
            return (p, k, true);
        }
    }
    (p, opts.max_iter, false)
}

/// Iterate `𝔈` from three starting points and check they share one limit.
pub fn verify_fixed_point(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    schedule: &GainSchedule,
    opts: &FixedPointOptions,
) -> crate::Result<FixedPointVerdict> {
    let op = JumpOperator::new(chain, model, schedule)?;
    let dim = model.state_dim();
    let states = chain.len();

    let mut monotone = true;
    let (from_zero, it0, c0) = iterate(&op, CovarianceTuple::zeros(states, dim), opts, |k, prev, next| {
        if monotone && k <= opts.monotone_steps {
            monotone = (0..states)
                .filter(|&j| chain.is_reachable(j))
                .all(|j| linalg::psd_leq(&prev.p[j], &next.p[j]));
        }
    });

    let system = FixedPointSystem::new(&op);
    let designed = system
        .solve(&op.offset())
        .unwrap_or_else(|| from_zero.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let perturbed = CovarianceTuple {
        p: designed
            .p
            .iter()
            .enumerate()
            .map(|(j, m)| {
                if !chain.is_reachable(j) {
                    return m.clone();
                }
                let g = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
                m + &g * g.transpose()
            })
            .collect(),
    };
    let (from_perturbed, it1, c1) = iterate(&op, perturbed, opts, |_, _, _| {});
    let (from_large, it2, c2) = iterate(&op, CovarianceTuple::scaled_identity(states, dim, START_SCALE), opts, |_, _, _| {});

    let limits = [&from_zero, &from_perturbed, &from_large];
    let mut max_distance: f64 = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            if a != b {
                let d = limits[a].relative_distance(limits[b]);
                max_distance = if d.is_finite() { max_distance.max(d) } else { f64::INFINITY };
            }
        }
    }
    let converged = [c0, c1, c2];
    Ok(FixedPointVerdict {
        pass: converged.iter().all(|&c| c) && max_distance <= opts.agreement,
        max_distance,
        iterations: [it0, it1, it2],
        converged,
        monotone_from_zero: monotone,
        limit: from_zero,
    })
}
