//! Gain synthesis.
//!
//! Two phases:
//!
//! 1. *Value iteration.* Starting from `𝒫 = 0` (or a supplied tuple), every
//!    group gain is set to the minimizer of the one-step objective
//!    `Σ_{j∈group} π_j tr 𝔈_j(𝒫)` and then `𝒫 ← 𝔈(𝒫)`, until `𝒫` settles.
//!    For per-state gains this is the coupled Riccati iteration and already
//!    lands on the optimum.
//! 2. *Refinement.* For shared gains the one-step minimizer ignores how a
//!    gain shapes future covariances, so the objective
//!    `J(𝓛) = Σ_j π_j tr P̄_j(𝓛)` at the exact fixed point `P̄(𝓛)` is
//!    descended directly. The step solves the quadratic model
//!    `Σ_j tr(Ψ_j 𝔈_j(P̄; L))` whose gradient matches `∇J`, with `Ψ` the
//!    adjoint solution of `Ψ = 𝒯*(Ψ) + π ⊗ I`, followed by a backtracking
//!    line search. `J` is therefore nonincreasing along the trace.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::AugmentedModel;
use crate::outcome_chain::OutcomeChain;

use super::operator::{FixedPointSystem, JumpOperator};
use super::{group_assignment, CovarianceTuple, GainSchedule, Grouping, Strategy};

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial covariance tuple for value iteration (default zero).
    pub init: Option<CovarianceTuple>,
    /// Additional starting gains for refinement, e.g. a coarser design.
    pub warm_start: Option<GainSchedule>,
    /// Divergence ceiling as a multiple of `tr(W)`.
    pub ceiling_factor: f64,
    /// Run the refinement phase.
    pub refine: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 5000,
            init: None,
            warm_start: None,
            ceiling_factor: 1e9,
            refine: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisReport {
    pub value_iterations: usize,
    pub value_converged: bool,
    pub refinement_iterations: usize,
    /// Final `tr(Σ_j π_j P̄_j)`.
    pub objective: f64,
    /// Objective of the gains after each refinement step (first entry: start).
    pub objective_trace: Vec<f64>,
    /// `max_j ‖𝔈_j(P̄) − P̄_j‖_F / (1 + ‖P̄_j‖_F)`.
    pub residual: f64,
    pub converged: bool,
    /// Which starting point the refinement began from.
    pub start: &'static str,
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub schedule: GainSchedule,
    pub covariance: CovarianceTuple,
    pub report: SynthesisReport,
}

/// `S̃_j = Σ_i w_ij (Ā P_i Āᵀ + Q̄)` for reachable `j`.
pub fn predicted_covariances(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    p: &CovarianceTuple,
) -> Vec<Option<DMatrix<f64>>> {
    let dim = model.state_dim();
    (0..chain.len())
        .map(|j| {
            if !chain.is_reachable(j) {
                return None;
            }
            let mut mixed = DMatrix::zeros(dim, dim);
            let mut total = 0.0;
            for &(i, w) in &chain.backward[j] {
                mixed += &p.p[i] * w;
                total += w;
            }
            let mut s = &model.a_bar * mixed * model.a_bar.transpose() + &model.q_bar * total;
            linalg::symmetrize(&mut s);
            Some(s)
        })
        .collect()
}

struct GroupTerms {
    /// Union of active slots over reachable members.
    active: Vec<usize>,
    /// Per reachable member: (state, M_j, R_j) restricted to `active`.
    terms: Vec<(usize, DMatrix<f64>, DMatrix<f64>)>,
}

fn group_terms(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    grouping: &Grouping,
    predicted: &[Option<DMatrix<f64>>],
    group: usize,
) -> GroupTerms {
    let members: Vec<usize> = (0..chain.len())
        .filter(|&j| grouping[j] == Some(group) && chain.is_reachable(j))
        .collect();
    let mut active: Vec<usize> = members.iter().flat_map(|&j| chain.active_slots(j)).collect();
    active.sort_unstable();
    active.dedup();

    let terms = members
        .iter()
        .map(|&j| {
            let s = predicted[j].as_ref().expect("reachable member");
            let pattern = chain.pattern(j);
            let k = active.len();
            let mut m = DMatrix::zeros(k, k);
            let mut r = DMatrix::zeros(model.state_dim(), k);
            let sc = s * model.c_bar.transpose();
            for (a, &slot_a) in active.iter().enumerate() {
                if !pattern[slot_a] {
                    continue;
                }
                r.column_mut(a).copy_from(&sc.column(slot_a));
                for (b, &slot_b) in active.iter().enumerate() {
                    if pattern[slot_b] {
                        let cs = model.c_bar.row(slot_a) * sc.column(slot_b);
                        m[(a, b)] = cs[(0, 0)] + model.v[(slot_a, slot_b)];
                    }
                }
            }
            (j, m, r)
        })
        .collect();
    GroupTerms { active, terms }
}

fn expand(model: &AugmentedModel, active: &[usize], reduced: &DMatrix<f64>) -> DMatrix<f64> {
    let mut gain = DMatrix::zeros(model.state_dim(), model.ny_bar);
    for (a, &slot) in active.iter().enumerate() {
        gain.column_mut(slot).copy_from(&reduced.column(a));
    }
    gain
}

fn greedy_gain(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    grouping: &Grouping,
    predicted: &[Option<DMatrix<f64>>],
    group: usize,
) -> Result<DMatrix<f64>> {
    let GroupTerms { active, terms } = group_terms(chain, model, grouping, predicted, group);
    if terms.is_empty() {
        return Ok(DMatrix::zeros(model.state_dim(), model.ny_bar));
    }
    let k = active.len();
    let mut m = DMatrix::zeros(k, k);
    let mut r = DMatrix::zeros(model.state_dim(), k);
    for (j, mj, rj) in &terms {
        m += mj * chain.pi[*j];
        r += rj * chain.pi[*j];
    }
    let inv = linalg::spd_inverse(&m).ok_or(Error::SingularSystem { group })?;
    Ok(expand(model, &active, &(r * inv)))
}

/// Minimizer of `Σ_j tr(Ψ_j 𝔈_j)` over one group's gain:
/// solves `Σ_j Ψ_j L M_j = Σ_j Ψ_j R_j`.
fn weighted_gain(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    grouping: &Grouping,
    predicted: &[Option<DMatrix<f64>>],
    psi: &CovarianceTuple,
    group: usize,
) -> Result<DMatrix<f64>> {
    let GroupTerms { active, terms } = group_terms(chain, model, grouping, predicted, group);
    let dim = model.state_dim();
    if terms.is_empty() {
        return Ok(DMatrix::zeros(dim, model.ny_bar));
    }
    let k = active.len();
    let mut system = DMatrix::zeros(dim * k, dim * k);
    let mut rhs = DMatrix::zeros(dim, k);
    for (j, mj, rj) in &terms {
        system += mj.kronecker(&psi.p[*j]);
        rhs += &psi.p[*j] * rj;
    }
    linalg::symmetrize(&mut system);
    let inv = linalg::spd_inverse(&system).ok_or(Error::SingularSystem { group })?;
    let vec = inv * DVector::from_column_slice(rhs.as_slice());
    let reduced = DMatrix::from_column_slice(dim, k, vec.as_slice());
    Ok(expand(model, &active, &reduced))
}

/// One-step optimal gain of a group: minimizes `Σ_{j∈group} π_j tr 𝔈_j(𝒫)`.
///
/// Columns of slots never active in the group are zero; an all-unreachable
/// group gets the zero gain.
pub fn group_gain_update(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    grouping: &Grouping,
    p: &CovarianceTuple,
    group: usize,
) -> Result<DMatrix<f64>> {
    if grouping.len() != chain.len() {
        return Err(Error::ScheduleMismatch("grouping length differs from chain".into()));
    }
    let predicted = predicted_covariances(chain, model, p);
    greedy_gain(chain, model, grouping, &predicted, group)
}

fn group_count(grouping: &Grouping) -> usize {
    grouping.iter().flatten().map(|g| g + 1).max().unwrap_or(0)
}

fn state_gains<'g>(grouping: &Grouping, gains: &'g [DMatrix<f64>]) -> Vec<Option<&'g DMatrix<f64>>> {
    grouping.iter().map(|g| g.map(|g| &gains[g])).collect()
}

struct Evaluation {
    p: CovarianceTuple,
    objective: f64,
    system: FixedPointSystem,
}

/// Exact fixed point for fixed gains; `None` unless the noise-free operator
/// is a contraction, certified by `(I − 𝒯)⁻¹(I) ≻ 0`.
fn evaluate(chain: &OutcomeChain, model: &AugmentedModel, grouping: &Grouping, gains: &[DMatrix<f64>]) -> Option<Evaluation> {
    let op = JumpOperator::from_state_gains(chain, model, &state_gains(grouping, gains));
    let system = FixedPointSystem::new(&op);
    let cert = system.solve(&system.identity_tuple())?;
    if system
        .reachable()
        .iter()
        .any(|&j| linalg::min_eigenvalue(&cert.p[j]) <= 0.0)
    {
        return None;
    }
    let p = system.solve(&op.offset())?;
    let objective = p.objective(&chain.pi);
    objective.is_finite().then_some(Evaluation { p, objective, system })
}

struct ValueIteration {
    gains: Vec<DMatrix<f64>>,
    p: CovarianceTuple,
    iterations: usize,
    converged: bool,
    diverged: bool,
}

fn value_iteration(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    grouping: &Grouping,
    opts: &SynthesisOptions,
    ceiling: f64,
) -> Result<ValueIteration> {
    let dim = model.state_dim();
    let groups = group_count(grouping);
    let mut p = opts.init.clone().unwrap_or_else(|| CovarianceTuple::zeros(chain.len(), dim));
    let mut objective = p.objective(&chain.pi);
    let mut gains = vec![DMatrix::zeros(dim, model.ny_bar); groups];
    let mut iterations = 0;
    let mut converged = false;
    let mut diverged = false;
    while iterations < opts.max_iter {
        iterations += 1;
        let predicted = predicted_covariances(chain, model, &p);
        for (g, gain) in gains.iter_mut().enumerate() {
            *gain = greedy_gain(chain, model, grouping, &predicted, g)?;
        }
        let next = JumpOperator::from_state_gains(chain, model, &state_gains(grouping, &gains)).apply(&p);
        let next_objective = next.objective(&chain.pi);
        if !next_objective.is_finite() || next_objective > ceiling {
            diverged = true;
            break;
        }
        let step = next.relative_distance(&p);
        let change = (next_objective - objective).abs();
        p = next;
        objective = next_objective;
        if step < opts.tol && change < opts.tol * (1.0 + objective) {
            converged = true;
            break;
        }
    }
    Ok(ValueIteration {
        gains,
        p,
        iterations,
        converged,
        diverged,
    })
}

/// Average another schedule's per-state gains over each group, weighted by `π`.
fn project(chain: &OutcomeChain, grouping: &Grouping, source: &GainSchedule, dim: usize, ny_bar: usize) -> Vec<DMatrix<f64>> {
    let groups = group_count(grouping);
    let mut sums = vec![DMatrix::zeros(dim, ny_bar); groups];
    let mut weights = vec![0.0; groups];
    for (j, g) in grouping.iter().enumerate() {
        if let (Some(g), Some(src)) = (g, source.grouping.get(j).copied().flatten()) {
            if chain.is_reachable(j) {
                sums[*g] += &source.gains[src] * chain.pi[j];
                weights[*g] += chain.pi[j];
            }
        }
    }
    sums.into_iter()
        .zip(weights)
        .map(|(s, w)| if w > 0.0 { s / w } else { s })
        .collect()
}

/// Zero the columns of slots that no reachable member of a group uses.
fn canonicalize(chain: &OutcomeChain, grouping: &Grouping, gains: &mut [DMatrix<f64>]) {
    for (g, gain) in gains.iter_mut().enumerate() {
        let mut used = vec![false; gain.ncols()];
        for j in (0..chain.len()).filter(|&j| grouping[j] == Some(g) && chain.is_reachable(j)) {
            for slot in chain.active_slots(j) {
                used[slot] = true;
            }
        }
        for (k, &u) in used.iter().enumerate() {
            if !u {
                gain.column_mut(k).fill(0.0);
            }
        }
    }
}

fn refine(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    grouping: &Grouping,
    mut gains: Vec<DMatrix<f64>>,
    mut current: Evaluation,
    opts: &SynthesisOptions,
) -> Result<(Vec<DMatrix<f64>>, Evaluation, Vec<f64>, usize, bool)> {
    let groups = group_count(grouping);
    let mut trace = vec![current.objective];
    let mut iterations = 0;
    let mut converged = false;
    let weights = CovarianceTuple {
        p: chain
            .pi
            .iter()
            .map(|&p| DMatrix::from_diagonal_element(model.state_dim(), model.state_dim(), p))
            .collect(),
    };
    while iterations < opts.max_iter {
        iterations += 1;
        let Some(psi) = current.system.solve_adjoint(&weights) else {
            break;
        };
        let predicted = predicted_covariances(chain, model, &current.p);
        let target: Vec<DMatrix<f64>> = (0..groups)
            .map(|g| weighted_gain(chain, model, grouping, &predicted, &psi, g))
            .collect::<Result<_>>()?;

        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let candidate: Vec<DMatrix<f64>> = gains
                .iter()
                .zip(&target)
                .map(|(l, t)| l + (t - l) * step)
                .collect();
            if let Some(eval) = evaluate(chain, model, grouping, &candidate) {
                if eval.objective < current.objective {
                    accepted = Some((candidate, eval));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((next_gains, next)) = accepted else {
            converged = true;
            break;
        };
        let change = current.objective - next.objective;
        let moved = next.p.relative_distance(&current.p);
        gains = next_gains;
        current = next;
        trace.push(current.objective);
        if change < opts.tol * (1.0 + current.objective) && moved < opts.tol {
            converged = true;
            break;
        }
    }
    Ok((gains, current, trace, iterations, converged))
}

/// Design the gains of a preset strategy.
pub fn synthesize(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    strategy: Strategy,
    opts: &SynthesisOptions,
) -> Result<Synthesis> {
    let grouping = group_assignment(chain, strategy)?;
    synthesize_grouping(chain, model, strategy, grouping, opts)
}

/// Design the gains of an arbitrary grouping.
pub fn synthesize_grouping(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    strategy: Strategy,
    grouping: Grouping,
    opts: &SynthesisOptions,
) -> Result<Synthesis> {
    if grouping.len() != chain.len() || chain.layout.ny_bar() != model.ny_bar {
        return Err(Error::ScheduleMismatch("grouping or model does not fit the chain".into()));
    }
    let ceiling = opts.ceiling_factor * model.w.trace().max(f64::MIN_POSITIVE);
    let dim = model.state_dim();

    let vi = value_iteration(chain, model, &grouping, opts, ceiling)?;

    let mut candidates: Vec<(&'static str, Vec<DMatrix<f64>>)> = vec![("value-iteration", vi.gains.clone())];
    if let Some(warm) = &opts.warm_start {
        if warm.grouping.len() == chain.len() && warm.gains.iter().all(|g| g.shape() == (dim, model.ny_bar)) {
            candidates.push(("warm-start", project(chain, &grouping, warm, dim, model.ny_bar)));
        }
    }

    let mut best: Option<(&'static str, Vec<DMatrix<f64>>, Evaluation)> = None;
    for (name, gains) in candidates {
        if let Some(eval) = evaluate(chain, model, &grouping, &gains) {
            if best.as_ref().is_none_or(|(_, _, b)| eval.objective < b.objective) {
                best = Some((name, gains, eval));
            }
        }
    }
    if best.is_none() && group_count(&grouping) < chain.len() {
        // fall back to averaging the per-state design over each group
        let s5 = group_assignment(chain, Strategy::S5)?;
        let per_state = value_iteration(chain, model, &s5, opts, ceiling)?;
        let source = GainSchedule {
            strategy: Strategy::S5,
            grouping: s5,
            gains: per_state.gains,
        };
        let gains = project(chain, &grouping, &source, dim, model.ny_bar);
        if let Some(eval) = evaluate(chain, model, &grouping, &gains) {
            best = Some(("per-state-projection", gains, eval));
        }
    }
    let Some((start, gains, eval)) = best else {
        let objective = if vi.diverged { f64::INFINITY } else { vi.p.objective(&chain.pi) };
        return Err(Error::Divergence { objective, ceiling });
    };
    if eval.objective > ceiling {
        return Err(Error::Divergence {
            objective: eval.objective,
            ceiling,
        });
    }

    let (mut gains, eval, trace, refinement_iterations, refine_converged) = if opts.refine {
        refine(chain, model, &grouping, gains, eval, opts)?
    } else {
        let objective = eval.objective;
        (gains, eval, vec![objective], 0, vi.converged)
    };
    canonicalize(chain, &grouping, &mut gains);

    let schedule = GainSchedule {
        strategy,
        grouping,
        gains,
    };
    let op = JumpOperator::new(chain, model, &schedule)?;
    let residual = op.apply(&eval.p).relative_distance(&eval.p);
    Ok(Synthesis {
        schedule,
        covariance: eval.p,
        report: SynthesisReport {
            value_iterations: vi.iterations,
            value_converged: vi.converged,
            refinement_iterations,
            objective: eval.objective,
            objective_trace: trace,
            residual,
            converged: refine_converged,
            start,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_augmented, PlantModel};
    use crate::outcome_chain::DelayDistribution;
    use crate::reference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(a: f64, c: f64, q: f64, r: f64) -> PlantModel {
        PlantModel {
            a: DMatrix::from_element(1, 1, a),
            bu: DMatrix::from_element(1, 1, 1.0),
            bw: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, c),
            w: DMatrix::from_element(1, 1, q),
            sigma2: vec![r],
        }
    }

    #[test]
    fn single_state_gain_is_kalman_form() {
        let model = build_augmented(&scalar(0.9, 1.0, 1.0, 0.5), 0).unwrap();
        let chain = OutcomeChain::build(&DelayDistribution::new(vec![vec![0.8]]).unwrap()).unwrap();
        let grouping = vec![None, Some(0)];
        let p = CovarianceTuple {
            p: vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 0.7)],
        };
        let gain = group_gain_update(&chain, &model, &grouping, &p, 0).unwrap();
        let s = 0.81 * (0.2 * 2.0 + 0.8 * 0.7) + 1.0;
        assert!((gain[(0, 0)] - s / (s + 0.5)).abs() < 1e-14);
    }

    #[test]
    fn identical_members_share_the_single_state_gain() {
        // i.i.d. reception with d_max = 0: every received state sees the same S̃
        let model = build_augmented(&scalar(1.1, 0.7, 0.3, 0.2), 0).unwrap();
        let chain = OutcomeChain::build(&DelayDistribution::new(vec![vec![0.6]]).unwrap()).unwrap();
        let p = CovarianceTuple {
            p: vec![DMatrix::from_element(1, 1, 1.5), DMatrix::from_element(1, 1, 0.4)],
        };
        let a = group_gain_update(&chain, &model, &vec![None, Some(0)], &p, 0).unwrap();
        let s = 1.21 * (0.4 * 1.5 + 0.6 * 0.4) + 0.3;
        assert!((a[(0, 0)] - s * 0.7 / (0.49 * s + 0.2)).abs() < 1e-14);
    }

    #[test]
    fn group_gain_beats_random_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let plant = PlantModel {
            a: DMatrix::from_row_slice(2, 2, &[0.9, 0.3, -0.2, 0.8]),
            bu: DMatrix::from_element(2, 1, 1.0),
            bw: DMatrix::identity(2, 2),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.5]),
            w: DMatrix::from_diagonal_element(2, 2, 0.3),
            sigma2: vec![0.1],
        };
        let model = build_augmented(&plant, 1).unwrap();
        let chain = OutcomeChain::build(&DelayDistribution::new(vec![vec![0.5, 0.3]]).unwrap()).unwrap();
        // three reachable receiving states share one gain
        let grouping = vec![None, Some(0), None, Some(0), Some(0), None];
        let p = CovarianceTuple {
            p: (0..6)
                .map(|_| {
                    let g = DMatrix::from_fn(4, 4, |_, _| rng.random_range(-1.0..1.0));
                    &g * g.transpose()
                })
                .collect(),
        };
        let gain = group_gain_update(&chain, &model, &grouping, &p, 0).unwrap();
        let objective = |l: &DMatrix<f64>| -> f64 {
            let schedule = GainSchedule {
                strategy: Strategy::Custom,
                grouping: grouping.clone(),
                gains: vec![l.clone()],
            };
            let next = JumpOperator::new(&chain, &model, &schedule).unwrap().apply(&p);
            [1, 3, 4].iter().map(|&j| chain.pi[j] * next.p[j].trace()).sum()
        };
        let best = objective(&gain);
        for _ in 0..1000 {
            let delta = DMatrix::from_fn(4, 2, |_, _| rng.random_range(-0.05..0.05));
            assert!(objective(&(&gain + delta)) >= best - 1e-12);
        }
    }

    #[test]
    fn scalar_without_dropouts_recovers_riccati() {
        let (a, c, q, r) = (0.95, 1.0, 0.5, 0.3);
        let model = build_augmented(&scalar(a, c, q, r), 0).unwrap();
        let chain = OutcomeChain::build(&DelayDistribution::new(vec![vec![1.0]]).unwrap()).unwrap();
        let out = synthesize(&chain, &model, Strategy::S5, &SynthesisOptions::default()).unwrap();
        // filtered Riccati: P = S − S²c²/(c²S + r), S = a²P + q, iterate to convergence
        let mut p: f64 = 0.0;
        for _ in 0..10_000 {
            let s = a * a * p + q;
            p = s - s * s * c * c / (c * c * s + r);
        }
        let s = a * a * p + q;
        let k = s * c / (c * c * s + r);
        assert!((out.report.objective - p).abs() < 1e-10);
        assert!((out.schedule.gains[0][(0, 0)] - k).abs() < 1e-9);
    }

    #[test]
    fn trace_is_monotone_and_residual_small() {
        let chain = OutcomeChain::build(&reference::delays()).unwrap();
        let model = build_augmented(&reference::plant(0.25), 1).unwrap();
        for s in [Strategy::S1, Strategy::S3] {
            let out = synthesize(&chain, &model, s, &SynthesisOptions::default()).unwrap();
            for w in out.report.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-10);
            }
            assert!(out.report.residual < 1e-8);
        }
    }
}
