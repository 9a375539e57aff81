use nalgebra::{DMatrix, DVector, LU, Dyn};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg;
use crate::model::AugmentedModel;
use crate::outcome_chain::OutcomeChain;

use super::{CovarianceTuple, GainSchedule};

/// The covariance map `𝔈` for a fixed set of per-state gains.
///
/// For each reachable state `j`:
/// `𝔈_j(𝒫) = Σ_i w_ij [F_j (Ā P_i Āᵀ + Q̄) F_jᵀ + X_j V X_jᵀ]`
/// with `w_ij = p_ij π_i / π_j`, `X_j = L_j f(ϑ_j)`, `F_j = I − X_j C̄`.
/// Unreachable states map to the zero matrix.
pub struct JumpOperator<'a> {
    chain: &'a OutcomeChain,
    /// `F_j Ā`.
    closed: Vec<DMatrix<f64>>,
    /// Constant offset `U_j = (Σ_i w_ij) F_j Q̄ F_jᵀ + X_j V X_jᵀ`.
    offset: Vec<DMatrix<f64>>,
    dim: usize,
    exec: Execution,
}

pub(crate) fn check_schedule(chain: &OutcomeChain, model: &AugmentedModel, schedule: &GainSchedule) -> Result<()> {
    if schedule.grouping.len() != chain.len() {
        return Err(Error::ScheduleMismatch(format!(
            "schedule covers {} states, chain has {}",
            schedule.grouping.len(),
            chain.len()
        )));
    }
    if chain.layout.ny_bar() != model.ny_bar {
        return Err(Error::ScheduleMismatch(format!(
            "chain has {} measurement slots, model has {}",
            chain.layout.ny_bar(),
            model.ny_bar
        )));
    }
    if let Some(g) = schedule.grouping.iter().flatten().find(|&&g| g >= schedule.gains.len()) {
        return Err(Error::ScheduleMismatch(format!("group {g} has no gain matrix")));
    }
    for gain in &schedule.gains {
        if gain.shape() != (model.state_dim(), model.ny_bar) {
            return Err(Error::DimensionMismatch {
                left: "gain",
                right: "augmented model",
                detail: format!(
                    "gain is {}x{}, expected {}x{}",
                    gain.nrows(),
                    gain.ncols(),
                    model.state_dim(),
                    model.ny_bar
                ),
            });
        }
    }
    Ok(())
}

/// `L f(ϑ)`: the gain with columns of inactive slots zeroed.
pub(crate) fn masked_gain(gain: &DMatrix<f64>, pattern: &[bool]) -> DMatrix<f64> {
    let mut x = gain.clone();
    for (k, &on) in pattern.iter().enumerate() {
        if !on {
            x.column_mut(k).fill(0.0);
        }
    }
    x
}

impl<'a> JumpOperator<'a> {
    pub fn new(chain: &'a OutcomeChain, model: &'a AugmentedModel, schedule: &GainSchedule) -> Result<Self> {
        check_schedule(chain, model, schedule)?;
        let gains: Vec<Option<&DMatrix<f64>>> = (0..chain.len()).map(|j| schedule.gain_for(j)).collect();
        Ok(Self::from_state_gains(chain, model, &gains))
    }

    /// Build from one (optional) gain per state; `None` is the zero gain.
    pub(crate) fn from_state_gains(
        chain: &'a OutcomeChain,
        model: &'a AugmentedModel,
        gains: &[Option<&DMatrix<f64>>],
    ) -> Self {
        let dim = model.state_dim();
        let identity = DMatrix::<f64>::identity(dim, dim);
        let mut closed = Vec::with_capacity(chain.len());
        let mut offset = Vec::with_capacity(chain.len());
        for j in 0..chain.len() {
            let total: f64 = chain.backward[j].iter().map(|&(_, w)| w).sum();
            let (f, injected) = match gains[j] {
                Some(gain) if !chain.is_empty_reception(j) => {
                    let x = masked_gain(gain, chain.pattern(j));
                    let f = &identity - &x * &model.c_bar;
                    let injected = &x * &model.v * x.transpose();
                    (f, injected)
                }
                _ => (identity.clone(), DMatrix::zeros(dim, dim)),
            };
            let mut u = &f * &model.q_bar * f.transpose() * total + injected;
            if !chain.is_reachable(j) {
                u.fill(0.0);
            }
            linalg::symmetrize(&mut u);
            closed.push(&f * &model.a_bar);
            offset.push(u);
        }
        Self {
            chain,
            closed,
            offset,
            dim,
            exec: Execution::Sequential,
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn chain(&self) -> &OutcomeChain {
        self.chain
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `F_j Ā` for state `j`.
    pub fn closed_loop(&self, j: usize) -> &DMatrix<f64> {
        &self.closed[j]
    }

    /// The constant part `U = 𝔈(𝒫) − 𝒯(𝒫)`.
    pub fn offset(&self) -> CovarianceTuple {
        CovarianceTuple { p: self.offset.clone() }
    }

    fn noise_free_at(&self, p: &CovarianceTuple, j: usize) -> DMatrix<f64> {
        let mut mixed = DMatrix::zeros(self.dim, self.dim);
        for &(i, w) in &self.chain.backward[j] {
            mixed += &p.p[i] * w;
        }
        let g = &self.closed[j];
        g * mixed * g.transpose()
    }

    /// `𝒯(𝒴)`.
    pub fn noise_free(&self, y: &CovarianceTuple) -> CovarianceTuple {
        let p = self.exec.map(self.chain.len(), |j| {
            let mut m = self.noise_free_at(y, j);
            linalg::symmetrize(&mut m);
            m
        });
        CovarianceTuple { p }
    }

    /// `𝔈(𝒫)`.
    pub fn apply(&self, p: &CovarianceTuple) -> CovarianceTuple {
        let out = self.exec.map(self.chain.len(), |j| {
            let mut m = self.noise_free_at(p, j) + &self.offset[j];
            linalg::symmetrize(&mut m);
            m
        });
        CovarianceTuple { p: out }
    }

    /// Adjoint `𝒯*` with respect to `⟨𝒳, 𝒴⟩ = Σ_j tr(X_j Y_j)`:
    /// `𝒯*_i(Ψ) = Σ_j w_ij (F_j Ā)ᵀ Ψ_j (F_j Ā)`.
    pub fn noise_free_adjoint(&self, psi: &CovarianceTuple) -> CovarianceTuple {
        let mut out = vec![DMatrix::zeros(self.dim, self.dim); self.chain.len()];
        for j in 0..self.chain.len() {
            let g = &self.closed[j];
            let pulled = g.transpose() * &psi.p[j] * g;
            for &(i, w) in &self.chain.backward[j] {
                out[i] += &pulled * w;
            }
        }
        for m in &mut out {
            linalg::symmetrize(m);
        }
        CovarianceTuple { p: out }
    }
}

/// One step of the covariance recursion, `𝔈(𝒫)`.
pub fn covariance_step(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    schedule: &GainSchedule,
    p: &CovarianceTuple,
) -> Result<CovarianceTuple> {
    check_tuple(chain, model, p)?;
    Ok(JumpOperator::new(chain, model, schedule)?.apply(p))
}

/// Noise-free part of the recursion, `𝒯(𝒴)`.
pub fn lyapunov_step(
    chain: &OutcomeChain,
    model: &AugmentedModel,
    schedule: &GainSchedule,
    y: &CovarianceTuple,
) -> Result<CovarianceTuple> {
    check_tuple(chain, model, y)?;
    Ok(JumpOperator::new(chain, model, schedule)?.noise_free(y))
}

fn check_tuple(chain: &OutcomeChain, model: &AugmentedModel, p: &CovarianceTuple) -> Result<()> {
    if p.len() != chain.len() || p.p.iter().any(|m| m.shape() != (model.state_dim(), model.state_dim())) {
        return Err(Error::DimensionMismatch {
            left: "covariance tuple",
            right: "chain/model",
            detail: format!(
                "expected {} matrices of size {}",
                chain.len(),
                model.state_dim()
            ),
        });
    }
    Ok(())
}

/// Symmetric vectorization with the isometric `√2` scaling of off-diagonals.
struct SymBasis {
    n: usize,
    pairs: Vec<(usize, usize)>,
}

impl SymBasis {
    fn new(n: usize) -> Self {
        let pairs = (0..n).flat_map(|r| (r..n).map(move |c| (r, c))).collect();
        Self { n, pairs }
    }

    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn vec_into(&self, m: &DMatrix<f64>, out: &mut [f64]) {
        for (k, &(r, c)) in self.pairs.iter().enumerate() {
            out[k] = if r == c {
                m[(r, r)]
            } else {
                std::f64::consts::SQRT_2 * 0.5 * (m[(r, c)] + m[(c, r)])
            };
        }
    }

    fn mat(&self, v: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (k, &(r, c)) in self.pairs.iter().enumerate() {
            if r == c {
                m[(r, r)] = v[k];
            } else {
                let x = v[k] * std::f64::consts::FRAC_1_SQRT_2;
                m[(r, c)] = x;
                m[(c, r)] = x;
            }
        }
        m
    }

    /// Matrix of `Y ↦ G Y Gᵀ` in this basis.
    fn congruence(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.len();
        let mut k = DMatrix::zeros(d, d);
        let mut col = vec![0.0; d];
        for (p, &(r, c)) in self.pairs.iter().enumerate() {
            let gr = g.column(r);
            let gc = g.column(c);
            let image = if r == c {
                gr * gr.transpose()
            } else {
                (gr * gc.transpose() + gc * gr.transpose()) * std::f64::consts::FRAC_1_SQRT_2
            };
            self.vec_into(&image, &mut col);
            k.column_mut(p).copy_from_slice(&col);
        }
        k
    }
}

/// Direct solver for linear equations `𝒳 − 𝒯(𝒳) = ℛ` over the reachable
/// states, and for the adjoint equation `Ψ − 𝒯*(Ψ) = ℛ`.
pub struct FixedPointSystem {
    basis: SymBasis,
    reachable: Vec<usize>,
    states: usize,
    lu: LU<f64, Dyn, Dyn>,
    lu_adjoint: LU<f64, Dyn, Dyn>,
}

impl FixedPointSystem {
    pub fn new(op: &JumpOperator<'_>) -> Self {
        let chain = op.chain;
        let basis = SymBasis::new(op.dim);
        let d = basis.len();
        let reachable: Vec<usize> = (0..chain.len()).filter(|&j| chain.is_reachable(j)).collect();
        let mut pos = vec![usize::MAX; chain.len()];
        for (k, &j) in reachable.iter().enumerate() {
            pos[j] = k;
        }
        let size = reachable.len() * d;
        let mut system = DMatrix::<f64>::identity(size, size);
        for (bj, &j) in reachable.iter().enumerate() {
            let k = basis.congruence(&op.closed[j]);
            for &(i, w) in &chain.backward[j] {
                let bi = pos[i];
                if bi == usize::MAX {
                    continue;
                }
                let mut block = system.view_mut((bj * d, bi * d), (d, d));
                block -= &k * w;
            }
        }
        let lu_adjoint = system.transpose().lu();
        Self {
            basis,
            reachable,
            states: chain.len(),
            lu: system.lu(),
            lu_adjoint,
        }
    }

    fn stack(&self, rhs: &CovarianceTuple) -> DVector<f64> {
        let d = self.basis.len();
        let mut v = DVector::zeros(self.reachable.len() * d);
        for (k, &j) in self.reachable.iter().enumerate() {
            self.basis.vec_into(&rhs.p[j], &mut v.as_mut_slice()[k * d..(k + 1) * d]);
        }
        v
    }

    fn unstack(&self, v: &DVector<f64>) -> CovarianceTuple {
        let d = self.basis.len();
        let mut p = vec![DMatrix::zeros(self.basis.n, self.basis.n); self.states];
        for (k, &j) in self.reachable.iter().enumerate() {
            p[j] = self.basis.mat(&v.as_slice()[k * d..(k + 1) * d]);
        }
        CovarianceTuple { p }
    }

    /// Solve `𝒳 − 𝒯(𝒳) = ℛ`. `None` when `I − 𝒯` is singular.
    pub fn solve(&self, rhs: &CovarianceTuple) -> Option<CovarianceTuple> {
        let x = self.lu.solve(&self.stack(rhs))?;
        x.iter().all(|v| v.is_finite()).then(|| self.unstack(&x))
    }

    /// Solve `Ψ − 𝒯*(Ψ) = ℛ`.
    pub fn solve_adjoint(&self, rhs: &CovarianceTuple) -> Option<CovarianceTuple> {
        let x = self.lu_adjoint.solve(&self.stack(rhs))?;
        x.iter().all(|v| v.is_finite()).then(|| self.unstack(&x))
    }

    /// Identity on reachable states, zero elsewhere.
    pub fn identity_tuple(&self) -> CovarianceTuple {
        let n = self.basis.n;
        let mut p = vec![DMatrix::zeros(n, n); self.states];
        for &j in &self.reachable {
            p[j] = DMatrix::identity(n, n);
        }
        CovarianceTuple { p }
    }

    pub fn reachable(&self) -> &[usize] {
        &self.reachable
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designer::{group_assignment, Strategy};
    use crate::model::{build_augmented, PlantModel};
    use crate::outcome_chain::DelayDistribution;
    use crate::reference;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &g * g.transpose()
    }

    fn random_tuple(rng: &mut ChaCha8Rng, states: usize, n: usize) -> CovarianceTuple {
        CovarianceTuple {
            p: (0..states).map(|_| random_psd(rng, n)).collect(),
        }
    }

    fn setup(rho: f64) -> (OutcomeChain, AugmentedModel) {
        let chain = OutcomeChain::build(&reference::delays()).unwrap();
        let model = build_augmented(&reference::plant(rho), 1).unwrap();
        (chain, model)
    }

    fn random_schedule(rng: &mut ChaCha8Rng, chain: &OutcomeChain, model: &AugmentedModel) -> GainSchedule {
        let grouping = group_assignment(chain, Strategy::S4).unwrap();
        let mut s = GainSchedule::zeros(Strategy::S4, grouping, model.state_dim(), model.ny_bar);
        for g in &mut s.gains {
            *g = DMatrix::from_fn(g.nrows(), g.ncols(), |_, _| rng.random_range(-0.5..0.5));
        }
        s
    }

    #[test]
    fn zero_tuple_maps_to_zero_without_noise() {
        let (chain, model) = setup(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let schedule = random_schedule(&mut rng, &chain, &model);
        let zero = CovarianceTuple::zeros(chain.len(), model.state_dim());
        let out = lyapunov_step(&chain, &model, &schedule, &zero).unwrap();
        assert!(out.p.iter().all(|m| m.amax() == 0.0));
    }

    #[test]
    fn noise_offset_is_constant() {
        let (chain, model) = setup(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let schedule = random_schedule(&mut rng, &chain, &model);
        let a = random_tuple(&mut rng, chain.len(), 4);
        let b = random_tuple(&mut rng, chain.len(), 4);
        let ua = covariance_step(&chain, &model, &schedule, &a)
            .unwrap()
            .sub(&lyapunov_step(&chain, &model, &schedule, &a).unwrap());
        let ub = covariance_step(&chain, &model, &schedule, &b)
            .unwrap()
            .sub(&lyapunov_step(&chain, &model, &schedule, &b).unwrap());
        assert!(ua.relative_distance(&ub) < 1e-12);
    }

    #[test]
    fn noise_free_part_is_linear() {
        let (chain, model) = setup(0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let schedule = random_schedule(&mut rng, &chain, &model);
        let op = JumpOperator::new(&chain, &model, &schedule).unwrap();
        for _ in 0..10 {
            let y1 = random_tuple(&mut rng, chain.len(), 4);
            let y2 = random_tuple(&mut rng, chain.len(), 4);
            let (a, b) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
            let lhs = op.noise_free(&y1.scale(a).add(&y2.scale(b)));
            let rhs = op.noise_free(&y1).scale(a).add(&op.noise_free(&y2).scale(b));
            assert!(lhs.relative_distance(&rhs) < 1e-12);
        }
    }

    #[test]
    fn covariance_step_is_monotone() {
        let (chain, model) = setup(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let schedule = random_schedule(&mut rng, &chain, &model);
        let op = JumpOperator::new(&chain, &model, &schedule).unwrap();
        for _ in 0..10 {
            let y = random_tuple(&mut rng, chain.len(), 4);
            let x = y.add(&random_tuple(&mut rng, chain.len(), 4));
            let (ex, ey) = (op.apply(&x), op.apply(&y));
            for j in 0..chain.len() {
                assert!(linalg::psd_leq(&ey.p[j], &ex.p[j]));
            }
        }
    }

    #[test]
    fn adjoint_matches_inner_product() {
        let (chain, model) = setup(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let schedule = random_schedule(&mut rng, &chain, &model);
        let op = JumpOperator::new(&chain, &model, &schedule).unwrap();
        let x = random_tuple(&mut rng, chain.len(), 4);
        let y = random_tuple(&mut rng, chain.len(), 4);
        let inner = |a: &CovarianceTuple, b: &CovarianceTuple| -> f64 {
            a.p.iter().zip(&b.p).map(|(a, b)| a.dot(b)).sum()
        };
        let lhs = inner(&op.noise_free(&x), &y);
        let rhs = inner(&x, &op.noise_free_adjoint(&y));
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs());
    }

    #[test]
    fn direct_solve_is_a_fixed_point() {
        let (chain, model) = setup(0.0);
        let grouping = group_assignment(&chain, Strategy::S1).unwrap();
        let schedule = GainSchedule::zeros(Strategy::S1, grouping, 4, 4);
        let op = JumpOperator::new(&chain, &model, &schedule).unwrap();
        let sys = FixedPointSystem::new(&op);
        let p = sys.solve(&op.offset()).unwrap();
        assert!(op.apply(&p).relative_distance(&p) < 1e-12);
    }

    #[test]
    fn zero_gains_reach_open_loop_lyapunov_solution() {
        let (chain, model) = setup(0.0);
        let grouping = group_assignment(&chain, Strategy::S2).unwrap();
        let schedule = GainSchedule::zeros(Strategy::S2, grouping, 4, 4);
        let op = JumpOperator::new(&chain, &model, &schedule).unwrap();
        let mut p = CovarianceTuple::zeros(chain.len(), 4);
        for _ in 0..2000 {
            p = op.apply(&p);
        }
        // independent oracle: X = Ā X Āᵀ + Q̄ by plain iteration
        let mut x = DMatrix::zeros(4, 4);
        for _ in 0..2000 {
            x = &model.a_bar * &x * model.a_bar.transpose() + &model.q_bar;
        }
        for j in 0..chain.len() {
            assert!((&p.p[j] - &x).norm() < 1e-10 * x.norm());
        }
    }

    #[test]
    fn two_mode_intermittent_recursion() {
        // scalar plant, one sensor, no delay: states {lost, received}
        let (a, c, q, r, l) = (0.95, 1.3, 0.4, 0.2, 0.5);
        let plant = PlantModel {
            a: DMatrix::from_element(1, 1, a),
            bu: DMatrix::from_element(1, 1, 1.0),
            bw: DMatrix::from_element(1, 1, 1.0),
            c: DMatrix::from_element(1, 1, c),
            w: DMatrix::from_element(1, 1, q),
            sigma2: vec![r],
        };
        let model = build_augmented(&plant, 0).unwrap();
        let gamma = 0.7;
        let chain = OutcomeChain::build(&DelayDistribution::new(vec![vec![gamma]]).unwrap()).unwrap();
        let schedule = GainSchedule {
            strategy: Strategy::S5,
            grouping: vec![None, Some(0)],
            gains: vec![DMatrix::from_element(1, 1, l)],
        };
        let op = JumpOperator::new(&chain, &model, &schedule).unwrap();
        let mut p = CovarianceTuple::zeros(2, 1);
        let (mut p0, mut p1) = (0.0f64, 0.0f64);
        for _ in 0..50 {
            p = op.apply(&p);
            // i.i.d. reception: predecessors weighted by the stationary law
            let prior = (1.0 - gamma) * p0 + gamma * p1;
            let s = a * a * prior + q;
            let f = 1.0 - l * c;
            let (n0, n1) = (s, f * f * s + l * l * r);
            p0 = n0;
            p1 = n1;
            assert!((p.p[0][(0, 0)] - p0).abs() < 1e-12);
            assert!((p.p[1][(0, 0)] - p1).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_schedule() {
        let (chain, model) = setup(0.0);
        let schedule = GainSchedule {
            strategy: Strategy::S1,
            grouping: vec![None; 3],
            gains: vec![],
        };
        assert!(matches!(
            JumpOperator::new(&chain, &model, &schedule),
            Err(Error::ScheduleMismatch(_))
        ));
    }
}
