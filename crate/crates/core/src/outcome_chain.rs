//! Finite Markov chain of measurement-transmission outcomes.
//!
//! A state records, for every sensor and every sample still inside the
//! window (sample age `0..=d_max`), whether and with which delay that sample
//! has arrived. Each (sensor, age) pair stores a single reception symbol:
//!
//! * `0`: not received yet (or lost, at the oldest age),
//! * `k + 1`: received with delay `k`, for `k ≤ age`.
//!
//! Age `a` therefore has `a + 2` symbols and a sensor has `(d_max + 2)!`
//! window configurations. State indices are mixed-radix numbers with sensor 0
//! as the least-significant group and, inside a sensor, age 0 as the
//! least-significant digit. This reproduces the ordering obtained by reading
//! the binary outcome vector `θ` as an integer, least-significant bit first.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default cap on the number of enumerated outcome states.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

/// Largest chain for which the dense transition matrix is built.
pub const MAX_DENSE_STATES: usize = 5_000;

/// Stationary probabilities at or below this are treated as unreachable.
pub const ZERO_PROB: f64 = 1e-13;

const TAIL_EPS: f64 = 1e-15;

/// Per-sensor delay probabilities `beta[s][d] = Pr{τ_s = d}`, `d = 0..=d_max`.
/// The remaining mass `1 − Σ_d beta[s][d]` is the loss probability.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayDistribution {
    beta: Vec<Vec<f64>>,
}

impl DelayDistribution {
    pub fn new(beta: Vec<Vec<f64>>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::InvalidDistribution {
                sensor: 0,
                detail: "no sensors".into(),
            });
        }
        let len = beta[0].len();
        for (s, row) in beta.iter().enumerate() {
            let bad = |detail: String| Error::InvalidDistribution { sensor: s, detail };
            if row.is_empty() || row.len() != len {
                return Err(bad(format!("expected {} delay probabilities, got {}", len.max(1), row.len())));
            }
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(bad(format!("probability {p} outside [0, 1]")));
            }
            let total: f64 = row.iter().sum();
            if total > 1.0 + 1e-12 {
                return Err(bad(format!("probabilities sum to {total} > 1")));
            }
        }
        Ok(Self { beta })
    }

    pub fn n_sensors(&self) -> usize {
        self.beta.len()
    }

    pub fn d_max(&self) -> usize {
        self.beta[0].len() - 1
    }

    pub fn beta(&self, sensor: usize, delay: usize) -> f64 {
        self.beta[sensor][delay]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.beta
    }

    /// `Pr{τ_s > d}`, clamped at zero.
    pub fn tail(&self, sensor: usize, delay: usize) -> f64 {
        let t = 1.0 - self.beta[sensor][..=delay].iter().sum::<f64>();
        if t < TAIL_EPS {
            0.0
        } else {
            t
        }
    }

    /// Loss probability `Pr{τ_s > d_max}`.
    pub fn loss(&self, sensor: usize) -> f64 {
        self.tail(sensor, self.d_max())
    }
}

/// Positional encoding of outcome states for a given `(n_y, d_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainLayout {
    pub n_y: usize,
    pub d_max: usize,
}

impl ChainLayout {
    pub fn new(n_y: usize, d_max: usize) -> Self {
        Self { n_y, d_max }
    }

    /// `(d_max + 2)!`, the window configurations of a single sensor.
    pub fn per_sensor(&self) -> usize {
        (2..=self.d_max + 2).product()
    }

    /// Total number of states, `((d_max + 2)!)^{n_y}`, without overflow.
    pub fn count(&self) -> u128 {
        let per = self.per_sensor() as u128;
        (0..self.n_y).try_fold(1u128, |acc, _| acc.checked_mul(per)).unwrap_or(u128::MAX)
    }

    /// Length of the binary outcome vector, `(d+1)(d+2)/2 · n_y`.
    pub fn theta_len(&self) -> usize {
        (self.d_max + 1) * (self.d_max + 2) / 2 * self.n_y
    }

    pub fn ny_bar(&self) -> usize {
        self.n_y * (self.d_max + 1)
    }

    fn symbol_count(&self) -> usize {
        self.n_y * (self.d_max + 1)
    }

    /// Index of a symbol vector (sensor-major, then age).
    pub fn encode(&self, symbols: &[u8]) -> usize {
        let mut index = 0;
        let mut weight = 1;
        for s in 0..self.n_y {
            for age in 0..=self.d_max {
                index += symbols[s * (self.d_max + 1) + age] as usize * weight;
                weight *= age + 2;
            }
        }
        index
    }

    pub fn decode(&self, mut index: usize) -> Vec<u8> {
        let mut symbols = vec![0u8; self.symbol_count()];
        for s in 0..self.n_y {
            for age in 0..=self.d_max {
                let radix = age + 2;
                symbols[s * (self.d_max + 1) + age] = (index % radix) as u8;
                index /= radix;
            }
        }
        symbols
    }

    /// Index of the state described by raw reception indicators.
    ///
    /// `window[s][h][d]` is `α_{s,d}[t−h]`: whether the sample of sensor `s`
    /// taken at `t−h−d` arrived at `t−h`. Entries with `h + d > d_max` lie
    /// outside the window and are ignored.
    pub fn state_index(&self, window: &[Vec<Vec<bool>>]) -> Result<usize> {
        if window.len() != self.n_y {
            return Err(Error::InvalidWindow(format!(
                "expected {} sensors, got {}",
                self.n_y,
                window.len()
            )));
        }
        let mut symbols = vec![0u8; self.symbol_count()];
        for (s, rows) in window.iter().enumerate() {
            for age in 0..=self.d_max {
                let mut received = None;
                for delay in 0..=age {
                    let h = age - delay;
                    let hit = rows.get(h).and_then(|r| r.get(delay)).copied().unwrap_or(false);
                    if hit {
                        if received.is_some() {
                            return Err(Error::InvalidWindow(format!(
                                "sample of sensor {s} at age {age} received more than once"
                            )));
                        }
                        received = Some(delay);
                    }
                }
                symbols[s * (self.d_max + 1) + age] = received.map_or(0, |k| k as u8 + 1);
            }
        }
        Ok(self.encode(&symbols))
    }

    /// Inverse of [`ChainLayout::state_index`]: the raw indicator window of a state.
    pub fn window(&self, index: usize) -> Vec<Vec<Vec<bool>>> {
        let symbols = self.decode(index);
        let mut window = vec![vec![vec![false; self.d_max + 1]; self.d_max + 1]; self.n_y];
        for s in 0..self.n_y {
            for age in 0..=self.d_max {
                let sym = symbols[s * (self.d_max + 1) + age];
                if sym > 0 {
                    let delay = sym as usize - 1;
                    window[s][age - delay][delay] = true;
                }
            }
        }
        window
    }
}

/// One element of the outcome set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutcomeState {
    pub index: usize,
    /// Reception symbol per (sensor, age), sensor-major.
    pub symbols: Vec<u8>,
    d_max: usize,
}

impl OutcomeState {
    fn symbol(&self, sensor: usize, age: usize) -> u8 {
        self.symbols[sensor * (self.d_max + 1) + age]
    }

    /// The binary outcome vector: per sensor, per age `d`, the `d + 1`
    /// indicators of reception with delay `0..=d`.
    pub fn bits(&self) -> Vec<u8> {
        let n_y = self.symbols.len() / (self.d_max + 1);
        let mut bits = Vec::new();
        for s in 0..n_y {
            for age in 0..=self.d_max {
                let sym = self.symbol(s, age);
                bits.extend((0..=age).map(|k| u8::from(sym as usize == k + 1)));
            }
        }
        bits
    }

    /// Slots that carry a fresh measurement at the current instant.
    pub fn availability(&self) -> Vec<bool> {
        let n_y = self.symbols.len() / (self.d_max + 1);
        (0..n_y)
            .flat_map(|s| (0..=self.d_max).map(move |d| (s, d)))
            .map(|(s, d)| self.symbol(s, d) as usize == d + 1)
            .collect()
    }
}

/// Enumerate the outcome set in index order. State 0 is "nothing received".
pub fn enumerate_states(n_y: usize, d_max: usize) -> Result<Vec<OutcomeState>> {
    enumerate_states_capped(n_y, d_max, DEFAULT_STATE_CAP)
}

pub fn enumerate_states_capped(n_y: usize, d_max: usize, cap: usize) -> Result<Vec<OutcomeState>> {
    if n_y == 0 {
        return Err(Error::InvalidWindow("at least one sensor is required".into()));
    }
    let layout = ChainLayout::new(n_y, d_max);
    let count = layout.count();
    if count > cap as u128 {
        return Err(Error::StateOverflow { count, cap });
    }
    Ok((0..count as usize)
        .map(|index| OutcomeState {
            index,
            symbols: layout.decode(index),
            d_max,
        })
        .collect())
}

/// Window-shift consistency: every reception already recorded in `from`
/// must be recorded identically in `to`, and nothing in `to` may claim an
/// earlier reception that `from` did not see.
pub fn feasible(layout: &ChainLayout, from: &[u8], to: &[u8]) -> bool {
    let blocks = layout.d_max + 1;
    (0..layout.n_y).all(|s| {
        (1..blocks).all(|age| {
            let old = from[s * blocks + age - 1];
            let new = to[s * blocks + age];
            if new as usize == age + 1 {
                old == 0
            } else {
                old == new
            }
        })
    })
}

/// Successor distribution of one sensor's window, `(local index, probability)`.
fn sensor_successors(dist: &DelayDistribution, sensor: usize, d_max: usize, local: &[u8]) -> Vec<(Vec<u8>, f64)> {
    let mut out: Vec<(Vec<u8>, f64)> = Vec::new();
    // new sample: delay 0 now, or not yet
    out.push((vec![1], dist.beta(sensor, 0)));
    out.push((vec![0], dist.tail(sensor, 0)));
    for age in 1..=d_max {
        let old = local[age - 1];
        let options: Vec<(u8, f64)> = if old != 0 {
            vec![(old, 1.0)]
        } else {
            let prior = dist.tail(sensor, age - 1);
            if prior > 0.0 {
                vec![
                    (age as u8 + 1, dist.beta(sensor, age) / prior),
                    (0, dist.tail(sensor, age) / prior),
                ]
            } else {
                // Conditioning event has probability zero; such rows are
                // unreachable, so any stochastic completion is admissible.
                vec![(0, 1.0)]
            }
        };
        out = out
            .into_iter()
            .flat_map(|(prefix, p)| {
                options.iter().map(move |&(sym, q)| {
                    let mut next = prefix.clone();
                    next.push(sym);
                    (next, p * q)
                })
            })
            .collect();
    }
    out
}

fn sensor_transition(dist: &DelayDistribution, sensor: usize, d_max: usize) -> DMatrix<f64> {
    let single = ChainLayout::new(1, d_max);
    let m = single.per_sensor();
    let mut lambda = DMatrix::zeros(m, m);
    for i in 0..m {
        let local = single.decode(i);
        for (next, p) in sensor_successors(dist, sensor, d_max, &local) {
            lambda[(i, single.encode(&next))] += p;
        }
    }
    lambda
}

fn check_dist(n_y: usize, d_max: usize, dist: &DelayDistribution) -> Result<()> {
    if dist.n_sensors() != n_y || dist.d_max() != d_max {
        return Err(Error::DimensionMismatch {
            left: "outcome states",
            right: "delay distribution",
            detail: format!(
                "states are for {n_y} sensors / d_max {d_max}, distribution has {} sensors / d_max {}",
                dist.n_sensors(),
                dist.d_max()
            ),
        });
    }
    Ok(())
}

fn layout_of(states: &[OutcomeState]) -> Result<ChainLayout> {
    let first = states
        .first()
        .ok_or_else(|| Error::InvalidWindow("empty state list".into()))?;
    let d_max = first.d_max;
    Ok(ChainLayout::new(first.symbols.len() / (d_max + 1), d_max))
}

/// Transition matrix by conditional enumeration over the per-sample delays.
///
/// Sensors are independent, so the matrix is the Kronecker product of the
/// per-sensor matrices (sensor 0 innermost).
pub fn transition_matrix(states: &[OutcomeState], dist: &DelayDistribution) -> Result<DMatrix<f64>> {
    let layout = layout_of(states)?;
    check_dist(layout.n_y, layout.d_max, dist)?;
    if states.len() > MAX_DENSE_STATES {
        return Err(Error::StateOverflow {
            count: states.len() as u128,
            cap: MAX_DENSE_STATES,
        });
    }
    let mut lambda = sensor_transition(dist, 0, layout.d_max);
    for s in 1..layout.n_y {
        lambda = sensor_transition(dist, s, layout.d_max).kronecker(&lambda);
    }
    Ok(lambda)
}

/// Probability weight of a window restricted to ages `0..=max_age`:
/// `β_{s,k}` for samples received with delay `k`, `β̄_{s,age}` for pending ones.
fn window_weight(dist: &DelayDistribution, layout: &ChainLayout, symbols: &[u8], sensor: usize, max_age: usize) -> f64 {
    (0..=max_age)
        .map(|age| match symbols[sensor * (layout.d_max + 1) + age] {
            0 => dist.tail(sensor, age),
            sym => dist.beta(sensor, sym as usize - 1),
        })
        .product()
}

/// Transition matrix from the closed-form ratio of window probabilities:
/// `p_ij = Π_s g_s(ϑ_j, ages 0..=d) / g_s(ϑ_i, ages 0..d)` on feasible pairs.
///
/// Fails when a denominator tail probability vanishes.
pub fn transition_matrix_ratio(states: &[OutcomeState], dist: &DelayDistribution) -> Result<DMatrix<f64>> {
    let layout = layout_of(states)?;
    check_dist(layout.n_y, layout.d_max, dist)?;
    for s in 0..layout.n_y {
        for d in 0..layout.d_max {
            if dist.tail(s, d) == 0.0 {
                return Err(Error::DegenerateDistribution { sensor: s, delay: d });
            }
        }
    }
    let m = states.len();
    let mut lambda = DMatrix::zeros(m, m);
    for from in states {
        for to in states {
            if !feasible(&layout, &from.symbols, &to.symbols) {
                continue;
            }
            let mut p = 1.0;
            for s in 0..layout.n_y {
                let num = window_weight(dist, &layout, &to.symbols, s, layout.d_max);
                let den = if layout.d_max == 0 {
                    1.0
                } else {
                    window_weight(dist, &layout, &from.symbols, s, layout.d_max - 1)
                };
                p *= num / den;
            }
            lambda[(from.index, to.index)] = p;
        }
    }
    Ok(lambda)
}

/// Stationary distribution `π = πΛ`.
///
/// Solves the balance equations with one row replaced by the normalization
/// constraint; falls back to power iteration on the lazy chain `(Λ + I)/2`.
pub fn stationary(lambda: &DMatrix<f64>) -> Result<Vec<f64>> {
    stationary_with_budget(lambda, 1_000_000)
}

pub fn stationary_with_budget(lambda: &DMatrix<f64>, max_iter: usize) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-12;
    let m = lambda.nrows();
    let residual = |pi: &DVector<f64>| (lambda.transpose() * pi - pi).amax();

    let mut system = lambda.transpose() - DMatrix::identity(m, m);
    let mut rhs = DVector::zeros(m);
    system.row_mut(m - 1).fill(1.0);
    rhs[m - 1] = 1.0;
    if let Some(pi) = system.lu().solve(&rhs) {
        let pi = clean_distribution(pi);
        if pi.iter().all(|x| x.is_finite()) && residual(&pi) <= TOL {
            return Ok(pi.iter().copied().collect());
        }
    }

    let lazy = (lambda.transpose() + DMatrix::identity(m, m)) * 0.5;
    let mut pi = DVector::from_element(m, 1.0 / m as f64);
    let mut res = f64::INFINITY;
    for _ in 0..max_iter {
        pi = &lazy * &pi;
        pi /= pi.sum();
        res = residual(&pi);
        if res <= TOL {
            return Ok(pi.iter().copied().collect());
        }
    }
    Err(Error::NonConvergence { residual: res })
}

fn clean_distribution(mut pi: DVector<f64>) -> DVector<f64> {
    for x in pi.iter_mut() {
        if *x < 0.0 && *x > -1e-12 {
            *x = 0.0;
        }
    }
    let total = pi.sum();
    if total > 0.0 {
        pi /= total;
    }
    pi
}

/// Availability map `f` and its image `Ξ`.
///
/// Returns, per state, the index of its pattern in `Ξ`; `Ξ[0]` is the
/// all-false pattern, the rest follow in order of first appearance.
pub fn availability_map(states: &[OutcomeState]) -> (Vec<usize>, Vec<Vec<bool>>) {
    let ny_bar = states.first().map_or(0, |s| s.availability().len());
    let mut xi = vec![vec![false; ny_bar]];
    let avail = states
        .iter()
        .map(|state| {
            let pattern = state.availability();
            match xi.iter().position(|p| *p == pattern) {
                Some(k) => k,
                None => {
                    xi.push(pattern);
                    xi.len() - 1
                }
            }
        })
        .collect();
    (avail, xi)
}

/// Backward weights `w[j] = [(i, p_ij π_i / π_j)]` over predecessors with
/// nonzero weight; empty for unreachable `j`.
pub fn backward_weights(lambda: &DMatrix<f64>, pi: &[f64]) -> Vec<Vec<(usize, f64)>> {
    let m = lambda.nrows();
    (0..m)
        .map(|j| {
            if pi[j] <= ZERO_PROB {
                return Vec::new();
            }
            (0..m)
                .filter_map(|i| {
                    let w = lambda[(i, j)] * pi[i] / pi[j];
                    (w > 0.0).then_some((i, w))
                })
                .collect()
        })
        .collect()
}

/// The assembled outcome chain.
#[derive(Debug, Clone)]
pub struct OutcomeChain {
    pub layout: ChainLayout,
    pub states: Vec<OutcomeState>,
    pub lambda: DMatrix<f64>,
    pub pi: Vec<f64>,
    /// Per state, index into `xi`.
    pub avail: Vec<usize>,
    pub xi: Vec<Vec<bool>>,
    /// Per state `j`, predecessors `i` with weight `p_ij π_i / π_j`.
    pub backward: Vec<Vec<(usize, f64)>>,
}

impl OutcomeChain {
    pub fn build(dist: &DelayDistribution) -> Result<Self> {
        let layout = ChainLayout::new(dist.n_sensors(), dist.d_max());
        let states = enumerate_states(layout.n_y, layout.d_max)?;
        let lambda = transition_matrix(&states, dist)?;
        let pi = stationary(&lambda)?;
        let (avail, xi) = availability_map(&states);
        let backward = backward_weights(&lambda, &pi);
        Ok(Self {
            layout,
            states,
            lambda,
            pi,
            avail,
            xi,
            backward,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Availability pattern of state `i`.
    pub fn pattern(&self, i: usize) -> &[bool] {
        &self.xi[self.avail[i]]
    }

    /// Whether state `i` receives nothing at the current instant.
    pub fn is_empty_reception(&self, i: usize) -> bool {
        self.avail[i] == 0
    }

    pub fn is_reachable(&self, i: usize) -> bool {
        self.pi[i] > ZERO_PROB
    }

    /// Active slot indices of state `i`.
    pub fn active_slots(&self, i: usize) -> Vec<usize> {
        self.pattern(i)
            .iter()
            .enumerate()
            .filter_map(|(k, &on)| on.then_some(k))
            .collect()
    }

    /// Text dump of states, transition matrix and stationary distribution,
    /// one CSV block per object.
    pub fn write_csv_dump<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# states")?;
        writeln!(out, "index,theta_bits,availability,pi,reachable")?;
        for (i, state) in self.states.iter().enumerate() {
            let bits: String = state.bits().iter().map(|b| char::from(b'0' + b)).collect();
            let avail: String = self.pattern(i).iter().map(|&b| if b { '1' } else { '0' }).collect();
            writeln!(out, "{i},{bits},{avail},{:.17e},{}", self.pi[i], self.is_reachable(i))?;
        }
        writeln!(out)?;
        writeln!(out, "# lambda")?;
        let header: Vec<String> = (0..self.len()).map(|j| format!("to_{j}")).collect();
        writeln!(out, "from,{}", header.join(","))?;
        for i in 0..self.len() {
            let row: Vec<String> = (0..self.len()).map(|j| format!("{:.17e}", self.lambda[(i, j)])).collect();
            writeln!(out, "{i},{}", row.join(","))?;
        }
        writeln!(out)?;
        writeln!(out, "# xi")?;
        writeln!(out, "index,pattern")?;
        for (k, pattern) in self.xi.iter().enumerate() {
            let p: String = pattern.iter().map(|&b| if b { '1' } else { '0' }).collect();
            writeln!(out, "{k},{p}")?;
        }
        Ok(())
    }
}
