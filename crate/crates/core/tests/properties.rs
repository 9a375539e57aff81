use nalgebra::DMatrix;
use proptest::prelude::*;

use netjump::designer::{
    group_assignment, group_gain_update, read_schedule, synthesize, write_schedule, CovarianceTuple, GainSchedule, JumpOperator,
    Strategy as GainStrategy, SynthesisOptions,
};
use netjump::linalg;
use netjump::model::build_augmented;
use netjump::outcome_chain::{enumerate_states, transition_matrix, DelayDistribution, OutcomeChain};
use netjump::reference;
use netjump::simulator::{make_inputs, run_observer, sample_network, InputSignal};

/// Per-sensor delay probabilities with a loss share of at least 5%.
fn delay_rows(n_y: usize, d_max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.05f64..1.0, d_max + 2), n_y).prop_map(|rows| {
        rows.into_iter()
            .map(|w| {
                let total: f64 = w.iter().sum();
                w[..w.len() - 1].iter().map(|v| 0.95 * v / total).collect()
            })
            .collect()
    })
}

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn psd(dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(dim, dim, 1.0).prop_map(|g| &g * g.transpose())
}

fn tuple(states: usize, dim: usize) -> impl Strategy<Value = CovarianceTuple> {
    prop::collection::vec(psd(dim), states).prop_map(|p| CovarianceTuple { p })
}

fn reference_chain() -> OutcomeChain {
    OutcomeChain::build(&reference::delays()).unwrap()
}

fn random_s5(chain: &OutcomeChain, gains: Vec<DMatrix<f64>>) -> GainSchedule {
    let grouping = group_assignment(chain, GainStrategy::S5).unwrap();
    GainSchedule {
        strategy: GainStrategy::S5,
        grouping,
        gains,
    }
}

fn close(a: &CovarianceTuple, b: &CovarianceTuple, tol: f64) -> bool {
    a.p.iter().zip(&b.p).all(|(x, y)| (x - y).amax() <= tol * (1.0 + y.amax()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transition_rows_sum_to_one(
        (n_y, d_max, rows) in (1usize..=2, 0usize..=2).prop_flat_map(|(n, d)| (Just(n), Just(d), delay_rows(n, d)))
    ) {
        let dist = DelayDistribution::new(rows).unwrap();
        let lambda = transition_matrix(&enumerate_states(n_y, d_max).unwrap(), &dist).unwrap();
        for i in 0..lambda.nrows() {
            prop_assert!((lambda.row(i).sum() - 1.0).abs() < 1e-12);
            prop_assert!(lambda.row(i).iter().all(|&p| p >= 0.0));
        }
    }

    #[test]
    fn stationary_distribution_is_invariant(rows in delay_rows(2, 1)) {
        let chain = OutcomeChain::build(&DelayDistribution::new(rows).unwrap()).unwrap();
        let pi = nalgebra::DVector::from_column_slice(&chain.pi);
        let moved = chain.lambda.transpose() * &pi;
        prop_assert!((moved - &pi).amax() < 1e-12);
        prop_assert!((pi.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn augmented_output_picks_delayed_copies(c in matrix(2, 2, 2.0), d_max in 0usize..=2) {
        let mut plant = reference::plant(0.0);
        plant.c = c.clone();
        let model = build_augmented(&plant, d_max).unwrap();
        let n = plant.n();
        for s in 0..2 {
            for d in 0..=d_max {
                let row = model.c_bar.row(model.slot(s, d));
                for k in 0..=d_max {
                    for j in 0..n {
                        let expected = if k == d { c[(s, j)] } else { 0.0 };
                        prop_assert_eq!(row[k * n + j], expected);
                    }
                }
            }
        }
    }

    #[test]
    fn availability_patterns_are_projections(j in 0usize..36) {
        let chain = reference_chain();
        let alpha = DMatrix::from_fn(4, 4, |r, c| if r == c && chain.pattern(j)[r] { 1.0 } else { 0.0 });
        prop_assert_eq!(&alpha * &alpha, alpha);
        prop_assert_eq!(chain.xi[chain.avail[j]].as_slice(), chain.pattern(j));
        let listed = chain.states[j].availability();
        prop_assert_eq!(listed.as_slice(), chain.pattern(j));
    }

    #[test]
    fn schedule_text_round_trips(gains in prop::collection::vec(matrix(4, 4, 1e3), 1..5), raw in prop::collection::vec(0usize..8, 6)) {
        let k = gains.len();
        let grouping = raw.into_iter().map(|g| if g >= k { None } else { Some(g) }).collect();
        let schedule = GainSchedule { strategy: GainStrategy::Custom, grouping, gains };
        let text = write_schedule(&schedule);
        let back = read_schedule(&text, "mem").unwrap();
        prop_assert_eq!(&back, &schedule);
        prop_assert_eq!(write_schedule(&back), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noise_free_operator_is_linear(
        gains in prop::collection::vec(matrix(4, 4, 0.5), 32),
        y1 in tuple(36, 4),
        y2 in tuple(36, 4),
        a in 0.0f64..3.0,
        b in 0.0f64..3.0,
    ) {
        let chain = reference_chain();
        let model = build_augmented(&reference::plant(0.2), 1).unwrap();
        let op = JumpOperator::new(&chain, &model, &random_s5(&chain, gains)).unwrap();
        let lhs = op.noise_free(&y1.scale(a).add(&y2.scale(b)));
        let rhs = op.noise_free(&y1).scale(a).add(&op.noise_free(&y2).scale(b));
        prop_assert!(close(&lhs, &rhs, 1e-12));
    }

    #[test]
    fn recursion_preserves_psd_order(
        gains in prop::collection::vec(matrix(4, 4, 0.5), 32),
        y in tuple(36, 4),
        gap in tuple(36, 4),
    ) {
        let chain = reference_chain();
        let model = build_augmented(&reference::plant(0.4), 1).unwrap();
        let op = JumpOperator::new(&chain, &model, &random_s5(&chain, gains)).unwrap();
        let low = op.apply(&y);
        let high = op.apply(&y.add(&gap));
        for (h, l) in high.p.iter().zip(&low.p) {
            prop_assert!(linalg::psd_leq(l, h));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn designed_schedules_are_stationary_and_stable(rows in delay_rows(2, 1), rho in 0.0f64..0.1) {
        let chain = OutcomeChain::build(&DelayDistribution::new(rows).unwrap()).unwrap();
        let model = build_augmented(&reference::plant(rho), 1).unwrap();
        let syn = synthesize(&chain, &model, GainStrategy::S5, &SynthesisOptions::default()).unwrap();

        let trace = &syn.report.objective_trace;
        prop_assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-10));

        for (g, gain) in syn.schedule.gains.iter().enumerate() {
            let update = group_gain_update(&chain, &model, &syn.schedule.grouping, &syn.covariance, g).unwrap();
            prop_assert!((update - gain).amax() <= 1e-8 * (1.0 + gain.amax()), "group {}", g);
        }

        // power iteration on the noise-free part
        let op = JumpOperator::new(&chain, &model, &syn.schedule).unwrap();
        let mut y = CovarianceTuple::scaled_identity(chain.len(), model.state_dim(), 1.0);
        let norm = |t: &CovarianceTuple| t.p.iter().map(|m| m.norm_squared()).sum::<f64>().sqrt();
        let mut growth = 1.0;
        for _ in 0..400 {
            let next = op.noise_free(&y);
            growth = norm(&next) / norm(&y);
            y = next.scale(1.0 / norm(&next));
        }
        prop_assert!(growth < 1.0, "spectral radius estimate {}", growth);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_delivery_is_seen_exactly_once(rows in delay_rows(2, 2), seed in any::<u64>()) {
        let dist = DelayDistribution::new(rows).unwrap();
        let trace = sample_network(&dist, 300, seed).unwrap();
        let blocks = dist.d_max() + 1;
        for s in 0..2 {
            for (sample, delay) in trace.delays[s].iter().enumerate() {
                let hits: Vec<usize> = (0..blocks)
                    .filter(|&d| sample + d < trace.horizon() && trace.receptions[sample + d][s * blocks + d])
                    .collect();
                match delay {
                    Some(d) if sample + (*d as usize) < trace.horizon() => prop_assert_eq!(hits, vec![*d as usize]),
                    _ => prop_assert!(hits.is_empty()),
                }
            }
        }
    }

    #[test]
    fn flops_depend_only_on_the_pattern(seed in any::<u64>()) {
        let chain = reference_chain();
        let model = build_augmented(&reference::plant(0.0), 1).unwrap();
        let gains = vec![DMatrix::from_element(4, 4, 0.1); 32];
        let schedule = random_s5(&chain, gains);
        let trace = sample_network(&reference::delays(), 200, seed).unwrap();
        let run = run_observer(&model, &schedule, &chain, &trace, &[], seed, 1.0).unwrap();
        let mut seen = std::collections::HashMap::new();
        for (t, &f) in run.flops_per_step.iter().enumerate() {
            let pattern = chain.avail[trace.theta_indices[t]];
            prop_assert_eq!(*seen.entry(pattern).or_insert(f), f);
        }
    }

    #[test]
    fn error_does_not_depend_on_inputs(seed in any::<u64>(), amplitude in 0.1f64..50.0) {
        let chain = reference_chain();
        let model = build_augmented(&reference::plant(0.0), 1).unwrap();
        let gains = vec![DMatrix::from_element(4, 4, 0.1); 32];
        let schedule = random_s5(&chain, gains);
        let trace = sample_network(&reference::delays(), 100, seed).unwrap();
        let inputs = make_inputs(InputSignal::Random { amplitude }, 1, 100, seed);
        let free = run_observer(&model, &schedule, &chain, &trace, &[], seed, 1.0).unwrap();
        let driven = run_observer(&model, &schedule, &chain, &trace, &inputs, seed, 1.0).unwrap();
        for (a, b) in free.err.iter().zip(&driven.err) {
            prop_assert!((a - b).amax() <= 1e-9 * (1.0 + amplitude));
        }
    }
}
