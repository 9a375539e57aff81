//! The two-sensor benchmark configuration used throughout the tests and the
//! bundled `sec5_example` experiment file.

use nalgebra::DMatrix;

use crate::model::PlantModel;
use crate::outcome_chain::DelayDistribution;

/// Maximum admissible delay of the benchmark network.
pub const D_MAX: usize = 1;

/// Benchmark plant. `rho` is added to every entry of the base `A`.
pub fn plant(rho: f64) -> PlantModel {
    PlantModel {
        a: DMatrix::from_row_slice(2, 2, &[0.73, -0.42, 0.42, 0.73]).add_scalar(rho),
        bu: DMatrix::from_row_slice(2, 1, &[-0.33, 0.34]),
        bw: DMatrix::from_row_slice(2, 2, &[0.01, 0.13, 0.01, 0.08]),
        c: DMatrix::from_row_slice(2, 2, &[0.53, 0.39, 0.72, 0.35]),
        w: DMatrix::from_row_slice(2, 2, &[0.26, -0.003, -0.003, 0.25]),
        sigma2: vec![0.0086, 0.0079],
    }
}

/// Per-sensor delay probabilities for delays 0 and 1; the remaining 0.46 is loss.
pub fn delays() -> DelayDistribution {
    DelayDistribution::new(vec![vec![0.32, 0.22], vec![0.22, 0.32]])
        .expect("benchmark distribution is valid")
}
