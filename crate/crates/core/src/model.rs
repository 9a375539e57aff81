//! Plant description and the delay-augmented model.
//!
//! Every stacked object (measurement slots, rows of `C̄`, diagonal of `V`)
//! uses the same canonical ordering: sensor-major, then delay. Slot
//! `s * (d_max + 1) + d` holds the sample of sensor `s` taken `d` steps ago.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Raw LTI plant: `x⁺ = A x + B_u u + B_w w`, `y_s = c_s x + v_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    /// One row per scalar sensor.
    pub c: DMatrix<f64>,
    /// Disturbance covariance.
    pub w: DMatrix<f64>,
    /// Sensor noise variances.
    pub sigma2: Vec<f64>,
}

/// Result of [`validate_plant`]: violated invariants plus the spectral radius of `A`.
#[derive(Debug, Clone)]
pub struct PlantDiagnostics {
    pub violations: Vec<String>,
    pub max_abs_eigenvalue: f64,
}

impl PlantDiagnostics {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl PlantModel {
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_y(&self) -> usize {
        self.c.nrows()
    }

    fn check_dimensions(&self) -> Result<()> {
        let n = self.a.nrows();
        let mismatch = |left, right, detail: String| Error::DimensionMismatch { left, right, detail };
        if self.a.ncols() != n {
            return Err(mismatch("A", "A", format!("A is {}x{}, not square", n, self.a.ncols())));
        }
        if self.bu.nrows() != n {
            return Err(mismatch("A", "B_u", format!("A has {} rows, B_u has {}", n, self.bu.nrows())));
        }
        if self.bw.nrows() != n {
            return Err(mismatch("A", "B_w", format!("A has {} rows, B_w has {}", n, self.bw.nrows())));
        }
        if self.c.ncols() != n {
            return Err(mismatch("A", "C", format!("A has {} columns, C has {}", n, self.c.ncols())));
        }
        if self.w.nrows() != self.bw.ncols() || self.w.ncols() != self.bw.ncols() {
            return Err(mismatch(
                "B_w",
                "W",
                format!(
                    "B_w has {} columns, W is {}x{}",
                    self.bw.ncols(),
                    self.w.nrows(),
                    self.w.ncols()
                ),
            ));
        }
        if self.sigma2.len() != self.c.nrows() {
            return Err(mismatch(
                "C",
                "sigma2",
                format!("C has {} rows, sigma2 has {} entries", self.c.nrows(), self.sigma2.len()),
            ));
        }
        Ok(())
    }
}

/// Check plant invariants. Never fails; problems are reported as diagnostics.
pub fn validate_plant(plant: &PlantModel) -> PlantDiagnostics {
    let mut violations = Vec::new();
    if let Err(e) = plant.check_dimensions() {
        violations.push(e.to_string());
    }
    if plant.w.is_square() {
        let asym = (&plant.w - plant.w.transpose()).amax();
        if asym > 1e-12 * (1.0 + plant.w.amax()) {
            violations.push(format!("W is not symmetric (max asymmetry {asym:e})"));
        }
        let min_eig = linalg::min_eigenvalue(&plant.w);
        if min_eig < -1e-10 * plant.w.norm() {
            violations.push(format!("W is not positive semidefinite (eigenvalue {min_eig:e})"));
        }
    }
    for (s, &var) in plant.sigma2.iter().enumerate() {
        if !(var > 0.0) {
            violations.push(format!("sigma2[{s}] = {var} is not positive"));
        }
    }
    let max_abs_eigenvalue = if plant.a.is_square() {
        linalg::spectral_radius(&plant.a)
    } else {
        f64::NAN
    };
    PlantDiagnostics { violations, max_abs_eigenvalue }
}

/// The plant stacked with its last `d_max` delayed copies.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    pub a_bar: DMatrix<f64>,
    pub bu_bar: DMatrix<f64>,
    pub bw_bar: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
    /// Diagonal slot-noise covariance.
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// `B̄_w W B̄_wᵀ`.
    pub q_bar: DMatrix<f64>,
    pub n: usize,
    pub n_y: usize,
    pub d_max: usize,
    pub ny_bar: usize,
}

impl AugmentedModel {
    pub fn state_dim(&self) -> usize {
        self.n * (self.d_max + 1)
    }

    /// Index of measurement slot `(sensor, delay)`.
    pub fn slot(&self, sensor: usize, delay: usize) -> usize {
        sensor * (self.d_max + 1) + delay
    }

    /// `C_x = [I_n 0]`, selecting the current-state block.
    pub fn current_state_selector(&self) -> DMatrix<f64> {
        let mut cx = DMatrix::zeros(self.n, self.state_dim());
        for i in 0..self.n {
            cx[(i, i)] = 1.0;
        }
        cx
    }

    /// `tr(C_x P C_xᵀ)`: trace of the current-state block of `P`.
    pub fn current_state_trace(&self, p: &DMatrix<f64>) -> f64 {
        (0..self.n).map(|i| p[(i, i)]).sum()
    }

    /// Stack the raw plant state `x` into all delay slots, `[x; x; …; x]`.
    pub fn repeat_state(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.state_dim(), |i, _| x[i % self.n])
    }
}

/// Build the delay-augmented model.
pub fn build_augmented(plant: &PlantModel, d_max: usize) -> Result<AugmentedModel> {
    plant.check_dimensions()?;
    let n = plant.n();
    let n_y = plant.n_y();
    let blocks = d_max + 1;
    let dim = n * blocks;
    let ny_bar = n_y * blocks;

    let mut a_bar = DMatrix::zeros(dim, dim);
    a_bar.view_mut((0, 0), (n, n)).copy_from(&plant.a);
    for k in 1..blocks {
        for i in 0..n {
            a_bar[(k * n + i, (k - 1) * n + i)] = 1.0;
        }
    }

    let mut bu_bar = DMatrix::zeros(dim, plant.bu.ncols());
    bu_bar.view_mut((0, 0), (n, plant.bu.ncols())).copy_from(&plant.bu);
    let mut bw_bar = DMatrix::zeros(dim, plant.bw.ncols());
    bw_bar.view_mut((0, 0), (n, plant.bw.ncols())).copy_from(&plant.bw);

    let mut c_bar = DMatrix::zeros(ny_bar, dim);
    let mut v = DMatrix::zeros(ny_bar, ny_bar);
    for s in 0..n_y {
        for d in 0..blocks {
            let row = s * blocks + d;
            for j in 0..n {
                c_bar[(row, d * n + j)] = plant.c[(s, j)];
            }
            v[(row, row)] = plant.sigma2[s];
        }
    }

    let mut q_bar = &bw_bar * &plant.w * bw_bar.transpose();
    linalg::symmetrize(&mut q_bar);

    Ok(AugmentedModel {
        a_bar,
        bu_bar,
        bw_bar,
        c_bar,
        v,
        w: plant.w.clone(),
        q_bar,
        n,
        n_y,
        d_max,
        ny_bar,
    })
}
