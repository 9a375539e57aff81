//! Floating-point operation counts.
//!
//! One flop per scalar multiply and per scalar add. A product of an `r×k`
//! and a `k×c` matrix costs `r·c·(2k−1)`; inverting an `m×m` matrix costs
//! `⌈(2/3)m³ + 2m²⌉`. Measurement matrices are counted as dense. The state
//! prediction `Āx̂ + B̄_u u` is common to both estimators and left out.

pub fn matmul(r: usize, k: usize, c: usize) -> u64 {
    if k == 0 {
        return 0;
    }
    (r * c * (2 * k - 1)) as u64
}

pub fn add(r: usize, c: usize) -> u64 {
    (r * c) as u64
}

pub fn inverse(m: usize) -> u64 {
    let m = m as f64;
    (2.0 / 3.0 * m * m * m + 2.0 * m * m - 1e-9).ceil() as u64
}

/// Jump-observer correction `x̂ = x̂⁻ + L_a(m_a − C_a x̂⁻)` with `k` active
/// slots and augmented dimension `n`.
pub fn jump_update(n: usize, k: usize) -> u64 {
    if k == 0 {
        return 0;
    }
    matmul(k, n, 1) + add(k, 1) + matmul(n, k, 1) + add(n, 1)
}

/// Kalman covariance prediction plus Joseph-form correction with `k` active slots.
pub fn kalman_step(n: usize, k: usize) -> u64 {
    let predict = 2 * matmul(n, n, n) + add(n, n);
    if k == 0 {
        return predict;
    }
    let innovation_cov = matmul(k, n, n) + matmul(k, n, k) + add(k, k);
    let gain = inverse(k) + matmul(n, k, k);
    let state = matmul(k, n, 1) + add(k, 1) + matmul(n, k, 1) + add(n, 1);
    let joseph = matmul(n, k, n) + add(n, n) + 2 * matmul(n, n, n) + matmul(n, k, k) + matmul(n, k, n) + add(n, n);
    predict + innovation_cov + gain + state + joseph
}
