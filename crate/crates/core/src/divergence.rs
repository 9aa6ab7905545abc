//! Pairwise neural response divergence between sparse atoms:
//! `beta_ij = 1 - exp(-||t_i - t_j|| / sigma^2)`.

use crate::atoms::{squared_distance, SparseAtomSet};
use crate::error::{NerdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SigmaMode {
    /// Use the given `sigma^2`.
    Fixed(f64),
    /// Mean pairwise distance of the atoms being compared.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceParams {
    /// The kernel width is stored squared, which is the only form used.
    pub sigma_sq: f64,
}

impl DivergenceParams {
    pub fn new(sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
            return Err(NerdError::InvalidArgument(format!(
                "sigma^2 must be positive and finite, got {sigma_sq}"
            )));
        }
        Ok(Self { sigma_sq })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }
}

/// Euclidean distance between two atoms. Kept in one place so the metric can
/// be swapped.
#[inline]
pub fn atom_distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// `sigma^2` = mean distance over unordered pairs; 1 when there are no pairs
/// or every atom coincides.
pub fn estimate_sigma(atoms: &SparseAtomSet) -> DivergenceParams {
    let n = atoms.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            total += atom_distance(&atoms.centroids[i], &atoms.centroids[j]);
            pairs += 1;
        }
    }
    let mean = if pairs > 0 { total / pairs as f64 } else { 0.0 };
    DivergenceParams {
        sigma_sq: if mean > 0.0 { mean } else { 1.0 },
    }
}

pub fn resolve_sigma(mode: SigmaMode, atoms: &SparseAtomSet) -> Result<DivergenceParams> {
    match mode {
        SigmaMode::Fixed(s) => DivergenceParams::new(s),
        SigmaMode::Auto => Ok(estimate_sigma(atoms)),
    }
}

/// Symmetric `n x n` divergences, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceMatrix {
    pub size: usize,
    pub values: Vec<f64>,
}

impl DivergenceMatrix {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }
}

pub fn divergence_matrix(
    atoms: &SparseAtomSet,
    params: &DivergenceParams,
) -> Result<DivergenceMatrix> {
    if params.sigma_sq.is_nan() || params.sigma_sq <= 0.0 {
        return Err(NerdError::InvalidArgument(
            "sigma^2 must be positive".into(),
        ));
    }
    if atoms.centroids.iter().flatten().any(|v| !v.is_finite()) {
        return Err(NerdError::NonFinite("sparse atoms"));
    }
    let n = atoms.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = atom_distance(&atoms.centroids[i], &atoms.centroids[j]);
            let beta = 1.0 - (-d / params.sigma_sq).exp();
            values[i * n + j] = beta;
            values[j * n + i] = beta;
        }
    }
    Ok(DivergenceMatrix { size: n, values })
}
