//! Discrete inf-sup constant of the elastic Helmholtz form and its growth in `k`.
//!
//! `gamma_h(k) = 1 / sigma_min(N^{-1/2} A N^{-1/2})` with `A` the full form
//! matrix and `N` the Gramian of `|u|_V^2 = k^2 |u|^2 + |grad u|^2`, taken over
//! all nodal dofs of a pure-Robin domain.

use rayon::prelude::*;
use thiserror::Error;

use crate::fe::{assemble_global_form, assemble_norm_matrix, DofMap, MaterialParams};
use crate::linalg::{factorize_symmetric, min_generalized_singular_factored, LinalgError};
use crate::mesh::{BoundaryKind, DomainSpec, MeshError, StructuredMesh};

#[derive(Debug, Error)]
pub enum StabilityError {
    #[error("inf-sup probe needs Robin conditions on every boundary face")]
    NotPureRobin,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("growth fit needs at least 3 samples with distinct k > 0 and gamma > 0: {0}")]
    Degenerate(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfSupSample {
    pub k: f64,
    pub h: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub dofs: usize,
}

/// `gamma ~ prefactor * k^exponent`; `residual` is the RMS misfit in `ln gamma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub residual: f64,
}

fn is_pure_robin(spec: &DomainSpec) -> bool {
    let outer = spec.outer_tags[..2 * spec.dim].iter().all(|&t| t == BoundaryKind::Robin);
    outer && (spec.hole.is_none() || spec.hole_tag == BoundaryKind::Robin)
}

pub fn estimate_infsup(spec: &DomainSpec, h: f64, k: f64, mat: &MaterialParams) -> Result<InfSupSample, StabilityError> {
    if !is_pure_robin(spec) {
        return Err(StabilityError::NotPureRobin);
    }
    let mesh = StructuredMesh::build(spec, h)?;
    let dofs = DofMap::all(&mesh);
    let mat = mat.with_k(k);
    let a = assemble_global_form(&mesh, &mat, &dofs);
    let n = assemble_norm_matrix(&mesh, k, &dofs);
    // the form matrix is complex symmetric
    let fa = factorize_symmetric(&a, 0)?;
    let est = min_generalized_singular_factored(&a, &fa, &n)?;
    log::debug!("inf-sup k={k} h={h}: sigma_min={} after {} iterations", est.sigma_min, est.iterations);
    Ok(InfSupSample { k, h, gamma: 1.0 / est.sigma_min, iterations: est.iterations, dofs: dofs.num_dofs() })
}

/// One sample per `(h, k)` pair, evaluated in parallel; order is preserved.
pub fn estimate_sweep(
    spec: &DomainSpec,
    points: &[(f64, f64)],
    mat: &MaterialParams,
) -> Vec<Result<InfSupSample, StabilityError>> {
    points.par_iter().map(|&(h, k)| estimate_infsup(spec, h, k, mat)).collect()
}

/// Least squares fit of `ln gamma = exponent ln k + ln prefactor`.
pub fn fit_growth(samples: &[InfSupSample]) -> Result<GrowthFit, StabilityError> {
    if samples.len() < 3 {
        return Err(StabilityError::Degenerate(format!("{} samples", samples.len())));
    }
    if let Some(s) = samples.iter().find(|s| !(s.k > 0.0 && s.gamma > 0.0 && s.k.is_finite() && s.gamma.is_finite())) {
        return Err(StabilityError::Degenerate(format!("k={} gamma={}", s.k, s.gamma)));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.k.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.gamma.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-12 * (1.0 + mx * mx) {
        return Err(StabilityError::Degenerate("all k coincide".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let residual =
        (xs.iter().zip(&ys).map(|(x, y)| (y - intercept - exponent * x).powi(2)).sum::<f64>() / n).sqrt();
    Ok(GrowthFit { exponent, prefactor: intercept.exp(), residual })
}
