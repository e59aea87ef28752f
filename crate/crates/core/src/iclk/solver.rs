//! Damped normal equations `(JᵀWJ + λD) Δξ = JᵀWr` with `D = diag(JᵀWJ)`.

use nalgebra::{Matrix6, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::se3::TwistSE3;

/// Rows reduced per parallel task; fixed so sums never depend on the
/// number of workers.
const REDUCE_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct NormalEquations {
    pub jtwj: Matrix6<f64>,
    pub jtwr: Vector6<f64>,
    /// Number of rows with positive weight.
    pub rows: usize,
    /// `Σ w r²`.
    pub weighted_sq: f64,
}

impl Default for NormalEquations {
    fn default() -> Self {
        NormalEquations {
            jtwj: Matrix6::zeros(),
            jtwr: Vector6::zeros(),
            rows: 0,
            weighted_sq: 0.0,
        }
    }
}

impl NormalEquations {
    #[inline]
    pub fn add_row(&mut self, j: &[f64; 6], r: f64, w: f64) {
        if w <= 0.0 {
            return;
        }
        for a in 0..6 {
            let wja = w * j[a];
            self.jtwr[a] += wja * r;
            for b in a..6 {
                self.jtwj[(a, b)] += wja * j[b];
            }
        }
        self.rows += 1;
        self.weighted_sq += w * r * r;
    }

    fn merge(&mut self, other: &NormalEquations) {
        self.jtwj += other.jtwj;
        self.jtwr += other.jtwr;
        self.rows += other.rows;
        self.weighted_sq += other.weighted_sq;
    }

    fn symmetrize(&mut self) {
        for a in 0..6 {
            for b in 0..a {
                self.jtwj[(a, b)] = self.jtwj[(b, a)];
            }
        }
    }

    /// Accumulates rows `(jacobians[i], residuals[i], weights[i])` with a
    /// fixed-order chunked reduction.
    pub fn accumulate(jacobians: &[[f64; 6]], residuals: &[f64], weights: &[f64]) -> Self {
        assert_eq!(jacobians.len(), residuals.len());
        assert_eq!(jacobians.len(), weights.len());
        let partials: Vec<NormalEquations> = jacobians
            .par_chunks(REDUCE_CHUNK)
            .zip(residuals.par_chunks(REDUCE_CHUNK))
            .zip(weights.par_chunks(REDUCE_CHUNK))
            .map(|((j, r), w)| {
                let mut ne = NormalEquations::default();
                for i in 0..j.len() {
                    ne.add_row(&j[i], r[i], w[i]);
                }
                ne
            })
            .collect();
        let mut total = NormalEquations::default();
        for p in &partials {
            total.merge(p);
        }
        total.symmetrize();
        total
    }
}

/// Solves the damped system by Cholesky factorization.
pub fn lm_step(ne: &NormalEquations, lambda: f64) -> Result<TwistSE3> {
    if ne.rows < 6 {
        return Err(Error::Degenerate(format!("{} weighted rows, need at least 6", ne.rows)));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("damping must be >= 0, got {lambda}")));
    }
    let mut a = ne.jtwj;
    for i in 0..6 {
        a[(i, i)] += lambda * ne.jtwj[(i, i)];
    }
    if !a.iter().all(|v| v.is_finite()) || !ne.jtwr.iter().all(|v| v.is_finite()) {
        return Err(Error::Degenerate("non-finite normal equations".into()));
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Degenerate("normal matrix is not positive definite".into()))?;
    let dx = chol.solve(&ne.jtwr);
    let residual = (a * dx - ne.jtwr).norm();
    if !dx.iter().all(|v| v.is_finite()) || residual > 1e-8 * ne.jtwr.norm() {
        return Err(Error::Degenerate(format!(
            "ill-conditioned normal equations (solve residual {residual:e})"
        )));
    }
    Ok(TwistSE3::from_vector(&dx))
}
