//! Positive-semidefinite matrix parameterizations.
//!
//! Covariance and precision matrices are stored as a triangular factor `L`
//! with a log-parameterized diagonal: the represented PSD matrix is the Gram
//! product `L L^T`, which is positive definite for any unconstrained setting
//! of the parameters, so optimizers never need projection steps. Two layouts
//! are supported:
//!
//! - [`FactorLayout::Dense`]: `L` is lower triangular with free strictly-lower
//!   entries and `exp(log_diag)` on the diagonal.
//! - [`FactorLayout::Diagonal`]: `L = diag(exp(log_diag))`, so the Gram matrix
//!   is `diag(exp(2 log_diag))`. Diagonal-layout operations never materialize
//!   a `dim x dim` array, keeping memory linear in `dim`.
//!
//! Everything a loss needs from the factor — quadratic forms, the Gram trace
//! and log-determinant — is available both as plain values
//! ([`TriangularFactor`]) and as tape expressions ([`FactorVars`]) so the same
//! formulas serve prediction and training.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::tape::{Tape, Var};

/// Structure of the triangular factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorLayout {
    /// Full lower-triangular factor; Gram matrix is a general PSD matrix.
    Dense,
    /// Diagonal factor; Gram matrix is diagonal.
    Diagonal,
}

/// A triangular factor `L` held as plain arrays.
///
/// `off_diag` stores the strictly-lower entries for the dense layout (the
/// upper triangle and diagonal of the stored array are ignored); the diagonal
/// of `L` is always `exp(log_diag)`.
#[derive(Debug, Clone)]
pub struct TriangularFactor {
    layout: FactorLayout,
    off_diag: Option<Array2<f64>>,
    log_diag: Array1<f64>,
}

impl TriangularFactor {
    /// Dense factor from a strictly-lower matrix and log-diagonal.
    pub fn dense(off_diag: Array2<f64>, log_diag: Array1<f64>) -> Result<Self> {
        let d = log_diag.len();
        if off_diag.nrows() != d || off_diag.ncols() != d {
            return Err(Error::shape(
                "TriangularFactor::dense",
                format!(
                    "off_diag is {}x{}, log_diag has length {d}",
                    off_diag.nrows(),
                    off_diag.ncols()
                ),
            ));
        }
        Ok(TriangularFactor {
            layout: FactorLayout::Dense,
            off_diag: Some(off_diag),
            log_diag,
        })
    }

    /// Diagonal factor `L = diag(exp(log_diag))`.
    pub fn diagonal(log_diag: Array1<f64>) -> Self {
        TriangularFactor {
            layout: FactorLayout::Diagonal,
            off_diag: None,
            log_diag,
        }
    }

    /// Factor of the identity matrix (`log_diag = 0`).
    pub fn identity(dim: usize, layout: FactorLayout) -> Self {
        match layout {
            FactorLayout::Dense => TriangularFactor {
                layout,
                off_diag: Some(Array2::zeros((dim, dim))),
                log_diag: Array1::zeros(dim),
            },
            FactorLayout::Diagonal => TriangularFactor::diagonal(Array1::zeros(dim)),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_diag.len()
    }

    pub fn layout(&self) -> FactorLayout {
        self.layout
    }

    pub fn log_diag(&self) -> &Array1<f64> {
        &self.log_diag
    }

    /// Diagonal of `L`, i.e. `exp(log_diag)`.
    pub fn diag(&self) -> Array1<f64> {
        self.log_diag.mapv(f64::exp)
    }

    /// Materialize `L` as a dense lower-triangular matrix.
    ///
    /// Intended for small matrices (predictive covariances, tests); the
    /// diagonal layout never requires it internally.
    pub fn lower(&self) -> Array2<f64> {
        let d = self.dim();
        let mut l = Array2::zeros((d, d));
        if let Some(off) = &self.off_diag {
            for i in 0..d {
                for j in 0..i {
                    l[[i, j]] = off[[i, j]];
                }
            }
        }
        for i in 0..d {
            l[[i, i]] = self.log_diag[i].exp();
        }
        l
    }

    /// The represented PSD matrix `L L^T`, materialized densely.
    pub fn gram(&self) -> Array2<f64> {
        match self.layout {
            FactorLayout::Dense => {
                let l = self.lower();
                l.dot(&l.t())
            }
            FactorLayout::Diagonal => Array2::from_diag(&self.log_diag.mapv(|x| (2.0 * x).exp())),
        }
    }

    /// Diagonal of `L L^T` without forming the full matrix.
    pub fn gram_diag(&self) -> Array1<f64> {
        match self.layout {
            FactorLayout::Dense => {
                let d = self.dim();
                let off = self.off_diag.as_ref().expect("dense layout has off_diag");
                Array1::from_shape_fn(d, |i| {
                    let mut s = (2.0 * self.log_diag[i]).exp();
                    for j in 0..i {
                        s += off[[i, j]] * off[[i, j]];
                    }
                    s
                })
            }
            FactorLayout::Diagonal => self.log_diag.mapv(|x| (2.0 * x).exp()),
        }
    }

    /// Quadratic form `v^T (L L^T) v = ||L^T v||^2`; never negative.
    pub fn quad_form(&self, v: ArrayView1<'_, f64>) -> f64 {
        assert_eq!(v.len(), self.dim(), "quad_form dimension mismatch");
        match self.layout {
            FactorLayout::Dense => {
                let off = self.off_diag.as_ref().expect("dense layout has off_diag");
                let mut total = 0.0;
                for j in 0..self.dim() {
                    // (L^T v)_j = exp(log_diag_j) v_j + sum_{i>j} off[i,j] v_i
                    let mut t = self.log_diag[j].exp() * v[j];
                    for i in (j + 1)..self.dim() {
                        t += off[[i, j]] * v[i];
                    }
                    total += t * t;
                }
                total
            }
            FactorLayout::Diagonal => {
                let mut total = 0.0;
                for (vi, ld) in v.iter().zip(self.log_diag.iter()) {
                    let t = ld.exp() * vi;
                    total += t * t;
                }
                total
            }
        }
    }

    /// `tr(L L^T) = ||L||_F^2`.
    pub fn trace_gram(&self) -> f64 {
        let diag_part: f64 = self.log_diag.iter().map(|x| (2.0 * x).exp()).sum();
        match (&self.layout, &self.off_diag) {
            (FactorLayout::Dense, Some(off)) => {
                let d = self.dim();
                let mut s = diag_part;
                for i in 0..d {
                    for j in 0..i {
                        s += off[[i, j]] * off[[i, j]];
                    }
                }
                s
            }
            _ => diag_part,
        }
    }

    /// `log det(L L^T) = 2 sum(log_diag)`; exact in the parameters.
    pub fn log_det_gram(&self) -> f64 {
        2.0 * self.log_diag.sum()
    }

    /// Inverse of the Gram matrix, `(L L^T)^{-1} = L^{-T} L^{-1}`.
    ///
    /// Dense layout solves two triangular systems per column and symmetrizes
    /// the result; diagonal layout is elementwise.
    pub fn gram_inverse(&self) -> Array2<f64> {
        let d = self.dim();
        match self.layout {
            FactorLayout::Diagonal => {
                Array2::from_diag(&self.log_diag.mapv(|x| (-2.0 * x).exp()))
            }
            FactorLayout::Dense => {
                let l = self.lower();
                let mut inv = Array2::zeros((d, d));
                for j in 0..d {
                    let mut e = Array1::zeros(d);
                    e[j] = 1.0;
                    let y = solve_lower(&l, e.view());
                    let x = solve_lower_transpose(&l, y.view());
                    inv.column_mut(j).assign(&x);
                }
                // Symmetrize away solve round-off so downstream Cholesky
                // factorizations see an exactly symmetric matrix.
                let invt = inv.t().to_owned();
                (&inv + &invt) * 0.5
            }
        }
    }

    /// Draw `mean + L z` with `z` standard normal, so the sample covariance
    /// is the Gram matrix. A log-diagonal low enough for `exp` to underflow
    /// to zero returns the mean exactly.
    pub fn sample_gaussian<R: Rng + ?Sized>(
        &self,
        mean: ArrayView1<'_, f64>,
        rng: &mut R,
    ) -> Array1<f64> {
        let d = self.dim();
        assert_eq!(mean.len(), d, "sample_gaussian dimension mismatch");
        let z: Array1<f64> = Array1::from_shape_fn(d, |_| rng.sample(StandardNormal));
        let mut out = mean.to_owned();
        match self.layout {
            FactorLayout::Diagonal => {
                for i in 0..d {
                    out[i] += self.log_diag[i].exp() * z[i];
                }
            }
            FactorLayout::Dense => {
                let off = self.off_diag.as_ref().expect("dense layout has off_diag");
                for i in 0..d {
                    let mut t = self.log_diag[i].exp() * z[i];
                    for j in 0..i {
                        t += off[[i, j]] * z[j];
                    }
                    out[i] += t;
                }
            }
        }
        out
    }
}

/// Tape-side view of a triangular factor, built from leaf nodes so the
/// factor's parameters receive gradients.
///
/// For the dense layout a masked `dim x dim` lower matrix is materialized
/// once per tape; the diagonal layout stays 1-d throughout, so losses over
/// very wide feature spaces remain linear in `dim`.
pub struct FactorVars {
    layout: FactorLayout,
    /// `exp(log_diag)`, 1-d.
    diag: Var,
    /// Masked lower-triangular matrix including the diagonal (dense only).
    lower: Option<Var>,
    /// The raw log-diagonal node.
    log_diag: Var,
}

impl FactorVars {
    /// Assemble the factor expression from parameter nodes. `off_diag` is
    /// required for the dense layout (a `dim x dim` node whose strictly-lower
    /// entries are used) and must be absent for the diagonal layout.
    pub fn build(
        tape: &mut Tape,
        layout: FactorLayout,
        off_diag: Option<Var>,
        log_diag: Var,
    ) -> Result<Self> {
        let dim = tape.value(log_diag).len();
        let diag = tape.exp(log_diag);
        let lower = match layout {
            FactorLayout::Dense => {
                let off = off_diag.ok_or_else(|| {
                    Error::invalid("FactorVars::build", "dense layout requires off_diag")
                })?;
                let shape = tape.value(off).shape().to_vec();
                if shape != [dim, dim] {
                    return Err(Error::shape(
                        "FactorVars::build",
                        format!("off_diag shape {shape:?} does not match dim {dim}"),
                    ));
                }
                let mask = Array2::from_shape_fn((dim, dim), |(i, j)| f64::from(i > j));
                let mask = tape.constant2(&mask);
                let strict = tape.mul(off, mask);
                let diag_m = tape.diag_embed(diag);
                Some(tape.add(strict, diag_m))
            }
            FactorLayout::Diagonal => {
                if off_diag.is_some() {
                    return Err(Error::invalid(
                        "FactorVars::build",
                        "diagonal layout takes no off_diag",
                    ));
                }
                None
            }
        };
        Ok(FactorVars {
            layout,
            diag,
            lower,
            log_diag,
        })
    }

    pub fn layout(&self) -> FactorLayout {
        self.layout
    }

    /// `exp(log_diag)` as a 1-d node.
    pub fn diag_var(&self) -> Var {
        self.diag
    }

    /// Per-row quadratic forms: given `rows` of shape `(B, dim)`, returns the
    /// length-`B` node with entries `rows[i]^T (L L^T) rows[i]`.
    pub fn quad_form_batch(&self, tape: &mut Tape, rows: Var) -> Var {
        match self.layout {
            FactorLayout::Dense => {
                let lower = self.lower.expect("dense layout has lower");
                // Row i of (rows . L) is L^T rows[i]; square and sum rows.
                let m = tape.matmul(rows, lower);
                let sq = tape.mul(m, m);
                tape.row_sums(sq)
            }
            FactorLayout::Diagonal => {
                let sq = tape.mul(rows, rows);
                let var = tape.mul(self.diag, self.diag);
                tape.matvec(sq, var)
            }
        }
    }

    /// Sum of [`Self::quad_form_batch`] over the batch, as a scalar node.
    pub fn quad_form_sum(&self, tape: &mut Tape, rows: Var) -> Var {
        let q = self.quad_form_batch(tape, rows);
        tape.sum(q)
    }

    /// `tr(L L^T)` as a scalar node.
    pub fn trace_gram(&self, tape: &mut Tape) -> Var {
        match self.layout {
            FactorLayout::Dense => {
                let lower = self.lower.expect("dense layout has lower");
                tape.sum_sq(lower)
            }
            FactorLayout::Diagonal => tape.sum_sq(self.diag),
        }
    }

    /// `log det(L L^T) = 2 sum(log_diag)` as a scalar node.
    pub fn log_det_gram(&self, tape: &mut Tape) -> Var {
        let s = tape.sum(self.log_diag);
        tape.scale(s, 2.0)
    }

    /// Diagonal of the Gram matrix as a 1-d node (diagonal layout only, where
    /// it equals the full matrix).
    pub fn variance_diag(&self, tape: &mut Tape) -> Var {
        assert!(
            matches!(self.layout, FactorLayout::Diagonal),
            "variance_diag is only defined for the diagonal layout"
        );
        tape.mul(self.diag, self.diag)
    }
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// Fails with [`Error::Numerical`] when a pivot is not strictly positive,
/// which is how non-PD inputs surface.
pub fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::shape(
            "cholesky_lower",
            format!("matrix is {}x{}", a.nrows(), a.ncols()),
        ));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Numerical {
                        context: "cholesky_lower",
                        detail: format!("pivot {s:.3e} at index {i} is not positive"),
                    });
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(l)
}

/// Solve `L x = b` for lower-triangular `L` by forward substitution.
pub fn solve_lower(l: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = b.len();
    let mut x = Array1::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[[i, j]] * x[j];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve `L^T x = b` for lower-triangular `L` by back substitution.
pub fn solve_lower_transpose(l: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = b.len();
    let mut x = Array1::zeros(n);
    for i in (0..n).rev() {
        let mut s = b[i];
        for j in (i + 1)..n {
            s -= l[[j, i]] * x[j];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

/// Solve `A x = b` given the lower Cholesky factor of `A`.
pub fn spd_solve(l_chol: &Array2<f64>, b: ArrayView1<'_, f64>) -> Array1<f64> {
    let y = solve_lower(l_chol, b);
    solve_lower_transpose(l_chol, y.view())
}

/// `log det(A)` given the lower Cholesky factor of `A`.
pub fn chol_log_det(l_chol: &Array2<f64>) -> f64 {
    2.0 * l_chol.diag().iter().map(|x| x.ln()).sum::<f64>()
}

/// Empirical covariance of sample rows (denominator `n`, not `n - 1`).
pub fn sample_covariance(samples: &Array2<f64>) -> Array2<f64> {
    let n = samples.nrows() as f64;
    let mean = samples.mean_axis(Axis(0)).expect("non-empty sample matrix");
    let centered = samples - &mean.view().insert_axis(Axis(0));
    centered.t().dot(&centered) / n
}
