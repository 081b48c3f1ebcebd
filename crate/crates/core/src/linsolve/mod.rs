//! Sparse storage and the symmetric saddle-point solves taken at every step.
//!
//! Both the generalized Stokes problem (Mini / P1) and the mixed Darcy problem
//! (RT0 / P0) have the bordered form
//!
//! ```text
//! [  A   -B^T   0 ] [ x ]   [ f ]
//! [ -B    0     w ] [ p ] = [ g ]
//! [  0    w^T   0 ] [ l ]   [ 0 ]
//! ```
//!
//! where `w` holds the integrals of the multiplier basis so that `w^T p = 0`
//! pins the mean of the pressure or potential. Essential conditions on the
//! primal unknowns are imposed by symmetric elimination: their rows and
//! columns are replaced by identity and the removed columns are kept to lift
//! the prescribed values onto the right-hand side.
//!
//! The operators are constant in time, so a [`SaddleSystem`] is factorized
//! once by [`SaddleSystem::prepare`] and the resulting [`PreparedSaddle`] is
//! reused for every solve. Factorization is a sparse LU with partial pivoting,
//! followed by a few steps of iterative refinement against the stored operator.
//!
//! The mean row is dense and ruins the fill-reducing ordering, so it is never
//! factorized. Instead the LU is taken of the sparse matrix obtained by
//! dropping the border and adding 1 to the first multiplier diagonal, which
//! removes the constant null vector. The bordered operator differs from that
//! matrix by a rank-3 term, applied with the Woodbury formula.
//! A `PreparedSaddle` is immutable; concurrent solves against one handle are
//! safe because each solve allocates its own workspace.

mod sparse;

pub use sparse::{SparseMatrix, Triplets};
pub(crate) use sparse::{dot, norm2};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Relative residual every solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;
/// Refinement continues while each step at least halves the residual. The
/// bordered solve is exact only up to the Woodbury cancellation, and identities
/// built on the constraint rows need the residual at rounding level.
const REFINE_STALL: f64 = 0.5;
const MAX_REFINEMENT_STEPS: usize = 4;

/// An unfactorized bordered saddle-point system.
#[derive(Debug, Clone)]
pub struct SaddleSystem {
    primal: SparseMatrix,
    divergence: SparseMatrix,
    mean_weights: Option<Vec<f64>>,
    fixed: Vec<usize>,
}

impl SaddleSystem {
    /// `primal` is `n x n`, `divergence` is `m x n`. `mean_weights`, when present,
    /// has length `m` and appends the zero-mean multiplier row and column.
    pub fn new(
        primal: SparseMatrix,
        divergence: SparseMatrix,
        mean_weights: Option<Vec<f64>>,
        mut fixed: Vec<usize>,
    ) -> Result<Self> {
        let n = primal.n_rows();
        if primal.n_cols() != n {
            return Err(Error::DimensionMismatch {
                context: "primal block columns",
                expected: n,
                found: primal.n_cols(),
            });
        }
        if divergence.n_cols() != n {
            return Err(Error::DimensionMismatch {
                context: "divergence block columns",
                expected: n,
                found: divergence.n_cols(),
            });
        }
        if let Some(w) = &mean_weights {
            if w.len() != divergence.n_rows() {
                return Err(Error::DimensionMismatch {
                    context: "mean-constraint weights",
                    expected: divergence.n_rows(),
                    found: w.len(),
                });
            }
        }
        fixed.sort_unstable();
        fixed.dedup();
        if fixed.last().is_some_and(|&d| d >= n) {
            return Err(Error::InvalidConfig("fixed dof outside the primal block".into()));
        }
        Ok(Self {
            primal,
            divergence,
            mean_weights,
            fixed,
        })
    }

    pub fn n_primal(&self) -> usize {
        self.primal.n_rows()
    }

    pub fn n_multiplier(&self) -> usize {
        self.divergence.n_rows()
    }

    pub fn dim(&self) -> usize {
        self.n_primal() + self.n_multiplier() + usize::from(self.mean_weights.is_some())
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed
    }

    /// The full symmetric operator before essential conditions are applied.
    pub fn full_operator(&self) -> SparseMatrix {
        let n = self.n_primal();
        let m = self.n_multiplier();
        let dim = self.dim();
        let cap = self.primal.nnz() + 2 * self.divergence.nnz() + 2 * m;
        let mut t = Triplets::with_capacity(dim, dim, cap);
        t.push_block(&self.primal, 0, 0, 1.0);
        for (i, j, v) in self.divergence.iter() {
            t.push(n + i, j, -v);
            t.push(j, n + i, -v);
        }
        if let Some(w) = &self.mean_weights {
            for (i, &wi) in w.iter().enumerate() {
                t.push(n + i, n + m, wi);
                t.push(n + m, n + i, wi);
            }
        }
        t.build()
    }

    /// Factorizes the constrained operator.
    pub fn prepare(&self) -> Result<PreparedSaddle> {
        let full = self.full_operator();
        let (operator, lift) = eliminate_dofs(&full, &self.fixed);
        let (lu, border) = match &self.mean_weights {
            Some(_) if self.n_multiplier() > 0 => {
                let (regular, correction) = split_border(&operator, self.n_primal());
                let lu = factorize(&regular)?;
                let border = BorderCorrection::new(&lu, correction)?;
                (lu, Some(border))
            }
            _ => (factorize(&operator)?, None),
        };
        let mut is_fixed = vec![false; operator.n_rows()];
        for &d in &self.fixed {
            is_fixed[d] = true;
        }
        let prepared = PreparedSaddle {
            n_primal: self.n_primal(),
            n_multiplier: self.n_multiplier(),
            has_mean: self.mean_weights.is_some(),
            fixed: self.fixed.clone(),
            is_fixed,
            operator,
            lift,
            lu,
            border,
        };
        prepared.probe()?;
        Ok(prepared)
    }
}

/// Symmetric elimination of `fixed` dofs: returns the operator with identity
/// rows/columns on `fixed` and the removed columns (zero elsewhere) for lifting.
pub fn eliminate_dofs(matrix: &SparseMatrix, fixed: &[usize]) -> (SparseMatrix, SparseMatrix) {
    let n = matrix.n_rows();
    let mut is_fixed = vec![false; matrix.n_cols()];
    for &d in fixed {
        is_fixed[d] = true;
    }
    let mut kept = Triplets::with_capacity(n, matrix.n_cols(), matrix.nnz());
    let mut lift = Triplets::new(n, matrix.n_cols());
    for (i, j, v) in matrix.iter() {
        if is_fixed[j] {
            lift.push(i, j, v);
        } else if !is_fixed[i] {
            kept.push(i, j, v);
        }
    }
    for &d in fixed {
        kept.push(d, d, 1.0);
    }
    (kept.build(), lift.build())
}

fn factorize(operator: &SparseMatrix) -> Result<Lu<usize, f64>> {
    let n = operator.n_rows();
    let triplets: Vec<Triplet<usize, usize, f64>> = operator.iter().map(|(i, j, v)| Triplet::new(i, j, v)).collect();
    let csc = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| Error::Singular(format!("could not build column storage: {e:?}")))?;
    csc.sp_lu()
        .map_err(|e| Error::Singular(format!("LU factorization failed: {e:?}")))
}

/// Splits the bordered operator (mean row and column last) into a sparse
/// nonsingular part `M` and the rank-3 remainder `U V^T`, returned as the
/// column pairs `(u_k, v_k)`. `r` is the first multiplier row.
fn split_border(operator: &SparseMatrix, r: usize) -> (SparseMatrix, [(Vec<f64>, Vec<f64>); 3]) {
    let dim = operator.n_rows();
    let mean = dim - 1;
    let mut w = vec![0.0; dim];
    let mut t = Triplets::with_capacity(dim, dim, operator.nnz());
    for (i, j, v) in operator.iter() {
        if j == mean && i != mean {
            w[i] = v;
        } else if i != mean {
            t.push(i, j, v);
        }
    }
    t.push(r, r, 1.0);
    t.push(mean, mean, 1.0);
    let unit = |k: usize| {
        let mut e = vec![0.0; dim];
        e[k] = 1.0;
        e
    };
    let neg_unit_r = {
        let mut e = unit(r);
        e[r] = -1.0;
        e
    };
    let mut w_minus = w.clone();
    w_minus[mean] = -1.0;
    // -e_r e_r^T + w e_mean^T + e_mean (w - e_mean)^T
    (t.build(), [(unit(r), neg_unit_r), (w, unit(mean)), (unit(mean), w_minus)])
}

/// Precomputed pieces of the Woodbury formula
/// `(M + U V^T)^{-1} = M^{-1} - M^{-1} U C^{-1} V^T M^{-1}`, `C = I + V^T M^{-1} U`.
struct BorderCorrection {
    m_inv_u: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    c_inv: nalgebra::Matrix3<f64>,
}

impl BorderCorrection {
    fn new(lu: &Lu<usize, f64>, correction: [(Vec<f64>, Vec<f64>); 3]) -> Result<Self> {
        let (u, v): (Vec<_>, Vec<_>) = correction.into_iter().unzip();
        let m_inv_u: Vec<Vec<f64>> = u.iter().map(|col| lu_apply(lu, col)).collect();
        let c = nalgebra::Matrix3::from_fn(|i, j| f64::from(i == j) + dot(&v[i], &m_inv_u[j]));
        let c_inv = c
            .try_inverse()
            .filter(|m| m.iter().all(|x| x.is_finite()))
            .ok_or_else(|| Error::Singular("mean constraint does not remove the multiplier null space".into()))?;
        Ok(Self { m_inv_u, v, c_inv })
    }

    fn apply(&self, y: &mut [f64]) {
        let t = nalgebra::Vector3::from_fn(|k, _| dot(&self.v[k], y));
        let s = self.c_inv * t;
        for (k, col) in self.m_inv_u.iter().enumerate() {
            y.iter_mut().zip(col).for_each(|(yi, ci)| *yi -= s[k] * ci);
        }
    }
}

fn lu_apply(lu: &Lu<usize, f64>, b: &[f64]) -> Vec<f64> {
    let mut m = faer::Mat::<f64>::from_fn(b.len(), 1, |i, _| b[i]);
    lu.solve_in_place(&mut m);
    (0..b.len()).map(|i| m[(i, 0)]).collect()
}

/// A factorized saddle-point operator, reusable across right-hand sides.
pub struct PreparedSaddle {
    n_primal: usize,
    n_multiplier: usize,
    has_mean: bool,
    fixed: Vec<usize>,
    is_fixed: Vec<bool>,
    operator: SparseMatrix,
    lift: SparseMatrix,
    lu: Lu<usize, f64>,
    border: Option<BorderCorrection>,
}

impl std::fmt::Debug for PreparedSaddle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PreparedSaddle")
            .field("n_primal", &self.n_primal)
            .field("n_multiplier", &self.n_multiplier)
            .field("has_mean", &self.has_mean)
            .field("n_fixed", &self.fixed.len())
            .field("nnz", &self.operator.nnz())
            .finish()
    }
}

/// Split solution of a saddle solve.
#[derive(Debug, Clone)]
pub struct SaddleSolution {
    pub primal: Vec<f64>,
    /// Pressure or potential coefficients.
    pub multiplier: Vec<f64>,
    /// Lagrange multiplier of the zero-mean row (zero for compatible data).
    pub mean_multiplier: f64,
    pub relative_residual: f64,
}

impl PreparedSaddle {
    pub fn dim(&self) -> usize {
        self.operator.n_rows()
    }

    pub fn n_primal(&self) -> usize {
        self.n_primal
    }

    pub fn n_multiplier(&self) -> usize {
        self.n_multiplier
    }

    pub fn fixed_dofs(&self) -> &[usize] {
        &self.fixed
    }

    /// The constrained operator this handle was factorized from.
    pub fn operator(&self) -> &SparseMatrix {
        &self.operator
    }

    fn probe(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5a17);
        let b: Vec<f64> = (0..self.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = self.lu_solve(&b);
        let rel = self.residual(&x, &b) / norm2(&b);
        if !rel.is_finite() || rel > 1e-6 {
            return Err(Error::Singular(format!(
                "probe solve of a {}x{} operator left relative residual {rel:.3e}",
                self.dim(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn lu_solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = lu_apply(&self.lu, b);
        if let Some(border) = &self.border {
            border.apply(&mut x);
        }
        x
    }

    fn residual(&self, x: &[f64], b: &[f64]) -> f64 {
        let ax = self.operator.mul_vec(x);
        ax.iter().zip(b).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    /// Solves `K x = rhs` with the constrained operator `K`.
    ///
    /// The relative residual is driven below [`SOLVE_TOLERANCE`]; a zero
    /// right-hand side returns zero.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        self.solve_with_residual(rhs).map(|(x, _)| x)
    }

    pub fn solve_with_residual(&self, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
        if rhs.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "saddle right-hand side",
                expected: self.dim(),
                found: rhs.len(),
            });
        }
        let bnorm = norm2(rhs);
        if bnorm == 0.0 {
            return Ok((vec![0.0; rhs.len()], 0.0));
        }
        let mut x = self.lu_solve(rhs);
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut steps = 0;
        loop {
            let ax = self.operator.mul_vec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let rel = norm2(&r) / bnorm;
            let prev = best.as_ref().map_or(f64::INFINITY, |b| b.1);
            let stalled = !(rel < REFINE_STALL * prev);
            if rel < prev || best.is_none() {
                best = Some((x.clone(), rel));
            }
            if !rel.is_finite() || stalled || rel <= f64::EPSILON || steps == MAX_REFINEMENT_STEPS {
                break;
            }
            let dx = self.lu_solve(&r);
            x.iter_mut().zip(&dx).for_each(|(xi, d)| *xi += d);
            steps += 1;
        }
        let (x, rel) = best.expect("at least one iterate");
        if !(rel <= SOLVE_TOLERANCE) {
            return Err(Error::NotConverged {
                residual: rel,
                iterations: steps,
            });
        }
        Ok((x, rel))
    }

    /// Solves with a primal load `primal_rhs`, optional multiplier rows
    /// `multiplier_rhs` (the `g` block) and values for the fixed dofs, given in
    /// the order of [`PreparedSaddle::fixed_dofs`].
    pub fn solve_saddle(
        &self,
        primal_rhs: &[f64],
        multiplier_rhs: Option<&[f64]>,
        fixed_values: &[f64],
    ) -> Result<SaddleSolution> {
        if primal_rhs.len() != self.n_primal {
            return Err(Error::DimensionMismatch {
                context: "primal load",
                expected: self.n_primal,
                found: primal_rhs.len(),
            });
        }
        if fixed_values.len() != self.fixed.len() {
            return Err(Error::DimensionMismatch {
                context: "fixed values",
                expected: self.fixed.len(),
                found: fixed_values.len(),
            });
        }
        let dim = self.dim();
        let mut b = vec![0.0; dim];
        b[..self.n_primal].copy_from_slice(primal_rhs);
        if let Some(g) = multiplier_rhs {
            if g.len() != self.n_multiplier {
                return Err(Error::DimensionMismatch {
                    context: "multiplier load",
                    expected: self.n_multiplier,
                    found: g.len(),
                });
            }
            b[self.n_primal..self.n_primal + self.n_multiplier].copy_from_slice(g);
        }
        if fixed_values.iter().any(|&v| v != 0.0) {
            let mut g_full = vec![0.0; dim];
            for (&d, &v) in self.fixed.iter().zip(fixed_values) {
                g_full[d] = v;
            }
            let lifted = self.lift.mul_vec(&g_full);
            for (i, l) in lifted.iter().enumerate() {
                if !self.is_fixed[i] {
                    b[i] -= l;
                }
            }
        }
        for (&d, &v) in self.fixed.iter().zip(fixed_values) {
            b[d] = v;
        }
        let (x, rel) = self.solve_with_residual(&b)?;
        let n = self.n_primal;
        let m = self.n_multiplier;
        Ok(SaddleSolution {
            primal: x[..n].to_vec(),
            multiplier: x[n..n + m].to_vec(),
            mean_multiplier: if self.has_mean { x[n + m] } else { 0.0 },
            relative_residual: rel,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> SparseMatrix {
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 2.0);
            if i > 0 {
                t.push(i, i - 1, -1.0);
                t.push(i - 1, i, -1.0);
            }
        }
        t.build()
    }

    fn toy_saddle(mean: bool, fixed: Vec<usize>) -> SaddleSystem {
        // B sums neighbouring pairs; its rows add up to a constant vector only
        // when the mean row is present.
        let n = 6;
        let mut b = Triplets::new(3, n);
        for r in 0..3 {
            b.push(r, 2 * r, 1.0);
            b.push(r, 2 * r + 1, -1.0);
        }
        let w = mean.then(|| vec![1.0; 3]);
        SaddleSystem::new(laplace_1d(n), b.build(), w, fixed).unwrap()
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let p = toy_saddle(true, vec![]).prepare().unwrap();
        let x = p.solve(&vec![0.0; p.dim()]).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_dense_solution() {
        let sys = toy_saddle(true, vec![0]);
        let p = sys.prepare().unwrap();
        let b: Vec<f64> = (0..p.dim()).map(|i| (i as f64 * 0.37).sin()).collect();
        let x = p.solve(&b).unwrap();
        let dense = p.operator().to_dense();
        let xd = dense.lu().solve(&nalgebra::DVector::from_vec(b)).unwrap();
        for (a, b) in x.iter().zip(xd.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_values_are_reproduced() {
        let p = toy_saddle(true, vec![0, 5]).prepare().unwrap();
        let sol = p.solve_saddle(&[0.1; 6], None, &[2.0, -1.0]).unwrap();
        assert_eq!(sol.primal[0], 2.0);
        assert_eq!(sol.primal[5], -1.0);
        assert!(sol.relative_residual <= SOLVE_TOLERANCE);
    }

    #[test]
    fn dimension_errors() {
        let p = toy_saddle(true, vec![]).prepare().unwrap();
        assert!(matches!(p.solve(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(
            p.solve_saddle(&[0.0; 6], None, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn singular_operator_is_reported() {
        let a = SparseMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let b = SparseMatrix::zeros(0, 2);
        let sys = SaddleSystem::new(a, b, None, vec![]).unwrap();
        assert!(matches!(sys.prepare(), Err(Error::Singular(_))));
    }

    #[test]
    fn elimination_keeps_symmetry() {
        let full = toy_saddle(true, vec![]).full_operator();
        let (k, _) = eliminate_dofs(&full, &[1, 4]);
        assert!(k.is_symmetric(0.0));
        assert_eq!(k.get(1, 1), 1.0);
        assert_eq!(k.get(1, 0), 0.0);
    }
}
