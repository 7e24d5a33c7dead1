//! Direct and iterative solvers for the assembled systems.

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, Lu};
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::sparse::{axpy, dot, norm2, CsrMatrix};

/// Factorized sparse matrix, reusable for several right-hand sides.
pub struct SparseLu {
    n: usize,
    lu: Lu<usize, f64>,
}

impl SparseLu {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::SingularSystem("matrix is not square".into()));
        }
        let lu = a
            .to_faer()
            .sp_lu()
            .map_err(|e| Error::SingularSystem(format!("sparse LU failed: {e:?}")))?;
        Ok(Self { n: a.rows(), lu })
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let rhs = Mat::from_fn(self.n, 1, |i, _| b[i]);
        let x = self.lu.solve(&rhs);
        let out: Vec<f64> = (0..self.n).map(|i| x[(i, 0)]).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem("non-finite entries in LU solution".into()));
        }
        Ok(out)
    }
}

/// One-shot direct solve with a residual sanity check.
pub fn solve_direct(a: &CsrMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let x = SparseLu::new(a)?.solve(b)?;
    let r = residual(a, &x, b);
    let scale = norm2(b).max(1e-300);
    if r > 1e-6 * scale && r > 1e-12 {
        return Err(Error::SingularSystem(format!(
            "direct solve residual {r:e} relative to rhs {scale:e}"
        )));
    }
    Ok(x)
}

pub fn residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    ax.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Symmetric positive definite preconditioner applied as `z = M⁻¹ r`.
pub trait Preconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

/// Block-diagonal saddle preconditioner: Cholesky of the velocity block and a
/// diagonal pressure Schur approximation.
pub struct BlockDiagonal {
    nv: usize,
    llt: Llt<usize, f64>,
    pressure_inv: Vec<f64>,
}

impl BlockDiagonal {
    pub fn new(a: &CsrMatrix, pressure_diag: &[f64]) -> Result<Self> {
        let llt = a
            .to_faer()
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::SingularSystem(format!("velocity block Cholesky failed: {e:?}")))?;
        let pressure_inv = pressure_diag
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Ok(Self { nv: a.rows(), llt, pressure_inv })
    }
}

impl Preconditioner for BlockDiagonal {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(self.nv, 1, |i, _| r[i]);
        let x = self.llt.solve(&rhs);
        let mut z: Vec<f64> = (0..self.nv).map(|i| x[(i, 0)]).collect();
        z.extend(r[self.nv..].iter().zip(&self.pressure_inv).map(|(v, d)| v * d));
        z
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MinresStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned MINRES for symmetric (possibly indefinite) systems.
pub fn minres(
    a: &CsrMatrix,
    b: &[f64],
    m: &dyn Preconditioner,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, MinresStats)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((x, MinresStats { iterations: 0, residual: 0.0 }));
    }
    let mut r1 = b.to_vec();
    let mut y = m.apply(&r1);
    let mut beta1 = dot(&r1, &y);
    if beta1 < 0.0 {
        return Err(Error::NoConvergence("preconditioner is not positive definite".into()));
    }
    beta1 = beta1.sqrt();
    let mut r2 = r1.clone();
    let (mut oldb, mut beta) = (0.0, beta1);
    let (mut dbar, mut epsln) = (0.0, 0.0);
    let mut phibar = beta1;
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    for it in 1..=max_iter {
        let s = 1.0 / beta;
        let v: Vec<f64> = y.iter().map(|yi| yi * s).collect();
        let mut yv = a.matvec(&v);
        if it >= 2 {
            axpy(-beta / oldb, &r1, &mut yv);
        }
        let alfa = dot(&v, &yv);
        axpy(-alfa / beta, &r2, &mut yv);
        r1 = std::mem::replace(&mut r2, yv);
        y = m.apply(&r2);
        oldb = beta;
        beta = dot(&r2, &y);
        if beta < 0.0 {
            return Err(Error::NoConvergence("preconditioner is not positive definite".into()));
        }
        beta = beta.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::MIN_POSITIVE);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        let w1 = std::mem::replace(&mut w2, std::mem::take(&mut w));
        w = (0..n).map(|i| (v[i] - oldeps * w1[i] - delta * w2[i]) * denom).collect();
        axpy(phi, &w, &mut x);

        // phibar is the preconditioned residual norm; confirm with the true residual when small.
        if phibar <= tol * beta1 || beta == 0.0 {
            let res = residual(a, &x, b);
            return Ok((x, MinresStats { iterations: it, residual: res / bnorm }));
        }
    }
    let res = residual(a, &x, b) / bnorm;
    Err(Error::NoConvergence(format!(
        "MINRES reached {max_iter} iterations, relative residual {res:e}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::TripletBuilder;

    fn laplace_1d(n: usize) -> CsrMatrix {
        let mut b = TripletBuilder::new(n, n);
        for i in 0..n {
            b.push(i, i, 2.0);
            if i > 0 {
                b.push(i, i - 1, -1.0);
            }
            if i + 1 < n {
                b.push(i, i + 1, -1.0);
            }
        }
        b.build()
    }

    #[test]
    fn lu_solves_tridiagonal() {
        let a = laplace_1d(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let x = solve_direct(&a, &b).unwrap();
        assert!(residual(&a, &x, &b) < 1e-12);
    }

    #[test]
    fn minres_solves_indefinite_saddle() {
        // [[A, Bᵀ], [B, 0]] with A tridiagonal and B a difference operator.
        let n = 20;
        let m = 5;
        let mut t = TripletBuilder::new(n + m, n + m);
        let a = laplace_1d(n);
        for (i, j, v) in a.triplets() {
            t.push(i, j, v);
        }
        for k in 0..m {
            t.push(n + k, 4 * k, 1.0);
            t.push(n + k, 4 * k + 1, -1.0);
            t.push(4 * k, n + k, 1.0);
            t.push(4 * k + 1, n + k, -1.0);
        }
        let k = t.build();
        let b: Vec<f64> = (0..n + m).map(|i| 1.0 + (i as f64).cos()).collect();
        let (x, st) = minres(&k, &b, &Identity, 1e-12, 500).unwrap();
        assert!(st.residual < 1e-9, "{:?}", st);
        let xd = solve_direct(&k, &b).unwrap();
        for (p, q) in x.iter().zip(&xd) {
            assert!((p - q).abs() < 1e-8);
        }
        let pc = BlockDiagonal::new(&a, &vec![0.5; m]).unwrap();
        let (x2, _) = minres(&k, &b, &pc, 1e-12, 500).unwrap();
        for (p, q) in x2.iter().zip(&xd) {
            assert!((p - q).abs() < 1e-8);
        }
    }
}
