//! Limiting excitation matrices for a causal ARX(p,q) model: the block
//! diagonal L, the staircase K, the block-Toeplitz H built from truncated
//! coefficient series, the full matrix Lambda = [[L, Kᵗ], [K, H]], its Schur
//! complement S = H - K L⁻¹ Kᵗ and the block-formula inverse of Lambda.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::model::{check_causality, check_strong_controllability, ArxModel, ModelError, PkStream};

/// Causality margin used when estimating the companion spectral radius.
const CAUSALITY_TOL: f64 = 1e-6;

/// Hard cap on the series truncation depth.
const MAX_TRUNCATION: usize = 200_000;

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("series diverges: model is not causal (rho = {rho})")]
    DivergentSeries { rho: f64 },
    #[error("series truncation did not reach tolerance {tol:e} within {max} terms")]
    TruncationFailed { tol: f64, max: usize },
    #[error("Schur complement singular although the controllability test passed; truncation tolerance too loose")]
    Inconsistent,
    #[error("Schur complement is singular: model is not strongly controllable")]
    SingularSchur,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// The certified limiting objects for one model.
#[derive(Debug, Clone, Serialize)]
pub struct LimitMatrices {
    #[serde(rename = "L")]
    pub l: Matrix,
    #[serde(rename = "K")]
    pub k: Matrix,
    #[serde(rename = "H")]
    pub h: Matrix,
    #[serde(rename = "Lambda")]
    pub lambda: Matrix,
    #[serde(rename = "S")]
    pub s: Matrix,
    #[serde(rename = "Lambda_inv")]
    pub lambda_inv: Matrix,
    pub truncation_k: usize,
    pub tail_bound: f64,
}

/// Block diagonal of Gamma repeated p times (order dp; empty for p = 0).
pub fn build_l(model: &ArxModel) -> Matrix {
    let d = model.d();
    let p = model.p();
    let mut l = Matrix::zeros(d * p, d * p);
    for i in 0..p {
        l.set_block(i * d, i * d, model.gamma());
    }
    l
}

/// dq x dp staircase with block (r, c) = P_{c-r} Gamma for c - r >= 1.
pub fn build_k(model: &ArxModel) -> Matrix {
    let d = model.d();
    let p = model.p();
    let q = model.q();
    let mut k = Matrix::zeros(d * q, d * p);
    if p == 0 || q == 0 {
        return k;
    }
    let mut stream = PkStream::new(model);
    for r in 0..q {
        for c in 0..p {
            if c > r {
                let ki = stream
                    .get(c - r)
                    .mat_mul(model.gamma())
                    .expect("block dimensions agree");
                k.set_block(r * d, c * d, &ki);
            }
        }
    }
    k
}

/// Truncation depth and certified tail bound for the H series at
/// tolerance `tol`, together with the coefficient stream used.
fn truncate_series(model: &ArxModel, tol: f64) -> Result<(PkStream, usize, f64, f64), LimitError> {
    let report = check_causality(model, CAUSALITY_TOL)?;
    if !report.causal {
        return Err(LimitError::DivergentSeries { rho: report.rho });
    }
    let q = model.q();
    let rho = report.rho;
    let geom = 1.0 / (1.0 - rho * rho);
    let gamma_norm = model.gamma().frobenius_norm();
    let mut stream = PkStream::new(model);
    let start = model.p().max(q).max(1) + 1;
    let mut k = start;
    loop {
        let nk = stream.get(k).frobenius_norm();
        let mut bound = 0.0f64;
        for i in 1..=q {
            let ni = stream.get(k - i + 1).frobenius_norm();
            bound = bound.max(nk * gamma_norm * ni * geom);
        }
        if bound < tol {
            return Ok((stream, k, bound, rho));
        }
        k += 1;
        if k > MAX_TRUNCATION {
            return Err(LimitError::TruncationFailed {
                tol,
                max: MAX_TRUNCATION,
            });
        }
    }
}

/// Symmetric block-Toeplitz H of order dq with H_i on the i-th
/// super-diagonal, each H_i a truncated series sum. Returns the matrix,
/// the truncation depth and the certified tail bound.
pub fn build_h(model: &ArxModel, tol: f64) -> Result<(Matrix, usize, f64), LimitError> {
    let d = model.d();
    let q = model.q();
    if q == 0 {
        return Ok((Matrix::zeros(0, 0), 0, 0.0));
    }
    let (mut stream, depth, tail_bound, _) = truncate_series(model, tol)?;
    let gamma = model.gamma().clone();
    let mut h_blocks = Vec::with_capacity(q);
    for i in 1..=q {
        let mut hi = Matrix::zeros(d, d);
        for k in i..=depth {
            let left = stream.get(k).mat_mul(&gamma).expect("dims");
            let term = left
                .mat_mul(&stream.get(k - i + 1).transpose())
                .expect("dims");
            hi = hi.add(&term).expect("dims");
        }
        h_blocks.push(hi);
    }
    let mut h = Matrix::zeros(d * q, d * q);
    for r in 0..q {
        for c in 0..q {
            let blk = if c >= r {
                h_blocks[c - r].clone()
            } else {
                h_blocks[r - c].transpose()
            };
            h.set_block(r * d, c * d, &blk);
        }
    }
    // enforce exact symmetry against rounding in the series sums
    let h = h.add(&h.transpose()).expect("dims").scale(0.5);
    Ok((h, depth, tail_bound))
}

/// Schur complement S = H - K L⁻¹ Kᵗ (S = H when p = 0, empty when q = 0),
/// with the truncation metadata of the H series.
pub fn build_schur(model: &ArxModel, tol: f64) -> Result<(Matrix, usize, f64), LimitError> {
    let (h, depth, tail) = build_h(model, tol)?;
    if model.q() == 0 {
        return Ok((h, depth, tail));
    }
    if model.p() == 0 {
        return Ok((h, depth, tail));
    }
    let l = build_l(model);
    let k = build_k(model);
    let l_inv = l.inverse()?;
    let klk = k.mat_mul(&l_inv)?.mat_mul(&k.transpose())?;
    let s = h.sub(&klk)?;
    let s = s.add(&s.transpose())?.scale(0.5);
    Ok((s, depth, tail))
}

/// Assembles every limiting matrix. The inverse of Lambda is computed by
/// the block formula built on L⁻¹ and S⁻¹, never by dense inversion of
/// Lambda itself.
pub fn build_lambda(model: &ArxModel, tol: f64) -> Result<LimitMatrices, LimitError> {
    let d = model.d();
    let p = model.p();
    let q = model.q();
    let delta = model.delta();
    let l = build_l(model);
    let k = build_k(model);
    let (h, truncation_k, tail_bound) = build_h(model, tol)?;

    let mut lambda = Matrix::zeros(delta, delta);
    lambda.set_block(0, 0, &l);
    lambda.set_block(0, d * p, &k.transpose());
    lambda.set_block(d * p, 0, &k);
    lambda.set_block(d * p, d * p, &h);

    if q == 0 {
        let lambda_inv = l.inverse()?;
        return Ok(LimitMatrices {
            l: l.clone(),
            k,
            h,
            lambda: l.clone(),
            s: Matrix::zeros(0, 0),
            lambda_inv,
            truncation_k,
            tail_bound,
        });
    }

    let (s, _, _) = build_schur(model, tol)?;
    let s_inv = match s.inverse() {
        Ok(inv) => inv,
        Err(LinalgError::Singular { .. }) => {
            let verdict = check_strong_controllability(model, CAUSALITY_TOL)?;
            if verdict.strongly_controllable {
                return Err(LimitError::Inconsistent);
            }
            return Err(LimitError::SingularSchur);
        }
        Err(e) => return Err(e.into()),
    };

    let lambda_inv = if p == 0 {
        s_inv
    } else {
        let l_inv = l.inverse()?;
        let lk = l_inv.mat_mul(&k.transpose())?; // L⁻¹ Kᵗ
        let top_left = l_inv.add(&lk.mat_mul(&s_inv)?.mat_mul(&lk.transpose())?)?;
        let top_right = lk.mat_mul(&s_inv)?.scale(-1.0);
        let bottom_left = top_right.transpose();
        let mut inv = Matrix::zeros(delta, delta);
        inv.set_block(0, 0, &top_left);
        inv.set_block(0, d * p, &top_right);
        inv.set_block(d * p, 0, &bottom_left);
        inv.set_block(d * p, d * p, &s_inv);
        inv
    };

    Ok(LimitMatrices {
        l,
        k,
        h,
        lambda,
        s,
        lambda_inv,
        truncation_k,
        tail_bound,
    })
}

/// Independent approximation of S from the series factorization: the first
/// `depth` block columns of the semi-infinite staircase T multiplied as
/// T diag(Gamma, Gamma, ...) Tᵗ. Test oracle only.
pub fn schur_oracle(model: &ArxModel, depth: usize) -> Result<Matrix, LimitError> {
    let d = model.d();
    let q = model.q();
    if q == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let p = model.p() as isize;
    let mut stream = PkStream::new(model);
    let mut s = Matrix::zeros(d * q, d * q);
    for c in 0..depth as isize {
        // block column c of T: rows r hold P_{p + c - r}
        let mut col = Matrix::zeros(d * q, d);
        for r in 0..q {
            let blk = stream.get_or_zero(p + c - r as isize);
            col.set_block(r * d, 0, &blk);
        }
        let term = col.mat_mul(model.gamma())?.mat_mul(&col.transpose())?;
        s = s.add(&term)?;
    }
    Ok(s)
}
