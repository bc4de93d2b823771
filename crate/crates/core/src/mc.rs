//! Monte-Carlo harness: empirical design matrices, tracking cost
//! statistics, the normalized estimator fluctuation sqrt(n) Λ^{1/2}
//! (theta_hat - theta) Γ^{-1/2}, a Kolmogorov-Smirnov distance to the
//! standard normal, iterated-logarithm envelopes and the cross-realization
//! aggregation over independent noise streams.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::estim::WeightPolicy;
use crate::limit::{build_lambda, LimitError, LimitMatrices};
use crate::linalg::{LinalgError, Matrix};
use crate::model::{pack_theta, ArxModel, ParamMatrix, Regressor};
use crate::sim::{run_closed_loop, NoiseKind, RefTrajectory, RunConfig, RunRecord, SimError};

#[derive(Debug, Error)]
pub enum McError {
    #[error("realization {index} failed: {source}")]
    Realization { index: usize, source: SimError },
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// (1/n) sum_{k=0}^{n} Phi_k Phi_kᵗ recomputed from the recorded
/// trajectory (unweighted, without the identity regularizer).
pub fn empirical_design(record: &RunRecord, n: usize) -> Matrix {
    assert!(n <= record.n_steps);
    let delta = record.d * (record.p + record.q);
    let mut s = Matrix::zeros(delta, delta);
    for k in 0..=n {
        let phi = Regressor::from_history(record.d, record.p, record.q, &record.x, &record.u, k);
        for i in 0..delta {
            for j in 0..delta {
                s[(i, j)] += phi.phi[i] * phi.phi[j];
            }
        }
    }
    s.scale(1.0 / n as f64)
}

/// Average tracking cost C_n = (1/n) sum (X_k - x_k)(X_k - x_k)ᵗ and the
/// empirical noise covariance Gamma_n, both over k = 1..n.
pub fn cost_matrices(record: &RunRecord, n: usize) -> (Matrix, Matrix) {
    assert!(n >= 1 && n <= record.n_steps);
    let d = record.d;
    let mut c = Matrix::zeros(d, d);
    let mut g = Matrix::zeros(d, d);
    for k in 1..=n {
        for i in 0..d {
            let dev_i = record.x[k][i] - record.x_ref[k][i];
            let eps_i = record.eps[k - 1][i];
            for j in 0..d {
                c[(i, j)] += dev_i * (record.x[k][j] - record.x_ref[k][j]);
                g[(i, j)] += eps_i * record.eps[k - 1][j];
            }
        }
    }
    (c.scale(1.0 / n as f64), g.scale(1.0 / n as f64))
}

/// Entries of sqrt(n) Λ^{1/2} (theta_hat - theta) Γ^{-1/2}, flattened
/// row-major; asymptotically i.i.d. standard normal. Square roots are the
/// symmetric PSD ones.
pub fn clt_normalize(
    theta_hat: &ParamMatrix,
    theta_true: &ParamMatrix,
    lambda: &Matrix,
    gamma: &Matrix,
    n: usize,
) -> Result<Vec<f64>, LinalgError> {
    let lam_sqrt = lambda.sqrt_psd()?;
    let gam_inv_sqrt = gamma.inv_sqrt_pd()?;
    let diff = theta_hat.entries().sub(theta_true.entries())?;
    let z = lam_sqrt
        .mat_mul(&diff)?
        .mat_mul(&gam_inv_sqrt)?
        .scale((n as f64).sqrt());
    Ok(z.as_slice().to_vec())
}

/// erf by Taylor series (small arguments) and a backward-evaluated
/// continued fraction for the complement (large arguments); accurate to
/// well below 1e-10.
pub fn erf(x: f64) -> f64 {
    if x < 0.0 {
        return -erf(-x);
    }
    if x < 3.0 {
        // erf(x) = 2/sqrt(pi) e^{-x^2} sum_{k>=0} x^{2k+1} 2^k / (2k+1)!!
        let mut term = x;
        let mut sum = x;
        for k in 1..300 {
            term *= 2.0 * x * x / (2.0 * k as f64 + 1.0);
            sum += term;
            if term < 1e-17 * sum {
                break;
            }
        }
        2.0 / std::f64::consts::PI.sqrt() * (-x * x).exp() * sum
    } else {
        1.0 - erfc_large(x)
    }
}

fn erfc_large(x: f64) -> f64 {
    // erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let mut tail = 0.0;
    for i in (1..=80u32).rev() {
        tail = (i as f64 / 2.0) / (x + tail);
    }
    (-x * x).exp() / std::f64::consts::PI.sqrt() / (x + tail)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Kolmogorov-Smirnov sup-distance between the empirical CDF of `samples`
/// and the standard normal CDF.
pub fn ks_statistic(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty());
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut sup = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = std_normal_cdf(x);
        sup = sup.max(((i + 1) as f64 / n - f).max(f - i as f64 / n));
    }
    sup
}

/// ||(1/log n) sum_{k=1}^n (X_k - x_k - eps_k)(X_k - x_k - eps_k)ᵗ
/// - delta Gamma||_F, the distance in the refined tracking limit.
pub fn th13_statistic(record: &RunRecord, n: usize, delta: usize, gamma: &Matrix) -> f64 {
    assert!(n >= 2 && n <= record.n_steps);
    let d = record.d;
    let mut sum = Matrix::zeros(d, d);
    for k in 1..=n {
        // X_k - x_k - eps_k equals the prediction error pi_{k-1}
        let v: Vec<f64> = (0..d)
            .map(|i| record.x[k][i] - record.x_ref[k][i] - record.eps[k - 1][i])
            .collect();
        for i in 0..d {
            for j in 0..d {
                sum[(i, j)] += v[i] * v[j];
            }
        }
    }
    let scaled = sum.scale(1.0 / (n as f64).ln());
    let target = gamma.scale(delta as f64);
    scaled.sub(&target).expect("dims").frobenius_norm()
}

/// Iterated-logarithm envelope summary across realizations.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LilEnvelope {
    /// Median over realizations of max_{n in [N/10, N]}
    /// (n / (2 log log n)) ||theta_hat_n - theta||_F^2.
    pub median_envelope: f64,
    /// lambda_min(Gamma) / lambda_max(Lambda).
    pub lower_bound: f64,
    /// lambda_max(Gamma) / lambda_min(Lambda).
    pub upper_bound: f64,
}

pub fn lil_envelope(
    records: &[RunRecord],
    lambda: &Matrix,
    gamma: &Matrix,
) -> Result<LilEnvelope, LinalgError> {
    let (lam_vals, _) = lambda.sym_eig()?;
    let (gam_vals, _) = gamma.sym_eig()?;
    let lower_bound = gam_vals.last().unwrap() / lam_vals[0];
    let upper_bound = gam_vals[0] / lam_vals.last().unwrap();
    let mut envelopes: Vec<f64> = records
        .iter()
        .map(|record| {
            let n_steps = record.n_steps;
            assert!(n_steps >= 100);
            let mut max_ratio = 0.0f64;
            for n in (n_steps / 10).max(3)..=n_steps {
                let scale = n as f64 / (2.0 * (n as f64).ln().ln());
                max_ratio = max_ratio.max(scale * record.theta_err_sq[n]);
            }
            max_ratio
        })
        .collect();
    let median_envelope = median(&mut envelopes);
    Ok(LilEnvelope {
        median_envelope,
        lower_bound,
        upper_bound,
    })
}

/// Median of a scratch slice (averages the middle pair for even lengths).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fixed-range histogram; samples outside [lo, hi) are clamped into the
/// first or last bin so counts always sum to the sample count.
pub fn histogram_counts(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<usize> {
    assert!(bins >= 1 && hi > lo);
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &s in samples {
        let idx = ((s - lo) / width).floor() as isize;
        let idx = idx.clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    counts
}

/// Default geometric checkpoints: N/16 times powers of two up to N.
pub fn default_checkpoints(n: usize) -> Vec<usize> {
    let base = (n / 16).max(1);
    let mut cps: Vec<usize> = (0..5).map(|i| (base << i).min(n)).collect();
    cps.dedup();
    if *cps.last().unwrap() != n {
        cps.push(n);
    }
    cps
}

/// Cross-realization summary of one Monte-Carlo experiment.
#[derive(Debug, Clone, Serialize)]
pub struct McSummary {
    pub m: usize,
    pub n: usize,
    pub checkpoints: Vec<usize>,
    /// Mean over realizations of S_N / N.
    pub empirical_sn_over_n: Matrix,
    /// Per-realization relative Frobenius distance of S_N/N from Lambda.
    pub sn_rel_err_per_run: Vec<f64>,
    /// M rows of delta*d normalized coordinates.
    pub z_samples: Vec<Vec<f64>>,
    /// Per-coordinate KS distance of the z samples to N(0,1).
    pub ks_stats: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Median over runs of ||C_n - Gamma_n||_F * n / log n per checkpoint.
    pub tracking_ratio: Vec<f64>,
    /// Median over runs of the refined tracking distance per checkpoint.
    pub th13_ratio: Vec<f64>,
    /// Median over runs of ||theta_hat_n - theta||_F^2 * n / log n.
    pub param_ratio: Vec<f64>,
    /// WLS only: median relative distance of (log n)^{1+gamma} S_n(a)/n
    /// from Lambda per checkpoint; empty for LS.
    pub wls_ratio: Vec<f64>,
    pub lil: LilEnvelope,
    pub truncation_k: usize,
    pub tail_bound: f64,
}

/// Runs M independent closed loops on noise streams 0..M-1 and aggregates
/// every limit-theorem statistic. Aggregation is a serial reduction in
/// stream order, so parallel and sequential execution agree bit for bit.
#[allow(clippy::too_many_arguments)]
pub fn run_montecarlo(
    model: &ArxModel,
    policy: WeightPolicy,
    traj: RefTrajectory,
    noise_kind: NoiseKind,
    m: usize,
    n: usize,
    base_seed: u64,
    checkpoints: &[usize],
) -> Result<McSummary, McError> {
    assert!(m >= 2, "need at least two realizations");
    assert!(n >= 100, "need horizon of at least 100");
    let limits = build_lambda(model, 1e-10)?;
    let records = run_realizations(
        model,
        policy,
        traj,
        noise_kind,
        m,
        n,
        base_seed,
        checkpoints,
    )?;
    summarize(model, policy, &limits, &records, checkpoints)
}

/// The simulation fan-out alone; useful when several statistics need the
/// raw records.
#[allow(clippy::too_many_arguments)]
pub fn run_realizations(
    model: &ArxModel,
    policy: WeightPolicy,
    traj: RefTrajectory,
    noise_kind: NoiseKind,
    m: usize,
    n: usize,
    base_seed: u64,
    checkpoints: &[usize],
) -> Result<Vec<RunRecord>, McError> {
    (0..m)
        .into_par_iter()
        .map(|i| {
            let config = RunConfig {
                policy,
                traj,
                noise_kind,
                seed: base_seed,
                stream_id: i as u64,
                n_steps: n,
                theta0: None,
                checkpoints: checkpoints.to_vec(),
            };
            run_closed_loop(model, &config)
                .map_err(|source| McError::Realization { index: i, source })
        })
        .collect()
}

/// Aggregates recorded realizations into the summary statistics.
pub fn summarize(
    model: &ArxModel,
    policy: WeightPolicy,
    limits: &LimitMatrices,
    records: &[RunRecord],
    checkpoints: &[usize],
) -> Result<McSummary, McError> {
    let m = records.len();
    let n = records[0].n_steps;
    let delta = model.delta();
    let theta_true = pack_theta(model);
    let lambda_norm = limits.lambda.frobenius_norm();

    let mut sn_mean = Matrix::zeros(delta, delta);
    let mut sn_rel_err_per_run = Vec::with_capacity(m);
    let mut z_samples = Vec::with_capacity(m);
    for record in records {
        let sn = empirical_design(record, n);
        sn_rel_err_per_run.push(sn.sub(&limits.lambda)?.frobenius_norm() / lambda_norm);
        sn_mean = sn_mean.add(&sn)?;
        let z = clt_normalize(
            record.final_state.theta_hat(),
            &theta_true,
            &limits.lambda,
            model.gamma(),
            n,
        )?;
        z_samples.push(z);
    }
    let empirical_sn_over_n = sn_mean.scale(1.0 / m as f64);

    let coords = delta * model.d();
    let mut ks_stats = Vec::with_capacity(coords);
    let mut mean = Vec::with_capacity(coords);
    let mut var = Vec::with_capacity(coords);
    for c in 0..coords {
        let column: Vec<f64> = z_samples.iter().map(|z| z[c]).collect();
        ks_stats.push(ks_statistic(&column));
        let mu = column.iter().sum::<f64>() / m as f64;
        let v = column.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (m as f64 - 1.0);
        mean.push(mu);
        var.push(v);
    }

    let mut tracking_ratio = Vec::with_capacity(checkpoints.len());
    let mut th13_ratio = Vec::with_capacity(checkpoints.len());
    let mut param_ratio = Vec::with_capacity(checkpoints.len());
    let mut wls_ratio = Vec::new();
    for &cp in checkpoints {
        let log_cp = (cp as f64).ln();
        let mut tracking: Vec<f64> = records
            .iter()
            .map(|r| {
                let (c, g) = cost_matrices(r, cp);
                c.sub(&g).expect("dims").frobenius_norm() * cp as f64 / log_cp
            })
            .collect();
        tracking_ratio.push(median(&mut tracking));

        let mut th13: Vec<f64> = records
            .iter()
            .map(|r| th13_statistic(r, cp, delta, model.gamma()))
            .collect();
        th13_ratio.push(median(&mut th13));

        let mut param: Vec<f64> = records
            .iter()
            .map(|r| r.theta_err_sq[cp] * cp as f64 / log_cp)
            .collect();
        param_ratio.push(median(&mut param));
    }
    if let WeightPolicy::Wls { gamma } = policy {
        for (ci, &cp) in checkpoints.iter().enumerate() {
            let factor = (cp as f64).ln().powf(1.0 + gamma) / cp as f64;
            let mut dists: Vec<f64> = records
                .iter()
                .map(|r| {
                    let (recorded_cp, sn) = &r.sn_weighted_checkpoints[ci];
                    assert_eq!(*recorded_cp, cp);
                    sn.scale(factor)
                        .sub(&limits.lambda)
                        .expect("dims")
                        .frobenius_norm()
                        / lambda_norm
                })
                .collect();
            wls_ratio.push(median(&mut dists));
        }
    }

    let lil = lil_envelope(records, &limits.lambda, model.gamma())?;

    Ok(McSummary {
        m,
        n,
        checkpoints: checkpoints.to_vec(),
        empirical_sn_over_n,
        sn_rel_err_per_run,
        z_samples,
        ks_stats,
        mean,
        var,
        tracking_ratio,
        th13_ratio,
        param_ratio,
        wls_ratio,
        lil,
        truncation_k: limits.truncation_k,
        tail_bound: limits.tail_bound,
    })
}
