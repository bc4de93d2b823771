//! Recursive least squares estimation of the stacked parameter, with the
//! weighted variant a_n = (1 / log s_n)^(1+gamma). The inverse of the
//! regularized design matrix S_n(a) = sum a_k Phi_k Phi_kᵗ + I is
//! maintained by rank-one updates.

use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::model::{ParamMatrix, Regressor};

#[derive(Debug, Error)]
pub enum EstimError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite input at step {step}")]
    NonFinite { step: usize },
    #[error("numerical breakdown: rank-one denominator {denom:e} at step {step}")]
    Breakdown { step: usize, denom: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Weight sequence for the design matrix. LS uses a_n = 1; WLS uses
/// a_n = (1 / log s_n)^(1+gamma), floored so the logarithm stays >= 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightPolicy {
    Ls,
    Wls { gamma: f64 },
}

impl WeightPolicy {
    pub fn weight(&self, s_n: f64) -> f64 {
        match *self {
            WeightPolicy::Ls => 1.0,
            WeightPolicy::Wls { gamma } => {
                // log is undefined/too large for s_n <= e; the floor keeps
                // a_n in (0, 1] and is asymptotically irrelevant
                let log_s = s_n.max(std::f64::consts::E).ln();
                (1.0 / log_s).powf(1.0 + gamma)
            }
        }
    }
}

/// One recursive-update state machine: the parameter estimate, the
/// maintained inverse of S_n(a), the cumulative squared regressor norm
/// and the excitation diagnostic f_n(a) = a_n Phi_nᵗ S_n(a)⁻¹ Phi_n.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    theta_hat: ParamMatrix,
    s_inv: Matrix,
    s_n: f64,
    n: usize,
    last_f: f64,
    policy: WeightPolicy,
}

impl EstimatorState {
    /// Initializes with S_0⁻¹ = I (from the "+I" regularizer) and zero
    /// data counters. The initial estimate is arbitrary.
    pub fn new(
        delta: usize,
        d: usize,
        theta0: ParamMatrix,
        policy: WeightPolicy,
    ) -> Result<Self, EstimError> {
        if theta0.delta() != delta || theta0.d() != d {
            return Err(EstimError::Dimension(format!(
                "theta0 is {}x{}, expected {}x{}",
                theta0.delta(),
                theta0.d(),
                delta,
                d
            )));
        }
        Ok(Self {
            theta_hat: theta0,
            s_inv: Matrix::identity(delta),
            s_n: 0.0,
            n: 0,
            last_f: 0.0,
            policy,
        })
    }

    pub fn theta_hat(&self) -> &ParamMatrix {
        &self.theta_hat
    }

    pub fn s_inv(&self) -> &Matrix {
        &self.s_inv
    }

    /// Recovers S_n(a) itself by inverting the maintained inverse.
    pub fn design_matrix(&self) -> Result<Matrix, EstimError> {
        Ok(self.s_inv.inverse()?)
    }

    pub fn s_n(&self) -> f64 {
        self.s_n
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn last_f(&self) -> f64 {
        self.last_f
    }

    pub fn policy(&self) -> WeightPolicy {
        self.policy
    }

    /// One recursion step on the observation (Phi_n, X_{n+1}, U_n).
    ///
    /// The cumulative s_n absorbs ||Phi_n||^2 before the weight is
    /// evaluated, so a_n uses s_n = sum_{k=0}^n ||Phi_k||^2.
    pub fn update(
        &mut self,
        phi: &Regressor,
        x_next: &[f64],
        u_n: &[f64],
    ) -> Result<(), EstimError> {
        let delta = self.theta_hat.delta();
        let d = self.theta_hat.d();
        if phi.phi.len() != delta || x_next.len() != d || u_n.len() != d {
            return Err(EstimError::Dimension(format!(
                "phi len {}, x len {}, u len {} for delta={}, d={}",
                phi.phi.len(),
                x_next.len(),
                u_n.len(),
                delta,
                d
            )));
        }
        if phi
            .phi
            .iter()
            .chain(x_next)
            .chain(u_n)
            .any(|v| !v.is_finite())
        {
            return Err(EstimError::NonFinite { step: self.n });
        }

        self.s_n += phi.norm_sq();
        let a = self.policy.weight(self.s_n);

        // rank-one inverse update:
        // S_n⁻¹ = S_{n-1}⁻¹ - a (S_{n-1}⁻¹ Phi)(Phiᵗ S_{n-1}⁻¹) / (1 + a Phiᵗ S_{n-1}⁻¹ Phi)
        let s_phi = self.s_inv.mul_vec(&phi.phi)?;
        let quad: f64 = phi.phi.iter().zip(&s_phi).map(|(&p, &s)| p * s).sum();
        let denom = 1.0 + a * quad;
        if denom <= 0.0 || !denom.is_finite() {
            return Err(EstimError::Breakdown {
                step: self.n,
                denom,
            });
        }
        let coef = a / denom;
        for i in 0..delta {
            for j in 0..delta {
                self.s_inv[(i, j)] -= coef * s_phi[i] * s_phi[j];
            }
        }
        // resymmetrize against drift
        for i in 0..delta {
            for j in (i + 1)..delta {
                let avg = 0.5 * (self.s_inv[(i, j)] + self.s_inv[(j, i)]);
                self.s_inv[(i, j)] = avg;
                self.s_inv[(j, i)] = avg;
            }
        }

        // prediction error (X_{n+1} - U_n - theta_hatᵗ Phi_n), a d-vector
        let pred = self.theta_hat.predict(phi);
        let err: Vec<f64> = (0..d).map(|c| x_next[c] - u_n[c] - pred[c]).collect();

        // theta update uses the refreshed inverse
        let s_phi_new = self.s_inv.mul_vec(&phi.phi)?;
        let mut entries = self.theta_hat.entries().clone();
        for r in 0..delta {
            let gain = a * s_phi_new[r];
            if gain == 0.0 {
                continue;
            }
            for c in 0..d {
                entries[(r, c)] += gain * err[c];
            }
        }
        self.theta_hat = ParamMatrix::new(entries, d).expect("shape preserved");

        let f: f64 = a * phi
            .phi
            .iter()
            .zip(&s_phi_new)
            .map(|(&p, &s)| p * s)
            .sum::<f64>();
        self.last_f = f;
        self.n += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn regressor(values: &[f64]) -> Regressor {
        Regressor {
            phi: values.to_vec(),
        }
    }

    #[test]
    fn init_state() {
        let state = EstimatorState::new(4, 2, ParamMatrix::zeros(4, 2), WeightPolicy::Ls).unwrap();
        assert_eq!(state.s_inv(), &Matrix::identity(4));
        assert_eq!(state.s_n(), 0.0);
        assert_eq!(state.n(), 0);
        // wrong shape rejected
        assert!(EstimatorState::new(4, 2, ParamMatrix::zeros(3, 2), WeightPolicy::Ls).is_err());
    }

    #[test]
    fn scalar_single_step_hand_value() {
        // d = 1, delta = 1, LS: theta0 = 0, Phi0 = 1, X1 - U0 = 2
        // S_0(a) = 2, theta1 = (1/2) * 1 * 2 = 1
        let mut state =
            EstimatorState::new(1, 1, ParamMatrix::zeros(1, 1), WeightPolicy::Ls).unwrap();
        state.update(&regressor(&[1.0]), &[2.0], &[0.0]).unwrap();
        assert!((state.theta_hat().entries()[(0, 0)] - 1.0).abs() <= 1e-15);
        assert!((state.s_inv()[(0, 0)] - 0.5).abs() <= 1e-15);
        assert!((state.last_f() - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn zero_regressor_is_a_noop() {
        let mut state =
            EstimatorState::new(2, 1, ParamMatrix::zeros(2, 1), WeightPolicy::Ls).unwrap();
        state
            .update(&regressor(&[0.0, 0.0]), &[3.0], &[0.0])
            .unwrap();
        assert_eq!(state.theta_hat().entries().max_abs(), 0.0);
        assert_eq!(state.s_inv(), &Matrix::identity(2));
        assert_eq!(state.last_f(), 0.0);
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let mut state =
            EstimatorState::new(1, 1, ParamMatrix::zeros(1, 1), WeightPolicy::Ls).unwrap();
        assert!(matches!(
            state.update(&regressor(&[f64::NAN]), &[0.0], &[0.0]),
            Err(EstimError::NonFinite { .. })
        ));
    }

    #[test]
    fn maintained_inverse_matches_direct_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for &policy in &[WeightPolicy::Ls, WeightPolicy::Wls { gamma: 0.5 }] {
            let delta = 3;
            let mut state =
                EstimatorState::new(delta, 1, ParamMatrix::zeros(delta, 1), policy).unwrap();
            let mut direct = Matrix::identity(delta);
            for step in 0..1000 {
                let phi: Vec<f64> = (0..delta)
                    .map(|_| rng.random::<f64>() * 4.0 - 2.0)
                    .collect();
                let x = [rng.random::<f64>()];
                let s_pred = state.s_n() + phi.iter().map(|v| v * v).sum::<f64>();
                // mirror the weight the estimator will use
                let a = policy.weight(s_pred);
                for i in 0..delta {
                    for j in 0..delta {
                        direct[(i, j)] += a * phi[i] * phi[j];
                    }
                }
                state.update(&regressor(&phi), &x, &[0.0]).unwrap();
                assert!((state.s_n() - s_pred).abs() <= 1e-9 * s_pred.max(1.0));
                if step % 100 == 99 {
                    let inv = direct.inverse().unwrap();
                    assert!(state.s_inv().sub(&inv).unwrap().max_abs() <= 1e-8);
                }
                assert!(state.last_f() >= 0.0 && state.last_f() < 1.0);
            }
        }
    }

    #[test]
    fn batch_normal_equation_consistency() {
        // theta_{n+1} = S_n(a)⁻¹ (theta0 + sum a_k Phi_k (X_{k+1} - U_k)ᵗ)
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let delta = 3;
        let d = 2;
        let theta0 = ParamMatrix::new(
            Matrix::new(
                delta,
                d,
                (0..delta * d).map(|_| rng.random::<f64>()).collect(),
            )
            .unwrap(),
            d,
        )
        .unwrap();
        let policy = WeightPolicy::Wls { gamma: 0.5 };
        let mut state = EstimatorState::new(delta, d, theta0.clone(), policy).unwrap();
        let mut design = Matrix::identity(delta);
        let mut rhs = theta0.entries().clone();
        for _ in 0..200 {
            let phi: Vec<f64> = (0..delta)
                .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                .collect();
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>() * 0.5).collect();
            let s_next = state.s_n() + phi.iter().map(|v| v * v).sum::<f64>();
            let a = policy.weight(s_next);
            for i in 0..delta {
                for j in 0..delta {
                    design[(i, j)] += a * phi[i] * phi[j];
                }
                for c in 0..d {
                    rhs[(i, c)] += a * phi[i] * (x[c] - u[c]);
                }
            }
            state
                .update(&Regressor { phi: phi.clone() }, &x, &u)
                .unwrap();
        }
        let batch = design.inverse().unwrap().mat_mul(&rhs).unwrap();
        assert!(state.theta_hat().entries().sub(&batch).unwrap().max_abs() <= 1e-8);
    }

    #[test]
    fn ls_equals_wls_with_unit_weights() {
        // forcing a_n = 1 must reproduce LS exactly; gamma = 0 with
        // s_n below e floors the log at one, giving a_n = 1
        let mut ls = EstimatorState::new(1, 1, ParamMatrix::zeros(1, 1), WeightPolicy::Ls).unwrap();
        let mut wls = EstimatorState::new(
            1,
            1,
            ParamMatrix::zeros(1, 1),
            WeightPolicy::Wls { gamma: 0.0 },
        )
        .unwrap();
        let phi = regressor(&[0.5]);
        ls.update(&phi, &[1.0], &[0.0]).unwrap();
        wls.update(&phi, &[1.0], &[0.0]).unwrap();
        assert_eq!(
            ls.theta_hat().entries()[(0, 0)],
            wls.theta_hat().entries()[(0, 0)]
        );
    }

    #[test]
    fn design_matrix_eigenvalues_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let delta = 2;
        let mut state =
            EstimatorState::new(delta, 1, ParamMatrix::zeros(delta, 1), WeightPolicy::Ls).unwrap();
        let mut prev_min = 1.0;
        let mut prev_max = 1.0;
        for _ in 0..50 {
            let phi: Vec<f64> = (0..delta).map(|_| rng.random::<f64>()).collect();
            state.update(&regressor(&phi), &[0.0], &[0.0]).unwrap();
            let s = state.design_matrix().unwrap();
            let (vals, _) = s.sym_eig().unwrap();
            assert!(vals[0] >= prev_max - 1e-9);
            assert!(*vals.last().unwrap() >= prev_min - 1e-9);
            prev_max = vals[0];
            prev_min = *vals.last().unwrap();
        }
    }

    #[test]
    fn wls_weights_stay_in_unit_interval() {
        let policy = WeightPolicy::Wls { gamma: 0.5 };
        for &s in &[0.0, 0.5, 1.0, std::f64::consts::E, 10.0, 1e12] {
            let a = policy.weight(s);
            assert!(a > 0.0 && a <= 1.0, "a = {a} for s = {s}");
        }
    }
}
