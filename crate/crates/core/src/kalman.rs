//! One-step-ahead Kalman predictor, time-varying and steady-state.
//!
//! Measurement-noise covariance is called `v_meas` to keep it apart from the
//! terminal voltage.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{self, spd_solve, symmetrize};
use crate::system::DiscreteSystem;

const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub x_hat: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub k: usize,
}

impl EstimatorState {
    pub fn new(x_hat: DVector<f64>, sigma: DMatrix<f64>) -> Result<Self> {
        let est = Self { x_hat, sigma, k: 0 };
        est.validate()?;
        Ok(est)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.x_hat.len();
        if self.sigma.nrows() != n || self.sigma.ncols() != n {
            return Err(Error::InvalidState(format!(
                "covariance is {}x{} for a state of length {n}",
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        if !linalg::is_psd(&self.sigma, PSD_TOL) {
            return Err(Error::InvalidState(
                "covariance is not symmetric PSD".into(),
            ));
        }
        Ok(())
    }
}

/// `L_k = AΣ_kCᵀ(CΣ_kCᵀ + V)⁻¹`.
pub fn predictor_gain(
    sys: &DiscreteSystem,
    sigma: &DMatrix<f64>,
    v_meas: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let innovation_cov = &sys.c * sigma * sys.c.transpose() + v_meas;
    let cs_at = &sys.c * sigma * sys.a.transpose();
    Ok(spd_solve(&innovation_cov, &cs_at, "CΣCᵀ + V")?.transpose())
}

/// Advance the predictor from `x̂_k` to `x̂_{k+1}` given the input applied and
/// the output measured at step `k`.
pub fn predictor_step(
    sys: &DiscreteSystem,
    est: &EstimatorState,
    u: &DVector<f64>,
    y: &DVector<f64>,
    w: &DMatrix<f64>,
    v_meas: &DMatrix<f64>,
) -> Result<EstimatorState> {
    est.validate()?;
    linalg::check_len(&est.x_hat, sys.states(), "x̂")?;
    linalg::check_square(w, sys.states(), "W")?;
    linalg::check_square(v_meas, sys.outputs(), "V")?;

    let gain = predictor_gain(sys, &est.sigma, v_meas)?;
    let innovation = y - &sys.c * &est.x_hat - &sys.d * u;
    let x_hat = &sys.a * &est.x_hat + &sys.b * u + &gain * innovation;
    // AΣAᵀ + W − AΣCᵀ(CΣCᵀ+V)⁻¹CΣAᵀ, with the last factor being L_k (CΣAᵀ)
    let a_sigma = &sys.a * &est.sigma;
    let sigma = &a_sigma * sys.a.transpose() + w - &gain * (&sys.c * a_sigma.transpose());
    Ok(EstimatorState {
        x_hat,
        sigma: symmetrize(&sigma),
        k: est.k + 1,
    })
}

/// Fixed-gain predictor step `x̂⁺ = A x̂ + B u + L̄(y − C x̂ − D u)`.
pub fn steady_predictor_step(
    sys: &DiscreteSystem,
    x_hat: &DVector<f64>,
    u: &DVector<f64>,
    y: &DVector<f64>,
    l_bar: &DMatrix<f64>,
) -> DVector<f64> {
    let innovation = y - &sys.c * x_hat - &sys.d * u;
    &sys.a * x_hat + &sys.b * u + l_bar * innovation
}
