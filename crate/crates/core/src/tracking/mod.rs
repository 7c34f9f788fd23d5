//! Charging by tracking a reference path: reference generation, the
//! finite-horizon LQ tracker and its steady-state variant.

mod exact;

pub use exact::ExactSPropagator;

use nalgebra::{DMatrix, DVector};

use crate::battery::{state_of_soc, RcParams, SocBounds};
use crate::error::{Error, Result};
use crate::fts::ChargingObjective;
use crate::linalg::{self, spd_solve, symmetrize};
use crate::riccati::{solve_dare_control, solve_dare_filter};
use crate::system::DiscreteSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceTrajectory {
    /// `r_0 ..= r_N`.
    pub states: Vec<DVector<f64>>,
    pub tau_b: f64,
    pub tau_s: f64,
}

impl ReferenceTrajectory {
    pub fn horizon(&self) -> usize {
        self.states.len() - 1
    }
}

/// Fraction of the way from `r_0` to `r_N` at step `k`:
/// `(1 − e^{−k ts/τ}) / (1 − e^{−N ts/τ})`.
pub fn saturation_factor(k: usize, horizon: usize, ts: f64, tau: f64) -> f64 {
    let num = (-(k as f64) * ts / tau).exp_m1();
    let den = (-(horizon as f64) * ts / tau).exp_m1();
    num / den
}

/// Componentwise exponential-saturation path from the equilibrium at the
/// initial SoC to the equilibrium at the target SoC.
pub fn make_reference(
    sys: &DiscreteSystem,
    params: &RcParams,
    bounds: &SocBounds,
    objective: &ChargingObjective,
    tau_b: f64,
    tau_s: f64,
) -> Result<ReferenceTrajectory> {
    if !(tau_b > 0.0) || !(tau_s > 0.0) {
        return Err(Error::invalid(
            "tau",
            format!("time constants must be > 0, got {tau_b}, {tau_s}"),
        ));
    }
    let horizon = objective.horizon(sys.ts)?;
    let r0 = state_of_soc(objective.initial_soc, bounds, params)?;
    let rn = state_of_soc(objective.target_soc, bounds, params)?;
    let states = (0..=horizon)
        .map(|k| {
            let fb = saturation_factor(k, horizon, sys.ts, tau_b);
            let fs = saturation_factor(k, horizon, sys.ts, tau_s);
            DVector::from_column_slice(&[
                fb * (rn.q_b - r0.q_b) + r0.q_b,
                fs * (rn.q_s - r0.q_s) + r0.q_s,
            ])
        })
        .collect();
    Ok(ReferenceTrajectory {
        states,
        tau_b,
        tau_s,
    })
}

/// Finite-horizon tracker gains.
#[derive(Debug, Clone)]
pub struct TrackingPlan {
    /// `K_k`, `k = 0..N`.
    pub gains: Vec<DMatrix<f64>>,
    /// `K^s_k = (BᵀS_{k+1}B + R)⁻¹Bᵀ`.
    pub feedforward_gains: Vec<DMatrix<f64>>,
    /// `S_k`, `k = 0..=N`.
    pub s_mat: Vec<DMatrix<f64>>,
    /// `s_k`, `k = 0..=N`.
    pub s: Vec<DVector<f64>>,
}

impl TrackingPlan {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }
}

fn check_reference(sys: &DiscreteSystem, reference: &[DVector<f64>]) -> Result<usize> {
    if reference.len() < 2 {
        return Err(Error::invalid("reference", "need at least r_0 and r_N"));
    }
    for r in reference {
        linalg::check_len(r, sys.states(), "r_k")?;
    }
    Ok(reference.len() - 1)
}

fn check_weights(
    sys: &DiscreteSystem,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s_terminal: &DMatrix<f64>,
) -> Result<()> {
    linalg::check_square(q, sys.states(), "Q")?;
    linalg::check_square(r, sys.inputs(), "R")?;
    linalg::check_square(s_terminal, sys.states(), "S_N")?;
    if !linalg::is_psd(q, 1e-10) {
        return Err(Error::invalid(
            "q",
            "must be symmetric positive semidefinite",
        ));
    }
    if !linalg::is_psd(s_terminal, 1e-10) {
        return Err(Error::invalid(
            "s_terminal",
            "must be symmetric positive semidefinite",
        ));
    }
    if symmetrize(r).cholesky().is_none() {
        return Err(Error::invalid("r", "must be symmetric positive definite"));
    }
    Ok(())
}

/// Backward pass for `min ½(x_N−r_N)ᵀS_N(x_N−r_N) + ½Σ[(x_k−r_k)ᵀQ(x_k−r_k) + u_kᵀRu_k]`.
pub fn plan_tracking(
    sys: &DiscreteSystem,
    reference: &[DVector<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s_terminal: &DMatrix<f64>,
) -> Result<TrackingPlan> {
    let horizon = check_reference(sys, reference)?;
    check_weights(sys, q, r, s_terminal)?;
    let (a, b) = (&sys.a, &sys.b);
    let n = sys.states();
    let m = sys.inputs();

    let mut s_mat = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut s = vec![DVector::zeros(n); horizon + 1];
    let mut gains = vec![DMatrix::zeros(m, n); horizon];
    let mut feedforward_gains = vec![DMatrix::zeros(m, n); horizon];
    s_mat[horizon] = symmetrize(s_terminal);
    s[horizon] = s_terminal * &reference[horizon];

    for k in (0..horizon).rev() {
        let s_next = &s_mat[k + 1];
        let den = b.transpose() * s_next * b + r;
        let gain = spd_solve(&den, &(b.transpose() * s_next * a), "BᵀS_{k+1}B + R")?;
        let gain_s = spd_solve(&den, &b.transpose(), "BᵀS_{k+1}B + R")?;
        let closed = a - b * &gain;
        s_mat[k] = symmetrize(&(a.transpose() * s_next * &closed + q));
        s[k] = closed.transpose() * &s[k + 1] + q * &reference[k];
        gains[k] = gain;
        feedforward_gains[k] = gain_s;
    }
    Ok(TrackingPlan {
        gains,
        feedforward_gains,
        s_mat,
        s,
    })
}

/// `u_k = −K_k x̂_k + K^s_k s_{k+1}`.
pub fn tracking_control(
    plan: &TrackingPlan,
    x_hat: &DVector<f64>,
    k: usize,
) -> Result<DVector<f64>> {
    if k >= plan.horizon() {
        return Err(Error::Domain(format!(
            "step {k} outside horizon 0..{}",
            plan.horizon()
        )));
    }
    Ok(-(&plan.gains[k] * x_hat) + &plan.feedforward_gains[k] * &plan.s[k + 1])
}

/// Steady-state tracker: constant gains from the two DAREs plus the `s_k`
/// sequence computed backward with `K̄` in place of `K_k`.
#[derive(Debug, Clone)]
pub struct SteadyTrackingPlan {
    pub k_bar: DMatrix<f64>,
    pub ks_bar: DMatrix<f64>,
    pub l_bar: DMatrix<f64>,
    /// Control DARE solution `S`.
    pub s_dare: DMatrix<f64>,
    /// Filter DARE solution `Σ`.
    pub sigma_dare: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub s_terminal: DMatrix<f64>,
    /// `A − B K̄`.
    pub closed_loop: DMatrix<f64>,
    /// `(A − B K̄)⁻ᵀ`.
    pub closed_loop_inv_t: DMatrix<f64>,
    /// `s_k`, `k = 0..=N`, from the backward pass.
    pub s: Vec<DVector<f64>>,
}

impl SteadyTrackingPlan {
    pub fn horizon(&self) -> usize {
        self.s.len() - 1
    }

    pub fn s0(&self) -> &DVector<f64> {
        &self.s[0]
    }

    /// `u = −K̄ x̂ + K̄^s s_{k+1}` with the given `s_{k+1}`.
    pub fn control_with(&self, x_hat: &DVector<f64>, s_next: &DVector<f64>) -> DVector<f64> {
        -(&self.k_bar * x_hat) + &self.ks_bar * s_next
    }

    /// Control at step `k` using the stored backward-pass `s_{k+1}`.
    pub fn control(&self, x_hat: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        if k >= self.horizon() {
            return Err(Error::Domain(format!(
                "step {k} outside horizon 0..{}",
                self.horizon()
            )));
        }
        Ok(self.control_with(x_hat, &self.s[k + 1]))
    }
}

/// Plan the steady-state tracker. `s_terminal` defaults to the control DARE
/// solution, which keeps the terminal feedforward `s_N = S_N r_N`
/// consistent with the constant gain `K̄`.
pub fn plan_ss_tracking(
    sys: &DiscreteSystem,
    reference: &[DVector<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v_meas: &DMatrix<f64>,
    s_terminal: Option<&DMatrix<f64>>,
) -> Result<SteadyTrackingPlan> {
    let horizon = check_reference(sys, reference)?;
    let control = solve_dare_control(&sys.a, &sys.b, q, r)?;
    let filter = solve_dare_filter(&sys.a, &sys.c, w, v_meas)?;
    let s_terminal = s_terminal.cloned().unwrap_or_else(|| control.s.clone());
    check_weights(sys, q, r, &s_terminal)?;

    let den = sys.b.transpose() * &control.s * &sys.b + r;
    let ks_bar = spd_solve(&den, &sys.b.transpose(), "BᵀSB + R")?;
    let closed_loop = &sys.a - &sys.b * &control.gain;
    let closed_loop_inv_t = closed_loop
        .transpose()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| {
            Error::Singular("A − B K̄ is not invertible; forward s-recursion impossible".into())
        })?;

    let mut s = vec![DVector::zeros(sys.states()); horizon + 1];
    s[horizon] = &s_terminal * &reference[horizon];
    for k in (0..horizon).rev() {
        s[k] = backward_s(&closed_loop, q, &s[k + 1], &reference[k]);
    }

    Ok(SteadyTrackingPlan {
        k_bar: control.gain,
        ks_bar,
        l_bar: filter.gain,
        s_dare: control.s,
        sigma_dare: filter.s,
        q: q.clone(),
        s_terminal,
        closed_loop,
        closed_loop_inv_t,
        s,
    })
}

fn backward_s(
    closed_loop: &DMatrix<f64>,
    q: &DMatrix<f64>,
    s_next: &DVector<f64>,
    r_k: &DVector<f64>,
) -> DVector<f64> {
    closed_loop.transpose() * s_next + q * r_k
}

/// `s_k = (A − BK̄)ᵀ s_{k+1} + Q r_k`.
pub fn backward_s_step(
    plan: &SteadyTrackingPlan,
    s_next: &DVector<f64>,
    r_k: &DVector<f64>,
) -> DVector<f64> {
    backward_s(&plan.closed_loop, &plan.q, s_next, r_k)
}

/// `s_{k+1} = (A − BK̄)⁻ᵀ (s_k − Q r_k)`.
///
/// The inverse closed loop is expansive, so in floating point this recursion
/// amplifies rounding geometrically; see [`ExactSPropagator`] for long
/// horizons.
pub fn forward_s_step(
    plan: &SteadyTrackingPlan,
    s_k: &DVector<f64>,
    r_k: &DVector<f64>,
) -> DVector<f64> {
    &plan.closed_loop_inv_t * (s_k - &plan.q * r_k)
}
