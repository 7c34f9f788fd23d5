//! LQ charging with a fixed terminal state.
//!
//! The user's target SoC and deadline define a terminal equilibrium `x̄` that
//! must be hit exactly at step `N`. The offline backward pass produces, per
//! step, a feedback gain `F_k` and a feedforward gain `H_k` so that the online
//! law is `u_k = −F_k x̂_k − H_k x̄`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::battery::{state_of_soc, RcParams, SocBounds};
use crate::error::{Error, Result};
use crate::linalg::{self, spd_solve, symmetrize};
use crate::system::DiscreteSystem;

/// Largest acceptable condition number of `P_k` where it must be invertible.
pub const MAX_P_CONDITION: f64 = 1e12;

/// Target SoC to reach within `duration` seconds, starting from `initial_soc`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChargingObjective {
    pub initial_soc: f64,
    pub target_soc: f64,
    pub duration: f64,
}

impl ChargingObjective {
    pub fn new(initial_soc: f64, target_soc: f64, duration: f64) -> Result<Self> {
        let objective = Self {
            initial_soc,
            target_soc,
            duration,
        };
        objective.validate()?;
        Ok(objective)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.initial_soc) {
            return Err(Error::invalid(
                "initial_soc",
                format!("must lie in [0, 1), got {}", self.initial_soc),
            ));
        }
        if !(self.target_soc > 0.0 && self.target_soc <= 1.0) {
            return Err(Error::invalid(
                "target_soc",
                format!("must lie in (0, 1], got {}", self.target_soc),
            ));
        }
        if self.target_soc <= self.initial_soc {
            return Err(Error::invalid(
                "target_soc",
                format!(
                    "target {} must exceed initial {}",
                    self.target_soc, self.initial_soc
                ),
            ));
        }
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return Err(Error::invalid(
                "duration",
                format!("must be > 0, got {}", self.duration),
            ));
        }
        Ok(())
    }

    /// Number of sampling periods in the charging window.
    pub fn horizon(&self, ts: f64) -> Result<usize> {
        self.validate()?;
        let steps = self.duration / ts;
        let rounded = steps.round();
        if rounded < 1.0 || (steps - rounded).abs() > 1e-9 * rounded.max(1.0) {
            return Err(Error::invalid(
                "duration",
                format!(
                    "{} s is not a positive multiple of ts = {ts} s",
                    self.duration
                ),
            ));
        }
        Ok(rounded as usize)
    }
}

/// `q0 · growth^{k/n}`.
pub fn schedule_weight(k: usize, n: usize, q0: f64, growth: f64) -> f64 {
    q0 * growth.powf(k as f64 / n as f64)
}

/// Per-step health weights `q_k = q0 · growth^{k/n}` for `k = 0..n`.
pub fn weight_schedule(n: usize, q0: f64, growth: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid("n", "horizon must be at least 1"));
    }
    if !(q0 > 0.0) || !(growth > 0.0) {
        return Err(Error::invalid(
            "weights",
            format!("need q0 > 0 and growth > 0, got {q0}, {growth}"),
        ));
    }
    Ok((0..n).map(|k| schedule_weight(k, n, q0, growth)).collect())
}

#[derive(Debug, Clone)]
pub struct FtsGainSchedule {
    /// `F_k = K_k − K^u_k T_{k+1} P_k⁻¹ T_kᵀ`
    pub feedback: Vec<DMatrix<f64>>,
    /// `H_k = K^u_k T_{k+1} P_k⁻¹`
    pub feedforward: Vec<DMatrix<f64>>,
    pub x_bar: DVector<f64>,
    /// Condition number of each `P_k`.
    pub p_condition: Vec<f64>,
}

impl FtsGainSchedule {
    pub fn horizon(&self) -> usize {
        self.feedback.len()
    }
}

/// Backward pass for `min ½x_NᵀS_N x_N + ½Σ(x_kᵀQ_k x_k + u_kᵀR u_k)` subject
/// to the dynamics and `x_N = x̄`.
///
/// `P_k` has rank `min(n, m(N−k))`. Wherever that is full rank it must be
/// well conditioned, otherwise `x̄` is not reachable from step `k` and
/// [`Error::UnreachableTerminal`] is returned; on the last few steps where it
/// is structurally rank deficient the pseudo-inverse is used, which turns the
/// final input into the least-squares solution of `A x + B u = x̄`.
pub fn plan_fixed_terminal(
    sys: &DiscreteSystem,
    q_schedule: &[DMatrix<f64>],
    r: &DMatrix<f64>,
    s_terminal: &DMatrix<f64>,
    x_bar: &DVector<f64>,
) -> Result<FtsGainSchedule> {
    let n = sys.states();
    let m = sys.inputs();
    let horizon = q_schedule.len();
    if horizon == 0 {
        return Err(Error::invalid("horizon", "need at least one step"));
    }
    linalg::check_square(r, m, "R")?;
    linalg::check_square(s_terminal, n, "S_N")?;
    linalg::check_len(x_bar, n, "x̄")?;
    if !linalg::is_psd(s_terminal, 1e-10) {
        return Err(Error::invalid(
            "s_terminal",
            "must be symmetric positive semidefinite",
        ));
    }
    if symmetrize(r).cholesky().is_none() {
        return Err(Error::invalid(
            "r",
            "input weight must be symmetric positive definite",
        ));
    }
    for q in q_schedule {
        linalg::check_square(q, n, "Q_k")?;
    }

    let (a, b) = (&sys.a, &sys.b);
    let mut s = symmetrize(s_terminal);
    let mut t = DMatrix::<f64>::identity(n, n);
    let mut p = DMatrix::<f64>::zeros(n, n);
    let mut feedback = vec![DMatrix::zeros(m, n); horizon];
    let mut feedforward = vec![DMatrix::zeros(m, n); horizon];
    let mut p_condition = vec![0.0; horizon];

    for k in (0..horizon).rev() {
        let (s_next, t_next) = (s, t);
        let den = b.transpose() * &s_next * b + r;
        let gain = spd_solve(&den, &(b.transpose() * &s_next * a), "BᵀS_{k+1}B + R")?;
        let gain_u = spd_solve(&den, &b.transpose(), "BᵀS_{k+1}B + R")?;
        let closed = a - b * &gain;

        s = symmetrize(&(a.transpose() * &s_next * &closed + &q_schedule[k]));
        t = closed.transpose() * &t_next;
        let bt = b.transpose() * &t_next;
        p = symmetrize(&(&p - bt.transpose() * spd_solve(&den, &bt, "BᵀS_{k+1}B + R")?));

        let condition = linalg::condition_number(&p);
        p_condition[k] = condition;
        let full_rank = m * (horizon - k) >= n;
        let p_inv = if full_rank || k == 0 {
            if !(condition <= MAX_P_CONDITION) {
                return Err(Error::UnreachableTerminal { k, condition });
            }
            linalg::pseudo_inverse(&p, 0.0)
        } else {
            linalg::pseudo_inverse(&p, 1e-12)
        };

        let h = &gain_u * &t_next * p_inv;
        feedback[k] = &gain - &h * t.transpose();
        feedforward[k] = h;
    }

    Ok(FtsGainSchedule {
        feedback,
        feedforward,
        x_bar: x_bar.clone(),
        p_condition,
    })
}

/// Plan a charge to `objective.target_soc` with state weight `Gᵀ q_k G` on
/// the health indicator `G x = V_s − V_b`.
pub fn plan_fts(
    sys: &DiscreteSystem,
    params: &RcParams,
    bounds: &SocBounds,
    objective: &ChargingObjective,
    weights: &[f64],
    r: f64,
    s_terminal: &DMatrix<f64>,
) -> Result<FtsGainSchedule> {
    let horizon = objective.horizon(sys.ts)?;
    if weights.len() != horizon {
        return Err(Error::dim(format!(
            "weight schedule has {} entries for a horizon of {horizon}",
            weights.len()
        )));
    }
    let g = params.health_row();
    let gtg = g.transpose() * &g;
    let q_schedule: Vec<_> = weights.iter().map(|&q| &gtg * q).collect();
    let x_bar = state_of_soc(objective.target_soc, bounds, params)?.to_vector();
    plan_fixed_terminal(
        sys,
        &q_schedule,
        &DMatrix::from_element(1, 1, r),
        s_terminal,
        &x_bar,
    )
}

/// `u_k = −F_k x̂_k − H_k x̄`.
pub fn fts_control(
    schedule: &FtsGainSchedule,
    x_hat: &DVector<f64>,
    k: usize,
) -> Result<DVector<f64>> {
    if k >= schedule.horizon() {
        return Err(Error::Domain(format!(
            "step {k} outside horizon 0..{}",
            schedule.horizon()
        )));
    }
    Ok(-(&schedule.feedback[k] * x_hat) - &schedule.feedforward[k] * &schedule.x_bar)
}
