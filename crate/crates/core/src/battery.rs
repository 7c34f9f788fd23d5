//! Two-capacitor RC equivalent circuit of a cell: bulk capacitor `C_b` behind
//! `R_b`, surface capacitor `C_s` behind `R_s`, series resistance `R_o`.
//!
//! States are the stored charges `[Q_b, Q_s]` in coulombs, the input is the
//! charging current in amperes and the output is the terminal voltage.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::system::{ContinuousSystem, DiscreteSystem, OutputEquation};

/// Nominal capacity of the reference pack, 7 Ah.
pub const REFERENCE_CAPACITY_C: f64 = 7.0 * 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcParams {
    pub c_b: f64,
    pub c_s: f64,
    pub r_b: f64,
    pub r_s: f64,
    pub r_o: f64,
}

impl RcParams {
    pub fn new(c_b: f64, c_s: f64, r_b: f64, r_s: f64, r_o: f64) -> Result<Self> {
        let params = Self {
            c_b,
            c_s,
            r_b,
            r_s,
            r_o,
        };
        params.validate()?;
        for w in params.regime_warnings() {
            warn!("{w}");
        }
        Ok(params)
    }

    /// Lithium-ion cell used in the charging examples (7 Ah pack).
    pub fn reference() -> Self {
        Self {
            c_b: 82e3,
            c_s: 4.074e3,
            r_b: 1.1e-3,
            r_s: 0.4e-3,
            r_o: 1.2e-3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("c_b", self.c_b),
            ("c_s", self.c_s),
            ("r_b", self.r_b),
            ("r_s", self.r_s),
            ("r_o", self.r_o),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::invalid(
                    name,
                    format!("must be finite and > 0, got {value}"),
                ));
            }
        }
        Ok(())
    }

    /// The model is meant for `C_b > C_s` and `R_b > R_s`; anything else is
    /// still simulated but reported here.
    pub fn regime_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.c_b <= self.c_s {
            out.push(format!(
                "bulk capacitance {} F is not larger than surface capacitance {} F",
                self.c_b, self.c_s
            ));
        }
        if self.r_b <= self.r_s {
            out.push(format!(
                "bulk resistance {} ohm is not larger than surface resistance {} ohm",
                self.r_b, self.r_s
            ));
        }
        out
    }

    fn r_total(&self) -> f64 {
        self.r_b + self.r_s
    }

    /// Row `G` with `G x = V_s - V_b`.
    pub fn health_row(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 2, &[-1.0 / self.c_b, 1.0 / self.c_s])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KibamParams {
    pub s1: f64,
    pub s2: f64,
    pub p: f64,
    pub c: f64,
}

impl KibamParams {
    pub fn state_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(
            2,
            2,
            &[
                -self.p / self.s1,
                self.p / self.s2,
                self.p / self.s1,
                -self.p / self.s2,
            ],
        )
    }

    pub fn input_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(2, 1, &[self.c, 1.0 - self.c])
    }
}

pub fn kibam_of_rc(params: &RcParams) -> KibamParams {
    let rt = params.r_total();
    KibamParams {
        s1: params.c_b,
        s2: params.c_s,
        p: 1.0 / rt,
        c: params.r_s / rt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BatteryState {
    pub q_b: f64,
    pub q_s: f64,
}

impl BatteryState {
    pub fn new(q_b: f64, q_s: f64) -> Self {
        Self { q_b, q_s }
    }

    pub fn total(&self) -> f64 {
        self.q_b + self.q_s
    }

    pub fn to_vector(self) -> DVector<f64> {
        DVector::from_column_slice(&[self.q_b, self.q_s])
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        debug_assert_eq!(v.len(), 2);
        Self {
            q_b: v[0],
            q_s: v[1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SocBounds {
    pub q_b_min: f64,
    pub q_b_max: f64,
    pub q_s_min: f64,
    pub q_s_max: f64,
}

impl SocBounds {
    pub fn new(q_b_min: f64, q_b_max: f64, q_s_min: f64, q_s_max: f64) -> Result<Self> {
        let bounds = Self {
            q_b_min,
            q_b_max,
            q_s_min,
            q_s_max,
        };
        bounds.validate()?;
        Ok(bounds)
    }

    /// Zero unusable charge, capacity split in proportion to capacitance so
    /// that the full and empty states are both equilibria.
    pub fn proportional(params: &RcParams, capacity: f64) -> Result<Self> {
        if !(capacity > 0.0) {
            return Err(Error::invalid(
                "capacity",
                format!("must be > 0, got {capacity}"),
            ));
        }
        let total_c = params.c_b + params.c_s;
        Self::new(
            0.0,
            capacity * params.c_b / total_c,
            0.0,
            capacity * params.c_s / total_c,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q_b_min >= 0.0 && self.q_b_max > self.q_b_min) {
            return Err(Error::invalid(
                "bounds",
                format!(
                    "need q_b_max > q_b_min >= 0, got [{}, {}]",
                    self.q_b_min, self.q_b_max
                ),
            ));
        }
        if !(self.q_s_min >= 0.0 && self.q_s_max > self.q_s_min) {
            return Err(Error::invalid(
                "bounds",
                format!(
                    "need q_s_max > q_s_min >= 0, got [{}, {}]",
                    self.q_s_min, self.q_s_max
                ),
            ));
        }
        Ok(())
    }

    /// Usable capacity in coulombs.
    pub fn capacity(&self) -> f64 {
        (self.q_b_max - self.q_b_min) + (self.q_s_max - self.q_s_min)
    }
}

/// Continuous-time matrices of the RC model.
pub fn continuous_matrices(params: &RcParams) -> Result<ContinuousSystem> {
    params.validate()?;
    let rt = params.r_total();
    let a = DMatrix::from_row_slice(
        2,
        2,
        &[
            -1.0 / (params.c_b * rt),
            1.0 / (params.c_s * rt),
            1.0 / (params.c_b * rt),
            -1.0 / (params.c_s * rt),
        ],
    );
    let b = DMatrix::from_column_slice(2, 1, &[params.r_s / rt, params.r_b / rt]);
    let c = DMatrix::from_row_slice(
        1,
        2,
        &[
            params.r_s / (params.c_b * rt),
            params.r_b / (params.c_s * rt),
        ],
    );
    let d = DMatrix::from_element(1, 1, params.r_o + params.r_b * params.r_s / rt);
    ContinuousSystem::new(a, b, c, d)
}

/// Zero-order-hold discretization of the RC model.
pub fn discretize(params: &RcParams, ts: f64) -> Result<DiscreteSystem> {
    continuous_matrices(params)?.discretize(ts)
}

/// SoC from stored charges. Not clamped.
pub fn soc_of_state(x: &BatteryState, bounds: &SocBounds) -> f64 {
    (x.q_b - bounds.q_b_min + x.q_s - bounds.q_s_min) / bounds.capacity()
}

/// The equilibrium state (`Q_b/C_b = Q_s/C_s`) with the requested SoC.
pub fn state_of_soc(soc: f64, bounds: &SocBounds, params: &RcParams) -> Result<BatteryState> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(Error::Domain(format!("SoC must lie in [0, 1], got {soc}")));
    }
    let total = soc * bounds.capacity() + bounds.q_b_min + bounds.q_s_min;
    let total_c = params.c_b + params.c_s;
    Ok(BatteryState {
        q_b: total * params.c_b / total_c,
        q_s: total * params.c_s / total_c,
    })
}

pub fn terminal_voltage<S: OutputEquation>(sys: &S, x: &BatteryState, current: f64) -> f64 {
    sys.output(&x.to_vector(), &DVector::from_element(1, current))[0]
}

/// `V_s - V_b`, the potential difference driving charge from the surface to the bulk.
pub fn health_indicator(x: &BatteryState, params: &RcParams) -> f64 {
    -x.q_b / params.c_b + x.q_s / params.c_s
}

/// Process and measurement noise injected by [`plant_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    w_sim: DMatrix<f64>,
    w_factor: DMatrix<f64>,
    v_meas: f64,
}

impl NoiseSpec {
    pub fn new(w_sim: DMatrix<f64>, v_meas: f64) -> Result<Self> {
        if !linalg::is_psd(&w_sim, 1e-12) {
            return Err(Error::invalid(
                "w_sim",
                "process noise covariance must be symmetric PSD",
            ));
        }
        if !(v_meas >= 0.0) {
            return Err(Error::invalid(
                "v_meas",
                format!("variance must be >= 0, got {v_meas}"),
            ));
        }
        let w_factor = linalg::psd_factor(&w_sim);
        Ok(Self {
            w_sim,
            w_factor,
            v_meas,
        })
    }

    pub fn zero(states: usize) -> Self {
        Self {
            w_sim: DMatrix::zeros(states, states),
            w_factor: DMatrix::zeros(states, states),
            v_meas: 0.0,
        }
    }

    /// `W = diag(1e-4, 1e-4)` C², `V = (1 mV)²`.
    pub fn battery_default() -> Self {
        Self::new(DMatrix::from_diagonal_element(2, 2, 1e-4), 1e-6).expect("valid default")
    }

    pub fn w_sim(&self) -> &DMatrix<f64> {
        &self.w_sim
    }

    pub fn v_meas(&self) -> f64 {
        self.v_meas
    }

    pub fn is_zero(&self) -> bool {
        self.v_meas == 0.0 && self.w_sim.iter().all(|&v| v == 0.0)
    }
}

/// One step of the simulated battery: returns the next state and the voltage
/// measured at the current step.
///
/// Random draws happen in a fixed order (process components, then
/// measurement) whatever the noise levels, so a seed fixes the trace.
pub fn plant_step<R: Rng + ?Sized>(
    sys: &DiscreteSystem,
    x: &BatteryState,
    current: f64,
    noise: &NoiseSpec,
    rng: &mut R,
) -> (BatteryState, f64) {
    let xv = x.to_vector();
    let u = DVector::from_element(1, current);
    let z = DVector::from_fn(xv.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let e: f64 = rng.sample(StandardNormal);
    let w = &noise.w_factor * z;
    let y = sys.output(&xv, &u)[0] + noise.v_meas.sqrt() * e;
    let next = sys.step(&xv, &u) + w;
    (BatteryState::from_vector(&next), y)
}

/// Charge at constant current from `x0` until the terminal voltage first
/// reaches `v_cap`. Returns the state at that moment and the step count, or
/// `None` if the cap is not reached within `max_steps`.
pub fn charge_until_voltage(
    sys: &DiscreteSystem,
    x0: &BatteryState,
    current: f64,
    v_cap: f64,
    max_steps: usize,
) -> Option<(BatteryState, usize)> {
    let mut x = *x0;
    for k in 0..max_steps {
        if terminal_voltage(sys, &x, current) >= v_cap {
            return Some((x, k));
        }
        x = BatteryState::from_vector(
            &sys.step(&x.to_vector(), &DVector::from_element(1, current)),
        );
    }
    None
}

/// Equilibrium open-circuit voltage of a full pack; the default cap for
/// rate-capacity experiments.
pub fn full_charge_voltage(bounds: &SocBounds, params: &RcParams) -> f64 {
    let full = BatteryState::new(bounds.q_b_max, bounds.q_s_max);
    full.total() / (params.c_b + params.c_s)
}
