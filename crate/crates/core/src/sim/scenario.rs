//! Scenario files (TOML).
//!
//! ```toml
//! name = "lq-95"
//! ts = 1.0
//! feedback = "kalman"          # or "true-state"
//!
//! [objective]
//! initial_soc = 0.3
//! target_soc = 0.95
//! duration = 7200.0            # seconds
//!
//! [strategy]
//! kind = "lqcwfts"             # lqcwfts | lqt | ss-lqt | constant-current
//! q0 = 0.1
//! growth = 5e7
//! r = 0.1
//!
//! [noise]
//! seed = 7
//! ```
//!
//! Omitted sections fall back to the reference cell, proportional SoC
//! bounds for `capacity_c`, the default noise spec and a Kalman predictor
//! started at the true initial state.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::battery::{NoiseSpec, RcParams, SocBounds, REFERENCE_CAPACITY_C};
use crate::error::{Error, Result};
use crate::fts::ChargingObjective;

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feedback {
    TrueState,
    #[default]
    Kalman,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Strategy {
    /// LQ control with the target as a fixed terminal state; health weight
    /// `q_k = q0 · growth^{k/N}`.
    Lqcwfts {
        #[serde(default = "default_q0")]
        q0: f64,
        #[serde(default = "default_growth")]
        growth: f64,
        #[serde(default = "default_r")]
        r: f64,
        /// Defaults to zero.
        #[serde(default)]
        s_terminal: Option<Matrix>,
    },
    /// Finite-horizon tracker of the exponential reference path.
    Lqt {
        #[serde(default = "default_tracking_q")]
        q: Matrix,
        #[serde(default = "default_r")]
        r: f64,
        /// `S_N = s_terminal_scale · Q` unless `s_terminal` is given.
        #[serde(default = "default_terminal_scale")]
        s_terminal_scale: f64,
        #[serde(default)]
        s_terminal: Option<Matrix>,
        /// Default `N·ts/4`.
        #[serde(default)]
        tau_b: Option<f64>,
        #[serde(default)]
        tau_s: Option<f64>,
    },
    /// Steady-state tracker with constant gains.
    SsLqt {
        #[serde(default = "default_tracking_q")]
        q: Matrix,
        #[serde(default = "default_r")]
        r: f64,
        /// Defaults to the control DARE solution.
        #[serde(default)]
        s_terminal: Option<Matrix>,
        #[serde(default)]
        tau_b: Option<f64>,
        #[serde(default)]
        tau_s: Option<f64>,
        /// Generate `s_{k+1}` online with the forward recursion instead of
        /// reading the stored backward pass.
        #[serde(default)]
        forward_s: bool,
    },
    ConstantCurrent {
        current_a: f64,
    },
}

impl Strategy {
    pub fn tag(&self) -> &'static str {
        match self {
            Strategy::Lqcwfts { .. } => "lqcwfts",
            Strategy::Lqt { .. } => "lqt",
            Strategy::SsLqt { .. } => "ss-lqt",
            Strategy::ConstantCurrent { .. } => "constant-current",
        }
    }

    pub fn is_tracking(&self) -> bool {
        matches!(self, Strategy::Lqt { .. } | Strategy::SsLqt { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// `false` runs the plant noise-free regardless of the levels below.
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_w")]
    pub w_sim: Matrix,
    #[serde(default = "default_v")]
    pub v_meas: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            w_sim: default_w(),
            v_meas: default_v(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    #[serde(default = "default_sigma0")]
    pub sigma0: Matrix,
    /// Process noise covariance assumed by the filter.
    #[serde(default = "default_w")]
    pub w: Matrix,
    #[serde(default = "default_v")]
    pub v: f64,
    /// `[q_b, q_s]`; defaults to the true initial state.
    #[serde(default)]
    pub initial_estimate: Option<[f64; 2]>,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            sigma0: default_sigma0(),
            w: default_w(),
            v: default_v(),
            initial_estimate: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default = "default_ts")]
    pub ts: f64,
    #[serde(default = "RcParams::reference")]
    pub battery: RcParams,
    /// Used when `bounds` is absent.
    #[serde(default = "default_capacity")]
    pub capacity_c: f64,
    #[serde(default)]
    pub bounds: Option<SocBounds>,
    pub objective: ChargingObjective,
    pub strategy: Strategy,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub feedback: Feedback,
}

fn yes() -> bool {
    true
}
fn default_name() -> String {
    "scenario".into()
}
fn default_ts() -> f64 {
    1.0
}
fn default_capacity() -> f64 {
    REFERENCE_CAPACITY_C
}
fn default_q0() -> f64 {
    0.1
}
fn default_growth() -> f64 {
    5e7
}
fn default_r() -> f64 {
    0.1
}
fn default_terminal_scale() -> f64 {
    1e3
}
fn default_tracking_q() -> Matrix {
    vec![vec![1e-4, 0.0], vec![0.0, 1e-2]]
}
fn default_w() -> Matrix {
    vec![vec![1e-4, 0.0], vec![0.0, 1e-4]]
}
fn default_v() -> f64 {
    1e-6
}
fn default_sigma0() -> Matrix {
    vec![vec![100.0, 0.0], vec![0.0, 100.0]]
}

/// Row-major nested list to an `n × n` matrix.
pub fn to_matrix(rows: &Matrix, n: usize, name: &'static str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::invalid(name, format!("expected a {n}×{n} matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid(name, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ts > 0.0) || !self.ts.is_finite() {
            return Err(Error::invalid(
                "ts",
                format!("must be > 0, got {}", self.ts),
            ));
        }
        self.battery.validate()?;
        self.soc_bounds()?;
        self.objective.horizon(self.ts)?;
        self.noise_spec()?;
        let sigma0 = to_matrix(&self.estimator.sigma0, 2, "estimator.sigma0")?;
        if !crate::linalg::is_psd(&sigma0, 1e-10) {
            return Err(Error::invalid("estimator.sigma0", "must be symmetric PSD"));
        }
        to_matrix(&self.estimator.w, 2, "estimator.w")?;
        if !(self.estimator.v > 0.0) {
            return Err(Error::invalid("estimator.v", "must be > 0"));
        }
        match &self.strategy {
            Strategy::Lqcwfts {
                q0,
                growth,
                r,
                s_terminal,
            } => {
                if !(*q0 > 0.0 && *growth > 0.0 && *r > 0.0) {
                    return Err(Error::invalid("strategy", "q0, growth and r must be > 0"));
                }
                if let Some(s) = s_terminal {
                    to_matrix(s, 2, "strategy.s_terminal")?;
                }
            }
            Strategy::Lqt {
                q,
                r,
                s_terminal,
                tau_b,
                tau_s,
                ..
            }
            | Strategy::SsLqt {
                q,
                r,
                s_terminal,
                tau_b,
                tau_s,
                ..
            } => {
                to_matrix(q, 2, "strategy.q")?;
                if !(*r > 0.0) {
                    return Err(Error::invalid("strategy.r", "must be > 0"));
                }
                if let Some(s) = s_terminal {
                    to_matrix(s, 2, "strategy.s_terminal")?;
                }
                for tau in [tau_b, tau_s].into_iter().flatten() {
                    if !(*tau > 0.0) {
                        return Err(Error::invalid("strategy.tau", "time constants must be > 0"));
                    }
                }
            }
            Strategy::ConstantCurrent { current_a } => {
                if !current_a.is_finite() {
                    return Err(Error::invalid("strategy.current_a", "must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn soc_bounds(&self) -> Result<SocBounds> {
        match self.bounds {
            Some(b) => {
                b.validate()?;
                Ok(b)
            }
            None => SocBounds::proportional(&self.battery, self.capacity_c),
        }
    }

    pub fn horizon(&self) -> Result<usize> {
        self.objective.horizon(self.ts)
    }

    pub fn noise_spec(&self) -> Result<NoiseSpec> {
        if !self.noise.enabled {
            return Ok(NoiseSpec::zero(2));
        }
        NoiseSpec::new(
            to_matrix(&self.noise.w_sim, 2, "noise.w_sim")?,
            self.noise.v_meas,
        )
    }

    pub fn initial_estimate(&self) -> Option<DVector<f64>> {
        self.estimator
            .initial_estimate
            .map(|v| DVector::from_column_slice(&v))
    }

    /// Scenario with a different target, renamed after it.
    pub fn with_target(&self, target_soc: f64) -> Self {
        let mut s = self.clone();
        s.objective.target_soc = target_soc;
        s.name = format!("{}-{:.0}", self.name, target_soc * 100.0);
        s
    }

    pub fn noise_free(mut self) -> Self {
        self.noise.enabled = false;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[objective]
initial_soc = 0.3
target_soc = 0.95
duration = 7200.0

[strategy]
kind = "constant-current"
current_a = 2.275
"#;

    #[test]
    fn defaults_fill_omitted_sections() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.battery, RcParams::reference());
        assert_eq!(s.feedback, Feedback::Kalman);
        assert_eq!(s.horizon().unwrap(), 7200);
        assert_eq!(s.noise_spec().unwrap(), NoiseSpec::battery_default());
        assert_eq!(s.strategy.tag(), "constant-current");
    }

    #[test]
    fn strategy_tags_and_defaults() {
        let text = MINIMAL.replace(
            "kind = \"constant-current\"\ncurrent_a = 2.275",
            "kind = \"ss-lqt\"\nforward_s = true",
        );
        let s = Scenario::from_toml_str(&text).unwrap();
        match s.strategy {
            Strategy::SsLqt {
                ref q,
                r,
                forward_s,
                s_terminal: None,
                tau_b: None,
                ..
            } => {
                assert_eq!(q, &default_tracking_q());
                assert_eq!(r, 0.1);
                assert!(forward_s);
            }
            ref other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn round_trips_through_toml() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        let again = Scenario::from_toml_str(&s.to_toml_string().unwrap()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Scenario::from_toml_str("ts = 1.0"),
            Err(Error::Config(_))
        ));
        let fractional = MINIMAL.replace("7200.0", "7200.5");
        assert!(Scenario::from_toml_str(&fractional).is_err());
        let unknown = format!("bogus = 3\n{MINIMAL}");
        assert!(matches!(
            Scenario::from_toml_str(&unknown),
            Err(Error::Config(_))
        ));
        let bad_kind = MINIMAL.replace("constant-current", "pid");
        assert!(Scenario::from_toml_str(&bad_kind).is_err());
        let bad_matrix = format!("{MINIMAL}\n[noise]\nw_sim = [[1.0, 0.0]]\n");
        assert!(Scenario::from_toml_str(&bad_matrix).is_err());
    }
}
