//! Closed-loop simulation: controller + noisy plant + state estimator.

mod metrics;
mod scenario;
mod trace;

pub use metrics::Metrics;
pub use scenario::{to_matrix, EstimatorConfig, Feedback, Matrix, NoiseConfig, Scenario, Strategy};
pub use trace::{emit_csv, read_csv, write_csv, SimTrace, TraceRow, COLUMNS};

use std::path::Path;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::battery::{
    discretize, health_indicator, plant_step, soc_of_state, state_of_soc, terminal_voltage,
    BatteryState, SocBounds,
};
use crate::error::{Error, Result};
use crate::fts::{fts_control, plan_fts, weight_schedule, FtsGainSchedule};
use crate::kalman::{predictor_step, steady_predictor_step, EstimatorState};
use crate::system::DiscreteSystem;
use crate::tracking::{
    make_reference, plan_ss_tracking, plan_tracking, tracking_control, ExactSPropagator,
    ReferenceTrajectory, SteadyTrackingPlan, TrackingPlan,
};

#[derive(Debug, Clone)]
pub enum Controller {
    Fts(FtsGainSchedule),
    Lqt(TrackingPlan),
    SsLqt {
        plan: Box<SteadyTrackingPlan>,
        forward_s: bool,
    },
    ConstantCurrent(f64),
}

/// Everything computed offline for a scenario.
#[derive(Debug, Clone)]
pub struct PlannedScenario {
    pub sys: DiscreteSystem,
    pub bounds: SocBounds,
    pub x0: BatteryState,
    pub reference: Option<ReferenceTrajectory>,
    pub controller: Controller,
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn context(scenario: &Scenario) -> impl Fn(Error) -> Error + '_ {
    move |source| Error::Scenario {
        scenario: scenario.name.clone(),
        source: Box::new(source),
    }
}

pub fn plan_scenario(scenario: &Scenario) -> Result<PlannedScenario> {
    plan_inner(scenario).map_err(context(scenario))
}

fn plan_inner(sc: &Scenario) -> Result<PlannedScenario> {
    sc.validate()?;
    let params = sc.battery;
    let bounds = sc.soc_bounds()?;
    let sys = discretize(&params, sc.ts)?;
    let n = sc.horizon()?;
    let x0 = state_of_soc(sc.objective.initial_soc, &bounds, &params)?;
    let default_tau = n as f64 * sc.ts / 4.0;
    let reference = |tau_b: &Option<f64>, tau_s: &Option<f64>| {
        make_reference(
            &sys,
            &params,
            &bounds,
            &sc.objective,
            tau_b.unwrap_or(default_tau),
            tau_s.unwrap_or(default_tau),
        )
    };

    let (controller, reference) = match &sc.strategy {
        Strategy::Lqcwfts {
            q0,
            growth,
            r,
            s_terminal,
        } => {
            let weights = weight_schedule(n, *q0, *growth)?;
            let s_n = match s_terminal {
                Some(m) => to_matrix(m, 2, "strategy.s_terminal")?,
                None => DMatrix::zeros(2, 2),
            };
            let plan = plan_fts(&sys, &params, &bounds, &sc.objective, &weights, *r, &s_n)?;
            (Controller::Fts(plan), None)
        }
        Strategy::Lqt {
            q,
            r,
            s_terminal_scale,
            s_terminal,
            tau_b,
            tau_s,
        } => {
            let q = to_matrix(q, 2, "strategy.q")?;
            let s_n = match s_terminal {
                Some(m) => to_matrix(m, 2, "strategy.s_terminal")?,
                None => &q * *s_terminal_scale,
            };
            let refr = reference(tau_b, tau_s)?;
            let plan = plan_tracking(&sys, &refr.states, &q, &scalar(*r), &s_n)?;
            (Controller::Lqt(plan), Some(refr))
        }
        Strategy::SsLqt {
            q,
            r,
            s_terminal,
            tau_b,
            tau_s,
            forward_s,
        } => {
            let q = to_matrix(q, 2, "strategy.q")?;
            let s_n = s_terminal
                .as_ref()
                .map(|m| to_matrix(m, 2, "strategy.s_terminal"))
                .transpose()?;
            let refr = reference(tau_b, tau_s)?;
            let plan = plan_ss_tracking(
                &sys,
                &refr.states,
                &q,
                &scalar(*r),
                &to_matrix(&sc.estimator.w, 2, "estimator.w")?,
                &scalar(sc.estimator.v),
                s_n.as_ref(),
            )?;
            (
                Controller::SsLqt {
                    plan: Box::new(plan),
                    forward_s: *forward_s,
                },
                Some(refr),
            )
        }
        Strategy::ConstantCurrent { current_a } => (Controller::ConstantCurrent(*current_a), None),
    };
    debug!("planned `{}` ({}), N = {n}", sc.name, sc.strategy.tag());
    Ok(PlannedScenario {
        sys,
        bounds,
        x0,
        reference,
        controller,
    })
}

enum Estimator {
    Varying(EstimatorState),
    Steady {
        x_hat: DVector<f64>,
        l_bar: DMatrix<f64>,
    },
}

impl Estimator {
    fn x_hat(&self) -> &DVector<f64> {
        match self {
            Estimator::Varying(e) => &e.x_hat,
            Estimator::Steady { x_hat, .. } => x_hat,
        }
    }
}

pub fn run_scenario(scenario: &Scenario) -> Result<(SimTrace, Metrics)> {
    let planned = plan_scenario(scenario)?;
    let trace = simulate(scenario, &planned).map_err(context(scenario))?;
    let metrics = Metrics::from_trace(&trace, scenario.objective.target_soc);
    info!(
        "`{}`: final SoC {:.4}, error {:.2e}, peak current {:.3} A",
        scenario.name, metrics.final_soc, metrics.soc_error, metrics.peak_current_a
    );
    Ok((trace, metrics))
}

/// Roll the closed loop forward over the planned horizon.
pub fn simulate(sc: &Scenario, planned: &PlannedScenario) -> Result<SimTrace> {
    let n = sc.horizon()?;
    let sys = &planned.sys;
    let params = &sc.battery;
    let noise = sc.noise_spec()?;
    let w_filter = to_matrix(&sc.estimator.w, 2, "estimator.w")?;
    let v_filter = scalar(sc.estimator.v);
    let mut rng = ChaCha8Rng::seed_from_u64(sc.noise.seed);

    let mut x = planned.x0;
    let x_hat0 = sc.initial_estimate().unwrap_or_else(|| x.to_vector());
    let mut est = match &planned.controller {
        Controller::SsLqt { plan, .. } => Estimator::Steady {
            x_hat: x_hat0,
            l_bar: plan.l_bar.clone(),
        },
        _ => Estimator::Varying(EstimatorState::new(
            x_hat0,
            to_matrix(&sc.estimator.sigma0, 2, "estimator.sigma0")?,
        )?),
    };
    let mut exact_s = match &planned.controller {
        Controller::SsLqt {
            plan,
            forward_s: true,
        } => {
            let refr = planned
                .reference
                .as_ref()
                .expect("tracking strategies carry a reference");
            Some(ExactSPropagator::new(plan, &refr.states)?)
        }
        _ => None,
    };

    let reference_at = |k: usize| planned.reference.as_ref().map(|r| &r.states[k]);
    let row = |k: usize, u: f64, y: f64, x: &BatteryState, x_hat: &DVector<f64>| {
        let r = reference_at(k);
        TraceRow {
            k,
            t_s: k as f64 * sys.ts,
            u_a: u,
            y_v: y,
            qb_c: x.q_b,
            qs_c: x.q_s,
            qb_hat_c: x_hat[0],
            qs_hat_c: x_hat[1],
            soc: soc_of_state(x, &planned.bounds),
            health_v: health_indicator(x, params),
            rb_c: r.map(|r| r[0]),
            rs_c: r.map(|r| r[1]),
        }
    };

    let mut rows = Vec::with_capacity(n + 1);
    for k in 0..n {
        let feedback = match sc.feedback {
            Feedback::TrueState => x.to_vector(),
            Feedback::Kalman => est.x_hat().clone(),
        };
        let u = match &planned.controller {
            Controller::Fts(plan) => fts_control(plan, &feedback, k)?[0],
            Controller::Lqt(plan) => tracking_control(plan, &feedback, k)?[0],
            Controller::SsLqt { plan, .. } => match exact_s.as_mut() {
                Some(prop) => {
                    let s_next = prop.advance(reference_at(k).expect("reference"));
                    plan.control_with(&feedback, &s_next)[0]
                }
                None => plan.control(&feedback, k)?[0],
            },
            Controller::ConstantCurrent(i) => *i,
        };
        let (x_next, y) = plant_step(sys, &x, u, &noise, &mut rng);
        rows.push(row(k, u, y, &x, est.x_hat()));

        let uv = DVector::from_element(1, u);
        let yv = DVector::from_element(1, y);
        est = match est {
            Estimator::Varying(e) => {
                Estimator::Varying(predictor_step(sys, &e, &uv, &yv, &w_filter, &v_filter)?)
            }
            Estimator::Steady { x_hat, l_bar } => Estimator::Steady {
                x_hat: steady_predictor_step(sys, &x_hat, &uv, &yv, &l_bar),
                l_bar,
            },
        };
        x = x_next;
    }
    rows.push(row(n, 0.0, terminal_voltage(sys, &x, 0.0), &x, est.x_hat()));
    Ok(SimTrace { rows })
}

/// Column names and rows of a planned gain schedule, for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct GainTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn gain_table(planned: &PlannedScenario) -> GainTable {
    let cols = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let row2 = |m: &DMatrix<f64>| [m[(0, 0)], m[(0, 1)]];
    match &planned.controller {
        Controller::Fts(plan) => GainTable {
            columns: cols(&["k", "F_b", "F_s", "H_b", "H_s", "cond_P"]),
            rows: (0..plan.horizon())
                .map(|k| {
                    let mut r = vec![k as f64];
                    r.extend(row2(&plan.feedback[k]));
                    r.extend(row2(&plan.feedforward[k]));
                    r.push(plan.p_condition[k]);
                    r
                })
                .collect(),
        },
        Controller::Lqt(plan) => GainTable {
            columns: cols(&["k", "K_b", "K_s", "Ks_b", "Ks_s", "s_b", "s_s"]),
            rows: (0..plan.horizon())
                .map(|k| {
                    let mut r = vec![k as f64];
                    r.extend(row2(&plan.gains[k]));
                    r.extend(row2(&plan.feedforward_gains[k]));
                    r.extend(plan.s[k].iter());
                    r
                })
                .collect(),
        },
        Controller::SsLqt { plan, .. } => GainTable {
            columns: cols(&[
                "k", "K_b", "K_s", "Ks_b", "Ks_s", "L_b", "L_s", "s_b", "s_s",
            ]),
            rows: plan
                .s
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let mut r = vec![k as f64];
                    r.extend(row2(&plan.k_bar));
                    r.extend(row2(&plan.ks_bar));
                    r.extend(plan.l_bar.iter());
                    r.extend(s.iter());
                    r
                })
                .collect(),
        },
        Controller::ConstantCurrent(i) => GainTable {
            columns: cols(&["k", "u_A"]),
            rows: (0..planned.reference.as_ref().map_or(0, |r| r.horizon()).max(1))
                .map(|k| vec![k as f64, *i])
                .collect(),
        },
    }
}

pub fn emit_gain_table(table: &GainTable, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&table.columns).map_err(csv_err)?;
    for r in &table.rows {
        w.write_record(r.iter().enumerate().map(|(i, v)| {
            if i == 0 {
                format!("{v}")
            } else {
                format!("{v:.16e}")
            }
        }))
        .map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub name: String,
    pub strategy: String,
    pub metrics: Metrics,
    /// Final-quarter mean `|health|` relative to the constant-current
    /// baseline, when the batch contains one.
    pub health_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Name of the first constant-current scenario in the batch.
    pub baseline: Option<String>,
}

/// Run every scenario (in parallel) and report in input order.
pub fn compare_strategies(scenarios: &[Scenario]) -> Result<Comparison> {
    if scenarios.is_empty() {
        return Err(Error::invalid("scenarios", "need at least one scenario"));
    }
    let metrics = scenarios
        .par_iter()
        .map(|s| run_scenario(s).map(|(_, m)| m))
        .collect::<Result<Vec<_>>>()?;
    let baseline = scenarios
        .iter()
        .position(|s| matches!(s.strategy, Strategy::ConstantCurrent { .. }));
    let baseline_q4 = baseline.map(|i| metrics[i].quarter_mean_abs_health_v[3]);
    let rows = scenarios
        .iter()
        .zip(metrics)
        .map(|(s, m)| ComparisonRow {
            name: s.name.clone(),
            strategy: s.strategy.tag().to_string(),
            health_vs_baseline: baseline_q4.map(|b| m.quarter_mean_abs_health_v[3] / b),
            metrics: m,
        })
        .collect();
    Ok(Comparison {
        rows,
        baseline: baseline.map(|i| scenarios[i].name.clone()),
    })
}

pub const SUMMARY_COLUMNS: [&str; 14] = [
    "name",
    "strategy",
    "final_soc",
    "target_soc",
    "soc_error",
    "max_abs_health_V",
    "q1_mean_abs_health_V",
    "q2_mean_abs_health_V",
    "q3_mean_abs_health_V",
    "q4_mean_abs_health_V",
    "charge_delivered_C",
    "peak_current_A",
    "rms_tracking_error_C",
    "q4_health_vs_baseline",
];

pub fn emit_summary(comparison: &Comparison, path: &Path) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let f = |v: f64| format!("{v:.16e}");
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
    for r in &comparison.rows {
        let m = &r.metrics;
        let mut rec = vec![
            r.name.clone(),
            r.strategy.clone(),
            f(m.final_soc),
            f(m.target_soc),
            f(m.soc_error),
            f(m.max_abs_health_v),
        ];
        rec.extend(m.quarter_mean_abs_health_v.iter().map(|&v| f(v)));
        rec.push(f(m.charge_delivered_c));
        rec.push(f(m.peak_current_a));
        rec.push(m.rms_tracking_error_c.map(f).unwrap_or_default());
        rec.push(r.health_vs_baseline.map(f).unwrap_or_default());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// All `*.toml` scenarios in a directory, sorted by file name.
pub fn load_scenario_dir(dir: &Path) -> Result<Vec<Scenario>> {
    let io_err = |source| Error::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(io_err)?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "toml"));
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Config(format!(
            "no .toml scenarios in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| Scenario::load(p)).collect()
}
