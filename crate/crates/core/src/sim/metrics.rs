use serde::{Deserialize, Serialize};

use super::trace::SimTrace;

/// Summary numbers, all computed from the trace columns alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub final_soc: f64,
    pub target_soc: f64,
    /// `|final SoC − target|`.
    pub soc_error: f64,
    pub max_abs_health_v: f64,
    /// Mean `|V_s − V_b|` over control steps `k ∈ [jN/4, (j+1)N/4)`.
    pub quarter_mean_abs_health_v: [f64; 4],
    /// `ts · Σ u_k`.
    pub charge_delivered_c: f64,
    pub peak_current_a: f64,
    /// RMS of `‖x_k − r_k‖` over rows with a reference.
    pub rms_tracking_error_c: Option<f64>,
}

impl Metrics {
    pub fn from_trace(trace: &SimTrace, target_soc: f64) -> Self {
        let n = trace.horizon();
        let rows = &trace.rows;
        let final_soc = rows.last().map_or(f64::NAN, |r| r.soc);
        let quarter = |j: usize| {
            let (lo, hi) = (j * n / 4, (j + 1) * n / 4);
            if hi <= lo {
                return f64::NAN;
            }
            rows[lo..hi].iter().map(|r| r.health_v.abs()).sum::<f64>() / (hi - lo) as f64
        };
        let tracked: Vec<f64> = rows
            .iter()
            .filter_map(|r| {
                let (rb, rs) = (r.rb_c?, r.rs_c?);
                Some((r.qb_c - rb).powi(2) + (r.qs_c - rs).powi(2))
            })
            .collect();
        Self {
            final_soc,
            target_soc,
            soc_error: (final_soc - target_soc).abs(),
            max_abs_health_v: rows.iter().map(|r| r.health_v.abs()).fold(0.0, f64::max),
            quarter_mean_abs_health_v: [quarter(0), quarter(1), quarter(2), quarter(3)],
            charge_delivered_c: trace.ts() * rows.iter().map(|r| r.u_a).sum::<f64>(),
            peak_current_a: rows.iter().map(|r| r.u_a.abs()).fold(0.0, f64::max),
            rms_tracking_error_c: (!tracked.is_empty())
                .then(|| (tracked.iter().sum::<f64>() / tracked.len() as f64).sqrt()),
        }
    }

    /// Final-quarter over first-quarter mean `|health|`.
    pub fn health_decay_ratio(&self) -> f64 {
        self.quarter_mean_abs_health_v[3] / self.quarter_mean_abs_health_v[0]
    }
}
