//! Per-step simulation records and their CSV form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const COLUMNS: [&str; 12] = [
    "k", "t_s", "u_A", "y_V", "qb_C", "qs_C", "qb_hat_C", "qs_hat_C", "soc", "health_V", "rb_C",
    "rs_C",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: usize,
    pub t_s: f64,
    /// Current applied over `[k, k+1)`; zero on the final row.
    #[serde(rename = "u_A")]
    pub u_a: f64,
    #[serde(rename = "y_V")]
    pub y_v: f64,
    #[serde(rename = "qb_C")]
    pub qb_c: f64,
    #[serde(rename = "qs_C")]
    pub qs_c: f64,
    #[serde(rename = "qb_hat_C")]
    pub qb_hat_c: f64,
    #[serde(rename = "qs_hat_C")]
    pub qs_hat_c: f64,
    pub soc: f64,
    /// `V_s − V_b`.
    #[serde(rename = "health_V")]
    pub health_v: f64,
    #[serde(rename = "rb_C")]
    pub rb_c: Option<f64>,
    #[serde(rename = "rs_C")]
    pub rs_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub rows: Vec<TraceRow>,
}

impl SimTrace {
    /// Number of control steps `N` (one fewer than the rows).
    pub fn horizon(&self) -> usize {
        self.rows.len().saturating_sub(1)
    }

    pub fn ts(&self) -> f64 {
        match self.rows.as_slice() {
            [a, b, ..] => b.t_s - a.t_s,
            _ => 0.0,
        }
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: std::io::Write>(
    trace: &SimTrace,
    out: W,
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for r in &trace.rows {
        let opt = |v: Option<f64>| v.map(float).unwrap_or_default();
        w.write_record([
            r.k.to_string(),
            float(r.t_s),
            float(r.u_a),
            float(r.y_v),
            float(r.qb_c),
            float(r.qs_c),
            float(r.qb_hat_c),
            float(r.qs_hat_c),
            float(r.soc),
            float(r.health_v),
            opt(r.rb_c),
            opt(r.rs_c),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(trace: &SimTrace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_csv(trace, std::io::BufWriter::new(file)).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_csv(path: &Path) -> Result<SimTrace> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(COLUMNS) {
        return Err(Error::Config(format!(
            "{}: unexpected header {:?}",
            path.display(),
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let rows = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<TraceRow>, _>>()
        .map_err(csv_err)?;
    Ok(SimTrace { rows })
}
