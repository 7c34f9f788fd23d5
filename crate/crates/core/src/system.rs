//! Linear state-space systems and zero-order-hold discretization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Anything with an output row `y = C x + D u`.
pub trait OutputEquation {
    fn c(&self) -> &DMatrix<f64>;
    fn d(&self) -> &DMatrix<f64>;

    fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.c() * x + self.d() * u
    }
}

/// `ẋ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// `x⁺ = A x + B u`, `y = C x + D u`, sampled every `ts` seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub ts: f64,
}

fn check_dims(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<()> {
    let n = a.nrows();
    linalg::check_square(a, n, "A")?;
    linalg::check_shape(b, n, b.ncols(), "B")?;
    linalg::check_shape(c, c.nrows(), n, "C")?;
    linalg::check_shape(d, c.nrows(), b.ncols(), "D")?;
    Ok(())
}

impl ContinuousSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        check_dims(&a, &b, &c, &d)?;
        Ok(Self { a, b, c, d })
    }

    /// Exact zero-order-hold discretization.
    ///
    /// Uses the block exponential `exp([[A, B], [0, 0]]·ts) = [[Φ, Γ], [0, I]]`,
    /// so `Φ = e^{A ts}` and `Γ = ∫₀^ts e^{Aτ} dτ B` come out of one call.
    pub fn discretize(&self, ts: f64) -> Result<DiscreteSystem> {
        if !(ts > 0.0) || !ts.is_finite() {
            return Err(Error::invalid(
                "ts",
                format!("sampling period must be > 0, got {ts}"),
            ));
        }
        let n = self.a.nrows();
        let m = self.b.ncols();
        let mut aug = DMatrix::zeros(n + m, n + m);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a * ts));
        aug.view_mut((0, n), (n, m)).copy_from(&(&self.b * ts));
        let e = aug.exp();
        Ok(DiscreteSystem {
            a: e.view((0, 0), (n, n)).into_owned(),
            b: e.view((0, n), (n, m)).into_owned(),
            c: self.c.clone(),
            d: self.d.clone(),
            ts,
        })
    }
}

impl DiscreteSystem {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        ts: f64,
    ) -> Result<Self> {
        check_dims(&a, &b, &c, &d)?;
        if !(ts > 0.0) {
            return Err(Error::invalid(
                "ts",
                format!("sampling period must be > 0, got {ts}"),
            ));
        }
        Ok(Self { a, b, c, d, ts })
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn is_controllable(&self) -> bool {
        linalg::is_controllable(&self.a, &self.b)
    }

    pub fn is_observable(&self) -> bool {
        linalg::is_observable(&self.a, &self.c)
    }
}

impl OutputEquation for ContinuousSystem {
    fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
}

impl OutputEquation for DiscreteSystem {
    fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
}
