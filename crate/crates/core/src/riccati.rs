//! Riccati recursions: the finite-horizon backward pass and steady-state
//! DARE solvers in control and filter form.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, inf_norm, spd_solve, symmetrize};

const MAX_DOUBLINGS: usize = 64;
const STEP_TOL: f64 = 1e-12;
/// Closed-loop poles closer than this to the unit circle count as marginal.
const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct DareSolution {
    pub s: DMatrix<f64>,
    /// `(BᵀSB + R)⁻¹BᵀSA` for the control form, `AΣCᵀ(CΣCᵀ + V)⁻¹` for the filter form.
    pub gain: DMatrix<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub spectral_radius: f64,
    /// Residual after each doubling step.
    pub residual_history: Vec<f64>,
}

/// One application of the control Riccati map,
/// `AᵀSA − AᵀSB(BᵀSB + R)⁻¹BᵀSA + Q`.
pub fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let bts = b.transpose() * s;
    let gain = spd_solve(&(&bts * b + r), &(&bts * a), "BᵀSB + R")?;
    Ok(symmetrize(&(a.transpose() * s * (a - b * gain) + q)))
}

pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<f64> {
    Ok(inf_norm(&(s - riccati_map(a, b, q, r, s)?)))
}

fn validate_weights(n: usize, m: usize, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    linalg::check_square(q, n, "Q")?;
    linalg::check_square(r, m, "R")?;
    if !linalg::is_psd(q, 1e-10) {
        return Err(Error::invalid(
            "q",
            "state weight must be symmetric positive semidefinite",
        ));
    }
    if !linalg::is_symmetric(r, 1e-12) || symmetrize(r).cholesky().is_none() {
        return Err(Error::invalid(
            "r",
            "input weight must be symmetric positive definite",
        ));
    }
    Ok(())
}

/// Stabilizing solution of `S = AᵀSA − AᵀSB(BᵀSB + R)⁻¹BᵀSA + Q`.
///
/// Structure-preserving doubling: the `k`-th iterate equals the `2^k`-th
/// iterate of the plain Riccati map started from zero, so the limit is the
/// same fixed point but slow modes (poles near the unit circle) converge in a
/// few dozen steps instead of tens of thousands.
pub fn solve_dare_control(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DareSolution> {
    let n = a.nrows();
    linalg::check_square(a, n, "A")?;
    linalg::check_shape(b, n, b.ncols(), "B")?;
    validate_weights(n, b.ncols(), q, r)?;

    let eye = DMatrix::<f64>::identity(n, n);
    let mut ak = a.clone();
    let mut gk = symmetrize(&(b * spd_solve(r, &b.transpose(), "R")?));
    let mut hk = symmetrize(q);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=MAX_DOUBLINGS {
        iterations = it;
        let w = (&eye + &gk * &hk).lu();
        let w_a = w
            .solve(&ak)
            .ok_or_else(|| Error::Singular("I + G H in doubling step".into()))?;
        let w_g = w
            .solve(&gk)
            .ok_or_else(|| Error::Singular("I + G H in doubling step".into()))?;
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &w_a));
        let g_next = symmetrize(&(&gk + &ak * &w_g * ak.transpose()));
        let a_next = &ak * &w_a;

        let step = inf_norm(&(&h_next - &hk));
        let scale = inf_norm(&h_next);
        hk = h_next;
        gk = g_next;
        ak = a_next;
        history.push(dare_residual(a, b, q, r, &hk)?);
        if step <= STEP_TOL * scale || scale == 0.0 {
            converged = true;
            break;
        }
    }

    let residual = *history.last().unwrap_or(&f64::INFINITY);
    if !converged {
        return Err(Error::NoConvergence {
            iterations,
            residual,
        });
    }
    let s = hk;
    let bts = b.transpose() * &s;
    let gain = spd_solve(&(&bts * b + r), &(&bts * a), "BᵀSB + R")?;
    let spectral_radius = linalg::spectral_radius(&(a - b * &gain));
    if spectral_radius >= 1.0 - STABILITY_MARGIN {
        return Err(Error::NotStabilizing {
            spectral_radius,
            residual,
        });
    }
    Ok(DareSolution {
        s,
        gain,
        iterations,
        residual,
        spectral_radius,
        residual_history: history,
    })
}

/// Stabilizing solution of `Σ = AΣAᵀ − AΣCᵀ(CΣCᵀ + V)⁻¹CΣAᵀ + W`, solved as
/// the control DARE of the dual pair `(Aᵀ, Cᵀ)`. The gain is the steady
/// predictor gain `L̄ = AΣCᵀ(CΣCᵀ + V)⁻¹`.
pub fn solve_dare_filter(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    w: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<DareSolution> {
    let mut sol = solve_dare_control(&a.transpose(), &c.transpose(), w, v)?;
    sol.gain = sol.gain.transpose();
    Ok(sol)
}

/// Output of [`riccati_backward`]: `s[k]` for `k = 0..=N` (with `s[N]` the
/// terminal weight) and `gains[k]` for `k = 0..N`.
#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub s: Vec<DMatrix<f64>>,
    pub gains: Vec<DMatrix<f64>>,
}

/// `K_k = (BᵀS_{k+1}B + R)⁻¹BᵀS_{k+1}A`, `S_k = AᵀS_{k+1}(A − BK_k) + Q_k`,
/// run from `k = N−1` down to `0`.
pub fn riccati_backward(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q_schedule: &[DMatrix<f64>],
    r: &DMatrix<f64>,
    s_terminal: &DMatrix<f64>,
) -> Result<BackwardPass> {
    let n = a.nrows();
    let horizon = q_schedule.len();
    if horizon == 0 {
        return Err(Error::invalid("horizon", "need at least one step"));
    }
    linalg::check_square(a, n, "A")?;
    linalg::check_square(s_terminal, n, "S_N")?;
    if !linalg::is_psd(s_terminal, 1e-10) {
        return Err(Error::invalid(
            "s_terminal",
            "must be symmetric positive semidefinite",
        ));
    }
    let mut s = vec![DMatrix::zeros(n, n); horizon + 1];
    let mut gains = vec![DMatrix::zeros(b.ncols(), n); horizon];
    s[horizon] = symmetrize(s_terminal);
    for k in (0..horizon).rev() {
        let s_next = &s[k + 1];
        let bts = b.transpose() * s_next;
        let gain = spd_solve(&(&bts * b + r), &(&bts * a), "BᵀS_{k+1}B + R")?;
        s[k] = symmetrize(&(a.transpose() * s_next * (a - b * &gain) + &q_schedule[k]));
        gains[k] = gain;
    }
    Ok(BackwardPass { s, gains })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery::{discretize, RcParams};
    use approx::assert_relative_eq;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_zero_dynamics() {
        let sol =
            solve_dare_control(&scalar(0.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        assert_relative_eq!(sol.s[(0, 0)], 1.0, max_relative = 1e-14);
        assert_eq!(sol.gain[(0, 0)], 0.0);
    }

    #[test]
    fn scalar_golden_ratio() {
        let sol =
            solve_dare_control(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        // S = S − S²/(S+1) + 1  ⇔  S² − S − 1 = 0
        let oracle = (1.0 + 5f64.sqrt()) / 2.0;
        assert_relative_eq!(sol.s[(0, 0)], oracle, max_relative = 1e-14);
        assert!(sol.residual <= 1e-14);
    }

    #[test]
    fn indefinite_input_weight_is_rejected() {
        let err = solve_dare_control(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(-1.0));
        assert!(matches!(
            err,
            Err(Error::InvalidParameter { name: "r", .. })
        ));
        let err = solve_dare_control(&scalar(1.0), &scalar(1.0), &scalar(-1.0), &scalar(1.0));
        assert!(matches!(
            err,
            Err(Error::InvalidParameter { name: "q", .. })
        ));
    }

    #[test]
    fn health_only_weight_has_no_stabilizing_solution() {
        // G annihilates the charge-conserving eigenvalue-1 mode, which is
        // then unobservable on the unit circle.
        let p = RcParams::reference();
        let sys = discretize(&p, 1.0).unwrap();
        let g = p.health_row();
        let q = g.transpose() * 0.1 * &g;
        match solve_dare_control(&sys.a, &sys.b, &q, &scalar(0.1)) {
            Err(Error::NotStabilizing {
                spectral_radius,
                residual,
            }) => {
                assert!((spectral_radius - 1.0).abs() < 1e-12);
                assert!(residual <= 1e-10);
            }
            other => panic!("expected NotStabilizing, got {other:?}"),
        }
    }

    #[test]
    fn reference_system_both_forms() {
        let p = RcParams::reference();
        let sys = discretize(&p, 1.0).unwrap();
        let q = DMatrix::from_diagonal(&nalgebra::dvector![1e-4, 1e-2]);
        let ctrl = solve_dare_control(&sys.a, &sys.b, &q, &scalar(0.1)).unwrap();
        assert!(ctrl.residual <= 1e-10);
        assert!(ctrl.spectral_radius < 1.0);
        let w = DMatrix::from_diagonal_element(2, 2, 1e-4);
        let filt = solve_dare_filter(&sys.a, &sys.c, &w, &scalar(1e-6)).unwrap();
        assert!(filt.residual <= 1e-10);
        assert!(filt.spectral_radius < 1.0);
        assert!(linalg::is_psd(&filt.s, 1e-12));
        assert!(filt.iterations < 64);
    }

    #[test]
    fn filter_is_transposed_control() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.3, -0.2, 1.1]);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
        let w = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let v = scalar(0.2);
        let f = solve_dare_filter(&a, &c, &w, &v).unwrap();
        let d = solve_dare_control(&a.transpose(), &c.transpose(), &w, &v).unwrap();
        assert_eq!(f.s, d.s);
        assert_eq!(f.gain, d.gain.transpose());
    }

    /// Fixed-point solve of `Σ = AΣAᵀ + W` by doubling `A^{2^k}`.
    fn lyapunov(a: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = w.clone();
        let mut ak = a.clone();
        for _ in 0..60 {
            x = &x + &ak * &x * ak.transpose();
            ak = &ak * &ak;
        }
        x
    }

    #[test]
    fn filter_with_huge_noise_approaches_lyapunov() {
        let a = DMatrix::from_row_slice(2, 2, &[0.8, 0.2, -0.1, 0.6]);
        let c = DMatrix::identity(2, 2);
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let v = DMatrix::identity(2, 2) * 1e12;
        let f = solve_dare_filter(&a, &c, &w, &v).unwrap();
        let oracle = lyapunov(&a, &w);
        assert!((&f.s - &oracle).amax() <= 1e-4 * oracle.amax());
    }

    #[test]
    fn residual_history_is_non_increasing_after_transient() {
        let a = DMatrix::from_row_slice(3, 3, &[1.02, 0.1, 0.0, 0.0, 0.97, 0.2, 0.1, 0.0, 0.99]);
        let b = DMatrix::from_row_slice(3, 1, &[0.0, 0.1, 1.0]);
        let q = DMatrix::identity(3, 3) * 1e-2;
        let sol = solve_dare_control(&a, &b, &q, &scalar(1.0)).unwrap();
        let h = &sol.residual_history;
        let peak = (0..h.len()).max_by(|&i, &j| h[i].total_cmp(&h[j])).unwrap();
        let tail = &h[peak..];
        for pair in tail.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-9) + 1e-15, "{h:?}");
        }
        // plain fixed-point iteration reaches the same point
        let mut s = q.clone();
        for _ in 0..10_000 {
            s = riccati_map(&a, &b, &q, &scalar(1.0), &s).unwrap();
        }
        assert!((&s - &sol.s).amax() <= 1e-10 * sol.s.amax());
    }

    #[test]
    fn one_step_backward_pass_with_zero_terminal() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 0.9]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let pass = riccati_backward(
            &a,
            &b,
            std::slice::from_ref(&q),
            &scalar(0.3),
            &DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert_eq!(pass.s[0], q);
        assert!(pass.gains[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_step_scalar_unroll() {
        let (a, b, q0, q1, r, sn) = (1.2, 0.5, 0.7, 1.3, 0.4, 2.0);
        let pass = riccati_backward(
            &scalar(a),
            &scalar(b),
            &[scalar(q0), scalar(q1)],
            &scalar(r),
            &scalar(sn),
        )
        .unwrap();
        let k1 = b * sn * a / (b * sn * b + r);
        let s1 = a * sn * (a - b * k1) + q1;
        let k0 = b * s1 * a / (b * s1 * b + r);
        let s0 = a * s1 * (a - b * k0) + q0;
        assert_relative_eq!(pass.gains[1][(0, 0)], k1, max_relative = 1e-14);
        assert_relative_eq!(pass.s[1][(0, 0)], s1, max_relative = 1e-14);
        assert_relative_eq!(pass.gains[0][(0, 0)], k0, max_relative = 1e-14);
        assert_relative_eq!(pass.s[0][(0, 0)], s0, max_relative = 1e-14);
    }

    #[test]
    fn long_backward_pass_converges_to_dare() {
        let p = RcParams::reference();
        let sys = discretize(&p, 1.0).unwrap();
        let q = DMatrix::from_diagonal(&nalgebra::dvector![1e-4, 1e-2]);
        let r = scalar(0.1);
        let dare = solve_dare_control(&sys.a, &sys.b, &q, &r).unwrap();
        let pass = riccati_backward(
            &sys.a,
            &sys.b,
            &vec![q.clone(); 5000],
            &r,
            &DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert!((&pass.s[0] - &dare.s).amax() <= 1e-8 * dare.s.amax());
        assert!((&pass.gains[0] - &dare.gain).amax() <= 1e-8 * dare.gain.amax());
        for s in &pass.s {
            assert!(linalg::is_psd(s, 1e-10));
        }
    }
}
