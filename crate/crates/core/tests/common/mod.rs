//! Independent oracles shared by the integration tests: dense QPs over the
//! stacked input sequence, random system generation.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// `MᵀM + eps·I`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, eps: f64) -> DMatrix<f64> {
    let m = random_matrix(rng, n, n);
    m.transpose() * &m + DMatrix::identity(n, n) * eps
}

/// Random `A` rescaled to spectral radius in `[0.5, 1.2]`, random `B`.
pub fn random_system(rng: &mut ChaCha8Rng, n: usize, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let a = random_matrix(rng, n, n);
    let rho = a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let target = rng.random_range(0.5..1.2);
    (a * (target / rho.max(1e-3)), random_matrix(rng, n, m))
}

/// Stacked prediction: `x_k = Φ_k x_0 + Γ_k U` with `U = [u_0; …; u_{N−1}]`.
pub struct Prediction {
    pub phi: Vec<DMatrix<f64>>,
    pub gamma: Vec<DMatrix<f64>>,
}

pub fn prediction(a: &DMatrix<f64>, b: &DMatrix<f64>, horizon: usize) -> Prediction {
    let (n, m) = (a.nrows(), b.ncols());
    let mut phi = vec![DMatrix::identity(n, n)];
    let mut gamma = vec![DMatrix::zeros(n, m * horizon)];
    for k in 0..horizon {
        phi.push(a * &phi[k]);
        let mut g = a * &gamma[k];
        let mut block = g.columns_mut(k * m, m);
        block += b;
        gamma.push(g);
    }
    Prediction { phi, gamma }
}

/// Hessian and gradient of `½Σ_k (x_k − r_k)ᵀW_k(x_k − r_k) + ½Σ_k u_kᵀRu_k` in `U`.
fn quadratic(
    pred: &Prediction,
    x0: &DVector<f64>,
    weights: &[(usize, DMatrix<f64>, DVector<f64>)],
    r: &DMatrix<f64>,
    horizon: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let m = r.nrows();
    let mut h = DMatrix::zeros(m * horizon, m * horizon);
    for k in 0..horizon {
        h.view_mut((k * m, k * m), (m, m)).copy_from(r);
    }
    let mut g = DVector::zeros(m * horizon);
    for (k, w, target) in weights {
        let gk = &pred.gamma[*k];
        h += gk.transpose() * w * gk;
        g += gk.transpose() * w * (&pred.phi[*k] * x0 - target);
    }
    (h, g)
}

fn unstack(u: &DVector<f64>, m: usize) -> Vec<DVector<f64>> {
    u.as_slice()
        .chunks(m)
        .map(DVector::from_column_slice)
        .collect()
}

/// Minimizer of `½Σ_{k<N} x_kᵀQ_kx_k + ½Σ u_kᵀRu_k` subject to `x_N = x̄`,
/// from the KKT system.
pub fn fixed_terminal_qp(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q_schedule: &[DMatrix<f64>],
    r: &DMatrix<f64>,
    x0: &DVector<f64>,
    x_bar: &DVector<f64>,
) -> Vec<DVector<f64>> {
    let horizon = q_schedule.len();
    let n = a.nrows();
    let pred = prediction(a, b, horizon);
    let weights: Vec<_> = (0..horizon)
        .map(|k| (k, q_schedule[k].clone(), DVector::zeros(n)))
        .collect();
    let (h, g) = quadratic(&pred, x0, &weights, r, horizon);
    let dim = h.nrows();
    let gn = &pred.gamma[horizon];
    let mut kkt = DMatrix::zeros(dim + n, dim + n);
    kkt.view_mut((0, 0), (dim, dim)).copy_from(&h);
    kkt.view_mut((0, dim), (dim, n)).copy_from(&gn.transpose());
    kkt.view_mut((dim, 0), (n, dim)).copy_from(gn);
    let mut rhs = DVector::zeros(dim + n);
    rhs.rows_mut(0, dim).copy_from(&(-g));
    rhs.rows_mut(dim, n)
        .copy_from(&(x_bar - &pred.phi[horizon] * x0));
    let sol = kkt
        .full_piv_lu()
        .solve(&rhs)
        .expect("KKT system is nonsingular");
    unstack(&sol.rows(0, dim).into_owned(), b.ncols())
}

/// Minimizer of `½(x_N−r_N)ᵀS_N(x_N−r_N) + ½Σ_{k<N}[(x_k−r_k)ᵀQ(x_k−r_k) + u_kᵀRu_k]`.
pub fn tracking_qp(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    s_terminal: &DMatrix<f64>,
    x0: &DVector<f64>,
    reference: &[DVector<f64>],
) -> Vec<DVector<f64>> {
    let horizon = reference.len() - 1;
    let pred = prediction(a, b, horizon);
    let mut weights: Vec<_> = (0..horizon)
        .map(|k| (k, q.clone(), reference[k].clone()))
        .collect();
    weights.push((horizon, s_terminal.clone(), reference[horizon].clone()));
    let (h, g) = quadratic(&pred, x0, &weights, r, horizon);
    let u = h
        .cholesky()
        .expect("Hessian is positive definite")
        .solve(&(-g));
    unstack(&u, b.ncols())
}

/// Largest entrywise difference relative to the largest oracle entry.
pub fn relative_gap(got: &[DVector<f64>], want: &[DVector<f64>]) -> f64 {
    assert_eq!(got.len(), want.len());
    let scale = want
        .iter()
        .map(|v| v.amax())
        .fold(0.0, f64::max)
        .max(1e-300);
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).amax())
        .fold(0.0, f64::max)
        / scale
}
