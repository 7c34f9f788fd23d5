//! Exact propagation of `s_{k+1} = (A − BK̄)⁻ᵀ (s_k − Q r_k)`.
//!
//! Every f64 is a dyadic rational, so the recursion can be carried out
//! without rounding over the very same f64 data the backward pass uses
//! (`A − BK̄`, `fl(Q r_k)`, `fl(S_N r_N)`). Values are rounded to f64 only when
//! read out.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::{Float, Signed, ToPrimitive, Zero};

use super::SteadyTrackingPlan;
use crate::error::{Error, Result};

/// `x = mant · 2^exp` exactly.
fn dyadic(x: f64) -> (BigInt, i64) {
    let (mant, exp, sign) = x.integer_decode();
    if mant == 0 {
        return (BigInt::zero(), 0);
    }
    let tz = mant.trailing_zeros();
    (
        BigInt::from(mant >> tz) * i64::from(sign),
        i64::from(exp) + i64::from(tz),
    )
}

/// Integers `v_i` and a shared exponent with `x_i = v_i · 2^exp`.
fn dyadic_common(xs: &[f64]) -> (Vec<BigInt>, i64) {
    let parts: Vec<_> = xs.iter().map(|&x| dyadic(x)).collect();
    let exp = parts
        .iter()
        .filter(|(m, _)| !m.is_zero())
        .map(|&(_, e)| e)
        .min()
        .unwrap_or(0);
    let ints = parts
        .into_iter()
        .map(|(m, e)| {
            if m.is_zero() {
                m
            } else {
                m << (e - exp) as usize
            }
        })
        .collect();
    (ints, exp)
}

fn minor(m: &[Vec<BigInt>], row: usize, col: usize) -> Vec<Vec<BigInt>> {
    m.iter()
        .enumerate()
        .filter(|&(i, _)| i != row)
        .map(|(_, r)| {
            r.iter()
                .enumerate()
                .filter(|&(j, _)| j != col)
                .map(|(_, v)| v.clone())
                .collect()
        })
        .collect()
}

fn det(m: &[Vec<BigInt>]) -> BigInt {
    match m.len() {
        0 => BigInt::from(1),
        1 => m[0][0].clone(),
        2 => &m[0][0] * &m[1][1] - &m[0][1] * &m[1][0],
        n => (0..n)
            .map(|j| {
                let term = &m[0][j] * det(&minor(m, 0, j));
                if j % 2 == 0 {
                    term
                } else {
                    -term
                }
            })
            .sum(),
    }
}

fn adjugate(m: &[Vec<BigInt>]) -> Vec<Vec<BigInt>> {
    let n = m.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let c = det(&minor(m, j, i));
                    if (i + j) % 2 == 0 {
                        c
                    } else {
                        -c
                    }
                })
                .collect()
        })
        .collect()
}

fn mat_vec(m: &[Vec<BigInt>], v: &[BigInt]) -> Vec<BigInt> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn shl(x: &BigInt, by: i64) -> BigInt {
    debug_assert!(by >= 0);
    x << by as usize
}

/// Leading 64 bits as f64 plus the dropped binary exponent.
fn top_bits(x: &BigInt) -> (f64, i64) {
    let bits = x.bits() as i64;
    if bits <= 64 {
        (x.to_f64().unwrap_or(0.0), 0)
    } else {
        let drop = bits - 64;
        ((x >> drop as usize).to_f64().unwrap_or(0.0), drop)
    }
}

fn ldexp(mut x: f64, mut e: i64) -> f64 {
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
    }
    x * 2f64.powi(e as i32)
}

/// Forward propagator holding `s_k` exactly as `num / den · 2^exp`.
#[derive(Debug, Clone)]
pub struct ExactSPropagator {
    q: DMatrix<f64>,
    /// `adj((A − BK̄)ᵀ)` in integer form.
    adj_t: Vec<Vec<BigInt>>,
    det: BigInt,
    m_exp: i64,
    num: Vec<BigInt>,
    den: BigInt,
    exp: i64,
    k: usize,
}

impl ExactSPropagator {
    /// Computes `s_0` by an exact backward pass over the plan's data and
    /// positions the propagator at `k = 0`.
    pub fn new(plan: &SteadyTrackingPlan, reference: &[DVector<f64>]) -> Result<Self> {
        let n = plan.closed_loop.nrows();
        let horizon = plan.horizon();
        if reference.len() != horizon + 1 {
            return Err(Error::dim(format!(
                "reference has {} points, plan expects {}",
                reference.len(),
                horizon + 1
            )));
        }
        let mt = plan.closed_loop.transpose();
        let (flat, m_exp) = dyadic_common(mt.as_slice());
        // nalgebra storage is column-major.
        let mt_int: Vec<Vec<BigInt>> = (0..n)
            .map(|i| (0..n).map(|j| flat[i + j * n].clone()).collect())
            .collect();
        let det_mt = det(&mt_int);
        if det_mt.is_zero() {
            return Err(Error::Singular("A − B K̄ is singular".into()));
        }

        let (mut num, mut exp) = dyadic_common(plan.s[horizon].as_slice());
        for k in (0..horizon).rev() {
            let g = &plan.q * &reference[k];
            let (g_int, g_exp) = dyadic_common(g.as_slice());
            let prod = mat_vec(&mt_int, &num);
            let prod_exp = exp + m_exp;
            let c = prod_exp.min(g_exp);
            num = prod
                .iter()
                .zip(&g_int)
                .map(|(p, gi)| shl(p, prod_exp - c) + shl(gi, g_exp - c))
                .collect();
            exp = c;
            strip_twos(&mut num, None, &mut exp);
        }

        Ok(Self {
            q: plan.q.clone(),
            adj_t: adjugate(&mt_int),
            det: det_mt,
            m_exp,
            num,
            den: BigInt::from(1),
            exp,
            k: 0,
        })
    }

    pub fn step(&self) -> usize {
        self.k
    }

    /// Current `s_k` rounded to f64.
    pub fn value(&self) -> DVector<f64> {
        let (df, de) = top_bits(&self.den);
        DVector::from_iterator(
            self.num.len(),
            self.num.iter().map(|x| {
                if x.is_zero() {
                    return 0.0;
                }
                let (nf, ne) = top_bits(x);
                ldexp(nf / df, ne - de + self.exp)
            }),
        )
    }

    /// Advance to `s_{k+1}` using `r_k` and return it rounded to f64.
    pub fn advance(&mut self, r_k: &DVector<f64>) -> DVector<f64> {
        let g = &self.q * r_k;
        let (g_int, g_exp) = dyadic_common(g.as_slice());
        let c = self.exp.min(g_exp);
        let diff: Vec<BigInt> = self
            .num
            .iter()
            .zip(&g_int)
            .map(|(s, gi)| shl(s, self.exp - c) - shl(&(gi * &self.den), g_exp - c))
            .collect();
        self.num = mat_vec(&self.adj_t, &diff);
        self.den = &self.den * &self.det;
        self.exp = c - self.m_exp;
        if self.den.is_negative() {
            self.den = -&self.den;
            for v in &mut self.num {
                *v = -&*v;
            }
        }
        strip_twos(&mut self.num, Some(&mut self.den), &mut self.exp);
        self.k += 1;
        self.value()
    }
}

fn strip_twos(num: &mut [BigInt], den: Option<&mut BigInt>, exp: &mut i64) {
    if let Some(tz) = num.iter().filter_map(|v| v.trailing_zeros()).min() {
        if tz > 0 {
            for v in num.iter_mut() {
                *v = &*v >> tz as usize;
            }
            *exp += tz as i64;
        }
    }
    if let Some(den) = den {
        if let Some(tz) = den.trailing_zeros().filter(|&t| t > 0) {
            *den = &*den >> tz as usize;
            *exp -= tz as i64;
        }
    }
}
