//! Exact rational arithmetic for the induced transform.
//!
//! For rational `t` and rational coefficients, `h_M(t)` is itself rational.
//! These routines evaluate it without rounding so that identities whose
//! residuals fall below double precision can still be checked. `ln t` is
//! irrational; [`ln_bracket`] returns a rational interval around it.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

use crate::error::{Error, Result};

pub fn rational(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// `H_m` as a fraction.
pub fn harmonic(m: usize) -> BigRational {
    (1..=m as i64)
        .map(|r| rational(1, r))
        .fold(BigRational::zero(), |a, b| a + b)
}

/// `phi_s = M / (s + 1)`, the mean-of-correct coefficients.
pub fn mean_of_correct_phi(m: usize) -> Vec<BigRational> {
    (0..m).map(|s| rational(m as i64, s as i64 + 1)).collect()
}

/// Survival row `P[Bin(m, t) > s]`, `s = 0..m`, exactly.
pub fn survival_row(m: usize, t: &BigRational) -> Vec<BigRational> {
    // Work on the common denominator q^m: term_j = C(m,j) p^j (q-p)^(m-j).
    let p = t.numer().clone();
    let q = t.denom().clone();
    let r = &q - &p;
    let mut terms = Vec::with_capacity(m + 1);
    let mut coef = BigInt::one();
    for j in 0..=m {
        terms.push(&coef * num_traits::pow(p.clone(), j) * num_traits::pow(r.clone(), m - j));
        coef = coef * BigInt::from(m - j) / BigInt::from(j + 1);
    }
    let denom = num_traits::pow(q, m);
    let mut out = vec![BigRational::zero(); m];
    let mut acc = BigInt::zero();
    for s in (0..m).rev() {
        acc += &terms[s + 1];
        out[s] = BigRational::new(acc.clone(), denom.clone());
    }
    out
}

/// `h_M(t) = (1/M) sum_s phi_s I_t(s+1, M-s)` exactly.
pub fn eval_h(phi: &[BigRational], t: &BigRational) -> Result<BigRational> {
    if phi.is_empty() {
        return Err(Error::Config(
            "exact eval_h: empty coefficient vector".into(),
        ));
    }
    if t.is_negative() || *t > BigRational::one() {
        return Err(Error::Domain(format!(
            "exact eval_h: t = {t} outside [0, 1]"
        )));
    }
    let surv = survival_row(phi.len(), t);
    let sum = phi
        .iter()
        .zip(&surv)
        .fold(BigRational::zero(), |acc, (p, s)| acc + p * s);
    Ok(sum / BigRational::from_integer(BigInt::from(phi.len())))
}

/// Rational `[lo, hi]` containing `ln t`, of width at most `2^-bits`.
///
/// Uses `ln t = 2 artanh(z)`, `z = (t-1)/(t+1)`, with the tail bound
/// `|z|^(2N+1) / ((2N+1)(1 - z^2))` after `N` terms.
pub fn ln_bracket(t: &BigRational, bits: u32) -> Result<(BigRational, BigRational)> {
    if !t.is_positive() {
        return Err(Error::Domain(format!(
            "ln_bracket: t = {t} must be positive"
        )));
    }
    let one = BigRational::one();
    let z = (t - &one) / (t + &one);
    let z2 = &z * &z;
    let tol = BigRational::new(
        BigInt::one(),
        num_traits::pow(BigInt::from(2), bits as usize),
    );
    let mut sum = BigRational::zero();
    let mut power = z.clone();
    let mut k: i64 = 0;
    loop {
        sum += &power / rational(2 * k + 1, 1);
        power = &power * &z2;
        k += 1;
        // `power` is now z^(2k+1), the first omitted term's numerator.
        let tail = power.abs() / (rational(2 * k + 1, 1) * (&one - &z2));
        if &tail * rational(4, 1) < tol || z.is_zero() {
            let two = rational(2, 1);
            let (a, b) = (&two * (&sum - &tail), &two * (&sum + &tail));
            return Ok((a.clone().min(b.clone()), a.max(b)));
        }
    }
}

/// Nearest `f64` to a rational.
pub fn to_f64(x: &BigRational) -> f64 {
    use num_traits::ToPrimitive;
    x.to_f64().unwrap_or(f64::NAN)
}
