//! Scalar kernels: log-binomial, binomial pmf, integer-shape regularized
//! incomplete beta, harmonic numbers and the reference transforms.
//!
//! The incomplete beta is only ever needed at integer shapes `(s+1, M-s)`,
//! where it equals the binomial survival function
//! `P[Bin(M, t) > s]`. It is evaluated as that finite sum, never by a
//! continued fraction.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_prob, Error, Result};

/// Rows at or below this size use direct products; larger rows go through
/// log space.
const DIRECT_ROW_MAX: u64 = 256;

/// Smallest power we trust in the direct path before switching to logs.
const UNDERFLOW_GUARD: f64 = 1e-290;

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// `ln C(n, k)`, accumulated as `sum_{i=1}^{k'} ln((n-k'+i)/i)` with
/// `k' = min(k, n-k)`, so nothing overflows and the relative error stays
/// near machine precision for moderate `n`.
pub fn log_binom(n: u64, k: u64) -> Result<f64> {
    if k > n {
        return Err(Error::Domain(format!("log_binom: k = {k} > n = {n}")));
    }
    let k = k.min(n - k);
    let base = (n - k) as f64;
    let acc: CompensatedSum = (1..=k)
        .map(|i| {
            let i = i as f64;
            ((base + i) / i).ln()
        })
        .collect();
    Ok(acc.value())
}

/// Binomial pmf `C(n,k) t^k (1-t)^(n-k)` with `0^0 = 1`.
pub fn binom_pmf(n: u64, k: u64, t: f64) -> Result<f64> {
    if k > n {
        return Err(Error::Domain(format!("binom_pmf: k = {k} > n = {n}")));
    }
    check_prob(t, "binom_pmf")?;
    Ok(binom_pmf_row(n, t)[k as usize])
}

/// The full row `[pmf(n, 0, t), ..., pmf(n, n, t)]`.
///
/// `t` must lie in `[0, 1]`; callers validate.
pub fn binom_pmf_row(n: u64, t: f64) -> Vec<f64> {
    let len = n as usize + 1;
    if t == 0.0 {
        let mut row = vec![0.0; len];
        row[0] = 1.0;
        return row;
    }
    if t == 1.0 {
        let mut row = vec![0.0; len];
        row[len - 1] = 1.0;
        return row;
    }
    let u = 1.0 - t;
    let direct_ok = n <= DIRECT_ROW_MAX && {
        let lo = t.min(u);
        // Every power t^k u^(n-k) stays above the guard iff the worst one does.
        lo.powi(n as i32) > UNDERFLOW_GUARD
    };
    if direct_ok {
        direct_row(n, t, u)
    } else {
        log_row(n, t)
    }
}

fn direct_row(n: u64, t: f64, u: f64) -> Vec<f64> {
    let len = n as usize + 1;
    let mut pow_t = vec![1.0; len];
    let mut pow_u = vec![1.0; len];
    for k in 1..len {
        pow_t[k] = pow_t[k - 1] * t;
        pow_u[k] = pow_u[k - 1] * u;
    }
    let mut coef = 1.0;
    let mut row = Vec::with_capacity(len);
    for k in 0..len {
        row.push(coef * pow_t[k] * pow_u[len - 1 - k]);
        coef = coef * (n - k as u64) as f64 / (k as f64 + 1.0);
    }
    row
}

fn log_row(n: u64, t: f64) -> Vec<f64> {
    let ln_t = t.ln();
    let ln_u = (-t).ln_1p();
    let len = n as usize + 1;
    let mut row = Vec::with_capacity(len);
    let mut lc = CompensatedSum::new();
    for k in 0..len {
        let kf = k as f64;
        let x = lc.value() + kf * ln_t + (n as f64 - kf) * ln_u;
        row.push(x.exp());
        if k + 1 < len {
            lc.add(((n as f64 - kf) / (kf + 1.0)).ln());
        }
    }
    row
}

/// Survival row of `Bin(n, t)`: entry `s` is `P[X > s] = I_t(s+1, n-s)`
/// for `s = 0..n`. Length `n`.
pub fn binom_survival_row(n: u64, t: f64) -> Vec<f64> {
    let len = n as usize;
    if t == 0.0 {
        return vec![0.0; len];
    }
    if t == 1.0 {
        return vec![1.0; len];
    }
    let pmf = binom_pmf_row(n, t);
    let mut out = vec![0.0; len];
    let mut acc = CompensatedSum::new();
    for s in (0..len).rev() {
        acc.add(pmf[s + 1]);
        out[s] = acc.value().min(1.0);
    }
    out
}

/// Regularized incomplete beta `I_t(a, b)` at positive integer shapes,
/// as the survival sum `sum_{j=a}^{a+b-1} C(a+b-1, j) t^j (1-t)^(a+b-1-j)`.
pub fn reg_inc_beta_int(a: u64, b: u64, t: f64) -> Result<f64> {
    if a == 0 || b == 0 {
        return Err(Error::Domain(format!(
            "reg_inc_beta_int: shapes must be positive, got ({a}, {b})"
        )));
    }
    check_prob(t, "reg_inc_beta_int")?;
    if t == 0.0 {
        return Ok(0.0);
    }
    if t == 1.0 {
        return Ok(1.0);
    }
    let m = a + b - 1;
    let row = binom_pmf_row(m, t);
    let acc: CompensatedSum = row[a as usize..].iter().rev().copied().collect();
    Ok(acc.value().clamp(0.0, 1.0))
}

/// `H_m = sum_{r=1}^m 1/r`, summed smallest term first.
pub fn harmonic(m: u64) -> Result<f64> {
    if m == 0 {
        return Err(Error::Domain("harmonic: M must be at least 1".into()));
    }
    Ok((1..=m).rev().map(|r| 1.0 / r as f64).sum())
}

/// Closed-form monotone transforms used as comparison targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefTransform {
    Identity,
    Log,
    /// `2 asin(sqrt t)`; divide by `pi` for the version normalized at 1.
    TwoArcsinSqrt,
    Logit,
}

impl RefTransform {
    pub const ALL: [RefTransform; 4] = [
        RefTransform::Identity,
        RefTransform::Log,
        RefTransform::TwoArcsinSqrt,
        RefTransform::Logit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RefTransform::Identity => "identity",
            RefTransform::Log => "log",
            RefTransform::TwoArcsinSqrt => "two_arcsin_sqrt",
            RefTransform::Logit => "logit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "identity" | "id" => Ok(RefTransform::Identity),
            "log" => Ok(RefTransform::Log),
            "arcsin" | "two_arcsin_sqrt" => Ok(RefTransform::TwoArcsinSqrt),
            "logit" | "log_odds" => Ok(RefTransform::Logit),
            other => Err(Error::Parse(format!(
                "unknown reference transform `{other}`"
            ))),
        }
    }

    /// `h(t)`; may be infinite at the poles `t = 0` (log, logit) and `t = 1` (logit).
    pub fn value(self, t: f64) -> f64 {
        match self {
            RefTransform::Identity => t,
            RefTransform::Log => t.ln(),
            RefTransform::TwoArcsinSqrt => 2.0 * t.sqrt().asin(),
            RefTransform::Logit => (t / (1.0 - t)).ln(),
        }
    }

    /// `h'(t)`.
    pub fn derivative(self, t: f64) -> f64 {
        match self {
            RefTransform::Identity => 1.0,
            RefTransform::Log => 1.0 / t,
            RefTransform::TwoArcsinSqrt => 1.0 / (t * (1.0 - t)).sqrt(),
            RefTransform::Logit => 1.0 / (t * (1.0 - t)),
        }
    }

    /// `h(t) / h(1)` where that is finite (identity and arcsine only).
    pub fn normalized(self, t: f64) -> Option<f64> {
        match self {
            RefTransform::Identity => Some(t),
            RefTransform::TwoArcsinSqrt => Some(self.value(t) / PI),
            RefTransform::Log | RefTransform::Logit => None,
        }
    }
}
