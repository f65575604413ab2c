//! Advantage weight tables.
//!
//! Every schedule here weights sample `i` of a group of `M` by
//! `Z_i = (1 - R_i) a[S_i] + R_i b[S_i]`, where `R_i` is the binary reward
//! and `S_i` the number of *other* correct samples in the group.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt17;

/// Which variance estimator the group normalization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceConvention {
    /// Divide by `M`: `Var = q (1 - q)`.
    #[default]
    Population,
    /// Divide by `M - 1` (falls back to population when `M = 1`).
    Sample,
}

impl VarianceConvention {
    fn variance(self, q: f64, m: usize) -> f64 {
        let pop = q * (1.0 - q);
        match self {
            VarianceConvention::Population => pop,
            VarianceConvention::Sample if m > 1 => pop * m as f64 / (m as f64 - 1.0),
            VarianceConvention::Sample => pop,
        }
    }
}

/// How a Bernstein coefficient `phi_s` is split into `(a_s, b_s)`.
///
/// Only `b_s - a_s` enters the induced objective; the split changes the
/// estimator's variance, not its expectation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BernsteinSplit {
    /// `(0, phi_s)`.
    #[default]
    Zero,
    /// `(-phi_s q, phi_s (1 - q))` for a fixed centering level `q`.
    Centered { qbar: f64 },
}

/// Immutable `(a_s, b_s)` table for a group of size `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSchedule {
    label: String,
    m: usize,
    eps: Option<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
}

fn check_m(m: usize) -> Result<()> {
    if m == 0 {
        Err(Error::Config("group size M must be at least 1".into()))
    } else {
        Ok(())
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "eps must be positive and finite, got {eps}"
        )))
    }
}

impl AdvantageSchedule {
    /// Build from explicit tables.
    pub fn new(
        label: impl Into<String>,
        a: Vec<f64>,
        b: Vec<f64>,
        eps: Option<f64>,
    ) -> Result<Self> {
        let label = label.into();
        if a.len() != b.len() {
            return Err(Error::Config(format!(
                "schedule `{label}`: a has {} rows, b has {}",
                a.len(),
                b.len()
            )));
        }
        check_m(a.len())?;
        if let Some(s) = a.iter().chain(&b).position(|x| !x.is_finite()) {
            return Err(Error::Config(format!(
                "schedule `{label}`: non-finite entry at flat index {s}"
            )));
        }
        if label.contains([',', '\n']) {
            return Err(Error::Config(format!(
                "schedule label `{label}` may not contain ',' or newlines"
            )));
        }
        Ok(Self {
            m: a.len(),
            label,
            eps,
            a,
            b,
        })
    }

    /// REINFORCE with `Z_i = R_i`.
    pub fn vanilla(m: usize) -> Result<Self> {
        check_m(m)?;
        Self::new("vanilla", vec![0.0; m], vec![1.0; m], None)
    }

    /// `Z_i = R_i M / (S_i + 1)`: averages the score over the correct samples.
    pub fn mean_of_correct(m: usize) -> Result<Self> {
        check_m(m)?;
        let b = (0..m).map(|s| m as f64 / (s as f64 + 1.0)).collect();
        Self::new("mean_of_correct", vec![0.0; m], b, None)
    }

    /// Group-normalized rewards `(R_i - mean) / (std + eps)`, population variance.
    pub fn grpo(m: usize, eps: f64) -> Result<Self> {
        Self::grpo_with(m, eps, VarianceConvention::Population)
    }

    pub fn grpo_with(m: usize, eps: f64, conv: VarianceConvention) -> Result<Self> {
        Self::normalized_family("grpo", m, eps, |q| conv.variance(q, m).sqrt())
    }

    /// GRPO with the variance (not the standard deviation) in the denominator.
    pub fn grpo_variance(m: usize, eps: f64) -> Result<Self> {
        Self::grpo_variance_with(m, eps, VarianceConvention::Population)
    }

    pub fn grpo_variance_with(m: usize, eps: f64, conv: VarianceConvention) -> Result<Self> {
        Self::normalized_family("grpo_variance", m, eps, |q| conv.variance(q, m))
    }

    fn normalized_family(
        label: &str,
        m: usize,
        eps: f64,
        scale: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        check_m(m)?;
        check_eps(eps)?;
        let q = |s: usize| s as f64 / m as f64;
        let a = (0..m).map(|s| -q(s) / (scale(q(s)) + eps)).collect();
        let b = (0..m)
            .map(|s| (1.0 - q(s + 1)) / (scale(q(s + 1)) + eps))
            .collect();
        Self::new(label, a, b, Some(eps))
    }

    /// Node-rule fit: `b_s - a_s = h'(s / (M - 1))`, node `1/2` when `M = 1`.
    pub fn bernstein_fit(m: usize, hprime: impl Fn(f64) -> f64) -> Result<Self> {
        Self::bernstein_fit_split(m, hprime, BernsteinSplit::Zero)
    }

    pub fn bernstein_fit_split(
        m: usize,
        hprime: impl Fn(f64) -> f64,
        split: BernsteinSplit,
    ) -> Result<Self> {
        check_m(m)?;
        let phi = (0..m)
            .map(|s| {
                let node = bernstein_node(s, m);
                let value = hprime(node);
                if value.is_finite() {
                    Ok(value)
                } else {
                    Err(Error::NonFiniteNode { node, value })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_phi("bernstein", phi, split)
    }

    /// Exact fit for a polynomial `h'(t) = sum_k c[k] t^k` of degree at most
    /// `M - 1`: the monomials are converted to the degree-`M-1` Bernstein
    /// basis, so the induced `h_M` equals `h` up to a constant.
    pub fn bernstein_polynomial(m: usize, hprime_coeffs: &[f64]) -> Result<Self> {
        check_m(m)?;
        let degree = hprime_coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0);
        if degree > m - 1 {
            return Err(Error::Config(format!(
                "h' has degree {degree}, exceeding the basis degree M - 1 = {}",
                m - 1
            )));
        }
        let n = m - 1;
        let phi = (0..m)
            .map(|s| {
                // t^k = sum_s [C(s,k) / C(n,k)] B_{s,n}(t)
                hprime_coeffs[..=degree]
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * binom_ratio(s, k, n))
                    .sum()
            })
            .collect();
        Self::from_phi("bernstein", phi, BernsteinSplit::Zero)
    }

    fn from_phi(label: &str, phi: Vec<f64>, split: BernsteinSplit) -> Result<Self> {
        let (a, b) = match split {
            BernsteinSplit::Zero => (vec![0.0; phi.len()], phi),
            BernsteinSplit::Centered { qbar } => {
                if !(0.0..=1.0).contains(&qbar) {
                    return Err(Error::Config(format!(
                        "centering level {qbar} outside [0, 1]"
                    )));
                }
                (
                    phi.iter().map(|p| -p * qbar).collect(),
                    phi.iter().map(|p| p * (1.0 - qbar)).collect(),
                )
            }
        };
        Self::new(label, a, b, None)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn group_size(&self) -> usize {
        self.m
    }

    pub fn eps(&self) -> Option<f64> {
        self.eps
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// `phi_s = b_s - a_s`.
    pub fn phi(&self) -> Vec<f64> {
        self.b.iter().zip(&self.a).map(|(b, a)| b - a).collect()
    }

    /// `Z` for a sample with reward `correct` and leave-one-out total `others_correct`.
    pub fn advantage(&self, correct: bool, others_correct: usize) -> Result<f64> {
        if others_correct >= self.m {
            return Err(Error::Index {
                index: others_correct,
                len: self.m,
            });
        }
        Ok(if correct {
            self.b[others_correct]
        } else {
            self.a[others_correct]
        })
    }

    /// Plain-text table: `label,<l>` / `M,<m>` / `eps,<e or empty>` / `s,a,b` / rows.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "label,{}\nM,{}\neps,{}\ns,a,b\n",
            self.label,
            self.m,
            self.eps.map(fmt17).unwrap_or_default()
        );
        for s in 0..self.m {
            out.push_str(&format!("{s},{},{}\n", fmt17(self.a[s]), fmt17(self.b[s])));
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut field = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse(format!("schedule table: missing `{key}` line")))?;
            let (k, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("schedule table: malformed line `{line}`")))?;
            if k.trim() != key {
                return Err(Error::Parse(format!(
                    "schedule table: expected `{key}`, found `{k}`"
                )));
            }
            Ok(v.trim().to_string())
        };
        let label = field("label")?;
        let m: usize = field("M")?
            .parse()
            .map_err(|e| Error::Parse(format!("schedule table: bad M: {e}")))?;
        let eps_text = field("eps")?;
        let eps = if eps_text.is_empty() {
            None
        } else {
            Some(parse_f64(&eps_text)?)
        };
        let header = field("s")?;
        if header != "a,b" {
            return Err(Error::Parse(format!(
                "schedule table: bad header `s,{header}`"
            )));
        }
        let mut a = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        for (expect, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!(
                    "schedule table: row `{line}` needs 3 columns"
                )));
            }
            let s: usize = cols[0]
                .parse()
                .map_err(|e| Error::Parse(format!("schedule table: bad row index: {e}")))?;
            if s != expect {
                return Err(Error::Parse(format!(
                    "schedule table: row {s} out of order"
                )));
            }
            a.push(parse_f64(cols[1])?);
            b.push(parse_f64(cols[2])?);
        }
        if a.len() != m {
            return Err(Error::Parse(format!(
                "schedule table: M = {m} but {} rows",
                a.len()
            )));
        }
        Self::new(label, a, b, eps)
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse()
        .map_err(|e| Error::Parse(format!("bad number `{s}`: {e}")))
}

/// Node `s / (M - 1)`, or `1/2` for a single-row schedule.
pub fn bernstein_node(s: usize, m: usize) -> f64 {
    if m == 1 {
        0.5
    } else {
        s as f64 / (m - 1) as f64
    }
}

/// `C(s, k) / C(n, k)` as a product of ratios; zero when `k > s`.
fn binom_ratio(s: usize, k: usize, n: usize) -> f64 {
    if k > s {
        return 0.0;
    }
    (0..k).map(|i| (s - i) as f64 / (n - i) as f64).product()
}
