//! The transform `h_M` induced by an advantage schedule.
//!
//! With `phi_s = b_s - a_s`,
//!
//! ```text
//! h_M(t) = (1/M) sum_s phi_s I_t(s+1, M-s)
//! h_M'(t) = kappa(t) = sum_s phi_s C(M-1, s) t^s (1-t)^(M-1-s)
//! ```
//!
//! so `kappa` is a Bernstein polynomial with coefficients `phi` and
//! `h_M(0) = 0`, `h_M(1) = mean(phi)`.

use std::io::Write;

use crate::error::{check_prob, Error, Result};
use crate::schedule::AdvantageSchedule;
use crate::specfun::{self, CompensatedSum, RefTransform};
use crate::{fmt17, par};

/// A monotone rescaling `h` of the pass probability together with `h'`.
pub trait MonotoneTransform: Sync {
    fn name(&self) -> String;
    /// `h(t)`; may be infinite at a pole.
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;
}

impl MonotoneTransform for RefTransform {
    fn name(&self) -> String {
        RefTransform::name(*self).to_string()
    }

    fn value(&self, t: f64) -> f64 {
        RefTransform::value(*self, t)
    }

    fn derivative(&self, t: f64) -> f64 {
        RefTransform::derivative(*self, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InducedTransform {
    label: String,
    eps: Option<f64>,
    phi: Vec<f64>,
}

impl From<&AdvantageSchedule> for InducedTransform {
    fn from(s: &AdvantageSchedule) -> Self {
        InducedTransform::induced(s)
    }
}

impl InducedTransform {
    /// `phi[s] = b_s - a_s`.
    pub fn induced(sched: &AdvantageSchedule) -> Self {
        Self {
            label: sched.label().to_string(),
            eps: sched.eps(),
            phi: sched.phi(),
        }
    }

    pub fn from_phi(label: impl Into<String>, phi: Vec<f64>) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::Config(
                "induced transform needs at least one coefficient".into(),
            ));
        }
        Ok(Self {
            label: label.into(),
            eps: None,
            phi,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn group_size(&self) -> usize {
        self.phi.len()
    }

    pub fn eps(&self) -> Option<f64> {
        self.eps
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    fn m(&self) -> u64 {
        self.phi.len() as u64
    }

    /// `h_M(t)` by direct summation: one incomplete beta per coefficient.
    pub fn eval_h(&self, t: f64) -> Result<f64> {
        check_prob(t, "eval_h")?;
        let m = self.m();
        let mut acc = CompensatedSum::new();
        for (s, phi) in self.phi.iter().enumerate() {
            let s = s as u64;
            acc.add(phi * specfun::reg_inc_beta_int(s + 1, m - s, t)?);
        }
        Ok(acc.value() / m as f64)
    }

    /// `h_M(t)` in one pass over the survival row of `Bin(M, t)`.
    pub fn eval_h_single_pass(&self, t: f64) -> Result<f64> {
        check_prob(t, "eval_h")?;
        Ok(self.h_unchecked(t))
    }

    fn h_unchecked(&self, t: f64) -> f64 {
        let surv = specfun::binom_survival_row(self.m(), t);
        let acc: CompensatedSum = self.phi.iter().zip(&surv).map(|(p, s)| p * s).collect();
        acc.value() / self.m() as f64
    }

    /// `kappa(t) = h_M'(t)`.
    pub fn eval_kappa(&self, t: f64) -> Result<f64> {
        check_prob(t, "eval_kappa")?;
        Ok(self.kappa_unchecked(t))
    }

    fn kappa_unchecked(&self, t: f64) -> f64 {
        let pmf = specfun::binom_pmf_row(self.m() - 1, t);
        let acc: CompensatedSum = self.phi.iter().zip(&pmf).map(|(p, w)| p * w).collect();
        acc.value()
    }

    /// `h_M(1) = (1/M) sum_s phi_s`.
    pub fn h_at_one(&self) -> f64 {
        let acc: CompensatedSum = self.phi.iter().copied().collect();
        acc.value() / self.m() as f64
    }

    /// `h_M(t) / h_M(1)`.
    pub fn normalized_h(&self, t: f64) -> Result<f64> {
        let norm = self.normalizer()?;
        Ok(self.eval_h(t)? / norm)
    }

    fn normalizer(&self) -> Result<f64> {
        let norm = self.h_at_one();
        if norm == 0.0 || !norm.is_finite() {
            Err(Error::Degenerate(self.label.clone()))
        } else {
            Ok(norm)
        }
    }

    /// Rows `(t, h, kappa, h / h(1))` over `grid`, in grid order.
    pub fn sweep(&self, grid: &[f64]) -> Result<Vec<SweepRow>> {
        self.sweep_prepare(grid)?;
        let norm = self.normalizer()?;
        Ok(par::map_slice(grid, |&t| self.row(t, norm)))
    }

    /// Single-threaded [`sweep`](Self::sweep).
    pub fn sweep_seq(&self, grid: &[f64]) -> Result<Vec<SweepRow>> {
        self.sweep_prepare(grid)?;
        let norm = self.normalizer()?;
        Ok(grid.iter().map(|&t| self.row(t, norm)).collect())
    }

    fn sweep_prepare(&self, grid: &[f64]) -> Result<()> {
        grid.iter().try_for_each(|&t| check_prob(t, "sweep"))
    }

    fn row(&self, t: f64, norm: f64) -> SweepRow {
        let h = self.h_unchecked(t);
        SweepRow {
            t,
            h,
            kappa: self.kappa_unchecked(t),
            h_normalized: h / norm,
        }
    }
}

impl MonotoneTransform for InducedTransform {
    fn name(&self) -> String {
        format!("{}(M={})", self.label, self.phi.len())
    }

    fn value(&self, t: f64) -> f64 {
        self.h_unchecked(t.clamp(0.0, 1.0))
    }

    fn derivative(&self, t: f64) -> f64 {
        self.kappa_unchecked(t.clamp(0.0, 1.0))
    }
}

/// One row of a transform sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub t: f64,
    pub h: f64,
    pub kappa: f64,
    pub h_normalized: f64,
}

pub const SWEEP_HEADER: &str = "label,M,eps,t,h,kappa,h_normalized";

/// Write sweep rows as CSV under [`SWEEP_HEADER`] (header included when `header`).
pub fn write_sweep_csv<W: Write>(
    out: &mut W,
    tr: &InducedTransform,
    rows: &[SweepRow],
    header: bool,
) -> Result<()> {
    if header {
        writeln!(out, "{SWEEP_HEADER}")?;
    }
    let eps = tr.eps().map(fmt17).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            tr.label(),
            tr.group_size(),
            eps,
            fmt17(r.t),
            fmt17(r.h),
            fmt17(r.kappa),
            fmt17(r.h_normalized)
        )?;
    }
    Ok(())
}

/// `H_M - sum_{r=1}^M (1-t)^r / r`: the finite form of the transform
/// induced by averaging over correct samples.
pub fn rejection_closed_form(m: usize, t: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::Domain(format!(
            "rejection_closed_form: t = {t} must lie in (0, 1]"
        )));
    }
    let hm = specfun::harmonic(m as u64)?;
    let u = 1.0 - t;
    let mut pow = 1.0;
    let mut acc = CompensatedSum::new();
    for r in 1..=m {
        pow *= u;
        acc.add(pow / r as f64);
    }
    Ok(hm - acc.value())
}

/// `n` uniformly spaced points on `[0, 1]`, endpoints included.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

pub const DEFAULT_GRID_POINTS: usize = 101;
