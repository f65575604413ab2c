//! Schedule specs: `name:key=value,key=value`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use hm_core::{AdvantageSchedule, VarianceConvention};

/// Epsilon used by the GRPO family when the spec leaves it out.
pub const DEFAULT_EPS: f64 = 1e-4;
/// Regularizer for the singular Bernstein targets.
pub const DEFAULT_REG: f64 = 1e-3;

struct Fields<'a> {
    name: &'a str,
    map: BTreeMap<&'a str, &'a str>,
}

impl<'a> Fields<'a> {
    fn parse(spec: &'a str) -> Result<Self> {
        let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let name = name.trim();
        if name.is_empty() {
            bail!("schedule spec `{spec}` has no name");
        }
        let mut map = BTreeMap::new();
        for pair in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| anyhow!("`{pair}` in schedule spec `{spec}` is not key=value"))?;
            if map.insert(k.trim(), v.trim()).is_some() {
                bail!("key `{}` repeated in schedule spec `{spec}`", k.trim());
            }
        }
        Ok(Self { name, map })
    }

    fn allow(&self, keys: &[&str]) -> Result<()> {
        for k in self.map.keys() {
            if !keys.contains(k) {
                bail!(
                    "unknown key `{k}` for schedule `{}` (allowed: {})",
                    self.name,
                    keys.join(", ")
                );
            }
        }
        Ok(())
    }

    fn take(&self, key: &str) -> Option<&'a str> {
        self.map.get(key).copied()
    }

    fn m(&self) -> Result<usize> {
        let v = self
            .take("M")
            .ok_or_else(|| anyhow!("schedule `{}` needs M", self.name))?;
        let m: usize = v
            .parse()
            .with_context(|| format!("M = `{v}` is not a positive integer"))?;
        if m == 0 {
            bail!("M must be at least 1");
        }
        Ok(m)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .with_context(|| format!("{key} = `{v}` is not a number")),
        }
    }

    fn convention(&self) -> Result<VarianceConvention> {
        match self.take("var") {
            None | Some("population") => Ok(VarianceConvention::Population),
            Some("sample") => Ok(VarianceConvention::Sample),
            Some(other) => bail!("var = `{other}`; expected population or sample"),
        }
    }
}

/// Parse a schedule spec. Relative `path=` values resolve against `base`.
pub fn parse_schedule(spec: &str, base: &Path) -> Result<AdvantageSchedule> {
    let f = Fields::parse(spec)?;
    let sched = match f.name {
        "vanilla" => {
            f.allow(&["M"])?;
            AdvantageSchedule::vanilla(f.m()?)?
        }
        "mean_of_correct" => {
            f.allow(&["M"])?;
            AdvantageSchedule::mean_of_correct(f.m()?)?
        }
        "grpo" => {
            f.allow(&["M", "eps", "var"])?;
            AdvantageSchedule::grpo_with(f.m()?, f.f64_or("eps", DEFAULT_EPS)?, f.convention()?)?
        }
        "grpo_variance" => {
            f.allow(&["M", "eps", "var"])?;
            AdvantageSchedule::grpo_variance_with(f.m()?, f.f64_or("eps", DEFAULT_EPS)?, f.convention()?)?
        }
        "bernstein" => {
            f.allow(&["M", "target", "reg"])?;
            let target = f
                .take("target")
                .ok_or_else(|| anyhow!("schedule `bernstein` needs target"))?;
            let target = Target::parse(target, f.f64_or("reg", DEFAULT_REG)?, base)?;
            target.schedule(f.m()?, false)?
        }
        "table" => {
            f.allow(&["path"])?;
            let path = f.take("path").ok_or_else(|| anyhow!("schedule `table` needs path"))?;
            let path = base.join(path);
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            AdvantageSchedule::from_table(&text)?
        }
        other => bail!(
            "unknown schedule `{other}` (expected vanilla, mean_of_correct, grpo, grpo_variance, bernstein or table)"
        ),
    };
    Ok(sched)
}

/// A derivative `h'` to fit with a Bernstein schedule.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// `1 / (t (1 - t) + reg)`
    Logit {
        reg: f64,
    },
    /// `1 / (sqrt(t (1 - t)) + reg)`
    Arcsin {
        reg: f64,
    },
    Identity,
    /// `h'(t) = sum_k c[k] t^k`
    Poly(Vec<f64>),
    /// Piecewise-linear interpolation of `(t, h'(t))` samples.
    Table(Vec<(f64, f64)>),
}

impl Target {
    /// `logit`, `arcsin`, `identity`, `poly:c0;c1;...` or `file:<path>`.
    pub fn parse(s: &str, reg: f64, base: &Path) -> Result<Self> {
        if !(reg.is_finite() && reg >= 0.0) {
            bail!("reg = {reg} must be a nonnegative number");
        }
        if let Some(coeffs) = s.strip_prefix("poly:") {
            let c = coeffs
                .split(';')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .with_context(|| format!("bad coefficient `{c}`"))
                })
                .collect::<Result<Vec<_>>>()?;
            if c.iter().any(|x| !x.is_finite()) {
                bail!("polynomial coefficients must be finite");
            }
            return Ok(Target::Poly(c));
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Target::read_table(&base.join(path));
        }
        match s {
            "logit" | "log_odds" => Ok(Target::Logit { reg }),
            "arcsin" => Ok(Target::Arcsin { reg }),
            "identity" | "id" => Ok(Target::Identity),
            other => bail!("unknown target `{other}` (expected logit, arcsin, identity, poly:c0;c1;... or file:<path>)"),
        }
    }

    fn read_table(path: &PathBuf) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("t,hprime") => {}
            other => bail!(
                "{}: expected header `t,hprime`, found {other:?}",
                path.display()
            ),
        }
        let mut pts = Vec::new();
        for line in lines {
            let (t, v) = line
                .split_once(',')
                .ok_or_else(|| anyhow!("{}: malformed row `{line}`", path.display()))?;
            let t: f64 = t
                .trim()
                .parse()
                .with_context(|| format!("bad t in `{line}`"))?;
            let v: f64 = v
                .trim()
                .parse()
                .with_context(|| format!("bad hprime in `{line}`"))?;
            if !v.is_finite() {
                bail!("{}: non-finite h' at t = {t}", path.display());
            }
            pts.push((t, v));
        }
        if pts.len() < 2 || pts.windows(2).any(|w| w[1].0 <= w[0].0) {
            bail!(
                "{}: need at least two rows with strictly increasing t",
                path.display()
            );
        }
        if pts[0].0 > 0.0 || pts[pts.len() - 1].0 < 1.0 {
            bail!("{}: t must cover [0, 1]", path.display());
        }
        Ok(Target::Table(pts))
    }

    pub fn name(&self) -> String {
        match self {
            Target::Logit { .. } => "logit".into(),
            Target::Arcsin { .. } => "arcsin".into(),
            Target::Identity => "identity".into(),
            Target::Poly(_) => "poly".into(),
            Target::Table(_) => "table".into(),
        }
    }

    pub fn hprime(&self, t: f64) -> f64 {
        match self {
            Target::Logit { reg } => 1.0 / (t * (1.0 - t) + reg),
            Target::Arcsin { reg } => 1.0 / ((t * (1.0 - t)).sqrt() + reg),
            Target::Identity => 1.0,
            Target::Poly(c) => c.iter().rev().fold(0.0, |acc, ck| acc * t + ck),
            Target::Table(pts) => {
                let i = pts.partition_point(|p| p.0 <= t).clamp(1, pts.len() - 1);
                let ((t0, v0), (t1, v1)) = (pts[i - 1], pts[i]);
                v0 + (v1 - v0) * (t - t0) / (t1 - t0)
            }
        }
    }

    /// Node-rule fit, or the exact Bernstein conversion for polynomials when `exact`.
    pub fn schedule(&self, m: usize, exact: bool) -> Result<AdvantageSchedule> {
        match (self, exact) {
            (Target::Poly(c), true) => Ok(AdvantageSchedule::bernstein_polynomial(m, c)?),
            (_, true) => bail!("exact fitting needs a polynomial target"),
            _ => Ok(AdvantageSchedule::bernstein_fit(m, |t| self.hprime(t))?),
        }
    }
}
