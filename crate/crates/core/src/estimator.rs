//! Stochastic gradient estimators and the exact oracles that pin down
//! their expectations.
//!
//! Two independent routes to the expected group update are provided:
//! [`exact_expectation_oracle`] uses the closed form `kappa(p) grad p`,
//! while [`tuple_enumeration_oracle`] sums the estimator over every answer
//! tuple with its joint probability and never touches binomials or betas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::policy::{grad_mass_into, mass, score_into, Gradient, PromptTask, TabularPolicy};
use crate::schedule::AdvantageSchedule;
use crate::specfun::CompensatedSum;
use crate::transform::InducedTransform;

pub const DEFAULT_ENUMERATION_BUDGET: u128 = 10_000_000;

/// Tuples per parallel work unit in the enumeration oracle.
const ENUM_CHUNK: usize = 4096;

/// One group of `M` answers to a prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSample {
    pub prompt: usize,
    pub answers: Vec<usize>,
    pub rewards: Vec<bool>,
    /// Leave-one-out totals `S_i = sum_{j != i} R_j`.
    pub others_correct: Vec<usize>,
}

impl GroupSample {
    pub fn from_answers(prompt: usize, task: &PromptTask, answers: Vec<usize>) -> Self {
        let rewards: Vec<bool> = answers.iter().map(|&y| task.is_correct(y)).collect();
        let total = rewards.iter().filter(|&&r| r).count();
        let others_correct = rewards.iter().map(|&r| total - usize::from(r)).collect();
        Self {
            prompt,
            answers,
            rewards,
            others_correct,
        }
    }

    pub fn group_size(&self) -> usize {
        self.answers.len()
    }

    pub fn num_correct(&self) -> usize {
        self.rewards.iter().filter(|&&r| r).count()
    }
}

/// A single stochastic update direction with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub gradient: Gradient,
    pub label: String,
    pub group_size: usize,
    pub prompt_id: String,
    pub seed: Option<u64>,
    pub num_correct: usize,
}

/// Result of one rejection-until-B draw.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectionOutcome {
    Update {
        estimate: GradientEstimate,
        attempts: usize,
    },
    /// Fewer than `B` correct answers within the attempt cap (or none possible).
    Skip { attempts: usize },
}

/// Index drawn from a categorical distribution.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return i;
        }
    }
    // Rounding left `cum` slightly below 1: fall back to the last supported answer.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

/// `M` i.i.d. answers from `pi(. | x)` with their rewards.
pub fn sample_group<R: Rng + ?Sized>(
    pol: &TabularPolicy,
    task: &PromptTask,
    m: usize,
    rng: &mut R,
) -> Result<GroupSample> {
    if m == 0 {
        return Err(Error::Config("group size M must be at least 1".into()));
    }
    let x = pol.row_of(task)?;
    let probs = pol.probs(x)?;
    let answers = (0..m).map(|_| sample_categorical(&probs, rng)).collect();
    Ok(GroupSample::from_answers(x, task, answers))
}

/// `(1/M) sum_i Z_i grad log pi(y_i | x)` for a given group.
pub fn estimate_from_group(
    pol: &TabularPolicy,
    group: &GroupSample,
    sched: &AdvantageSchedule,
) -> Result<Gradient> {
    let m = group.group_size();
    if m != sched.group_size() {
        return Err(Error::Config(format!(
            "group has {m} answers, schedule `{}` expects M = {}",
            sched.label(),
            sched.group_size()
        )));
    }
    let probs = pol.probs(group.prompt)?;
    let mut g = Gradient::zeros_like(pol);
    let row = &mut g.0[group.prompt];
    for i in 0..m {
        let z = sched.advantage(group.rewards[i], group.others_correct[i])?;
        if z != 0.0 {
            score_into(row, &probs, group.answers[i], z / m as f64);
        }
    }
    Ok(g)
}

/// One draw of the group-weighted estimator.
pub fn algorithm1_estimate<R: Rng + ?Sized>(
    pol: &TabularPolicy,
    task: &PromptTask,
    sched: &AdvantageSchedule,
    rng: &mut R,
) -> Result<GradientEstimate> {
    let group = sample_group(pol, task, sched.group_size(), rng)?;
    let gradient = estimate_from_group(pol, &group, sched)?;
    Ok(GradientEstimate {
        gradient,
        label: sched.label().to_string(),
        group_size: sched.group_size(),
        prompt_id: task.id().to_string(),
        seed: None,
        num_correct: group.num_correct(),
    })
}

/// Closed form `kappa(p) grad p(C | x)`.
pub fn exact_expectation_oracle(
    pol: &TabularPolicy,
    task: &PromptTask,
    sched: &AdvantageSchedule,
) -> Result<Gradient> {
    let x = pol.row_of(task)?;
    let probs = pol.probs(x)?;
    let p = mass(&probs, task);
    let kappa = InducedTransform::induced(sched).eval_kappa(p)?;
    let mut g = Gradient::zeros_like(pol);
    grad_mass_into(&mut g.0[x], &probs, task, kappa);
    Ok(g)
}

/// Number of answer tuples the enumeration oracle would visit.
pub fn enumeration_size(vocab: usize, m: usize) -> u128 {
    (vocab as u128).checked_pow(m as u32).unwrap_or(u128::MAX)
}

/// Expectation of [`estimate_from_group`] by summing over all `V^M` tuples.
pub fn tuple_enumeration_oracle(
    pol: &TabularPolicy,
    task: &PromptTask,
    sched: &AdvantageSchedule,
    budget: u128,
) -> Result<Gradient> {
    let x = pol.row_of(task)?;
    let probs = pol.probs(x)?;
    let v = probs.len();
    let m = sched.group_size();
    let required = enumeration_size(v, m);
    if required > budget {
        return Err(Error::BudgetExceeded { required, budget });
    }
    let total = required as usize;
    let partials = par::map_slice(&par::chunks(total, ENUM_CHUNK), |&(lo, hi)| {
        enumerate_chunk(&probs, task, sched, lo, hi)
    });

    // Ordered combine: w[y] collects prob * Z_i / M at answer y, `zsum`
    // collects prob * sum_i Z_i / M; the row is then w - zsum * pi.
    let mut w: Vec<CompensatedSum> = vec![CompensatedSum::new(); v];
    let mut zsum = CompensatedSum::new();
    for part in partials {
        let part = part?;
        for (acc, val) in w.iter_mut().zip(&part.0) {
            acc.add(*val);
        }
        zsum.add(part.1);
    }
    let zsum = zsum.value();
    let mut g = Gradient::zeros_like(pol);
    for (y, r) in g.0[x].iter_mut().enumerate() {
        *r = w[y].value() - zsum * probs[y];
    }
    Ok(g)
}

fn enumerate_chunk(
    probs: &[f64],
    task: &PromptTask,
    sched: &AdvantageSchedule,
    lo: usize,
    hi: usize,
) -> Result<(Vec<f64>, f64)> {
    let v = probs.len();
    let m = sched.group_size();
    let inv_m = 1.0 / m as f64;
    // Odometer decoded from `lo`, least significant digit first.
    let mut digits = vec![0usize; m];
    let mut rest = lo;
    for d in digits.iter_mut() {
        *d = rest % v;
        rest /= v;
    }
    let mut w = vec![CompensatedSum::new(); v];
    let mut zsum = CompensatedSum::new();
    for _ in lo..hi {
        let prob: f64 = digits.iter().map(|&y| probs[y]).product();
        if prob != 0.0 {
            let total = digits.iter().filter(|&&y| task.is_correct(y)).count();
            let mut zs = 0.0;
            for &y in &digits {
                let r = task.is_correct(y);
                let z = sched.advantage(r, total - usize::from(r))?;
                w[y].add(prob * z * inv_m);
                zs += z;
            }
            zsum.add(prob * zs * inv_m);
        }
        for d in digits.iter_mut() {
            *d += 1;
            if *d < v {
                break;
            }
            *d = 0;
        }
    }
    Ok((w.iter().map(CompensatedSum::value).collect(), zsum.value()))
}

/// Draw until `b` correct answers are seen (at most `max_attempts` draws)
/// and average their scores.
pub fn rejection_to_b_estimate<R: Rng + ?Sized>(
    pol: &TabularPolicy,
    task: &PromptTask,
    b: usize,
    max_attempts: usize,
    rng: &mut R,
) -> Result<RejectionOutcome> {
    if b == 0 {
        return Err(Error::Config("B must be at least 1".into()));
    }
    if max_attempts < b {
        return Err(Error::Config(format!(
            "max_attempts = {max_attempts} is below B = {b}"
        )));
    }
    if task.correct().is_empty() {
        return Ok(RejectionOutcome::Skip { attempts: 0 });
    }
    let x = pol.row_of(task)?;
    let probs = pol.probs(x)?;
    let mut gradient = Gradient::zeros_like(pol);
    let mut found = 0;
    let mut attempts = 0;
    while found < b {
        if attempts == max_attempts {
            return Ok(RejectionOutcome::Skip { attempts });
        }
        let y = sample_categorical(&probs, rng);
        attempts += 1;
        if task.is_correct(y) {
            score_into(&mut gradient.0[x], &probs, y, 1.0 / b as f64);
            found += 1;
        }
    }
    Ok(RejectionOutcome::Update {
        estimate: GradientEstimate {
            gradient,
            label: "rejection".into(),
            group_size: b,
            prompt_id: task.id().to_string(),
            seed: None,
            num_correct: b,
        },
        attempts,
    })
}

/// `E[grad log pi(y | x) | y in C] = sum_{y in C} (pi(y)/p) grad log pi(y)`.
pub fn conditional_expectation_oracle(pol: &TabularPolicy, task: &PromptTask) -> Result<Gradient> {
    let x = pol.row_of(task)?;
    let probs = pol.probs(x)?;
    let p = mass(&probs, task);
    if p == 0.0 {
        return Err(Error::UndefinedConditional(task.id().to_string()));
    }
    let mut g = Gradient::zeros_like(pol);
    for &y in task.correct() {
        score_into(&mut g.0[x], &probs, y, probs[y] / p);
    }
    Ok(g)
}

/// Per-coordinate sample mean and standard error of a flattened estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct McStats {
    pub draws: usize,
    pub skipped: usize,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
}

impl McStats {
    /// Largest `|mean - exact| / (k * se + floor (1 + |exact|))`; at most 1 means every
    /// coordinate lies within `k` standard errors (plus a rounding floor).
    pub fn worst_ratio(&self, exact: &[f64], k: f64, floor: f64) -> f64 {
        self.mean
            .iter()
            .zip(&self.std_err)
            .zip(exact)
            .map(|((m, se), e)| (m - e).abs() / (k * se + floor * (1.0 + e.abs())))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone)]
struct Moments {
    n: usize,
    skipped: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            skipped: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((mu, m2), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *mu;
            *mu += d / n;
            *m2 += d * (v - *mu);
        }
    }

    fn merge(&mut self, o: &Moments) {
        self.skipped += o.skipped;
        if o.n == 0 {
            return;
        }
        let (na, nb) = (self.n as f64, o.n as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = o.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += o.m2[i] + d * d * na * nb / n;
        }
        self.n += o.n;
    }
}

/// Run `draw` `n` times on deterministic per-chunk streams and collect
/// moments. `draw` returns `None` for a skipped sample.
///
/// Chunk `c` uses `ChaCha8Rng::seed_from_u64(seed)` on stream `c`, so the
/// result depends only on `(n, seed, chunk)`.
pub fn monte_carlo<F>(dim: usize, n: usize, seed: u64, chunk: usize, draw: F) -> Result<McStats>
where
    F: Fn(&mut ChaCha8Rng) -> Result<Option<Vec<f64>>> + Sync + Send,
{
    let parts = par::map_slice(&par::chunks(n, chunk), |&(lo, hi)| -> Result<Moments> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream((lo / chunk.max(1)) as u64);
        let mut mom = Moments::new(dim);
        for _ in lo..hi {
            match draw(&mut rng)? {
                Some(x) => mom.push(&x),
                None => mom.skipped += 1,
            }
        }
        Ok(mom)
    });
    let mut all = Moments::new(dim);
    for p in parts {
        all.merge(&p?);
    }
    let std_err = if all.n > 1 {
        let n = all.n as f64;
        all.m2
            .iter()
            .map(|m2| (m2 / (n - 1.0) / n).sqrt())
            .collect()
    } else {
        vec![f64::INFINITY; dim]
    };
    Ok(McStats {
        draws: all.n,
        skipped: all.skipped,
        mean: all.mean,
        std_err,
    })
}

pub fn flatten(g: &Gradient) -> Vec<f64> {
    g.iter().copied().collect()
}
