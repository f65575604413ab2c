//! Tabular softmax policies over per-prompt answer vocabularies.
//!
//! Every prompt owns one row of raw logits. Nothing is gauge-fixed: adding
//! a constant to a row leaves the policy unchanged, and every gradient
//! produced here has zero row sums so ascent never moves along that
//! direction.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::specfun::CompensatedSum;
use crate::transform::MonotoneTransform;
use crate::{fmt17, par};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// A prompt, its answer vocabulary `0..vocab_size` and its correct set.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTask {
    id: String,
    vocab_size: usize,
    correct: Vec<usize>,
    mask: Vec<bool>,
}

impl PromptTask {
    pub fn new(id: impl Into<String>, vocab_size: usize, correct: &[usize]) -> Result<Self> {
        let id = id.into();
        if vocab_size == 0 {
            return Err(Error::Config(format!(
                "task `{id}`: vocab_size must be positive"
            )));
        }
        let mut mask = vec![false; vocab_size];
        for &c in correct {
            if c >= vocab_size {
                return Err(Error::Config(format!(
                    "task `{id}`: correct answer {c} is outside the vocabulary of size {vocab_size}"
                )));
            }
            mask[c] = true;
        }
        let correct = (0..vocab_size).filter(|&y| mask[y]).collect();
        Ok(Self {
            id,
            vocab_size,
            correct,
            mask,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Sorted, deduplicated correct answers.
    pub fn correct(&self) -> &[usize] {
        &self.correct
    }

    #[inline]
    pub fn is_correct(&self, y: usize) -> bool {
        self.mask.get(y).copied().unwrap_or(false)
    }
}

/// Ordered prompts with sampling weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    tasks: Vec<PromptTask>,
    weights: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusFile {
    tasks: Vec<TaskEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskEntry {
    id: String,
    vocab_size: usize,
    correct: Vec<usize>,
    weight: Option<f64>,
}

impl Corpus {
    /// Uniformly weighted corpus.
    pub fn new(tasks: Vec<PromptTask>) -> Result<Self> {
        let weights = vec![1.0; tasks.len()];
        Self::weighted(tasks, weights)
    }

    pub fn weighted(tasks: Vec<PromptTask>, weights: Vec<f64>) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::Config("corpus has no tasks".into()));
        }
        if weights.len() != tasks.len() {
            return Err(Error::Config("one weight per task required".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(
                "task weights must be finite and nonnegative".into(),
            ));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(
                "task weights must have a positive sum".into(),
            ));
        }
        let mut seen = HashMap::new();
        for (i, t) in tasks.iter().enumerate() {
            if let Some(j) = seen.insert(t.id().to_string(), i) {
                return Err(Error::Config(format!(
                    "duplicate task id `{}` (entries {j} and {i})",
                    t.id()
                )));
            }
        }
        Ok(Self { tasks, weights })
    }

    /// Parse a TOML document with a `[[tasks]]` array
    /// (`id`, `vocab_size`, `correct`, optional `weight`).
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: CorpusFile =
            toml::from_str(text).map_err(|e| Error::Parse(format!("corpus: {e}")))?;
        let mut tasks = Vec::with_capacity(file.tasks.len());
        let mut weights = Vec::with_capacity(file.tasks.len());
        for entry in file.tasks {
            tasks.push(PromptTask::new(entry.id, entry.vocab_size, &entry.correct)?);
            weights.push(entry.weight.unwrap_or(1.0));
        }
        Self::weighted(tasks, weights)
    }

    pub fn tasks(&self) -> &[PromptTask] {
        &self.tasks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }
}

/// Parameter-shaped array: one row per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<Vec<f64>>);

impl Gradient {
    pub fn zeros_like(pol: &TabularPolicy) -> Self {
        Gradient(pol.logits.iter().map(|r| vec![0.0; r.len()]).collect())
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.0
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.0[x]
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (r, o) in self.0.iter_mut().zip(&other.0) {
            for (a, b) in r.iter_mut().zip(o) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().flatten().for_each(|v| *v *= k);
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .map(|(a, b)| a * b)
            .collect::<CompensatedSum>()
            .value()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Gradient) -> f64 {
        self.0
            .iter()
            .flatten()
            .zip(other.0.iter().flatten())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter().flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }
}

/// Per-prompt softmax over raw logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    logits: Vec<Vec<f64>>,
}

impl TabularPolicy {
    /// All-zero logits: uniform over each prompt's vocabulary.
    pub fn uniform(corpus: &Corpus) -> Self {
        let ids = corpus.tasks().iter().map(|t| t.id().to_string()).collect();
        let logits = corpus
            .tasks()
            .iter()
            .map(|t| vec![0.0; t.vocab_size()])
            .collect();
        Self::from_logits(ids, logits).expect("corpus ids are unique")
    }

    pub fn from_logits(ids: Vec<String>, logits: Vec<Vec<f64>>) -> Result<Self> {
        if ids.len() != logits.len() {
            return Err(Error::Config("one logit row per prompt id required".into()));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate prompt id `{id}`")));
            }
        }
        for (id, row) in ids.iter().zip(&logits) {
            if row.is_empty() {
                return Err(Error::Config(format!(
                    "prompt `{id}` has an empty logit row"
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!(
                    "prompt `{id}` has a non-finite logit"
                )));
            }
        }
        Ok(Self { ids, index, logits })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn num_params(&self) -> usize {
        self.logits.iter().map(Vec::len).sum()
    }

    pub fn prompt_index(&self, id: &str) -> Result<usize> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| Error::Config(format!("policy has no prompt `{id}`")))
    }

    /// Row index of `task`, checking the vocabulary matches.
    pub fn row_of(&self, task: &PromptTask) -> Result<usize> {
        let x = self.prompt_index(task.id())?;
        if self.logits[x].len() != task.vocab_size() {
            return Err(Error::Config(format!(
                "prompt `{}`: policy row has {} logits, task vocabulary is {}",
                task.id(),
                self.logits[x].len(),
                task.vocab_size()
            )));
        }
        Ok(x)
    }

    /// Every task in `corpus` has a matching row.
    pub fn check_corpus(&self, corpus: &Corpus) -> Result<()> {
        corpus
            .tasks()
            .iter()
            .try_for_each(|t| self.row_of(t).map(|_| ()))
    }

    /// `pi(. | x)`, max-subtracted softmax of row `x`.
    pub fn probs(&self, x: usize) -> Result<Vec<f64>> {
        let row = self.logits.get(x).ok_or(Error::Index {
            index: x,
            len: self.logits.len(),
        })?;
        Ok(softmax(row))
    }

    /// `p(C | x) = sum_{y in C} pi(y | x)`.
    pub fn p_correct(&self, task: &PromptTask) -> Result<f64> {
        let probs = self.probs(self.row_of(task)?)?;
        Ok(mass(&probs, task))
    }

    /// `grad log pi(y | x)`: `e_y - pi(. | x)` on row `x`, zero elsewhere.
    pub fn grad_log_prob(&self, x: usize, y: usize) -> Result<Gradient> {
        let probs = self.probs(x)?;
        if y >= probs.len() {
            return Err(Error::Index {
                index: y,
                len: probs.len(),
            });
        }
        let mut g = Gradient::zeros_like(self);
        score_into(&mut g.0[x], &probs, y, 1.0);
        Ok(g)
    }

    /// `grad p(C | x) = pi * 1_C - p pi` on row `x`.
    pub fn grad_p_correct(&self, task: &PromptTask) -> Result<Gradient> {
        let x = self.row_of(task)?;
        let probs = self.probs(x)?;
        let mut g = Gradient::zeros_like(self);
        grad_mass_into(&mut g.0[x], &probs, task, 1.0);
        Ok(g)
    }

    /// `J_h = sum_x w_x h(p(C|x)) / sum_x w_x`.
    pub fn exact_objective(&self, corpus: &Corpus, h: &dyn MonotoneTransform) -> Result<f64> {
        let mut acc = CompensatedSum::new();
        for (task, w) in corpus.tasks().iter().zip(corpus.weights()) {
            if *w == 0.0 {
                continue;
            }
            let p = self.p_correct(task)?;
            let v = h.value(p);
            if !v.is_finite() {
                return Err(Error::ObjectiveUndefined(format!(
                    "{} is not finite at p = {p} (prompt `{}`)",
                    h.name(),
                    task.id()
                )));
            }
            acc.add(w * v);
        }
        Ok(acc.value() / corpus.total_weight())
    }

    /// `grad J_h = sum_x w_x h'(p_x) grad p_x / sum_x w_x`.
    pub fn exact_grad_objective(
        &self,
        corpus: &Corpus,
        h: &dyn MonotoneTransform,
    ) -> Result<Gradient> {
        let total = corpus.total_weight();
        let mut g = Gradient::zeros_like(self);
        for (task, w) in corpus.tasks().iter().zip(corpus.weights()) {
            if *w == 0.0 {
                continue;
            }
            let x = self.row_of(task)?;
            let probs = self.probs(x)?;
            let p = mass(&probs, task);
            let (v, d) = (h.value(p), h.derivative(p));
            if !v.is_finite() || !d.is_finite() {
                return Err(Error::ObjectiveUndefined(format!(
                    "{} is not differentiable at p = {p} (prompt `{}`)",
                    h.name(),
                    task.id()
                )));
            }
            grad_mass_into(&mut g.0[x], &probs, task, w * d / total);
        }
        Ok(g)
    }

    /// Worst relative error `|fd - g| / max(1, |g|)` of central differences
    /// against [`exact_grad_objective`](Self::exact_grad_objective).
    pub fn finite_diff_check(
        &self,
        corpus: &Corpus,
        h: &dyn MonotoneTransform,
        step: f64,
    ) -> Result<f64> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Config(format!(
                "finite-difference step must be positive, got {step}"
            )));
        }
        let exact = self.exact_grad_objective(corpus, h)?;
        let coords: Vec<(usize, usize)> = self
            .logits
            .iter()
            .enumerate()
            .flat_map(|(x, r)| (0..r.len()).map(move |y| (x, y)))
            .collect();
        let errs = par::map_slice(&coords, |&(x, y)| -> Result<f64> {
            let mut plus = self.clone();
            plus.logits[x][y] += step;
            let mut minus = self.clone();
            minus.logits[x][y] -= step;
            let fd = (plus.exact_objective(corpus, h)? - minus.exact_objective(corpus, h)?)
                / (2.0 * step);
            let g = exact.0[x][y];
            Ok((fd - g).abs() / g.abs().max(1.0))
        });
        errs.into_iter().try_fold(0.0f64, |m, e| Ok(m.max(e?)))
    }

    /// `theta <- theta + eta g`.
    pub fn apply_update(&mut self, g: &Gradient, eta: f64) {
        for (row, gr) in self.logits.iter_mut().zip(&g.0) {
            for (v, d) in row.iter_mut().zip(gr) {
                *v += eta * d;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().flatten().all(|v| v.is_finite())
    }

    /// CSV checkpoint `prompt_id,answer,logit`.
    pub fn write_checkpoint<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "prompt_id,answer,logit")?;
        for (id, row) in self.ids.iter().zip(&self.logits) {
            for (y, v) in row.iter().enumerate() {
                writeln!(out, "{id},{y},{}", fmt17(*v))?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut ids: Vec<String> = Vec::new();
        let mut logits: Vec<Vec<f64>> = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if n == 0 {
                if line.trim() != "prompt_id,answer,logit" {
                    return Err(Error::Parse(format!("checkpoint: bad header `{line}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.rsplitn(3, ',').collect();
            if cols.len() != 3 {
                return Err(Error::Parse(format!("checkpoint line {}: `{line}`", n + 1)));
            }
            let (logit, answer, id) = (cols[0], cols[1], cols[2]);
            let answer: usize = answer
                .parse()
                .map_err(|e| Error::Parse(format!("checkpoint line {}: {e}", n + 1)))?;
            let logit: f64 = logit
                .parse()
                .map_err(|e| Error::Parse(format!("checkpoint line {}: {e}", n + 1)))?;
            if ids.last().map(String::as_str) != Some(id) {
                ids.push(id.to_string());
                logits.push(Vec::new());
            }
            let row = logits.last_mut().expect("pushed above");
            if answer != row.len() {
                return Err(Error::Parse(format!(
                    "checkpoint line {}: answers for `{id}` must be contiguous from 0",
                    n + 1
                )));
            }
            row.push(logit);
        }
        Self::from_logits(ids, logits)
    }
}

pub(crate) fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Probability mass on the correct set.
pub(crate) fn mass(probs: &[f64], task: &PromptTask) -> f64 {
    task.correct()
        .iter()
        .map(|&y| probs[y])
        .collect::<CompensatedSum>()
        .value()
        .min(1.0)
}

/// `row += scale * (e_y - probs)`.
#[inline]
pub(crate) fn score_into(row: &mut [f64], probs: &[f64], y: usize, scale: f64) {
    for (r, p) in row.iter_mut().zip(probs) {
        *r -= scale * p;
    }
    row[y] += scale;
}

/// `row += scale * (probs * 1_C - p probs)`.
pub(crate) fn grad_mass_into(row: &mut [f64], probs: &[f64], task: &PromptTask, scale: f64) {
    let p = mass(probs, task);
    for (y, (r, q)) in row.iter_mut().zip(probs).enumerate() {
        let own = if task.is_correct(y) { *q } else { 0.0 };
        *r += scale * (own - p * q);
    }
}
