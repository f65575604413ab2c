//! Self-check suite behind `hm verify`.
//!
//! Each check pits an implementation path against an independent route
//! (enumeration, finite differences, closed forms, direct group
//! statistics) and reports the worst observed gap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::estimator::{self, flatten};
use crate::policy::{Corpus, PromptTask, TabularPolicy, DEFAULT_FD_STEP};
use crate::schedule::AdvantageSchedule;
use crate::specfun::{self, CompensatedSum, RefTransform};
use crate::transform::{
    rejection_closed_form, uniform_grid, InducedTransform, DEFAULT_GRID_POINTS,
};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    pub budget: u128,
    pub seed: u64,
    /// Draws for the Monte Carlo checks.
    pub mc_draws: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            budget: estimator::DEFAULT_ENUMERATION_BUDGET,
            seed: 2025,
            mc_draws: 100_000,
        }
    }
}

/// Built-in schedules at group size `m`.
pub fn builtin_schedules(m: usize) -> Vec<AdvantageSchedule> {
    vec![
        AdvantageSchedule::vanilla(m).expect("m >= 1"),
        AdvantageSchedule::mean_of_correct(m).expect("m >= 1"),
        AdvantageSchedule::grpo(m, 0.1).expect("eps > 0"),
        AdvantageSchedule::grpo_variance(m, 0.1).expect("eps > 0"),
        AdvantageSchedule::bernstein_fit(m, |t| 1.0 / (1.0 + t)).expect("finite"),
    ]
}

/// Single-prompt instance with random logits and a random correct set.
pub fn random_instance(rng: &mut ChaCha8Rng, vocab: usize) -> (PromptTask, TabularPolicy) {
    let correct: Vec<usize> = (0..vocab).filter(|_| rng.random_bool(0.5)).collect();
    let task = PromptTask::new("q", vocab, &correct).expect("indices < vocab");
    let logits = (0..vocab).map(|_| rng.random_range(-2.0..2.0)).collect();
    let pol = TabularPolicy::from_logits(vec!["q".into()], vec![logits]).expect("finite logits");
    (task, pol)
}

type Check = fn(&VerifyOptions) -> Result<(bool, String)>;

const CHECKS: &[(&str, Check)] = &[
    ("pmf rows sum to one", check_pmf_rows),
    ("enumeration = kappa(p) grad p", check_enumeration),
    ("vanilla h_M(t) = t", check_vanilla_identity),
    ("mean-of-correct closed form", check_rejection_closed_form),
    ("kappa = d/dt h_M", check_kappa_derivative),
    ("single-pass h_M = direct h_M", check_single_pass),
    ("grpo table = group statistics", check_grpo_tables),
    ("objective gradients vs finite differences", check_gradients),
    ("Monte Carlo group estimator unbiased", check_monte_carlo),
    ("rejection-until-B unbiased", check_rejection),
    ("Bernstein polynomial exactness", check_bernstein_exact),
];

/// Run every check; `Err` inside a check counts as a failure.
pub fn run_all(opts: &VerifyOptions) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, check)| match check(opts) {
            Ok((passed, detail)) => CheckResult {
                name,
                passed,
                detail,
            },
            Err(e) => CheckResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect()
}

fn check_pmf_rows(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for n in [1u64, 16, 256, 257, 4096] {
        for t in [0.01, 0.3, 0.5, 0.99] {
            let s: CompensatedSum = specfun::binom_pmf_row(n, t).into_iter().collect();
            worst = worst.max((s.value() - 1.0).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max |sum - 1| = {worst:.3e}")))
}

fn check_enumeration(o: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for v in 2..=4 {
        for m in 1..=4 {
            for sched in builtin_schedules(m) {
                for _ in 0..20 {
                    let (task, pol) = random_instance(&mut rng, v);
                    let a = estimator::tuple_enumeration_oracle(&pol, &task, &sched, o.budget)?;
                    let b = estimator::exact_expectation_oracle(&pol, &task, &sched)?;
                    worst = worst.max(a.max_abs_diff(&b) / (1.0 + b.max_abs()));
                    cases += 1;
                }
            }
        }
    }
    Ok((
        worst <= 1e-12,
        format!("{cases} cases, max scaled gap {worst:.3e}"),
    ))
}

fn check_vanilla_identity(_: &VerifyOptions) -> Result<(bool, String)> {
    let grid = uniform_grid(DEFAULT_GRID_POINTS);
    let mut worst = 0.0f64;
    for m in [1, 2, 8, 64] {
        let tr = InducedTransform::induced(&AdvantageSchedule::vanilla(m)?);
        for &t in &grid {
            worst = worst.max((tr.eval_h(t)? - t).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max |h - t| = {worst:.3e}")))
}

fn check_rejection_closed_form(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut at_one = 0.0f64;
    for m in [1, 2, 4, 8, 16, 64] {
        let tr = InducedTransform::induced(&AdvantageSchedule::mean_of_correct(m)?);
        for i in 1..=99 {
            let t = 0.01 + (i - 1) as f64 * 0.99 / 98.0;
            worst = worst.max((tr.eval_h(t)? - rejection_closed_form(m, t)?).abs());
        }
        at_one = at_one.max((tr.eval_h(1.0)? - specfun::harmonic(m as u64)?).abs());
    }
    Ok((
        worst <= 1e-9 && at_one <= 1e-12,
        format!("sup gap {worst:.3e}, |h(1) - H_M| {at_one:.3e}"),
    ))
}

fn check_kappa_derivative(_: &VerifyOptions) -> Result<(bool, String)> {
    let d = 1e-6;
    let mut worst = 0.0f64;
    for m in [2, 4, 8, 32] {
        for sched in builtin_schedules(m) {
            let tr = InducedTransform::induced(&sched);
            for i in 1..=19 {
                let t = i as f64 * 0.05;
                let fd = (tr.eval_h(t + d)? - tr.eval_h(t - d)?) / (2.0 * d);
                let k = tr.eval_kappa(t)?;
                worst = worst.max((k - fd).abs() / k.abs().max(1.0));
            }
        }
    }
    Ok((worst <= 1e-4, format!("max scaled gap {worst:.3e}")))
}

fn check_single_pass(_: &VerifyOptions) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for m in [3, 64, 512] {
        for sched in builtin_schedules(m) {
            let tr = InducedTransform::induced(&sched);
            for t in [0.0, 0.05, 0.5, 0.93, 1.0] {
                let a = tr.eval_h(t)?;
                worst = worst.max((a - tr.eval_h_single_pass(t)?).abs() / a.abs().max(1.0));
            }
        }
    }
    Ok((worst <= 1e-10, format!("max scaled gap {worst:.3e}")))
}

fn check_grpo_tables(_: &VerifyOptions) -> Result<(bool, String)> {
    let eps = 0.05;
    let mut worst = 0.0f64;
    for m in 1..=8usize {
        let sched = AdvantageSchedule::grpo(m, eps)?;
        for bits in 0u32..(1 << m) {
            let r: Vec<f64> = (0..m).map(|i| f64::from(bits >> i & 1)).collect();
            let mean = r.iter().sum::<f64>() / m as f64;
            let sd = (r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m as f64).sqrt();
            let total = r.iter().sum::<f64>() as usize;
            for &ri in &r {
                let correct = ri == 1.0;
                let table = sched.advantage(correct, total - usize::from(correct))?;
                worst = worst.max((table - (ri - mean) / (sd + eps)).abs());
            }
        }
    }
    Ok((worst <= 1e-12, format!("max gap {worst:.3e}")))
}

fn check_gradients(o: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed ^ 0x5eed);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let mut tasks = Vec::new();
        let mut rows = Vec::new();
        for i in 0..3 {
            let v = rng.random_range(2..6);
            let c: Vec<usize> = (0..v - 1)
                .filter(|k| *k == 0 || rng.random_bool(0.4))
                .collect();
            tasks.push(PromptTask::new(format!("q{i}"), v, &c)?);
            rows.push((0..v).map(|_| rng.random_range(-1.0..1.0)).collect());
        }
        let ids = tasks.iter().map(|t| t.id().to_string()).collect();
        let corpus = Corpus::new(tasks)?;
        let pol = TabularPolicy::from_logits(ids, rows)?;
        worst =
            worst.max(pol.finite_diff_check(&corpus, &RefTransform::Identity, DEFAULT_FD_STEP)?);
        worst = worst.max(pol.finite_diff_check(&corpus, &RefTransform::Log, DEFAULT_FD_STEP)?);
        for m in [1, 4, 16, 32] {
            for sched in builtin_schedules(m) {
                let tr = InducedTransform::induced(&sched);
                worst = worst.max(pol.finite_diff_check(&corpus, &tr, DEFAULT_FD_STEP)?);
            }
        }
    }
    Ok((worst <= 1e-5, format!("max relative error {worst:.3e}")))
}

fn check_monte_carlo(o: &VerifyOptions) -> Result<(bool, String)> {
    let task = PromptTask::new("q", 4, &[0, 2])?;
    let pol = TabularPolicy::from_logits(vec!["q".into()], vec![vec![0.3, -0.4, -0.1, 0.5]])?;
    let mut worst = 0.0f64;
    for sched in builtin_schedules(8) {
        let exact = flatten(&estimator::exact_expectation_oracle(&pol, &task, &sched)?);
        let stats = estimator::monte_carlo(4, o.mc_draws, o.seed, 4096, |rng| {
            estimator::algorithm1_estimate(&pol, &task, &sched, rng)
                .map(|e| Some(flatten(&e.gradient)))
        })?;
        worst = worst.max(stats.worst_ratio(&exact, 5.0, 1e-12));
    }
    Ok((
        worst <= 1.0,
        format!("worst |mean - exact| / 5 SE = {worst:.3}"),
    ))
}

fn check_rejection(o: &VerifyOptions) -> Result<(bool, String)> {
    let task = PromptTask::new("q", 5, &[1, 4])?;
    let pol = TabularPolicy::uniform(&Corpus::new(vec![task.clone()])?);
    let exact = flatten(&estimator::conditional_expectation_oracle(&pol, &task)?);
    let mut worst = 0.0f64;
    for b in [1, 2, 4] {
        let stats =
            estimator::monte_carlo(5, o.mc_draws, o.seed.wrapping_add(b as u64), 4096, |rng| {
                Ok(
                    match estimator::rejection_to_b_estimate(&pol, &task, b, 10_000, rng)? {
                        estimator::RejectionOutcome::Update { estimate, .. } => {
                            Some(flatten(&estimate.gradient))
                        }
                        estimator::RejectionOutcome::Skip { .. } => None,
                    },
                )
            })?;
        worst = worst.max(stats.worst_ratio(&exact, 5.0, 1e-12));
        if stats.skipped > 0 {
            return Ok((false, format!("B = {b}: {} skipped draws", stats.skipped)));
        }
    }
    Ok((
        worst <= 1.0,
        format!("worst |mean - exact| / 5 SE = {worst:.3}"),
    ))
}

fn check_bernstein_exact(_: &VerifyOptions) -> Result<(bool, String)> {
    let tr = InducedTransform::induced(&AdvantageSchedule::bernstein_polynomial(
        8,
        &[0.0, 0.0, 3.0],
    )?);
    let mut worst = 0.0f64;
    for i in 1..=99 {
        let t = i as f64 / 100.0;
        worst = worst.max((tr.eval_h(t)? - t.powi(3)).abs());
    }
    Ok((worst <= 1e-10, format!("max |h_M - t^3| = {worst:.3e}")))
}
