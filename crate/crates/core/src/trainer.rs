//! Plain stochastic gradient ascent over a corpus, one prompt per step.

use std::io::Write;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{self, RejectionOutcome};
use crate::fmt17;
use crate::policy::{Corpus, Gradient, TabularPolicy};
use crate::schedule::AdvantageSchedule;
use crate::specfun::RefTransform;
use crate::transform::{InducedTransform, MonotoneTransform};

/// Random stream used for prompt selection.
pub const PROMPT_STREAM: u64 = 0;
/// Random stream used for answer sampling.
pub const ANSWER_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Mode {
    /// Group of `M` answers weighted by an advantage schedule.
    Algorithm1 { schedule: AdvantageSchedule },
    /// Draw until `b` correct answers, average their scores.
    RejectionToB { b: usize, max_attempts: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub mode: Mode,
    pub step_size: f64,
    pub steps: usize,
    pub seed: u64,
    pub log_every: usize,
    /// Transform for the logged objective. `None` logs the transform the
    /// mode ascends: the induced `h_M`, or `log` for rejection sampling.
    pub objective: Option<RefTransform>,
}

impl TrainerConfig {
    pub fn algorithm1(
        schedule: AdvantageSchedule,
        step_size: f64,
        steps: usize,
        seed: u64,
    ) -> Self {
        Self {
            mode: Mode::Algorithm1 { schedule },
            step_size,
            steps,
            seed,
            log_every: 1,
            objective: None,
        }
    }

    pub fn rejection(
        b: usize,
        max_attempts: usize,
        step_size: f64,
        steps: usize,
        seed: u64,
    ) -> Self {
        Self {
            mode: Mode::RejectionToB { b, max_attempts },
            step_size,
            steps,
            seed,
            log_every: 1,
            objective: None,
        }
    }

    pub fn validate(&self, corpus: &Corpus) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!(
                "step size must be finite and nonnegative, got {}",
                self.step_size
            )));
        }
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        if let Mode::RejectionToB { b, max_attempts } = self.mode {
            if b == 0 || max_attempts < b {
                return Err(Error::Config(format!(
                    "need 1 <= B <= max_attempts, got B = {b}, max_attempts = {max_attempts}"
                )));
            }
            if let Some(t) = corpus.tasks().iter().find(|t| t.correct().is_empty()) {
                return Err(Error::Config(format!(
                    "prompt `{}` has no correct answers; rejection sampling can never succeed",
                    t.id()
                )));
            }
        }
        Ok(())
    }

    fn log_transform(&self) -> Box<dyn MonotoneTransform> {
        match (&self.objective, &self.mode) {
            (Some(r), _) => Box::new(*r),
            (None, Mode::Algorithm1 { schedule }) => Box::new(InducedTransform::induced(schedule)),
            (None, Mode::RejectionToB { .. }) => Box::new(RefTransform::Log),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub prompt_id: String,
    /// Pass probability of the selected prompt before the update.
    pub p_correct: f64,
    /// Corpus objective before the update (`NaN` at a pole).
    pub objective: f64,
    pub grad_norm: f64,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    /// Prompts with an empty correct set (they never receive an update).
    pub degenerate_prompts: Vec<String>,
    pub skipped_steps: usize,
}

pub const TRAJECTORY_HEADER: &str = "step,prompt_id,p_correct,objective,grad_norm,skipped";

impl Trajectory {
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{TRAJECTORY_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.step,
                r.prompt_id,
                fmt17(r.p_correct),
                fmt17(r.objective),
                fmt17(r.grad_norm),
                r.skipped
            )?;
        }
        Ok(())
    }
}

/// Run `cfg.steps` ascent steps on `pol` in place.
pub fn train(pol: &mut TabularPolicy, corpus: &Corpus, cfg: &TrainerConfig) -> Result<Trajectory> {
    cfg.validate(corpus)?;
    pol.check_corpus(corpus)?;
    if let Mode::Algorithm1 { schedule } = &cfg.mode {
        // Touch the schedule once so a bad table fails before step 0.
        schedule.advantage(false, 0)?;
    }
    let picker = WeightedIndex::new(corpus.weights())
        .map_err(|e| Error::Config(format!("corpus weights: {e}")))?;
    let mut prompt_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    prompt_rng.set_stream(PROMPT_STREAM);
    let mut answer_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    answer_rng.set_stream(ANSWER_STREAM);
    let log_h = cfg.log_transform();

    let mut traj = Trajectory {
        degenerate_prompts: corpus
            .tasks()
            .iter()
            .filter(|t| t.correct().is_empty())
            .map(|t| t.id().to_string())
            .collect(),
        ..Default::default()
    };

    for step in 0..cfg.steps {
        let task = &corpus.tasks()[picker.sample(&mut prompt_rng)];
        let logging = step % cfg.log_every == 0 || step + 1 == cfg.steps;
        let p_before = if logging {
            pol.p_correct(task)?
        } else {
            f64::NAN
        };
        let objective = if logging {
            pol.exact_objective(corpus, log_h.as_ref())
                .unwrap_or(f64::NAN)
        } else {
            f64::NAN
        };

        let update: Option<Gradient> = match &cfg.mode {
            Mode::Algorithm1 { schedule } => {
                Some(estimator::algorithm1_estimate(pol, task, schedule, &mut answer_rng)?.gradient)
            }
            Mode::RejectionToB { b, max_attempts } => match estimator::rejection_to_b_estimate(
                pol,
                task,
                *b,
                *max_attempts,
                &mut answer_rng,
            )? {
                RejectionOutcome::Update { estimate, .. } => Some(estimate.gradient),
                RejectionOutcome::Skip { .. } => None,
            },
        };

        let (grad_norm, skipped) = match &update {
            Some(g) => {
                pol.apply_update(g, cfg.step_size);
                if !pol.is_finite() {
                    return Err(Error::Diverged { step });
                }
                (g.norm(), false)
            }
            None => {
                traj.skipped_steps += 1;
                (0.0, true)
            }
        };

        if logging {
            traj.records.push(StepRecord {
                step,
                prompt_id: task.id().to_string(),
                p_correct: p_before,
                objective,
                grad_norm,
                skipped,
            });
        }
    }
    Ok(traj)
}

/// Exact expected update direction of one step under `cfg.mode`, averaged
/// over the prompt distribution. Algorithm-1 expectations are enumerated
/// tuple by tuple; rejection expectations use the conditional mean.
pub fn expected_update(
    pol: &TabularPolicy,
    corpus: &Corpus,
    mode: &Mode,
    budget: u128,
) -> Result<Gradient> {
    let total = corpus.total_weight();
    let mut g = Gradient::zeros_like(pol);
    for (task, w) in corpus.tasks().iter().zip(corpus.weights()) {
        if *w == 0.0 {
            continue;
        }
        let part = match mode {
            Mode::Algorithm1 { schedule } => {
                estimator::tuple_enumeration_oracle(pol, task, schedule, budget)?
            }
            Mode::RejectionToB { .. } => estimator::conditional_expectation_oracle(pol, task)?,
        };
        g.add_scaled(&part, w / total);
    }
    Ok(g)
}

/// Max entry-wise gap between the enumerated expected update and the
/// gradient of the objective the mode is supposed to ascend.
pub fn expected_update_check(
    pol: &TabularPolicy,
    corpus: &Corpus,
    cfg: &TrainerConfig,
    budget: u128,
) -> Result<f64> {
    pol.check_corpus(corpus)?;
    let expected = expected_update(pol, corpus, &cfg.mode, budget)?;
    let target: Box<dyn MonotoneTransform> = match &cfg.mode {
        Mode::Algorithm1 { schedule } => Box::new(InducedTransform::induced(schedule)),
        Mode::RejectionToB { .. } => Box::new(RefTransform::Log),
    };
    let exact = pol.exact_grad_objective(corpus, target.as_ref())?;
    Ok(expected.max_abs_diff(&exact))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PromptTask;
    use rand::Rng;

    fn toy() -> Corpus {
        Corpus::new(vec![PromptTask::new("q", 2, &[0]).unwrap()]).unwrap()
    }

    fn random_policy(corpus: &Corpus, rng: &mut ChaCha8Rng) -> TabularPolicy {
        let ids = corpus.tasks().iter().map(|t| t.id().to_string()).collect();
        let rows = corpus
            .tasks()
            .iter()
            .map(|t| {
                (0..t.vocab_size())
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect()
            })
            .collect();
        TabularPolicy::from_logits(ids, rows).unwrap()
    }

    #[test]
    fn zero_step_size_leaves_policy() {
        let corpus = toy();
        let mut pol = TabularPolicy::uniform(&corpus);
        let before = pol.clone();
        let cfg = TrainerConfig::algorithm1(AdvantageSchedule::vanilla(4).unwrap(), 0.0, 1, 1);
        let traj = train(&mut pol, &corpus, &cfg).unwrap();
        assert_eq!(pol, before);
        assert_eq!(traj.records.len(), 1);
    }

    #[test]
    fn config_validation() {
        let corpus = toy();
        let mut pol = TabularPolicy::uniform(&corpus);
        let sched = AdvantageSchedule::vanilla(4).unwrap();
        assert!(train(
            &mut pol,
            &corpus,
            &TrainerConfig::algorithm1(sched.clone(), 0.5, 0, 1)
        )
        .is_err());
        assert!(train(
            &mut pol,
            &corpus,
            &TrainerConfig::algorithm1(sched.clone(), -1.0, 5, 1)
        )
        .is_err());
        assert!(train(
            &mut pol,
            &corpus,
            &TrainerConfig::rejection(3, 2, 0.5, 5, 1)
        )
        .is_err());

        let empty = Corpus::new(vec![PromptTask::new("q", 2, &[]).unwrap()]).unwrap();
        let mut pol = TabularPolicy::uniform(&empty);
        let err = train(
            &mut pol,
            &empty,
            &TrainerConfig::rejection(2, 100, 0.5, 5, 1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let traj = train(
            &mut pol,
            &empty,
            &TrainerConfig::algorithm1(sched, 0.5, 5, 1),
        )
        .unwrap();
        assert_eq!(traj.degenerate_prompts, vec!["q".to_string()]);
    }

    #[test]
    fn divergence_is_reported() {
        let corpus = toy();
        let mut pol = TabularPolicy::uniform(&corpus);
        let huge = AdvantageSchedule::new("huge", vec![0.0; 4], vec![1e300; 4], None).unwrap();
        let cfg = TrainerConfig::algorithm1(huge, 1e10, 50, 3);
        assert!(matches!(
            train(&mut pol, &corpus, &cfg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn deterministic_and_logging() {
        let corpus = Corpus::from_toml(
            "[[tasks]]\nid='a'\nvocab_size=3\ncorrect=[0]\n[[tasks]]\nid='b'\nvocab_size=4\ncorrect=[1,2]\nweight=2.0\n",
        )
        .unwrap();
        let mut cfg =
            TrainerConfig::algorithm1(AdvantageSchedule::grpo(4, 0.1).unwrap(), 0.3, 120, 9);
        cfg.log_every = 10;
        let mut p1 = TabularPolicy::uniform(&corpus);
        let mut p2 = TabularPolicy::uniform(&corpus);
        let t1 = train(&mut p1, &corpus, &cfg).unwrap();
        let t2 = train(&mut p2, &corpus, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(t1, t2);
        assert_eq!(t1.records.len(), 13);
        assert_eq!(t1.records.last().unwrap().step, 119);
        let mut buf = Vec::new();
        t1.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(TRAJECTORY_HEADER));
        assert_eq!(text.lines().count(), 14);
    }

    #[test]
    fn expected_update_matches_objective_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let corpus = Corpus::from_toml(
            "[[tasks]]\nid='a'\nvocab_size=3\ncorrect=[0]\n[[tasks]]\nid='b'\nvocab_size=4\ncorrect=[1,2]\nweight=0.5\n",
        )
        .unwrap();
        for _ in 0..5 {
            let pol = random_policy(&corpus, &mut rng);
            let van = TrainerConfig::algorithm1(AdvantageSchedule::vanilla(4).unwrap(), 1.0, 1, 0);
            assert!(expected_update_check(&pol, &corpus, &van, 1 << 20).unwrap() <= 1e-12);
            let grpo =
                TrainerConfig::algorithm1(AdvantageSchedule::grpo(4, 0.1).unwrap(), 1.0, 1, 0);
            assert!(expected_update_check(&pol, &corpus, &grpo, 1 << 20).unwrap() <= 1e-10);
            let moc = TrainerConfig::algorithm1(
                AdvantageSchedule::mean_of_correct(4).unwrap(),
                1.0,
                1,
                0,
            );
            assert!(expected_update_check(&pol, &corpus, &moc, 1 << 20).unwrap() <= 1e-10);
            let rej = TrainerConfig::rejection(2, 1000, 1.0, 1, 0);
            assert!(expected_update_check(&pol, &corpus, &rej, 1 << 20).unwrap() <= 1e-12);
        }
        let pol = random_policy(&corpus, &mut rng);
        let big = TrainerConfig::algorithm1(AdvantageSchedule::vanilla(12).unwrap(), 1.0, 1, 0);
        assert!(matches!(
            expected_update_check(&pol, &corpus, &big, 1000),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn expected_step_ascends_and_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let task = PromptTask::new("q", 4, &[1, 3]).unwrap();
        let corpus = Corpus::new(vec![task.clone()]).unwrap();
        let schedules = [
            AdvantageSchedule::vanilla(3).unwrap(),
            AdvantageSchedule::mean_of_correct(3).unwrap(),
            AdvantageSchedule::grpo(3, 0.1).unwrap(),
            AdvantageSchedule::grpo_variance(3, 0.1).unwrap(),
        ];
        for _ in 0..10 {
            let pol = random_policy(&corpus, &mut rng);
            let dp = pol.grad_p_correct(&task).unwrap();
            for s in &schedules {
                let g = expected_update(
                    &pol,
                    &corpus,
                    &Mode::Algorithm1 {
                        schedule: s.clone(),
                    },
                    1 << 20,
                )
                .unwrap();
                assert!(g.dot(&dp) > 0.0, "{}", s.label());
            }
        }
        let full = Corpus::new(vec![PromptTask::new("q", 3, &[0, 1, 2]).unwrap()]).unwrap();
        let pol = random_policy(&full, &mut rng);
        for s in &schedules {
            let g = expected_update(
                &pol,
                &full,
                &Mode::Algorithm1 {
                    schedule: s.clone(),
                },
                1 << 20,
            )
            .unwrap();
            assert!(g.max_abs() < 1e-15, "{}", s.label());
        }
    }
}
