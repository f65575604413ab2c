use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use hm_core::estimator::DEFAULT_ENUMERATION_BUDGET;
use hm_core::transform::{
    rejection_closed_form, uniform_grid, write_sweep_csv, DEFAULT_GRID_POINTS, SWEEP_HEADER,
};
use hm_core::verify::{run_all, VerifyOptions};
use hm_core::{
    fmt17, trainer, AdvantageSchedule, Corpus, InducedTransform, RefTransform, TabularPolicy,
    TrainerConfig, VarianceConvention,
};

use crate::args::{
    BernsteinArgs, CurvesArgs, GrpoSweepArgs, ModeArg, RejectionCompareArgs, TrainArgs, VarArg,
    VerifyArgs,
};
use crate::output::{emit, resolve};
use crate::spec::{parse_schedule, Target, DEFAULT_REG};

const DEFAULT_SWEEP_M: [usize; 4] = [4, 16, 64, 256];
const DEFAULT_SWEEP_EPS: [f64; 4] = [1e-4, 1e-2, 1e-1, 1.0];
const DEFAULT_COMPARE_M: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];
const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

fn grid(n: Option<usize>) -> Result<Vec<f64>> {
    let n = n.unwrap_or(DEFAULT_GRID_POINTS);
    if n < 2 {
        bail!("--grid must be at least 2 (got {n})");
    }
    Ok(uniform_grid(n))
}

fn opt17(x: Option<f64>) -> String {
    x.map(fmt17).unwrap_or_default()
}

pub fn curves(a: CurvesArgs) -> Result<()> {
    if a.schedule.is_empty() {
        bail!("curves needs at least one --schedule");
    }
    let grid = grid(a.grid)?;
    let reference = a
        .reference
        .as_deref()
        .map(RefTransform::parse)
        .transpose()?;
    if let Some(r) = reference {
        if a.normalize && r.normalized(0.5).is_none() {
            bail!(
                "--normalize needs a reference finite at t = 1 (identity or arcsin), not {}",
                r.name()
            );
        }
    }
    let compare = |t: f64| -> f64 {
        match reference {
            Some(r) if a.normalize => r.normalized(t).expect("checked above"),
            Some(r) => r.value(t),
            None => f64::NAN,
        }
    };

    let mut out = String::from(SWEEP_HEADER);
    if reference.is_some() {
        out.push_str(",ref,difference");
    }
    out.push('\n');
    for spec in &a.schedule {
        let tr = InducedTransform::induced(&parse_schedule(spec, Path::new("."))?);
        let eps = opt17(tr.eps());
        for r in tr.sweep(&grid)? {
            write!(
                out,
                "{},{},{eps},{},{},{},{}",
                tr.label(),
                tr.group_size(),
                fmt17(r.t),
                fmt17(r.h),
                fmt17(r.kappa),
                fmt17(r.h_normalized)
            )?;
            if reference.is_some() {
                let value = if a.normalize { r.h_normalized } else { r.h };
                let c = compare(r.t);
                write!(out, ",{},{}", fmt17(c), fmt17(value - c))?;
            }
            out.push('\n');
        }
    }
    if !a.no_refs {
        for rt in RefTransform::ALL {
            for &t in &grid {
                let (h, normalized) = (rt.value(t), rt.normalized(t));
                write!(
                    out,
                    "{},,,{},{},{},{}",
                    rt.name(),
                    fmt17(t),
                    fmt17(h),
                    fmt17(rt.derivative(t)),
                    opt17(normalized)
                )?;
                if reference.is_some() {
                    let value = if a.normalize {
                        normalized.unwrap_or(f64::NAN)
                    } else {
                        h
                    };
                    let c = compare(t);
                    write!(out, ",{},{}", fmt17(c), fmt17(value - c))?;
                }
                out.push('\n');
            }
        }
    }
    emit(a.out.as_deref(), out.as_bytes())
}

pub fn grpo_sweep(a: GrpoSweepArgs) -> Result<()> {
    let ms = if a.m.is_empty() {
        DEFAULT_SWEEP_M.to_vec()
    } else {
        a.m
    };
    let epss = if a.eps.is_empty() {
        DEFAULT_SWEEP_EPS.to_vec()
    } else {
        a.eps
    };
    let conv = match a.var {
        Some(VarArg::Sample) => VarianceConvention::Sample,
        _ => VarianceConvention::Population,
    };
    let grid = grid(a.grid)?;
    let mut out = Vec::new();
    let mut header = true;
    for &m in &ms {
        for &eps in &epss {
            let tr = InducedTransform::induced(&AdvantageSchedule::grpo_with(m, eps, conv)?);
            let rows = tr.sweep(&grid)?;
            write_sweep_csv(&mut out, &tr, &rows, header)?;
            header = false;
        }
    }
    emit(a.out.as_deref(), &out)
}

pub fn rejection_compare(a: RejectionCompareArgs) -> Result<()> {
    let ms = if a.m.is_empty() {
        DEFAULT_COMPARE_M.to_vec()
    } else {
        a.m
    };
    let grid: Vec<f64> = grid(a.grid)?.into_iter().filter(|&t| t > 0.0).collect();
    let mut out = String::from("M,t,h,log_t_plus_H,difference,bound\n");
    for &m in &ms {
        let tr = InducedTransform::induced(&AdvantageSchedule::mean_of_correct(m)?);
        let hm = hm_core::specfun::harmonic(m as u64)?;
        for &t in &grid {
            let h = tr.eval_h(t)?;
            // Cross-check the incomplete-beta evaluation against the finite form.
            let closed = rejection_closed_form(m, t)?;
            if (h - closed).abs() > 1e-9 * (1.0 + closed.abs()) {
                bail!("h_M({t}) = {h} disagrees with closed form {closed} at M = {m}");
            }
            let log_h = t.ln() + hm;
            let bound = (1.0 - t).powi(m as i32 + 1) / ((m as f64 + 1.0) * t);
            writeln!(
                out,
                "{m},{},{},{},{},{}",
                fmt17(t),
                fmt17(h),
                fmt17(log_h),
                fmt17(h - log_h),
                fmt17(bound)
            )?;
        }
    }
    emit(a.out.as_deref(), out.as_bytes())
}

pub fn bernstein(a: BernsteinArgs) -> Result<()> {
    let target = a
        .target
        .as_deref()
        .ok_or_else(|| anyhow!("bernstein needs --target"))?;
    let m = a.m.ok_or_else(|| anyhow!("bernstein needs --M"))?;
    let target = Target::parse(target, a.reg.unwrap_or(DEFAULT_REG), Path::new("."))?;
    let grid = grid(a.grid)?;
    let sched = target.schedule(m, a.exact)?;

    let mut report = String::from("target,M,sup_error,shrink_factor\n");
    let mut prev: Option<f64> = None;
    for k in 0..3 {
        let mk = m << k;
        let tr = if k == 0 {
            InducedTransform::induced(&sched)
        } else {
            InducedTransform::induced(&target.schedule(mk, a.exact)?)
        };
        let mut sup = 0.0f64;
        for &t in &grid {
            sup = sup.max((tr.eval_kappa(t)? - target.hprime(t)).abs());
        }
        let shrink = prev.map(|p| p / sup);
        writeln!(
            report,
            "{},{mk},{},{}",
            target.name(),
            fmt17(sup),
            opt17(shrink)
        )?;
        prev = Some(sup);
    }

    emit(a.out.as_deref(), sched.to_table().as_bytes())?;
    match &a.report {
        Some(p) => emit(Some(p), report.as_bytes()),
        None => {
            eprint!("{report}");
            Ok(())
        }
    }
}

/// Returns whether every check passed.
pub fn verify(a: VerifyArgs) -> Result<bool> {
    let defaults = VerifyOptions::default();
    let opts = VerifyOptions {
        budget: a
            .budget
            .map(u128::from)
            .unwrap_or(DEFAULT_ENUMERATION_BUDGET),
        seed: a.seed.unwrap_or(defaults.seed),
        mc_draws: a.mc_draws.unwrap_or(defaults.mc_draws),
    };
    if opts.mc_draws < 2 {
        bail!("--mc-draws must be at least 2");
    }
    let results = run_all(&opts);
    let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let mut all = true;
    for r in &results {
        all &= r.passed;
        println!(
            "{}  {:width$}  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} checks passed", results.len());
    Ok(all)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let seed = a
        .seed
        .ok_or_else(|| anyhow!("train needs --seed (flag or config)"))?;
    let corpus_path = a
        .corpus
        .as_deref()
        .ok_or_else(|| anyhow!("train needs --corpus"))?;
    let text = fs::read_to_string(corpus_path)
        .with_context(|| format!("reading {}", corpus_path.display()))?;
    let corpus = Corpus::from_toml(&text)?;
    let eta = a.eta.ok_or_else(|| anyhow!("train needs --eta"))?;
    let steps = a.steps.ok_or_else(|| anyhow!("train needs --steps"))?;

    let mut cfg = match a.mode.unwrap_or(ModeArg::Algorithm1) {
        ModeArg::Algorithm1 => {
            if a.b.is_some() || a.max_attempts.is_some() {
                bail!("--B and --max-attempts apply only to --mode rejection");
            }
            let spec = a
                .schedule
                .as_deref()
                .ok_or_else(|| anyhow!("algorithm1 mode needs --schedule"))?;
            TrainerConfig::algorithm1(parse_schedule(spec, Path::new("."))?, eta, steps, seed)
        }
        ModeArg::Rejection => {
            if a.schedule.is_some() {
                bail!("--schedule applies only to --mode algorithm1");
            }
            let b = a.b.ok_or_else(|| anyhow!("rejection mode needs --B"))?;
            TrainerConfig::rejection(
                b,
                a.max_attempts.unwrap_or(DEFAULT_MAX_ATTEMPTS),
                eta,
                steps,
                seed,
            )
        }
    };
    if let Some(le) = a.log_every {
        cfg.log_every = le;
    }
    cfg.objective = a
        .objective
        .as_deref()
        .map(RefTransform::parse)
        .transpose()?;
    cfg.validate(&corpus)?;

    let mut pol = match &a.init {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("reading {}", p.display()))?;
            TabularPolicy::read_checkpoint(BufReader::new(f))?
        }
        None => TabularPolicy::uniform(&corpus),
    };
    let traj = trainer::train(&mut pol, &corpus, &cfg)?;

    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    emit(a.out.as_deref(), &csv)?;
    if let Some(p) = &a.checkpoint {
        let mut ck = Vec::new();
        pol.write_checkpoint(&mut ck)?;
        emit(Some(p), &ck)?;
    }

    for task in corpus.tasks() {
        eprintln!(
            "final p_correct[{}] = {}",
            task.id(),
            fmt17(pol.p_correct(task)?)
        );
    }
    if traj.skipped_steps > 0 {
        eprintln!("{} of {steps} steps skipped", traj.skipped_steps);
    }
    if !traj.degenerate_prompts.is_empty() {
        eprintln!(
            "prompts with no correct answer: {}",
            traj.degenerate_prompts.join(", ")
        );
    }
    match &a.checkpoint {
        Some(p) => eprintln!("checkpoint written to {}", resolve(p).display()),
        None => eprintln!("no --checkpoint given; final policy not saved"),
    }
    Ok(())
}
