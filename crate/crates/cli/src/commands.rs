use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use ia_dof_core::converse::{
    falsification_search, generate_aligned_precoders, rank_ratio_check, tightness_witness,
    FalsificationConfig, FalsificationReport, RankRatioWitness,
};
use ia_dof_core::dof_theory::{self, format_ratio, write_sweep_csv};
use ia_dof_core::numlin::derive_seed;
use ia_dof_core::rate_eval::{
    dof_slope, per_user_slopes, sum_rate, write_rates_csv, RatePoint, SlopeEstimate,
};
use ia_dof_core::scheme::{verify_lemma1, FeasibilityTolerances};
use ia_dof_core::{
    design, sample_instance, verify_feasibility, DesignOptions, Error, Mode, RankTolerancePolicy,
};

use crate::output::{
    csv_field, open_output, write_json, CliError, CliResult, OUTPUT_SCHEMA_VERSION,
};
use crate::{Format, InstanceArgs, RankRatioArgs, RatesArgs, SweepArgs, VerifyArgs, THREADS_ENV};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Worker pool capped by the environment, all cores otherwise.
fn pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.trim().parse().ok().filter(|&n| n >= 1).ok_or_else(|| {
            usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))
}

fn check_instance(args: &InstanceArgs, l: usize) -> CliResult<()> {
    if args.k == 0 || args.m == 0 || l == 0 {
        return Err(usage("--K, --M and --L must be >= 1"));
    }
    if !(args.p > 0.0 && args.p.is_finite()) {
        return Err(usage("--P must be positive and finite"));
    }
    if args.t == Some(0) {
        return Err(usage("--T must be >= 1"));
    }
    if args.reference_draws == 0 {
        return Err(usage("--reference-draws must be >= 1"));
    }
    Ok(())
}

fn design_options(args: &InstanceArgs) -> DesignOptions {
    DesignOptions {
        slots_override: args.t,
        reference_draws: args.reference_draws,
        ..Default::default()
    }
}

// ---------------------------------------------------------------------------
// verify / parallel

#[derive(Debug, Clone, Serialize)]
struct TrialRecord {
    trial: usize,
    seed: u64,
    pass: bool,
    #[serde(rename = "T")]
    slots: Option<usize>,
    dof: Option<String>,
    alignment_residual: Option<f64>,
    min_singular: Option<f64>,
    lemma1_rank: Option<usize>,
    lemma1_expected: Option<usize>,
    error: Option<String>,
}

#[derive(Debug, Serialize)]
struct VerifySummary {
    schema_version: u32,
    command: &'static str,
    mode: Mode,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "P")]
    p: f64,
    #[serde(rename = "T")]
    slots: Option<usize>,
    seed: u64,
    trials: usize,
    passed: usize,
    /// Relative to the direct-link scale.
    worst_alignment_residual: f64,
    worst_min_singular: f64,
    feasible_dof: Option<String>,
    expected_dof: String,
    results: Vec<TrialRecord>,
}

fn run_verify_trial(args: &InstanceArgs, l: usize, trial: usize) -> TrialRecord {
    let seed = derive_seed(args.seed, trial as u64);
    let mode: Mode = args.mode.into();
    let mut rec = TrialRecord {
        trial,
        seed,
        pass: false,
        slots: None,
        dof: None,
        alignment_residual: None,
        min_singular: None,
        lemma1_rank: None,
        lemma1_expected: None,
        error: None,
    };
    let run = |rec: &mut TrialRecord| -> ia_dof_core::Result<()> {
        let inst = sample_instance(args.k, args.m, l, args.p, seed)?;
        let scheme = design(&inst, mode, &design_options(args))?;
        rec.slots = Some(scheme.slots);
        rec.dof = Some(format_ratio(&scheme.achieved_dof()));
        let report = verify_feasibility(&scheme, &inst, &FeasibilityTolerances::default())?;
        rec.alignment_residual = Some(report.relative_alignment_residual());
        rec.min_singular = Some(report.relative_min_singular());
        let mut pass = report.pass;
        if mode == Mode::Css {
            let expected = args.m * l * (scheme.active_users + 1);
            let rank = verify_lemma1(&inst, &scheme, &RankTolerancePolicy::default())?.rank;
            rec.lemma1_rank = Some(rank);
            rec.lemma1_expected = Some(expected);
            pass &= rank == expected;
        }
        rec.pass = pass;
        Ok(())
    };
    if let Err(e) = run(&mut rec) {
        rec.error = Some(e.to_string());
    }
    rec
}

pub fn verify(args: VerifyArgs, parallel: bool) -> CliResult<u8> {
    let l = match (args.instance.l, parallel) {
        (Some(l), true) if l < 2 => return Err(usage("parallel needs --L >= 2")),
        (Some(l), _) => l,
        (None, true) => 2,
        (None, false) => 1,
    };
    check_instance(&args.instance, l)?;
    if args.trials == 0 {
        return Err(usage("--trials must be >= 1"));
    }
    let inst_args = args.instance.clone();
    let results: Vec<TrialRecord> = pool()?.install(|| {
        (0..args.trials)
            .into_par_iter()
            .map(|i| run_verify_trial(&inst_args, l, i))
            .collect()
    });

    let mode: Mode = args.instance.mode.into();
    let passed = results.iter().filter(|r| r.pass).count();
    for r in results.iter().filter(|r| !r.pass) {
        eprintln!(
            "trial {} failed (base seed {}, instance seed {}): {}",
            r.trial,
            args.instance.seed,
            r.seed,
            r.error
                .as_deref()
                .unwrap_or("feasibility check did not pass")
        );
    }
    let summary = VerifySummary {
        schema_version: OUTPUT_SCHEMA_VERSION,
        command: if parallel { "parallel" } else { "verify" },
        mode,
        k: args.instance.k,
        m: args.instance.m,
        l,
        p: args.instance.p,
        slots: results.iter().find_map(|r| r.slots),
        seed: args.instance.seed,
        trials: args.trials,
        passed,
        worst_alignment_residual: results
            .iter()
            .filter_map(|r| r.alignment_residual)
            .fold(0.0, f64::max),
        worst_min_singular: results
            .iter()
            .filter_map(|r| r.min_singular)
            .fold(f64::INFINITY, f64::min),
        feasible_dof: results.iter().find_map(|r| r.dof.clone()),
        expected_dof: format_ratio(&dof_theory::dof(args.instance.k, args.instance.m, l, mode)),
        results,
    };

    let mut out = open_output(args.output.out.as_deref())?;
    match args.output.format.unwrap_or(Format::Json) {
        Format::Json => write_json(&mut out, &summary)?,
        Format::Csv => {
            writeln!(
                out,
                "trial,seed,pass,T,dof,alignment_residual,min_singular,lemma1_rank,lemma1_expected,error"
            )?;
            let opt = |v: Option<String>| v.unwrap_or_default();
            for r in &summary.results {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.trial,
                    r.seed,
                    r.pass,
                    opt(r.slots.map(|v| v.to_string())),
                    opt(r.dof.clone()),
                    opt(r.alignment_residual.map(|v| format!("{v:e}"))),
                    opt(r.min_singular.map(|v| format!("{v:e}"))),
                    opt(r.lemma1_rank.map(|v| v.to_string())),
                    opt(r.lemma1_expected.map(|v| v.to_string())),
                    csv_field(&opt(r.error.clone()))
                )?;
            }
        }
    }
    out.flush()?;
    eprintln!(
        "{passed}/{} trials passed; feasible DoF {} (expected {})",
        summary.trials,
        summary.feasible_dof.as_deref().unwrap_or("n/a"),
        summary.expected_dof
    );
    Ok(if passed == summary.trials {
        0
    } else {
        crate::EXIT_FAILED
    })
}

// ---------------------------------------------------------------------------
// sweep

#[derive(Debug, Serialize)]
struct SweepRow {
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "L")]
    l: usize,
    floor_css: String,
    floor_acs: String,
    feasible_css: String,
    feasible_acs: String,
    upper_it: String,
}

#[derive(Debug, Serialize)]
struct SweepDoc {
    schema_version: u32,
    points: Vec<SweepRow>,
}

pub fn sweep(args: SweepArgs) -> CliResult<u8> {
    if args.m.is_empty() || args.m.contains(&0) || args.k == 0 || args.l == 0 {
        return Err(usage("--M entries, --K and --L must be >= 1"));
    }
    let points = dof_theory::sweep(&args.m, args.k, args.l);
    let mut out = open_output(args.output.out.as_deref())?;
    match args.output.format.unwrap_or(Format::Csv) {
        Format::Csv => write_sweep_csv(&points, &mut out)?,
        Format::Json => {
            let doc = SweepDoc {
                schema_version: OUTPUT_SCHEMA_VERSION,
                points: points
                    .iter()
                    .map(|p| SweepRow {
                        k: p.k,
                        m: p.m,
                        l: p.l,
                        floor_css: format_ratio(&p.floor_css),
                        floor_acs: format_ratio(&p.floor_acs),
                        feasible_css: format_ratio(&p.feasible_css),
                        feasible_acs: format_ratio(&p.feasible_acs),
                        upper_it: format_ratio(&p.upper_it),
                    })
                    .collect(),
            };
            write_json(&mut out, &doc)?;
        }
    }
    out.flush()?;
    Ok(0)
}

// ---------------------------------------------------------------------------
// rankratio

#[derive(Debug, Clone)]
struct GridTrial {
    index: usize,
    mode: Mode,
    m: usize,
    r: usize,
    slots: usize,
    seed: u64,
}

enum TrialOutcome {
    Ok(RankRatioWitness),
    Violation(RankRatioWitness),
    Error(String),
}

#[derive(Debug, Serialize)]
struct GroupSummary {
    mode: Mode,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "L")]
    l: usize,
    trials: usize,
    violations: usize,
    /// Largest `rank_S / R` over the grid and the tightness witness.
    max_ratio: f64,
    /// `M^2 L` or `2 M^2 L`.
    ratio_bound: usize,
    tight: bool,
    falsification_probes: usize,
    falsification_violations: usize,
    falsification_best_ratio: f64,
}

#[derive(Debug, Serialize)]
struct RankRatioSummary {
    schema_version: u32,
    command: &'static str,
    seed: u64,
    groups: Vec<GroupSummary>,
    total_violations: usize,
    errors: usize,
}

/// Tightness witness and falsification report of one (mode, M) group.
type GroupExtras = (
    ia_dof_core::Result<RankRatioWitness>,
    ia_dof_core::Result<FalsificationReport>,
);

/// Stream counts in `0..=4`, derived from the trial seed.
fn stream_counts(users: usize, seed: u64) -> Vec<usize> {
    (0..users)
        .map(|k| (derive_seed(seed, 0x5354 + k as u64) % 5) as usize)
        .collect()
}

fn run_grid_trial(t: &GridTrial, users: usize, l: usize) -> TrialOutcome {
    let run = || -> ia_dof_core::Result<RankRatioWitness> {
        let inst = sample_instance(users, t.m, l, 1.0, t.seed)?;
        let dim = t.mode.real_factor() * t.m * l * t.slots;
        let family = generate_aligned_precoders(
            &inst,
            t.r.min(dim),
            t.slots,
            &stream_counts(users, t.seed),
            t.seed,
            t.mode,
        )?;
        rank_ratio_check(&family, &inst, &RankTolerancePolicy::default())
    };
    match run() {
        Ok(w) => TrialOutcome::Ok(w),
        Err(Error::ConverseViolation(w)) => TrialOutcome::Violation(*w),
        Err(e) => TrialOutcome::Error(e.to_string()),
    }
}

pub fn rankratio(args: RankRatioArgs) -> CliResult<u8> {
    if args.m.is_empty() || args.m.contains(&0) || args.l == 0 || args.k == 0 || args.trials == 0 {
        return Err(usage("--M entries, --L, --K and --trials must be >= 1"));
    }
    let modes: Vec<Mode> = match args.mode {
        Some(m) => vec![m.into()],
        None => vec![Mode::Css, Mode::Acs],
    };
    let mut grid = Vec::new();
    for &mode in &modes {
        for &m in &args.m {
            for r in 1..=3 {
                for slots in 2..=8 {
                    for _ in 0..args.trials {
                        let index = grid.len();
                        grid.push(GridTrial {
                            index,
                            mode,
                            m,
                            r,
                            slots,
                            seed: derive_seed(args.seed, index as u64),
                        });
                    }
                }
            }
        }
    }
    let groups: Vec<(Mode, usize)> = modes
        .iter()
        .flat_map(|&mode| args.m.iter().map(move |&m| (mode, m)))
        .collect();
    let policy = RankTolerancePolicy::default();

    let (outcomes, extras): (Vec<TrialOutcome>, Vec<GroupExtras>) = pool()?.install(|| {
        let outcomes = grid
            .par_iter()
            .map(|t| run_grid_trial(t, args.k, args.l))
            .collect();
        let extras = groups
            .par_iter()
            .enumerate()
            .map(|(g, &(mode, m))| {
                let tight =
                    tightness_witness(m, mode, derive_seed(args.seed, 0x7100 + g as u64), &policy);
                let config = FalsificationConfig {
                    mode,
                    m,
                    r: 1,
                    users: 2 * dof_theory::channel_diversity(m, 1, mode),
                    slots_range: (2, 6),
                    max_streams_per_user: 3,
                    probes: args.probes,
                    restart_every: 50,
                    seed: derive_seed(args.seed, 0x7200 + g as u64),
                };
                (tight, falsification_search(&config, &policy))
            })
            .collect();
        (outcomes, extras)
    });

    let mut log = match &args.out {
        Some(path) => Some(open_output(Some(path))?),
        None => None,
    };
    let mut errors = 0;
    let mut summaries = Vec::new();
    for (g, &(mode, m)) in groups.iter().enumerate() {
        let bound = dof_theory::channel_diversity(m, args.l, mode);
        let mut s = GroupSummary {
            mode,
            m,
            l: args.l,
            trials: 0,
            violations: 0,
            max_ratio: 0.0,
            ratio_bound: bound,
            tight: false,
            falsification_probes: 0,
            falsification_violations: 0,
            falsification_best_ratio: 0.0,
        };
        for (t, outcome) in grid
            .iter()
            .zip(&outcomes)
            .filter(|(t, _)| t.mode == mode && t.m == m)
        {
            s.trials += 1;
            let witness = match outcome {
                TrialOutcome::Ok(w) => w,
                TrialOutcome::Violation(w) => {
                    s.violations += 1;
                    eprintln!(
                        "violation at trial {} (seed {}): {}",
                        t.index,
                        t.seed,
                        serde_json::to_string(w)?
                    );
                    w
                }
                TrialOutcome::Error(e) => {
                    errors += 1;
                    eprintln!("trial {} failed (seed {}): {e}", t.index, t.seed);
                    continue;
                }
            };
            s.max_ratio = s.max_ratio.max(witness.ratio());
            if let Some(out) = log.as_mut() {
                serde_json::to_writer(&mut *out, witness)?;
                writeln!(out)?;
            }
        }
        let (tight, falsification) = &extras[g];
        match tight {
            Ok(w) => {
                s.max_ratio = s.max_ratio.max(w.ratio());
                s.tight = w.is_tight() && args.l == 1;
                if let Some(out) = log.as_mut() {
                    serde_json::to_writer(&mut *out, w)?;
                    writeln!(out)?;
                }
            }
            Err(e) => {
                errors += 1;
                eprintln!("tightness witness {mode} M={m} failed: {e}");
            }
        }
        match falsification {
            Ok(rep) => {
                s.falsification_probes = rep.probes;
                s.falsification_violations = rep.violations.len();
                s.falsification_best_ratio = rep.best_ratio;
                for v in &rep.violations {
                    eprintln!(
                        "falsification violation (seed {}): {}",
                        rep.config.seed,
                        serde_json::to_string(v)?
                    );
                }
            }
            Err(e) => {
                errors += 1;
                eprintln!("falsification {mode} M={m} failed: {e}");
            }
        }
        summaries.push(s);
    }
    if let Some(out) = log.as_mut() {
        out.flush()?;
    }
    let total_violations = summaries
        .iter()
        .map(|s| s.violations + s.falsification_violations)
        .sum();
    let summary = RankRatioSummary {
        schema_version: OUTPUT_SCHEMA_VERSION,
        command: "rankratio",
        seed: args.seed,
        groups: summaries,
        total_violations,
        errors,
    };
    let mut stdout = open_output(None)?;
    write_json(&mut stdout, &summary)?;
    stdout.flush()?;
    Ok(if total_violations == 0 && errors == 0 {
        0
    } else {
        crate::EXIT_FAILED
    })
}

// ---------------------------------------------------------------------------
// rates

#[derive(Debug, Serialize)]
struct RatesDoc {
    schema_version: u32,
    command: &'static str,
    mode: Mode,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "L")]
    l: usize,
    #[serde(rename = "T")]
    slots: usize,
    seed: u64,
    achieved_dof: String,
    points: Vec<RatePoint>,
    slope: SlopeEstimate,
    per_user_slopes: [Vec<f64>; 2],
}

pub fn rates(args: RatesArgs) -> CliResult<u8> {
    let l = args.instance.l.unwrap_or(1);
    check_instance(&args.instance, l)?;
    if args.snr.is_empty() || args.snr.iter().any(|s| !s.is_finite()) {
        return Err(usage("--snr must be a nonempty list of finite dB values"));
    }
    let window = match args.window.as_slice() {
        [lo, hi] if lo.is_finite() && hi.is_finite() && hi > lo => (*lo, *hi),
        _ => return Err(usage("--window must be lo,hi with hi > lo")),
    };
    let mode: Mode = args.instance.mode.into();
    let inst = sample_instance(
        args.instance.k,
        args.instance.m,
        l,
        args.instance.p,
        args.instance.seed,
    )?;
    let scheme = design(&inst, mode, &design_options(&args.instance))?;
    let report = verify_feasibility(&scheme, &inst, &FeasibilityTolerances::default())?;
    if !report.pass {
        return Err(CliError::Failed(format!(
            "scheme failed verification (seed {}): alignment residual {:e}, min singular {:e}",
            args.instance.seed,
            report.relative_alignment_residual(),
            report.relative_min_singular()
        )));
    }
    let points = sum_rate(&scheme, &inst, &args.snr)?;
    let target = dof_theory::dof(args.instance.k, args.instance.m, l, mode);
    let slope = dof_slope(&points, window, &target).map_err(|e| match e {
        Error::WindowNotCovered { .. } => usage(e.to_string()),
        other => other.into(),
    })?;
    let per_user = per_user_slopes(&points, window)?;

    let mut out = open_output(args.output.out.as_deref())?;
    match args.output.format.unwrap_or(Format::Csv) {
        Format::Csv => {
            write_rates_csv(&points, &mut out)?;
            out.flush()?;
            let report = serde_json::to_string(&slope)?;
            if args.output.out.is_some() {
                println!("{report}");
            } else {
                eprintln!("{report}");
            }
        }
        Format::Json => {
            let doc = RatesDoc {
                schema_version: OUTPUT_SCHEMA_VERSION,
                command: "rates",
                mode,
                k: args.instance.k,
                m: args.instance.m,
                l,
                slots: scheme.slots,
                seed: args.instance.seed,
                achieved_dof: format_ratio(&scheme.achieved_dof()),
                points,
                slope,
                per_user_slopes: per_user,
            };
            write_json(&mut out, &doc)?;
            out.flush()?;
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_counts_are_bounded_and_deterministic() {
        let a = stream_counts(10, 42);
        assert_eq!(a, stream_counts(10, 42));
        assert!(a.iter().all(|&n| n <= 4));
    }
}
