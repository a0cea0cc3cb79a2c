//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use ia_dof_core::channel::{sample_instance, Mode};
use ia_dof_core::converse::{
    audit_decomposition, check_p_identity, falsification_search, generate_aligned_precoders,
    pairing_reduction_check, rank_ratio_check, tightness_witness, FalsificationConfig,
};
use ia_dof_core::dof_theory::{self, format_ratio, write_sweep_csv};
use ia_dof_core::numlin::{derive_seed, RankTolerancePolicy};
use ia_dof_core::rate_eval::{db_grid, dof_slope, per_user_slopes, sum_rate};
use ia_dof_core::scheme::{
    check_f_independence, design, verify_feasibility, verify_lemma1, DesignOptions,
    FeasibilityTolerances,
};
use ia_dof_core::Error;

const BASE_SEED: u64 = 20_240_601;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(failures: Vec<String>, summary: String) -> Self {
        if failures.is_empty() {
            Self {
                pass: true,
                detail: summary,
            }
        } else {
            let shown: Vec<&String> = failures.iter().take(5).collect();
            Self {
                pass: false,
                detail: format!("{summary}; {} failure(s): {shown:?}", failures.len()),
            }
        }
    }
}

fn policy() -> RankTolerancePolicy {
    RankTolerancePolicy::default()
}

/// Reduced fraction `(num, den)` with `den > 0`.
fn frac(num: u128, den: u128) -> (u128, u128) {
    fn gcd(a: u128, b: u128) -> u128 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let g = gcd(num, den);
    (num / g, den / g)
}

fn frac_str(f: (u128, u128)) -> String {
    format!("{}/{}", f.0, f.1)
}

/// Piecewise sum-DoF, written out independently of the library.
fn oracle_dof(k: u128, m: u128, l: u128, acs: bool) -> (u128, u128) {
    let d = if acs { 2 * m * m * l } else { m * m * l };
    if k <= d {
        frac(2 * k * m * l, k + 1)
    } else if acs {
        frac(4 * m * m * m * l * l, 2 * m * m * l + 1)
    } else {
        frac(2 * m * m * m * l * l, m * m * l + 1)
    }
}

fn criterion_1() -> Outcome {
    let mut failures = Vec::new();
    let mut checked = 0;
    for k in 1..=40u128 {
        for m in 1..=4u128 {
            for l in 1..=3u128 {
                for (mode, acs) in [(Mode::Css, false), (Mode::Acs, true)] {
                    let got =
                        format_ratio(&dof_theory::dof(k as usize, m as usize, l as usize, mode));
                    let want = frac_str(oracle_dof(k, m, l, acs));
                    checked += 1;
                    if got != want {
                        failures.push(format!("K={k} M={m} L={l} {mode}: {got} != {want}"));
                    }
                }
            }
        }
    }
    let spots = [
        (5, 2, 1, Mode::Css, "16/5"),
        (20, 2, 1, Mode::Css, "16/5"),
        (9, 2, 1, Mode::Acs, "32/9"),
        (40, 2, 1, Mode::Acs, "32/9"),
        (10, 3, 1, Mode::Css, "27/5"),
        (8, 2, 2, Mode::Css, "64/9"),
    ];
    for (k, m, l, mode, want) in spots {
        let got = format_ratio(&dof_theory::dof(k, m, l, mode));
        if got != want {
            failures.push(format!("spot K={k} M={m} L={l} {mode}: {got} != {want}"));
        }
    }
    Outcome::new(
        failures,
        format!(
            "{checked} table entries and {} spot values exact",
            spots.len()
        ),
    )
}

fn criterion_2() -> Outcome {
    let tol = FeasibilityTolerances::default();
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for (k, m, mode, slots, want) in [
        (4, 2, Mode::Css, 5, "16/5"),
        (2, 3, Mode::Css, 3, "4/1"),
        (8, 2, Mode::Acs, 9, "32/9"),
    ] {
        let mut passed = 0;
        let mut worst_res = 0.0_f64;
        let mut worst_sv = f64::INFINITY;
        for trial in 0..100u64 {
            let seed = derive_seed(BASE_SEED + 2, trial);
            let run = || -> ia_dof_core::Result<(bool, f64, f64, String, usize)> {
                let inst = sample_instance(k, m, 1, 1.0, seed)?;
                let scheme = design(&inst, mode, &DesignOptions::default())?;
                let report = verify_feasibility(&scheme, &inst, &tol)?;
                Ok((
                    report.pass,
                    report.relative_alignment_residual(),
                    report.relative_min_singular(),
                    format_ratio(&scheme.achieved_dof()),
                    scheme.slots,
                ))
            };
            match run() {
                Ok((pass, res, sv, dof, t)) => {
                    worst_res = worst_res.max(res);
                    worst_sv = worst_sv.min(sv);
                    if pass && res < 1e-8 && sv > 1e-6 && dof == want && t == slots {
                        passed += 1;
                    } else {
                        failures.push(format!(
                            "K={k} M={m} {mode} trial {trial} seed {seed}: pass={pass} res={res:e} sv={sv:e} dof={dof} T={t}"
                        ));
                    }
                }
                Err(e) => {
                    failures.push(format!("K={k} M={m} {mode} trial {trial} seed {seed}: {e}"))
                }
            }
        }
        parts.push(format!(
            "(K={k},M={m},{mode},T={slots}) {passed}/100 dof {want} worst residual {worst_res:.1e} min sv {worst_sv:.1e}"
        ));
    }
    Outcome::new(failures, parts.join("; "))
}

fn criterion_3() -> Outcome {
    let p = policy();
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for (k, m) in [(2, 2), (4, 2), (3, 3), (9, 3)] {
        let mut passed = 0;
        for trial in 0..100u64 {
            let seed = derive_seed(BASE_SEED + 3, trial);
            let run = || -> ia_dof_core::Result<usize> {
                let inst = sample_instance(k, m, 1, 1.0, seed)?;
                let scheme = design(&inst, Mode::Css, &DesignOptions::default())?;
                Ok(verify_lemma1(&inst, &scheme, &p)?.rank)
            };
            match run() {
                Ok(r) if r == m * (k + 1) => passed += 1,
                Ok(r) => failures.push(format!(
                    "lemma1 K={k} M={m} seed {seed}: rank {r} != {}",
                    m * (k + 1)
                )),
                Err(e) => failures.push(format!("lemma1 K={k} M={m} seed {seed}: {e}")),
            }
        }
        parts.push(format!("[R|S] (K={k},M={m}) {passed}/100"));
    }
    for m in [2, 3] {
        let k_test = m * m + 1;
        let mut passed = 0;
        for trial in 0..100u64 {
            let seed = derive_seed(BASE_SEED + 30, trial);
            let rank = sample_instance(k_test, m, 1, 1.0, seed)
                .and_then(|inst| check_f_independence(&inst, k_test, &p));
            match rank {
                Ok(r) if r.rank == m * m => passed += 1,
                Ok(r) => {
                    failures.push(format!("F M={m} seed {seed}: rank {} != {}", r.rank, m * m))
                }
                Err(e) => failures.push(format!("F M={m} seed {seed}: {e}")),
            }
        }
        parts.push(format!(
            "vec(F) K_test={k_test} M={m} rank {} in {passed}/100",
            m * m
        ));
    }
    Outcome::new(failures, parts.join("; "))
}

fn criterion_4() -> Outcome {
    use rand::{Rng, SeedableRng};
    let p = policy();
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for mode in [Mode::Css, Mode::Acs] {
        let mut trials = 0;
        let mut max_ratio = 0.0_f64;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(BASE_SEED + 4);
        for m in 1..=3usize {
            for r in 1..=3usize {
                for t in 2..=8usize {
                    for rep in 0..4u64 {
                        let l = if rep == 3 && m == 1 { 2 } else { 1 };
                        let users = 6;
                        let n: Vec<usize> = (0..users).map(|_| rng.random_range(0..=4)).collect();
                        let seed = derive_seed(BASE_SEED + 40, trials as u64);
                        let dim = mode.real_factor() * m * l * t;
                        let run = || -> ia_dof_core::Result<_> {
                            let inst = sample_instance(users, m, l, 1.0, seed)?;
                            let fam =
                                generate_aligned_precoders(&inst, r.min(dim), t, &n, seed, mode)?;
                            rank_ratio_check(&fam, &inst, &p)
                        };
                        trials += 1;
                        match run() {
                            Ok(w) => {
                                max_ratio = max_ratio
                                    .max(w.ratio() / (mode.real_factor() * m * m * l) as f64)
                            }
                            Err(e) => failures.push(format!(
                                "{mode} M={m} L={l} R={r} T={t} n={n:?} seed {seed}: {e}"
                            )),
                        }
                    }
                }
            }
        }
        let mut tight = Vec::new();
        for m in 1..=3 {
            match tightness_witness(m, mode, derive_seed(BASE_SEED + 41, m as u64), &p) {
                Ok(w) if w.is_tight() => tight.push(format!("M={m}:{}={}", w.rank_s, w.bound)),
                Ok(w) => failures.push(format!(
                    "{mode} tightness M={m}: rank_S {} < bound {}",
                    w.rank_s, w.bound
                )),
                Err(e) => failures.push(format!("{mode} tightness M={m}: {e}")),
            }
        }
        let mut probes = 0;
        let mut violations = 0;
        for (i, (m, r)) in [(1, 1), (2, 1), (2, 2), (3, 1)].into_iter().enumerate() {
            let config = FalsificationConfig {
                mode,
                m,
                r,
                users: 2 * mode.real_factor() * m * m,
                slots_range: (2, 6),
                max_streams_per_user: 3,
                probes: 300,
                restart_every: 50,
                seed: derive_seed(BASE_SEED + 42, i as u64),
            };
            match falsification_search(&config, &p) {
                Ok(rep) => {
                    probes += rep.probes;
                    violations += rep.violations.len();
                    for v in &rep.violations {
                        failures.push(format!("falsification {mode} M={m}: {v:?}"));
                    }
                }
                Err(e) => failures.push(format!("falsification {mode} M={m} R={r}: {e}")),
            }
        }
        if probes < 1000 {
            failures.push(format!("{mode}: only {probes} falsification probes"));
        }
        parts.push(format!(
            "{mode}: {trials} trials, max rank_S/(D R) {max_ratio:.3}, tight [{}], {probes} probes {violations} violations",
            tight.join(" ")
        ));
        if trials < 200 {
            failures.push(format!("{mode}: only {trials} trials"));
        }
    }
    Outcome::new(failures, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let p = policy();
    let mut failures = Vec::new();
    let mut worst_recon = 0.0_f64;
    let mut audits = 0;
    for (i, (m, mode, t, r)) in [
        (1, Mode::Css, 3, 2),
        (2, Mode::Css, 4, 2),
        (3, Mode::Css, 3, 1),
        (1, Mode::Acs, 3, 2),
        (2, Mode::Acs, 4, 1),
        (3, Mode::Acs, 2, 2),
    ]
    .into_iter()
    .enumerate()
    {
        for trial in 0..5u64 {
            let seed = derive_seed(BASE_SEED + 5, 10 * i as u64 + trial);
            let run = || -> ia_dof_core::Result<_> {
                let inst = sample_instance(4, m, 1, 1.0, seed)?;
                let fam = generate_aligned_precoders(&inst, r, t, &[2, 1, 0, 3], seed, mode)?;
                audit_decomposition(&fam, &inst, &p)
            };
            audits += 1;
            match run() {
                Ok(a) => {
                    worst_recon = worst_recon.max(a.reconstruction_error);
                    if a.reconstruction_error > 1e-10 || !a.chain_holds {
                        failures.push(format!(
                            "{mode} M={m} seed {seed}: recon {:e}",
                            a.reconstruction_error
                        ));
                    }
                    if let Some(b) = a.b_ranks.iter().flatten().find(|&&b| b > a.b_rank_bound) {
                        failures.push(format!(
                            "{mode} M={m} seed {seed}: rank(B) {b} > {}",
                            a.b_rank_bound
                        ));
                    }
                }
                Err(e) => failures.push(format!("{mode} M={m} seed {seed}: {e}")),
            }
        }
    }

    let mut worst_p = 0.0_f64;
    for m in 1..=3 {
        for trial in 0..20u64 {
            let seed = derive_seed(BASE_SEED + 50, 100 * m as u64 + trial);
            match sample_instance(4, m, 1, 1.0, seed).and_then(|inst| check_p_identity(&inst)) {
                Ok(rep) => {
                    worst_p = worst_p.max(rep.max_deviation);
                    if !rep.holds(1e-12) {
                        failures.push(format!(
                            "P identity M={m} seed {seed}: {:e}",
                            rep.max_deviation
                        ));
                    }
                }
                Err(e) => failures.push(format!("P identity M={m} seed {seed}: {e}")),
            }
        }
    }

    let mut worst_pair = 0.0_f64;
    for m in 1..=3 {
        for trial in 0..5u64 {
            let seed = derive_seed(BASE_SEED + 51, 100 * m as u64 + trial);
            let run = || -> ia_dof_core::Result<_> {
                let inst = sample_instance(3, m, 1, 1.0, seed)?;
                let fam = generate_aligned_precoders(&inst, 2, 4, &[2, 2, 1], seed, Mode::Acs)?;
                pairing_reduction_check(&fam, &inst, &p)
            };
            match run() {
                Ok(rep) => {
                    worst_pair = worst_pair
                        .max(rep.max_pair_residual)
                        .max(rep.max_reconstruction_residual);
                    if rep.max_pair_residual > 1e-10
                        || rep.max_reconstruction_residual > 1e-10
                        || !rep.counting_holds()
                    {
                        failures.push(format!("pairing M={m} seed {seed}: {rep:?}"));
                    }
                }
                Err(e) => failures.push(format!("pairing M={m} seed {seed}: {e}")),
            }
        }
    }
    Outcome::new(
        failures,
        format!(
            "{audits} B_rm audits worst reconstruction {worst_recon:.1e}; P identity worst {worst_p:.1e}; pairing worst {worst_pair:.1e}"
        ),
    )
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Slopes are judged on the median instance of a seeded ensemble; the
/// fraction of individual instances within tolerance and the error of the
/// ensemble-mean slope are reported alongside.
fn criterion_6() -> Outcome {
    const INSTANCES: u64 = 21;
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    let grid = db_grid(50.0, 60.0, 1.0);
    for (k, m, l, mode, want) in [
        (4, 2, 1, Mode::Css, "16/5"),
        (8, 2, 1, Mode::Acs, "32/9"),
        (8, 2, 2, Mode::Css, "64/9"),
    ] {
        let target = dof_theory::dof(k, m, l, mode);
        let target_value = dof_theory::to_f64(&target);
        if format_ratio(&target) != want {
            failures.push(format!(
                "K={k} M={m} L={l} {mode}: target {} != {want}",
                format_ratio(&target)
            ));
        }
        let mut slopes = Vec::new();
        let mut user_slopes: Vec<Vec<f64>> = Vec::new();
        let mut per_user = 0.0;
        for trial in 0..INSTANCES {
            let seed = derive_seed(BASE_SEED + 6, trial);
            let run = || -> ia_dof_core::Result<_> {
                let inst = sample_instance(k, m, l, 1.0, seed)?;
                let scheme = design(&inst, mode, &DesignOptions::default())?;
                let pts = sum_rate(&scheme, &inst, &grid)?;
                let est = dof_slope(&pts, (50.0, 60.0), &target)?;
                let users = per_user_slopes(&pts, (50.0, 60.0))?;
                let active: Vec<f64> = users
                    .iter()
                    .flat_map(|row| row.iter().take(scheme.active_users).copied())
                    .collect();
                // each active user: M L / (K_act + 1)
                Ok((
                    est.slope,
                    active,
                    (m * l) as f64 / (scheme.active_users + 1) as f64,
                ))
            };
            match run() {
                Ok((slope, active, pu)) => {
                    slopes.push(slope);
                    if user_slopes.is_empty() {
                        user_slopes = vec![Vec::new(); active.len()];
                    }
                    for (acc, s) in user_slopes.iter_mut().zip(active) {
                        acc.push(s);
                    }
                    per_user = pu;
                }
                Err(e) => failures.push(format!("K={k} M={m} L={l} {mode} seed {seed}: {e}")),
            }
        }
        if slopes.is_empty() {
            continue;
        }
        let rel = |s: f64| (s - target_value).abs() / target_value;
        let within = slopes.iter().filter(|&&s| rel(s) < 0.02).count();
        let mean = slopes.iter().sum::<f64>() / slopes.len() as f64;
        let med = median(slopes.clone());
        let user_err = user_slopes
            .iter()
            .map(|u| (median(u.clone()) - per_user).abs() / per_user)
            .fold(0.0, f64::max);
        if rel(med) >= 0.02 || user_err >= 0.05 {
            failures.push(format!(
                "K={k} M={m} L={l} {mode}: median slope {med:.4} (rel {:.4}) per-user median err {user_err:.4}",
                rel(med)
            ));
        }
        parts.push(format!(
            "(K={k},M={m},L={l},{mode}) target {want}: median slope {med:.4} rel err {:.4}, per-user err {user_err:.4}, \
             {within}/{} instances within 2%, ensemble-mean rel err {:.4}",
            rel(med),
            slopes.len(),
            rel(mean)
        ));
    }
    Outcome::new(failures, parts.join("; "))
}

/// Parses `"num/den"` into an exact pair.
fn parse_frac(s: &str) -> (u128, u128) {
    let (n, d) = s.split_once('/').expect("num/den");
    frac(n.parse().unwrap(), d.parse().unwrap())
}

fn less(a: (u128, u128), b: (u128, u128)) -> bool {
    a.0 * b.1 < b.0 * a.1
}

fn criterion_7() -> Outcome {
    let mut failures = Vec::new();
    let mut rows = 0;
    for l in 1..=3 {
        let points = dof_theory::sweep(&[1, 2, 3, 4], 40, l);
        let mut buf = Vec::new();
        write_sweep_csv(&points, &mut buf).expect("in-memory write");
        let text = String::from_utf8(buf).expect("utf8");
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
        let col = |name: &str| {
            header
                .iter()
                .position(|h| *h == name)
                .expect("column present")
        };
        let (ck, cm, cl) = (col("K"), col("M"), col("L"));
        let (ccss, cacs, cup) = (col("feasible_css"), col("feasible_acs"), col("upper_it"));
        for line in lines {
            rows += 1;
            let f: Vec<&str> = line.split(',').collect();
            let (k, m, l): (usize, usize, usize) = (
                f[ck].parse().unwrap(),
                f[cm].parse().unwrap(),
                f[cl].parse().unwrap(),
            );
            let (css, acs, up) = (parse_frac(f[ccss]), parse_frac(f[cacs]), parse_frac(f[cup]));
            let ok = if k <= m * m * l {
                css == acs && acs == up
            } else if k <= 2 * m * m * l {
                less(css, acs) && acs == up
            } else {
                less(acs, up)
            };
            if !ok {
                failures.push(format!(
                    "K={k} M={m} L={l}: css {css:?} acs {acs:?} upper {up:?}"
                ));
            }
        }
    }
    Outcome::new(failures, format!("{rows} sweep rows classified"))
}

fn criterion_8() -> Outcome {
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for (k, m, mode, t) in [
        (4, 2, Mode::Css, 4),
        (4, 2, Mode::Css, 3),
        (8, 2, Mode::Acs, 8),
    ] {
        let seed = derive_seed(BASE_SEED + 8, t as u64);
        let opts = DesignOptions {
            slots_override: Some(t),
            ..Default::default()
        };
        match sample_instance(k, m, 1, 1.0, seed).and_then(|inst| design(&inst, mode, &opts)) {
            Err(Error::Infeasible { .. }) => parts.push(format!("{mode} K={k} T={t} infeasible")),
            Err(e) => failures.push(format!(
                "{mode} K={k} T={t} seed {seed}: unexpected error {e}"
            )),
            Ok(_) => failures.push(format!(
                "{mode} K={k} T={t} seed {seed}: design succeeded silently"
            )),
        }
    }
    for trial in 0..5u64 {
        let seed = derive_seed(BASE_SEED + 80, trial);
        let run = || -> ia_dof_core::Result<_> {
            let inst = sample_instance(4, 2, 1, 1.0, seed)?;
            let mut scheme = design(&inst, Mode::Css, &DesignOptions::default())?;
            scheme.sabotage_precoder(
                0,
                (trial % 4) as usize,
                (trial % 2) as usize,
                derive_seed(seed, 99),
            )?;
            let report = verify_feasibility(&scheme, &inst, &FeasibilityTolerances::default())?;
            let pts = sum_rate(&scheme, &inst, &db_grid(50.0, 60.0, 1.0))?;
            let est = dof_slope(&pts, (50.0, 60.0), &dof_theory::rational(16, 5))?;
            Ok((report.relative_alignment_residual(), report.pass, est.slope))
        };
        match run() {
            Ok((res, pass, slope)) => {
                if res < 1e-3 || pass || slope >= 0.5 * 3.2 {
                    failures.push(format!(
                        "sabotage seed {seed}: residual {res:e} pass {pass} slope {slope:.3}"
                    ));
                } else if trial == 0 {
                    parts.push(format!("sabotage residual {res:.1e}, slope {slope:.3}"));
                }
            }
            Err(e) => failures.push(format!("sabotage seed {seed}: {e}")),
        }
    }
    Outcome::new(failures, parts.join("; "))
}

/// Name, check, time budget.
type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("exact DoF tables", criterion_1, Duration::from_secs(1)),
        (
            "feasibility Monte Carlo",
            criterion_2,
            Duration::from_secs(60),
        ),
        (
            "Lemma 1 and F independence",
            criterion_3,
            Duration::from_secs(60),
        ),
        ("rank-ratio bounds", criterion_4, Duration::from_secs(300)),
        ("structural audits", criterion_5, Duration::from_secs(60)),
        ("DoF slope", criterion_6, Duration::from_secs(60)),
        (
            "regime classification",
            criterion_7,
            Duration::from_secs(60),
        ),
        ("negative controls", criterion_8, Duration::from_secs(60)),
    ];
    let mut all = true;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = run();
        let elapsed = start.elapsed();
        if elapsed > *budget {
            outcome.pass = false;
            outcome
                .detail
                .push_str(&format!("; exceeded budget {budget:?}"));
        }
        all &= outcome.pass;
        println!(
            "{} criterion {}: {name} ({:.2}s) {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            outcome.detail
        );
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
