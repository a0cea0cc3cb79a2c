use ia_dof_core::converse::{generate_aligned_precoders, linear_upper_bound, rank_ratio_check};
use ia_dof_core::dof_theory::{self, channel_diversity, to_f64, Regime};
use ia_dof_core::rate_eval::{db_to_linear, db_to_log2, least_squares_slope};
use ia_dof_core::scheme::FeasibilityTolerances;
use ia_dof_core::{
    design, sample_instance, verify_feasibility, DesignOptions, LinearScheme, Mode,
    RankTolerancePolicy,
};
use proptest::prelude::*;

fn mode() -> impl Strategy<Value = Mode> {
    prop_oneof![Just(Mode::Css), Just(Mode::Acs)]
}

/// Reduced fraction `2 M L k / (k + 1)` with `k = min(K, D)`, in exact
/// integer arithmetic, independent of the library's rational type.
fn dof_oracle(k: u128, m: u128, l: u128, real_factor: u128) -> (u128, u128) {
    let d = real_factor * m * m * l;
    let k_act = k.min(d);
    let (mut num, mut den) = (2 * m * l * k_act, k_act + 1);
    let g = gcd(num, den);
    num /= g;
    den /= g;
    (num, den)
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

proptest! {
    #[test]
    fn dof_matches_oracle(k in 1usize..200, m in 1usize..8, l in 1usize..4, mode in mode()) {
        let got = dof_theory::dof(k, m, l, mode);
        let (num, den) = dof_oracle(k as u128, m as u128, l as u128, mode.real_factor() as u128);
        prop_assert_eq!(dof_theory::format_ratio(&got), format!("{num}/{den}"));
    }

    #[test]
    fn dof_ordering(k in 1usize..120, m in 1usize..6, l in 1usize..3) {
        let css = dof_theory::dof(k, m, l, Mode::Css);
        let acs = dof_theory::dof(k, m, l, Mode::Acs);
        let upper = dof_theory::upper_it(k, m, l);
        prop_assert!(css <= acs);
        prop_assert!(acs <= upper);
        prop_assert!(dof_theory::dof(k + 1, m, l, Mode::Acs) >= acs);
        match dof_theory::classify(k, m, l) {
            Regime::AllTight => prop_assert!(css == upper),
            Regime::AcsTight => prop_assert!(acs == upper && css < upper),
            Regime::BelowUpper => prop_assert!(acs < upper),
        }
    }

    #[test]
    fn saturated_dof_equals_linear_bound(m in 1usize..6, l in 1usize..3, mode in mode()) {
        let d = channel_diversity(m, l, mode);
        prop_assert_eq!(dof_theory::dof(d + 7, m, l, mode), linear_upper_bound(m, l, mode));
        prop_assert!(to_f64(&linear_upper_bound(m, l, mode)) < (2 * m * l) as f64);
    }

    #[test]
    fn db_conversions_agree(p_db in -40.0f64..80.0) {
        prop_assert!((db_to_linear(p_db).log2() - db_to_log2(p_db)).abs() < 1e-9);
    }

    #[test]
    fn slope_of_affine_data(a in -5.0f64..5.0, b in -10.0f64..10.0) {
        let xs = [0.0, 1.5, 4.0, 9.0];
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        prop_assert!((least_squares_slope(&xs, &ys) - a).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn designed_schemes_are_feasible(
        k in 1usize..7,
        m in 1usize..3,
        mode in mode(),
        seed in any::<u64>(),
    ) {
        let inst = sample_instance(k, m, 1, 1.0, seed).unwrap();
        let scheme = design(&inst, mode, &DesignOptions::default()).unwrap();
        let report = verify_feasibility(&scheme, &inst, &FeasibilityTolerances::default()).unwrap();
        prop_assert!(report.pass, "seed {seed}: {:e}", report.relative_alignment_residual());
        prop_assert_eq!(scheme.achieved_dof(), dof_theory::dof(k, m, 1, mode));

        let back = LinearScheme::from_json(&scheme.to_json().unwrap()).unwrap();
        prop_assert_eq!(back.achieved_dof(), scheme.achieved_dof());
        prop_assert_eq!(back.slots, scheme.slots);
    }

    #[test]
    fn aligned_families_respect_rank_ratio(
        m in 1usize..3,
        mode in mode(),
        r in 1usize..4,
        slots in 2usize..6,
        n in proptest::collection::vec(0usize..4, 2..6),
        seed in any::<u64>(),
    ) {
        let inst = sample_instance(n.len(), m, 1, 1.0, seed).unwrap();
        let dim = mode.real_factor() * m * slots;
        let family = generate_aligned_precoders(&inst, r.min(dim), slots, &n, seed, mode).unwrap();
        let w = rank_ratio_check(&family, &inst, &RankTolerancePolicy::default());
        prop_assert!(w.is_ok(), "{:?}", w.err());
        let w = w.unwrap();
        prop_assert!(w.rank_s <= w.bound);
        prop_assert!(w.r <= family.r());
    }
}
