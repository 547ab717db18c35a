//! Property-based checks of model, engine, and pipeline invariants.

use proptest::prelude::*;
use std::f64::consts::{FRAC_PI_4, TAU};

use noonfi::calibration::{db_to_transmission, transmission_to_db, BudgetSource, LossBudget};
use noonfi::fisher::{
    advantage_closed_form, advantage_ratio, closed_form_f1_max, closed_form_f2_max,
    fisher_information, max_fisher, DerivativeMode, Pairing, DEFAULT_MAX_TOL,
};
use noonfi::model::{
    coincidence_distribution, distinguishable_franson_distribution, noon_output_distribution,
    single_photon_distribution, visibility_from_relative_loss, FransonMode, NoonProbe,
    OutcomeDistribution, Visibility,
};
use noonfi::simulator::{
    route_by_wdm, simulate_fringe_scan, ControlGrid, Port, ScanConfig, ScanProbe, WdmPlan,
};
use noonfi::util::linspace;

fn budget(eta: [f64; 4]) -> LossBudget {
    LossBudget::from_eta(eta, BudgetSource::Derived).unwrap()
}

fn total_probability(dist: &OutcomeDistribution, phi: f64) -> f64 {
    let clicks: f64 = dist.outcomes().iter().map(|o| o.law.prob(phi)).sum();
    clicks + dist.loss_complement().prob(phi)
}

fn arb_eta() -> impl Strategy<Value = f64> {
    0.05f64..=1.0
}

fn arb_v() -> impl Strategy<Value = f64> {
    0.0f64..=0.995
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distributions_stay_normalized(
        e1 in arb_eta(), e2 in arb_eta(), e3 in arb_eta(), e4 in arb_eta(),
        v in arb_v(), phi in 0.0f64..TAU,
    ) {
        let b = budget([e1, e2, e3, e4]);
        let v2 = Visibility::new(v, 2).unwrap();
        let v1 = Visibility::new(v, 1).unwrap();
        let dists = [
            coincidence_distribution(&b, &v2).unwrap(),
            single_photon_distribution(&b, &v1, false).unwrap(),
            single_photon_distribution(&b, &v1, true).unwrap(),
            noon_output_distribution(&NoonProbe::new(2, e1).unwrap()).unwrap(),
            distinguishable_franson_distribution(e1, v, FransonMode::PostSelected).unwrap(),
            distinguishable_franson_distribution(e1, v, FransonMode::Full).unwrap(),
        ];
        for dist in &dists {
            let total = total_probability(dist, phi);
            prop_assert!((total - 1.0).abs() < 1e-12, "total = {total}");
            for outcome in dist.outcomes() {
                let p = outcome.law.prob(phi);
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }

    #[test]
    fn laws_are_periodic(
        e1 in arb_eta(), e2 in arb_eta(), e3 in arb_eta(), e4 in arb_eta(),
        v in arb_v(), phi in 0.0f64..TAU,
    ) {
        let b = budget([e1, e2, e3, e4]);
        let v2 = Visibility::new(v, 2).unwrap();
        let dist = coincidence_distribution(&b, &v2).unwrap();
        let period = dist.domain_period();
        for outcome in dist.outcomes() {
            let delta = (outcome.law.prob(phi) - outcome.law.prob(phi + period)).abs();
            prop_assert!(delta < 1e-12, "{}: {delta}", outcome.label);
        }
    }

    #[test]
    fn finite_difference_matches_analytic(
        e1 in arb_eta(), e2 in arb_eta(), e3 in arb_eta(), e4 in arb_eta(),
        v in arb_v(), phi in 0.0f64..TAU,
    ) {
        let b = budget([e1, e2, e3, e4]);
        let v2 = Visibility::new(v, 2).unwrap();
        let v1 = Visibility::new(v, 1).unwrap();
        for dist in [
            coincidence_distribution(&b, &v2).unwrap(),
            single_photon_distribution(&b, &v1, false).unwrap(),
        ] {
            let a = fisher_information(&dist, phi, DerivativeMode::Analytic).unwrap();
            let fd = fisher_information(&dist, phi, DerivativeMode::FiniteDifference).unwrap();
            prop_assert!(
                (a - fd).abs() <= 1e-6 * a.abs().max(1e-9),
                "analytic {a} vs finite-difference {fd}"
            );
        }
    }

    #[test]
    fn information_is_monotone_in_visibility(
        e1 in arb_eta(), e2 in arb_eta(), e3 in arb_eta(), e4 in arb_eta(),
        v_lo in arb_v(), dv in 0.0f64..=0.5, phi in 0.0f64..TAU,
    ) {
        let b = budget([e1, e2, e3, e4]);
        let v_hi = (v_lo + dv).min(0.995);
        let f = |v: f64| {
            let dist = coincidence_distribution(&b, &Visibility::new(v, 2).unwrap()).unwrap();
            fisher_information(&dist, phi, DerivativeMode::Analytic).unwrap()
        };
        prop_assert!(f(v_lo) <= f(v_hi) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn fringe_contrast_reproduces_visibility(eta_t in 0.05f64..=1.0, n in 1u32..=4) {
        let probe = NoonProbe::new(n, eta_t).unwrap();
        let dist = noon_output_distribution(&probe).unwrap();
        let law = &dist.outcomes()[0].law;
        let period = dist.domain_period();
        // 4096 intervals land exactly on the extrema at 0 and period/2.
        let grid = linspace(0.0, period, 4097);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for phi in grid {
            let p = law.prob(phi);
            lo = lo.min(p);
            hi = hi.max(p);
        }
        let contrast = (hi - lo) / (hi + lo);
        let v = visibility_from_relative_loss(eta_t, n).unwrap().value();
        prop_assert!((contrast - v).abs() < 1e-9, "contrast {contrast} vs V {v}");
    }

    #[test]
    fn visibility_decreases_with_photon_number(eta_t in 0.05f64..=0.999) {
        let mut last = f64::INFINITY;
        for n in 1..=8 {
            let v = visibility_from_relative_loss(eta_t, n).unwrap().value();
            prop_assert!(v < last, "V_{n} = {v} not below {last}");
            last = v;
        }
    }

    #[test]
    fn db_conversion_round_trips(db in 0.0f64..=60.0) {
        let eta = db_to_transmission(db).unwrap();
        prop_assert!((0.0..=1.0).contains(&eta));
        let back = transmission_to_db(eta).unwrap();
        prop_assert!((back - db).abs() < 1e-10, "{db} -> {eta} -> {back}");
    }

    #[test]
    fn closed_forms_respect_budget_symmetries(
        e1 in arb_eta(), e2 in arb_eta(), e3 in arb_eta(), e4 in arb_eta(),
        v in 0.05f64..=0.995,
    ) {
        let v1 = Visibility::new(v, 1).unwrap();
        let v2 = Visibility::new(v, 2).unwrap();
        let f1 = closed_form_f1_max(&budget([e1, e2, e3, e4]), &v1).unwrap();
        let f2 = closed_form_f2_max(&budget([e1, e2, e3, e4]), &v2).unwrap();
        // The single-photon form sees only the sum; any permutation matches.
        for perm in [[e4, e3, e2, e1], [e2, e1, e4, e3], [e3, e4, e1, e2]] {
            let g1 = closed_form_f1_max(&budget(perm), &v1).unwrap();
            prop_assert!((f1 - g1).abs() < 1e-12 * f1.max(1.0));
        }
        // The two-photon form factors as (e1+e3)(e2+e4): swapping within a
        // factor or swapping the factors leaves it unchanged.
        for perm in [[e3, e2, e1, e4], [e1, e4, e3, e2], [e2, e1, e4, e3]] {
            let g2 = closed_form_f2_max(&budget(perm), &v2).unwrap();
            prop_assert!((f2 - g2).abs() < 1e-12 * f2.max(1.0));
        }
    }

    #[test]
    fn common_loss_scaling_is_exact_in_closed_form(
        e1 in arb_eta(), e2 in arb_eta(), e3 in arb_eta(), e4 in arb_eta(),
        v in 0.05f64..=0.995, c in 0.01f64..=1.0,
    ) {
        let v1 = Visibility::new(v, 1).unwrap();
        let v2 = Visibility::new(v, 2).unwrap();
        let base = budget([e1, e2, e3, e4]);
        let scaled = base.scaled(c, BudgetSource::Scenario).unwrap();

        let f1 = closed_form_f1_max(&base, &v1).unwrap();
        let f2 = closed_form_f2_max(&base, &v2).unwrap();
        let f1c = closed_form_f1_max(&scaled, &v1).unwrap();
        let f2c = closed_form_f2_max(&scaled, &v2).unwrap();
        prop_assert!((f1c - c * f1).abs() < 1e-12 * f1.max(1e-9));
        prop_assert!((f2c - c * c * f2).abs() < 1e-12 * f2.max(1e-9));

        let r = advantage_ratio(f2, f1).unwrap();
        let rc = advantage_ratio(f2c, f1c).unwrap();
        prop_assert!((rc - c * r).abs() < 1e-12 * r.max(1e-9));
    }

    #[test]
    fn audit_is_quiet_when_db_matches(
        e1 in arb_eta(), e2 in arb_eta(), e3 in arb_eta(), e4 in arb_eta(),
    ) {
        let eta = [e1, e2, e3, e4];
        let db = eta.map(|e| -10.0 * e.log10());
        let b = LossBudget::with_quoted_db(eta, db, BudgetSource::Derived).unwrap();
        prop_assert!(noonfi::consistency_audit(&b).findings.is_empty());
    }

    #[test]
    fn routing_is_total_over_cross_channel_assignments(
        swap in any::<bool>(), port_a in any::<bool>(), port_b in any::<bool>(),
    ) {
        let plan = WdmPlan::default();
        let channels = if swap { (22, 20) } else { (20, 22) };
        let ports = (
            if port_a { Port::A } else { Port::B },
            if port_b { Port::A } else { Port::B },
        );
        let label = route_by_wdm(&plan, channels, ports).unwrap();
        prop_assert!(["P12", "P14", "P23", "P34"].contains(&label.as_str()));
        prop_assert!(route_by_wdm(&plan, (channels.0, channels.0), ports).is_err());
    }

    #[test]
    fn advantage_report_round_trips_consistently(
        e1 in arb_eta(), e2 in arb_eta(), e3 in arb_eta(), e4 in arb_eta(),
        v in 0.05f64..=0.995,
    ) {
        let b = budget([e1, e2, e3, e4]);
        let v1 = Visibility::new(v, 1).unwrap();
        let v2 = Visibility::new(v, 2).unwrap();
        let report = advantage_closed_form(&b, &v1, &v2, Pairing::AppendixB).unwrap();
        prop_assert!(report.ratio_is_consistent());
        let text = serde_json::to_string(&report).unwrap();
        let back: noonfi::AdvantageReport = serde_json::from_str(&text).unwrap();
        prop_assert!(back.ratio_is_consistent());
        prop_assert_eq!(back, report);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn symmetric_numeric_maximum_matches_closed_form(
        eta in 0.1f64..=1.0, v in 0.05f64..=0.995,
    ) {
        let b = budget([eta; 4]);
        let v2 = Visibility::new(v, 2).unwrap();
        let dist = coincidence_distribution(&b, &v2).unwrap();
        let max = max_fisher(&dist, DEFAULT_MAX_TOL).unwrap();
        let closed = closed_form_f2_max(&b, &v2).unwrap();
        prop_assert!((max.value - closed).abs() < 1e-8);
        // All quadrature points are equivalent maxima by symmetry.
        let q = (max.phi - FRAC_PI_4).rem_euclid(std::f64::consts::FRAC_PI_2);
        let dist_to_quadrature = q.min(std::f64::consts::FRAC_PI_2 - q);
        prop_assert!(dist_to_quadrature < 1e-6, "phi = {}", max.phi);
    }

    #[test]
    fn scans_are_seed_deterministic(seed in any::<u64>()) {
        let config = ScanConfig {
            probe: ScanProbe::TwoPhoton { eta_t: 0.88 },
            budget: budget([0.517, 0.546, 0.649, 0.608]),
            visibility_override: None,
            pair_rate: 1e3,
            dwell_s: 1.0,
            control: ControlGrid::Phase { values: linspace(0.0, TAU, 11) },
            rng_seed: seed,
            accidental_rate: 1.0,
            multi_pair_rate: 0.0,
        };
        let a = simulate_fringe_scan(&config).unwrap();
        let b = simulate_fringe_scan(&config).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fit_is_reparametrization_invariant(seed in any::<u64>(), delta in -3.0f64..=3.0) {
        let config = ScanConfig {
            probe: ScanProbe::TwoPhoton { eta_t: 0.88 },
            budget: budget([0.517, 0.546, 0.649, 0.608]),
            visibility_override: Some(0.97),
            pair_rate: 1e4,
            dwell_s: 1.0,
            control: ControlGrid::Phase { values: linspace(0.0, TAU, 33) },
            rng_seed: seed,
            accidental_rate: 0.0,
            multi_pair_rate: 0.0,
        };
        let base = simulate_fringe_scan(&config).unwrap();
        let mut shifted = base.clone();
        for p in &mut shifted.points {
            p.phi += delta;
        }
        let fit_a = noonfi::fit_fringes(&base, 2).unwrap();
        let fit_b = noonfi::fit_fringes(&shifted, 2).unwrap();
        prop_assert!((fit_a.pooled_visibility - fit_b.pooled_visibility).abs() < 1e-9);
        let period = TAU / 2.0;
        for (a, b) in fit_a.curves.iter().zip(&fit_b.curves) {
            let wrap = (b.phi0 - a.phi0 - delta).rem_euclid(period);
            let dist = wrap.min(period - wrap);
            prop_assert!(dist < 1e-8, "{}: {} vs {}", &a.label, a.phi0, b.phi0);
        }
    }
}

/// Long-run mean of simulated counts converges to the model probabilities:
/// 10^4 repetitions at a fixed phase, 5-sigma bands on each label mean.
#[test]
fn simulated_means_converge_to_the_model() {
    let reps = 10_000;
    let config = ScanConfig {
        probe: ScanProbe::TwoPhoton { eta_t: 0.88 },
        budget: budget([0.517, 0.546, 0.649, 0.608]),
        visibility_override: Some(0.992),
        pair_rate: 1e4,
        dwell_s: 1.0,
        control: ControlGrid::Phase {
            values: vec![FRAC_PI_4; reps],
        },
        rng_seed: 20_260_823,
        accidental_rate: 0.0,
        multi_pair_rate: 0.0,
    };
    let scan = simulate_fringe_scan(&config).unwrap();
    let dist = config.distribution().unwrap();
    let mut detected_fraction = 0.0;
    for (idx, outcome) in dist.outcomes().iter().enumerate() {
        let p = outcome.law.prob(FRAC_PI_4);
        let lambda = 1e4 * p;
        detected_fraction += p;
        let mean = scan
            .points
            .iter()
            .map(|pt| pt.counts[idx] as f64)
            .sum::<f64>()
            / reps as f64;
        let bound = 5.0 * (lambda / reps as f64).sqrt();
        assert!(
            (mean - lambda).abs() < bound,
            "{}: mean {mean} vs lambda {lambda} (5-sigma bound {bound})",
            outcome.label
        );
    }
    assert!(detected_fraction <= 1.0);
}
