use std::collections::{HashMap, HashSet};

use platsim::corrbin::{phi_bounds, rho_to_phi, Dependence, JointBernoulli};
use platsim::decisions::{default_rules, evaluate, EndpointPosteriors, Verdict};
use platsim::math::{beta_cdf, bvn_cdf, std_normal_cdf, std_normal_quantile, Correlation};
use platsim::posterior::{
    prob_exceeds_margin, update, BetaDistribution, BinomialSummary, Memoized,
};
use platsim::trial::{
    run_replication, run_replication_traced, Allocator, Arm, DataSharing, Event, PlatformConfig,
    PlatformResult, Scenario,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corr(r: f64) -> Correlation {
    Correlation::new(r).unwrap()
}

fn beta() -> impl Strategy<Value = BetaDistribution> {
    (0.5f64..150.0, 0.5f64..150.0).prop_map(|(a, b)| BetaDistribution::new(a, b).unwrap())
}

fn marginal() -> impl Strategy<Value = f64> {
    0.02f64..0.98
}

proptest! {
    #[test]
    fn normal_quantile_inverts_cdf(p in 1e-6f64..(1.0 - 1e-6)) {
        let x = std_normal_quantile(p).unwrap();
        prop_assert!((std_normal_cdf(x) - p).abs() < 1e-8);
    }

    #[test]
    fn bivariate_normal_quadrants_decompose(h in -4.0f64..4.0, k in -4.0f64..4.0, rho in -0.99f64..0.99) {
        let sum = bvn_cdf(h, k, corr(rho)) + bvn_cdf(h, -k, corr(-rho));
        prop_assert!((sum - std_normal_cdf(h)).abs() < 1e-6);
    }

    #[test]
    fn bivariate_normal_factorizes_at_zero_correlation(h in -5.0f64..5.0, k in -5.0f64..5.0) {
        let want = std_normal_cdf(h) * std_normal_cdf(k);
        prop_assert!((bvn_cdf(h, k, corr(0.0)) - want).abs() < 1e-7);
    }

    #[test]
    fn beta_cdf_reflects(x in 0.0f64..=1.0, a in 0.1f64..200.0, b in 0.1f64..200.0) {
        let lhs = beta_cdf(x, a, b).unwrap();
        let rhs = 1.0 - beta_cdf(1.0 - x, b, a).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn exceedance_is_nonincreasing_in_margin(e in beta(), s in beta(), d1 in -1.0f64..1.0, d2 in -1.0f64..1.0) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        prop_assert!(prob_exceeds_margin(e, s, lo) >= prob_exceeds_margin(e, s, hi) - 1e-9);
    }

    #[test]
    fn exceedance_is_symmetric_for_identical_posteriors(a in beta()) {
        prop_assert!((prob_exceeds_margin(a, a, 0.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn exceedance_limits(e in beta(), s in beta()) {
        prop_assert!((prob_exceeds_margin(e, s, -1.0) - 1.0).abs() < 1e-12);
        prop_assert!(prob_exceeds_margin(e, s, 1.0) < 1e-12);
        prop_assert!(prob_exceeds_margin(e, s, 1.0 - 1e-9) < 1e-6);
    }

    #[test]
    fn direct_tables_are_valid(a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let scale = (a + b + c).max(1.0);
        let t = JointBernoulli::from_direct(a / scale, b / scale, c / scale).unwrap();
        let cells = t.cells();
        prop_assert!(cells.iter().all(|&p| (0.0..=1.0).contains(&p)));
        prop_assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sens_spec_round_trips(p in marginal(), sens in 0.0f64..=1.0, spec in 0.0f64..=1.0) {
        let t = JointBernoulli::from_sens_spec(p, sens, spec).unwrap();
        let cells = t.cells();
        prop_assert!((cells.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let d = t.diagnostics();
        if let Ok(d) = d {
            prop_assert!((d.sens_sl - sens).abs() < 1e-12);
            prop_assert!((d.spec_sl - spec).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_round_trips(p1 in marginal(), p2 in marginal(), u in 0.0f64..=1.0) {
        let (lo, hi) = phi_bounds(p1, p2).unwrap();
        let phi = lo + u * (hi - lo);
        let t = JointBernoulli::from_phi(p1, p2, phi).unwrap();
        prop_assert!((t.cells().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((t.diagnostics().unwrap().phi - phi).abs() < 1e-10);
    }

    #[test]
    fn latent_normal_tables_are_valid(p1 in marginal(), p2 in marginal(), rho in -1.0f64..=1.0) {
        let t = JointBernoulli::from_latent_normal(p1, p2, corr(rho)).unwrap();
        let c = t.cells();
        prop_assert!(c.iter().all(|&p| p >= 0.0));
        prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-7);
        prop_assert!((t.p1dot() - p1).abs() < 1e-7);
        prop_assert!((t.pdot1() - p2).abs() < 1e-7);
    }

    #[test]
    fn latent_phi_is_monotone_and_bounded(p1 in marginal(), p2 in marginal(), r1 in -1.0f64..=1.0, r2 in -1.0f64..=1.0) {
        let (lo_r, hi_r) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let (lo, hi) = phi_bounds(p1, p2).unwrap();
        let a = rho_to_phi(p1, p2, corr(lo_r)).unwrap();
        let b = rho_to_phi(p1, p2, corr(hi_r)).unwrap();
        prop_assert!(a <= b + 1e-7);
        for phi in [a, b] {
            prop_assert!(phi >= lo - 1e-6 && phi <= hi + 1e-6);
        }
    }

    #[test]
    fn union_is_nonincreasing_in_correlation(p1 in marginal(), p2 in marginal(), r1 in -1.0f64..=1.0, r2 in -1.0f64..=1.0) {
        let (lo_r, hi_r) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let u = |r| JointBernoulli::from_latent_normal(p1, p2, corr(r)).unwrap().union_prob();
        prop_assert!(u(lo_r) >= u(hi_r) - 1e-7);
    }

    #[test]
    fn comonotone_coupling_for_equal_marginals(p in marginal()) {
        let t = JointBernoulli::from_latent_normal(p, p, corr(1.0)).unwrap();
        prop_assert!((t.p11() - p).abs() < 1e-7);
    }
}

fn posteriors(counts: [(u32, u32, u32); 2], n: u32) -> [EndpointPosteriors; 2] {
    counts.map(|(t, c, _)| EndpointPosteriors {
        treatment: update(
            BetaDistribution::UNIFORM,
            BinomialSummary::new(t, n).unwrap(),
        ),
        control: update(
            BetaDistribution::UNIFORM,
            BinomialSummary::new(c, n).unwrap(),
        ),
    })
}

fn counts(n: u32) -> impl Strategy<Value = [(u32, u32, u32); 2]> {
    let one = (0..=n, 0..=n, Just(n));
    [one.clone(), one]
}

proptest! {
    #[test]
    fn evidence_levels_nest(data in (10u32..130).prop_flat_map(counts), analysis in 0usize..3) {
        let post = posteriors(data, data[0].2);
        let verdict = |level| evaluate(&post, &default_rules(level).unwrap(), analysis).verdict;
        if verdict(3) == Verdict::Efficacy {
            prop_assert_eq!(verdict(2), Verdict::Efficacy);
        }
        if verdict(2) == Verdict::Efficacy {
            prop_assert_eq!(verdict(1), Verdict::Efficacy);
        }
    }

    #[test]
    fn efficacy_and_futility_never_coexist_above_level_one(data in counts(75), analysis in 0usize..2, level in 2usize..=3) {
        let post = posteriors(data, 75);
        let d = evaluate(&post, &default_rules(level).unwrap(), analysis);
        let any_efficacy = d.endpoints.iter().any(|e| e.efficacy_met);
        let all_futility = d.endpoints.iter().all(|e| e.futility_met);
        prop_assert!(!(any_efficacy && all_futility));
    }

    #[test]
    fn evaluation_is_deterministic(data in counts(75), analysis in 0usize..3, level in 1usize..=3) {
        let post = posteriors(data, 75);
        let rules = default_rules(level).unwrap();
        prop_assert_eq!(evaluate(&post, &rules, analysis), evaluate(&post, &rules, analysis));
    }

    #[test]
    fn weekly_allocation_conserves_participants(remaining in prop::collection::vec(0u32..10, 1..6), accrual in 0u32..20, warmup in 0u32..7) {
        let mut alloc = Allocator::new();
        let _ = alloc.allocate_weekly_accrual(&vec![100; remaining.len()], warmup);
        let out = alloc.allocate_weekly_accrual(&remaining, accrual);
        let capacity: u32 = remaining.iter().sum();
        prop_assert_eq!(out.len() as u32, accrual.min(capacity));
        for (id, &cap) in remaining.iter().enumerate() {
            prop_assert!(out.iter().filter(|&&c| c == id).count() as u32 <= cap);
        }
    }
}

#[derive(Debug, Clone)]
struct Setup {
    config: PlatformConfig,
    scenario: Scenario,
    seed: u64,
}

fn setup() -> impl Strategy<Value = Setup> {
    (
        prop::sample::select(vec![20u32, 40, 75]),
        prop::bool::ANY,
        1usize..=3,
        (0.05f64..0.7, 0.05f64..0.7),
        -0.5f64..0.8,
        any::<u64>(),
    )
        .prop_map(|(n, concurrent, level, (r1, r2), rho, seed)| {
            let sharing = if concurrent {
                DataSharing::Concurrent
            } else {
                DataSharing::Cohort
            };
            Setup {
                config: PlatformConfig::paper(n, sharing, level).unwrap(),
                scenario: Scenario {
                    soc_rates: [0.10, 0.20],
                    treatment_rates: [r1, r2],
                    dependence: Dependence::LatentNormal(corr(rho)),
                    time_trend_per_week: 0.0,
                },
                seed,
            }
        })
}

fn traced(s: &Setup) -> (PlatformResult, Vec<Event>) {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut log = Vec::new();
    let r = run_replication_traced(
        &s.config,
        &s.scenario,
        &mut rng,
        &mut Memoized::new(),
        &mut log,
    )
    .unwrap();
    (r, log)
}

#[derive(Default, Clone)]
struct CohortState {
    first: Option<u32>,
    last: Option<u32>,
    decided: Option<u32>,
    members: Vec<usize>,
}

struct Enrollee {
    cohort: usize,
    arm: Arm,
    enroll_week: u32,
    outcome_week: u32,
    outcomes: [bool; 2],
}

/// Recomputes every analysis input from the enrollment records that
/// precede it and checks the logged counts against them.
fn replay(log: &[Event], sharing: DataSharing) -> Result<(), TestCaseError> {
    let mut people: Vec<Enrollee> = Vec::new();
    let mut cohorts: HashMap<usize, CohortState> = HashMap::new();
    for event in log {
        match event {
            Event::CohortEntered { cohort, .. } => {
                cohorts.insert(*cohort, CohortState::default());
            }
            Event::Enrolled {
                week,
                cohort,
                arm,
                outcome_week,
                outcomes,
                ..
            } => {
                let c = cohorts.get_mut(cohort).unwrap();
                prop_assert!(c.decided.is_none(), "enrollment into a stopped cohort");
                c.first.get_or_insert(*week);
                c.members.push(people.len());
                people.push(Enrollee {
                    cohort: *cohort,
                    arm: *arm,
                    enroll_week: *week,
                    outcome_week: *outcome_week,
                    outcomes: *outcomes,
                });
            }
            Event::EnrollmentComplete { week, cohort } => {
                cohorts.get_mut(cohort).unwrap().last = Some(*week);
            }
            Event::Analysis {
                week,
                cohort,
                treatment,
                control,
                decision,
                observed,
                ..
            } => {
                let visible = |p: &Enrollee| {
                    let until = cohorts[&p.cohort].decided.map_or(*week, |d| d.min(*week));
                    p.outcome_week <= until
                };
                let own = &cohorts[cohort];
                let mut want_t = [BinomialSummary::default(); 2];
                let mut want_c = [BinomialSummary::default(); 2];
                let mut seen = 0;
                for &i in &own.members {
                    let p = &people[i];
                    if !visible(p) {
                        continue;
                    }
                    seen += 1;
                    let target = if p.arm == Arm::Treatment {
                        &mut want_t
                    } else {
                        &mut want_c
                    };
                    for (s, &o) in target.iter_mut().zip(&p.outcomes) {
                        s.record(o);
                    }
                }
                prop_assert_eq!(seen, *observed);
                prop_assert_eq!(&want_t, treatment);
                let own_controls = want_c;
                if sharing == DataSharing::Concurrent {
                    let first = own.first.unwrap();
                    let last = own.last.unwrap_or(*week);
                    for p in people.iter().filter(|p| p.cohort != *cohort) {
                        if p.arm == Arm::Control
                            && (first..=last).contains(&p.enroll_week)
                            && visible(p)
                        {
                            for (s, &o) in want_c.iter_mut().zip(&p.outcomes) {
                                s.record(o);
                            }
                        }
                    }
                }
                prop_assert_eq!(&want_c, control);
                for k in 0..2 {
                    prop_assert!(control[k].trials() >= own_controls[k].trials());
                    prop_assert!(control[k].successes() >= own_controls[k].successes());
                }
                if decision.verdict != Verdict::Continue {
                    let state = cohorts.get_mut(cohort).unwrap();
                    if state.last.is_none() {
                        state.last = state.members.last().map(|&i| people[i].enroll_week);
                    }
                    state.decided = Some(*week);
                }
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn enrollment_is_conserved(s in setup()) {
        let (result, log) = traced(&s);
        let mut ids = HashSet::new();
        let mut per_arm: HashMap<(usize, Arm), u32> = HashMap::new();
        for e in &log {
            if let Event::Enrolled { participant, cohort, arm, .. } = e {
                prop_assert!(ids.insert(*participant));
                *per_arm.entry((*cohort, *arm)).or_default() += 1;
            }
        }
        prop_assert_eq!(ids.len() as u32, result.total_enrolled);
        prop_assert!(per_arm.values().all(|&v| v <= s.config.n_per_arm));
        prop_assert_eq!(result.cohorts.len(), s.config.cohort_limit as usize);
        for o in &result.cohorts {
            prop_assert_eq!(per_arm.get(&(o.cohort, Arm::Treatment)).copied().unwrap_or(0), o.enrolled_treatment);
            prop_assert_eq!(per_arm.get(&(o.cohort, Arm::Control)).copied().unwrap_or(0), o.enrolled_control);
        }
    }

    #[test]
    fn analyses_use_only_observed_and_pooled_data(s in setup()) {
        let (_, log) = traced(&s);
        replay(&log, s.config.data_sharing)?;
    }

    #[test]
    fn replays_are_bit_identical(s in setup()) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            run_replication(&s.config, &s.scenario, &mut rng, &mut Memoized::new()).unwrap()
        };
        let first = run();
        prop_assert_eq!(&first, &run());
        prop_assert_eq!(&first, &traced(&s).0);
    }
}

#[test]
fn first_interim_follows_the_enrollment_schedule() {
    // Two cohorts entering at week 0 share 6 per week, 3 each, until the
    // third enters at week 24 and the share drops to 2. Cohort 0 holds 72
    // after weeks 0 to 23, 74 after week 24 and reaches 75 in week 25; the
    // 52-week lag puts its first interim at week 77.
    let config = PlatformConfig::paper(75, DataSharing::Cohort, 3).unwrap();
    let scenario = Scenario {
        soc_rates: [0.10, 0.20],
        treatment_rates: [0.10, 0.20],
        dependence: Dependence::LatentNormal(corr(0.0)),
        time_trend_per_week: 0.0,
    };
    let before_third = 24 * 3;
    let expected = 24 + (75u32 - before_third).div_ceil(2) - 1 + 52;
    assert_eq!(expected, 77);
    for seed in 0..5 {
        let s = Setup {
            config: config.clone(),
            scenario,
            seed,
        };
        let (_, log) = traced(&s);
        let first = log
            .iter()
            .find_map(|e| match e {
                Event::Analysis {
                    week, cohort: 0, ..
                } => Some(*week),
                _ => None,
            })
            .unwrap();
        assert_eq!(first, expected);
    }
}
