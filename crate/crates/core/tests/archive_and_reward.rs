use alpha_miner::archive::{Archive, InsertOutcome, RejectReason};
use alpha_miner::backtest::{BacktestReport, BehaviorMode, BehaviorProfile};
use alpha_miner::dico_reward::{dico_reward, RewardContext, RewardParams};
use alpha_miner::factor_dsl::{random_expr, signature, validate, Scenario, ValidExpr};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scenario() -> Scenario {
    let mut s = Scenario::cross_sectional("archive");
    s.w_max = 6;
    s.elite_size = 4;
    s
}

fn profile(rng: &mut ChaCha8Rng) -> BehaviorProfile {
    BehaviorProfile {
        mode: BehaviorMode::Ranking,
        timestamps: (0..20).collect(),
        n_assets: 3,
        vector: (0..60).map(|_| Some(rng.random::<f64>())).collect(),
    }
}

fn report(metric: f64, behavior: BehaviorProfile) -> BacktestReport {
    BacktestReport {
        diracc: None,
        ic: Some(metric),
        rankic: Some(metric),
        icir: None,
        ic_series: vec![],
        coverage: 1.0,
        n_periods: 100,
        valid: true,
        executable: true,
        behavior,
        primary_metric_value: Some(metric),
        error: None,
    }
}

fn candidate(rng: &mut ChaCha8Rng, s: &Scenario) -> ValidExpr {
    let depth = rng.random_range(1..4);
    validate(&random_expr(rng, s, depth), s).unwrap()
}

/// Archive filled from `n` random candidates; also returns every attempt.
fn filled(seed: u64, n: usize) -> (Archive, Vec<(ValidExpr, BacktestReport)>) {
    let s = scenario();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Archive::new();
    let mut tried = Vec::new();
    for k in 0..n {
        let e = candidate(&mut rng, &s);
        let r = report(rng.random_range(-0.05..0.2), profile(&mut rng));
        a.try_insert(&e, &r, &s, "task", k as u64).unwrap();
        tried.push((e, r));
    }
    (a, tried)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn indexes_stay_consistent(seed in any::<u64>(), n in 0usize..40) {
        let (a, _) = filled(seed, n);
        let mut hashes: Vec<_> = a.records().iter().map(|r| r.exact_hash).collect();
        hashes.sort();
        hashes.dedup();
        prop_assert_eq!(hashes.len(), a.len());
        prop_assert_eq!(a.families().map(|f| f.count).sum::<usize>(), a.len());
        for r in a.records() {
            prop_assert!(r.metric() >= scenario().quality_threshold);
            prop_assert!(a.contains_exact(&r.exact_hash));
        }
        let seqs: Vec<u64> = a.records().iter().map(|r| r.inserted_at).collect();
        prop_assert!(seqs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn reinserting_is_a_no_op(seed in any::<u64>(), n in 1usize..30) {
        let (mut a, tried) = filled(seed, n);
        let s = scenario();
        let before = a.records().to_vec();
        for (e, r) in &tried {
            let out = a.try_insert(e, r, &s, "again", 99).unwrap();
            prop_assert!(out != InsertOutcome::Inserted);
            // metric gates run before the duplicate check
            let passes = r.primary_metric_value.unwrap() >= s.quality_threshold;
            if passes && a.contains_exact(&signature(e.expr()).exact_hash) {
                prop_assert_eq!(out, InsertOutcome::Rejected(RejectReason::Duplicate));
            }
        }
        prop_assert_eq!(a.records(), &before[..]);
    }

    #[test]
    fn elite_is_sorted_best_first(seed in any::<u64>(), n in 0usize..40, m in 0usize..12) {
        let (a, _) = filled(seed, n);
        let elite = a.elite(m);
        prop_assert_eq!(elite.len(), m.min(a.len()));
        prop_assert!(elite.windows(2).all(|w| w[0].metric() >= w[1].metric()));
        if let Some(last) = elite.last() {
            let outside = a.records().iter().filter(|r| !elite.iter().any(|e| e.exact_hash == r.exact_hash));
            for r in outside {
                prop_assert!(r.metric() <= last.metric());
            }
        }
    }

    #[test]
    fn rebuilding_reproduces_family_stats(seed in any::<u64>(), n in 0usize..40) {
        let (a, _) = filled(seed, n);
        let rebuilt = Archive::from_records(a.records().to_vec()).unwrap();
        prop_assert!(rebuilt.families().eq(a.families()));
        let mut buf = Vec::new();
        a.write_jsonl(&mut buf).unwrap();
        let read = Archive::read_jsonl(buf.as_slice()).unwrap();
        prop_assert_eq!(read.records(), a.records());
        prop_assert!(read.families().eq(a.families()));
    }

    #[test]
    fn reward_total_stays_in_clip_range(seed in any::<u64>(), n in 0usize..30, metric in -3.0f64..3.0, valid in any::<bool>()) {
        let (a, _) = filled(seed, n);
        let s = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let e = candidate(&mut rng, &s);
        let mut r = report(metric, profile(&mut rng));
        r.valid = valid;
        let b = dico_reward(Some(&signature(e.expr())), &r, &s, &RewardContext::new(&a, &s));
        prop_assert!(b.total >= s.reward.r_min && b.total <= s.reward.r_max);
        prop_assert_eq!(b.flags.invalid, !valid);
    }

    #[test]
    fn reward_is_monotone_in_predictive_part(seed in any::<u64>(), n in 0usize..30, lo in -0.5f64..1.0, step in 0.0f64..0.5) {
        let (a, _) = filled(seed, n);
        let s = scenario();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let e = candidate(&mut rng, &s);
        let sig = signature(e.expr());
        let behavior = profile(&mut rng);
        let ctx = RewardContext::new(&a, &s);
        let low = dico_reward(Some(&sig), &report(lo, behavior.clone()), &s, &ctx);
        let high = dico_reward(Some(&sig), &report(lo + step, behavior), &s, &ctx);
        prop_assert!(high.total >= low.total, "{} < {}", high.total, low.total);
    }

    #[test]
    fn zero_weights_leave_only_the_clipped_metric(seed in any::<u64>(), n in 0usize..30, metric in -3.0f64..3.0) {
        let (a, _) = filled(seed, n);
        let mut s = scenario();
        s.reward = RewardParams {
            lambda_exact: 0.0,
            lambda_new: 0.0,
            lambda_fam: 0.0,
            lambda_low: 0.0,
            lambda_corr: 0.0,
            ..s.reward.clone()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = candidate(&mut rng, &s);
        let b = dico_reward(Some(&signature(e.expr())), &report(metric, profile(&mut rng)), &s, &RewardContext::new(&a, &s));
        prop_assert_eq!(b.total, metric.clamp(s.reward.r_min, s.reward.r_max));
    }
}

#[test]
fn shaping_free_params_match_zero_weights() {
    let p = RewardParams::without_shaping();
    assert_eq!(
        (p.lambda_exact, p.lambda_new, p.lambda_fam, p.lambda_low, p.lambda_corr),
        (0.0, 0.0, 0.0, 0.0, 0.0)
    );
}
