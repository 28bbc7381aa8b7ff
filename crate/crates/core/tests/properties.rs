mod common;

use proptest::prelude::*;

use riskcascade::analysis::{
    extract_features, parse_analysis, vectorize, Analyst, DistressLevel, FeatureCache, FeatureVector, FundamentalAnalysis,
};
use riskcascade::cascade::{
    check_feasible, ml_vote, optimize_weights, route_tokens, EnsembleWeights, RoutingConfig, RoutingDecision, ScoreVector,
};
use riskcascade::data::{Dataset, Label, Post, Probability, Split};
use riskcascade::eval::{confusion, cross_domain_gap, metrics, ConfusionCounts, MetricSet};

fn distress() -> impl Strategy<Value = DistressLevel> {
    prop_oneof![
        Just(DistressLevel::Low),
        Just(DistressLevel::Medium),
        Just(DistressLevel::High),
        Just(DistressLevel::Unknown),
    ]
}

fn analysis() -> impl Strategy<Value = FundamentalAnalysis> {
    (any::<bool>(), distress(), any::<bool>(), any::<bool>(), any::<bool>(), ".{0,200}").prop_map(
        |(suicide_intent, emotional_distress_level, has_plan, is_metaphor, farewell_hint, reasoning)| FundamentalAnalysis {
            suicide_intent,
            emotional_distress_level,
            has_plan,
            is_metaphor,
            farewell_hint,
            reasoning,
        },
    )
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Suicide), Just(Label::NonSuicide)]
}

fn decision_rank(d: &RoutingDecision) -> u8 {
    match d {
        RoutingDecision::Accept {
            label: Label::NonSuicide,
            ..
        } => 0,
        RoutingDecision::Escalate { .. } => 1,
        RoutingDecision::Accept {
            label: Label::Suicide,
            ..
        } => 2,
    }
}

fn metric_set() -> impl Strategy<Value = MetricSet> {
    (0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(accuracy, precision, recall, f1)| MetricSet {
        accuracy,
        precision,
        recall,
        f1,
    })
}

proptest! {
    #[test]
    fn vectorize_respects_the_schema(a in analysis()) {
        let v = vectorize(&a);
        let x = v.values();
        prop_assert_eq!(x[1] + x[2] + x[3] + x[4], 1.0);
        for slot in [0, 5, 6, 7] {
            prop_assert!(x[slot] == 0.0 || x[slot] == 1.0);
        }
        prop_assert_eq!(x[8], a.reasoning.chars().count() as f64);
        prop_assert!(FeatureVector::new(*x).is_ok());
    }

    #[test]
    fn parse_inverts_serialize(a in analysis()) {
        prop_assert_eq!(parse_analysis(&a.to_json()).unwrap(), a.clone());
        let wrapped = format!("Sure, here it is:\n{}\nHope that helps.", a.to_json());
        prop_assert_eq!(parse_analysis(&wrapped).unwrap(), a);
    }

    #[test]
    fn route_is_monotone_in_probability(
        tokens in 0usize..600,
        p in 0.0..=1.0f64,
        q in 0.0..=1.0f64,
        lo in 0.0..0.5f64,
        hi in 0.5..=1.0f64,
    ) {
        prop_assume!(lo < hi);
        let cfg = RoutingConfig::new(lo, hi, 256).unwrap();
        let (a, b) = if p <= q { (p, q) } else { (q, p) };
        let da = route_tokens(tokens, Probability::new(a).unwrap(), &cfg);
        let db = route_tokens(tokens, Probability::new(b).unwrap(), &cfg);
        prop_assert!(decision_rank(&da) <= decision_rank(&db));
        if tokens > 256 {
            prop_assert!(!da.is_accept() && !db.is_accept());
        }
    }

    #[test]
    fn ml_vote_stays_within_the_scores(raw in prop::collection::vec((0.0..=1.0f64, 0.001..1.0f64), 1..8)) {
        let total: f64 = raw.iter().map(|(_, w)| w).sum();
        let weights: Vec<f64> = raw.iter().map(|(_, w)| w / total).collect();
        let scores: Vec<f64> = raw.iter().map(|(p, _)| *p).collect();
        let w = EnsembleWeights::new(weights, 1.0).unwrap();
        let (_, p) = ml_vote(&ScoreVector::new(scores.clone()).unwrap(), &w, 0.5).unwrap();
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(p.value() >= lo - 1e-12 && p.value() <= hi + 1e-12);
    }

    #[test]
    fn confusion_ignores_joint_order(pairs in prop::collection::vec((label(), label()), 1..60), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (preds, gold): (Vec<Label>, Vec<Label>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let (sp, sg): (Vec<Label>, Vec<Label>) = shuffled.into_iter().unzip();
        let c = confusion(&preds, &gold).unwrap();
        prop_assert_eq!(c, confusion(&sp, &sg).unwrap());
        prop_assert_eq!(c.total(), pairs.len());
    }

    #[test]
    fn metrics_are_bounded_and_f1_recomputes(tp in 0usize..50, fp in 0usize..50, fn_ in 0usize..50, tn in 0usize..50) {
        let c = ConfusionCounts { tp, fp, fn_, tn };
        prop_assume!(c.total() > 0);
        let m = metrics(&c).unwrap();
        for x in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-15);
        if tp + fp > 0 && tp + fn_ > 0 && m.precision + m.recall > 0.0 {
            let f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
            prop_assert!((f1 - m.f1).abs() <= 1e-12);
        }
    }

    #[test]
    fn gap_is_symmetric(a in metric_set(), b in metric_set()) {
        let g = cross_domain_gap(&a, &b);
        prop_assert_eq!(g, cross_domain_gap(&b, &a));
        prop_assert!(g.delta_rec >= 0.0 && g.delta_f1 >= 0.0);
        prop_assert!((g.avg_gap - (g.delta_rec + g.delta_f1) / 2.0).abs() < 1e-15);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn optimized_weights_are_feasible_and_no_worse_than_uniform(
        seed in any::<u64>(),
        models in 1usize..6,
        cap in 0.05..=1.0f64,
        rows in prop::collection::vec((any::<bool>(), prop::collection::vec(0.0..=1.0f64, 6)), 10..60),
    ) {
        prop_assume!(models > 1 || cap == 1.0);
        let labels: Vec<Label> = rows.iter().map(|(y, _)| if *y { Label::Suicide } else { Label::NonSuicide }).collect();
        prop_assume!(labels.iter().any(|l| l.is_positive()) && labels.iter().any(|l| !l.is_positive()));
        let scores: Vec<ScoreVector> = rows.iter().map(|(_, s)| ScoreVector::new(s[..models].to_vec()).unwrap()).collect();
        let r = optimize_weights(&scores, &labels, cap, seed).unwrap();
        prop_assert!(check_feasible(r.weights.weights(), cap, 1e-6).is_ok());
        prop_assert!(r.val_f1 >= r.uniform_f1);
    }

    #[test]
    fn extraction_is_independent_of_parallelism(n in 1usize..30, workers in 2usize..9) {
        let posts: Vec<Post> = common::synthetic_posts("implicit", 0, n);
        let ds = Dataset::new("d", Split::Test, posts).unwrap();
        let chat = common::cue_analyst();
        let analyst = Analyst::new(&chat, 1);
        let serial = extract_features(&ds, &analyst, &FeatureCache::in_memory(), 1).unwrap();
        let parallel = extract_features(&ds, &analyst, &FeatureCache::in_memory(), workers).unwrap();
        prop_assert_eq!(serial.to_jsonl(), parallel.to_jsonl());
    }
}
