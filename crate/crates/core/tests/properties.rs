use proptest::prelude::*;
use safeset::density::{kde_estimate, kde_estimate_with, Epanechnikov};
use safeset::features::{feature_bounds, Dataset};
use safeset::formula::{
    evaluate, extract_formula, parse_text, prune, render_text, Conjunction, ConjunctionStats, DnfFormula, Literal, Op,
};
use safeset::navenv::{generate_expert, NavConfig};
use safeset::octree::{build_tree, contains, leaf_boxes, HyperRect, TreeConfig};

fn literal() -> impl Strategy<Value = Literal> {
    (
        0usize..3,
        prop_oneof![Just(Op::Lt), Just(Op::Gt), Just(Op::Le), Just(Op::Ge)],
        -10.0f64..10.0,
    )
        .prop_map(|(dim, op, threshold)| Literal { dim, op, threshold })
}

fn formula() -> impl Strategy<Value = DnfFormula> {
    prop::collection::vec(prop::collection::vec(literal(), 1..4), 0..6).prop_map(|cs| {
        let conjunctions = cs.into_iter().map(|ls| Conjunction::new(ls).unwrap()).collect();
        DnfFormula::new(3, conjunctions).unwrap()
    })
}

fn dataset(k: usize) -> impl Strategy<Value = Dataset> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, k), 20..120)
        .prop_map(move |rows| Dataset::from_rows(k, rows).unwrap())
}

fn small_tree_config() -> TreeConfig {
    TreeConfig {
        max_depth: 3,
        ..TreeConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn text_round_trip(f in formula()) {
        let text = render_text(&f);
        let back = parse_text(&text).unwrap();
        prop_assert_eq!(render_text(&back), text);
        prop_assert_eq!(back.conjunctions(), f.conjunctions());
    }

    #[test]
    fn json_round_trip(f in formula()) {
        prop_assert_eq!(DnfFormula::from_json(&f.to_json()).unwrap(), f);
    }

    #[test]
    fn conjunctions_sorted_by_complexity(f in formula()) {
        let c: Vec<usize> = f.conjunctions().iter().map(Conjunction::complexity).collect();
        prop_assert!(c.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn violated_iff_some_conjunction_holds(f in formula(), p in prop::collection::vec(-12.0f64..12.0, 3)) {
        let holds = f.conjunctions().iter().any(|c| c.literals().iter().all(|l| l.holds(&p)));
        prop_assert_eq!(evaluate(&f, &p, None).unwrap().violated, holds);
    }

    #[test]
    fn stats_stay_consistent(f in formula(), pts in prop::collection::vec(prop::collection::vec(-12.0f64..12.0, 3), 1..40)) {
        let mut stats = ConjunctionStats::for_formula(&f);
        for p in &pts {
            evaluate(&f, p, Some(&mut stats)).unwrap();
        }
        prop_assert!(stats.violations.iter().zip(&stats.evaluations).all(|(v, e)| v <= e));
        let credited: u64 = stats.violations.iter().sum();
        let violated = pts.iter().filter(|p| evaluate(&f, p, None).unwrap().violated).count() as u64;
        prop_assert_eq!(credited, violated);
    }

    #[test]
    fn pruning_is_monotone_in_threshold(f in formula(), pts in prop::collection::vec(prop::collection::vec(-12.0f64..12.0, 3), 1..40), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let mut stats = ConjunctionStats::for_formula(&f);
        for p in &pts {
            evaluate(&f, p, Some(&mut stats)).unwrap();
        }
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let loose = prune(&f, &stats, lo).unwrap();
        let strict = prune(&f, &stats, hi).unwrap();
        prop_assert!(strict.conjunctions().iter().all(|c| loose.conjunctions().contains(c)));
        prop_assert!(prune(&f, &stats, 1.1).unwrap().is_empty());
    }

    #[test]
    fn kde_integrates_to_one(samples in prop::collection::vec(-5.0f64..5.0, 1..60), h in 0.05f64..2.0) {
        let g = kde_estimate(&samples, h, 512).unwrap();
        prop_assert!((g.integral() - 1.0).abs() < 0.02);
        prop_assert!(g.density.iter().all(|&d| d >= 0.0));
        let e = kde_estimate_with(&Epanechnikov, &samples, h, 2048).unwrap();
        prop_assert!((e.integral() - 1.0).abs() < 0.02);
    }

    #[test]
    fn tree_contains_every_training_point(data in dataset(2)) {
        let tree = build_tree(&data, &small_tree_config()).unwrap();
        for p in data.points() {
            prop_assert!(contains(&tree, p.values()).unwrap());
        }
    }

    #[test]
    fn leaves_are_disjoint_and_inside_root(data in dataset(3)) {
        let tree = build_tree(&data, &small_tree_config()).unwrap();
        let root = HyperRect::from_bounds(&tree.bounds);
        let leaves = leaf_boxes(&tree);
        prop_assert!(leaves.iter().all(|l| root.contains_rect(l)));
        for (i, a) in leaves.iter().enumerate() {
            for b in &leaves[i + 1..] {
                let overlap: f64 = (0..3).map(|j| (a.hi[j].min(b.hi[j]) - a.lo[j].max(b.lo[j])).max(0.0)).product();
                prop_assert!(overlap == 0.0);
            }
        }
    }

    #[test]
    fn formula_matches_tree(data in dataset(2), probes in prop::collection::vec(prop::collection::vec(-0.2f64..1.2, 2), 200)) {
        let tree = build_tree(&data, &small_tree_config()).unwrap();
        let bounds = feature_bounds(&data).unwrap();
        let f = extract_formula(&tree, &bounds).unwrap();
        for p in probes.iter().chain(data.points().iter().map(|q| q.values().to_vec()).collect::<Vec<_>>().iter()) {
            let inside = contains(&tree, p).unwrap() && bounds.contains(p);
            prop_assert_eq!(evaluate(&f, p, None).unwrap().violated, !inside);
        }
    }

    #[test]
    fn tree_json_round_trip(data in dataset(2)) {
        let tree = build_tree(&data, &small_tree_config()).unwrap();
        let text = tree.to_json();
        let back = safeset::octree::Tree::from_json(&text).unwrap();
        prop_assert_eq!(back.to_json(), text);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn experts_never_touch_the_obstacle(seed in any::<u64>(), n in 1usize..6, sigma in 0.0f64..0.5) {
        let nav = NavConfig::default();
        for tau in generate_expert(&nav, n, sigma, seed).unwrap() {
            for s in tau.states() {
                prop_assert!(!nav.in_obstacle([s[0], s[1]]));
                prop_assert!(nav.in_world([s[0], s[1]]));
            }
        }
    }
}
