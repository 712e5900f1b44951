use safeset::crl::{evaluate_policy, train, Policy, TrainConfig};
use safeset::formula::{parse_text, DnfFormula};
use safeset::navenv::{NavConfig, NavEnv};

fn env() -> NavEnv {
    NavEnv::new(NavConfig::default()).unwrap()
}

fn short(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 60,
        episodes_per_epoch: 16,
        policy_lr: 0.1,
        seed,
        ..TrainConfig::default()
    }
}

fn obstacle() -> DnfFormula {
    parse_text("phi0 > 0.1 /\\ phi0 < 0.7 /\\ phi1 > 0.3").unwrap()
}

#[test]
fn empty_formula_keeps_multiplier_at_zero() {
    let out = train(&env(), &DnfFormula::empty(2), &short(0)).unwrap();
    assert_eq!(out.curves.rows.len(), 60);
    assert!(out.curves.rows.iter().all(|r| r.lambda == 0.0 && r.mean_formula_cost == 0.0));
}

#[test]
fn huge_budget_behaves_as_unconstrained() {
    let loose = train(&env(), &obstacle(), &TrainConfig { budget: 1e6, ..short(3) }).unwrap();
    let free = train(
        &env(),
        &obstacle(),
        &TrainConfig {
            multiplier_update: "frozen".into(),
            ..short(3)
        },
    )
    .unwrap();
    let last = |o: &safeset::crl::TrainOutput| o.curves.rows.last().unwrap().mean_reward;
    let (a, b) = (last(&loose), last(&free));
    assert!(a >= b - 0.05 * b.abs(), "{a} vs {b}");
}

#[test]
fn multiplier_never_negative() {
    let out = train(&env(), &obstacle(), &TrainConfig { budget: 0.0, ..short(1) }).unwrap();
    assert!(out.curves.rows.iter().all(|r| r.lambda >= 0.0));
    assert!(out.curves.rows.iter().any(|r| r.lambda > 0.0));
}

#[test]
fn training_is_reproducible() {
    let a = train(&env(), &obstacle(), &short(9)).unwrap();
    let b = train(&env(), &obstacle(), &short(9)).unwrap();
    assert_eq!(a.curves.to_csv(), b.curves.to_csv());
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.policy.to_json(), b.policy.to_json());
    let c = train(&env(), &obstacle(), &short(10)).unwrap();
    assert_ne!(a.curves.to_csv(), c.curves.to_csv());
}

#[test]
fn stats_count_every_step() {
    let out = train(&env(), &obstacle(), &short(2)).unwrap();
    // The single conjunction is checked at every visited state.
    assert!(out.stats.evaluations[0] > 0);
    assert!(out.stats.violations[0] <= out.stats.evaluations[0]);
}

#[test]
fn divergence_is_reported() {
    let config = TrainConfig {
        optimizer: "sgd".into(),
        policy_lr: 1e6,
        ..short(0)
    };
    let err = train(&env(), &obstacle(), &config).unwrap_err();
    assert_eq!(err.kind(), "divergence");
}

#[test]
fn uniform_policy_rarely_reaches_goal() {
    let e = env();
    let summary = evaluate_policy(&e, &Policy::uniform(20, e.config()), &obstacle(), 5, 0).unwrap();
    assert_eq!(summary.goal_rate, 0.0);
    let again = evaluate_policy(&e, &Policy::uniform(20, e.config()), &obstacle(), 5, 0).unwrap();
    assert_eq!(summary, again);
}

#[test]
fn policy_json_round_trip() {
    let out = train(&env(), &obstacle(), &short(4)).unwrap();
    let back = Policy::from_json(&out.policy.to_json()).unwrap();
    assert_eq!(back, out.policy);
}
