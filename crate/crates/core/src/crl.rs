//! Lagrangian policy-gradient training with a formula as the cost signal.
//!
//! The policy is a softmax over the eight compass moves with one logit per
//! (grid cell, action). Each epoch samples a batch of episodes, takes a
//! gradient ascent step on `J_r - lambda * J_c` using return-to-go and a
//! per-timestep mean baseline, then updates the multiplier from the batch's
//! mean discounted formula cost.

use std::fmt::Write as _;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{feature_map, FeatureMap};
use crate::formula::{evaluate_with, ConjunctionStats, Counting, DnfFormula};
use crate::navenv::{Action, NavConfig, NavEnv};
use crate::registry::{Named, Registry};

const N_ACTIONS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Cost budget alpha.
    pub budget: f64,
    pub policy_lr: f64,
    pub multiplier_lr: f64,
    pub initial_multiplier: f64,
    pub episodes_per_epoch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Cells per side of the policy's state grid.
    pub grid_cells: usize,
    pub multiplier_update: String,
    /// Step rule applied to the policy gradient.
    pub optimizer: String,
    /// Weight of the entropy bonus on visited states; keeps the policy from
    /// collapsing before the multiplier has settled.
    pub entropy_coef: f64,
    pub feature_map: String,
    pub counting: Counting,
    /// Training aborts when a logit's magnitude exceeds this.
    pub divergence_limit: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            budget: 1.0,
            policy_lr: 0.5,
            multiplier_lr: 0.05,
            initial_multiplier: 0.0,
            episodes_per_epoch: 32,
            epochs: 300,
            seed: 0,
            grid_cells: 20,
            multiplier_update: "projected_subgradient".into(),
            optimizer: "adam".into(),
            entropy_coef: 0.0,
            feature_map: "identity_xy".into(),
            counting: Counting::ShortCircuit,
            divergence_limit: 1e3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("train: {msg}")));
        if !(self.budget >= 0.0) || !self.budget.is_finite() {
            return bad(format!("budget must be non-negative, got {}", self.budget));
        }
        if !(self.policy_lr > 0.0 && self.policy_lr.is_finite()) {
            return bad(format!("policy_lr must be positive, got {}", self.policy_lr));
        }
        if !(self.multiplier_lr > 0.0 && self.multiplier_lr.is_finite()) {
            return bad(format!("multiplier_lr must be positive, got {}", self.multiplier_lr));
        }
        if !(self.initial_multiplier >= 0.0) || !self.initial_multiplier.is_finite() {
            return bad("initial_multiplier must be non-negative".into());
        }
        if !(self.entropy_coef >= 0.0) || !self.entropy_coef.is_finite() {
            return bad("entropy_coef must be non-negative".into());
        }
        if self.episodes_per_epoch == 0 || self.grid_cells == 0 {
            return bad("episodes_per_epoch and grid_cells must be positive".into());
        }
        if !(self.divergence_limit > 0.0) {
            return bad("divergence_limit must be positive".into());
        }
        multiplier_updates().get(&self.multiplier_update)?;
        optimizers().get(&self.optimizer)?;
        feature_map(&self.feature_map)?;
        Ok(())
    }
}

/// Rule for moving the multiplier after each epoch.
pub trait MultiplierUpdate: Named + Send + Sync {
    fn update(&self, lambda: f64, mean_cost: f64, budget: f64, lr: f64) -> f64;
}

/// Projected subgradient ascent: `max(0, lambda + lr * (cost - budget))`.
pub struct ProjectedSubgradient;

impl Named for ProjectedSubgradient {
    fn name(&self) -> &'static str {
        "projected_subgradient"
    }
}

impl MultiplierUpdate for ProjectedSubgradient {
    fn update(&self, lambda: f64, mean_cost: f64, budget: f64, lr: f64) -> f64 {
        (lambda + lr * (mean_cost - budget)).max(0.0)
    }
}

/// Keeps the multiplier at its initial value; with zero it trains without
/// the constraint.
pub struct Frozen;

impl Named for Frozen {
    fn name(&self) -> &'static str {
        "frozen"
    }
}

impl MultiplierUpdate for Frozen {
    fn update(&self, lambda: f64, _mean_cost: f64, _budget: f64, _lr: f64) -> f64 {
        lambda
    }
}

pub fn multiplier_updates() -> &'static Registry<dyn MultiplierUpdate> {
    static REGISTRY: OnceLock<Registry<dyn MultiplierUpdate>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn MultiplierUpdate> = Registry::new("multiplier update");
        reg.register(Arc::new(ProjectedSubgradient));
        reg.register(Arc::new(Frozen));
        reg
    })
}

/// Running state of an [`Optimizer`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub steps: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

/// Gradient ascent step rule.
pub trait Optimizer: Named + Send + Sync {
    fn ascend(&self, state: &mut OptimizerState, params: &mut [f64], grad: &[f64], lr: f64);
}

/// Plain gradient ascent.
pub struct Sgd;

impl Named for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }
}

impl Optimizer for Sgd {
    fn ascend(&self, state: &mut OptimizerState, params: &mut [f64], grad: &[f64], lr: f64) {
        state.steps += 1;
        for (p, g) in params.iter_mut().zip(grad) {
            *p += lr * g;
        }
    }
}

/// Adam with the usual defaults (0.9, 0.999, 1e-8).
pub struct Adam;

impl Named for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }
}

impl Optimizer for Adam {
    fn ascend(&self, state: &mut OptimizerState, params: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        if state.first_moment.len() != params.len() {
            state.first_moment = vec![0.0; params.len()];
            state.second_moment = vec![0.0; params.len()];
        }
        state.steps += 1;
        let c1 = 1.0 - B1.powi(state.steps as i32);
        let c2 = 1.0 - B2.powi(state.steps as i32);
        for i in 0..params.len() {
            let m = &mut state.first_moment[i];
            let v = &mut state.second_moment[i];
            *m = B1 * *m + (1.0 - B1) * grad[i];
            *v = B2 * *v + (1.0 - B2) * grad[i] * grad[i];
            params[i] += lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
        }
    }
}

pub fn optimizers() -> &'static Registry<dyn Optimizer> {
    static REGISTRY: OnceLock<Registry<dyn Optimizer>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn Optimizer> = Registry::new("optimizer");
        reg.register(Arc::new(Adam));
        reg.register(Arc::new(Sgd));
        reg
    })
}

/// Anything that picks a move deterministically from a position.
pub trait ActionPolicy {
    fn greedy_action(&self, position: [f64; 2]) -> Action;
}

/// Tabular softmax policy over a square grid of the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Policy {
    pub grid_cells: usize,
    pub world_min: [f64; 2],
    pub world_max: [f64; 2],
    /// Row-major `[cell][action]`, cell index `iy * grid_cells + ix`.
    pub logits: Vec<[f64; N_ACTIONS]>,
}

impl Policy {
    pub fn uniform(grid_cells: usize, nav: &NavConfig) -> Self {
        Self {
            grid_cells,
            world_min: nav.world_min,
            world_max: nav.world_max,
            logits: vec![[0.0; N_ACTIONS]; grid_cells * grid_cells],
        }
    }

    pub fn n_params(&self) -> usize {
        self.logits.len() * N_ACTIONS
    }

    pub fn cell(&self, position: [f64; 2]) -> usize {
        let g = self.grid_cells;
        let idx = |i: usize| {
            let u = (position[i] - self.world_min[i]) / (self.world_max[i] - self.world_min[i]);
            ((u * g as f64).floor().max(0.0) as usize).min(g - 1)
        };
        idx(1) * g + idx(0)
    }

    pub fn probabilities(&self, cell: usize) -> [f64; N_ACTIONS] {
        softmax(&self.logits[cell])
    }

    pub fn sample(&self, position: [f64; 2], rng: &mut impl Rng) -> Action {
        let p = self.probabilities(self.cell(position));
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                return Action::ALL[i];
            }
        }
        // Rounding left `acc` just below 1: take the last action with mass.
        let last = p.iter().rposition(|&pi| pi > 0.0).unwrap_or(0);
        Action::ALL[last]
    }

    pub fn max_abs_logit(&self) -> f64 {
        self.logits
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("policy serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Policy = serde_json::from_str(text)
            .map_err(|e| Error::parse(e.line(), e.column(), e.to_string()))?;
        if p.grid_cells == 0 || p.logits.len() != p.grid_cells * p.grid_cells {
            return Err(Error::Schema("policy logits do not match grid_cells".into()));
        }
        if p.logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Schema("policy logits must be finite".into()));
        }
        Ok(p)
    }
}

impl ActionPolicy for Policy {
    /// Highest-probability move; ties go to the lower action index.
    fn greedy_action(&self, position: [f64; 2]) -> Action {
        let l = &self.logits[self.cell(position)];
        let mut best = 0;
        for i in 1..N_ACTIONS {
            if l[i] > l[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }
}

fn softmax(logits: &[f64; N_ACTIONS]) -> [f64; N_ACTIONS] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_ACTIONS];
    let mut z = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        z += *o;
    }
    for o in &mut out {
        *o /= z;
    }
    out
}

/// Hand-written controllers used as references.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScriptedPolicy {
    /// East along the bottom to x = 0.8, north to y = 0.9, then to the goal.
    Corridor,
    /// Always north-east, straight through the obstacle.
    Diagonal,
}

impl ActionPolicy for ScriptedPolicy {
    fn greedy_action(&self, position: [f64; 2]) -> Action {
        match self {
            ScriptedPolicy::Diagonal => Action::NE,
            ScriptedPolicy::Corridor => {
                if position[0] < 0.775 {
                    Action::E
                } else if position[1] < 0.875 {
                    Action::N
                } else {
                    Action::E
                }
            }
        }
    }
}

/// One sampled episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    /// Positions before each move.
    pub positions: Vec<[f64; 2]>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Formula cost of each pre-move (state, action) pair.
    pub costs: Vec<f64>,
    pub gt_costs: Vec<f64>,
    pub final_position: [f64; 2],
    pub reached_goal: bool,
    /// Discounted sums.
    pub reward_return: f64,
    pub cost_return: f64,
    pub gt_cost_return: f64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Formula cost of the pair `(position, move)`.
struct CostModel<'a> {
    formula: &'a DnfFormula,
    map: Arc<dyn FeatureMap>,
    step_size: f64,
    counting: Counting,
}

impl CostModel<'_> {
    fn cost(&self, position: [f64; 2], action: Action, stats: Option<&mut ConjunctionStats>) -> Result<f64> {
        let d = action.direction();
        let phi = self.map.map(
            &position,
            &[self.step_size * d[0], self.step_size * d[1]],
        )?;
        Ok(evaluate_with(self.formula, phi.values(), stats, self.counting)?.violated as u8 as f64)
    }
}

fn run_episode(
    env: &NavEnv,
    cost: &CostModel<'_>,
    mut stats: Option<&mut ConjunctionStats>,
    mut choose: impl FnMut([f64; 2]) -> Action,
) -> Result<Episode> {
    let gamma = env.config().gamma;
    let mut state = env.reset(0);
    let mut ep = Episode {
        positions: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        costs: Vec::new(),
        gt_costs: Vec::new(),
        final_position: state.position,
        reached_goal: false,
        reward_return: 0.0,
        cost_return: 0.0,
        gt_cost_return: 0.0,
    };
    let mut discount = 1.0;
    while !state.done {
        let action = choose(state.position);
        let c = cost.cost(state.position, action, stats.as_deref_mut())?;
        let t = env.step(&state, action)?;
        ep.positions.push(state.position);
        ep.actions.push(action);
        ep.rewards.push(t.reward);
        ep.costs.push(c);
        ep.gt_costs.push(t.gt_cost as f64);
        ep.reward_return += discount * t.reward;
        ep.cost_return += discount * c;
        ep.gt_cost_return += discount * t.gt_cost as f64;
        discount *= gamma;
        ep.reached_goal = t.reached_goal;
        state = t.state;
    }
    ep.final_position = state.position;
    Ok(ep)
}

fn cost_model<'a>(env: &NavEnv, formula: &'a DnfFormula, map_name: &str, counting: Counting) -> Result<CostModel<'a>> {
    let map = feature_map(map_name)?;
    if map.output_dim() != formula.k() {
        return Err(Error::Domain(format!(
            "formula has dimension {}, feature map '{map_name}' produces {}",
            formula.k(),
            map.output_dim()
        )));
    }
    Ok(CostModel {
        formula,
        map,
        step_size: env.config().step_size,
        counting,
    })
}

/// Samples one episode from `policy`, accumulating formula statistics.
pub fn rollout(
    env: &NavEnv,
    policy: &Policy,
    formula: &DnfFormula,
    stats: Option<&mut ConjunctionStats>,
    rng: &mut ChaCha8Rng,
) -> Result<Episode> {
    let cost = cost_model(env, formula, "identity_xy", Counting::ShortCircuit)?;
    run_episode(env, &cost, stats, |p| policy.sample(p, rng))
}

/// Runs one greedy episode of any deterministic policy.
pub fn rollout_greedy(env: &NavEnv, policy: &dyn ActionPolicy, formula: &DnfFormula) -> Result<Episode> {
    let cost = cost_model(env, formula, "identity_xy", Counting::ShortCircuit)?;
    run_episode(env, &cost, None, |p| policy.greedy_action(p))
}

/// Per-timestep mean of the discounted return-to-go
/// `G_t = sum_{u >= t} gamma^u (r_u - lambda c_u)` over the episodes that
/// reach step `t`. Returns `(G per episode, baseline)`.
fn returns_and_baseline(batch: &[Episode], lambda: f64, gamma: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let horizon = batch.iter().map(Episode::len).max().unwrap_or(0);
    let mut sums = vec![0.0; horizon];
    let mut counts = vec![0usize; horizon];
    let returns: Vec<Vec<f64>> = batch
        .iter()
        .map(|ep| {
            let mut g = vec![0.0; ep.len()];
            let mut acc = 0.0;
            for t in (0..ep.len()).rev() {
                acc += gamma.powi(t as i32) * (ep.rewards[t] - lambda * ep.costs[t]);
                g[t] = acc;
                sums[t] += acc;
                counts[t] += 1;
            }
            g
        })
        .collect();
    let baseline = sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect();
    (returns, baseline)
}

/// Likelihood-ratio estimate of the gradient of `J_r - lambda J_c` with
/// respect to every logit, flattened `[cell][action]`.
pub fn policy_gradient(policy: &Policy, batch: &[Episode], lambda: f64, gamma: f64) -> Vec<f64> {
    let mut grad = vec![0.0; policy.n_params()];
    if batch.is_empty() {
        return grad;
    }
    let (returns, baseline) = returns_and_baseline(batch, lambda, gamma);
    let n = batch.len() as f64;
    for (ep, g) in batch.iter().zip(&returns) {
        for t in 0..ep.len() {
            let cell = policy.cell(ep.positions[t]);
            let p = policy.probabilities(cell);
            let adv = (g[t] - baseline[t]) / n;
            let a = ep.actions[t].index();
            for (i, &pi) in p.iter().enumerate() {
                let score = if i == a { 1.0 } else { 0.0 } - pi;
                grad[cell * N_ACTIONS + i] += score * adv;
            }
        }
    }
    grad
}

/// Mean per-episode sum of policy entropies over the visited cells.
pub fn batch_entropy(policy: &Policy, batch: &[Episode]) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let total: f64 = batch
        .iter()
        .flat_map(|ep| &ep.positions[..ep.len()])
        .map(|&pos| entropy(&policy.probabilities(policy.cell(pos))))
        .sum();
    total / batch.len() as f64
}

/// Gradient of [`batch_entropy`] with visited states held fixed.
pub fn entropy_gradient(policy: &Policy, batch: &[Episode]) -> Vec<f64> {
    let mut grad = vec![0.0; policy.n_params()];
    if batch.is_empty() {
        return grad;
    }
    let n = batch.len() as f64;
    for ep in batch {
        for &pos in &ep.positions[..ep.len()] {
            let cell = policy.cell(pos);
            let p = policy.probabilities(cell);
            let h = entropy(&p);
            for (i, &pi) in p.iter().enumerate() {
                if pi > 0.0 {
                    grad[cell * N_ACTIONS + i] -= pi * (pi.ln() + h) / n;
                }
            }
        }
    }
    grad
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

/// Importance-weighted surrogate whose gradient at `policy == behaviour`
/// equals [`policy_gradient`] on the same batch:
/// `(1/N) sum_i sum_t [rho_{0:t} gamma^t x_t - b_t (rho_{0:t} - rho_{0:t-1})]`
/// with `rho` the likelihood ratio of the first actions and `b_t` the
/// behaviour policy's baseline.
pub fn surrogate_objective(
    policy: &Policy,
    behaviour: &Policy,
    batch: &[Episode],
    lambda: f64,
    gamma: f64,
) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let (_, baseline) = returns_and_baseline(batch, lambda, gamma);
    let mut total = 0.0;
    for ep in batch {
        let mut rho = 1.0;
        for t in 0..ep.len() {
            let cell = policy.cell(ep.positions[t]);
            let a = ep.actions[t].index();
            let prev = rho;
            rho *= policy.probabilities(cell)[a] / behaviour.probabilities(cell)[a];
            let x = ep.rewards[t] - lambda * ep.costs[t];
            total += rho * gamma.powi(t as i32) * x - baseline[t] * (rho - prev);
        }
    }
    total / batch.len() as f64
}

/// One row of training curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_formula_cost: f64,
    pub mean_gt_cost: f64,
    /// Multiplier after this epoch's update.
    pub lambda: f64,
    pub goal_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainCurves {
    pub rows: Vec<EpochRecord>,
}

impl TrainCurves {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_reward,mean_formula_cost,mean_gt_cost,lambda,goal_rate\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?}",
                r.epoch, r.mean_reward, r.mean_formula_cost, r.mean_gt_cost, r.lambda, r.goal_rate
            );
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub policy: Policy,
    pub curves: TrainCurves,
    /// Formula statistics over every training step.
    pub stats: ConjunctionStats,
    pub lambda: f64,
}

pub fn train(env: &NavEnv, formula: &DnfFormula, config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let cost = cost_model(env, formula, &config.feature_map, config.counting)?;
    let update = multiplier_updates().get(&config.multiplier_update)?;
    let optimizer = optimizers().get(&config.optimizer)?;
    let mut opt_state = OptimizerState::default();
    let mut params = Vec::new();
    let gamma = env.config().gamma;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut policy = Policy::uniform(config.grid_cells, env.config());
    let mut stats = ConjunctionStats::for_formula(formula);
    let mut lambda = config.initial_multiplier;
    let mut curves = TrainCurves::default();
    let mut batch = Vec::with_capacity(config.episodes_per_epoch);
    for epoch in 0..config.epochs {
        batch.clear();
        for _ in 0..config.episodes_per_epoch {
            let ep = run_episode(env, &cost, Some(&mut stats), |p| policy.sample(p, &mut rng))?;
            batch.push(ep);
        }
        let n = batch.len() as f64;
        let mean = |f: fn(&Episode) -> f64| batch.iter().map(f).sum::<f64>() / n;
        let j_r = mean(|e| e.reward_return);
        let j_c = mean(|e| e.cost_return);
        let j_gt = mean(|e| e.gt_cost_return);
        let goal_rate = mean(|e| e.reached_goal as u8 as f64);

        let mut grad = policy_gradient(&policy, &batch, lambda, gamma);
        if config.entropy_coef > 0.0 {
            for (g, e) in grad.iter_mut().zip(entropy_gradient(&policy, &batch)) {
                *g += config.entropy_coef * e;
            }
        }
        params.clear();
        params.extend(policy.logits.iter().flatten());
        optimizer.ascend(&mut opt_state, &mut params, &grad, config.policy_lr);
        for (row, chunk) in policy.logits.iter_mut().zip(params.chunks(N_ACTIONS)) {
            row.copy_from_slice(chunk);
        }
        let worst = policy.max_abs_logit();
        if !(worst <= config.divergence_limit) {
            return Err(Error::Divergence(format!(
                "epoch {epoch}: logit magnitude {worst} exceeds {}",
                config.divergence_limit
            )));
        }
        lambda = update.update(lambda, j_c, config.budget, config.multiplier_lr);
        curves.rows.push(EpochRecord {
            epoch,
            mean_reward: j_r,
            mean_formula_cost: j_c,
            mean_gt_cost: j_gt,
            lambda,
            goal_rate,
        });
    }
    Ok(TrainOutput {
        policy,
        curves,
        stats,
        lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean_reward: f64,
    pub mean_formula_cost: f64,
    pub mean_gt_cost: f64,
    pub goal_rate: f64,
}

/// Greedy evaluation. The environment and greedy policy are deterministic, so
/// every episode is identical; the seed is accepted for interface symmetry.
pub fn evaluate_policy(
    env: &NavEnv,
    policy: &dyn ActionPolicy,
    formula: &DnfFormula,
    n_episodes: usize,
    _seed: u64,
) -> Result<EvalSummary> {
    if n_episodes == 0 {
        return Err(Error::Domain("need at least one evaluation episode".into()));
    }
    let mut sum = EvalSummary {
        mean_reward: 0.0,
        mean_formula_cost: 0.0,
        mean_gt_cost: 0.0,
        goal_rate: 0.0,
    };
    for _ in 0..n_episodes {
        let ep = rollout_greedy(env, policy, formula)?;
        sum.mean_reward += ep.reward_return;
        sum.mean_formula_cost += ep.cost_return;
        sum.mean_gt_cost += ep.gt_cost_return;
        sum.goal_rate += ep.reached_goal as u8 as f64;
    }
    let n = n_episodes as f64;
    Ok(EvalSummary {
        mean_reward: sum.mean_reward / n,
        mean_formula_cost: sum.mean_formula_cost / n,
        mean_gt_cost: sum.mean_gt_cost / n,
        goal_rate: sum.goal_rate / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formula::parse_text;

    fn env() -> NavEnv {
        NavEnv::new(NavConfig::default()).unwrap()
    }

    fn obstacle_rule() -> DnfFormula {
        parse_text("phi0 > 0.1 /\\ phi0 < 0.7 /\\ phi1 > 0.3").unwrap()
    }

    #[test]
    fn scripted_policies() {
        let e = env();
        let f = obstacle_rule();
        let corridor = evaluate_policy(&e, &ScriptedPolicy::Corridor, &f, 3, 0).unwrap();
        assert_eq!(corridor.goal_rate, 1.0);
        assert_eq!(corridor.mean_gt_cost, 0.0);
        assert_eq!(corridor.mean_formula_cost, 0.0);
        let diagonal = rollout_greedy(&e, &ScriptedPolicy::Diagonal, &f).unwrap();
        assert!(diagonal.reached_goal);
        assert!(diagonal.gt_cost_return > 0.0);
        assert!(diagonal.cost_return > 0.0);
    }

    #[test]
    fn one_step_episode() {
        let e = NavEnv::new(NavConfig {
            start: [0.85, 0.9],
            ..NavConfig::default()
        })
        .unwrap();
        let mut policy = Policy::uniform(20, e.config());
        let cell = policy.cell([0.85, 0.9]);
        policy.logits[cell][Action::E.index()] = 50.0;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = rollout(&e, &policy, &obstacle_rule(), None, &mut rng).unwrap();
        assert_eq!(ep.len(), 1);
        assert!(ep.reached_goal);
        assert!((ep.reward_return - 10.0).abs() < 1e-9);
        assert_eq!(ep.cost_return, 0.0);
    }

    #[test]
    fn exhausted_episode_has_t_max_terms() {
        let nav = NavConfig {
            gamma: 1.0,
            ..NavConfig::default()
        };
        let e = NavEnv::new(nav.clone()).unwrap();
        let mut policy = Policy::uniform(20, &nav);
        for row in &mut policy.logits {
            row[Action::SW.index()] = 50.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep = rollout(&e, &policy, &obstacle_rule(), None, &mut rng).unwrap();
        assert_eq!(ep.len(), nav.max_steps);
        assert!(!ep.reached_goal);
        // With gamma = 1 the return is the plain sum.
        let plain: f64 = ep.rewards.iter().sum();
        assert!((ep.reward_return - plain).abs() < 1e-9);
    }

    #[test]
    fn uniform_policy_rarely_reaches_goal() {
        let e = env();
        let policy = Policy::uniform(20, e.config());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let reached = (0..200)
            .filter(|_| rollout(&e, &policy, &obstacle_rule(), None, &mut rng).unwrap().reached_goal)
            .count();
        assert!(reached < 20, "{reached}");
    }

    #[test]
    fn cell_indexing() {
        let p = Policy::uniform(20, &NavConfig::default());
        assert_eq!(p.cell([0.0, 0.0]), 0);
        assert_eq!(p.cell([1.0, 1.0]), 399);
        assert_eq!(p.cell([0.12, 0.0]), 2);
        assert_eq!(p.cell([0.0, 0.12]), 40);
    }

    #[test]
    fn gradient_matches_surrogate_derivative() {
        let e = env();
        let mut policy = Policy::uniform(20, e.config());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for row in &mut policy.logits {
            for l in row.iter_mut() {
                *l = rng.random_range(-1.0..1.0);
            }
        }
        let f = obstacle_rule();
        let batch: Vec<Episode> = (0..8)
            .map(|_| rollout(&e, &policy, &f, None, &mut rng).unwrap())
            .collect();
        let (lambda, gamma) = (0.7, 0.99);
        let grad = policy_gradient(&policy, &batch, lambda, gamma);
        let eps = 1e-5;
        let mut checked = 0;
        for i in (0..grad.len()).filter(|&i| grad[i].abs() > 1e-6).step_by(7).take(10) {
            let mut plus = policy.clone();
            plus.logits[i / N_ACTIONS][i % N_ACTIONS] += eps;
            let mut minus = policy.clone();
            minus.logits[i / N_ACTIONS][i % N_ACTIONS] -= eps;
            let fd = (surrogate_objective(&plus, &policy, &batch, lambda, gamma)
                - surrogate_objective(&minus, &policy, &batch, lambda, gamma))
                / (2.0 * eps);
            assert!((fd - grad[i]).abs() <= 1e-3 * grad[i].abs(), "{i}: {fd} vs {}", grad[i]);
            checked += 1;
        }
        assert_eq!(checked, 10);
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let e = env();
        let mut policy = Policy::uniform(20, e.config());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for row in &mut policy.logits {
            for l in row.iter_mut() {
                *l = rng.random_range(-2.0..2.0);
            }
        }
        let batch: Vec<Episode> = (0..4)
            .map(|_| rollout(&e, &policy, &obstacle_rule(), None, &mut rng).unwrap())
            .collect();
        let grad = entropy_gradient(&policy, &batch);
        let eps = 1e-5;
        for i in (0..grad.len()).filter(|&i| grad[i].abs() > 1e-6).take(10) {
            let mut plus = policy.clone();
            plus.logits[i / N_ACTIONS][i % N_ACTIONS] += eps;
            let mut minus = policy.clone();
            minus.logits[i / N_ACTIONS][i % N_ACTIONS] -= eps;
            let fd = (batch_entropy(&plus, &batch) - batch_entropy(&minus, &batch)) / (2.0 * eps);
            assert!((fd - grad[i]).abs() <= 1e-6 + 1e-4 * grad[i].abs(), "{i}: {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn optimizer_steps() {
        let mut st = OptimizerState::default();
        let mut p = vec![1.0, 1.0];
        Sgd.ascend(&mut st, &mut p, &[2.0, -1.0], 0.5);
        assert_eq!(p, vec![2.0, 0.5]);
        // Adam's first step moves each coordinate by lr in the gradient's sign.
        let mut st = OptimizerState::default();
        let mut p = vec![0.0, 0.0, 0.0];
        Adam.ascend(&mut st, &mut p, &[5.0, -0.01, 0.0], 0.1);
        assert!((p[0] - 0.1).abs() < 1e-6 && (p[1] + 0.1).abs() < 1e-5 && p[2] == 0.0);
        assert!(optimizers().get("sgd").is_ok());
    }

    #[test]
    fn multiplier_rules() {
        assert_eq!(ProjectedSubgradient.update(0.0, 0.5, 1.0, 0.05), 0.0);
        assert!((ProjectedSubgradient.update(0.1, 3.0, 1.0, 0.05) - 0.2).abs() < 1e-12);
        assert_eq!(Frozen.update(0.3, 100.0, 1.0, 0.05), 0.3);
        assert!(multiplier_updates().get("frozen").is_ok());
    }

    #[test]
    fn empty_formula_keeps_lambda_zero() {
        let e = env();
        let config = TrainConfig {
            epochs: 5,
            episodes_per_epoch: 4,
            ..TrainConfig::default()
        };
        let out = train(&e, &DnfFormula::empty(2), &config).unwrap();
        assert_eq!(out.curves.rows.len(), 5);
        assert!(out.curves.rows.iter().all(|r| r.lambda == 0.0 && r.mean_formula_cost == 0.0));
        assert!(out.stats.is_empty());
    }

    #[test]
    fn divergence_guard_trips() {
        let e = env();
        let config = TrainConfig {
            epochs: 3,
            episodes_per_epoch: 4,
            policy_lr: 1e6,
            optimizer: "sgd".into(),
            ..TrainConfig::default()
        };
        assert!(matches!(train(&e, &obstacle_rule(), &config), Err(Error::Divergence(_))));
    }

    #[test]
    fn training_is_deterministic() {
        let e = env();
        let config = TrainConfig {
            epochs: 4,
            episodes_per_epoch: 4,
            ..TrainConfig::default()
        };
        let a = train(&e, &obstacle_rule(), &config).unwrap();
        let b = train(&e, &obstacle_rule(), &config).unwrap();
        assert_eq!(a.curves.to_csv(), b.curves.to_csv());
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.stats, b.stats);
        assert!(a.curves.to_csv().starts_with("epoch,mean_reward,mean_formula_cost,mean_gt_cost,lambda,goal_rate\n0,"));
    }

    #[test]
    fn invalid_config_and_dimension() {
        let e = env();
        let bad = TrainConfig {
            multiplier_update: "adam".into(),
            ..TrainConfig::default()
        };
        assert!(matches!(train(&e, &obstacle_rule(), &bad), Err(Error::Config(_))));
        let three = parse_text("phi2 > 0").unwrap();
        assert!(matches!(train(&e, &three, &TrainConfig::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn policy_json_round_trip() {
        let mut p = Policy::uniform(4, &NavConfig::default());
        p.logits[3][2] = 1.25;
        assert_eq!(Policy::from_json(&p.to_json()).unwrap(), p);
        assert!(Policy::from_json("{\"grid_cells\":2,\"world_min\":[0,0],\"world_max\":[1,1],\"logits\":[]}").is_err());
    }
}
