//! End-to-end run: demonstrations, tree, formula, training, pruning, evaluation.

use std::fs;
use std::path::Path;

use crate::config::RunConfig;
use crate::crl::{evaluate_policy, rollout_greedy, train, EvalSummary, TrainOutput};
use crate::error::Result;
use crate::features::{
    build_dataset, dataset_to_csv, feature_bounds, load_trajectories, write_trajectories_jsonl, Dataset,
    FeatureBounds, Trajectory, TrajectoryFormat,
};
use crate::formula::{extract_formula, prune, render_text, DnfFormula};
use crate::navenv::{generate_expert, NavEnv};
use crate::octree::{build_tree, leaf_boxes, Tree};
use crate::svg::render_scene;

pub struct PipelineOutput {
    pub config: RunConfig,
    pub trajectories: Vec<Trajectory>,
    pub dataset: Dataset,
    pub bounds: FeatureBounds,
    pub tree: Tree,
    pub formula: DnfFormula,
    pub training: TrainOutput,
    pub pruned: DnfFormula,
    pub evaluation: EvalSummary,
}

/// Demonstrations from `paths.trajectories`, or generated from the expert section.
pub fn demonstrations(config: &RunConfig) -> Result<Vec<Trajectory>> {
    match &config.paths.trajectories {
        Some(path) => load_trajectories(path, TrajectoryFormat::from_path(path)),
        None => generate_expert(
            &config.nav,
            config.expert.trajectories,
            config.expert.sigma,
            config.expert_seed(),
        ),
    }
}

pub fn run_pipeline(config: &RunConfig) -> Result<PipelineOutput> {
    let config = config.resolved();
    config.validate()?;
    let trajectories = demonstrations(&config)?;
    let dataset = build_dataset(&trajectories, &config.feature_map)?;
    let bounds = feature_bounds(&dataset)?;
    let tree = build_tree(&dataset, &config.tree)?;
    let formula = extract_formula(&tree, &bounds)?;
    let env = NavEnv::new(config.nav.clone())?;
    let training = train(&env, &formula, &config.train)?;
    let pruned = prune(&formula, &training.stats, config.prune_threshold)?;
    let evaluation = evaluate_policy(&env, &training.policy, &formula, config.eval_episodes, config.seed)?;
    Ok(PipelineOutput {
        config,
        trajectories,
        dataset,
        bounds,
        tree,
        formula,
        training,
        pruned,
        evaluation,
    })
}

impl PipelineOutput {
    /// Writes every artifact plus the resolved config into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.config.save(&dir.join("config.json"))?;
        let mut jsonl = Vec::new();
        write_trajectories_jsonl(&self.trajectories, &mut jsonl)?;
        fs::write(dir.join("trajectories.jsonl"), jsonl)?;
        fs::write(dir.join("dataset.csv"), dataset_to_csv(&self.dataset))?;
        fs::write(dir.join("tree.json"), self.tree.to_json())?;
        fs::write(dir.join("formula.json"), self.formula.to_json())?;
        fs::write(dir.join("formula.txt"), render_text(&self.formula) + "\n")?;
        fs::write(dir.join("curves.csv"), self.training.curves.to_csv())?;
        fs::write(dir.join("stats.csv"), self.training.stats.to_csv(&self.formula)?)?;
        fs::write(dir.join("policy.json"), self.training.policy.to_json())?;
        fs::write(dir.join("pruned.json"), self.pruned.to_json())?;
        fs::write(dir.join("pruned.txt"), render_text(&self.pruned) + "\n")?;
        fs::write(
            dir.join("eval.json"),
            serde_json::to_string_pretty(&self.evaluation).expect("summary serializes") + "\n",
        )?;
        fs::write(dir.join("scene.svg"), self.scene()?)?;
        Ok(())
    }

    /// Leaf boxes, the expert paths and the trained policy's greedy path.
    pub fn scene(&self) -> Result<String> {
        let env = NavEnv::new(self.config.nav.clone())?;
        let mut paths: Vec<Vec<[f64; 2]>> = self.trajectories.iter().map(|t| xy_path(t)).collect();
        let greedy = rollout_greedy(&env, &self.training.policy, &self.formula)?;
        let mut learned = greedy.positions.clone();
        learned.push(greedy.final_position);
        paths.push(learned);
        Ok(render_scene(&self.config.nav, &leaf_boxes(&self.tree), &paths))
    }
}

/// First two state components of every step.
pub fn xy_path(trajectory: &Trajectory) -> Vec<[f64; 2]> {
    trajectory
        .states()
        .filter(|s| s.len() >= 2)
        .map(|s| [s[0], s[1]])
        .collect()
}
