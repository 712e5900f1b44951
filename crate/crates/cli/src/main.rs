//! `safeset` command line: ingest, fit, extract, train, prune, eval, render, pipeline.
//!
//! Exit codes: 0 success, 1 parse or I/O failure, 2 domain/config/schema
//! failure, 3 training divergence. Failures print one line to stderr:
//! `error kind=<kind> exit=<code> message=<json string>`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use safeset::config::RunConfig;
use safeset::crl::{evaluate_policy, train, Policy};
use safeset::features::{feature_bounds, feature_map, load_dataset, load_trajectories, save_dataset_csv, save_trajectories_jsonl, TrajectoryFormat};
use safeset::formula::{extract_formula, parse_text, prune, render_text, ConjunctionStats, DnfFormula};
use safeset::navenv::{generate_expert, NavEnv};
use safeset::octree::{build_tree, leaf_boxes, Tree};
use safeset::pipeline::{run_pipeline, xy_path};
use safeset::svg::render_scene;
use safeset::{Error, Result};

#[derive(Parser)]
#[command(name = "safeset", version, about = "Learn DNF safety constraints from expert trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        let config = config.resolved();
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate expert demonstrations for the navigation task.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Map trajectories (JSONL) or a dataset (CSV) to a feature CSV.
    Ingest {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a one-class tree.
    Fit {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract the constraint formula from a tree.
    Extract {
        tree: PathBuf,
        /// Dataset whose bounds close the formula; the tree's own bounds otherwise.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy with the formula as cost. Writes curves, stats and policy.
    Train {
        formula: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drop conjunctions whose violation ratio is below the threshold.
    Prune {
        formula: PathBuf,
        #[arg(long)]
        stats: PathBuf,
        #[arg(long, default_value_t = 0.001)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy evaluation of a trained policy.
    Eval {
        policy: PathBuf,
        formula: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Draw world, obstacle, leaf boxes and trajectories as SVG.
    Render {
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// generate/ingest, fit, extract, train, prune and eval in one go.
    Pipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, default_value_t = 0.001)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Parse { .. } | Error::Io(_) => 1,
        Error::Divergence(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            let message = serde_json::to_string(&err.to_string()).unwrap_or_default();
            eprintln!("error kind={} exit={code} message={message}", err.kind());
            ExitCode::from(code)
        }
    }
}

/// Resolved config is written next to `out`, as `<stem>.config.json`.
fn snapshot(config: &RunConfig, out: &Path) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    config.save(&out.with_extension("config.json"))
}

fn load_formula(path: &Path) -> Result<DnfFormula> {
    let text = fs::read_to_string(path)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => DnfFormula::from_json(&text),
        _ => parse_text(&text),
    }
}

/// Loads a formula used as a cost. The text form of `false` carries no
/// dimension, so an empty formula takes the feature map's.
fn load_cost_formula(path: &Path, config: &RunConfig) -> Result<DnfFormula> {
    let formula = load_formula(path)?;
    if formula.is_empty() {
        return Ok(DnfFormula::empty(feature_map(&config.feature_map)?.output_dim()));
    }
    Ok(formula)
}

/// Writes `<out>` as JSON and a sibling `.txt` rendering.
fn save_formula(formula: &DnfFormula, out: &Path) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(out.with_extension("json"), formula.to_json())?;
    fs::write(out.with_extension("txt"), render_text(formula) + "\n")?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { common, out } => {
            let config = common.load()?;
            let trajectories = generate_expert(
                &config.nav,
                config.expert.trajectories,
                config.expert.sigma,
                config.expert_seed(),
            )?;
            snapshot(&config, &out)?;
            save_trajectories_jsonl(&trajectories, &out)?;
            println!("wrote {} trajectories", trajectories.len());
        }
        Command::Ingest { input, common, out } => {
            let config = common.load()?;
            let dataset = load_dataset(&input, &config.feature_map)?;
            snapshot(&config, &out)?;
            save_dataset_csv(&dataset, &out)?;
            println!("wrote {} points of dimension {}", dataset.len(), dataset.dim());
        }
        Command::Fit { input, common, depth, out } => {
            let mut config = common.load()?;
            if let Some(d) = depth {
                config.tree.max_depth = d;
                config.tree.validate()?;
            }
            let dataset = load_dataset(&input, &config.feature_map)?;
            let tree = build_tree(&dataset, &config.tree)?;
            snapshot(&config, &out)?;
            fs::write(&out, tree.to_json())?;
            let leaves = leaf_boxes(&tree);
            println!("{} leaves, depth {}", leaves.len(), tree.depth());
            for leaf in &leaves {
                println!("leaf lo={:?} hi={:?}", leaf.lo, leaf.hi);
            }
        }
        Command::Extract { tree, dataset, common, out } => {
            let config = common.load()?;
            let tree = Tree::from_json(&fs::read_to_string(&tree)?)?;
            let bounds = match dataset {
                Some(path) => feature_bounds(&load_dataset(&path, &config.feature_map)?)?,
                None => tree.bounds.clone(),
            };
            let formula = extract_formula(&tree, &bounds)?;
            save_formula(&formula, &out)?;
            println!("{} conjunctions", formula.conjunctions().len());
            println!("{}", render_text(&formula));
        }
        Command::Train { formula, common, out } => {
            let config = common.load()?;
            let formula = load_cost_formula(&formula, &config)?;
            let env = NavEnv::new(config.nav.clone())?;
            let result = train(&env, &formula, &config.train)?;
            fs::create_dir_all(&out)?;
            config.save(&out.join("config.json"))?;
            fs::write(out.join("curves.csv"), result.curves.to_csv())?;
            fs::write(out.join("stats.csv"), result.stats.to_csv(&formula)?)?;
            fs::write(out.join("policy.json"), result.policy.to_json())?;
            println!("{} epochs, final lambda {}", result.curves.rows.len(), result.lambda);
        }
        Command::Prune { formula, stats, threshold, out } => {
            let formula = load_formula(&formula)?;
            let stats = ConjunctionStats::from_csv(&fs::read_to_string(&stats)?)?;
            let pruned = prune(&formula, &stats, threshold)?;
            save_formula(&pruned, &out)?;
            println!(
                "removed {} of {} conjunctions",
                formula.conjunctions().len() - pruned.conjunctions().len(),
                formula.conjunctions().len()
            );
            println!("{}", render_text(&pruned));
        }
        Command::Eval { policy, formula, common, episodes } => {
            let config = common.load()?;
            let policy = Policy::from_json(&fs::read_to_string(&policy)?)?;
            let formula = load_cost_formula(&formula, &config)?;
            let env = NavEnv::new(config.nav.clone())?;
            let n = episodes.unwrap_or(config.eval_episodes);
            let summary = evaluate_policy(&env, &policy, &formula, n, config.seed)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Render { tree, trajectories, common, out } => {
            let config = common.load()?;
            let leaves = match tree {
                Some(path) => leaf_boxes(&Tree::from_json(&fs::read_to_string(path)?)?),
                None => Vec::new(),
            };
            let paths = match trajectories {
                Some(path) => load_trajectories(&path, TrajectoryFormat::from_path(&path))?
                    .iter()
                    .map(xy_path)
                    .collect(),
                None => Vec::new(),
            };
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&out, render_scene(&config.nav, &leaves, &paths))?;
        }
        Command::Pipeline { common, depth, threshold, out } => {
            let mut config = common.load()?;
            if let Some(d) = depth {
                config.tree.max_depth = d;
            }
            config.prune_threshold = threshold;
            let result = run_pipeline(&config)?;
            result.write_artifacts(&out)?;
            println!("formula:  {}", render_text(&result.formula));
            println!("pruned:   {}", render_text(&result.pruned));
            let e = result.evaluation;
            println!(
                "eval: goal_rate={} mean_gt_cost={} mean_formula_cost={} mean_reward={}",
                e.goal_rate, e.mean_gt_cost, e.mean_formula_cost, e.mean_reward
            );
        }
    }
    Ok(())
}
