//! One-class decision tree over a feature dataset.
//!
//! The root covers the dataset's bounding box. Each internal node narrows one
//! dimension of its box into one or more disjoint closed intervals, one child
//! per interval; the union of the leaf boxes is the learned safe set.

use serde::{Deserialize, Serialize};

use crate::density::{bandwidth_rules, kde_estimate_with, kernels, DensityCurve, IntervalSet, MIN_GRID_SIZE};
use crate::error::{Error, Result};
use crate::features::{feature_bounds, Dataset, FeatureBounds, FeatureVector};
use crate::split::{impurities, partitioners, Candidate, PartitionContext};

/// Largest grid the split search refines a density estimate to.
pub const MAX_GRID_SIZE: usize = 16_384;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples: usize,
    /// Candidate splits leaving fewer samples than this in some interval are
    /// not considered.
    pub min_child_samples: usize,
    /// Same, as a fraction of the node's samples.
    pub min_child_fraction: f64,
    /// Minimum density grid size; refined so the spacing is at most h/2.
    pub grid_size: usize,
    /// Modes below this fraction of the peak density are ignored.
    pub rel_floor: f64,
    /// A split must reach impurity <= 1 - min_gain.
    pub min_gain: f64,
    /// Fixed bandwidth; `None` uses `bandwidth_rule`.
    pub bandwidth: Option<f64>,
    pub bandwidth_rule: String,
    pub kernel: String,
    pub impurity: String,
    pub partitioner: String,
    /// Added to a candidate's impurity per interval beyond the first when
    /// ranking candidates.
    pub interval_penalty: f64,
    /// Candidates within this of a dimension's best rank score count as
    /// equally good; among them the one whose narrowest gap between intervals
    /// is widest wins.
    pub cut_tolerance: f64,
    /// Dimensions whose best score is within this of the overall best count as
    /// tied; ties go to the lowest dimension index.
    pub tie_tolerance: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: 4,
            min_samples: 10,
            min_child_samples: 10,
            min_child_fraction: 0.02,
            grid_size: 256,
            rel_floor: 0.05,
            min_gain: 0.05,
            bandwidth: None,
            bandwidth_rule: "silverman".into(),
            kernel: "gaussian".into(),
            impurity: "background_gini".into(),
            partitioner: "modes_and_cuts".into(),
            interval_penalty: 0.02,
            cut_tolerance: 0.003,
            tie_tolerance: 0.035,
        }
    }
}

impl TreeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.min_samples == 0 {
            return bad("min_samples must be positive".into());
        }
        if self.grid_size < MIN_GRID_SIZE {
            return bad(format!("grid_size must be at least {MIN_GRID_SIZE}"));
        }
        if !(self.rel_floor > 0.0 && self.rel_floor < 1.0) {
            return bad(format!("rel_floor must be in (0, 1), got {}", self.rel_floor));
        }
        if !(self.min_gain > 0.0 && self.min_gain < 1.0) {
            return bad(format!("min_gain must be in (0, 1), got {}", self.min_gain));
        }
        if let Some(h) = self.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("bandwidth must be positive, got {h}"));
            }
        }
        if !(0.0..0.5).contains(&self.min_child_fraction) {
            return bad(format!(
                "min_child_fraction must be in [0, 0.5), got {}",
                self.min_child_fraction
            ));
        }
        if !(self.interval_penalty >= 0.0)
            || !(self.cut_tolerance >= 0.0)
            || !(self.tie_tolerance >= 0.0)
        {
            return bad(
                "interval_penalty, cut_tolerance and tie_tolerance must be non-negative".into(),
            );
        }
        bandwidth_rules().get(&self.bandwidth_rule)?;
        kernels().get(&self.kernel)?;
        impurities().get(&self.impurity)?;
        partitioners().get(&self.partitioner)?;
        Ok(())
    }
}

/// Axis-aligned closed box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperRect {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl HyperRect {
    pub fn from_bounds(bounds: &FeatureBounds) -> Self {
        Self {
            lo: bounds.min.clone(),
            hi: bounds.max.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn width(&self, j: usize) -> f64 {
        self.hi[j] - self.lo[j]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.width(j)).product()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }

    pub fn contains_rect(&self, other: &HyperRect) -> bool {
        (0..self.dim()).all(|j| self.lo[j] <= other.lo[j] && other.hi[j] <= self.hi[j])
    }

    /// Copy with dimension `j` narrowed to `[lo, hi]`.
    pub fn narrowed(&self, j: usize, lo: f64, hi: f64) -> Self {
        let mut out = self.clone();
        out.lo[j] = lo;
        out.hi[j] = hi;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeChild {
    #[serde(rename = "L")]
    pub lo: f64,
    #[serde(rename = "R")]
    pub hi: f64,
    pub node: TreeNode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    #[serde(rename = "box")]
    pub rect: HyperRect,
    pub split_dim: Option<usize>,
    pub children: Vec<TreeChild>,
    pub sample_count: usize,
}

impl TreeNode {
    pub fn leaf(rect: HyperRect, sample_count: usize) -> Self {
        Self {
            rect,
            split_dim: None,
            children: Vec::new(),
            sample_count,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn contains(&self, point: &[f64]) -> bool {
        if !self.rect.contains(point) {
            return false;
        }
        match self.split_dim {
            None => true,
            Some(j) => self
                .children
                .iter()
                .any(|c| c.lo <= point[j] && point[j] <= c.hi && c.node.contains(point)),
        }
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a HyperRect>) {
        if self.is_leaf() {
            out.push(&self.rect);
        }
        for c in &self.children {
            c.node.collect_leaves(out);
        }
    }

    fn depth(&self) -> usize {
        self.children
            .iter()
            .map(|c| 1 + c.node.depth())
            .max()
            .unwrap_or(0)
    }

    /// Checks the structural invariants of the subtree.
    fn check(&self) -> Result<()> {
        let broken = |msg: String| Err(Error::Schema(format!("invalid tree: {msg}")));
        if self.split_dim.is_none() != self.children.is_empty() {
            return broken("leaf must have neither split_dim nor children".into());
        }
        let Some(j) = self.split_dim else {
            return Ok(());
        };
        if j >= self.rect.dim() {
            return broken(format!("split_dim {j} out of range"));
        }
        let mut prev_hi = f64::NEG_INFINITY;
        for c in &self.children {
            if !(c.lo <= c.hi) || c.lo < prev_hi {
                return broken(format!("child intervals not sorted and disjoint at [{}, {}]", c.lo, c.hi));
            }
            if c.lo < self.rect.lo[j] || c.hi > self.rect.hi[j] {
                return broken(format!("child interval [{}, {}] outside parent box", c.lo, c.hi));
            }
            if c.node.rect != self.rect.narrowed(j, c.lo, c.hi) {
                return broken("child box must equal parent box narrowed along split_dim".into());
            }
            prev_hi = c.hi;
            c.node.check()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tree {
    pub k: usize,
    pub config: TreeConfig,
    pub bounds: FeatureBounds,
    pub root: TreeNode,
}

impl Tree {
    /// Assembles a tree from parts, checking its invariants.
    pub fn from_parts(config: TreeConfig, bounds: FeatureBounds, root: TreeNode) -> Result<Self> {
        let tree = Self {
            k: bounds.dim(),
            config,
            bounds,
            root,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.min.len() != self.k || self.bounds.max.len() != self.k {
            return Err(Error::Schema("bounds dimension differs from k".into()));
        }
        if self.root.rect != HyperRect::from_bounds(&self.bounds) {
            return Err(Error::Schema("root box must equal the feature bounds".into()));
        }
        self.root.check()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: Tree = serde_json::from_str(text)
            .map_err(|e| Error::parse(e.line(), e.column(), e.to_string()))?;
        tree.validate()?;
        Ok(tree)
    }
}

/// The chosen split of a node.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub dim: usize,
    pub intervals: IntervalSet,
    pub impurity: f64,
}

/// Best candidate along one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionScore {
    pub dim: usize,
    pub candidate: Candidate,
    pub impurity: f64,
    /// Best impurity plus per-interval penalty over the dimension's candidates.
    pub rank_score: f64,
}

/// Scores every candidate along dimension `j` and returns the best one.
///
/// `None` when the box has no width along `j` or fewer than two points.
pub fn score_dimension(
    points: &[&FeatureVector],
    rect: &HyperRect,
    j: usize,
    config: &TreeConfig,
) -> Result<Option<DimensionScore>> {
    let (lo, hi) = (rect.lo[j], rect.hi[j]);
    if !(hi > lo) || points.len() < 2 {
        return Ok(None);
    }
    let samples: Vec<f64> = points.iter().map(|p| p[j]).collect();
    let curve = dimension_curve(&samples, config)?;
    let ctx = PartitionContext {
        dim: j,
        rel_floor: config.rel_floor,
    };
    let impurity = impurities().get(&config.impurity)?;
    let min_count = config
        .min_child_samples
        .max((config.min_child_fraction * samples.len() as f64).ceil() as usize);
    let mut scored = Vec::new();
    for candidate in partitioners().get(&config.partitioner)?.propose(&samples, &curve, &ctx)? {
        if candidate.counts.iter().any(|&c| c < min_count) {
            continue;
        }
        let n_intervals = candidate.intervals.len();
        let score = impurity.score(&candidate, lo, hi)?;
        let rank_score = score + config.interval_penalty * n_intervals.saturating_sub(1) as f64;
        scored.push(DimensionScore {
            dim: j,
            candidate,
            impurity: score,
            rank_score,
        });
    }
    let Some(top) = scored.iter().map(|s| s.rank_score).min_by(f64::total_cmp) else {
        return Ok(None);
    };
    // Near-optimal candidates are told apart by the emptiest boundary.
    let mut best: Option<(f64, DimensionScore)> = None;
    for s in scored {
        if s.rank_score > top + config.cut_tolerance {
            continue;
        }
        let gap = narrowest_gap(&s.candidate.intervals);
        if best.as_ref().is_none_or(|(g, b)| {
            gap > *g || (gap == *g && s.rank_score < b.rank_score)
        }) {
            best = Some((gap, s));
        }
    }
    Ok(best.map(|(_, mut s)| {
        s.rank_score = top;
        s
    }))
}

/// The density estimate the builder uses for one dimension of a node.
pub fn dimension_curve(samples: &[f64], config: &TreeConfig) -> Result<DensityCurve> {
    let h = match config.bandwidth {
        Some(h) => h,
        None => bandwidth_rules().get(&config.bandwidth_rule)?.bandwidth(samples)?,
    };
    let kernel = kernels().get(&config.kernel)?;
    let smin = samples.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    kde_estimate_with(
        kernel.as_ref(),
        samples,
        h,
        refined_grid_size(smax - smin + 6.0 * h, h, config.grid_size),
    )
}

/// Smallest distance between adjacent intervals; zero for a single interval.
fn narrowest_gap(set: &IntervalSet) -> f64 {
    set.intervals
        .windows(2)
        .map(|w| w[1].lo - w[0].hi)
        .min_by(f64::total_cmp)
        .unwrap_or(0.0)
}

/// Grid size whose spacing over `span` is at most `h / 2`, within
/// `[min_size, MAX_GRID_SIZE]`.
pub fn refined_grid_size(span: f64, h: f64, min_size: usize) -> usize {
    let needed = (2.0 * span / h).ceil();
    if needed.is_finite() && needed > min_size as f64 {
        (needed as usize + 1).min(MAX_GRID_SIZE).max(min_size)
    } else {
        min_size
    }
}

/// Picks the split dimension for the points inside `rect`.
///
/// Each dimension contributes its best candidate; candidates must reach
/// impurity `<= 1 - min_gain`. Among qualifying dimensions the lowest index
/// whose rank score is within `tie_tolerance` of the best wins.
pub fn best_split(
    points: &[&FeatureVector],
    rect: &HyperRect,
    config: &TreeConfig,
) -> Result<Option<Split>> {
    let mut qualifying = Vec::new();
    for j in 0..rect.dim() {
        if let Some(s) = score_dimension(points, rect, j, config)? {
            if s.impurity <= 1.0 - config.min_gain {
                qualifying.push(s);
            }
        }
    }
    let Some(best) = qualifying
        .iter()
        .map(|s| s.rank_score)
        .min_by(f64::total_cmp)
    else {
        return Ok(None);
    };
    let chosen = qualifying
        .into_iter()
        .find(|s| s.rank_score <= best + config.tie_tolerance)
        .expect("the best dimension qualifies");
    Ok(Some(Split {
        dim: chosen.dim,
        intervals: chosen.candidate.intervals,
        impurity: chosen.impurity,
    }))
}

/// Grows the tree depth first from the dataset's bounding box.
pub fn build_tree(dataset: &Dataset, config: &TreeConfig) -> Result<Tree> {
    config.validate()?;
    if dataset.len() < config.min_samples || dataset.is_empty() {
        return Err(Error::Domain(format!(
            "dataset has {} points, fewer than min_samples = {}",
            dataset.len(),
            config.min_samples
        )));
    }
    let bounds = feature_bounds(dataset)?;
    let points: Vec<&FeatureVector> = dataset.points().iter().collect();
    let root = grow(&points, HyperRect::from_bounds(&bounds), 0, config)?;
    Ok(Tree {
        k: dataset.dim(),
        config: config.clone(),
        bounds,
        root,
    })
}

fn grow(
    points: &[&FeatureVector],
    rect: HyperRect,
    depth: usize,
    config: &TreeConfig,
) -> Result<TreeNode> {
    if depth >= config.max_depth || points.len() < config.min_samples {
        return Ok(TreeNode::leaf(rect, points.len()));
    }
    let Some(split) = best_split(points, &rect, config)? else {
        return Ok(TreeNode::leaf(rect, points.len()));
    };
    let j = split.dim;
    let mut children = Vec::with_capacity(split.intervals.len());
    for iv in &split.intervals.intervals {
        let inside: Vec<&FeatureVector> = points
            .iter()
            .copied()
            .filter(|p| iv.contains(p[j]))
            .collect();
        let node = grow(&inside, rect.narrowed(j, iv.lo, iv.hi), depth + 1, config)?;
        children.push(TreeChild {
            lo: iv.lo,
            hi: iv.hi,
            node,
        });
    }
    Ok(TreeNode {
        rect,
        split_dim: Some(j),
        children,
        sample_count: points.len(),
    })
}

/// Whether `point` lies in at least one leaf box (closed intervals).
pub fn contains(tree: &Tree, point: &[f64]) -> Result<bool> {
    if point.len() != tree.k {
        return Err(Error::Domain(format!(
            "point has dimension {}, tree expects {}",
            point.len(),
            tree.k
        )));
    }
    Ok(tree.root.contains(point))
}

/// Leaf boxes in depth-first order.
pub fn leaf_boxes(tree: &Tree) -> Vec<HyperRect> {
    let mut out = Vec::new();
    tree.root.collect_leaves(&mut out);
    out.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::Interval;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_box(n: usize, lo: &[f64], hi: &[f64], rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                lo.iter()
                    .zip(hi)
                    .map(|(&a, &b)| rng.random_range(a..=b))
                    .collect()
            })
            .collect()
    }

    fn refs(ds: &Dataset) -> Vec<&FeatureVector> {
        ds.points().iter().collect()
    }

    #[test]
    fn uniform_box_has_no_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = Dataset::from_rows(2, uniform_box(2000, &[0.0, 0.0], &[1.0, 2.0], &mut rng)).unwrap();
        let rect = HyperRect::from_bounds(&feature_bounds(&ds).unwrap());
        assert_eq!(best_split(&refs(&ds), &rect, &TreeConfig::default()).unwrap(), None);
        let tree = build_tree(&ds, &TreeConfig::default()).unwrap();
        assert!(tree.root.is_leaf());
    }

    #[test]
    fn clusters_along_dim_three_split_there() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rows = uniform_box(300, &[0.0; 5], &[1.0, 1.0, 1.0, 0.2, 1.0], &mut rng);
        rows.extend(uniform_box(300, &[0.0; 5], &[1.0, 1.0, 1.0, 1.0, 1.0], &mut rng).into_iter().map(|mut r| {
            r[3] = 0.8 + 0.2 * r[3];
            r
        }));
        let ds = Dataset::from_rows(5, rows).unwrap();
        let rect = HyperRect::from_bounds(&feature_bounds(&ds).unwrap());
        let split = best_split(&refs(&ds), &rect, &TreeConfig::default()).unwrap().unwrap();
        assert_eq!(split.dim, 3);
        assert_eq!(split.intervals.len(), 2);
        // Direct scan: each interval brackets one cluster exactly.
        let col = ds.column(3);
        let low_max = col.iter().copied().filter(|&v| v <= 0.2).fold(f64::MIN, f64::max);
        let high_min = col.iter().copied().filter(|&v| v >= 0.8).fold(f64::MAX, f64::min);
        assert_eq!(split.intervals.intervals[0].hi, low_max);
        assert_eq!(split.intervals.intervals[1].lo, high_min);
    }

    #[test]
    fn depth_zero_gives_single_leaf() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = Dataset::from_rows(2, uniform_box(50, &[0.0, 0.0], &[1.0, 1.0], &mut rng)).unwrap();
        let config = TreeConfig {
            max_depth: 0,
            ..TreeConfig::default()
        };
        let tree = build_tree(&ds, &config).unwrap();
        assert!(tree.root.is_leaf());
        assert_eq!(leaf_boxes(&tree), vec![HyperRect::from_bounds(&feature_bounds(&ds).unwrap())]);
        assert_eq!(tree.root.sample_count, 50);
    }

    #[test]
    fn too_few_samples_is_domain_error() {
        let ds = Dataset::from_rows(1, vec![vec![0.0], vec![1.0]]).unwrap();
        assert!(matches!(build_tree(&ds, &TreeConfig::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_config_rejected() {
        let ds = Dataset::from_rows(1, (0..20).map(|i| vec![i as f64]).collect()).unwrap();
        for config in [
            TreeConfig { min_gain: 1.0, ..TreeConfig::default() },
            TreeConfig { rel_floor: 0.0, ..TreeConfig::default() },
            TreeConfig { min_samples: 0, ..TreeConfig::default() },
            TreeConfig { impurity: "entropy".into(), ..TreeConfig::default() },
            TreeConfig { bandwidth: Some(-1.0), ..TreeConfig::default() },
        ] {
            assert!(matches!(build_tree(&ds, &config), Err(Error::Config(_))), "{config:?}");
        }
    }

    #[test]
    fn contains_checks_dimension() {
        let ds = Dataset::from_rows(2, (0..20).map(|i| vec![i as f64, 0.0]).collect()).unwrap();
        let tree = build_tree(&ds, &TreeConfig::default()).unwrap();
        assert!(matches!(contains(&tree, &[1.0]), Err(Error::Domain(_))));
        assert!(contains(&tree, &[3.0, 0.0]).unwrap());
        assert!(!contains(&tree, &[3.0, 0.1]).unwrap());
    }

    #[test]
    fn hand_built_tree_membership() {
        let bounds = FeatureBounds {
            min: vec![0.0, 0.0],
            max: vec![1.0, 1.0],
        };
        let root_rect = HyperRect::from_bounds(&bounds);
        let root = TreeNode {
            rect: root_rect.clone(),
            split_dim: Some(0),
            children: vec![
                TreeChild { lo: 0.0, hi: 0.2, node: TreeNode::leaf(root_rect.narrowed(0, 0.0, 0.2), 5) },
                TreeChild { lo: 0.6, hi: 1.0, node: TreeNode::leaf(root_rect.narrowed(0, 0.6, 1.0), 5) },
            ],
            sample_count: 10,
        };
        let tree = Tree::from_parts(TreeConfig::default(), bounds, root).unwrap();
        assert!(contains(&tree, &[0.2, 0.5]).unwrap());
        assert!(!contains(&tree, &[0.4, 0.5]).unwrap());
        assert!(contains(&tree, &[0.6, 1.0]).unwrap());
        assert_eq!(leaf_boxes(&tree).len(), 2);

        let json = tree.to_json();
        assert!(json.contains("\"box\"") && json.contains("\"L\"") && json.contains("\"split_dim\""));
        assert_eq!(Tree::from_json(&json).unwrap(), tree);
    }

    #[test]
    fn malformed_trees_rejected() {
        let bounds = FeatureBounds { min: vec![0.0], max: vec![1.0] };
        let rect = HyperRect::from_bounds(&bounds);
        let overlapping = TreeNode {
            rect: rect.clone(),
            split_dim: Some(0),
            children: vec![
                TreeChild { lo: 0.0, hi: 0.6, node: TreeNode::leaf(rect.narrowed(0, 0.0, 0.6), 1) },
                TreeChild { lo: 0.5, hi: 1.0, node: TreeNode::leaf(rect.narrowed(0, 0.5, 1.0), 1) },
            ],
            sample_count: 2,
        };
        assert!(Tree::from_parts(TreeConfig::default(), bounds.clone(), overlapping).is_err());
        let wrong_box = TreeNode {
            rect: rect.clone(),
            split_dim: Some(0),
            children: vec![TreeChild { lo: 0.0, hi: 0.6, node: TreeNode::leaf(rect.clone(), 1) }],
            sample_count: 1,
        };
        assert!(Tree::from_parts(TreeConfig::default(), bounds.clone(), wrong_box).is_err());
        assert!(Tree::from_json("{\"k\": 1}").is_err());
    }

    #[test]
    fn refined_grid_size_bounds() {
        assert_eq!(refined_grid_size(1.0, 0.5, 256), 256);
        assert_eq!(refined_grid_size(100.0, 0.1, 256), 2001);
        assert_eq!(refined_grid_size(1e9, 1e-9, 256), MAX_GRID_SIZE);
    }

    #[test]
    fn interval_helpers() {
        let iv = Interval::new(0.1, 0.3);
        assert!(iv.contains(0.1) && iv.contains(0.3) && !iv.contains(0.31));
    }
}
