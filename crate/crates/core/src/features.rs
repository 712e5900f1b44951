//! Trajectory ingestion, feature mapping and dataset construction.
//!
//! Two on-disk formats are supported:
//!
//! * JSONL trajectories, one object per line:
//!   `{"states": [[f, ...], ...], "actions": [[f, ...], ...]}`
//! * CSV feature datasets with header `phi0,phi1,...` and one feature vector per row.
//!
//! Numbers are written with the shortest representation that parses back to
//! the identical `f64`, so save/load round trips are exact.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{Named, Registry};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

/// An ordered sequence of state-action pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>) -> Result<Self> {
        if states.len() != actions.len() {
            return Err(Error::Schema(format!(
                "trajectory has {} states but {} actions",
                states.len(),
                actions.len()
            )));
        }
        if states.is_empty() {
            return Err(Error::Schema("trajectory must have at least one step".into()));
        }
        let (sd, ad) = (states[0].len(), actions[0].len());
        let mut steps = Vec::with_capacity(states.len());
        for (t, (state, action)) in states.into_iter().zip(actions).enumerate() {
            if state.len() != sd || action.len() != ad {
                return Err(Error::Schema(format!(
                    "step {t}: expected state/action dims {sd}/{ad}, got {}/{}",
                    state.len(),
                    action.len()
                )));
            }
            if state.iter().chain(&action).any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("step {t}: non-finite value")));
            }
            steps.push(Step { state, action });
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.steps[0].state.len()
    }

    pub fn action_dim(&self) -> usize {
        self.steps[0].action.len()
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.state.as_slice())
    }
}

/// A point in the k-dimensional feature space. All components are finite.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "feature component {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

/// The set of feature vectors the tree is trained on, in trajectory-then-step order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    points: Vec<FeatureVector>,
}

impl Dataset {
    pub fn new(dim: usize, points: Vec<FeatureVector>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("feature dimension must be positive".into()));
        }
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| p.dim() != dim) {
            return Err(Error::Schema(format!(
                "point {i} has dimension {}, expected {dim}",
                p.dim()
            )));
        }
        Ok(Self { dim, points })
    }

    /// Convenience constructor from raw rows.
    pub fn from_rows(dim: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let points = rows
            .into_iter()
            .map(FeatureVector::new)
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[FeatureVector] {
        &self.points
    }

    /// Values of one feature dimension across all points.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[j]).collect()
    }
}

/// Observed per-dimension minimum and maximum of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBounds {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureBounds {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }
}

/// Exact componentwise min and max over the dataset.
pub fn feature_bounds(dataset: &Dataset) -> Result<FeatureBounds> {
    let first = dataset
        .points()
        .first()
        .ok_or_else(|| Error::Domain("cannot compute bounds of an empty dataset".into()))?;
    let mut min = first.values().to_vec();
    let mut max = min.clone();
    for p in &dataset.points()[1..] {
        for (j, &v) in p.values().iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(FeatureBounds { min, max })
}

/// Maps a state-action pair into the feature space.
pub trait FeatureMap: Named + Send + Sync {
    fn output_dim(&self) -> usize;

    fn map(&self, state: &[f64], action: &[f64]) -> Result<FeatureVector>;
}

/// Navigation feature map: the first two state components, `(x, y)`.
pub struct IdentityXy;

impl Named for IdentityXy {
    fn name(&self) -> &'static str {
        "identity_xy"
    }
}

impl FeatureMap for IdentityXy {
    fn output_dim(&self) -> usize {
        2
    }

    fn map(&self, state: &[f64], _action: &[f64]) -> Result<FeatureVector> {
        if state.len() < 2 {
            return Err(Error::Schema(format!(
                "identity_xy needs a state of dimension >= 2, got {}",
                state.len()
            )));
        }
        FeatureVector::new(vec![state[0], state[1]])
    }
}

pub fn feature_maps() -> &'static Registry<dyn FeatureMap> {
    static REGISTRY: OnceLock<Registry<dyn FeatureMap>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn FeatureMap> = Registry::new("feature map");
        reg.register(Arc::new(IdentityXy));
        reg
    })
}

pub fn feature_map(name: &str) -> Result<Arc<dyn FeatureMap>> {
    feature_maps().get(name)
}

/// Flattens trajectories into a dataset through a registered feature map.
pub fn build_dataset(trajectories: &[Trajectory], feature_map_name: &str) -> Result<Dataset> {
    let map = feature_map(feature_map_name)?;
    let points = trajectories
        .iter()
        .flat_map(|tau| tau.steps())
        .map(|step| map.map(&step.state, &step.action))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(map.output_dim(), points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryFormat {
    Jsonl,
    Csv,
}

impl TrajectoryFormat {
    /// Guesses the format from a file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TrajectoryFormat::Csv,
            _ => TrajectoryFormat::Jsonl,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
}

/// Reads trajectories from disk.
///
/// A CSV dataset yields one single-step trajectory per row whose state is the
/// feature row and whose action is empty, so that `identity_xy` maps it back
/// to the same point.
pub fn load_trajectories(path: &Path, format: TrajectoryFormat) -> Result<Vec<Trajectory>> {
    let text = fs::read_to_string(path)?;
    match format {
        TrajectoryFormat::Jsonl => parse_trajectories_jsonl(&text),
        TrajectoryFormat::Csv => {
            let rows = parse_csv_rows(&text)?;
            rows.into_iter()
                .map(|row| Trajectory::new(vec![row], vec![Vec::new()]))
                .collect()
        }
    }
}

pub fn parse_trajectories_jsonl(text: &str) -> Result<Vec<Trajectory>> {
    let mut out: Vec<Trajectory> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrajectoryRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(lineno, e.column().saturating_sub(1), e.to_string()))?;
        let tau = Trajectory::new(record.states, record.actions)
            .map_err(|e| Error::Schema(format!("line {lineno}: {e}")))?;
        if let Some(first) = out.first() {
            if first.state_dim() != tau.state_dim() || first.action_dim() != tau.action_dim() {
                return Err(Error::Schema(format!(
                    "line {lineno}: state/action dims {}/{} differ from earlier {}/{}",
                    tau.state_dim(),
                    tau.action_dim(),
                    first.state_dim(),
                    first.action_dim()
                )));
            }
        }
        out.push(tau);
    }
    Ok(out)
}

pub fn write_trajectories_jsonl<W: Write>(trajectories: &[Trajectory], mut out: W) -> Result<()> {
    for tau in trajectories {
        let record = TrajectoryRecord {
            states: tau.steps.iter().map(|s| s.state.clone()).collect(),
            actions: tau.steps.iter().map(|s| s.action.clone()).collect(),
        };
        let line = serde_json::to_string(&record).map_err(|e| Error::Schema(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn save_trajectories_jsonl(trajectories: &[Trajectory], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_trajectories_jsonl(trajectories, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn dataset_to_csv(dataset: &Dataset) -> String {
    let mut s = (0..dataset.dim())
        .map(|j| format!("phi{j}"))
        .collect::<Vec<_>>()
        .join(",");
    s.push('\n');
    for p in dataset.points() {
        for (j, v) in p.values().iter().enumerate() {
            if j > 0 {
                s.push(',');
            }
            write!(s, "{v:?}").expect("write to String");
        }
        s.push('\n');
    }
    s
}

pub fn save_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_csv(dataset))?;
    Ok(())
}

pub fn parse_dataset_csv(text: &str) -> Result<Dataset> {
    let dim = parse_csv_header(text)?;
    Dataset::from_rows(dim, parse_csv_rows(text)?)
}

pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    parse_dataset_csv(&fs::read_to_string(path)?)
}

/// Loads a dataset from either a CSV dataset or JSONL trajectories mapped
/// through `feature_map_name`.
pub fn load_dataset(path: &Path, feature_map_name: &str) -> Result<Dataset> {
    match TrajectoryFormat::from_path(path) {
        TrajectoryFormat::Csv => load_dataset_csv(path),
        TrajectoryFormat::Jsonl => build_dataset(
            &load_trajectories(path, TrajectoryFormat::Jsonl)?,
            feature_map_name,
        ),
    }
}

fn parse_csv_header(text: &str) -> Result<usize> {
    let header = match text.lines().next() {
        Some(h) => h.trim(),
        None => return Err(Error::parse(1, 0, "missing header")),
    };
    let mut pos = 0;
    for (j, name) in header.split(',').enumerate() {
        if name.trim() != format!("phi{j}") {
            return Err(Error::parse(
                1,
                pos,
                format!("expected column 'phi{j}', found '{name}'"),
            ));
        }
        pos += name.len() + 1;
    }
    Ok(header.split(',').count())
}

fn parse_csv_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let dim = parse_csv_header(text)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(dim);
        let mut pos = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::parse(lineno, pos, format!("invalid number '{}'", field.trim()))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(lineno, pos, format!("non-finite value '{field}'")));
            }
            row.push(v);
            pos += field.len() + 1;
        }
        if row.len() != dim {
            return Err(Error::Schema(format!(
                "line {lineno}: expected {dim} columns, found {}",
                row.len()
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tau(n: usize, offset: f64) -> Trajectory {
        let states = (0..n).map(|i| vec![offset + i as f64, -(i as f64)]).collect();
        let actions = (0..n).map(|_| vec![1.0, 0.0]).collect();
        Trajectory::new(states, actions).unwrap()
    }

    #[test]
    fn jsonl_three_records_of_five_steps() {
        let mut buf = Vec::new();
        let taus = vec![tau(5, 0.0), tau(5, 1.0), tau(5, 2.0)];
        write_trajectories_jsonl(&taus, &mut buf).unwrap();
        let back = parse_trajectories_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.len(), 3);
        assert!(back.iter().all(|t| t.len() == 5));
        assert_eq!(back, taus);
    }

    #[test]
    fn empty_input_is_empty_list() {
        assert!(parse_trajectories_jsonl("").unwrap().is_empty());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.csv");
        fs::write(&p, "").unwrap();
        assert!(load_trajectories(&p, TrajectoryFormat::Csv).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"states\": [[0,0]], \"actions\": [[1,0]]}\n{\"states\": [[0,0]\n";
        match parse_trajectories_jsonl(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_dimensions_are_schema_errors() {
        let within = "{\"states\": [[0,0],[1]], \"actions\": [[1],[1]]}\n";
        assert!(matches!(parse_trajectories_jsonl(within), Err(Error::Schema(_))));
        let across = "{\"states\": [[0,0]], \"actions\": [[1]]}\n{\"states\": [[0,0,0]], \"actions\": [[1]]}\n";
        assert!(matches!(parse_trajectories_jsonl(across), Err(Error::Schema(_))));
        let lengths = "{\"states\": [[0,0],[1,1]], \"actions\": [[1]]}\n";
        assert!(matches!(parse_trajectories_jsonl(lengths), Err(Error::Schema(_))));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(FeatureVector::new(vec![0.0, f64::NAN]).is_err());
        assert!(Trajectory::new(vec![vec![f64::INFINITY, 0.0]], vec![vec![]]).is_err());
        let csv = "phi0,phi1\n0.1,inf\n";
        assert!(matches!(parse_dataset_csv(csv), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn csv_is_locale_independent() {
        assert!(parse_dataset_csv("phi0\n1,5\n").is_err());
        assert!(matches!(
            parse_dataset_csv("phi0,phi1\n1.0,2.0\n1'000.0,3.0\n"),
            Err(Error::Parse { line: 3, position: 0, .. })
        ));
        assert!(matches!(parse_dataset_csv("x,y\n1,2\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn build_dataset_counts_and_order() {
        let taus: Vec<_> = (0..3).map(|i| tau(100, i as f64 * 1000.0)).collect();
        let ds = build_dataset(&taus, "identity_xy").unwrap();
        assert_eq!(ds.len(), 300);
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.points()[100].values(), &[1000.0, 0.0]);
        assert_eq!(ds.points()[299].values(), &[2099.0, -99.0]);
    }

    #[test]
    fn single_step_maps_to_initial_feature_vector() {
        let t = Trajectory::new(vec![vec![0.1, 0.1]], vec![vec![42.0]]).unwrap();
        let ds = build_dataset(&[t], "identity_xy").unwrap();
        assert_eq!(ds.points()[0].values(), &[0.1, 0.1]);
    }

    #[test]
    fn unknown_feature_map_is_config_error() {
        let err = build_dataset(&[tau(1, 0.0)], "lidar16").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn bounds_of_two_points_and_single_point() {
        let ds = Dataset::from_rows(2, vec![vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let b = feature_bounds(&ds).unwrap();
        assert_eq!(b.min, vec![0.0, -1.0]);
        assert_eq!(b.max, vec![2.0, 1.0]);

        let one = Dataset::from_rows(3, vec![vec![0.5, -2.0, 7.0]]).unwrap();
        let b = feature_bounds(&one).unwrap();
        assert_eq!(b.min, b.max);
        assert_eq!(b.min, vec![0.5, -2.0, 7.0]);

        let empty = Dataset::new(2, vec![]).unwrap();
        assert!(matches!(feature_bounds(&empty), Err(Error::Domain(_))));
    }

    fn rows_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..5).prop_flat_map(|k| {
            prop::collection::vec(prop::collection::vec(-1e6f64..1e6, k), 1..40)
        })
    }

    proptest! {
        #[test]
        fn bounds_enclose_every_point(rows in rows_strategy()) {
            let k = rows[0].len();
            let ds = Dataset::from_rows(k, rows).unwrap();
            let b = feature_bounds(&ds).unwrap();
            for p in ds.points() {
                prop_assert!(b.contains(p.values()));
            }
            for j in 0..k {
                prop_assert!(b.min[j] <= b.max[j]);
            }
        }

        #[test]
        fn csv_round_trip_is_exact(rows in rows_strategy(), scale in prop::sample::select(vec![1.0, 1e-9, 3.3e7])) {
            let k = rows[0].len();
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|r| r.into_iter().map(|v| v * scale / 7.0).collect()).collect();
            let ds = Dataset::from_rows(k, rows).unwrap();
            let back = parse_dataset_csv(&dataset_to_csv(&ds)).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
