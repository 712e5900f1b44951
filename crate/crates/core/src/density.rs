//! One-dimensional kernel density estimation and mode-based interval partitioning.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::{Named, Registry};

/// Smallest grid accepted by [`kde_estimate`].
pub const MIN_GRID_SIZE: usize = 16;

/// A symmetric smoothing kernel with unit mass.
pub trait Kernel: Named + Send + Sync {
    fn value(&self, u: f64) -> f64;

    /// |u| beyond which the kernel is treated as zero.
    fn support(&self) -> f64;
}

pub struct Gaussian;

impl Named for Gaussian {
    fn name(&self) -> &'static str {
        "gaussian"
    }
}

impl Kernel for Gaussian {
    fn value(&self, u: f64) -> f64 {
        (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
    }

    // exp(-32) / sqrt(2 pi) ~ 5e-15
    fn support(&self) -> f64 {
        8.0
    }
}

pub struct Epanechnikov;

impl Named for Epanechnikov {
    fn name(&self) -> &'static str {
        "epanechnikov"
    }
}

impl Kernel for Epanechnikov {
    fn value(&self, u: f64) -> f64 {
        if u.abs() <= 1.0 {
            0.75 * (1.0 - u * u)
        } else {
            0.0
        }
    }

    fn support(&self) -> f64 {
        1.0
    }
}

pub fn kernels() -> &'static Registry<dyn Kernel> {
    static REGISTRY: OnceLock<Registry<dyn Kernel>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn Kernel> = Registry::new("kernel");
        reg.register(Arc::new(Gaussian));
        reg.register(Arc::new(Epanechnikov));
        reg
    })
}

/// A rule of thumb mapping a sample to a bandwidth.
pub trait BandwidthRule: Named + Send + Sync {
    fn bandwidth(&self, samples: &[f64]) -> Result<f64>;
}

pub struct Silverman;

impl Named for Silverman {
    fn name(&self) -> &'static str {
        "silverman"
    }
}

impl BandwidthRule for Silverman {
    fn bandwidth(&self, samples: &[f64]) -> Result<f64> {
        bandwidth_silverman(samples)
    }
}

/// Normal-reference rule `1.06 sigma n^(-1/5)`.
pub struct Scott;

impl Named for Scott {
    fn name(&self) -> &'static str {
        "scott"
    }
}

impl BandwidthRule for Scott {
    fn bandwidth(&self, samples: &[f64]) -> Result<f64> {
        let stats = SpreadStats::of(samples)?;
        if stats.std_dev == 0.0 {
            return Ok(stats.degenerate_bandwidth());
        }
        Ok(1.06 * stats.std_dev * stats.n.powf(-0.2))
    }
}

pub fn bandwidth_rules() -> &'static Registry<dyn BandwidthRule> {
    static REGISTRY: OnceLock<Registry<dyn BandwidthRule>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn BandwidthRule> = Registry::new("bandwidth rule");
        reg.register(Arc::new(Silverman));
        reg.register(Arc::new(Scott));
        reg
    })
}

struct SpreadStats {
    n: f64,
    std_dev: f64,
    iqr: f64,
    range: f64,
}

impl SpreadStats {
    fn of(samples: &[f64]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Domain(format!(
                "bandwidth needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
        Ok(Self {
            n,
            std_dev: var.sqrt(),
            iqr,
            range: sorted[sorted.len() - 1] - sorted[0],
        })
    }

    fn degenerate_bandwidth(&self) -> f64 {
        1e-3 * (self.range + 1.0)
    }
}

/// Linear-interpolation quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule: `0.9 min(sigma, IQR/1.34) n^(-1/5)`.
///
/// Falls back to sigma when the IQR is zero and to `1e-3 (max - min + 1)` when
/// sigma is zero.
pub fn bandwidth_silverman(samples: &[f64]) -> Result<f64> {
    let stats = SpreadStats::of(samples)?;
    if stats.std_dev == 0.0 {
        return Ok(stats.degenerate_bandwidth());
    }
    let spread = if stats.iqr > 0.0 {
        stats.std_dev.min(stats.iqr / 1.34)
    } else {
        stats.std_dev
    };
    Ok(0.9 * spread * stats.n.powf(-0.2))
}

/// A density evaluated on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

impl DensityCurve {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }

    /// Trapezoidal integral over the whole grid.
    pub fn integral(&self) -> f64 {
        let dx = self.spacing();
        let inner: f64 = self.density.iter().sum();
        dx * (inner - 0.5 * (self.density[0] + self.density[self.len() - 1]))
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }
}

/// Gaussian kernel density estimate on `grid_size` points spanning
/// `[min - 3h, max + 3h]`.
pub fn kde_estimate(samples: &[f64], h: f64, grid_size: usize) -> Result<DensityCurve> {
    kde_estimate_with(&Gaussian, samples, h, grid_size)
}

pub fn kde_estimate_with(
    kernel: &dyn Kernel,
    samples: &[f64],
    h: f64,
    grid_size: usize,
) -> Result<DensityCurve> {
    if samples.is_empty() {
        return Err(Error::Domain("kde needs at least one sample".into()));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {h}")));
    }
    if grid_size < MIN_GRID_SIZE {
        return Err(Error::Domain(format!(
            "grid size must be at least {MIN_GRID_SIZE}, got {grid_size}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let lo = sorted[0] - 3.0 * h;
    let hi = sorted[sorted.len() - 1] + 3.0 * h;
    let step = (hi - lo) / (grid_size - 1) as f64;
    let grid: Vec<f64> = (0..grid_size).map(|i| lo + step * i as f64).collect();

    let reach = kernel.support() * h;
    let norm = 1.0 / (samples.len() as f64 * h);
    let density = grid
        .iter()
        .map(|&x| {
            let start = sorted.partition_point(|&s| s < x - reach);
            let end = sorted.partition_point(|&s| s <= x + reach);
            norm * sorted[start..end]
                .iter()
                .map(|&s| kernel.value((x - s) / h))
                .sum::<f64>()
        })
        .collect();
    Ok(DensityCurve {
        grid,
        density,
        bandwidth: h,
    })
}

/// Grid indices of the local maxima of `curve` whose density is at least
/// `rel_floor` times the global maximum.
///
/// Interior points must be strictly above both neighbours; endpoints strictly
/// above their single neighbour. If no point qualifies but the curve is not
/// identically zero, the leftmost global maximum is returned.
pub fn detect_modes(curve: &DensityCurve, rel_floor: f64) -> Vec<usize> {
    let d = &curve.density;
    let n = d.len();
    let peak = curve.max_density();
    if n == 0 || peak <= 0.0 {
        return Vec::new();
    }
    let floor = rel_floor * peak;
    let is_max = |i: usize| -> bool {
        let left = i == 0 || d[i] > d[i - 1];
        let right = i == n - 1 || d[i] > d[i + 1];
        n > 1 && left && right
    };
    let modes: Vec<usize> = (0..n).filter(|&i| is_max(i) && d[i] >= floor).collect();
    if modes.is_empty() {
        let argmax = d
            .iter()
            .position(|&v| v == peak)
            .expect("peak is attained");
        return vec![argmax];
    }
    modes
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Sorted, disjoint intervals along one feature dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSet {
    pub dim: usize,
    pub intervals: Vec<Interval>,
}

impl IntervalSet {
    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn covered_width(&self) -> f64 {
        self.intervals.iter().map(Interval::width).sum()
    }

    /// Index of the interval containing `x`, if any.
    pub fn locate(&self, x: f64) -> Option<usize> {
        self.intervals.iter().position(|iv| iv.contains(x))
    }
}

/// Splits samples at the density valleys between consecutive modes.
///
/// The cut between two modes is the leftmost grid argmin of the density
/// strictly between them; a sample equal to a cut goes to the left segment.
/// Each non-empty segment becomes the interval spanned by its samples.
pub fn partition_intervals(
    samples: &[f64],
    curve: &DensityCurve,
    modes: &[usize],
    dim: usize,
) -> Result<IntervalSet> {
    if samples.is_empty() {
        return Err(Error::Domain("cannot partition an empty sample".into()));
    }
    if modes.is_empty() {
        return Err(Error::Domain("partition needs at least one mode".into()));
    }
    let mut modes = modes.to_vec();
    modes.sort_unstable();
    modes.dedup();

    let mut cuts = Vec::with_capacity(modes.len() - 1);
    for pair in modes.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b <= a + 1 {
            continue;
        }
        let mut best = a + 1;
        for i in a + 2..b {
            if curve.density[i] < curve.density[best] {
                best = i;
            }
        }
        cuts.push(curve.grid[best]);
    }
    Ok(intervals_from_cuts(samples, &cuts, dim))
}

/// Groups samples into the segments delimited by ascending `cuts`.
pub fn intervals_from_cuts(samples: &[f64], cuts: &[f64], dim: usize) -> IntervalSet {
    let mut segments: Vec<Option<Interval>> = vec![None; cuts.len() + 1];
    for &x in samples {
        let seg = cuts.partition_point(|&c| c < x);
        let slot = &mut segments[seg];
        *slot = Some(match *slot {
            None => Interval::new(x, x),
            Some(iv) => Interval::new(iv.lo.min(x), iv.hi.max(x)),
        });
    }
    IntervalSet {
        dim,
        intervals: segments.into_iter().flatten().collect(),
    }
}

/// Fraction of the parent range covered by the intervals; lower is tighter.
pub fn impurity(intervals: &IntervalSet, parent_lo: f64, parent_hi: f64) -> Result<f64> {
    let width = parent_hi - parent_lo;
    if !(width > 0.0) {
        return Err(Error::Domain(format!(
            "parent range [{parent_lo}, {parent_hi}] has no width"
        )));
    }
    Ok((intervals.covered_width() / width).clamp(0.0, 1.0))
}
