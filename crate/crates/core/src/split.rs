//! Split scoring and candidate generation for the one-class tree.
//!
//! A node is split along one dimension into sorted disjoint intervals. Two
//! strategy families decide how: an [`Impurity`] scores a candidate interval
//! set against the parent range (1.0 means no gain, lower is better), and a
//! [`Partitioner`] proposes candidate interval sets from the samples and
//! their density estimate.

use std::sync::{Arc, OnceLock};

use crate::density::{
    detect_modes, impurity, partition_intervals, DensityCurve, Interval, IntervalSet,
};
use crate::error::{Error, Result};
use crate::registry::{Named, Registry};

/// A candidate split along one dimension, with the number of samples that
/// fall in each interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub intervals: IntervalSet,
    pub counts: Vec<usize>,
}

impl Candidate {
    pub fn from_samples(samples: &[f64], intervals: IntervalSet) -> Self {
        let mut counts = vec![0; intervals.len()];
        for &x in samples {
            if let Some(i) = intervals.locate(x) {
                counts[i] += 1;
            }
        }
        Self { intervals, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

pub trait Impurity: Named + Send + Sync {
    /// Score in `[0, 1]`; 1 means the candidate does not improve on the parent.
    fn score(&self, candidate: &Candidate, parent_lo: f64, parent_hi: f64) -> Result<f64>;
}

/// Covered-width fraction of the parent range.
pub struct WidthFraction;

impl Named for WidthFraction {
    fn name(&self) -> &'static str {
        "width_fraction"
    }
}

impl Impurity for WidthFraction {
    fn score(&self, candidate: &Candidate, parent_lo: f64, parent_hi: f64) -> Result<f64> {
        impurity(&candidate.intervals, parent_lo, parent_hi)
    }
}

/// Gini impurity against a uniform background class.
///
/// The parent range is assumed to hold as many uniformly spread background
/// points as there are samples. An interval holding a fraction `c` of the
/// samples and a fraction `f` of the parent width then has weighted Gini
/// `c f / (c + f)`; uncovered gaps hold only background and are pure. The sum
/// is normalised by the parent's Gini of one half, so a single interval over
/// the whole range scores 1 and an interval of zero width scores 0.
pub struct BackgroundGini;

impl Named for BackgroundGini {
    fn name(&self) -> &'static str {
        "background_gini"
    }
}

impl Impurity for BackgroundGini {
    fn score(&self, candidate: &Candidate, parent_lo: f64, parent_hi: f64) -> Result<f64> {
        let width = parent_hi - parent_lo;
        if !(width > 0.0) {
            return Err(Error::Domain(format!(
                "parent range [{parent_lo}, {parent_hi}] has no width"
            )));
        }
        let total = candidate.total();
        if total == 0 {
            return Err(Error::Domain("candidate holds no samples".into()));
        }
        let n = total as f64;
        let weighted: f64 = candidate
            .intervals
            .intervals
            .iter()
            .zip(&candidate.counts)
            .map(|(iv, &count)| {
                let c = count as f64 / n;
                let f = (iv.width() / width).clamp(0.0, 1.0);
                if c + f > 0.0 {
                    c * f / (c + f)
                } else {
                    0.0
                }
            })
            .sum();
        Ok((2.0 * weighted).clamp(0.0, 1.0))
    }
}

pub fn impurities() -> &'static Registry<dyn Impurity> {
    static REGISTRY: OnceLock<Registry<dyn Impurity>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn Impurity> = Registry::new("impurity");
        reg.register(Arc::new(BackgroundGini));
        reg.register(Arc::new(WidthFraction));
        reg
    })
}

/// Inputs shared by all partitioners.
pub struct PartitionContext {
    pub dim: usize,
    pub rel_floor: f64,
}

pub trait Partitioner: Named + Send + Sync {
    /// Candidate splits of `samples`, which must be non-empty. Every sample
    /// lies in exactly one interval of each candidate.
    fn propose(
        &self,
        samples: &[f64],
        curve: &DensityCurve,
        ctx: &PartitionContext,
    ) -> Result<Vec<Candidate>>;
}

/// Intervals between density valleys of consecutive modes.
pub struct Modes;

impl Named for Modes {
    fn name(&self) -> &'static str {
        "modes"
    }
}

impl Partitioner for Modes {
    fn propose(
        &self,
        samples: &[f64],
        curve: &DensityCurve,
        ctx: &PartitionContext,
    ) -> Result<Vec<Candidate>> {
        let modes = detect_modes(curve, ctx.rel_floor);
        if modes.is_empty() {
            return Ok(Vec::new());
        }
        let intervals = partition_intervals(samples, curve, &modes, ctx.dim)?;
        Ok(vec![Candidate::from_samples(samples, intervals)])
    }
}

/// The whole sample range plus every two-way cut between consecutive
/// distinct samples.
///
/// Mode valleys only separate multimodal data; these cuts also let the
/// impurity locate a jump in density level, such as the seam between two
/// adjoining boxes sampled at different densities.
pub struct LevelCuts;

impl Named for LevelCuts {
    fn name(&self) -> &'static str {
        "level_cuts"
    }
}

impl Partitioner for LevelCuts {
    fn propose(
        &self,
        samples: &[f64],
        _curve: &DensityCurve,
        ctx: &PartitionContext,
    ) -> Result<Vec<Candidate>> {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let set = |ivs: Vec<Interval>| IntervalSet {
            dim: ctx.dim,
            intervals: ivs,
        };
        let mut out = vec![Candidate {
            intervals: set(vec![Interval::new(sorted[0], sorted[n - 1])]),
            counts: vec![n],
        }];
        for k in 1..n {
            if sorted[k - 1] < sorted[k] {
                out.push(Candidate {
                    intervals: set(vec![
                        Interval::new(sorted[0], sorted[k - 1]),
                        Interval::new(sorted[k], sorted[n - 1]),
                    ]),
                    counts: vec![k, n - k],
                });
            }
        }
        Ok(out)
    }
}

/// Union of [`Modes`] and [`LevelCuts`] candidates.
pub struct ModesAndCuts;

impl Named for ModesAndCuts {
    fn name(&self) -> &'static str {
        "modes_and_cuts"
    }
}

impl Partitioner for ModesAndCuts {
    fn propose(
        &self,
        samples: &[f64],
        curve: &DensityCurve,
        ctx: &PartitionContext,
    ) -> Result<Vec<Candidate>> {
        let mut out = Modes.propose(samples, curve, ctx)?;
        for cand in LevelCuts.propose(samples, curve, ctx)? {
            if !out.iter().any(|c| c.intervals == cand.intervals) {
                out.push(cand);
            }
        }
        Ok(out)
    }
}

pub fn partitioners() -> &'static Registry<dyn Partitioner> {
    static REGISTRY: OnceLock<Registry<dyn Partitioner>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let mut reg: Registry<dyn Partitioner> = Registry::new("partitioner");
        reg.register(Arc::new(ModesAndCuts));
        reg.register(Arc::new(Modes));
        reg.register(Arc::new(LevelCuts));
        reg
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::kde_estimate;

    fn set(ivs: &[(f64, f64)]) -> IntervalSet {
        IntervalSet {
            dim: 0,
            intervals: ivs.iter().map(|&(a, b)| Interval::new(a, b)).collect(),
        }
    }

    #[test]
    fn background_gini_reference_values() {
        let g = BackgroundGini;
        // No gain.
        let full = Candidate {
            intervals: set(&[(0.0, 1.0)]),
            counts: vec![10],
        };
        assert!((g.score(&full, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        // All mass in a quarter of the range: 2 * (1 * 0.25 / 1.25) = 0.4.
        let narrow = Candidate {
            intervals: set(&[(0.1, 0.3)]),
            counts: vec![10],
        };
        assert!((g.score(&narrow, 0.1, 0.9).unwrap() - 0.4).abs() < 1e-12);
        // Mass 3/7 over 3/4 of the range and 4/7 over 1/4.
        let step = Candidate {
            intervals: set(&[(0.1, 0.7), (0.7, 0.9)]),
            counts: vec![3, 4],
        };
        let c = [3.0 / 7.0, 4.0 / 7.0];
        let f = [0.75, 0.25];
        let expected = 2.0 * (c[0] * f[0] / (c[0] + f[0]) + c[1] * f[1] / (c[1] + f[1]));
        assert!((g.score(&step, 0.1, 0.9).unwrap() - expected).abs() < 1e-12);
        assert!(g.score(&step, 0.5, 0.5).is_err());
    }

    #[test]
    fn width_fraction_ignores_counts() {
        let cand = Candidate {
            intervals: set(&[(0.1, 0.3), (0.7, 0.9)]),
            counts: vec![1, 100],
        };
        assert!((WidthFraction.score(&cand, 0.0, 1.0).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn level_cuts_enumerate_distinct_splits() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let curve = kde_estimate(&x, 0.5, 64).unwrap();
        let ctx = PartitionContext {
            dim: 0,
            rel_floor: 0.05,
        };
        let cands = LevelCuts.propose(&x, &curve, &ctx).unwrap();
        // Whole range plus the three ways of cutting four points in two.
        assert_eq!(cands.len(), 4);
        assert_eq!(cands[0].intervals, set(&[(0.0, 3.0)]));
        assert_eq!(cands[1].intervals, set(&[(0.0, 0.0), (1.0, 3.0)]));
        assert_eq!(cands[3].intervals, set(&[(0.0, 2.0), (3.0, 3.0)]));
        assert_eq!(cands[3].counts, vec![3, 1]);
        for c in &cands {
            assert_eq!(c, &Candidate::from_samples(&x, c.intervals.clone()));
        }
        // Ties never straddle a cut.
        let y = [1.0, 1.0, 2.0];
        let curve = kde_estimate(&y, 0.5, 64).unwrap();
        assert_eq!(LevelCuts.propose(&y, &curve, &ctx).unwrap().len(), 2);
    }

    #[test]
    fn registries_resolve_defaults() {
        assert!(impurities().contains("background_gini"));
        assert!(impurities().contains("width_fraction"));
        assert!(partitioners().contains("modes_and_cuts"));
        assert!(partitioners().get("nope").is_err());
    }
}
