//! Crossing-probability curves and finite-box critical densities.
//!
//! All estimators here are finite-size quantities for one annulus; they are
//! not infinite-volume thresholds.
//!
//! Labels are coupled across `α` (`ξ_α = 1[U < α]`), so a single replicate
//! determines the whole map `α ↦ 1[crossing]`, which is a step function
//! jumping at a critical level `α*`. The crossing probability at `α` is the
//! law of `α*` evaluated at `α`, and replicates are pooled across all
//! evaluation points.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::Window;
use crate::lattice::Point;
use crate::measure::Sampler;
use crate::percolation::{Adjacency, CrossingQuery, UnionFind};
use crate::rng::{par_replicates, SeedStream};
use crate::stats::{isotonic_increasing, quantile_ci, wilson, EstimateWithCI, DEFAULT_LEVEL};

/// Open crossing of `B(L-1) ↔ B(2L)^c` observed on `B(2L)`; "box" refers
/// to `2L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnulusSpec {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: u32,
    pub adjacency: Adjacency,
}

impl AnnulusSpec {
    pub fn new(d: usize, l: u32, adjacency: Adjacency) -> Result<AnnulusSpec> {
        if l < 1 {
            return Err(invalid("L", "must be at least 1"));
        }
        if d == 0 || d > crate::lattice::MAX_DIM {
            return Err(crate::Error::UnsupportedDimension(d));
        }
        Ok(AnnulusSpec { d, l, adjacency })
    }

    /// Nearest-neighbor annulus for a box of half-width `box_size = 2L`.
    pub fn for_box(d: usize, box_size: u32) -> Result<AnnulusSpec> {
        if box_size % 2 != 0 {
            return Err(invalid("box", "must be even (box = 2L)"));
        }
        AnnulusSpec::new(d, box_size / 2, Adjacency::NearestNeighbor)
    }

    pub fn box_size(&self) -> u32 {
        2 * self.l
    }

    pub fn query(&self) -> CrossingQuery {
        CrossingQuery::annulus(Point::origin(self.d), self.l - 1, 2 * self.l, self.adjacency)
    }

    pub fn window(&self) -> Window {
        Window::cube(Point::origin(self.d), 2 * self.l)
    }
}

/// Window geometry prepared once per annulus.
pub struct CrossingGraph {
    pub window: Arc<Window>,
    neighbors: Vec<Vec<u32>>,
    source: Vec<bool>,
    sink: Vec<bool>,
}

impl CrossingGraph {
    pub fn new(spec: &AnnulusSpec) -> CrossingGraph {
        let window = Arc::new(spec.window());
        let q = spec.query();
        let offsets = spec.adjacency.offsets(spec.d);
        let mut neighbors = Vec::with_capacity(window.len());
        let mut source = Vec::with_capacity(window.len());
        let mut sink = Vec::with_capacity(window.len());
        for p in window.points() {
            neighbors.push(
                offsets
                    .iter()
                    .filter_map(|o| window.index_of(&(*p + *o)).map(|j| j as u32))
                    .collect(),
            );
            source.push(q.inner.is_neighbor(p, spec.adjacency));
            sink.push(q.outer.is_neighbor(p, spec.adjacency));
        }
        CrossingGraph {
            window,
            neighbors,
            source,
            sink,
        }
    }

    /// Smallest `α*` such that the configuration `1[u < α]` crosses for
    /// every `α > α*`; 1 if it never crosses for `α ≤ 1`.
    pub fn critical_level(&self, site_u: &[f64]) -> f64 {
        let n = site_u.len();
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| site_u[a as usize].total_cmp(&site_u[b as usize]));
        let (src, snk) = (n, n + 1);
        let mut uf = UnionFind::new(n + 2);
        let mut open = vec![false; n];
        for &i in &order {
            let i = i as usize;
            let u = site_u[i];
            if u >= 1.0 {
                break;
            }
            open[i] = true;
            for &j in &self.neighbors[i] {
                if open[j as usize] {
                    uf.union(i, j as usize);
                }
            }
            if self.source[i] {
                uf.union(i, src);
            }
            if self.sink[i] {
                uf.union(i, snk);
            }
            if uf.same(src, snk) {
                return u;
            }
        }
        1.0
    }
}

/// `α*` for `n` replicates of `sampler`.
pub fn critical_levels(sampler: &Sampler, graph: &CrossingGraph, n: usize, seeds: SeedStream) -> Result<Vec<f64>> {
    let out = par_replicates(n, seeds, |_, rng| -> Result<f64> {
        let labels = sampler.labels(&graph.window, rng)?;
        Ok(graph.critical_level(&labels.site_u))
    });
    out.into_iter().collect()
}

fn crossing_estimate(levels: &[f64], alpha: f64, level: f64) -> EstimateWithCI {
    let k = levels.iter().filter(|&&a| a < alpha).count() as u64;
    wilson(k, levels.len() as u64, level)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingCurve {
    pub sampler: String,
    pub annulus: AnnulusSpec,
    pub alphas: Vec<f64>,
    pub raw: Vec<EstimateWithCI>,
    /// Isotonic fit of the raw estimates.
    pub fitted: Vec<f64>,
    /// Whether the fit changed any raw value.
    pub isotonic_adjusted: bool,
    pub n: usize,
}

pub fn crossing_curve(
    sampler: &Sampler,
    spec: &AnnulusSpec,
    alphas: &[f64],
    n: usize,
    seeds: SeedStream,
) -> Result<CrossingCurve> {
    if alphas.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid("alphas", "grid must be sorted"));
    }
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(invalid("alphas", "values must lie in [0,1]"));
    }
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let graph = CrossingGraph::new(spec);
    let levels = critical_levels(sampler, &graph, n, seeds)?;
    let raw: Vec<EstimateWithCI> = alphas.iter().map(|&a| crossing_estimate(&levels, a, DEFAULT_LEVEL)).collect();
    let est: Vec<f64> = raw.iter().map(|e| e.estimate).collect();
    let fitted = isotonic_increasing(&est, &vec![1.0; est.len()]);
    Ok(CrossingCurve {
        sampler: sampler.to_string(),
        annulus: *spec,
        alphas: alphas.to_vec(),
        isotonic_adjusted: fitted != est,
        raw,
        fitted,
        n,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BisectionStep {
    pub round: usize,
    pub alpha: f64,
    pub crossing: EstimateWithCI,
    pub n_total: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEstimate {
    pub alpha_c_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_star: f64,
    #[serde(rename = "box")]
    pub box_size: u32,
    pub sampler: String,
    #[serde(rename = "R")]
    pub range: Option<u32>,
    pub n_total: usize,
    /// Set when the crossing probability never passes `p*` inside `[0,1]`.
    pub flag: Option<String>,
    pub trace: Vec<BisectionStep>,
    pub note: String,
}

impl ThresholdEstimate {
    pub fn ci(&self) -> (f64, f64) {
        (self.ci_lo, self.ci_hi)
    }
}

const BISECTION_STEPS: usize = 30;

/// Bisection for the `α` where the crossing probability crosses `p*`.
///
/// Each round adds `schedule[i]` replicates to the pool and reruns the
/// bisection on the pooled estimate; rounds stop once the order-statistic
/// interval of the located `α` is narrower than `tolerance`.
pub fn estimate_threshold(
    sampler: &Sampler,
    spec: &AnnulusSpec,
    p_star: f64,
    tolerance: f64,
    schedule: &[usize],
    seeds: SeedStream,
) -> Result<ThresholdEstimate> {
    if !(p_star > 0.0 && p_star < 1.0) {
        return Err(invalid("p_star", format!("{p_star} is not in (0,1)")));
    }
    if schedule.is_empty() || schedule.contains(&0) {
        return Err(invalid("schedule", "needs positive round sizes"));
    }
    let graph = CrossingGraph::new(spec);
    let mut levels = Vec::new();
    let mut trace = Vec::new();
    let mut result = (0.0, 0.0, 1.0);
    let mut flag = None;
    for (round, &m) in schedule.iter().enumerate() {
        levels.extend(critical_levels(sampler, &graph, m, seeds.child(round as u64))?);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            let c = crossing_estimate(&levels, mid, DEFAULT_LEVEL);
            trace.push(BisectionStep {
                round,
                alpha: mid,
                crossing: c,
                n_total: levels.len(),
            });
            if c.estimate >= p_star {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let mut sorted = levels.clone();
        sorted.sort_by(f64::total_cmp);
        let (_, q_lo, q_hi) = quantile_ci(&sorted, p_star, DEFAULT_LEVEL);
        let point = 0.5 * (lo + hi);
        flag = if crossing_estimate(&levels, 1e-12, DEFAULT_LEVEL).estimate >= p_star {
            Some("crossing probability at least p* everywhere; pinned at 0".to_string())
        } else if crossing_estimate(&levels, 1.0, DEFAULT_LEVEL).estimate < p_star {
            Some("crossing probability below p* everywhere; pinned at 1".to_string())
        } else {
            None
        };
        result = match flag {
            Some(_) if point < 0.5 => (0.0, 0.0, 0.0),
            Some(_) => (1.0, 1.0, 1.0),
            None => (point, q_lo.min(point), q_hi.max(point)),
        };
        if result.2 - result.1 < tolerance {
            break;
        }
    }
    Ok(ThresholdEstimate {
        alpha_c_hat: result.0,
        ci_lo: result.1,
        ci_hi: result.2,
        p_star,
        box_size: spec.box_size(),
        sampler: sampler.to_string(),
        range: sampler.range(),
        n_total: levels.len(),
        flag,
        trace,
        note: "finite-size estimate for one annulus; not an infinite-volume threshold".into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub d: usize,
    #[serde(rename = "R")]
    pub range: u32,
    #[serde(rename = "box")]
    pub box_size: u32,
    pub p_star: f64,
    pub alpha_c_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub pc_hat: f64,
    pub pc_ci_lo: f64,
    pub pc_ci_hi: f64,
    pub gap: f64,
    pub gap_lo: f64,
    pub gap_hi: f64,
    pub n_total: usize,
    pub seed: u64,
}

/// Range of `|a - p|` for `a ∈ [a_lo, a_hi]`, `p ∈ [p_lo, p_hi]`.
pub fn gap_interval(a: (f64, f64), p: (f64, f64)) -> (f64, f64) {
    let lo = (a.0 - p.1).max(p.0 - a.1).max(0.0);
    let hi = (a.1 - p.0).abs().max((p.1 - a.0).abs());
    (lo, hi)
}

/// `α̂_c(R)` per range against the Bernoulli `p̂_c` on the same annulus,
/// which is computed once and shared by every row.
pub fn theorem_trend_report(
    ranges: &[u32],
    spec: &AnnulusSpec,
    p_star: f64,
    mu_sampler: impl Fn(u32) -> Sampler,
    schedule: &[usize],
    seeds: SeedStream,
) -> Result<(ThresholdEstimate, Vec<(ThresholdEstimate, TrendRow)>)> {
    let tolerance = 0.0; // run the full schedule
    let pc = estimate_threshold(&Sampler::Bernoulli, spec, p_star, tolerance, schedule, seeds.child(0))?;
    let mut rows = Vec::new();
    for &r in ranges {
        let est = estimate_threshold(&mu_sampler(r), spec, p_star, tolerance, schedule, seeds.child(1 + r as u64))?;
        let (gap_lo, gap_hi) = gap_interval(est.ci(), pc.ci());
        let row = TrendRow {
            d: spec.d,
            range: r,
            box_size: spec.box_size(),
            p_star,
            alpha_c_hat: est.alpha_c_hat,
            ci_lo: est.ci_lo,
            ci_hi: est.ci_hi,
            pc_hat: pc.alpha_c_hat,
            pc_ci_lo: pc.ci_lo,
            pc_ci_hi: pc.ci_hi,
            gap: (est.alpha_c_hat - pc.alpha_c_hat).abs(),
            gap_lo,
            gap_hi,
            n_total: est.n_total,
            seed: seeds.master(),
        };
        rows.push((est, row));
    }
    Ok((pc, rows))
}

pub fn write_trend_csv<W: Write>(w: W, rows: &[TrendRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
