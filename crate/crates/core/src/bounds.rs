//! Monte Carlo checks of the two correlation inequalities: the exponential
//! moment of the number of coalescences, and the joint-occurrence bound for
//! disjoint translates of a cylinder event.
//!
//! Both sides are computed at a common finite horizon `T`: coalescence runs
//! stop at `T` (or earlier through the `eps_stop` rule), and meeting
//! probabilities are estimated for walks capped at `T`. The number of
//! annihilations is nondecreasing in time, so the inequalities hold for the
//! truncated objects as well, and the check stays a check of a true
//! statement. Truncation lowers the left sides relative to `T = ∞`.

use std::io::Write;
use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::coalescence::{run_coalescence, StopPolicy};
use crate::error::{invalid, Error, Result};
use crate::field::Window;
use crate::lattice::{BoxSpec, Point};
use crate::measure::{check_alpha, CylinderEvent, Sampler};
use crate::percolation::{crossing, CrossingQuery};
use crate::rng::{par_replicates, SeedStream};
use crate::stats::{wilson, EstimateWithCI, Moments, DEFAULT_LEVEL};
use crate::walks::{estimate_h_with, JumpKernel, MeetEstimate, TruncationPolicy};
use crate::{FieldSample, Provenance};

/// Largest base set for which `π_α(E)` is summed exactly.
pub const EXACT_BASE_LIMIT: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }

    /// Pass when the LHS interval lies below the RHS interval, fail when it
    /// lies above, inconclusive otherwise.
    pub fn compose(lhs: &EstimateWithCI, rhs_lo: f64, rhs_hi: f64) -> Verdict {
        if lhs.ci_hi <= rhs_lo {
            Verdict::Pass
        } else if lhs.ci_lo > rhs_hi {
            Verdict::Fail
        } else {
            Verdict::Inconclusive
        }
    }
}

/// Settings shared by both checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundsConfig {
    /// Replicates for the left side.
    pub n: usize,
    /// Replicates per distinct displacement for `ĥ`.
    pub n_h: usize,
    pub horizon: f64,
    pub eps_stop: Option<f64>,
    pub level: f64,
}

impl BoundsConfig {
    pub fn new(n: usize, horizon: f64) -> BoundsConfig {
        BoundsConfig {
            n,
            n_h: n,
            horizon,
            eps_stop: Some(1e-4),
            level: DEFAULT_LEVEL,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n_h == 0 {
            return Err(invalid("n", "sample sizes must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", "must be a positive finite time"));
        }
        self.stop_policy().map(|_| ())
    }

    pub fn stop_policy(&self) -> Result<StopPolicy> {
        StopPolicy::new(self.eps_stop, Some(self.horizon))
    }

    pub fn truncation(&self) -> Result<TruncationPolicy> {
        TruncationPolicy::time_cap(self.horizon)
    }
}

/// `ĥ_R` estimates keyed by displacement up to the symmetries of the jump
/// law (coordinate permutations and reflections).
pub struct MeetCache {
    kernel: Arc<JumpKernel>,
    n: usize,
    policy: TruncationPolicy,
    seeds: SeedStream,
    map: FxHashMap<Point, MeetEstimate>,
}

fn displacement_tag(p: &Point) -> u64 {
    p.coords()
        .iter()
        .fold(0xcbf2_9ce4_8422_2325u64, |acc, &c| {
            (acc ^ (c as u32 as u64)).wrapping_mul(0x0100_0000_01b3)
        })
}

impl MeetCache {
    pub fn new(d: usize, range: u32, n: usize, policy: TruncationPolicy, seeds: SeedStream) -> Result<MeetCache> {
        Ok(MeetCache {
            kernel: JumpKernel::shared(d, range)?,
            n,
            policy,
            seeds,
            map: FxHashMap::default(),
        })
    }

    pub fn get(&mut self, x: &Point, y: &Point) -> Result<&MeetEstimate> {
        let key = (*y - *x).canonical_abs();
        if !self.map.contains_key(&key) {
            let origin = Point::origin(key.dim());
            let est = estimate_h_with(
                &self.kernel,
                origin,
                key,
                self.n,
                &self.policy,
                self.seeds.child(displacement_tag(&key)),
            )?;
            self.map.insert(key, est);
        }
        Ok(&self.map[&key])
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// `ĥ` lower, point and upper values for every pair `u ≺ v` of `points`.
fn pair_h(points: &[Point], cache: &mut MeetCache) -> Result<Vec<[f64; 3]>> {
    let mut sorted = points.to_vec();
    sorted.sort();
    let mut out = Vec::with_capacity(sorted.len() * sorted.len().saturating_sub(1) / 2);
    for (i, u) in sorted.iter().enumerate() {
        for v in &sorted[i + 1..] {
            let h = cache.get(u, v)?;
            out.push([h.lower(), h.value, h.upper()]);
        }
    }
    Ok(out)
}

/// `∏ (1 + h·c)` over pairs, at the lower, point and upper `ĥ`.
fn pair_product(hs: &[[f64; 3]], c: f64) -> [f64; 3] {
    let mut p = [1.0; 3];
    for h in hs {
        for j in 0..3 {
            p[j] *= 1.0 + h[j] * c;
        }
    }
    p
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterRecord {
    pub kind: String,
    pub d: usize,
    #[serde(rename = "R")]
    pub range: u32,
    /// `A` for the coalescence bound, `B` for the translate bound.
    pub set: Vec<Point>,
    pub translates: Vec<Point>,
    pub event: Option<String>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub n: usize,
    pub n_h: usize,
    pub horizon: f64,
    pub eps_stop: Option<f64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub schema_version: u32,
    pub lhs: EstimateWithCI,
    /// RHS at the point estimates of `ĥ` (and of `π_α(E)`).
    pub rhs: f64,
    pub rhs_lo: f64,
    pub rhs_hi: f64,
    /// `rhs_lo - lhs.ci_hi`; positive on a pass.
    pub margin: f64,
    pub verdict: Verdict,
    pub pi_alpha: Option<EstimateWithCI>,
    pub n_displacements: usize,
    pub truncation_bias: String,
    pub params: ParameterRecord,
}

impl InequalityReport {
    fn new(
        lhs: EstimateWithCI,
        rhs: [f64; 3],
        pi_alpha: Option<EstimateWithCI>,
        n_displacements: usize,
        params: ParameterRecord,
    ) -> InequalityReport {
        let [rhs_lo, rhs_mid, rhs_hi] = rhs;
        InequalityReport {
            schema_version: crate::field::SCHEMA_VERSION,
            verdict: Verdict::compose(&lhs, rhs_lo, rhs_hi),
            margin: rhs_lo - lhs.ci_hi,
            lhs,
            rhs: rhs_mid,
            rhs_lo,
            rhs_hi,
            pi_alpha,
            n_displacements,
            truncation_bias: format!(
                "coalescence and meeting probabilities both truncated at t = {}; LHS biased downward",
                params.horizon
            ),
            params,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `E[β^{-|A∖M|}]` against `∏_{x≺y} (1 + ĥ_R(x,y)(β^{-2} - 1))`.
pub fn check_exponential_eta(
    a: &[Point],
    range: u32,
    beta: f64,
    cfg: &BoundsConfig,
    seeds: SeedStream,
) -> Result<InequalityReport> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid("beta", format!("{beta} is not in (0,1)")));
    }
    cfg.validate()?;
    let Some(first) = a.first() else {
        return Err(invalid("A", "empty set"));
    };
    let d = first.dim();
    let mut cache = MeetCache::new(d, range, cfg.n_h, cfg.truncation()?, seeds.child(1))?;
    let policy = cfg.stop_policy()?;
    let params = ParameterRecord {
        kind: "exponential_eta".into(),
        d,
        range,
        set: a.to_vec(),
        translates: Vec::new(),
        event: None,
        alpha: None,
        beta: Some(beta),
        n: cfg.n,
        n_h: cfg.n_h,
        horizon: cfg.horizon,
        eps_stop: cfg.eps_stop,
        seed: seeds.master(),
    };
    if a.len() == 1 {
        // a single walker never coalesces
        return Ok(InequalityReport::new(
            EstimateWithCI::exact(1.0),
            [1.0; 3],
            None,
            0,
            params,
        ));
    }
    let (lhs, hs) = rayon::join(
        || -> Result<EstimateWithCI> {
            let runs = par_replicates(cfg.n, seeds.child(0), |_, rng| {
                run_coalescence(a, range, &policy, rng.clone()).map(|r| beta.powi(-(r.n_coalesced() as i32)))
            });
            let mut m = Moments::default();
            for v in runs {
                m.push(v?);
            }
            Ok(m.mean_ci(cfg.level))
        },
        || pair_h(a, &mut cache),
    );
    let rhs = pair_product(&hs?, beta.powi(-2) - 1.0);
    Ok(InequalityReport::new(lhs?, rhs, None, cache.len(), params))
}

/// `π_α(E)` by summing over `{0,1}^B`.
pub fn exact_pi_alpha(event: &CylinderEvent, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    let k = event.base().len();
    if k > EXACT_BASE_LIMIT {
        return Err(Error::BaseTooLarge(k));
    }
    let mut vals = vec![0u8; k];
    let mut total = 0.0;
    for mask in 0u32..(1u32 << k) {
        let mut ones = 0;
        for (j, v) in vals.iter_mut().enumerate() {
            *v = ((mask >> j) & 1) as u8;
            ones += *v as i32;
        }
        if event.eval_values(&vals) {
            total += alpha.powi(ones) * (1.0 - alpha).powi(k as i32 - ones);
        }
    }
    Ok(total)
}

/// Exact when the base is small, otherwise a Wilson interval from `n`
/// Bernoulli samples.
pub fn pi_alpha(event: &CylinderEvent, alpha: f64, n: usize, level: f64, seeds: SeedStream) -> Result<EstimateWithCI> {
    match exact_pi_alpha(event, alpha) {
        Ok(p) => Ok(EstimateWithCI::exact(p)),
        Err(Error::BaseTooLarge(_)) => {
            let base = event.base().to_vec();
            let hits = par_replicates(n, seeds, |_, rng| {
                use rand::Rng;
                let vals: Vec<u8> = base.iter().map(|_| u8::from(rng.gen::<f64>() < alpha)).collect();
                event.eval_values(&vals)
            });
            Ok(wilson(hits.into_iter().filter(|&h| h).count() as u64, n as u64, level))
        }
        Err(e) => Err(e),
    }
}

/// Open crossing `B(0, r_in) ↔ B(0, r_out)^c` as an event on `B(0, r_out)`.
pub fn crossing_event(d: usize, r_in: u32, r_out: u32, adjacency: crate::percolation::Adjacency) -> Result<CylinderEvent> {
    if r_in >= r_out {
        return Err(invalid("r_in", "must be smaller than r_out"));
    }
    let origin = Point::origin(d);
    let window = Arc::new(Window::cube(origin, r_out));
    let base = window.points().to_vec();
    let query = CrossingQuery::annulus(origin, r_in, r_out, adjacency);
    let name = format!("cross_B{r_in}_B{r_out}c_{}", adjacency);
    CylinderEvent::new(name, base, move |vals| {
        let xi = FieldSample::new(window.clone(), vals.to_vec(), Provenance::new("event", d, 0))
            .expect("values match the event window");
        crossing(&xi, &query).expect("annulus regions are disjoint")
    })
}

/// `RHS(π) = π^n ∏ (1 + h(π^{-2} - 1))`.
fn disjointly_rhs(pi: f64, n: usize, hs: &[[f64; 3]], which: usize) -> f64 {
    let c = pi.powi(-2) - 1.0;
    let mut p = pi.powi(n as i32);
    for h in hs {
        p *= 1.0 + h[which] * c;
    }
    p
}

/// `μ_{α,R}(∩ θ_{x_i} E)` against
/// `π_α(E)^n ∏_{u≺v} (1 + ĥ_R(u,v)(π_α(E)^{-2} - 1))` over the union of the
/// translates.
pub fn check_disjointly(
    event: &CylinderEvent,
    translates: &[Point],
    alpha: f64,
    range: u32,
    cfg: &BoundsConfig,
    seeds: SeedStream,
) -> Result<InequalityReport> {
    check_alpha(alpha)?;
    cfg.validate()?;
    if translates.is_empty() {
        return Err(invalid("translates", "need at least one"));
    }
    let d = event.dim();
    let mut union = Vec::new();
    for x in translates {
        x.check_dim(d)?;
        union.extend(event.base().iter().map(|b| *b + *x));
    }
    let mut sorted = union.clone();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::OverlappingTranslates);
    }
    let pi = pi_alpha(event, alpha, cfg.n, cfg.level, seeds.child(2))?;
    if pi.ci_hi <= 0.0 {
        return Err(Error::ZeroProbability);
    }
    let params = ParameterRecord {
        kind: "disjointly".into(),
        d,
        range,
        set: event.base().to_vec(),
        translates: translates.to_vec(),
        event: Some(event.name().to_string()),
        alpha: Some(alpha),
        beta: None,
        n: cfg.n,
        n_h: cfg.n_h,
        horizon: cfg.horizon,
        eps_stop: cfg.eps_stop,
        seed: seeds.master(),
    };
    let n_tr = translates.len();
    if union.len() == 1 {
        // one site: the sampled value is exactly Bernoulli(α)
        return Ok(InequalityReport::new(
            pi,
            [pi.ci_lo, pi.estimate, pi.ci_hi],
            Some(pi),
            0,
            params,
        ));
    }
    let window = Arc::new(Window::from_points(union.iter().copied())?);
    let idx: Vec<Vec<usize>> = translates
        .iter()
        .map(|x| {
            event
                .base()
                .iter()
                .map(|b| window.index_of(&(*b + *x)).expect("translate inside window"))
                .collect()
        })
        .collect();
    let sampler = Sampler::Mu {
        range,
        policy: cfg.stop_policy()?,
    };
    let mut cache = MeetCache::new(d, range, cfg.n_h, cfg.truncation()?, seeds.child(1))?;
    let (lhs, hs) = rayon::join(
        || -> Result<EstimateWithCI> {
            let hits = par_replicates(cfg.n, seeds.child(0), |_, rng| -> Result<bool> {
                let values = sampler.labels(&window, rng)?.values(alpha);
                let mut vals = Vec::with_capacity(event.base().len());
                Ok(idx.iter().all(|ix| {
                    vals.clear();
                    vals.extend(ix.iter().map(|&i| values[i]));
                    event.eval_values(&vals)
                }))
            });
            let mut k = 0u64;
            for h in hits {
                k += u64::from(h?);
            }
            Ok(wilson(k, cfg.n as u64, cfg.level))
        },
        || pair_h(&union, &mut cache),
    );
    let hs = hs?;
    // RHS is not monotone in π, so scan the interval of π
    let (p_lo, p_hi) = (pi.ci_lo.max(f64::MIN_POSITIVE), pi.ci_hi);
    let grid = 64;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 0..=grid {
        let p = p_lo + (p_hi - p_lo) * j as f64 / grid as f64;
        lo = lo.min(disjointly_rhs(p, n_tr, &hs, 0));
        hi = hi.max(disjointly_rhs(p, n_tr, &hs, 2));
    }
    let mid = disjointly_rhs(pi.estimate.max(f64::MIN_POSITIVE), n_tr, &hs, 1);
    Ok(InequalityReport::new(lhs?, [lo, mid, hi], Some(pi), cache.len(), params))
}

/// Translates `i·spacing·e_1`, `i = 0..n`.
pub fn translates_along_axis(d: usize, n: usize, spacing: i32) -> Vec<Point> {
    (0..n).map(|i| Point::unit(d, 0) * (i as i32 * spacing)).collect()
}

/// Ball `B(0, r)` as a base set.
pub fn ball_base(d: usize, r: u32) -> Vec<Point> {
    BoxSpec::linf(Point::origin(d), r).points()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub id: usize,
    pub kind: String,
    pub d: usize,
    #[serde(rename = "R")]
    pub range: u32,
    pub set_size: usize,
    pub n_translates: usize,
    pub event: String,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub n: usize,
    pub horizon: f64,
    pub lhs: f64,
    pub lhs_lo: f64,
    pub lhs_hi: f64,
    pub rhs: f64,
    pub rhs_lo: f64,
    pub rhs_hi: f64,
    pub margin: f64,
    pub verdict: String,
}

impl BatchRow {
    pub fn from_report(id: usize, r: &InequalityReport) -> BatchRow {
        let p = &r.params;
        BatchRow {
            id,
            kind: p.kind.clone(),
            d: p.d,
            range: p.range,
            set_size: p.set.len(),
            n_translates: p.translates.len(),
            event: p.event.clone().unwrap_or_default(),
            alpha: p.alpha,
            beta: p.beta,
            n: p.n,
            horizon: p.horizon,
            lhs: r.lhs.estimate,
            lhs_lo: r.lhs.ci_lo,
            lhs_hi: r.lhs.ci_hi,
            rhs: r.rhs,
            rhs_lo: r.rhs_lo,
            rhs_hi: r.rhs_hi,
            margin: r.margin,
            verdict: r.verdict.as_str().to_string(),
        }
    }
}

pub fn write_batch_csv<W: Write>(w: W, reports: &[InequalityReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for (i, r) in reports.iter().enumerate() {
        wtr.serialize(BatchRow::from_report(i, r))?;
    }
    wtr.flush()?;
    Ok(())
}
