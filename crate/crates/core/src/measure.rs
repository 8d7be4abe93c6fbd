//! Samplers for `μ_{α,R}`, `π_α` and the finite-time voter law on finite
//! windows, plus Monte Carlo estimators built on them.
//!
//! The duality sampler runs coalescing walks from every window site, gives
//! each terminal block an independent Uniform[0,1) variable `U` and sets
//! `ξ_α(x) = 1[U(ℓ(x)) < α]`. One run therefore yields coupled samples for
//! every `α`, monotone in `α`, each with the right marginal law.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::coalescence::{run_coalescence, StopPolicy, StopReason};
use crate::error::{invalid, Error, Result};
use crate::field::{FieldSample, Provenance, Window};
use crate::lattice::Point;
use crate::rng::{par_replicates, SeedStream, SimRng};
use crate::stats::{wilson, z_for_level, EstimateWithCI, Moments, DEFAULT_LEVEL};
use crate::walks::JumpKernel;

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid("alpha", format!("{alpha} is not in [0,1]")));
    }
    Ok(())
}

/// Per-site uniform labels; thresholding at `α` gives a field.
#[derive(Clone, Debug)]
pub struct LabelField {
    pub window: Arc<Window>,
    /// `U(ℓ(x))` for every site, in window order.
    pub site_u: Vec<f64>,
    pub n_blocks: usize,
    pub stop_reason: Option<StopReason>,
    pub end_time: f64,
}

impl LabelField {
    pub fn values(&self, alpha: f64) -> Vec<u8> {
        self.site_u.iter().map(|&u| u8::from(u < alpha)).collect()
    }

    pub fn field(&self, alpha: f64, provenance: Provenance) -> FieldSample {
        FieldSample {
            window: self.window.clone(),
            values: self.values(alpha),
            provenance,
        }
    }
}

/// Which law to draw fields from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    /// i.i.d. Bernoulli(α).
    Bernoulli,
    /// `μ_{α,R}` by duality, truncated per `policy`.
    Mu { range: u32, policy: StopPolicy },
    /// Voter model at time `t` from Bernoulli(α), by duality.
    MuFiniteTime { range: u32, t: f64 },
    /// Every site has the given value whenever `0 < α` (value 1) or
    /// always (value 0).
    Constant { value: u8 },
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sampler::Bernoulli => write!(f, "bernoulli"),
            Sampler::Mu { range, .. } => write!(f, "mu_R{range}"),
            Sampler::MuFiniteTime { range, t } => write!(f, "mu_R{range}_t{t}"),
            Sampler::Constant { value } => write!(f, "constant_{value}"),
        }
    }
}

impl Sampler {
    pub fn mu(range: u32) -> Sampler {
        Sampler::Mu {
            range,
            policy: StopPolicy::default(),
        }
    }

    pub fn range(&self) -> Option<u32> {
        match self {
            Sampler::Mu { range, .. } | Sampler::MuFiniteTime { range, .. } => Some(*range),
            _ => None,
        }
    }

    /// Coupled labels for all `α` at once.
    pub fn labels(&self, window: &Arc<Window>, rng: &mut SimRng) -> Result<LabelField> {
        match self {
            Sampler::Bernoulli => Ok(LabelField {
                window: window.clone(),
                site_u: (0..window.len()).map(|_| rng.gen::<f64>()).collect(),
                n_blocks: window.len(),
                stop_reason: None,
                end_time: 0.0,
            }),
            Sampler::Constant { value } => Ok(LabelField {
                window: window.clone(),
                site_u: vec![if *value == 1 { 0.0 } else { 1.0 }; window.len()],
                n_blocks: 1,
                stop_reason: None,
                end_time: 0.0,
            }),
            Sampler::Mu { range, policy } => dual_labels(window, *range, policy, rng),
            Sampler::MuFiniteTime { range, t } => {
                dual_labels(window, *range, &StopPolicy::time_cap(*t)?, rng)
            }
        }
    }

    pub fn sample(
        &self,
        window: &Arc<Window>,
        alpha: f64,
        rng: &mut SimRng,
        seed: u64,
    ) -> Result<FieldSample> {
        check_alpha(alpha)?;
        let labels = self.labels(window, rng)?;
        let mut prov = Provenance::new(self.to_string(), window.dim(), seed);
        prov.alpha = Some(alpha);
        prov.range = self.range();
        match self {
            Sampler::Mu { policy, .. } => {
                prov.eps_stop = policy.eps_stop;
                prov.t = Some(labels.end_time);
            }
            Sampler::MuFiniteTime { t, .. } => prov.t = Some(*t),
            _ => {}
        }
        prov.stop_reason = labels.stop_reason.map(|r| r.as_str().to_string());
        Ok(labels.field(alpha, prov))
    }
}

fn dual_labels(
    window: &Arc<Window>,
    range: u32,
    policy: &StopPolicy,
    rng: &mut SimRng,
) -> Result<LabelField> {
    let run = run_coalescence(window.points(), range, policy, rng.clone())?;
    // the walk stream and the label stream must not overlap
    rng.set_word_pos(rng.get_word_pos() + (1u128 << 64));
    let p = &run.terminal;
    let mut u = vec![f64::NAN; p.len()];
    for m in p.marks() {
        u[m] = rng.gen();
    }
    // window points and ground points are both sorted lexicographically
    let site_u = (0..p.len()).map(|i| u[p.label(i)]).collect();
    Ok(LabelField {
        window: window.clone(),
        site_u,
        n_blocks: p.n_marks(),
        stop_reason: Some(run.stop_reason),
        end_time: run.end_time,
    })
}

/// One draw of `μ_{α,R}` on `window`.
pub fn sample_mu(
    window: &Arc<Window>,
    alpha: f64,
    range: u32,
    policy: &StopPolicy,
    seed: u64,
) -> Result<FieldSample> {
    let sampler = Sampler::Mu {
        range,
        policy: *policy,
    };
    sampler.sample(window, alpha, &mut SeedStream::new(seed).rng(&[0]), seed)
}

pub fn sample_bernoulli(window: &Arc<Window>, alpha: f64, seed: u64) -> Result<FieldSample> {
    Sampler::Bernoulli.sample(window, alpha, &mut SeedStream::new(seed).rng(&[0]), seed)
}

pub fn sample_mu_finite_time(
    window: &Arc<Window>,
    alpha: f64,
    range: u32,
    t: f64,
    seed: u64,
) -> Result<FieldSample> {
    Sampler::MuFiniteTime { range, t }.sample(
        window,
        alpha,
        &mut SeedStream::new(seed).rng(&[0]),
        seed,
    )
}

/// Forward voter dynamics on the torus `(Z/nZ)^d` for time `t` from
/// Bernoulli(α), observed on `B(0, window_radius)` (coordinates taken mod
/// `n`). All sites update at rate 1 by copying a uniform site of
/// `B_1(x,R) \ {x}`.
pub fn forward_voter_torus(
    d: usize,
    n: u32,
    alpha: f64,
    range: u32,
    t: f64,
    window_radius: u32,
    rng: &mut SimRng,
) -> Result<Vec<u8>> {
    check_alpha(alpha)?;
    if n < 2 * window_radius + 1 {
        return Err(invalid("n", "torus smaller than the observation window"));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(invalid("t", format!("{t} is not a finite time")));
    }
    let kernel = JumpKernel::shared(d, range)?;
    let n_sites = (n as usize).pow(d as u32);
    let mut state: Vec<u8> = (0..n_sites)
        .map(|_| u8::from(rng.gen::<f64>() < alpha))
        .collect();
    let rate = n_sites as f64 * t;
    let k = if rate > 0.0 {
        Poisson::new(rate).unwrap().sample(rng) as u64
    } else {
        0
    };
    let ni = n as i64;
    let mut coords = [0i64; crate::lattice::MAX_DIM];
    for _ in 0..k {
        let site = rng.gen_range(0..n_sites);
        let off = kernel.sample(rng);
        let mut s = site;
        for c in coords[..d].iter_mut().rev() {
            *c = (s % n as usize) as i64;
            s /= n as usize;
        }
        let mut src = 0usize;
        for (i, c) in coords[..d].iter().enumerate() {
            src = src * n as usize + (c + off.coord(i) as i64).rem_euclid(ni) as usize;
        }
        state[site] = state[src];
    }
    let window = Window::cube(Point::origin(d), window_radius);
    Ok(window
        .points()
        .iter()
        .map(|p| {
            let idx = p.coords().iter().fold(0usize, |acc, &c| {
                acc * n as usize + (c as i64).rem_euclid(ni) as usize
            });
            state[idx]
        })
        .collect())
}

type Predicate = dyn Fn(&[u8]) -> bool + Send + Sync;

/// An event depending only on the sites of a finite base set containing 0.
#[derive(Clone)]
pub struct CylinderEvent {
    name: String,
    base: Vec<Point>,
    pred: Arc<Predicate>,
}

impl fmt::Debug for CylinderEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CylinderEvent")
            .field("name", &self.name)
            .field("base", &self.base)
            .finish()
    }
}

impl CylinderEvent {
    /// `pred` receives the values on `base`, in the order given.
    pub fn new<F>(name: impl Into<String>, base: Vec<Point>, pred: F) -> Result<CylinderEvent>
    where
        F: Fn(&[u8]) -> bool + Send + Sync + 'static,
    {
        let Some(first) = base.first() else {
            return Err(invalid("base", "empty base set"));
        };
        let d = first.dim();
        for p in &base {
            p.check_dim(d)?;
        }
        if !base.contains(&Point::origin(d)) {
            return Err(invalid("base", "must contain the origin"));
        }
        let mut sorted = base.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("base", "repeated points"));
        }
        Ok(CylinderEvent {
            name: name.into(),
            base,
            pred: Arc::new(pred),
        })
    }

    /// The whole configuration space, based at the origin.
    pub fn everything(d: usize) -> CylinderEvent {
        CylinderEvent::new("all", vec![Point::origin(d)], |_| true).unwrap()
    }

    /// `{ξ(p) = v for every (p, v)}`; the origin is added to the base.
    pub fn pattern(assign: &[(Point, u8)]) -> Result<CylinderEvent> {
        let Some((p0, _)) = assign.first() else {
            return Err(invalid("pattern", "empty"));
        };
        let origin = Point::origin(p0.dim());
        let mut base: Vec<Point> = assign.iter().map(|(p, _)| *p).collect();
        let mut want: Vec<Option<u8>> = assign.iter().map(|(_, v)| Some(*v)).collect();
        if !base.contains(&origin) {
            base.push(origin);
            want.push(None);
        }
        let name = assign
            .iter()
            .map(|(p, v)| format!("xi{p}={v}"))
            .collect::<Vec<_>>()
            .join("&");
        CylinderEvent::new(name, base, move |vals| {
            vals.iter()
                .zip(&want)
                .all(|(v, w)| w.map_or(true, |w| *v == w))
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn base(&self) -> &[Point] {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base[0].dim()
    }

    pub fn eval_values(&self, values: &[u8]) -> bool {
        (self.pred)(values)
    }

    /// Whether `ξ ∈ θ_x E`, i.e. the values on `x + B` satisfy `E`.
    pub fn holds_at(&self, xi: &FieldSample, x: &Point) -> Result<bool> {
        let vals: Vec<u8> = self
            .base
            .iter()
            .map(|b| xi.value(&(*b + *x)))
            .collect::<Result<_>>()?;
        Ok(self.eval_values(&vals))
    }

    pub fn holds(&self, xi: &FieldSample) -> Result<bool> {
        self.holds_at(xi, &Point::origin(self.dim()))
    }

    /// `{ξ : 1 - ξ ∈ E}`.
    pub fn flipped(&self) -> CylinderEvent {
        let pred = self.pred.clone();
        CylinderEvent {
            name: format!("flip({})", self.name),
            base: self.base.clone(),
            pred: Arc::new(move |vals: &[u8]| {
                let f: Vec<u8> = vals.iter().map(|v| 1 - v).collect();
                pred(&f)
            }),
        }
    }
}

/// Frequency of `E` (at the origin) over `n` samples, with a Wilson
/// interval at `level`.
pub fn estimate_event_prob(
    event: &CylinderEvent,
    sampler: &Sampler,
    alpha: f64,
    n: usize,
    level: f64,
    seeds: SeedStream,
) -> Result<EstimateWithCI> {
    let window = Arc::new(Window::from_points(event.base().iter().copied())?);
    estimate_event_prob_on(event, sampler, &window, alpha, n, level, seeds)
}

/// As [`estimate_event_prob`] on a caller-chosen window containing the
/// base set.
pub fn estimate_event_prob_on(
    event: &CylinderEvent,
    sampler: &Sampler,
    window: &Arc<Window>,
    alpha: f64,
    n: usize,
    level: f64,
    seeds: SeedStream,
) -> Result<EstimateWithCI> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let hits = par_replicates(n, seeds, |_, rng| -> Result<bool> {
        let xi = sampler.sample(window, alpha, rng, seeds.master())?;
        event.holds(&xi)
    });
    let mut k = 0u64;
    for h in hits {
        k += u64::from(h?);
    }
    Ok(wilson(k, n as u64, level))
}

/// Joint 0/1 counts of a site pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCounts {
    pub n00: u64,
    pub n01: u64,
    pub n10: u64,
    pub n11: u64,
}

impl PairCounts {
    pub fn n(&self) -> u64 {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    /// `P̂(11) - P̂(1·) P̂(·1)`.
    pub fn cov_from_cells(&self) -> f64 {
        let n = self.n() as f64;
        let p11 = self.n11 as f64 / n;
        let px = (self.n10 + self.n11) as f64 / n;
        let py = (self.n01 + self.n11) as f64 / n;
        p11 - px * py
    }

    /// `(1/n) Σ (ξ_x - m_x)(ξ_y - m_y)` summed over the samples.
    pub fn cov_centered(&self) -> f64 {
        let n = self.n() as f64;
        let mx = (self.n10 + self.n11) as f64 / n;
        let my = (self.n01 + self.n11) as f64 / n;
        let term = |a: f64, b: f64, c: u64| c as f64 * (a - mx) * (b - my);
        (term(0.0, 0.0, self.n00)
            + term(0.0, 1.0, self.n01)
            + term(1.0, 0.0, self.n10)
            + term(1.0, 1.0, self.n11))
            / n
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub x: Point,
    pub y: Point,
    pub counts: PairCounts,
    pub cov: EstimateWithCI,
}

/// Plug-in covariance of `ξ(x), ξ(y)` with a delta-method interval.
pub fn estimate_covariance(
    x: Point,
    y: Point,
    alpha: f64,
    sampler: &Sampler,
    n: usize,
    seeds: SeedStream,
) -> Result<CovarianceEstimate> {
    if x == y {
        return Err(invalid("x, y", "covariance needs two distinct sites"));
    }
    check_alpha(alpha)?;
    if n < 2 {
        return Err(invalid("n", "need at least two samples"));
    }
    let window = Arc::new(Window::from_points([x, y])?);
    let draws = par_replicates(n, seeds, |_, rng| -> Result<(u8, u8)> {
        let xi = sampler.sample(&window, alpha, rng, seeds.master())?;
        Ok((xi.value(&x)?, xi.value(&y)?))
    });
    let mut c = PairCounts::default();
    for dr in draws {
        match dr? {
            (0, 0) => c.n00 += 1,
            (0, 1) => c.n01 += 1,
            (1, 0) => c.n10 += 1,
            _ => c.n11 += 1,
        }
    }
    let cov = c.cov_from_cells();
    let nf = n as f64;
    let mx = (c.n10 + c.n11) as f64 / nf;
    let my = (c.n01 + c.n11) as f64 / nf;
    // influence function of the plug-in covariance
    let mut m = Moments::default();
    for (a, b, k) in [
        (0.0, 0.0, c.n00),
        (0.0, 1.0, c.n01),
        (1.0, 0.0, c.n10),
        (1.0, 1.0, c.n11),
    ] {
        let psi = (a - mx) * (b - my) - cov;
        m.n += k;
        m.sum += k as f64 * psi;
        m.sum_sq += k as f64 * psi * psi;
    }
    let se = (m.variance() / nf).sqrt();
    let z = z_for_level(DEFAULT_LEVEL);
    Ok(CovarianceEstimate {
        x,
        y,
        counts: c,
        cov: EstimateWithCI {
            estimate: cov,
            stderr: se,
            ci_lo: cov - z * se,
            ci_hi: cov + z * se,
            level: DEFAULT_LEVEL,
            n: n as u64,
        },
    })
}

/// Joint law of a few sites and its distance to the product law.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TvRow {
    #[serde(rename = "R")]
    pub range: u32,
    /// Cell frequencies; cell index bit `k` is the value at site `k`.
    pub joint: Vec<f64>,
    pub tv: EstimateWithCI,
}

/// Total variation distance between a law on `{0,1}^k` and Bernoulli(α)^k.
pub fn tv_to_product(joint: &[f64], alpha: f64) -> f64 {
    let k = joint.len().trailing_zeros();
    joint
        .iter()
        .enumerate()
        .map(|(cell, p)| {
            let ones = (cell as u32).count_ones() as i32;
            let q = alpha.powi(ones) * (1.0 - alpha).powi(k as i32 - ones);
            (p - q).abs()
        })
        .sum::<f64>()
        / 2.0
}

const BOOTSTRAP_REPS: usize = 400;

/// For every `R`, estimates the joint law of `ξ` on `sites` under
/// `μ_{α,R}` and its total variation distance to the product law, with a
/// percentile bootstrap interval.
pub fn check_local_bernoulli(
    sites: &[Point],
    alpha: f64,
    ranges: &[u32],
    policy: &StopPolicy,
    n: usize,
    seeds: SeedStream,
) -> Result<Vec<TvRow>> {
    check_alpha(alpha)?;
    if sites.is_empty() || sites.len() > 4 {
        return Err(invalid("sites", "need between 1 and 4 sites"));
    }
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let window = Arc::new(Window::from_points(sites.iter().copied())?);
    if window.len() != sites.len() {
        return Err(invalid("sites", "sites must be distinct"));
    }
    let cells = 1usize << sites.len();
    let mut rows = Vec::with_capacity(ranges.len());
    for (ri, &range) in ranges.iter().enumerate() {
        let sampler = Sampler::Mu {
            range,
            policy: *policy,
        };
        let s = seeds.child(ri as u64);
        let draws = par_replicates(n, s, |_, rng| -> Result<usize> {
            let xi = sampler.sample(&window, alpha, rng, s.master())?;
            let mut cell = 0;
            for (k, p) in sites.iter().enumerate() {
                cell |= (xi.value(p)? as usize) << k;
            }
            Ok(cell)
        });
        let mut counts = vec![0u64; cells];
        for c in draws {
            counts[c?] += 1;
        }
        let joint: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let tv_hat = tv_to_product(&joint, alpha);
        let mut rng = s.rng(&[u64::MAX]);
        let mut boot: Vec<f64> = (0..BOOTSTRAP_REPS)
            .map(|_| tv_to_product(&multinomial_freqs(&joint, n as u64, &mut rng), alpha))
            .collect();
        boot.sort_by(f64::total_cmp);
        let m = Moments::from_slice(&boot);
        let tail = (1.0 - DEFAULT_LEVEL) / 2.0;
        let at = |q: f64| boot[((q * BOOTSTRAP_REPS as f64) as usize).min(BOOTSTRAP_REPS - 1)];
        rows.push(TvRow {
            range,
            joint,
            tv: EstimateWithCI {
                estimate: tv_hat,
                stderr: m.variance().sqrt(),
                ci_lo: at(tail),
                ci_hi: at(1.0 - tail),
                level: DEFAULT_LEVEL,
                n: n as u64,
            },
        });
    }
    Ok(rows)
}

fn multinomial_freqs(p: &[f64], n: u64, rng: &mut SimRng) -> Vec<f64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(p.len());
    for (i, &pi) in p.iter().enumerate() {
        let k = if i + 1 == p.len() || mass <= 0.0 {
            left
        } else {
            let q = (pi / mass).clamp(0.0, 1.0);
            Binomial::new(left, q).unwrap().sample(rng)
        };
        out.push(k as f64 / n as f64);
        left -= k;
        mass -= pi;
    }
    out
}

/// Marginals of the forward dynamics and of the duality sampler at the
/// same time `t`: `P(ξ(0)=1)` and `P(ξ(0)=ξ(e_1)=1)` from each.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrossValidation {
    pub t: f64,
    pub forward_one: EstimateWithCI,
    pub forward_pair: EstimateWithCI,
    pub dual_one: EstimateWithCI,
    pub dual_pair: EstimateWithCI,
}

impl CrossValidation {
    /// Both marginals agree within `k` combined standard errors.
    pub fn agrees(&self, k: f64) -> bool {
        self.forward_one.agrees_with(&self.dual_one, k)
            && self.forward_pair.agrees_with(&self.dual_pair, k)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cross_validate(
    d: usize,
    torus_side: u32,
    alpha: f64,
    range: u32,
    t: f64,
    n: usize,
    seeds: SeedStream,
) -> Result<CrossValidation> {
    let e1 = Point::unit(d, 0);
    let origin = Point::origin(d);
    let fw = par_replicates(n, seeds.child(0), |_, rng| {
        forward_voter_torus(d, torus_side, alpha, range, t, 1, rng)
    });
    let w1 = Window::cube(origin, 1);
    let (i0, i1) = (w1.index_of(&origin).unwrap(), w1.index_of(&e1).unwrap());
    let (mut f1, mut f2) = (0u64, 0u64);
    for v in fw {
        let v = v?;
        f1 += u64::from(v[i0]);
        f2 += u64::from(v[i0] == 1 && v[i1] == 1);
    }
    let window = Arc::new(Window::from_points([origin, e1])?);
    let sampler = Sampler::MuFiniteTime { range, t };
    let s = seeds.child(1);
    let du = par_replicates(n, s, |_, rng| -> Result<(u8, u8)> {
        let xi = sampler.sample(&window, alpha, rng, s.master())?;
        Ok((xi.value(&origin)?, xi.value(&e1)?))
    });
    let (mut d1, mut d2) = (0u64, 0u64);
    for v in du {
        let (a, b) = v?;
        d1 += u64::from(a);
        d2 += u64::from(a == 1 && b == 1);
    }
    let nn = n as u64;
    Ok(CrossValidation {
        t,
        forward_one: wilson(f1, nn, DEFAULT_LEVEL),
        forward_pair: wilson(f2, nn, DEFAULT_LEVEL),
        dual_one: wilson(d1, nn, DEFAULT_LEVEL),
        dual_pair: wilson(d2, nn, DEFAULT_LEVEL),
    })
}

/// Row of an estimate table: `(param..., estimate, stderr, ci_lo, ci_hi, n)`.
pub fn write_estimate_csv<W: std::io::Write>(
    w: W,
    param_names: &[&str],
    rows: &[(Vec<String>, EstimateWithCI)],
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = param_names.to_vec();
    header.extend(["estimate", "stderr", "ci_lo", "ci_hi", "n"]);
    wtr.write_record(&header)?;
    for (params, e) in rows {
        if params.len() != param_names.len() {
            return Err(Error::Parse("parameter count does not match header".into()));
        }
        let mut rec = params.clone();
        rec.extend([
            e.estimate.to_string(),
            e.stderr.to_string(),
            e.ci_lo.to_string(),
            e.ci_hi.to_string(),
            e.n.to_string(),
        ]);
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i32]) -> Point {
        Point::from_slice(c)
    }

    fn cube(r: u32) -> Arc<Window> {
        Arc::new(Window::cube(Point::origin(3), r))
    }

    #[test]
    fn extreme_alpha_gives_constant_fields() {
        let w = cube(2);
        let pol = StopPolicy::time_cap(20.0).unwrap();
        assert_eq!(sample_mu(&w, 0.0, 1, &pol, 1).unwrap().count_ones(), 0);
        assert_eq!(sample_mu(&w, 1.0, 1, &pol, 1).unwrap().count_ones(), 125);
        assert_eq!(sample_bernoulli(&w, 0.0, 1).unwrap().count_ones(), 0);
        assert!(sample_mu(&w, 1.3, 1, &pol, 1).is_err());
        assert!(sample_bernoulli(&w, -0.1, 1).is_err());
    }

    #[test]
    fn coupled_fields_are_monotone_in_alpha() {
        let w = cube(2);
        let s = Sampler::Mu {
            range: 1,
            policy: StopPolicy::time_cap(30.0).unwrap(),
        };
        let lf = s.labels(&w, &mut SeedStream::new(3).rng(&[0])).unwrap();
        let a = lf.values(0.3);
        let b = lf.values(0.6);
        assert!(a.iter().zip(&b).all(|(x, y)| x <= y));
        assert!(lf.site_u.iter().all(|u| (0.0..1.0).contains(u)));
    }

    #[test]
    fn same_seed_same_sample() {
        let w = cube(2);
        let pol = StopPolicy::time_cap(30.0).unwrap();
        let a = sample_mu(&w, 0.5, 2, &pol, 9).unwrap();
        let b = sample_mu(&w, 0.5, 2, &pol, 9).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.provenance, b.provenance);
    }

    #[test]
    fn finite_time_zero_is_product() {
        let w = cube(1);
        let s = Sampler::MuFiniteTime { range: 1, t: 0.0 };
        let lf = s.labels(&w, &mut SeedStream::new(3).rng(&[0])).unwrap();
        assert_eq!(lf.n_blocks, 27);
    }

    #[test]
    fn torus_at_time_zero_and_extremes() {
        let mut rng = SeedStream::new(4).rng(&[0]);
        let v = forward_voter_torus(3, 8, 1.0, 1, 3.0, 2, &mut rng).unwrap();
        assert!(v.iter().all(|&x| x == 1));
        let v = forward_voter_torus(2, 8, 0.5, 1, 0.0, 3, &mut rng).unwrap();
        assert_eq!(v.len(), 49);
        assert!(forward_voter_torus(3, 4, 0.5, 1, 1.0, 2, &mut rng).is_err());
    }

    #[test]
    fn cylinder_events() {
        let xi = FieldSample::new(
            cube(1),
            (0..27).map(|i| (i % 2) as u8).collect(),
            Provenance::new("test", 3, 0),
        )
        .unwrap();
        assert!(CylinderEvent::everything(3).holds(&xi).unwrap());
        let e = CylinderEvent::pattern(&[(p(&[0, 0, 0]), 1)]).unwrap();
        // origin has index 13, odd
        assert!(e.holds(&xi).unwrap());
        assert!(!e.flipped().holds(&xi).unwrap());
        assert!(e.holds_at(&xi, &p(&[5, 0, 0])).is_err());
        assert!(CylinderEvent::new("bad", vec![p(&[1, 0, 0])], |_| true).is_err());
    }

    #[test]
    fn event_everything_has_probability_one() {
        let e = CylinderEvent::everything(3);
        let est = estimate_event_prob(&e, &Sampler::Bernoulli, 0.3, 200, 0.99, SeedStream::new(1))
            .unwrap();
        assert_eq!(est.estimate, 1.0);
        assert_eq!(est.ci_hi, 1.0);
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_to_product(&[0.25, 0.25, 0.25, 0.25], 0.5), 0.0);
        assert!((tv_to_product(&[0.5, 0.0, 0.0, 0.5], 0.5) - 0.5).abs() < 1e-12);
        assert_eq!(tv_to_product(&[0.0, 1.0], 1.0), 0.0);
    }

    #[test]
    fn covariance_two_ways_agree() {
        let c = PairCounts {
            n00: 17,
            n01: 5,
            n10: 8,
            n11: 70,
        };
        assert!((c.cov_from_cells() - c.cov_centered()).abs() < 1e-15);
        assert!(estimate_covariance(
            p(&[0, 0, 0]),
            p(&[0, 0, 0]),
            0.5,
            &Sampler::Bernoulli,
            10,
            SeedStream::new(0)
        )
        .is_err());
    }

    #[test]
    fn estimate_csv_layout() {
        let mut buf = Vec::new();
        write_estimate_csv(
            &mut buf,
            &["R"],
            &[(vec!["4".into()], EstimateWithCI::exact(0.5))],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "R,estimate,stderr,ci_lo,ci_hi,n"
        );
    }
}
