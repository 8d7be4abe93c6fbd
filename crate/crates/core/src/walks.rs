//! Continuous-time R-spread-out random walks.
//!
//! Each walker carries an Exponential(1) clock and jumps to a uniform point
//! of `B_1(x, R) \ {x}`. A [`WalkSystem`] runs the clock race for all alive
//! walkers at once: the next event comes after an Exponential(k) time for
//! `k` alive walkers and moves a uniformly chosen one. Coincidences are
//! reported on the event that creates them, so meeting is only ever
//! detected at event instants.
//!
//! The meeting probability `h_R(x, y)` of two independent walks is
//! estimated by simulating both walks until they meet or a
//! [`TruncationPolicy`] fires. Truncation can only hide meetings, so the
//! estimate is biased downward by at most the re-meeting probability from
//! the escape radius (plus the tail beyond the time cap).

use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use once_cell::sync::{Lazy, OnceCell};
use rand::Rng;
use rand_distr::Exp1;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{l1_ball, Point};
use crate::rng::{par_replicates, SeedStream, SimRng};
use crate::stats::{isotonic_decreasing, wilson, EstimateWithCI, DEFAULT_LEVEL};

pub type WalkerId = usize;

static KERNELS: Lazy<Mutex<FxHashMap<(usize, u32), Arc<JumpKernel>>>> =
    Lazy::new(|| Mutex::new(FxHashMap::default()));

/// Uniform jump law on `B_1(R) \ {0}`.
#[derive(Clone, Debug)]
pub struct JumpKernel {
    dim: usize,
    range: u32,
    offsets: Vec<Point>,
}

impl JumpKernel {
    pub fn new(dim: usize, range: u32) -> Result<JumpKernel> {
        let origin = Point::origin(dim);
        let offsets = l1_ball(origin, range)?
            .into_iter()
            .filter(|p| *p != origin)
            .collect();
        Ok(JumpKernel {
            dim,
            range,
            offsets,
        })
    }

    /// Process-wide shared kernel for `(d, R)`.
    pub fn shared(dim: usize, range: u32) -> Result<Arc<JumpKernel>> {
        let mut kernels = KERNELS.lock().unwrap();
        if let Some(k) = kernels.get(&(dim, range)) {
            return Ok(k.clone());
        }
        let k = Arc::new(JumpKernel::new(dim, range)?);
        kernels.insert((dim, range), k.clone());
        Ok(k)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn range(&self) -> u32 {
        self.range
    }

    /// Number of destinations, `|B_1(R)| - 1`.
    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[Point] {
        &self.offsets
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        self.offsets[rng.gen_range(0..self.offsets.len())]
    }

    /// `E|X|_2^2` for one jump.
    pub fn second_moment(&self) -> f64 {
        let s: f64 = self
            .offsets
            .iter()
            .map(|p| p.coords().iter().map(|&c| (c as f64).powi(2)).sum::<f64>())
            .sum();
        s / self.offsets.len() as f64
    }
}

/// Event produced by one jump.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub walker: WalkerId,
    pub from: Point,
    pub to: Point,
    /// Another alive walker sitting at `to` after the jump, if any.
    pub coincident: Option<WalkerId>,
}

#[derive(Clone, Debug)]
struct Occupants {
    first: WalkerId,
    rest: Vec<WalkerId>,
}

// Small systems scan linearly; larger ones keep a position index.
const LINEAR_SCAN_LIMIT: usize = 16;

#[derive(Clone, Debug)]
enum Occupancy {
    Linear,
    Indexed(FxHashMap<Point, Occupants>),
}

const DEAD: u32 = u32::MAX;

/// Independent spread-out walkers sharing one random stream.
#[derive(Clone, Debug)]
pub struct WalkSystem {
    kernel: Arc<JumpKernel>,
    positions: Vec<Point>,
    alive: Vec<WalkerId>,
    slot: Vec<u32>,
    occupancy: Occupancy,
    time: f64,
    rng: SimRng,
}

impl WalkSystem {
    pub fn new(kernel: Arc<JumpKernel>, starts: &[Point], rng: SimRng) -> Result<WalkSystem> {
        for p in starts {
            p.check_dim(kernel.dim())?;
        }
        let n = starts.len();
        let occupancy = if n <= LINEAR_SCAN_LIMIT {
            Occupancy::Linear
        } else {
            let mut map: FxHashMap<Point, Occupants> =
                FxHashMap::with_capacity_and_hasher(2 * n, Default::default());
            for (id, p) in starts.iter().enumerate() {
                insert_occupant(&mut map, *p, id);
            }
            Occupancy::Indexed(map)
        };
        Ok(WalkSystem {
            kernel,
            positions: starts.to_vec(),
            alive: (0..n).collect(),
            slot: (0..n as u32).collect(),
            occupancy,
            time: 0.0,
            rng,
        })
    }

    pub fn kernel(&self) -> &Arc<JumpKernel> {
        &self.kernel
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn n_alive(&self) -> usize {
        self.alive.len()
    }

    pub fn alive(&self) -> &[WalkerId] {
        &self.alive
    }

    pub fn is_alive(&self, id: WalkerId) -> bool {
        self.slot.get(id).is_some_and(|&s| s != DEAD)
    }

    pub fn position(&self, id: WalkerId) -> Point {
        self.positions[id]
    }

    pub fn rng_mut(&mut self) -> &mut SimRng {
        &mut self.rng
    }

    /// ℓ∞ distance between two walkers.
    pub fn separation(&self, a: WalkerId, b: WalkerId) -> u32 {
        self.positions[a].linf_dist(&self.positions[b])
    }

    /// Moves walker `id` by one jump without advancing the clock.
    pub fn step_walker(&mut self, id: WalkerId) -> Result<EventRecord> {
        if !self.is_alive(id) {
            return Err(Error::DeadWalker(id));
        }
        Ok(self.jump(id))
    }

    #[inline]
    fn jump(&mut self, id: WalkerId) -> EventRecord {
        let from = self.positions[id];
        let to = from + self.kernel.sample(&mut self.rng);
        self.positions[id] = to;
        let coincident = match &mut self.occupancy {
            Occupancy::Linear => self
                .alive
                .iter()
                .copied()
                .find(|&other| other != id && self.positions[other] == to),
            Occupancy::Indexed(map) => {
                remove_occupant(map, from, id);
                let hit = map.get(&to).map(|o| o.first);
                insert_occupant(map, to, id);
                hit
            }
        };
        EventRecord {
            time: self.time,
            walker: id,
            from,
            to,
            coincident,
        }
    }

    /// Runs the exponential clock race once: time advances by an
    /// Exponential(k) variable and a uniform alive walker jumps.
    pub fn advance_to_next_event(&mut self) -> Result<EventRecord> {
        let k = self.alive.len();
        if k == 0 {
            return Err(Error::EmptySystem);
        }
        let e: f64 = self.rng.sample(Exp1);
        self.time += e / k as f64;
        let id = self.alive[self.rng.gen_range(0..k)];
        Ok(self.jump(id))
    }

    /// Like [`advance_to_next_event`](Self::advance_to_next_event), but if
    /// the next event would fall after `horizon` the clock stops at
    /// `horizon` and nothing moves. Exact by memorylessness.
    pub fn advance_until(&mut self, horizon: f64) -> Result<Option<EventRecord>> {
        let k = self.alive.len();
        if k == 0 {
            return Err(Error::EmptySystem);
        }
        let e: f64 = self.rng.sample(Exp1);
        let next = self.time + e / k as f64;
        if next > horizon {
            self.time = horizon;
            return Ok(None);
        }
        self.time = next;
        let id = self.alive[self.rng.gen_range(0..k)];
        Ok(Some(self.jump(id)))
    }

    /// Removes walker `id` from the system.
    pub fn kill(&mut self, id: WalkerId) -> Result<()> {
        if !self.is_alive(id) {
            return Err(Error::DeadWalker(id));
        }
        let s = self.slot[id] as usize;
        let last = *self.alive.last().unwrap();
        self.alive.swap_remove(s);
        if last != id {
            self.slot[last] = s as u32;
        }
        self.slot[id] = DEAD;
        if let Occupancy::Indexed(map) = &mut self.occupancy {
            remove_occupant(map, self.positions[id], id);
        }
        Ok(())
    }

    /// Any alive walker at `p`.
    pub fn walker_at(&self, p: &Point) -> Option<WalkerId> {
        match &self.occupancy {
            Occupancy::Linear => self
                .alive
                .iter()
                .copied()
                .find(|&w| self.positions[w] == *p),
            Occupancy::Indexed(map) => map.get(p).map(|o| o.first),
        }
    }
}

#[inline]
fn insert_occupant(map: &mut FxHashMap<Point, Occupants>, p: Point, id: WalkerId) {
    map.entry(p)
        .and_modify(|o| o.rest.push(id))
        .or_insert(Occupants {
            first: id,
            rest: Vec::new(),
        });
}

#[inline]
fn remove_occupant(map: &mut FxHashMap<Point, Occupants>, p: Point, id: WalkerId) {
    let Some(o) = map.get_mut(&p) else { return };
    if o.first == id {
        match o.rest.pop() {
            Some(next) => o.first = next,
            None => {
                map.remove(&p);
            }
        }
    } else if let Some(i) = o.rest.iter().position(|&w| w == id) {
        o.rest.swap_remove(i);
    }
}

/// When to give up on a pair of walks that has not met yet.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    /// Stop once the ℓ∞ separation exceeds this radius.
    pub escape_radius: Option<u32>,
    /// Stop at this time.
    pub t_max: Option<f64>,
}

impl TruncationPolicy {
    pub fn new(escape_radius: Option<u32>, t_max: Option<f64>) -> Result<TruncationPolicy> {
        if escape_radius.is_none() && t_max.is_none() {
            return Err(invalid(
                "policy",
                "at least one of escape_radius and t_max is required",
            ));
        }
        if let Some(t) = t_max {
            if !(t > 0.0 && t.is_finite()) {
                return Err(invalid("t_max", format!("{t} is not a positive time")));
            }
        }
        Ok(TruncationPolicy {
            escape_radius,
            t_max,
        })
    }

    pub fn time_cap(t_max: f64) -> Result<TruncationPolicy> {
        TruncationPolicy::new(None, Some(t_max))
    }

    /// Escape radius from the calibration table for `(d, R)` such that the
    /// tabulated re-meeting probability falls below `eps_trunc`.
    pub fn calibrated(
        d: usize,
        range: u32,
        eps_trunc: f64,
        t_max: f64,
    ) -> Result<TruncationPolicy> {
        let table = RemeetTable::standard(d, range)?;
        TruncationPolicy::new(Some(table.escape_radius(eps_trunc)), Some(t_max))
    }
}

/// Simulates both walks from `x` and `y` and reports whether they meet
/// before the policy fires.
pub fn meet_once(
    kernel: &Arc<JumpKernel>,
    x: Point,
    y: Point,
    policy: &TruncationPolicy,
    rng: SimRng,
) -> Result<bool> {
    let mut sys = WalkSystem::new(kernel.clone(), &[x, y], rng)?;
    let horizon = policy.t_max.unwrap_or(f64::INFINITY);
    loop {
        let Some(ev) = sys.advance_until(horizon)? else {
            return Ok(false);
        };
        if ev.coincident.is_some() {
            return Ok(true);
        }
        if let Some(r) = policy.escape_radius {
            if sys.separation(0, 1) > r {
                return Ok(false);
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeetEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub met: u64,
    pub policy: TruncationPolicy,
    /// Wilson interval at [`DEFAULT_LEVEL`].
    pub ci: EstimateWithCI,
}

impl MeetEstimate {
    pub fn upper(&self) -> f64 {
        self.ci.ci_hi
    }

    pub fn lower(&self) -> f64 {
        self.ci.ci_lo
    }

    /// Truncation can only miss meetings.
    pub const BIAS: &'static str = "downward";
}

/// Estimates `h_R(x, y)`, the probability that independent walks from `x`
/// and `y` ever meet.
pub fn estimate_h(
    x: Point,
    y: Point,
    range: u32,
    n_samples: usize,
    policy: &TruncationPolicy,
    seeds: SeedStream,
) -> Result<MeetEstimate> {
    if x == y {
        return Err(invalid("x, y", "starting points must be distinct"));
    }
    x.check_dim(y.dim())?;
    if n_samples == 0 {
        return Err(invalid("n_samples", "must be at least 1"));
    }
    let kernel = JumpKernel::shared(x.dim(), range)?;
    estimate_h_with(&kernel, x, y, n_samples, policy, seeds)
}

pub fn estimate_h_with(
    kernel: &Arc<JumpKernel>,
    x: Point,
    y: Point,
    n_samples: usize,
    policy: &TruncationPolicy,
    seeds: SeedStream,
) -> Result<MeetEstimate> {
    let hits = par_replicates(n_samples, seeds, |_, rng| {
        meet_once(kernel, x, y, policy, rng.clone())
    });
    let mut met = 0u64;
    for h in hits {
        met += u64::from(h?);
    }
    let ci = wilson(met, n_samples as u64, DEFAULT_LEVEL);
    Ok(MeetEstimate {
        value: ci.estimate,
        stderr: ci.stderr,
        n_samples: n_samples as u64,
        met,
        policy: *policy,
        ci,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairScaled {
    pub x: Point,
    pub y: Point,
    pub h: MeetEstimate,
    /// `ĥ · |x-y|^{d-2}` with the ℓ∞ distance.
    pub scaled: f64,
    pub scaled_upper: f64,
    pub scaled_lower: f64,
}

/// Empirical stand-in for `f(R)`: the maximum of `ĥ_R(x,y)·|x-y|^{d-2}`
/// over the pair set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FEstimate {
    pub range: u32,
    pub value: f64,
    pub value_upper: f64,
    pub value_lower: f64,
    pub pairs: Vec<PairScaled>,
}

pub fn estimate_f(
    range: u32,
    d: usize,
    pairs: &[(Point, Point)],
    n_samples: usize,
    policy: &TruncationPolicy,
    seeds: SeedStream,
) -> Result<FEstimate> {
    if pairs.is_empty() {
        return Err(invalid("pairs", "empty pair set"));
    }
    let kernel = JumpKernel::shared(d, range)?;
    let mut out = Vec::with_capacity(pairs.len());
    for (i, &(x, y)) in pairs.iter().enumerate() {
        if x == y {
            return Err(invalid("pairs", format!("pair {i} is not distinct")));
        }
        let h = estimate_h_with(&kernel, x, y, n_samples, policy, seeds.child(i as u64))?;
        let scale = (x.linf_dist(&y) as f64).powi(d as i32 - 2);
        out.push(PairScaled {
            x,
            y,
            scaled: h.value * scale,
            scaled_upper: h.upper() * scale,
            scaled_lower: h.lower() * scale,
            h,
        });
    }
    let max_by = |f: fn(&PairScaled) -> f64| out.iter().map(f).fold(0.0, f64::max);
    Ok(FEstimate {
        range,
        value: max_by(|p| p.scaled),
        value_upper: max_by(|p| p.scaled_upper),
        value_lower: max_by(|p| p.scaled_lower),
        pairs: out,
    })
}

/// One row of the re-meeting calibration table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemeetRow {
    pub d: usize,
    #[serde(rename = "R")]
    pub range: u32,
    pub r: u32,
    pub remeet_prob_estimate: f64,
    pub n: u64,
}

/// Tabulated probability `q(r)` that two walks at ℓ∞ separation `r`
/// (along an axis) ever meet, used to choose escape radii and to decide
/// when a coalescing system has stopped merging.
#[derive(Clone, Debug)]
pub struct RemeetTable {
    d: usize,
    range: u32,
    rows: Vec<RemeetRow>,
    fitted: Vec<f64>,
    lookup: OnceCell<Vec<f64>>,
}

pub const STANDARD_RADII: [u32; 6] = [1, 2, 4, 8, 16, 32];
const STANDARD_SAMPLES: usize = 4000;
const STANDARD_T_MAX: f64 = 1000.0;
const CALIBRATION_SEED: u64 = 0x0CA1_1B7A;

static TABLES: Lazy<Mutex<FxHashMap<(usize, u32), Arc<RemeetTable>>>> =
    Lazy::new(|| Mutex::new(FxHashMap::default()));

impl RemeetTable {
    pub fn calibrate(
        d: usize,
        range: u32,
        radii: &[u32],
        n: usize,
        policy: &TruncationPolicy,
        seeds: SeedStream,
    ) -> Result<RemeetTable> {
        if radii.is_empty() || radii.contains(&0) || radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("radii", "need increasing positive radii"));
        }
        let kernel = JumpKernel::shared(d, range)?;
        let origin = Point::origin(d);
        let mut rows = Vec::with_capacity(radii.len());
        for &r in radii {
            let y = Point::unit(d, 0) * r as i32;
            let h = estimate_h_with(&kernel, origin, y, n, policy, seeds.child(r as u64))?;
            rows.push(RemeetRow {
                d,
                range,
                r,
                remeet_prob_estimate: h.value,
                n: n as u64,
            });
        }
        Ok(RemeetTable::from_rows(rows))
    }

    fn from_rows(rows: Vec<RemeetRow>) -> RemeetTable {
        let d = rows[0].d;
        let range = rows[0].range;
        // zero counts carry no shape information; replace by the upper bound
        let raw: Vec<f64> = rows
            .iter()
            .map(|row| {
                if row.remeet_prob_estimate > 0.0 {
                    row.remeet_prob_estimate
                } else {
                    wilson(0, row.n.max(1), DEFAULT_LEVEL).ci_hi
                }
            })
            .collect();
        let weights: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let fitted = isotonic_decreasing(&raw, &weights);
        RemeetTable {
            d,
            range,
            rows,
            fitted,
            lookup: OnceCell::new(),
        }
    }

    /// `q(0..=r_max)` as a vector, built once per table.
    pub fn lookup(&self, r_max: u32) -> &[f64] {
        let v = self.lookup.get_or_init(|| (0..=r_max).map(|r| self.q(r)).collect());
        assert_eq!(v.len(), r_max as usize + 1, "lookup built for another size");
        v
    }

    /// Cached table for `(d, R)` with the standard calibration settings.
    pub fn standard(d: usize, range: u32) -> Result<Arc<RemeetTable>> {
        let mut tables = TABLES.lock().unwrap();
        if let Some(t) = tables.get(&(d, range)) {
            return Ok(t.clone());
        }
        let seeds = SeedStream::new(CALIBRATION_SEED)
            .child(d as u64)
            .child(range as u64);
        let t = Arc::new(RemeetTable::calibrate(
            d,
            range,
            &STANDARD_RADII,
            STANDARD_SAMPLES,
            &TruncationPolicy::time_cap(STANDARD_T_MAX)?,
            seeds,
        )?);
        tables.insert((d, range), t.clone());
        Ok(t)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn range(&self) -> u32 {
        self.range
    }

    pub fn rows(&self) -> &[RemeetRow] {
        &self.rows
    }

    /// Monotone interpolation of the table; beyond the last radius the
    /// transient tail `r^{2-d}` is assumed.
    pub fn q(&self, r: u32) -> f64 {
        if r == 0 {
            return 1.0;
        }
        let radii: Vec<u32> = self.rows.iter().map(|row| row.r).collect();
        let r_f = r as f64;
        if r <= radii[0] {
            return self.fitted[0];
        }
        let last = radii.len() - 1;
        if r >= radii[last] {
            let tail = if self.d > 2 {
                (radii[last] as f64 / r_f).powi(self.d as i32 - 2)
            } else {
                1.0
            };
            return self.fitted[last] * tail;
        }
        let j = radii.iter().position(|&x| x >= r).unwrap();
        let (r0, r1) = (radii[j - 1] as f64, radii[j] as f64);
        let (q0, q1) = (self.fitted[j - 1], self.fitted[j]);
        let t = (r_f.ln() - r0.ln()) / (r1.ln() - r0.ln());
        (q0.ln() * (1.0 - t) + q1.ln() * t).exp()
    }

    /// Smallest radius with `q(r) < eps`.
    pub fn escape_radius(&self, eps: f64) -> u32 {
        assert!(eps > 0.0);
        let mut r = 1u32;
        while self.q(r) >= eps {
            if r >= 1 << 24 {
                break;
            }
            r = if r < 64 { r + 1 } else { r + r / 16 };
        }
        r
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<RemeetTable> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows: Vec<RemeetRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
        if rows.is_empty() {
            return Err(Error::Parse("empty calibration table".into()));
        }
        if rows
            .iter()
            .any(|row| row.d != rows[0].d || row.range != rows[0].range)
        {
            return Err(Error::Parse("table mixes several (d, R)".into()));
        }
        Ok(RemeetTable::from_rows(rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(c: &[i32]) -> Point {
        Point::from_slice(c)
    }

    fn sys(d: usize, range: u32, starts: &[Point], seed: u64) -> WalkSystem {
        let k = Arc::new(JumpKernel::new(d, range).unwrap());
        WalkSystem::new(k, starts, SeedStream::new(seed).rng(&[0])).unwrap()
    }

    #[test]
    fn kernel_sizes() {
        assert_eq!(JumpKernel::new(1, 1).unwrap().len(), 2);
        assert_eq!(JumpKernel::new(3, 1).unwrap().len(), 6);
        assert_eq!(JumpKernel::new(3, 2).unwrap().len(), 24);
        assert!((JumpKernel::new(3, 2).unwrap().second_moment() - 2.25).abs() < 1e-12);
    }

    #[test]
    fn d1_steps_are_plus_minus_one() {
        let mut s = sys(1, 1, &[p(&[0])], 3);
        let mut counts = [0u32; 2];
        for _ in 0..10_000 {
            let ev = s.step_walker(0).unwrap();
            let dx = ev.to.coord(0) - ev.from.coord(0);
            assert!(dx == 1 || dx == -1);
            counts[usize::from(dx == 1)] += 1;
        }
        // 4 sigma around 5000
        assert!((counts[1] as f64 - 5000.0).abs() < 200.0, "{counts:?}");
    }

    #[test]
    fn dead_walker_and_empty_system_are_errors() {
        let mut s = sys(3, 1, &[p(&[0, 0, 0]), p(&[5, 0, 0])], 1);
        s.kill(1).unwrap();
        assert!(matches!(s.step_walker(1), Err(Error::DeadWalker(1))));
        assert!(s.kill(1).is_err());
        s.kill(0).unwrap();
        assert!(matches!(s.advance_to_next_event(), Err(Error::EmptySystem)));
    }

    #[test]
    fn coincidence_flagged_iff_shared_site() {
        for n in [3usize, 40] {
            // n=40 exercises the position index
            let starts: Vec<Point> = (0..n as i32).map(|i| p(&[2 * i, 0, 0])).collect();
            let mut s = sys(3, 1, &starts, 11);
            for _ in 0..5_000 {
                let ev = s.advance_to_next_event().unwrap();
                let others: Vec<WalkerId> = s
                    .alive()
                    .iter()
                    .copied()
                    .filter(|&w| w != ev.walker && s.position(w) == ev.to)
                    .collect();
                assert_eq!(ev.coincident.is_some(), !others.is_empty());
                if let Some(c) = ev.coincident {
                    assert!(others.contains(&c));
                    s.kill(c).unwrap();
                }
            }
        }
    }

    #[test]
    fn positions_constant_between_events() {
        let mut s = sys(3, 2, &[p(&[0, 0, 0]), p(&[4, 0, 0]), p(&[0, 4, 0])], 5);
        let mut last: Vec<Point> = (0..3).map(|i| s.position(i)).collect();
        let mut t = 0.0;
        for _ in 0..2_000 {
            let ev = s.advance_to_next_event().unwrap();
            assert!(ev.time >= t);
            t = ev.time;
            for (i, q) in last.iter_mut().enumerate() {
                if i == ev.walker {
                    assert_eq!(*q, ev.from);
                    *q = ev.to;
                } else {
                    assert_eq!(*q, s.position(i));
                }
            }
        }
    }

    #[test]
    fn advance_until_respects_horizon() {
        let mut s = sys(3, 1, &[p(&[0, 0, 0])], 9);
        while let Some(ev) = s.advance_until(50.0).unwrap() {
            assert!(ev.time <= 50.0);
        }
        assert_eq!(s.time(), 50.0);
    }

    #[test]
    fn h_rejects_equal_points() {
        let pol = TruncationPolicy::time_cap(10.0).unwrap();
        assert!(estimate_h(
            p(&[1, 1, 1]),
            p(&[1, 1, 1]),
            1,
            10,
            &pol,
            SeedStream::new(0)
        )
        .is_err());
        assert!(TruncationPolicy::new(None, None).is_err());
    }

    #[test]
    fn f_of_single_pair_is_scaled_h() {
        let pol = TruncationPolicy::new(Some(40), Some(500.0)).unwrap();
        let pair = (p(&[0, 0, 0]), p(&[3, 0, 0]));
        let f = estimate_f(1, 3, &[pair], 2_000, &pol, SeedStream::new(4)).unwrap();
        assert_eq!(f.value, f.pairs[0].h.value * 3.0);
        assert!(f.value >= 0.0);
        assert!(estimate_f(1, 3, &[], 10, &pol, SeedStream::new(4)).is_err());
    }

    #[test]
    fn remeet_table_csv_round_trip_and_interpolation() {
        let rows: Vec<RemeetRow> = [(1, 0.4), (2, 0.2), (4, 0.1)]
            .iter()
            .map(|&(r, q)| RemeetRow {
                d: 3,
                range: 1,
                r,
                remeet_prob_estimate: q,
                n: 100,
            })
            .collect();
        let t = RemeetTable::from_rows(rows);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("d,R,r,remeet_prob_estimate,n"));
        let back = RemeetTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back.rows(), t.rows());
        assert!((t.q(8) - 0.05).abs() < 1e-12);
        assert!(
            (t.q(3) - (0.2f64.ln() * (1.0 - 0.5849625) + 0.1f64.ln() * 0.5849625).exp()).abs()
                < 1e-6
        );
        assert_eq!(t.escape_radius(0.11), 4);
    }
}
