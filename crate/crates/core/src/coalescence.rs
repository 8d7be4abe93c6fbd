//! Marked partitions and the coalescing / annihilating walk systems they
//! drive.
//!
//! Only marks carry a walker. When two marked walkers meet, their blocks
//! merge: the odd-sized block keeps its mark, and if both sizes have the
//! same parity the ≺-smaller mark survives. Every other point of a block
//! follows its mark, so the ground points never need to be simulated.
//! The odd-sized marks form the annihilating system; an odd/odd merge is
//! an annihilation and is recorded as `η_{x,y} = 1`.
//!
//! Ground points are stored sorted lexicographically, so index order is
//! the order ≺ and ties are broken by index.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::Point;
use crate::rng::SimRng;
use crate::walks::{JumpKernel, RemeetTable, WalkSystem};

const NONE: u32 = u32::MAX;

/// A partition of a finite ground set with one mark per block.
#[derive(Clone, Debug)]
pub struct MarkedPartition {
    ground: Arc<Vec<Point>>,
    parent: Vec<u32>,
    // valid at union-find roots
    mark_of_root: Vec<u32>,
    size: Vec<u32>,
    // valid at marks; NONE otherwise
    root_of_mark: Vec<u32>,
    n_marks: usize,
    n_odd: usize,
}

/// What [`MarkedPartition::merge_blocks`] did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Merge {
    pub survivor: usize,
    pub absorbed: usize,
    /// Both blocks were odd: the two annihilating walkers vanished.
    pub odd_odd: bool,
}

impl MarkedPartition {
    /// The partition into singletons, every point its own mark.
    pub fn trivial(points: &[Point]) -> Result<MarkedPartition> {
        if points.is_empty() {
            return Err(invalid("A", "ground set is empty"));
        }
        let d = points[0].dim();
        for p in points {
            p.check_dim(d)?;
        }
        let mut ground = points.to_vec();
        ground.sort();
        if ground.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("A", "ground set has repeated points"));
        }
        Ok(MarkedPartition::trivial_sorted(Arc::new(ground)))
    }

    fn trivial_sorted(ground: Arc<Vec<Point>>) -> MarkedPartition {
        let n = ground.len();
        MarkedPartition {
            parent: (0..n as u32).collect(),
            mark_of_root: (0..n as u32).collect(),
            size: vec![1; n],
            root_of_mark: (0..n as u32).collect(),
            n_marks: n,
            n_odd: n,
            ground,
        }
    }

    pub fn ground(&self) -> &Arc<Vec<Point>> {
        &self.ground
    }

    pub fn len(&self) -> usize {
        self.ground.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ground.is_empty()
    }

    pub fn index_of(&self, p: &Point) -> Option<usize> {
        self.ground.binary_search(p).ok()
    }

    pub fn is_mark(&self, i: usize) -> bool {
        self.root_of_mark.get(i).is_some_and(|&r| r != NONE)
    }

    pub fn n_marks(&self) -> usize {
        self.n_marks
    }

    /// Number of marks with an odd block, `|M̃|`.
    pub fn n_odd(&self) -> usize {
        self.n_odd
    }

    pub fn marks(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_mark(i)).collect()
    }

    pub fn odd_marks(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.is_mark(i) && self.block_size(i) % 2 == 1)
            .collect()
    }

    fn root(&self, mut i: usize) -> usize {
        while self.parent[i] as usize != i {
            i = self.parent[i] as usize;
        }
        i
    }

    /// `ℓ(i)`, the mark of the block containing ground point `i`.
    pub fn label(&self, i: usize) -> usize {
        self.mark_of_root[self.root(i)] as usize
    }

    /// `ℓ` for every ground point.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }

    /// Size of the block of mark `m` (0 if `m` is not a mark).
    pub fn block_size(&self, m: usize) -> usize {
        match self.root_of_mark.get(m) {
            Some(&r) if r != NONE => self.size[r as usize] as usize,
            _ => 0,
        }
    }

    pub fn block(&self, m: usize) -> Vec<usize> {
        if !self.is_mark(m) {
            return Vec::new();
        }
        (0..self.len()).filter(|&i| self.label(i) == m).collect()
    }

    /// Merges the blocks of marks `x` and `y`.
    pub fn merge_blocks(&mut self, x: usize, y: usize) -> Result<Merge> {
        for m in [x, y] {
            if !self.is_mark(m) {
                let name = self
                    .ground
                    .get(m)
                    .map_or_else(|| format!("index {m}"), |p| p.to_string());
                return Err(Error::NotAMark(name));
            }
        }
        if x == y {
            return Err(invalid("x, y", "cannot merge a block with itself"));
        }
        let (rx, ry) = (self.root_of_mark[x] as usize, self.root_of_mark[y] as usize);
        let (sx, sy) = (self.size[rx], self.size[ry]);
        let (odd_x, odd_y) = (sx % 2 == 1, sy % 2 == 1);
        let survivor = if odd_x != odd_y {
            if odd_x {
                x
            } else {
                y
            }
        } else {
            x.min(y)
        };
        let absorbed = if survivor == x { y } else { x };
        let (big, small) = if sx >= sy { (rx, ry) } else { (ry, rx) };
        self.parent[small] = big as u32;
        self.size[big] = sx + sy;
        self.mark_of_root[big] = survivor as u32;
        self.root_of_mark[survivor] = big as u32;
        self.root_of_mark[absorbed] = NONE;
        self.n_marks -= 1;
        let odd_odd = odd_x && odd_y;
        if odd_odd {
            self.n_odd -= 2;
        }
        Ok(Merge {
            survivor,
            absorbed,
            odd_odd,
        })
    }

    /// Point-valued form of [`merge_blocks`](Self::merge_blocks).
    pub fn merge_points(&mut self, x: &Point, y: &Point) -> Result<Point> {
        let ix = self
            .index_of(x)
            .ok_or_else(|| Error::NotAMark(x.to_string()))?;
        let iy = self
            .index_of(y)
            .ok_or_else(|| Error::NotAMark(y.to_string()))?;
        let m = self.merge_blocks(ix, iy)?;
        Ok(self.ground[m.survivor])
    }

    /// Checks that the blocks partition the ground set, each block holds
    /// exactly its own mark and the cached counters are right.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.len();
        let mut sizes = vec![0usize; n];
        for i in 0..n {
            let m = self.label(i);
            if !self.is_mark(m) {
                return Err(format!("label of {i} is {m}, which is not a mark"));
            }
            sizes[m] += 1;
        }
        let mut marks = 0;
        let mut odd = 0;
        for m in 0..n {
            if self.is_mark(m) {
                marks += 1;
                if self.label(m) != m {
                    return Err(format!("mark {m} is not a fixed point of the label map"));
                }
                if sizes[m] != self.block_size(m) {
                    return Err(format!("block size of {m} is stale"));
                }
                odd += sizes[m] % 2;
            } else if sizes[m] != 0 {
                return Err(format!("{m} is not a mark but labels {} points", sizes[m]));
            }
        }
        if marks != self.n_marks || odd != self.n_odd {
            return Err("mark counters are stale".into());
        }
        Ok(())
    }
}

/// When a coalescence run is considered terminal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StopPolicy {
    /// Stop once the summed re-meeting bound over surviving mark pairs
    /// drops below this.
    pub eps_stop: Option<f64>,
    pub t_max: Option<f64>,
    /// Minimum time between two evaluations of the re-meeting bound; the
    /// spacing also grows geometrically with time.
    pub check_every: f64,
}

impl Default for StopPolicy {
    fn default() -> Self {
        StopPolicy {
            eps_stop: Some(1e-3),
            t_max: Some(1000.0),
            check_every: 1.0,
        }
    }
}

impl StopPolicy {
    pub fn new(eps_stop: Option<f64>, t_max: Option<f64>) -> Result<StopPolicy> {
        let p = StopPolicy {
            eps_stop,
            t_max,
            ..StopPolicy::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn time_cap(t_max: f64) -> Result<StopPolicy> {
        StopPolicy::new(None, Some(t_max))
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_stop.is_none() && self.t_max.is_none() {
            return Err(invalid("stop policy", "needs eps_stop or t_max"));
        }
        if let Some(e) = self.eps_stop {
            if !(e > 0.0 && e < 1.0) {
                return Err(invalid("eps_stop", format!("{e} is not in (0,1)")));
            }
        }
        if let Some(t) = self.t_max {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid("t_max", format!("{t} is not a finite time")));
            }
        }
        if !(self.check_every > 0.0) {
            return Err(invalid("check_every", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    SingleBlock,
    EpsStop,
    TimeCap,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::SingleBlock => "single_block",
            StopReason::EpsStop => "eps_stop",
            StopReason::TimeCap => "time_cap",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MergeEvent {
    pub time: f64,
    pub x: usize,
    pub y: usize,
    pub survivor: usize,
    pub odd_odd: bool,
}

/// Outcome of one coalescence simulation.
#[derive(Clone, Debug)]
pub struct CoalescenceRun {
    pub terminal: MarkedPartition,
    pub events: Vec<MergeEvent>,
    pub range: u32,
    pub policy: StopPolicy,
    pub stop_reason: StopReason,
    pub end_time: f64,
    /// Position of each surviving mark's walker at `end_time`, by mark.
    pub final_positions: Vec<(usize, Point)>,
}

static RUNS: AtomicU64 = AtomicU64::new(0);
static VIOLATIONS: AtomicU64 = AtomicU64::new(0);

/// `(runs, violations)` of the terminal invariants, over every run in this
/// process.
pub fn audit_counts() -> (u64, u64) {
    (
        RUNS.load(Ordering::Relaxed),
        VIOLATIONS.load(Ordering::Relaxed),
    )
}

impl CoalescenceRun {
    pub fn ground(&self) -> &Arc<Vec<Point>> {
        self.terminal.ground()
    }

    /// Annihilated pairs `(x, y)` with `x ≺ y`, i.e. `η_{x,y} = 1`.
    pub fn eta(&self) -> Vec<(usize, usize)> {
        self.events
            .iter()
            .filter(|e| e.odd_odd)
            .map(|e| (e.x.min(e.y), e.x.max(e.y)))
            .collect()
    }

    /// `|A \ M_∞|`, the number of merges.
    pub fn n_coalesced(&self) -> usize {
        self.terminal.len() - self.terminal.n_marks()
    }

    /// `|A \ M̃_∞|`.
    pub fn n_annihilated(&self) -> usize {
        self.terminal.len() - self.terminal.n_odd()
    }

    /// Partition at time `t`, replayed from the event log.
    pub fn partition_at(&self, t: f64) -> MarkedPartition {
        if t >= self.end_time {
            return self.terminal.clone();
        }
        let mut p = MarkedPartition::trivial_sorted(self.ground().clone());
        for e in self.events.iter().take_while(|e| e.time <= t) {
            p.merge_blocks(e.x, e.y).expect("logged merge replays");
        }
        p
    }

    /// Checks the terminal coupling invariants.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        self.terminal.validate()?;
        let odd = self.terminal.odd_marks();
        if odd.iter().any(|&m| !self.terminal.is_mark(m)) {
            return Err("odd marks are not all marks".into());
        }
        let gone = self.n_annihilated();
        if gone % 2 != 0 {
            return Err(format!("|A \\ M̃| = {gone} is odd"));
        }
        if self.eta().len() * 2 != gone {
            return Err(format!(
                "sum of eta is {} but |A \\ M̃| / 2 is {}",
                self.eta().len(),
                gone / 2
            ));
        }
        if self.events.windows(2).any(|w| w[0].time >= w[1].time) {
            return Err("merge times are not strictly increasing".into());
        }
        Ok(())
    }

    pub fn to_log(&self) -> RunLog {
        let g = self.ground();
        RunLog {
            schema_version: 1,
            ground: g.to_vec(),
            range: self.range,
            policy: self.policy,
            stop_reason: self.stop_reason,
            end_time: self.end_time,
            merges: self
                .events
                .iter()
                .map(|e| LoggedMerge {
                    time: e.time,
                    pair: [g[e.x], g[e.y]],
                    survivor: g[e.survivor],
                    odd_odd: e.odd_odd,
                })
                .collect(),
            terminal_marks: self.terminal.marks().into_iter().map(|m| g[m]).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoggedMerge {
    pub time: f64,
    pub pair: [Point; 2],
    pub survivor: Point,
    pub odd_odd: bool,
}

/// JSON form of a run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunLog {
    pub schema_version: u32,
    pub ground: Vec<Point>,
    #[serde(rename = "R")]
    pub range: u32,
    pub policy: StopPolicy,
    pub stop_reason: StopReason,
    pub end_time: f64,
    pub merges: Vec<LoggedMerge>,
    pub terminal_marks: Vec<Point>,
}

// exact pair sums above this many marks are replaced by a lower bound
const EXACT_RESIDUAL_LIMIT: usize = 2048;

fn residual_small_enough(sys: &WalkSystem, q: &[f64], eps: f64) -> bool {
    let alive = sys.alive();
    let k = alive.len();
    let lookup = |r: u32| q[(r as usize).min(q.len() - 1)];
    if k > EXACT_RESIDUAL_LIMIT {
        // every pair is at most `diam` apart and q is nonincreasing
        let (mut lo, mut hi) = (sys.position(alive[0]), sys.position(alive[0]));
        for &w in alive {
            let p = sys.position(w);
            for i in 0..p.dim() {
                lo.set_coord(i, lo.coord(i).min(p.coord(i)));
                hi.set_coord(i, hi.coord(i).max(p.coord(i)));
            }
        }
        let pairs = (k * (k - 1) / 2) as f64;
        if pairs * lookup(lo.linf_dist(&hi)) >= eps {
            return false;
        }
    }
    let mut s = 0.0;
    for (i, &a) in alive.iter().enumerate() {
        let pa = sys.position(a);
        for &b in &alive[i + 1..] {
            s += lookup(pa.linf_dist(&sys.position(b)));
            if s >= eps {
                return false;
            }
        }
    }
    true
}

/// Largest separation tabulated for the stop rule; farther pairs use the
/// value at this radius, which overstates them.
const Q_LOOKUP_MAX: u32 = 1 << 14;

/// Runs coalescing walks from every point of `a` until `policy` fires.
pub fn run_coalescence(
    a: &[Point],
    range: u32,
    policy: &StopPolicy,
    rng: SimRng,
) -> Result<CoalescenceRun> {
    policy.validate()?;
    let partition = MarkedPartition::trivial(a)?;
    let d = partition.ground()[0].dim();
    let kernel = JumpKernel::shared(d, range)?;
    run_with_kernel(partition, kernel, policy, rng)
}

pub(crate) fn run_with_kernel(
    mut partition: MarkedPartition,
    kernel: Arc<JumpKernel>,
    policy: &StopPolicy,
    rng: SimRng,
) -> Result<CoalescenceRun> {
    let table = match policy.eps_stop {
        Some(_) => Some(RemeetTable::standard(kernel.dim(), kernel.range())?),
        None => None,
    };
    let q = table.as_ref().map(|t| t.lookup(Q_LOOKUP_MAX));
    let ground = partition.ground().clone();
    let mut sys = WalkSystem::new(kernel.clone(), &ground, rng)?;
    let t_max = policy.t_max.unwrap_or(f64::INFINITY);
    let mut events = Vec::new();
    let mut next_check = policy.check_every.min(t_max);
    let stop_reason = loop {
        if sys.n_alive() == 1 {
            break StopReason::SingleBlock;
        }
        let horizon = if q.is_some() { next_check } else { t_max };
        match sys.advance_until(horizon)? {
            Some(ev) => {
                if let Some(other) = ev.coincident {
                    let m = partition.merge_blocks(ev.walker, other)?;
                    sys.kill(m.absorbed)?;
                    events.push(MergeEvent {
                        time: ev.time,
                        x: ev.walker,
                        y: other,
                        survivor: m.survivor,
                        odd_odd: m.odd_odd,
                    });
                }
            }
            None => {
                let t = sys.time();
                if let (Some(q), Some(eps)) = (q, policy.eps_stop) {
                    if residual_small_enough(&sys, q, eps) {
                        break StopReason::EpsStop;
                    }
                }
                if t >= t_max {
                    break StopReason::TimeCap;
                }
                next_check = (t + policy.check_every.max(0.1 * t)).min(t_max);
            }
        }
    };
    let final_positions = sys.alive().iter().map(|&w| (w, sys.position(w))).collect();
    let run = CoalescenceRun {
        terminal: partition,
        events,
        range: kernel.range(),
        policy: *policy,
        stop_reason,
        end_time: sys.time(),
        final_positions,
    };
    RUNS.fetch_add(1, Ordering::Relaxed);
    if run.check_invariants().is_err() {
        VIOLATIONS.fetch_add(1, Ordering::Relaxed);
    }
    Ok(run)
}

/// The annihilating system read off a run at time `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnihilatingView {
    pub time: f64,
    /// `M̃_t` as ground indices, increasing.
    pub odd_marks: Vec<usize>,
    /// Walker positions, available at the end of the run only.
    pub positions: Option<Vec<(usize, Point)>>,
}

pub fn annihilating_view(run: &CoalescenceRun, t: f64) -> Result<AnnihilatingView> {
    if !(t >= 0.0) {
        return Err(invalid("t", format!("{t} is not a time")));
    }
    let p = run.partition_at(t);
    let odd_marks = p.odd_marks();
    let positions = (t >= run.end_time).then(|| {
        run.final_positions
            .iter()
            .filter(|(m, _)| odd_marks.binary_search(m).is_ok())
            .copied()
            .collect()
    });
    Ok(AnnihilatingView {
        time: t,
        odd_marks,
        positions,
    })
}
