//! The 6^N multiscale scheme: scale ladders, proper embeddings of the
//! binary tree, exact enumeration, sparsity and pair-sum certificates, and
//! an explicit path-to-embedding map.
//!
//! Tree nodes are stored in heap order: the root is 0 and the children
//! `m·1`, `m·2` of node `i` are `2i+1` and `2i+2`.
//!
//! Two lattice rules are supported for child positions of a node at depth
//! `k`. [`EmbeddingRule::Coarse`] keeps children on the parent's lattice
//! `L_{N-k}·Z^d`, so each node has `(3^d-1)(5^d-3^d)` child choices and the
//! family is finite per level. [`EmbeddingRule::Fine`] only asks the children
//! to lie on their own lattice `L_{N-k-1}·Z^d`; this larger family is the
//! one that [`embed_from_path`] needs, since a crossing path can pass
//! half a parent cell away from every coarse lattice point.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{BoxSpec, Point, MAX_DIM};
use crate::rng::SimRng;

pub const ENUMERATION_GUARD: u128 = 10_000_000;

/// `L_k = 6^k L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub l: u32,
    pub n: u32,
}

impl ScaleLadder {
    pub fn new(l: u32, n: u32) -> Result<ScaleLadder> {
        if l == 0 {
            return Err(invalid("L", "must be positive"));
        }
        let top = 6u64.pow(n) * 2 * l as u64;
        if top > i32::MAX as u64 / 4 {
            return Err(invalid("N", "scale 2 L_N does not fit the lattice coordinates"));
        }
        Ok(ScaleLadder { l, n })
    }

    pub fn scale(&self, k: u32) -> i32 {
        6i32.pow(k) * self.l as i32
    }

    pub fn on_lattice(&self, p: &Point, k: u32) -> bool {
        let s = self.scale(k);
        p.coords().iter().all(|c| c % s == 0)
    }
}

/// Node of `T_N` as a word over {1,2}; the empty word is the root.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TreeIndex(pub Vec<u8>);

impl TreeIndex {
    pub fn root() -> TreeIndex {
        TreeIndex(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    pub fn child(&self, c: u8) -> TreeIndex {
        let mut v = self.0.clone();
        v.push(c);
        TreeIndex(v)
    }

    pub fn heap(&self) -> usize {
        self.0
            .iter()
            .fold(1usize, |acc, &c| 2 * acc + usize::from(c == 2))
            - 1
    }

    pub fn from_heap(i: usize) -> TreeIndex {
        let x = i + 1;
        let depth = usize::BITS - 1 - x.leading_zeros();
        TreeIndex(
            (0..depth)
                .rev()
                .map(|b| if (x >> b) & 1 == 1 { 2 } else { 1 })
                .collect(),
        )
    }
}

impl fmt::Display for TreeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.0 {
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingRule {
    /// Children of a depth-`k` node on `L_{N-k}·Z^d`.
    Coarse,
    /// Children of a depth-`k` node on `L_{N-k-1}·Z^d`.
    Fine,
}

/// A map from `T_N` into `Z^d`, heap ordered.
#[derive(Clone, Debug, PartialEq)]
pub struct ProperEmbedding {
    pub ladder: ScaleLadder,
    pub d: usize,
    pub nodes: Vec<Point>,
}

fn depth_of(i: usize) -> u32 {
    usize::BITS - 1 - (i + 1).leading_zeros()
}

impl ProperEmbedding {
    pub fn n(&self) -> u32 {
        self.ladder.n
    }

    pub fn node(&self, m: &TreeIndex) -> Point {
        self.nodes[m.heap()]
    }

    /// Leaf positions `T(m)`, `m ∈ T_(N)`, in heap order.
    pub fn leaves(&self) -> &[Point] {
        let first = (1usize << self.n()) - 1;
        &self.nodes[first..]
    }

    pub fn leaf_index(&self, j: usize) -> TreeIndex {
        TreeIndex::from_heap((1usize << self.n()) - 1 + j)
    }

    pub fn to_json(&self) -> Result<String> {
        let nodes: BTreeMap<String, Point> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, p)| (TreeIndex::from_heap(i).to_string(), *p))
            .collect();
        let v = serde_json::json!({
            "schema_version": crate::field::SCHEMA_VERSION,
            "N": self.ladder.n,
            "L": self.ladder.l,
            "d": self.d,
            "nodes": nodes,
        });
        Ok(serde_json::to_string_pretty(&v)?)
    }

    pub fn from_json(text: &str) -> Result<ProperEmbedding> {
        #[derive(Deserialize)]
        struct Raw {
            #[serde(rename = "N")]
            n: u32,
            #[serde(rename = "L")]
            l: u32,
            d: usize,
            nodes: BTreeMap<String, Point>,
        }
        let raw: Raw = serde_json::from_str(text)?;
        let ladder = ScaleLadder::new(raw.l, raw.n)?;
        let count = (1usize << (raw.n + 1)) - 1;
        let mut nodes = vec![None; count];
        for (k, p) in raw.nodes {
            let word: Vec<u8> = k
                .bytes()
                .map(|b| match b {
                    b'1' => Ok(1),
                    b'2' => Ok(2),
                    _ => Err(Error::Parse(format!("bad tree index {k:?}"))),
                })
                .collect::<Result<_>>()?;
            let i = TreeIndex(word).heap();
            if i >= count {
                return Err(Error::Parse(format!("tree index {k:?} deeper than N")));
            }
            nodes[i] = Some(p);
        }
        let nodes = nodes
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::Parse("missing tree nodes".into()))?;
        Ok(ProperEmbedding {
            ladder,
            d: raw.d,
            nodes,
        })
    }
}

/// First failed property, if any.
pub fn embedding_violation(t: &ProperEmbedding, rule: EmbeddingRule) -> Option<String> {
    let n = t.n();
    let d = t.d;
    if t.nodes.len() != (1usize << (n + 1)) - 1 {
        return Some("wrong number of nodes".into());
    }
    if t.nodes.iter().any(|p| p.dim() != d) {
        return Some("dimension mismatch".into());
    }
    if t.nodes[0] != Point::origin(d) {
        return Some("root is not at the origin".into());
    }
    for (i, p) in t.nodes.iter().enumerate() {
        let k = depth_of(i);
        if !t.ladder.on_lattice(p, n - k) {
            return Some(format!("node {} is not on L_{}", TreeIndex::from_heap(i), n - k));
        }
        if k < n {
            let s = t.ladder.scale(n - k);
            for (c, mult) in [(2 * i + 1, 1), (2 * i + 2, 2)] {
                let child = t.nodes[c];
                if child.linf_dist(p) != (mult * s) as u32 {
                    return Some(format!(
                        "child {} is not at distance {} from its parent",
                        TreeIndex::from_heap(c),
                        mult * s
                    ));
                }
                if rule == EmbeddingRule::Coarse && !t.ladder.on_lattice(&child, n - k) {
                    return Some(format!(
                        "child {} is not on its parent's lattice",
                        TreeIndex::from_heap(c)
                    ));
                }
            }
        }
    }
    None
}

/// Properties 1-3 of a proper embedding under `rule`.
pub fn validate_embedding_with(t: &ProperEmbedding, rule: EmbeddingRule) -> bool {
    embedding_violation(t, rule).is_none()
}

/// Properties 1-3 with children on their own lattice.
pub fn validate_embedding(t: &ProperEmbedding) -> bool {
    validate_embedding_with(t, EmbeddingRule::Fine)
}

/// Unit offsets `{v : |v|_∞ = r}` with coordinates in `{-r..r}`.
fn shell(d: usize, r: i32) -> Vec<Point> {
    BoxSpec::linf(Point::origin(d), r as u32)
        .points()
        .into_iter()
        .filter(|p| p.linf_norm() == r as u32)
        .collect()
}

/// Child offset choices of a depth-`k` node, `(for m·1, for m·2)`.
fn child_offsets(ladder: &ScaleLadder, d: usize, k: u32, rule: EmbeddingRule) -> (Vec<Point>, Vec<Point>) {
    let n = ladder.n;
    let (unit, r) = match rule {
        EmbeddingRule::Coarse => (ladder.scale(n - k), 1),
        EmbeddingRule::Fine => (ladder.scale(n - k - 1), 6),
    };
    let scale = |v: Vec<Point>| v.into_iter().map(|p| p * unit).collect::<Vec<_>>();
    (scale(shell(d, r)), scale(shell(d, 2 * r)))
}

/// Number of child-pair choices per internal node.
pub fn choices_per_node(d: usize, rule: EmbeddingRule) -> u128 {
    let (a, b) = match rule {
        EmbeddingRule::Coarse => (3u128, 5u128),
        EmbeddingRule::Fine => (13, 25),
    };
    let p = |x: u128| x.pow(d as u32);
    let (c1, c2) = match rule {
        EmbeddingRule::Coarse => (p(a) - 1, p(b) - p(a)),
        EmbeddingRule::Fine => (p(a) - p(11), p(b) - p(23)),
    };
    c1 * c2
}

/// `|Λ_N|` under `rule`; `None` on overflow.
pub fn embedding_count(n: u32, d: usize, rule: EmbeddingRule) -> Option<u128> {
    let internal = (1u32 << n) - 1;
    choices_per_node(d, rule).checked_pow(internal)
}

/// Every coarse-rule embedding of `T_N`, in mixed-radix order of the
/// per-node child choices.
pub fn enumerate_embeddings(n: u32, d: usize, l: u32) -> Result<Enumeration> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::UnsupportedDimension(d));
    }
    let ladder = ScaleLadder::new(l, n)?;
    let count = embedding_count(n, d, EmbeddingRule::Coarse).unwrap_or(u128::MAX);
    if count > ENUMERATION_GUARD {
        return Err(Error::GuardExceeded {
            count,
            guard: ENUMERATION_GUARD,
        });
    }
    let internal = (1usize << n) - 1;
    let per_level: Vec<(Vec<Point>, Vec<Point>)> = (0..n)
        .map(|k| child_offsets(&ladder, d, k, EmbeddingRule::Coarse))
        .collect();
    Ok(Enumeration {
        ladder,
        d,
        per_level,
        digits: vec![(0, 0); internal],
        count,
        done: false,
    })
}

pub struct Enumeration {
    ladder: ScaleLadder,
    d: usize,
    per_level: Vec<(Vec<Point>, Vec<Point>)>,
    digits: Vec<(usize, usize)>,
    count: u128,
    done: bool,
}

impl Enumeration {
    /// Exact number of embeddings the iterator yields.
    pub fn count_exact(&self) -> u128 {
        self.count
    }
}

fn build(ladder: &ScaleLadder, d: usize, choose: impl Fn(usize) -> (Point, Point)) -> ProperEmbedding {
    let total = (1usize << (ladder.n + 1)) - 1;
    let mut nodes = vec![Point::origin(d); total];
    for i in 0..total {
        if 2 * i + 2 < total {
            let (o1, o2) = choose(i);
            nodes[2 * i + 1] = nodes[i] + o1;
            nodes[2 * i + 2] = nodes[i] + o2;
        }
    }
    ProperEmbedding {
        ladder: *ladder,
        d,
        nodes,
    }
}

impl Iterator for Enumeration {
    type Item = ProperEmbedding;

    fn next(&mut self) -> Option<ProperEmbedding> {
        if self.done {
            return None;
        }
        let per_level = &self.per_level;
        let digits = &self.digits;
        let t = build(&self.ladder, self.d, |i| {
            let (a, b) = &per_level[depth_of(i) as usize];
            (a[digits[i].0], b[digits[i].1])
        });
        // advance the odometer
        let mut i = self.digits.len();
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            let (a, b) = &self.per_level[depth_of(i) as usize];
            let dg = &mut self.digits[i];
            if dg.1 + 1 < b.len() {
                dg.1 += 1;
                break;
            }
            dg.1 = 0;
            if dg.0 + 1 < a.len() {
                dg.0 += 1;
                break;
            }
            dg.0 = 0;
        }
        Some(t)
    }
}

/// Uniform independent child choices at every node.
pub fn random_embedding(
    n: u32,
    d: usize,
    l: u32,
    rule: EmbeddingRule,
    rng: &mut SimRng,
) -> Result<ProperEmbedding> {
    let ladder = ScaleLadder::new(l, n)?;
    let per_level: Vec<(Vec<Point>, Vec<Point>)> = (0..n).map(|k| child_offsets(&ladder, d, k, rule)).collect();
    let total = (1usize << (n + 1)) - 1;
    let picks: Vec<(Point, Point)> = (0..total)
        .map(|i| {
            if 2 * i + 2 < total {
                let (a, b) = &per_level[depth_of(i) as usize];
                (a[rng.gen_range(0..a.len())], b[rng.gen_range(0..b.len())])
            } else {
                (Point::origin(d), Point::origin(d))
            }
        })
        .collect();
    Ok(build(&ladder, d, |i| picks[i]))
}

/// `dist(B(a, r), B(b, r))` in ℓ∞.
fn box_gap(a: &Point, b: &Point, r: u32) -> u32 {
    a.linf_dist(b).saturating_sub(2 * r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityCheck {
    pub k: u32,
    /// Other leaves within reach, `m0` excluded.
    pub count: usize,
    /// `2^{k-1}`.
    pub bound: u64,
    pub pass: bool,
    /// `count + 1 <= 2^k`, i.e. `m0` counted and the bound doubled.
    pub weak_pass: bool,
}

/// Number of other leaves `m ≠ m0` with
/// `dist(B(T(m0), 2L), B(T(m), 2L)) ≤ 6^k L / 2`, against `2^{k-1}`.
pub fn check_sparsity(t: &ProperEmbedding, m0: usize, k: u32) -> Result<SparsityCheck> {
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    if let Some(why) = embedding_violation(t, EmbeddingRule::Fine) {
        return Err(Error::InvalidEmbedding(why));
    }
    let leaves = t.leaves();
    if m0 >= leaves.len() {
        return Err(invalid("m0", format!("leaf {m0} out of range")));
    }
    let l = t.ladder.l;
    let radius = 6f64.powi(k as i32) * l as f64 / 2.0;
    let count = leaves
        .iter()
        .enumerate()
        .filter(|&(j, p)| j != m0 && box_gap(&leaves[m0], p, 2 * l) as f64 <= radius)
        .count();
    let bound = 1u64 << (k - 1);
    Ok(SparsityCheck {
        k,
        count,
        bound,
        pass: count as u64 <= bound,
        weak_pass: count as u64 + 1 <= 2 * bound,
    })
}

/// Leaf boxes `B(T(m), 2L)` are pairwise disjoint.
pub fn leaf_boxes_disjoint(t: &ProperEmbedding) -> bool {
    let leaves = t.leaves();
    let r = 2 * t.ladder.l;
    leaves
        .iter()
        .enumerate()
        .all(|(i, a)| leaves[i + 1..].iter().all(|b| a.linf_dist(b) > 2 * r))
}

fn interval_overlap(a_lo: i64, a_hi: i64, b_lo: i64, b_hi: i64) -> u64 {
    (a_hi.min(b_hi) - a_lo.max(b_lo) + 1).max(0) as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodCount {
    pub k: u32,
    pub count: u64,
    pub bound: u64,
    pub within_bound: bool,
}

/// `|{v ∈ A : v ≠ u, |u - v| ≤ 6^k L / 2}|` with `A` the union of the leaf
/// boxes `B(T(m), 2L)` (assumed disjoint), against `(4L+1)^d 2^{k-1}`.
pub fn neighborhood_count(t: &ProperEmbedding, u: &Point, k: u32) -> Result<NeighborhoodCount> {
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    let l = t.ladder.l;
    let r = 2 * l as i64;
    if !t.leaves().iter().any(|c| c.linf_dist(u) as i64 <= r) {
        return Err(Error::OutsideWindow(u.to_string()));
    }
    if !leaf_boxes_disjoint(t) {
        return Err(Error::InvalidEmbedding("leaf boxes overlap".into()));
    }
    let rad = (6i64.pow(k) * l as i64) / 2;
    let mut count = 0u64;
    for c in t.leaves() {
        let mut prod = 1u64;
        for i in 0..t.d {
            let (ci, ui) = (c.coord(i) as i64, u.coord(i) as i64);
            prod *= interval_overlap(ci - r, ci + r, ui - rad, ui + rad);
        }
        count += prod;
    }
    count -= 1; // u itself
    let bound = (4 * l as u64 + 1).pow(t.d as u32) << (k - 1);
    Ok(NeighborhoodCount {
        k,
        count,
        bound,
        within_bound: count <= bound,
    })
}

/// Constants for the pair-sum bound `Σ_{u≺v∈A} |u-v|^{2-d} ≤ C' 2^N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSumConstants {
    /// `Σ_{w ∈ B(0,3L), w ≠ 0} |w|^{2-d}`.
    pub c: f64,
    pub c_second: f64,
    pub c_prime: f64,
}

pub fn pair_sum_constants(d: usize, l: u32) -> Result<PairSumConstants> {
    if d < 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    let e = 2.0 - d as f64;
    let c: f64 = BoxSpec::linf(Point::origin(d), 3 * l)
        .points()
        .iter()
        .filter(|w| w.linf_norm() > 0)
        .map(|w| (w.linf_norm() as f64).powf(e))
        .sum();
    let ball = (4.0 * l as f64 + 1.0).powi(d as i32);
    // Σ_{k≥1} 2^k (6^k L/2)^{2-d} = (L/2)^{2-d} r/(1-r), r = 2·6^{2-d}
    let ratio = 2.0 * 6f64.powf(e);
    let tail = ball * (l as f64 / 2.0).powf(e) * ratio / (1.0 - ratio);
    let c_second = c + tail;
    Ok(PairSumConstants {
        c,
        c_second,
        c_prime: ball * c_second,
    })
}

/// Exact pair sums over unions of disjoint `B(·, 2L)` boxes, memoizing the
/// cross sum for each center offset up to symmetry.
pub struct PairSummer {
    d: usize,
    l: u32,
    // (w, multiplicity) over B(0, 4L)
    diffs: Vec<(Point, f64)>,
    cross: FxHashMap<Point, f64>,
    within: f64,
}

impl PairSummer {
    pub fn new(d: usize, l: u32) -> Result<PairSummer> {
        if d < 3 {
            return Err(Error::UnsupportedDimension(d));
        }
        let side = 4 * l as i32 + 1;
        let diffs: Vec<(Point, f64)> = BoxSpec::linf(Point::origin(d), 4 * l)
            .points()
            .into_iter()
            .map(|w| {
                let m: f64 = w.coords().iter().map(|c| (side - c.abs()) as f64).product();
                (w, m)
            })
            .collect();
        let e = 2.0 - d as f64;
        let within = diffs
            .iter()
            .filter(|(w, _)| w.linf_norm() > 0)
            .map(|(w, m)| m * (w.linf_norm() as f64).powf(e))
            .sum::<f64>()
            / 2.0;
        Ok(PairSummer {
            d,
            l,
            diffs,
            cross: FxHashMap::default(),
            within,
        })
    }

    fn cross_sum(&mut self, offset: Point) -> f64 {
        let key = offset.canonical_abs();
        if let Some(&v) = self.cross.get(&key) {
            return v;
        }
        let e = 2.0 - self.d as f64;
        let v = self
            .diffs
            .iter()
            .map(|(w, m)| m * ((key + *w).linf_norm() as f64).powf(e))
            .sum();
        self.cross.insert(key, v);
        v
    }

    /// `Σ_{u≺v ∈ A} |u - v|^{2-d}` for `A = ∪ B(T(m), 2L)` over leaves.
    pub fn leaf_pair_sum(&mut self, t: &ProperEmbedding) -> Result<f64> {
        if t.d != self.d || t.ladder.l != self.l {
            return Err(invalid("embedding", "parameters differ from the summer's"));
        }
        if !leaf_boxes_disjoint(t) {
            return Err(Error::InvalidEmbedding("leaf boxes overlap".into()));
        }
        let leaves = t.leaves().to_vec();
        let mut s = self.within * leaves.len() as f64;
        for (i, a) in leaves.iter().enumerate() {
            for b in &leaves[i + 1..] {
                s += self.cross_sum(*b - *a);
            }
        }
        Ok(s)
    }
}

/// Direct double loop over the point set; for small cases and tests.
pub fn pair_sum_brute(points: &[Point]) -> f64 {
    let d = points.first().map_or(3, |p| p.dim());
    let e = 2.0 - d as f64;
    let mut s = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            s += (a.linf_dist(b) as f64).powf(e);
        }
    }
    s
}

/// Every point of the union of leaf boxes.
pub fn leaf_box_points(t: &ProperEmbedding) -> Vec<Point> {
    t.leaves()
        .iter()
        .flat_map(|c| BoxSpec::linf(*c, 2 * t.ladder.l).points())
        .collect()
}

fn is_star_path(g: &[Point]) -> bool {
    g.windows(2).all(|w| w[0].linf_dist(&w[1]) <= 1)
}

fn meets_sphere(g: &[Point], c: &Point, r: u32) -> bool {
    g.iter().any(|p| p.linf_dist(c) == r)
}

/// The crossing property: for every leaf `m`, `γ` meets both
/// `S(T(m), L-1)` and `S(T(m), 2L)`.
pub fn path_crosses_leaves(gamma: &[Point], t: &ProperEmbedding) -> bool {
    let l = t.ladder.l;
    t.leaves()
        .iter()
        .all(|c| meets_sphere(gamma, c, l - 1) && meets_sphere(gamma, c, 2 * l))
}

/// Builds a fine-rule embedding from a `*`-connected path that meets
/// `S(L_N - 1)` and `S(2 L_N)`.
///
/// At a node `T` of scale `L'`, the first path point `y` with
/// `|y - T| = L'` is snapped to the child lattice (spacing `s = L'/6`) by
/// rounding every coordinate with `|y_i - T_i| < L'`; the result is `T(m·1)`
/// and lies within `s/2 ≤ s - 1` of `y` (or at `y` when `s = 1`). Since the
/// path also reaches distance `2L'` from `T`, it crosses from
/// `S(T(m·1), s-1)` to `S(T(m·1), 2s)`. `T(m·2)` uses the first point at
/// distance `2L'` and the path's points near `S(T, L'-1)` in the same way.
/// The result is rechecked before it is returned.
pub fn embed_from_path(gamma: &[Point], n: u32, l: u32) -> Result<ProperEmbedding> {
    let Some(first) = gamma.first() else {
        return Err(invalid("gamma", "empty path"));
    };
    let d = first.dim();
    for p in gamma {
        p.check_dim(d)?;
    }
    if !is_star_path(gamma) {
        return Err(invalid("gamma", "not a *-connected path"));
    }
    let ladder = ScaleLadder::new(l, n)?;
    let origin = Point::origin(d);
    let top = ladder.scale(n) as u32;
    if !meets_sphere(gamma, &origin, top - 1) || !meets_sphere(gamma, &origin, 2 * top) {
        return Err(invalid("gamma", "does not meet S(L_N - 1) and S(2 L_N)"));
    }
    let total = (1usize << (n + 1)) - 1;
    let mut nodes = vec![origin; total];
    for i in 0..total {
        if 2 * i + 2 >= total {
            continue;
        }
        let k = depth_of(i);
        let big = ladder.scale(n - k);
        let s = ladder.scale(n - k - 1);
        let t = nodes[i];
        for (c, mult) in [(2 * i + 1, 1), (2 * i + 2, 2)] {
            let r = (mult * big) as u32;
            let y = gamma
                .iter()
                .find(|p| p.linf_dist(&t) == r)
                .ok_or_else(|| Error::EmbeddingNotFound(format!("path misses S({t}, {r})")))?;
            let mut child = t;
            for j in 0..d {
                let off = y.coord(j) - t.coord(j);
                let snapped = if off.unsigned_abs() == r {
                    off
                } else {
                    (off as f64 / s as f64).round() as i32 * s
                };
                child.set_coord(j, t.coord(j) + snapped);
            }
            nodes[c] = child;
        }
    }
    let emb = ProperEmbedding {
        ladder,
        d,
        nodes,
    };
    if let Some(why) = embedding_violation(&emb, EmbeddingRule::Fine) {
        return Err(Error::EmbeddingNotFound(why));
    }
    if !path_crosses_leaves(gamma, &emb) {
        return Err(Error::EmbeddingNotFound(
            "a leaf box is not crossed by the path".into(),
        ));
    }
    Ok(emb)
}

/// Random `*`-connected path from a uniform point of `S(L_N - 1)` that
/// drifts outward until it reaches `S(2 L_N)`.
pub fn random_crossing_path(n: u32, d: usize, l: u32, drift: f64, rng: &mut SimRng) -> Result<Vec<Point>> {
    let ladder = ScaleLadder::new(l, n)?;
    let start_r = ladder.scale(n) - 1;
    let end_r = 2 * ladder.scale(n);
    let mut p = Point::origin(d);
    for j in 0..d {
        p.set_coord(j, rng.gen_range(-start_r..=start_r));
    }
    let face = rng.gen_range(0..d);
    p.set_coord(face, if rng.gen() { start_r } else { -start_r });
    let mut path = vec![p];
    while p.linf_norm() < end_r as u32 {
        let mut q = p;
        for j in 0..d {
            let step: i32 = rng.gen_range(-1..=1);
            q.set_coord(j, p.coord(j) + step);
        }
        // bias: with probability `drift` move the largest coordinate outward
        if rng.gen::<f64>() < drift {
            let (j, _) = (0..d)
                .map(|j| (j, p.coord(j).abs()))
                .max_by_key(|&(_, a)| a)
                .unwrap();
            let sgn = if p.coord(j) >= 0 { 1 } else { -1 };
            q.set_coord(j, p.coord(j) + sgn);
        }
        if q != p {
            path.push(q);
            p = q;
        }
    }
    Ok(path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityRow {
    #[serde(rename = "N")]
    pub n: u32,
    pub d: usize,
    #[serde(rename = "L")]
    pub l: u32,
    pub embedding_id: u64,
    pub leaf: String,
    pub k: u32,
    pub count: usize,
    pub bound: u64,
    pub pass: bool,
    pub weak_pass: bool,
}

/// Sparsity rows for every leaf and `k` in `1..=k_max`.
pub fn sparsity_rows(t: &ProperEmbedding, id: u64, k_max: u32) -> Result<Vec<SparsityRow>> {
    let mut rows = Vec::new();
    for j in 0..t.leaves().len() {
        for k in 1..=k_max {
            let c = check_sparsity(t, j, k)?;
            rows.push(SparsityRow {
                n: t.n(),
                d: t.d,
                l: t.ladder.l,
                embedding_id: id,
                leaf: t.leaf_index(j).to_string(),
                k,
                count: c.count,
                bound: c.bound,
                pass: c.pass,
                weak_pass: c.weak_pass,
            });
        }
    }
    Ok(rows)
}

pub fn write_sparsity_csv<W: Write>(w: W, rows: &[SparsityRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wtr.write_record(["N", "d", "L", "embedding_id", "leaf", "k", "count", "bound", "pass", "weak_pass"])?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    #[test]
    fn tree_index_round_trip() {
        for i in 0..63 {
            assert_eq!(TreeIndex::from_heap(i).heap(), i);
        }
        assert_eq!(TreeIndex::from_heap(0).to_string(), "");
        assert_eq!(TreeIndex::from_heap(1).to_string(), "1");
        assert_eq!(TreeIndex::from_heap(2).to_string(), "2");
        assert_eq!(TreeIndex::from_heap(5).to_string(), "21");
        assert_eq!(TreeIndex::root().child(1).child(2).heap(), 4);
    }

    #[test]
    fn ladder_scales() {
        let s = ScaleLadder::new(2, 3).unwrap();
        assert_eq!(s.scale(0), 2);
        assert_eq!(s.scale(3), 432);
        assert!(s.on_lattice(&Point::from_slice(&[72, -144, 0]), 2));
        assert!(!s.on_lattice(&Point::from_slice(&[12, 0, 0]), 2));
    }

    #[test]
    fn n0_has_one_embedding() {
        let all: Vec<_> = enumerate_embeddings(0, 3, 2).unwrap().collect();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].nodes, vec![Point::origin(3)]);
        assert_eq!(check_sparsity(&all[0], 0, 3).unwrap().count, 0);
    }

    #[test]
    fn n1_count_matches_closed_form() {
        let e = enumerate_embeddings(1, 3, 2).unwrap();
        assert_eq!(e.count_exact(), 2548);
        let mut seen = std::collections::HashSet::new();
        for t in e {
            assert!(validate_embedding_with(&t, EmbeddingRule::Coarse));
            assert!(validate_embedding(&t));
            seen.insert(t.nodes.clone());
        }
        assert_eq!(seen.len(), 2548);
        assert_eq!(embedding_count(1, 3, EmbeddingRule::Coarse), Some(26 * 98));
        assert!(matches!(enumerate_embeddings(2, 3, 2), Err(Error::GuardExceeded { .. })));
    }

    #[test]
    fn fine_rule_counts_by_brute_force() {
        // children of the root at N=1, d=2: offsets on L Z^2 at distances 6L, 12L
        let ladder = ScaleLadder::new(1, 1).unwrap();
        let (a, b) = child_offsets(&ladder, 2, 0, EmbeddingRule::Fine);
        let brute = |r: i32| {
            let mut c = 0;
            for x in -r..=r {
                for y in -r..=r {
                    c += usize::from(x.abs().max(y.abs()) == r);
                }
            }
            c
        };
        assert_eq!(a.len(), brute(6));
        assert_eq!(b.len(), brute(12));
        assert_eq!(choices_per_node(2, EmbeddingRule::Fine), (a.len() * b.len()) as u128);
    }

    #[test]
    fn validation_catches_each_property() {
        let mut t = enumerate_embeddings(1, 3, 2).unwrap().next().unwrap();
        assert!(validate_embedding(&t));
        let good = t.clone();
        t.nodes[0] = Point::from_slice(&[2, 0, 0]);
        assert!(!validate_embedding(&t));
        let mut t = good.clone();
        t.nodes[1] = Point::from_slice(&[13, 0, 0]);
        assert!(!validate_embedding(&t));
        let mut t = good;
        t.nodes[1] = Point::from_slice(&[12, 2, 0]);
        assert!(validate_embedding(&t));
        assert!(!validate_embedding_with(&t, EmbeddingRule::Coarse));
    }

    #[test]
    fn json_round_trip() {
        let mut rng = SeedStream::new(1).rng(&[0]);
        let t = random_embedding(2, 3, 2, EmbeddingRule::Coarse, &mut rng).unwrap();
        let back = ProperEmbedding::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn pair_sum_matches_brute_force() {
        let mut rng = SeedStream::new(2).rng(&[0]);
        let mut summer = PairSummer::new(3, 1).unwrap();
        for _ in 0..3 {
            let t = random_embedding(2, 3, 1, EmbeddingRule::Coarse, &mut rng).unwrap();
            let fast = summer.leaf_pair_sum(&t).unwrap();
            let slow = pair_sum_brute(&leaf_box_points(&t));
            assert!((fast - slow).abs() < 1e-9 * slow, "{fast} vs {slow}");
        }
    }

    #[test]
    fn neighborhood_count_matches_double_loop() {
        let t = enumerate_embeddings(1, 3, 1).unwrap().nth(700).unwrap();
        let pts = leaf_box_points(&t);
        let c = t.leaves()[0];
        let corner = c + Point::from_slice(&[2, 2, -2]);
        for k in 1..3 {
            let rad = 6i64.pow(k) / 2;
            let brute = pts
                .iter()
                .filter(|v| **v != corner && v.linf_dist(&corner) as i64 <= rad)
                .count() as u64;
            assert_eq!(neighborhood_count(&t, &corner, k).unwrap().count, brute);
        }
        assert!(neighborhood_count(&t, &Point::from_slice(&[100, 0, 0]), 1).is_err());
    }

    #[test]
    fn n0_neighborhood_is_own_box() {
        let t = enumerate_embeddings(0, 3, 2).unwrap().next().unwrap();
        for k in 1..4 {
            let c = neighborhood_count(&t, &Point::from_slice(&[1, -2, 0]), k).unwrap();
            assert!(c.count <= 728);
        }
    }

    #[test]
    fn axis_path_embeds() {
        let (n, l) = (1, 2);
        let top = 6 * l as i32;
        let gamma: Vec<Point> = (top - 1..=2 * top).map(|x| Point::from_slice(&[x, 0, 0])).collect();
        let t = embed_from_path(&gamma, n, l).unwrap();
        assert!(validate_embedding(&t));
        assert!(path_crosses_leaves(&gamma, &t));
        assert_eq!(t.nodes[1], Point::from_slice(&[12, 0, 0]));
        assert_eq!(t.nodes[2], Point::from_slice(&[24, 0, 0]));
    }

    #[test]
    fn offset_path_needs_the_fine_lattice() {
        // runs half a parent cell off the axis: no coarse child is close enough
        let (n, l) = (1, 2);
        let top = 6 * l as i32;
        let gamma: Vec<Point> = (top - 1..=2 * top).map(|x| Point::from_slice(&[x, top / 2, 0])).collect();
        let t = embed_from_path(&gamma, n, l).unwrap();
        assert!(validate_embedding(&t));
        assert!(!validate_embedding_with(&t, EmbeddingRule::Coarse));
    }

    #[test]
    fn n0_path_gives_root() {
        let gamma: Vec<Point> = (1..=4).map(|x| Point::from_slice(&[x, 0, 0])).collect();
        let t = embed_from_path(&gamma, 0, 2).unwrap();
        assert_eq!(t.nodes, vec![Point::origin(3)]);
        assert!(embed_from_path(&gamma[..2], 0, 2).is_err());
    }

    #[test]
    fn constants_are_finite_and_ordered() {
        let k = pair_sum_constants(3, 2).unwrap();
        assert!(k.c > 0.0 && k.c_second > k.c && k.c_prime > k.c_second);
        assert!(pair_sum_constants(2, 2).is_err());
    }

    fn pts(v: &[[i32; 3]]) -> Vec<Point> {
        v.iter().map(|c| Point::from_slice(c)).collect()
    }

    #[test]
    fn strict_sparsity_fails_on_a_valid_embedding() {
        let t = ProperEmbedding {
            ladder: ScaleLadder::new(2, 2).unwrap(),
            d: 3,
            nodes: pts(&[
                [0, 0, 0],
                [72, 0, 72],
                [144, 0, 72],
                [84, 12, 60],
                [84, 12, 96],
                [144, 12, 60],
                [120, -12, 96],
            ]),
        };
        assert!(validate_embedding_with(&t, EmbeddingRule::Coarse));
        assert!(leaf_boxes_disjoint(&t));
        // leaf 22 sees three other boxes within gap 28 <= 36
        let c = check_sparsity(&t, 3, 2).unwrap();
        assert_eq!(t.leaf_index(3).to_string(), "22");
        assert_eq!((c.count, c.bound, c.pass, c.weak_pass), (3, 2, false, true));
        for j in 0..3 {
            let gap = t.leaves()[3].linf_dist(&t.leaves()[j]) - 8;
            assert!(gap <= 36);
        }
    }

    #[test]
    fn neighborhood_bound_fails_next_to_a_sibling() {
        let t = ProperEmbedding {
            ladder: ScaleLadder::new(2, 1).unwrap(),
            d: 3,
            nodes: pts(&[[0, 0, 0], [12, 0, 0], [24, 0, 0]]),
        };
        assert!(validate_embedding_with(&t, EmbeddingRule::Coarse));
        let u = Point::from_slice(&[16, 0, 0]);
        let c = neighborhood_count(&t, &u, 1).unwrap();
        // 7·81 points of the own box plus 3·81 of the sibling's, minus u
        assert_eq!(c.count, 809);
        assert_eq!(c.bound, 729);
        assert!(!c.within_bound);
        // the pair-sum bound that the count feeds into still holds
        let k = pair_sum_constants(3, 2).unwrap();
        let s = PairSummer::new(3, 2).unwrap().leaf_pair_sum(&t).unwrap();
        assert!(s <= 2.0 * k.c_prime);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn random_embeddings_are_proper(seed in any::<u64>(), n in 0u32..4, fine in any::<bool>()) {
                let rule = if fine { EmbeddingRule::Fine } else { EmbeddingRule::Coarse };
                let mut rng = SeedStream::new(seed).rng(&[0]);
                let t = random_embedding(n, 3, 2, rule, &mut rng).unwrap();
                prop_assert!(validate_embedding_with(&t, rule));
                prop_assert!(leaf_boxes_disjoint(&t));
                for (i, p) in t.nodes.iter().enumerate() {
                    let k = depth_of(i);
                    prop_assert!(t.ladder.on_lattice(p, n - k));
                    if k < n {
                        prop_assert!(t.ladder.on_lattice(p, n - k - 1));
                    }
                }
                let c = pair_sum_constants(3, 2).unwrap();
                let s = PairSummer::new(3, 2).unwrap().leaf_pair_sum(&t).unwrap();
                prop_assert!(s <= c.c_prime * 2f64.powi(n as i32));
            }

            #[test]
            fn paths_embed(seed in any::<u64>(), n in 0u32..3, drift in 0.1f64..0.6) {
                let mut rng = SeedStream::new(seed).rng(&[1]);
                let g = random_crossing_path(n, 3, 2, drift, &mut rng).unwrap();
                let t = embed_from_path(&g, n, 2).unwrap();
                prop_assert!(validate_embedding(&t));
                prop_assert!(path_crosses_leaves(&g, &t));
            }
        }
    }
}
