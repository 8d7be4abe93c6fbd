//! Clusters, crossings, the special-cluster event `E_M` and coarse
//! graining of {0,1} fields.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{FieldSample, Provenance, Window};
use crate::lattice::{Point, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adjacency {
    /// `|x - y|_1 = 1`.
    NearestNeighbor,
    /// `|x - y|_∞ = 1`.
    Star,
}

impl fmt::Display for Adjacency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Adjacency::NearestNeighbor => "nn",
            Adjacency::Star => "star",
        })
    }
}

impl Adjacency {
    /// All neighbor offsets.
    pub fn offsets(&self, d: usize) -> Vec<Point> {
        match self {
            Adjacency::NearestNeighbor => (0..d)
                .flat_map(|i| {
                    let e = Point::unit(d, i);
                    [e, -e]
                })
                .collect(),
            Adjacency::Star => {
                let mut out = Vec::with_capacity(3usize.pow(d as u32) - 1);
                let mut c = [-1i32; MAX_DIM];
                loop {
                    let p = Point::from_slice(&c[..d]);
                    if p.linf_norm() != 0 {
                        out.push(p);
                    }
                    let mut i = d;
                    loop {
                        if i == 0 {
                            return out;
                        }
                        i -= 1;
                        if c[i] < 1 {
                            c[i] += 1;
                            break;
                        }
                        c[i] = -1;
                    }
                }
            }
        }
    }

    /// Offsets that are lexicographically positive; one per neighbor pair.
    pub fn forward_offsets(&self, d: usize) -> Vec<Point> {
        let origin = Point::origin(d);
        self.offsets(d)
            .into_iter()
            .filter(|p| *p > origin)
            .collect()
    }

    pub fn are_neighbors(&self, a: &Point, b: &Point) -> bool {
        match self {
            Adjacency::NearestNeighbor => a.l1_dist(b) == 1,
            Adjacency::Star => a.linf_dist(b) == 1,
        }
    }
}

/// Union-find with path halving and union by size.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl UnionFind {
    pub fn new(n: usize) -> UnionFind {
        UnionFind {
            parent: (0..n as u32).collect(),
            size: vec![1; n],
        }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    #[inline]
    pub fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] as usize != i {
            let g = self.parent[self.parent[i] as usize];
            self.parent[i] = g;
            i = g as usize;
        }
        i
    }

    /// Returns the new root.
    #[inline]
    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        let (big, small) = if self.size[ra] >= self.size[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small] = big as u32;
        self.size[big] += self.size[small];
        big
    }

    pub fn same(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }

    pub fn size_of(&mut self, i: usize) -> usize {
        let r = self.find(i);
        self.size[r] as usize
    }
}

pub const NO_CLUSTER: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterStats {
    pub size: usize,
    /// Coordinatewise minimum and maximum over the cluster.
    pub lo: Point,
    pub hi: Point,
}

impl ClusterStats {
    /// ℓ∞ diameter, `max_i (hi_i - lo_i)`.
    pub fn diameter(&self) -> u32 {
        (0..self.lo.dim())
            .map(|i| (self.hi.coord(i) - self.lo.coord(i)) as u32)
            .max()
            .unwrap_or(0)
    }

    /// Touches every face `{x_i = c_i ± r}` of `B(c, r)`.
    pub fn touches_all_faces(&self, center: &Point, radius: u32) -> bool {
        let r = radius as i32;
        (0..center.dim()).all(|i| {
            self.lo.coord(i) == center.coord(i) - r && self.hi.coord(i) == center.coord(i) + r
        })
    }
}

/// Connected components of the sites with a given value.
#[derive(Clone, Debug)]
pub struct ClusterLabeling {
    pub window: Arc<Window>,
    pub adjacency: Adjacency,
    pub value: u8,
    /// Cluster id per site, [`NO_CLUSTER`] for sites of the other value.
    /// Ids are assigned in order of each cluster's first site.
    pub labels: Vec<u32>,
    pub clusters: Vec<ClusterStats>,
}

impl ClusterLabeling {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    pub fn cluster_of(&self, p: &Point) -> Option<u32> {
        let i = self.window.index_of(p)?;
        (self.labels[i] != NO_CLUSTER).then_some(self.labels[i])
    }

    pub fn max_size(&self) -> usize {
        self.clusters.iter().map(|c| c.size).max().unwrap_or(0)
    }

    pub fn members(&self, id: u32) -> Vec<Point> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == id)
            .map(|(i, _)| self.window.point(i))
            .collect()
    }
}

/// Open clusters of `xi`.
pub fn label_clusters(xi: &FieldSample, adjacency: Adjacency) -> ClusterLabeling {
    label_clusters_of(xi, adjacency, 1)
}

/// Clusters of the sites where `xi == value`.
pub fn label_clusters_of(xi: &FieldSample, adjacency: Adjacency, value: u8) -> ClusterLabeling {
    let w = &xi.window;
    let n = w.len();
    let d = w.dim();
    let fwd = adjacency.forward_offsets(d);
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        if xi.values[i] != value {
            continue;
        }
        let p = w.point(i);
        for off in &fwd {
            if let Some(j) = w.index_of(&(p + *off)) {
                if xi.values[j] == value {
                    uf.union(i, j);
                }
            }
        }
    }
    let mut root_id = vec![NO_CLUSTER; n];
    let mut labels = vec![NO_CLUSTER; n];
    let mut clusters: Vec<ClusterStats> = Vec::new();
    for i in 0..n {
        if xi.values[i] != value {
            continue;
        }
        let r = uf.find(i);
        let p = w.point(i);
        if root_id[r] == NO_CLUSTER {
            root_id[r] = clusters.len() as u32;
            clusters.push(ClusterStats {
                size: 0,
                lo: p,
                hi: p,
            });
        }
        let id = root_id[r];
        labels[i] = id;
        let c = &mut clusters[id as usize];
        c.size += 1;
        for k in 0..d {
            c.lo.set_coord(k, c.lo.coord(k).min(p.coord(k)));
            c.hi.set_coord(k, c.hi.coord(k).max(p.coord(k)));
        }
    }
    ClusterLabeling {
        window: w.clone(),
        adjacency,
        value,
        labels,
        clusters,
    }
}

/// A region of `Z^d` for crossing queries.
#[derive(Clone, Debug, PartialEq)]
pub enum Region {
    /// `B(center, radius)` in ℓ∞.
    Ball {
        center: Point,
        radius: u32,
    },
    /// The complement of `B(center, radius)`.
    Outside {
        center: Point,
        radius: u32,
    },
    Points(Vec<Point>),
}

impl Region {
    pub fn contains(&self, p: &Point) -> bool {
        match self {
            Region::Ball { center, radius } => p.linf_dist(center) <= *radius,
            Region::Outside { center, radius } => p.linf_dist(center) > *radius,
            Region::Points(v) => v.contains(p),
        }
    }

    /// Whether `p` is a neighbor of some point of the region.
    pub fn is_neighbor(&self, p: &Point, adjacency: Adjacency) -> bool {
        adjacency
            .offsets(p.dim())
            .iter()
            .any(|off| self.contains(&(*p + *off)))
    }

    fn overlaps(&self, other: &Region) -> bool {
        use Region::*;
        match (self, other) {
            (
                Ball {
                    center: a,
                    radius: ra,
                },
                Ball {
                    center: b,
                    radius: rb,
                },
            ) => a.linf_dist(b) <= ra + rb,
            (
                Ball {
                    center: a,
                    radius: ra,
                },
                Outside {
                    center: b,
                    radius: rb,
                },
            )
            | (
                Outside {
                    center: b,
                    radius: rb,
                },
                Ball {
                    center: a,
                    radius: ra,
                },
            ) => a.linf_dist(b) + ra > *rb,
            (Outside { .. }, Outside { .. }) => true,
            (Points(v), r) | (r, Points(v)) => v.iter().any(|p| r.contains(p)),
        }
    }
}

/// `inner ↔ outer` through sites of value `polarity`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossingQuery {
    pub inner: Region,
    pub outer: Region,
    pub adjacency: Adjacency,
    pub polarity: u8,
}

impl CrossingQuery {
    /// `B(c, r_in) ↔ B(c, r_out)^c` for open sites.
    pub fn annulus(center: Point, r_in: u32, r_out: u32, adjacency: Adjacency) -> CrossingQuery {
        CrossingQuery {
            inner: Region::Ball {
                center,
                radius: r_in,
            },
            outer: Region::Outside {
                center,
                radius: r_out,
            },
            adjacency,
            polarity: 1,
        }
    }
}

/// Whether a path of sites with value `q.polarity`, consecutive sites
/// adjacent under `q.adjacency`, runs inside the window from a neighbor of
/// a point of the inner region to a neighbor of a point of the outer one.
pub fn crossing(xi: &FieldSample, q: &CrossingQuery) -> Result<bool> {
    if q.inner.overlaps(&q.outer) {
        return Err(Error::OverlappingRegions);
    }
    let lab = label_clusters_of(xi, q.adjacency, q.polarity);
    let mut starts = vec![false; lab.n_clusters()];
    let w = &xi.window;
    for (i, &l) in lab.labels.iter().enumerate() {
        if l != NO_CLUSTER && q.inner.is_neighbor(&w.point(i), q.adjacency) {
            starts[l as usize] = true;
        }
    }
    for (i, &l) in lab.labels.iter().enumerate() {
        if l != NO_CLUSTER && starts[l as usize] && q.outer.is_neighbor(&w.point(i), q.adjacency) {
            return Ok(true);
        }
    }
    Ok(false)
}

/// `E_M` on `B(center, M)`: exactly one open nearest-neighbor cluster of
/// ℓ∞ diameter at least `M`, touching all `2d` faces. Returns the special
/// cluster's sites when the event holds.
pub fn detect_em(xi: &FieldSample, center: Point, m: u32) -> Result<Option<Vec<Point>>> {
    if m == 0 {
        return Err(invalid("M", "must be positive"));
    }
    let local = xi.restrict_cube(center, m)?;
    let lab = label_clusters(&local, Adjacency::NearestNeighbor);
    let mut big = lab
        .clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| c.diameter() >= m);
    let (Some((id, c)), None) = (big.next(), big.next()) else {
        return Ok(None);
    };
    if !c.touches_all_faces(&center, m) {
        return Ok(None);
    }
    Ok(Some(lab.members(id as u32)))
}

pub fn holds_em(xi: &FieldSample, center: Point, m: u32) -> Result<bool> {
    Ok(detect_em(xi, center, m)?.is_some())
}

/// `ξ̃(x) = 1[θ_{Mx} E_M]` for every `x` in `sites`.
pub fn coarse_grain(xi: &FieldSample, m: u32, sites: &[Point]) -> Result<FieldSample> {
    let window = Arc::new(Window::from_points(sites.iter().copied())?);
    let mut values = Vec::with_capacity(window.len());
    for x in window.points() {
        let c = *x * m as i32;
        if !xi.window.contains_box(&c, m) {
            return Err(Error::InsufficientCoverage(format!(
                "B({c}, {m}) is not inside the field's window"
            )));
        }
        values.push(u8::from(holds_em(xi, c, m)?));
    }
    let mut prov = Provenance::new(
        format!("coarse_grain(M={m})<{}>", xi.provenance.sampler),
        xi.dim(),
        xi.provenance.seed,
    );
    prov.range = xi.provenance.range;
    prov.alpha = xi.provenance.alpha;
    FieldSample::new(window, values, prov)
}

/// Coarse lattice sites `x` with `B(Mx, M)` inside the window.
pub fn coarse_sites(window: &Window, m: u32) -> Vec<Point> {
    let mi = m as i32;
    let Some((c, r)) = window.as_cube() else {
        return window
            .points()
            .iter()
            .filter(|p| p.coords().iter().all(|v| v % mi == 0))
            .map(|p| Point::from_slice(&p.coords().iter().map(|v| v / mi).collect::<Vec<_>>()))
            .filter(|x| window.contains_box(&(*x * mi), m))
            .collect();
    };
    let d = c.dim();
    let r = r as i32;
    let lo: Vec<i32> = (0..d)
        .map(|i| (c.coord(i) - r + mi).div_ceil_signed(mi))
        .collect();
    let hi: Vec<i32> = (0..d)
        .map(|i| (c.coord(i) + r - mi).div_euclid(mi))
        .collect();
    if lo.iter().zip(&hi).any(|(a, b)| a > b) {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut cur = lo.clone();
    loop {
        out.push(Point::from_slice(&cur));
        let mut i = d;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if cur[i] < hi[i] {
                cur[i] += 1;
                break;
            }
            cur[i] = lo[i];
        }
    }
}

trait DivCeil {
    fn div_ceil_signed(self, m: i32) -> i32;
}

impl DivCeil for i32 {
    fn div_ceil_signed(self, m: i32) -> i32 {
        -((-self).div_euclid(m))
    }
}

/// Whether the special clusters of `B(Mx, M)` and `B(My, M)` share a site.
pub fn special_clusters_intersect(
    xi: &FieldSample,
    m: u32,
    x: &Point,
    y: &Point,
) -> Result<Option<bool>> {
    let a = detect_em(xi, *x * m as i32, m)?;
    let b = detect_em(xi, *y * m as i32, m)?;
    Ok(match (a, b) {
        (Some(a), Some(b)) => Some(a.iter().any(|p| b.contains(p))),
        _ => None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStatsRow {
    pub field_id: u64,
    pub adjacency: Adjacency,
    pub n_clusters: usize,
    pub max_size: usize,
    pub spans_faces: bool,
}

impl ClusterStatsRow {
    pub fn from_labeling(field_id: u64, lab: &ClusterLabeling) -> ClusterStatsRow {
        let spans = match lab.window.as_cube() {
            Some((c, r)) => lab.clusters.iter().any(|k| k.touches_all_faces(&c, r)),
            None => false,
        };
        ClusterStatsRow {
            field_id,
            adjacency: lab.adjacency,
            n_clusters: lab.n_clusters(),
            max_size: lab.max_size(),
            spans_faces: spans,
        }
    }
}

pub fn write_cluster_stats_csv<W: Write>(w: W, rows: &[ClusterStatsRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wtr.write_record([
            "field_id",
            "adjacency",
            "n_clusters",
            "max_size",
            "spans_faces",
        ])?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
