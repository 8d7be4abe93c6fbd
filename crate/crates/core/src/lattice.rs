//! Integer-lattice geometry.
//!
//! Points of `Z^d` are small fixed-capacity values (`d <= MAX_DIM`) so they
//! can be copied and hashed cheaply inside the event loops. The derived
//! [`Ord`] is lexicographic on coordinates and is the well-ordering used
//! for every tie-break in the crate.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

pub const MAX_DIM: usize = 8;

#[derive(Clone, Copy)]
pub struct Point {
    coords: [i32; MAX_DIM],
    dim: u8,
}

impl Point {
    pub fn new(coords: &[i32]) -> Result<Point> {
        let dim = coords.len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        let mut c = [0; MAX_DIM];
        c[..dim].copy_from_slice(coords);
        Ok(Point {
            coords: c,
            dim: dim as u8,
        })
    }

    /// Panicking constructor for literals in tests and examples.
    pub fn from_slice(coords: &[i32]) -> Point {
        Point::new(coords).expect("invalid point literal")
    }

    pub fn origin(dim: usize) -> Point {
        assert!((1..=MAX_DIM).contains(&dim), "unsupported dimension {dim}");
        Point {
            coords: [0; MAX_DIM],
            dim: dim as u8,
        }
    }

    /// The `i`-th unit vector `e_{i+1}`.
    pub fn unit(dim: usize, i: usize) -> Point {
        let mut p = Point::origin(dim);
        p.coords[i] = 1;
        p
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coord(&self, i: usize) -> i32 {
        self.coords[i]
    }

    #[inline]
    pub fn set_coord(&mut self, i: usize, v: i32) {
        debug_assert!(i < self.dim());
        self.coords[i] = v;
    }

    pub fn linf_norm(&self) -> u32 {
        self.coords()
            .iter()
            .map(|c| c.unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    pub fn l1_norm(&self) -> u32 {
        self.coords().iter().map(|c| c.unsigned_abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.coords()
            .iter()
            .map(|&c| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt()
    }

    #[inline]
    pub fn linf_dist(&self, other: &Point) -> u32 {
        debug_assert_eq!(self.dim, other.dim);
        let mut m = 0;
        for i in 0..self.dim() {
            m = m.max(self.coords[i].abs_diff(other.coords[i]));
        }
        m
    }

    pub fn l1_dist(&self, other: &Point) -> u32 {
        (0..self.dim())
            .map(|i| self.coords[i].abs_diff(other.coords[i]))
            .sum()
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: self.dim(),
            });
        }
        Ok(())
    }

    /// Representative of the orbit of `self` under coordinate permutations
    /// and sign flips: absolute values sorted in decreasing order.
    pub fn canonical_abs(&self) -> Point {
        let mut p = *self;
        let d = self.dim();
        for c in &mut p.coords[..d] {
            *c = c.abs();
        }
        p.coords[..d].sort_unstable_by(|a, b| b.cmp(a));
        p
    }
}

impl PartialEq for Point {
    #[inline]
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.coords() == other.coords()
    }
}

impl Eq for Point {}

impl Hash for Point {
    #[inline]
    fn hash<H: Hasher>(&self, state: &mut H) {
        for &c in self.coords() {
            state.write_i32(c);
        }
    }
}

impl Ord for Point {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dim
            .cmp(&other.dim)
            .then_with(|| self.coords().cmp(other.coords()))
    }
}

impl PartialOrd for Point {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Debug for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl Add for Point {
    type Output = Point;
    #[inline]
    fn add(mut self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim() {
            self.coords[i] += rhs.coords[i];
        }
        self
    }
}

impl Sub for Point {
    type Output = Point;
    #[inline]
    fn sub(mut self, rhs: Point) -> Point {
        debug_assert_eq!(self.dim, rhs.dim);
        for i in 0..self.dim() {
            self.coords[i] -= rhs.coords[i];
        }
        self
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(mut self) -> Point {
        for i in 0..self.dim() {
            self.coords[i] = -self.coords[i];
        }
        self
    }
}

impl Mul<i32> for Point {
    type Output = Point;
    fn mul(mut self, k: i32) -> Point {
        for i in 0..self.dim() {
            self.coords[i] *= k;
        }
        self
    }
}

impl Serialize for Point {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.coords().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Point {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Vec::<i32>::deserialize(d)?;
        Point::new(&v).map_err(serde::de::Error::custom)
    }
}

/// Strict comparison under the well-ordering `≺` (lexicographic).
#[inline]
pub fn precedes(a: &Point, b: &Point) -> bool {
    a < b
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L1,
}

/// A ball `{y : |y - center| <= radius}` for the chosen norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: Point,
    pub radius: u32,
    pub norm: Norm,
}

impl BoxSpec {
    pub fn linf(center: Point, radius: u32) -> BoxSpec {
        BoxSpec {
            center,
            radius,
            norm: Norm::Linf,
        }
    }

    pub fn l1(center: Point, radius: u32) -> BoxSpec {
        BoxSpec {
            center,
            radius,
            norm: Norm::L1,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    #[inline]
    pub fn contains(&self, p: &Point) -> bool {
        match self.norm {
            Norm::Linf => self.center.linf_dist(p) <= self.radius,
            Norm::L1 => self.center.l1_dist(p) <= self.radius,
        }
    }

    pub fn cardinality(&self) -> u64 {
        match self.norm {
            Norm::Linf => linf_ball_cardinality(self.radius, self.dim()),
            Norm::L1 => l1_ball_cardinality(self.radius, self.dim()),
        }
    }

    /// All points of the ball in lexicographic order.
    pub fn points(&self) -> Vec<Point> {
        let d = self.dim();
        let r = self.radius as i32;
        let mut out = Vec::new();
        let mut off = Point::origin(d);
        for i in 0..d {
            off.set_coord(i, -r);
        }
        loop {
            let p = self.center + off;
            if self.contains(&p) {
                out.push(p);
            }
            // odometer, last coordinate fastest
            let mut i = d;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if off.coord(i) < r {
                    off.set_coord(i, off.coord(i) + 1);
                    break;
                }
                off.set_coord(i, -r);
            }
        }
    }
}

/// `|B_∞(L)| = (2L+1)^d`. The box `B(0, 2L)` therefore has `(4L+1)^d` sites.
pub fn linf_ball_cardinality(radius: u32, d: usize) -> u64 {
    (2 * radius as u64 + 1).pow(d as u32)
}

/// `|B_1(R)| = Σ_k 2^k C(d,k) C(R,k)`.
pub fn l1_ball_cardinality(radius: u32, d: usize) -> u64 {
    let r = radius as u64;
    let mut total = 0u64;
    for k in 0..=(d as u64).min(r) {
        total += (1u64 << k) * binomial(d as u64, k) * binomial(r, k);
    }
    total
}

fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as u64
}

/// Points of the ℓ1 ball of radius `radius` around `center`. Radius zero is
/// rejected because the ball is used as a jump-destination set.
pub fn l1_ball(center: Point, radius: u32) -> Result<Vec<Point>> {
    if radius == 0 {
        return Err(invalid("R", "jump range must be at least 1"));
    }
    Ok(BoxSpec::l1(center, radius).points())
}

pub fn linf_norm(x: &Point) -> u32 {
    x.linf_norm()
}

/// ℓ∞ distance between the boxes `B(a, ra)` and `B(b, rb)`.
pub fn box_distance(a: &Point, ra: u32, b: &Point, rb: u32) -> u32 {
    a.linf_dist(b).saturating_sub(ra + rb)
}
