//! Finite windows of `Z^d` and {0,1}-valued configurations on them.

use std::sync::Arc;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::lattice::{BoxSpec, Point};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug)]
enum Lookup {
    Cube {
        center: Point,
        radius: u32,
        side: i64,
    },
    Scattered(FxHashMap<Point, u32>),
}

/// A finite set of lattice points in lexicographic order, with O(1)
/// point-to-index lookup. Cubes (ℓ∞ balls) index arithmetically.
#[derive(Clone, Debug)]
pub struct Window {
    dim: usize,
    points: Vec<Point>,
    lookup: Lookup,
}

impl Window {
    pub fn cube(center: Point, radius: u32) -> Window {
        let points = BoxSpec::linf(center, radius).points();
        Window {
            dim: center.dim(),
            points,
            lookup: Lookup::Cube {
                center,
                radius,
                side: 2 * radius as i64 + 1,
            },
        }
    }

    pub fn from_points<I: IntoIterator<Item = Point>>(points: I) -> Result<Window> {
        let mut points: Vec<Point> = points.into_iter().collect();
        let Some(first) = points.first() else {
            return Err(invalid("window", "empty point set"));
        };
        let dim = first.dim();
        for p in &points {
            p.check_dim(dim)?;
        }
        points.sort_unstable();
        points.dedup();
        let map = points
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, i as u32))
            .collect();
        Ok(Window {
            dim,
            points,
            lookup: Lookup::Scattered(map),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    /// `(center, radius)` when the window is an ℓ∞ cube.
    pub fn as_cube(&self) -> Option<(Point, u32)> {
        match &self.lookup {
            Lookup::Cube { center, radius, .. } => Some((*center, *radius)),
            Lookup::Scattered(_) => None,
        }
    }

    #[inline]
    pub fn index_of(&self, p: &Point) -> Option<usize> {
        match &self.lookup {
            Lookup::Cube {
                center,
                radius,
                side,
            } => {
                if p.dim() != self.dim {
                    return None;
                }
                let r = *radius as i64;
                let mut idx: i64 = 0;
                for i in 0..self.dim {
                    let off = (p.coord(i) - center.coord(i)) as i64 + r;
                    if off < 0 || off >= *side {
                        return None;
                    }
                    idx = idx * side + off;
                }
                Some(idx as usize)
            }
            Lookup::Scattered(map) => map.get(p).map(|&i| i as usize),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.index_of(p).is_some()
    }

    pub fn contains_box(&self, center: &Point, radius: u32) -> bool {
        match &self.lookup {
            Lookup::Cube {
                center: c,
                radius: r,
                ..
            } => c.linf_dist(center) + radius <= *r,
            Lookup::Scattered(_) => BoxSpec::linf(*center, radius)
                .points()
                .iter()
                .all(|p| self.contains(p)),
        }
    }

    /// The window `self + x`; point order is preserved.
    pub fn translate(&self, x: &Point) -> Window {
        let points: Vec<Point> = self.points.iter().map(|p| *p + *x).collect();
        let lookup = match &self.lookup {
            Lookup::Cube {
                center,
                radius,
                side,
            } => Lookup::Cube {
                center: *center + *x,
                radius: *radius,
                side: *side,
            },
            Lookup::Scattered(_) => Lookup::Scattered(
                points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (*p, i as u32))
                    .collect(),
            ),
        };
        Window {
            dim: self.dim,
            points,
            lookup,
        }
    }

    /// Per-coordinate `(min, max)` over the window.
    pub fn bounds(&self) -> (Point, Point) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points {
            for i in 0..self.dim {
                lo.set_coord(i, lo.coord(i).min(p.coord(i)));
                hi.set_coord(i, hi.coord(i).max(p.coord(i)));
            }
        }
        (lo, hi)
    }
}

/// Where a sample came from; enough to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sampler: String,
    pub d: usize,
    #[serde(rename = "R", skip_serializing_if = "Option::is_none", default)]
    pub range: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eps_stop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stop_reason: Option<String>,
}

impl Provenance {
    pub fn new(sampler: impl Into<String>, d: usize, seed: u64) -> Provenance {
        Provenance {
            sampler: sampler.into(),
            d,
            range: None,
            alpha: None,
            seed,
            eps_stop: None,
            t: None,
            stop_reason: None,
        }
    }
}

/// A {0,1} configuration defined exactly on its window.
#[derive(Clone, Debug)]
pub struct FieldSample {
    pub window: Arc<Window>,
    pub values: Vec<u8>,
    pub provenance: Provenance,
}

impl FieldSample {
    pub fn new(window: Arc<Window>, values: Vec<u8>, provenance: Provenance) -> Result<Self> {
        if values.len() != window.len() {
            return Err(invalid(
                "values",
                format!("{} values for a window of {}", values.len(), window.len()),
            ));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(invalid("values", "entries must be 0 or 1"));
        }
        Ok(FieldSample {
            window,
            values,
            provenance,
        })
    }

    pub fn constant(window: Arc<Window>, value: u8, provenance: Provenance) -> FieldSample {
        let values = vec![value; window.len()];
        FieldSample {
            window,
            values,
            provenance,
        }
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    #[inline]
    pub fn get(&self, p: &Point) -> Option<u8> {
        self.window.index_of(p).map(|i| self.values[i])
    }

    pub fn value(&self, p: &Point) -> Result<u8> {
        self.get(p)
            .ok_or_else(|| Error::OutsideWindow(p.to_string()))
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    /// Restriction to the cube `B(center, radius)`, which must lie inside
    /// the window.
    pub fn restrict_cube(&self, center: Point, radius: u32) -> Result<FieldSample> {
        if !self.window.contains_box(&center, radius) {
            return Err(Error::InsufficientCoverage(format!(
                "B({center}, {radius}) not inside the window"
            )));
        }
        let sub = Window::cube(center, radius);
        let values = sub
            .points()
            .iter()
            .map(|p| self.values[self.window.index_of(p).unwrap()])
            .collect();
        Ok(FieldSample {
            window: Arc::new(sub),
            values,
            provenance: self.provenance.clone(),
        })
    }

    /// Flip 0 ↔ 1.
    pub fn complement(&self) -> FieldSample {
        FieldSample {
            window: self.window.clone(),
            values: self.values.iter().map(|v| 1 - v).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// `(τ_x ξ)(y) = ξ(y - x)`: the window moves along with the configuration.
pub fn shift_config(xi: &FieldSample, x: &Point) -> Result<FieldSample> {
    x.check_dim(xi.dim())?;
    Ok(FieldSample {
        window: Arc::new(xi.window.translate(x)),
        values: xi.values.clone(),
        provenance: xi.provenance.clone(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum WindowJson {
    Cube { center: Point, radius: u32 },
    Points { points: Vec<Point> },
}

#[derive(Debug, Serialize, Deserialize)]
struct FieldSampleJson {
    schema_version: u32,
    generator: String,
    provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    config: Option<serde_json::Value>,
    window: WindowJson,
    n_sites: usize,
    /// `[value, run_length]` pairs in window order.
    values_rle: Vec<[u32; 2]>,
}

fn run_length_encode(values: &[u8]) -> Vec<[u32; 2]> {
    let mut out: Vec<[u32; 2]> = Vec::new();
    for &v in values {
        match out.last_mut() {
            Some(run) if run[0] == v as u32 => run[1] += 1,
            _ => out.push([v as u32, 1]),
        }
    }
    out
}

impl FieldSample {
    /// JSON with a provenance header and run-length-encoded values.
    /// `config` is echoed verbatim when given.
    pub fn to_json(&self, config: Option<serde_json::Value>) -> Result<String> {
        let window = match self.window.as_cube() {
            Some((center, radius)) => WindowJson::Cube { center, radius },
            None => WindowJson::Points {
                points: self.window.points().to_vec(),
            },
        };
        let doc = FieldSampleJson {
            schema_version: SCHEMA_VERSION,
            generator: concat!("spreadvote ", env!("CARGO_PKG_VERSION")).to_string(),
            provenance: self.provenance.clone(),
            config,
            window,
            n_sites: self.window.len(),
            values_rle: run_length_encode(&self.values),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<FieldSample> {
        let doc: FieldSampleJson = serde_json::from_str(text)?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "unsupported schema_version {}",
                doc.schema_version
            )));
        }
        let window = match doc.window {
            WindowJson::Cube { center, radius } => Window::cube(center, radius),
            WindowJson::Points { points } => Window::from_points(points)?,
        };
        let mut values = Vec::with_capacity(window.len());
        for [v, n] in doc.values_rle {
            if v > 1 {
                return Err(Error::Parse(format!("value {v} is not 0/1")));
            }
            values.extend(std::iter::repeat(v as u8).take(n as usize));
        }
        if values.len() != doc.n_sites || values.len() != window.len() {
            return Err(Error::Parse("run lengths do not cover the window".into()));
        }
        FieldSample::new(Arc::new(window), values, doc.provenance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(c: &[i32]) -> Point {
        Point::from_slice(c)
    }

    fn indicator(window: Window, z: Point) -> FieldSample {
        let values = window.points().iter().map(|q| u8::from(*q == z)).collect();
        FieldSample::new(Arc::new(window), values, Provenance::new("test", 3, 0)).unwrap()
    }

    #[test]
    fn cube_index_matches_point_order() {
        let w = Window::cube(p(&[1, 2, -1]), 2);
        for (i, q) in w.points().iter().enumerate() {
            assert_eq!(w.index_of(q), Some(i));
        }
        assert_eq!(w.index_of(&p(&[4, 2, -1])), None);
    }

    #[test]
    fn shift_examples() {
        let xi = indicator(Window::cube(Point::origin(3), 2), p(&[1, 0, 0]));
        let same = shift_config(&xi, &Point::origin(3)).unwrap();
        assert_eq!(same.values, xi.values);
        assert_eq!(same.window.points(), xi.window.points());

        let x = p(&[2, -1, 3]);
        let moved = shift_config(&xi, &x).unwrap();
        assert_eq!(moved.get(&(p(&[1, 0, 0]) + x)), Some(1));
        assert_eq!(moved.count_ones(), 1);

        let back = shift_config(&moved, &-x).unwrap();
        assert_eq!(back.window.points(), xi.window.points());
        assert_eq!(back.values, xi.values);
    }

    #[test]
    fn json_round_trip() {
        let w = Window::from_points([p(&[0, 0]), p(&[3, 1]), p(&[-2, 5])]).unwrap();
        let xi = FieldSample::new(Arc::new(w), vec![1, 0, 1], Provenance::new("x", 2, 9)).unwrap();
        let back = FieldSample::from_json(&xi.to_json(None).unwrap()).unwrap();
        assert_eq!(back.values, xi.values);
        assert_eq!(back.window.points(), xi.window.points());
        assert_eq!(back.provenance, xi.provenance);
    }

    proptest! {
        #[test]
        fn shifts_compose(bits in prop::collection::vec(0u8..2, 27),
                          a in prop::array::uniform3(-5i32..5),
                          b in prop::array::uniform3(-5i32..5)) {
            let w = Arc::new(Window::cube(Point::origin(3), 1));
            let xi = FieldSample::new(w, bits, Provenance::new("t", 3, 0)).unwrap();
            let (x, y) = (p(&a), p(&b));
            let two = shift_config(&shift_config(&xi, &x).unwrap(), &y).unwrap();
            let one = shift_config(&xi, &(x + y)).unwrap();
            prop_assert_eq!(two.window.points(), one.window.points());
            prop_assert_eq!(&two.values, &one.values);
            for q in one.window.points() {
                prop_assert_eq!(one.get(q), xi.get(&(*q - (x + y))));
            }
        }

        #[test]
        fn rle_round_trip(bits in prop::collection::vec(0u8..2, 1..200)) {
            let n = bits.len() as i32;
            let pts: Vec<Point> = (0..n).map(|i| p(&[i])).collect();
            let w = Arc::new(Window::from_points(pts).unwrap());
            let xi = FieldSample::new(w, bits, Provenance::new("t", 1, 0)).unwrap();
            let back = FieldSample::from_json(&xi.to_json(None).unwrap()).unwrap();
            prop_assert_eq!(back.values, xi.values);
        }
    }
}
