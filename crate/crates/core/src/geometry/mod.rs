//! Planar geometry on longitude/latitude degrees: polygons, the triangulated
//! mesh, finite-element matrices, barycentric projection and region lookup.

mod fem;
mod mesh;
mod regions;

pub use fem::{assemble_fem, FemMatrices};
pub use mesh::{build_mesh, Mesh, MeshOptions, Projector};
pub use regions::{Region, RegionSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub lon: f64,
    pub lat: f64,
}

impl Point {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    /// Validated constructor enforcing the geographic coordinate ranges.
    pub fn geographic(lon: f64, lat: f64) -> Result<Self> {
        if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
            return Err(Error::invalid(format!(
                "coordinate ({lon}, {lat}) outside [-180,180]x[-90,90]"
            )));
        }
        Ok(Self { lon, lat })
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.lon - other.lon).hypot(self.lat - other.lat)
    }

    pub fn midpoint(&self, other: &Point) -> Point {
        Point::new(0.5 * (self.lon + other.lon), 0.5 * (self.lat + other.lat))
    }
}

/// Twice the signed area of the triangle `a, b, c` (positive when counter-clockwise).
pub(crate) fn cross(a: &Point, b: &Point, c: &Point) -> f64 {
    (b.lon - a.lon) * (c.lat - a.lat) - (b.lat - a.lat) * (c.lon - a.lon)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Point,
    pub max: Point,
}

impl BoundingBox {
    pub fn of<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let mut bb = BoundingBox {
            min: first,
            max: first,
        };
        for p in it {
            bb.include(p);
        }
        Some(bb)
    }

    pub fn include(&mut self, p: &Point) {
        self.min.lon = self.min.lon.min(p.lon);
        self.min.lat = self.min.lat.min(p.lat);
        self.max.lon = self.max.lon.max(p.lon);
        self.max.lat = self.max.lat.max(p.lat);
    }

    pub fn width(&self) -> f64 {
        self.max.lon - self.min.lon
    }

    pub fn height(&self) -> f64 {
        self.max.lat - self.min.lat
    }

    pub fn diameter(&self) -> f64 {
        self.width().hypot(self.height())
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn expanded(&self, margin: f64) -> Self {
        BoundingBox {
            min: Point::new(self.min.lon - margin, self.min.lat - margin),
            max: Point::new(self.max.lon + margin, self.max.lat + margin),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.lon >= self.min.lon && p.lon <= self.max.lon && p.lat >= self.min.lat && p.lat <= self.max.lat
    }

    /// Corners in counter-clockwise order starting at the lower left.
    pub fn corners(&self) -> [Point; 4] {
        [
            self.min,
            Point::new(self.max.lon, self.min.lat),
            self.max,
            Point::new(self.min.lon, self.max.lat),
        ]
    }
}

/// Polygon made of one or more closed rings, evaluated with the even-odd rule
/// so holes and multi-part regions need no special handling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    rings: Vec<Vec<Point>>,
}

impl Polygon {
    /// Single-ring polygon. A repeated closing vertex is dropped.
    pub fn new(ring: Vec<Point>) -> Result<Self> {
        Self::with_rings(vec![ring])
    }

    pub fn with_rings(rings: Vec<Vec<Point>>) -> Result<Self> {
        let mut out = Vec::with_capacity(rings.len());
        for mut ring in rings {
            if ring.len() > 1 && ring.first() == ring.last() {
                ring.pop();
            }
            if ring.len() < 3 {
                return Err(Error::invalid("polygon ring needs at least 3 distinct vertices"));
            }
            if ring.iter().any(|p| !p.lon.is_finite() || !p.lat.is_finite()) {
                return Err(Error::invalid("polygon has non-finite coordinates"));
            }
            out.push(ring);
        }
        if out.is_empty() {
            return Err(Error::invalid("polygon has no rings"));
        }
        Ok(Self { rings: out })
    }

    pub fn rectangle(min: Point, max: Point) -> Self {
        let bb = BoundingBox { min, max };
        Self {
            rings: vec![bb.corners().to_vec()],
        }
    }

    pub fn rings(&self) -> &[Vec<Point>] {
        &self.rings
    }

    pub fn bbox(&self) -> BoundingBox {
        BoundingBox::of(self.rings.iter().flatten()).expect("rings are non-empty")
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.rings
            .iter()
            .flat_map(|r| (0..r.len()).map(move |i| (r[i], r[(i + 1) % r.len()])))
    }

    /// Area by the shoelace formula; holes must be oriented opposite to
    /// their enclosing ring.
    pub fn area(&self) -> f64 {
        self.rings
            .iter()
            .map(|r| {
                0.5 * (0..r.len())
                    .map(|i| {
                        let (a, b) = (r[i], r[(i + 1) % r.len()]);
                        a.lon * b.lat - b.lon * a.lat
                    })
                    .sum::<f64>()
            })
            .sum::<f64>()
            .abs()
    }

    /// True when `p` lies on an edge, within a tolerance scaled to the edge length.
    pub fn on_boundary(&self, p: &Point) -> bool {
        self.edges().any(|(a, b)| on_segment(&a, &b, p))
    }

    /// Even-odd containment; points on the boundary count as inside.
    pub fn contains(&self, p: &Point) -> bool {
        if self.on_boundary(p) {
            return true;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.lat > p.lat) != (b.lat > p.lat) {
                let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
                if p.lon < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn on_segment(a: &Point, b: &Point, p: &Point) -> bool {
    let len = a.distance(b);
    let tol = 1e-12 * (1.0 + len + a.lon.abs().max(a.lat.abs()));
    if cross(a, b, p).abs() > tol * len.max(1e-300) {
        return false;
    }
    p.lon >= a.lon.min(b.lon) - tol
        && p.lon <= a.lon.max(b.lon) + tol
        && p.lat >= a.lat.min(b.lat) - tol
        && p.lat <= a.lat.max(b.lat) + tol
}

/// Convex hull (counter-clockwise, collinear points dropped). Returns fewer than
/// three points when the input is degenerate.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.lon.total_cmp(&b.lon).then(a.lat.total_cmp(&b.lat)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let scale = BoundingBox::of(&pts).map_or(1.0, |b| b.diameter().max(1e-300));
    let eps = 1e-12 * scale * scale;
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= eps {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}
