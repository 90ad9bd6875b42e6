use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use super::{convex_hull, cross, BoundingBox, Point, Polygon};
use crate::error::{Error, Result};
use crate::sparse::CscMatrix;

const MAX_VERTICES: usize = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshOptions {
    /// Longest edge allowed inside the boundary, in degrees.
    pub max_edge: f64,
    /// Minimum spacing between data points kept as mesh vertices. Defaults to
    /// half of `max_edge` when unset.
    pub cutoff: Option<f64>,
    /// Width of the outer extension band as a fraction of the domain diameter.
    pub extension: f64,
    /// Edge-length multiplier applied outside the boundary.
    pub outer_factor: f64,
}

impl Default for MeshOptions {
    fn default() -> Self {
        Self {
            max_edge: 0.5,
            cutoff: None,
            extension: 0.2,
            outer_factor: 2.0,
        }
    }
}

impl MeshOptions {
    pub fn with_max_edge(max_edge: f64) -> Self {
        Self {
            max_edge,
            ..Self::default()
        }
    }
}

/// Triangulation of the study domain plus an outer extension band.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "MeshData", into = "MeshData")]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Polygon,
    locator: TriangleLocator,
}

#[derive(Serialize, Deserialize)]
struct MeshData {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    boundary: Polygon,
}

impl From<MeshData> for Mesh {
    fn from(d: MeshData) -> Self {
        let locator = TriangleLocator::new(&d.vertices, &d.triangles);
        Mesh {
            vertices: d.vertices,
            triangles: d.triangles,
            boundary: d.boundary,
            locator,
        }
    }
}

impl From<Mesh> for MeshData {
    fn from(m: Mesh) -> Self {
        MeshData {
            vertices: m.vertices,
            triangles: m.triangles,
            boundary: m.boundary,
        }
    }
}

impl Mesh {
    /// Builds a mesh from explicit vertices and counter-clockwise triangles.
    pub fn from_parts(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, boundary: Polygon) -> Result<Self> {
        for (index, t) in triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Mesh(format!("triangle {index} references a missing vertex")));
            }
            let area = 0.5 * cross(&vertices[t[0]], &vertices[t[1]], &vertices[t[2]]);
            if !(area > 0.0) {
                return Err(Error::DegenerateTriangle { index, area });
            }
        }
        Ok(MeshData {
            vertices,
            triangles,
            boundary,
        }
        .into())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary(&self) -> &Polygon {
        &self.boundary
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        0.5 * cross(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    /// Unique undirected edges as sorted vertex pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| (0..3).map(move |k| (t[k].min(t[(k + 1) % 3]), t[k].max(t[(k + 1) % 3]))))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Containing triangle and barycentric weights, or `None` outside the mesh.
    pub fn locate(&self, p: &Point) -> Option<(usize, [f64; 3])> {
        self.locator.locate(&self.vertices, &self.triangles, p)
    }

    /// Barycentric projection of `points` onto the mesh basis functions.
    pub fn project(&self, points: &[Point]) -> Projector {
        let mut rows = Vec::with_capacity(3 * points.len());
        let mut inside = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            match self.locate(p) {
                Some((t, w)) => {
                    inside.push(true);
                    for (&v, &wk) in self.triangles[t].iter().zip(&w) {
                        if wk != 0.0 {
                            rows.push((i, v, wk));
                        }
                    }
                }
                None => inside.push(false),
            }
        }
        Projector {
            matrix: CscMatrix::from_triplets(points.len(), self.num_vertices(), &rows),
            inside,
        }
    }
}

/// Sparse `n × K` barycentric weight matrix with an inside-mesh mask.
#[derive(Debug, Clone)]
pub struct Projector {
    pub matrix: CscMatrix,
    pub inside: Vec<bool>,
}

impl Projector {
    pub fn num_outside(&self) -> usize {
        self.inside.iter().filter(|&&b| !b).count()
    }
}

/// Triangulates the domain and refines it until no edge near the boundary is
/// longer than `max_edge`, and no edge in the extension band longer than
/// `outer_factor · max_edge`.
///
/// With `boundary = None` the convex hull of `points` is used as the domain.
pub fn build_mesh(points: &[Point], boundary: Option<&Polygon>, opts: &MeshOptions) -> Result<Mesh> {
    if !(opts.max_edge > 0.0) || !opts.max_edge.is_finite() {
        return Err(Error::invalid("max_edge must be positive"));
    }
    if points.iter().any(|p| !p.lon.is_finite() || !p.lat.is_finite()) {
        return Err(Error::invalid("non-finite mesh seed point"));
    }
    let boundary = match boundary {
        Some(b) => b.clone(),
        None => {
            let hull = convex_hull(points);
            if hull.len() < 3 {
                return Err(Error::Mesh("points are collinear or fewer than three".into()));
            }
            Polygon::new(hull)?
        }
    };
    let domain_pts: Vec<Point> = boundary.rings().iter().flatten().chain(points).copied().collect();
    let bbox = BoundingBox::of(&domain_pts).expect("boundary is non-empty");
    if !(bbox.area() > 0.0) {
        return Err(Error::Mesh("domain has zero area".into()));
    }
    let outer_edge = opts.outer_factor.max(1.0) * opts.max_edge;
    let frame = bbox.expanded(opts.extension.max(0.0) * bbox.diameter());

    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let insert = |tri: &mut DelaunayTriangulation<Point2<f64>>, p: Point| -> Result<()> {
        tri.insert(Point2::new(p.lon, p.lat))
            .map(|_| ())
            .map_err(|e| Error::Mesh(format!("vertex insertion failed at ({}, {}): {e:?}", p.lon, p.lat)))
    };

    let corners = frame.corners();
    for k in 0..4 {
        for p in densify(&corners[k], &corners[(k + 1) % 4], outer_edge) {
            insert(&mut tri, p)?;
        }
    }
    for (a, b) in boundary.edges() {
        for p in densify(&a, &b, opts.max_edge) {
            insert(&mut tri, p)?;
        }
    }
    let cutoff = opts.cutoff.unwrap_or(0.5 * opts.max_edge).max(0.0);
    let mut kept = SpacingGrid::new(cutoff);
    for p in points {
        if frame.contains(p) && kept.try_add(p) {
            insert(&mut tri, *p)?;
        }
    }

    let limit_for = |a: &Point, b: &Point| -> f64 {
        let m = a.midpoint(b);
        if boundary.contains(&m) || boundary.contains(a) || boundary.contains(b) {
            opts.max_edge
        } else {
            outer_edge
        }
    };

    loop {
        let mut candidates: Vec<(f64, Point)> = Vec::new();
        for face in tri.inner_faces() {
            let pos = face.positions().map(|q| Point::new(q.x, q.y));
            let mut longest = (0.0, 0usize);
            let mut violated = false;
            for k in 0..3 {
                let (a, b) = (&pos[k], &pos[(k + 1) % 3]);
                let len = a.distance(b);
                if len > limit_for(a, b) * (1.0 + 1e-12) {
                    violated = true;
                }
                if len > longest.0 {
                    longest = (len, k);
                }
            }
            if !violated {
                continue;
            }
            let cc = face.circumcenter();
            let cc = Point::new(cc.x, cc.y);
            let target = if frame.contains(&cc) && cc.lon.is_finite() && cc.lat.is_finite() {
                cc
            } else {
                let k = longest.1;
                pos[k].midpoint(&pos[(k + 1) % 3])
            };
            candidates.push((longest.0, target));
        }
        if candidates.is_empty() {
            break;
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut pass = SpacingGrid::new(0.0);
        let before = tri.num_vertices();
        for (len, p) in candidates {
            pass.spacing = 0.5 * len;
            if pass.try_add(&p) {
                insert(&mut tri, p)?;
            }
        }
        if tri.num_vertices() == before {
            return Err(Error::Mesh("refinement stalled".into()));
        }
        if tri.num_vertices() > MAX_VERTICES {
            return Err(Error::Mesh(format!(
                "refinement exceeded {MAX_VERTICES} vertices; increase max_edge"
            )));
        }
    }

    let vertices: Vec<Point> = tri.vertices().map(|v| Point::new(v.position().x, v.position().y)).collect();
    let triangles: Vec<[usize; 3]> = tri
        .inner_faces()
        .map(|f| f.vertices().map(|v| v.fix().index()))
        .collect();
    if triangles.is_empty() {
        return Err(Error::Mesh("triangulation produced no triangles".into()));
    }
    Mesh::from_parts(vertices, triangles, boundary)
}

/// Points along `a → b` spaced at most `step` apart, excluding `b`.
fn densify(a: &Point, b: &Point, step: f64) -> Vec<Point> {
    let n = (a.distance(b) / step).ceil().max(1.0) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / n as f64;
            Point::new(a.lon + t * (b.lon - a.lon), a.lat + t * (b.lat - a.lat))
        })
        .collect()
}

/// Accepts points only if no accepted point lies within `spacing`.
struct SpacingGrid {
    spacing: f64,
    cell: f64,
    buckets: BTreeMap<(i64, i64), Vec<Point>>,
}

impl SpacingGrid {
    fn new(spacing: f64) -> Self {
        Self {
            spacing,
            cell: 0.0,
            buckets: BTreeMap::new(),
        }
    }

    fn key(&self, p: &Point) -> (i64, i64) {
        ((p.lon / self.cell).floor() as i64, (p.lat / self.cell).floor() as i64)
    }

    fn try_add(&mut self, p: &Point) -> bool {
        if self.spacing <= 0.0 {
            return true;
        }
        if self.cell == 0.0 {
            self.cell = self.spacing;
        }
        let reach = (self.spacing / self.cell).ceil() as i64;
        let (ki, kj) = self.key(p);
        for di in -reach..=reach {
            for dj in -reach..=reach {
                if let Some(bucket) = self.buckets.get(&(ki + di, kj + dj)) {
                    if bucket.iter().any(|q| q.distance(p) < self.spacing) {
                        return false;
                    }
                }
            }
        }
        self.buckets.entry((ki, kj)).or_default().push(*p);
        true
    }
}

/// Uniform bucket grid over triangle bounding boxes.
#[derive(Debug, Clone)]
struct TriangleLocator {
    bbox: BoundingBox,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl TriangleLocator {
    fn new(vertices: &[Point], triangles: &[[usize; 3]]) -> Self {
        let bbox = BoundingBox::of(vertices).unwrap_or(BoundingBox {
            min: Point::new(0.0, 0.0),
            max: Point::new(0.0, 0.0),
        });
        let side = ((triangles.len() as f64).sqrt().ceil() as usize).max(1);
        let (nx, ny) = (side, side);
        let mut loc = Self {
            bbox,
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
        };
        for (t, tri) in triangles.iter().enumerate() {
            let tb = BoundingBox::of(tri.iter().map(|&v| &vertices[v])).expect("three vertices");
            let (i0, j0) = loc.cell_of(&tb.min);
            let (i1, j1) = loc.cell_of(&tb.max);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    loc.cells[j * nx + i].push(t as u32);
                }
            }
        }
        loc
    }

    fn cell_of(&self, p: &Point) -> (usize, usize) {
        let fx = if self.bbox.width() > 0.0 {
            (p.lon - self.bbox.min.lon) / self.bbox.width()
        } else {
            0.0
        };
        let fy = if self.bbox.height() > 0.0 {
            (p.lat - self.bbox.min.lat) / self.bbox.height()
        } else {
            0.0
        };
        let i = ((fx * self.nx as f64).floor().max(0.0) as usize).min(self.nx - 1);
        let j = ((fy * self.ny as f64).floor().max(0.0) as usize).min(self.ny - 1);
        (i, j)
    }

    fn locate(&self, vertices: &[Point], triangles: &[[usize; 3]], p: &Point) -> Option<(usize, [f64; 3])> {
        if !p.lon.is_finite() || !p.lat.is_finite() || !self.bbox.contains(p) {
            return None;
        }
        let (i, j) = self.cell_of(p);
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &self.cells[j * self.nx + i] {
            let t = t as usize;
            let [a, b, c] = triangles[t];
            let w = barycentric(&vertices[a], &vertices[b], &vertices[c], p);
            let worst = w.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                return Some((t, w));
            }
            if best.as_ref().map_or(true, |b| worst > b.2) {
                best = Some((t, w, worst));
            }
        }
        let (t, w, worst) = best?;
        if worst < -1e-10 {
            return None;
        }
        let clamped = w.map(|x| x.max(0.0));
        let s: f64 = clamped.iter().sum();
        Some((t, clamped.map(|x| x / s)))
    }
}

fn barycentric(a: &Point, b: &Point, c: &Point, p: &Point) -> [f64; 3] {
    let det = (b.lat - c.lat) * (a.lon - c.lon) + (c.lon - b.lon) * (a.lat - c.lat);
    let w0 = ((b.lat - c.lat) * (p.lon - c.lon) + (c.lon - b.lon) * (p.lat - c.lat)) / det;
    let w1 = ((c.lat - a.lat) * (p.lon - c.lon) + (a.lon - c.lon) * (p.lat - c.lat)) / det;
    [w0, w1, 1.0 - w0 - w1]
}
