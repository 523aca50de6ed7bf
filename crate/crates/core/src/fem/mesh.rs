//! Annular P1 triangulations between the outer contour and the inner
//! circle or ellipse.
//!
//! Node ordering: inner-boundary nodes first (in loop order), then
//! outer-boundary nodes (in loop order), then interior nodes.

use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use spade::{
    AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation,
};

use crate::error::{Error, Result};
use crate::geometry::{point_in_polygon, polygons_intersect, signed_area, Contour, Point};

/// Smallest accepted triangle angle [deg].
pub const MIN_ANGLE_DEG: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
// externally tagged so the binary cache can decode it
#[serde(rename_all = "lowercase")]
pub enum InnerShape {
    Circle {
        radius: f64,
    },
    /// Semi-axes along r and z.
    Ellipse {
        a: f64,
        b: f64,
    },
}

/// The fictitious inner boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerContour {
    pub center: Point,
    pub shape: InnerShape,
}

impl InnerContour {
    pub fn circle(center: Point, radius: f64) -> Self {
        Self {
            center,
            shape: InnerShape::Circle { radius },
        }
    }

    pub fn ellipse(center: Point, a: f64, b: f64) -> Self {
        Self {
            center,
            shape: InnerShape::Ellipse { a, b },
        }
    }

    fn axes(&self) -> (f64, f64) {
        match self.shape {
            InnerShape::Circle { radius } => (radius, radius),
            InnerShape::Ellipse { a, b } => (a, b),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.axes();
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::Geometry(
                "inner contour axes must be positive".into(),
            ));
        }
        if self.center.r - a <= 0.0 {
            return Err(Error::Geometry("inner contour crosses the axis".into()));
        }
        Ok(())
    }

    pub fn at(&self, t: f64) -> Point {
        let (a, b) = self.axes();
        Point::new(self.center.r + a * t.cos(), self.center.z + b * t.sin())
    }

    /// Radial projection onto the curve, exact for circles.
    pub fn project(&self, p: Point) -> Point {
        let (a, b) = self.axes();
        let d = p - self.center;
        self.at((d.z / b).atan2(d.r / a))
    }

    pub fn perimeter(&self) -> f64 {
        let (a, b) = self.axes();
        let h = ((a - b) / (a + b)).powi(2);
        PI * (a + b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
    }

    pub fn contains(&self, p: Point) -> bool {
        let (a, b) = self.axes();
        let d = p - self.center;
        (d.r / a).powi(2) + (d.z / b).powi(2) < 1.0
    }

    /// `n` counter-clockwise points equally spaced in the angle parameter.
    pub fn polyline(&self, n: usize) -> Vec<Point> {
        (0..n).map(|k| self.at(TAU * k as f64 / n as f64)).collect()
    }
}

/// Local mesh refinement around a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinementZone {
    pub center: Point,
    pub radius: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMesh {
    pub nodes: Vec<Point>,
    /// Counter-clockwise node triples.
    pub triangles: Vec<[usize; 3]>,
    pub n_inner: usize,
    pub n_outer: usize,
}

impl TriMesh {
    /// Validates and wraps a triangulation that already follows the node
    /// ordering convention, with boundary loops in counter-clockwise order.
    pub fn from_parts(
        nodes: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
        n_inner: usize,
        n_outer: usize,
    ) -> Result<Self> {
        if n_inner < 3 || n_outer < 3 || n_inner + n_outer > nodes.len() {
            return Err(Error::Geometry("invalid boundary node counts".into()));
        }
        if let Some(p) = nodes.iter().find(|p| !(p.r > 0.0) || !p.is_finite()) {
            return Err(Error::AxisDomain { r: p.r });
        }
        for t in &mut triangles {
            if t.iter().any(|&i| i >= nodes.len()) {
                return Err(Error::Geometry("triangle index out of range".into()));
            }
            let a = tri_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]);
            if a == 0.0 {
                return Err(Error::Geometry("degenerate triangle".into()));
            }
            if a < 0.0 {
                t.swap(1, 2);
            }
        }
        Ok(Self {
            nodes,
            triangles,
            n_inner,
            n_outer,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_boundary(&self) -> usize {
        self.n_inner + self.n_outer
    }

    pub fn inner_nodes(&self) -> std::ops::Range<usize> {
        0..self.n_inner
    }

    pub fn outer_nodes(&self) -> std::ops::Range<usize> {
        self.n_inner..self.n_boundary()
    }

    pub fn outer_points(&self) -> &[Point] {
        &self.nodes[self.outer_nodes()]
    }

    pub fn inner_points(&self) -> &[Point] {
        &self.nodes[self.inner_nodes()]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Outer boundary segments in loop order.
    pub fn outer_segments(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let off = self.n_inner;
        let n = self.n_outer;
        (0..n).map(move |k| (off + k, off + (k + 1) % n))
    }

    pub fn min_angle_deg(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| min_angle(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]))
            .fold(f64::INFINITY, f64::min)
            .to_degrees()
    }

    pub fn max_edge(&self) -> f64 {
        self.edges()
            .iter()
            .map(|&(a, b)| self.nodes[a].dist(self.nodes[b]))
            .fold(0.0, f64::max)
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| tri_area(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]))
            .sum()
    }

    pub fn check_quality(&self) -> Result<()> {
        let a = self.min_angle_deg();
        if a < MIN_ANGLE_DEG {
            return Err(Error::MeshQuality { min_angle_deg: a });
        }
        Ok(())
    }

    /// Barycentric location of `p`: triangle index and weights.
    pub fn locate(&self, p: Point) -> Option<(usize, [f64; 3])> {
        const TOL: f64 = -1e-12;
        self.triangles.iter().enumerate().find_map(|(k, t)| {
            let w = barycentric(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]], p);
            (w.iter().all(|&x| x >= TOL)).then_some((k, w))
        })
    }

    /// Red refinement: every triangle is split into four. Midpoints of
    /// boundary edges are mapped onto the curves by `project_inner` and
    /// `project_outer`.
    pub fn refine_uniform<FI, FO>(&self, project_inner: FI, project_outer: FO) -> Result<Self>
    where
        FI: Fn(Point) -> Point,
        FO: Fn(Point) -> Point,
    {
        let nb_old = self.n_boundary();
        let mut nodes = Vec::with_capacity(4 * self.nodes.len());
        let mut map = vec![usize::MAX; self.nodes.len()];
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let key = |a: usize, b: usize| (a.min(b), a.max(b));
        let boundary_loop = |start: usize,
                             n: usize,
                             proj: &dyn Fn(Point) -> Point,
                             nodes: &mut Vec<Point>,
                             map: &mut Vec<usize>,
                             mid: &mut HashMap<(usize, usize), usize>| {
            for k in 0..n {
                let a = start + k;
                let b = start + (k + 1) % n;
                map[a] = nodes.len();
                nodes.push(self.nodes[a]);
                mid.insert(key(a, b), nodes.len());
                nodes.push(proj((self.nodes[a] + self.nodes[b]) * 0.5));
            }
        };
        boundary_loop(
            0,
            self.n_inner,
            &project_inner,
            &mut nodes,
            &mut map,
            &mut mid,
        );
        boundary_loop(
            self.n_inner,
            self.n_outer,
            &project_outer,
            &mut nodes,
            &mut map,
            &mut mid,
        );
        let (n_inner, n_outer) = (2 * self.n_inner, 2 * self.n_outer);
        for i in nb_old..self.nodes.len() {
            map[i] = nodes.len();
            nodes.push(self.nodes[i]);
        }
        let mut tris = Vec::with_capacity(4 * self.triangles.len());
        for t in &self.triangles {
            let mut m = [0usize; 3];
            for e in 0..3 {
                let (a, b) = (t[e], t[(e + 1) % 3]);
                m[e] = *mid.entry(key(a, b)).or_insert_with(|| {
                    nodes.push((self.nodes[a] + self.nodes[b]) * 0.5);
                    nodes.len() - 1
                });
            }
            let v = [map[t[0]], map[t[1]], map[t[2]]];
            tris.push([v[0], m[0], m[2]]);
            tris.push([m[0], v[1], m[1]]);
            tris.push([m[2], m[1], v[2]]);
            tris.push([m[0], m[1], m[2]]);
        }
        TriMesh::from_parts(nodes, tris, n_inner, n_outer)
    }
}

pub fn tri_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * (b - a).cross(c - a)
}

fn barycentric(a: Point, b: Point, c: Point, p: Point) -> [f64; 3] {
    let d = (b - a).cross(c - a);
    let w1 = (p - a).cross(c - a) / d;
    let w2 = (b - a).cross(p - a) / d;
    [1.0 - w1 - w2, w1, w2]
}

fn min_angle(a: Point, b: Point, c: Point) -> f64 {
    let ang = |p: Point, q: Point, r: Point| {
        let u = q - p;
        let v = r - p;
        u.cross(v).abs().atan2(u.dot(v))
    };
    ang(a, b, c).min(ang(b, c, a)).min(ang(c, a, b))
}

/// Outer boundary nodes: every contour vertex, with each edge subdivided so
/// that no piece exceeds `h`.
pub fn subdivide_closed(points: &[Point], h: f64) -> Vec<Point> {
    let n = points.len();
    let mut out = Vec::new();
    for k in 0..n {
        let a = points[k];
        let b = points[(k + 1) % n];
        let m = ((a.dist(b) / h).ceil() as usize).max(1);
        for j in 0..m {
            out.push(a + (b - a) * (j as f64 / m as f64));
        }
    }
    out
}

/// Outer boundary nodes: the contour resampled at equal arc length with
/// spacing at most `h`. Uniform spacing keeps boundary triangles well shaped.
pub fn outer_nodes(points: &[Point], h: f64) -> Vec<Point> {
    let n = ((crate::geometry::closed_length(points) / h).ceil() as usize).max(8);
    crate::geometry::resample_closed(points, n)
}

/// Outer boundary of the meshes built on `outer` with spacing `h`.
pub fn outer_boundary(outer: &Contour, h: f64) -> Result<Contour> {
    Contour::from_points(outer_nodes(&outer.points, h))
}

fn spade_point(p: Point) -> Point2<f64> {
    Point2::new(p.r, p.z)
}

fn hex_lattice(center: Point, radius: f64, h: f64) -> Vec<Point> {
    let dz = h * 3f64.sqrt() / 2.0;
    let nz = (radius / dz).ceil() as i64;
    let nr = (radius / h).ceil() as i64 + 1;
    let mut pts = Vec::new();
    for j in -nz..=nz {
        let shift = if j.rem_euclid(2) == 1 { 0.5 * h } else { 0.0 };
        for i in -nr..=nr {
            let p = Point::new(center.r + i as f64 * h + shift, center.z + j as f64 * dz);
            if p.dist(center) <= radius {
                pts.push(p);
            }
        }
    }
    pts
}

/// Constrained Delaunay mesh of the annulus between `outer` and `inner`.
pub fn build_annulus_mesh(
    outer: &Contour,
    inner: &InnerContour,
    h: f64,
    zones: &[RefinementZone],
) -> Result<TriMesh> {
    if !(h > 0.0) {
        return Err(Error::Config(format!(
            "mesh size must be positive, got {h}"
        )));
    }
    inner.validate()?;
    let outer_pts = outer_nodes(&outer.points, h);
    let n_i = ((inner.perimeter() / h).round() as usize).max(8);
    let inner_pts = inner.polyline(n_i);
    if !inner_pts.iter().all(|&p| point_in_polygon(&outer_pts, p))
        || polygons_intersect(&outer_pts, &inner_pts)
    {
        return Err(Error::Geometry(
            "inner contour is not strictly inside the outer contour".into(),
        ));
    }
    let min_gap = inner_pts
        .iter()
        .map(|&p| crate::geometry::distance_to_closed_polyline(&outer_pts, p))
        .fold(f64::INFINITY, f64::min);
    if min_gap < 0.5 * h {
        return Err(Error::Geometry(format!(
            "gap {min_gap:.3e} m between contours is below half the mesh size"
        )));
    }

    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::new();
    let insert = |cdt: &mut ConstrainedDelaunayTriangulation<Point2<f64>>, p: Point| {
        cdt.insert(spade_point(p))
            .map_err(|e| Error::Geometry(format!("triangulation insert failed: {e:?}")))
    };
    let mut loops = Vec::new();
    for pts in [&inner_pts, &outer_pts] {
        let handles = pts
            .iter()
            .map(|&p| insert(&mut cdt, p))
            .collect::<Result<Vec<_>>>()?;
        loops.push(handles);
    }
    for handles in &loops {
        for k in 0..handles.len() {
            let (a, b) = (handles[k], handles[(k + 1) % handles.len()]);
            if !cdt.can_add_constraint(a, b) {
                return Err(Error::Geometry("boundary constraint crossing".into()));
            }
            cdt.add_constraint(a, b);
        }
    }
    let inside = |p: Point| point_in_polygon(&outer_pts, p) && !point_in_polygon(&inner_pts, p);
    let clearance = |p: Point, hz: f64| {
        crate::geometry::distance_to_closed_polyline(&outer_pts, p) > 0.6 * hz
            && crate::geometry::distance_to_closed_polyline(&inner_pts, p) > 0.6 * hz
    };
    for z in zones {
        if !(z.h > 0.0 && z.radius > 0.0) {
            return Err(Error::Config(
                "refinement zone needs positive h and radius".into(),
            ));
        }
        for p in hex_lattice(z.center, z.radius, z.h) {
            if inside(p) && clearance(p, z.h) {
                insert(&mut cdt, p)?;
            }
        }
    }
    let h_min = zones.iter().map(|z| z.h).fold(h, f64::min);
    // vertex budget from the area bound, with generous slack for grading
    let area = signed_area(&outer_pts).abs();
    let budget = (40.0 * area / (h_min * h_min)) as usize + 10 * cdt.num_vertices();
    let result = cdt.refine(
        RefinementParameters::<f64>::new()
            .with_max_additional_vertices(budget)
            .with_angle_limit(AngleLimit::from_deg(28.0))
            .with_max_allowed_area(3f64.sqrt() / 4.0 * h * h)
            .with_min_required_area(0.05 * h_min * h_min)
            .keep_constraint_edges()
            .exclude_outer_faces(true),
    );
    if !result.refinement_complete {
        return Err(Error::Geometry("mesh refinement did not converge".into()));
    }

    let n_v = cdt.num_vertices();
    let mut map = vec![usize::MAX; n_v];
    let mut nodes = Vec::with_capacity(n_v);
    for handles in &loops {
        for h in handles {
            map[h.index()] = nodes.len();
            nodes.push(Point::new(
                cdt.vertex(*h).position().x,
                cdt.vertex(*h).position().y,
            ));
        }
    }
    let mut tris = Vec::new();
    for f in cdt.inner_faces() {
        let v = f.vertices();
        let p: Vec<Point> = v
            .iter()
            .map(|x| Point::new(x.position().x, x.position().y))
            .collect();
        let c = (p[0] + p[1] + p[2]) * (1.0 / 3.0);
        // slivers from collinear subdivided hull points lie outside the loop
        if !inside(c) || tri_area(p[0], p[1], p[2]).abs() < 1e-8 * h_min * h_min {
            continue;
        }
        let mut t = [0usize; 3];
        for k in 0..3 {
            let idx = v[k].fix().index();
            if map[idx] == usize::MAX {
                map[idx] = nodes.len();
                nodes.push(p[k]);
            }
            t[k] = map[idx];
        }
        tris.push(t);
    }
    let mesh = TriMesh::from_parts(nodes, tris, inner_pts.len(), outer_pts.len())?;
    mesh.check_quality()?;
    Ok(mesh)
}
