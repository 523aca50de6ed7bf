//! Boundary flux value and plasma boundary of a piecewise-linear flux field.
//!
//! Works on any triangulated field: the annulus solution as well as exact or
//! extrapolated fields sampled on a Cartesian grid.

use std::collections::HashMap;

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    point_in_polygon, project_on_closed_polyline, resample_closed, signed_area, strip_closing,
    winding_number, Point,
};

/// Points of the output boundary polyline, before the closing point.
pub const BOUNDARY_POINTS: usize = 256;

/// Relative level shift towards the axis that keeps separatrix and
/// limiter-tangent contours off the degenerate level.
const LEVEL_NUDGE: f64 = 1e-9;

/// Read-only view of a P1 field.
#[derive(Debug, Clone, Copy)]
pub struct FieldView<'a> {
    pub nodes: &'a [Point],
    pub triangles: &'a [[usize; 3]],
    pub values: &'a [f64],
}

/// A field sampled on a Cartesian grid, each cell split into two triangles.
#[derive(Debug, Clone)]
pub struct GridField {
    pub nodes: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub values: Vec<f64>,
    pub h: f64,
}

impl GridField {
    /// Samples `f` on `[lo, hi]` with spacing at most `h`. Cells touching a
    /// point where `f` fails or is not finite are left out.
    pub fn sample<F>(lo: Point, hi: Point, h: f64, f: F) -> Result<Self>
    where
        F: Fn(Point) -> Result<f64> + Sync,
    {
        use rayon::prelude::*;
        if !(h > 0.0 && hi.r > lo.r && hi.z > lo.z) {
            return Err(Error::Config("invalid sampling grid".into()));
        }
        let nr = ((hi.r - lo.r) / h).ceil() as usize + 1;
        let nz = ((hi.z - lo.z) / h).ceil() as usize + 1;
        let dr = (hi.r - lo.r) / (nr - 1) as f64;
        let dz = (hi.z - lo.z) / (nz - 1) as f64;
        let nodes: Vec<Point> = (0..nz)
            .flat_map(|j| {
                (0..nr).map(move |i| Point::new(lo.r + i as f64 * dr, lo.z + j as f64 * dz))
            })
            .collect();
        let values: Vec<f64> = nodes
            .par_iter()
            .map(|&p| f(p).ok().filter(|v| v.is_finite()).unwrap_or(f64::NAN))
            .collect();
        let mut triangles = Vec::with_capacity(2 * nr * nz);
        for j in 0..nz - 1 {
            for i in 0..nr - 1 {
                let a = j * nr + i;
                let (b, c, d) = (a + 1, a + nr + 1, a + nr);
                for t in [[a, b, c], [a, c, d]] {
                    if t.iter().all(|&k| values[k].is_finite()) {
                        triangles.push(t);
                    }
                }
            }
        }
        Ok(Self {
            nodes,
            triangles,
            values,
            h: dr.max(dz),
        })
    }

    pub fn view(&self) -> FieldView<'_> {
        FieldView {
            nodes: &self.nodes,
            triangles: &self.triangles,
            values: &self.values,
        }
    }
}

/// Bucket index for point location.
struct Locator {
    lo: Point,
    cell: f64,
    nr: usize,
    nz: usize,
    buckets: Vec<Vec<usize>>,
}

impl Locator {
    fn new(view: &FieldView) -> Self {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in view.nodes {
            lo = Point::new(lo.r.min(p.r), lo.z.min(p.z));
            hi = Point::new(hi.r.max(p.r), hi.z.max(p.z));
        }
        let n = view.triangles.len().max(1);
        let cell = (((hi.r - lo.r) * (hi.z - lo.z)) / n as f64)
            .sqrt()
            .max(1e-12)
            * 2.0;
        let nr = ((hi.r - lo.r) / cell).ceil() as usize + 1;
        let nz = ((hi.z - lo.z) / cell).ceil() as usize + 1;
        let mut buckets = vec![Vec::new(); nr * nz];
        for (k, t) in view.triangles.iter().enumerate() {
            let ps = t.map(|i| view.nodes[i]);
            let rmin = ps.iter().map(|p| p.r).fold(f64::INFINITY, f64::min);
            let rmax = ps.iter().map(|p| p.r).fold(f64::NEG_INFINITY, f64::max);
            let zmin = ps.iter().map(|p| p.z).fold(f64::INFINITY, f64::min);
            let zmax = ps.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max);
            let (i0, i1) = (
                ((rmin - lo.r) / cell) as usize,
                ((rmax - lo.r) / cell) as usize,
            );
            let (j0, j1) = (
                ((zmin - lo.z) / cell) as usize,
                ((zmax - lo.z) / cell) as usize,
            );
            for j in j0..=j1.min(nz - 1) {
                for i in i0..=i1.min(nr - 1) {
                    buckets[j * nr + i].push(k);
                }
            }
        }
        Self {
            lo,
            cell,
            nr,
            nz,
            buckets,
        }
    }

    fn eval(&self, view: &FieldView, p: Point) -> Option<f64> {
        let fi = (p.r - self.lo.r) / self.cell;
        let fj = (p.z - self.lo.z) / self.cell;
        if fi < 0.0 || fj < 0.0 {
            return None;
        }
        let (i, j) = (fi as usize, fj as usize);
        if i >= self.nr || j >= self.nz {
            return None;
        }
        for &k in &self.buckets[j * self.nr + i] {
            let t = view.triangles[k];
            let (a, b, c) = (view.nodes[t[0]], view.nodes[t[1]], view.nodes[t[2]]);
            let d = (b - a).cross(c - a);
            let w1 = (p - a).cross(c - a) / d;
            let w2 = (b - a).cross(p - a) / d;
            let w0 = 1.0 - w1 - w2;
            if w0 >= -1e-12 && w1 >= -1e-12 && w2 >= -1e-12 {
                return Some(
                    w0 * view.values[t[0]] + w1 * view.values[t[1]] + w2 * view.values[t[2]],
                );
            }
        }
        None
    }
}

/// Linear interpolation of the field at each point; `None` outside the mesh.
pub fn sample_points(view: &FieldView, points: &[Point]) -> Vec<Option<f64>> {
    let loc = Locator::new(view);
    points.iter().map(|&p| loc.eval(view, p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XPoint {
    pub pos: Point,
    /// Flux of the local quadratic model at `pos`.
    pub psi: f64,
    /// Nodal value of the discrete saddle, where the contour topology changes.
    pub node_psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Limiter,
    Xpoint,
}

impl BoundaryKind {
    /// Lowercase name, as serialized.
    pub fn name(self) -> &'static str {
        match self {
            Self::Limiter => "limiter",
            Self::Xpoint => "xpoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasmaBoundary {
    /// Closed polyline; the last point repeats the first.
    pub points: Vec<Point>,
    pub psi_p: f64,
    pub kind: BoundaryKind,
    pub xpoint: Option<Point>,
}

struct Topology {
    /// Neighbors of each node in counter-clockwise angular order.
    neighbors: Vec<Vec<usize>>,
    on_boundary: Vec<bool>,
}

fn topology(view: &FieldView) -> Topology {
    let n = view.nodes.len();
    let mut edge_count: HashMap<(usize, usize), u8> = HashMap::new();
    let mut neighbors = vec![Vec::new(); n];
    for t in view.triangles {
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            *edge_count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
    }
    let mut on_boundary = vec![false; n];
    for ((a, b), c) in &edge_count {
        if *c == 1 {
            on_boundary[*a] = true;
            on_boundary[*b] = true;
        }
    }
    for (i, nb) in neighbors.iter_mut().enumerate() {
        nb.sort_unstable();
        nb.dedup();
        let p = view.nodes[i];
        nb.sort_by(|&a, &b| {
            let da = view.nodes[a] - p;
            let db = view.nodes[b] - p;
            da.z.atan2(da.r).partial_cmp(&db.z.atan2(db.r)).unwrap()
        });
    }
    Topology {
        neighbors,
        on_boundary,
    }
}

/// Quadratic least-squares model around `c`:
/// `ψ ≈ k0 + k1 x + k2 y + k3 x² + k4 x y + k5 y²` with `(x, y) = (p − c) / s`.
fn quadratic_fit(view: &FieldView, patch: &[usize], c: Point, s: f64) -> Option<Vector6<f64>> {
    if patch.len() < 6 {
        return None;
    }
    let mut ata = Matrix6::zeros();
    let mut atb = Vector6::zeros();
    for &k in patch {
        let d = (view.nodes[k] - c) * (1.0 / s);
        let row = Vector6::new(1.0, d.r, d.z, d.r * d.r, d.r * d.z, d.z * d.z);
        ata += row * row.transpose();
        atb += row * view.values[k];
    }
    ata.cholesky().map(|ch| ch.solve(&atb))
}

fn two_ring(topo: &Topology, i: usize) -> Vec<usize> {
    let mut v = vec![i];
    for &j in &topo.neighbors[i] {
        v.push(j);
        v.extend_from_slice(&topo.neighbors[j]);
    }
    v.sort_unstable();
    v.dedup();
    v
}

/// Saddle points of the field.
///
/// Candidates are nodes around which the sign of `ψ_j − ψ_i` changes at
/// least four times; each is refined by Newton steps on a quadratic fit over
/// its two-ring patch and kept if the fitted Hessian is indefinite.
pub fn find_xpoints(view: &FieldView) -> Vec<XPoint> {
    let topo = topology(view);
    let mut found: Vec<(XPoint, f64)> = Vec::new();
    for i in 0..view.nodes.len() {
        if topo.on_boundary[i] || topo.neighbors[i].len() < 3 {
            continue;
        }
        let nb = &topo.neighbors[i];
        let vi = view.values[i];
        let signs: Vec<bool> = nb.iter().map(|&j| view.values[j] >= vi).collect();
        let changes = (0..signs.len())
            .filter(|&k| signs[k] != signs[(k + 1) % signs.len()])
            .count();
        if changes < 4 {
            continue;
        }
        let patch = two_ring(&topo, i);
        let c = view.nodes[i];
        let s = patch
            .iter()
            .map(|&k| view.nodes[k].dist(c))
            .fold(0.0, f64::max);
        let Some(k) = quadratic_fit(view, &patch, c, s) else {
            continue;
        };
        let (hxx, hxy, hyy) = (2.0 * k[3], k[4], 2.0 * k[5]);
        let det = hxx * hyy - hxy * hxy;
        if !(det < 0.0) {
            continue;
        }
        let x = (-k[1] * hyy + k[2] * hxy) / det;
        let y = (-k[2] * hxx + k[1] * hxy) / det;
        if x * x + y * y > 1.0 {
            continue;
        }
        let psi = k[0] + k[1] * x + k[2] * y + k[3] * x * x + k[4] * x * y + k[5] * y * y;
        let xp = XPoint {
            pos: c + Point::new(x, y) * s,
            psi,
            node_psi: vi,
        };
        match found.iter_mut().find(|(f, _)| f.pos.dist(xp.pos) < s) {
            Some(_) => {}
            None => found.push((xp, s)),
        }
    }
    found.into_iter().map(|(x, _)| x).collect()
}

/// Extremum of `sign · ψ` over the points that lie in the field.
pub fn trace_max(view: &FieldView, points: &[Point], sign: f64) -> Option<f64> {
    sample_points(view, points)
        .into_iter()
        .flatten()
        .map(|v| sign * v)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .map(|v| sign * v)
}

fn densify(poly: &[Point], h: f64) -> Vec<Point> {
    crate::fem::mesh::subdivide_closed(strip_closing(poly), h)
}

/// Boundary flux and kind.
///
/// With `sign` the sign of the plasma current, `sign · ψ` peaks on the
/// magnetic axis. The limiter value is the largest `sign · ψ` on the
/// limiter; an X-point inside the limiter whose flux lies strictly between
/// that value and `axis_bound` takes precedence, the one nearest the axis
/// side if several qualify.
pub fn psi_boundary_value(
    view: &FieldView,
    limiter: &[Point],
    xpoints: &[XPoint],
    sign: f64,
    axis_bound: f64,
    h: f64,
) -> Result<(f64, BoundaryKind, Option<XPoint>)> {
    let lim = trace_max(view, &densify(limiter, 0.25 * h), sign).ok_or_else(|| {
        Error::NoClosedContour("limiter does not intersect the field domain".into())
    })?;
    let best = xpoints
        .iter()
        .filter(|x| point_in_polygon(limiter, x.pos))
        .filter(|x| sign * x.node_psi > sign * lim && sign * x.node_psi < sign * axis_bound)
        .max_by(|a, b| {
            (sign * a.node_psi)
                .partial_cmp(&(sign * b.node_psi))
                .unwrap()
        });
    Ok(match best {
        Some(x) => (x.node_psi, BoundaryKind::Xpoint, Some(*x)),
        None => (lim, BoundaryKind::Limiter, None),
    })
}

/// Closed iso-contour at `level` encircling `center`, by marching triangles.
pub fn extract_isocontour(view: &FieldView, level: f64, center: Point) -> Result<Vec<Point>> {
    let above = |k: usize| view.values[k] >= level;
    let mut ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pts: Vec<Point> = Vec::new();
    let mut adj: Vec<Vec<usize>> = Vec::new();
    let mut id_of = |a: usize, b: usize, pts: &mut Vec<Point>, adj: &mut Vec<Vec<usize>>| {
        let key = (a.min(b), a.max(b));
        *ids.entry(key).or_insert_with(|| {
            let (va, vb) = (view.values[key.0], view.values[key.1]);
            let t = (level - va) / (vb - va);
            let (pa, pb) = (view.nodes[key.0], view.nodes[key.1]);
            pts.push(pa + (pb - pa) * t);
            adj.push(Vec::new());
            pts.len() - 1
        })
    };
    for t in view.triangles {
        let mut cut = Vec::with_capacity(2);
        for e in 0..3 {
            let (a, b) = (t[e], t[(e + 1) % 3]);
            if above(a) != above(b) {
                cut.push(id_of(a, b, &mut pts, &mut adj));
            }
        }
        if cut.len() == 2 {
            adj[cut[0]].push(cut[1]);
            adj[cut[1]].push(cut[0]);
        }
    }
    let mut seen = vec![false; pts.len()];
    let mut best: Option<(f64, Vec<Point>)> = None;
    for s in 0..pts.len() {
        if seen[s] || adj[s].len() != 2 {
            continue;
        }
        let mut lp = vec![s];
        seen[s] = true;
        let (mut prev, mut cur) = (s, adj[s][0]);
        let closed = loop {
            if cur == s {
                break true;
            }
            if seen[cur] || adj[cur].len() != 2 {
                break false;
            }
            seen[cur] = true;
            lp.push(cur);
            let next = if adj[cur][0] == prev {
                adj[cur][1]
            } else {
                adj[cur][0]
            };
            prev = cur;
            cur = next;
        };
        if !closed || lp.len() < 3 {
            continue;
        }
        let poly: Vec<Point> = lp.iter().map(|&k| pts[k]).collect();
        if winding_number(&poly, center) == 0 {
            continue;
        }
        let area = signed_area(&poly).abs();
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            best = Some((area, poly));
        }
    }
    best.map(|(_, p)| p).ok_or_else(|| {
        Error::NoClosedContour(format!(
            "no closed contour at level {level:.6e} encircles ({:.4}, {:.4})",
            center.r, center.z
        ))
    })
}

fn finish(mut poly: Vec<Point>, limiter: &[Point], kind: BoundaryKind) -> Vec<Point> {
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    if kind == BoundaryKind::Limiter {
        for p in &mut poly {
            if !point_in_polygon(limiter, *p) {
                *p = project_on_closed_polyline(limiter, *p);
            }
        }
    }
    let mut out = resample_closed(&poly, BOUNDARY_POINTS);
    out.push(out[0]);
    out
}

/// Inputs of [`extract_boundary`] beyond the field itself.
#[derive(Debug, Clone, Copy)]
pub struct BoundarySearch<'a> {
    pub limiter: &'a [Point],
    /// Sign of the plasma current.
    pub sign: f64,
    /// Flux bound on the axis side, e.g. the extremum on the inner contour.
    pub axis_bound: f64,
    /// Point enclosed by the plasma boundary.
    pub center: Point,
    /// Mesh or grid spacing.
    pub h: f64,
}

/// Boundary flux, kind and closed boundary polyline.
///
/// If the contour at the boundary flux is not closed around the center, the
/// level is moved towards `axis_bound` in steps until one is.
pub fn extract_boundary(view: &FieldView, s: &BoundarySearch) -> Result<PlasmaBoundary> {
    if !(s.sign == 1.0 || s.sign == -1.0) {
        return Err(Error::Domain("flux orientation must be +1 or -1".into()));
    }
    let xpoints = find_xpoints(view);
    let (psi_p, kind, xp) =
        psi_boundary_value(view, s.limiter, &xpoints, s.sign, s.axis_bound, s.h)?;
    let span = s.axis_bound - psi_p;
    if !(s.sign * span > 0.0) {
        return Err(Error::NoClosedContour(format!(
            "boundary flux {psi_p:.6e} is not below the axis-side bound {:.6e}",
            s.axis_bound
        )));
    }
    let mut last = None;
    for step in 0..12 {
        let frac = if step == 0 {
            LEVEL_NUDGE
        } else {
            1e-4 * 2f64.powi(step - 1)
        };
        let level = psi_p + span * frac;
        match extract_isocontour(view, level, s.center) {
            Ok(poly) => {
                return Ok(PlasmaBoundary {
                    points: finish(poly, s.limiter, kind),
                    psi_p: level,
                    kind,
                    xpoint: xp.map(|x| x.pos),
                })
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn saddle_grid() -> GridField {
        GridField::sample(Point::new(-1.0, -1.0), Point::new(1.0, 1.0), 0.05, |p| {
            Ok(p.r * p.r - p.z * p.z)
        })
        .unwrap()
    }

    #[test]
    fn finds_quadratic_saddle() {
        let g = saddle_grid();
        let x = find_xpoints(&g.view());
        assert_eq!(x.len(), 1);
        assert!(x[0].pos.norm() < 1e-10);
        assert!(x[0].psi.abs() < 1e-12);
    }

    #[test]
    fn bowl_has_no_saddle_and_circular_contours() {
        let g = GridField::sample(Point::new(-1.0, -1.0), Point::new(1.0, 1.0), 0.02, |p| {
            Ok(-(p.r * p.r + p.z * p.z))
        })
        .unwrap();
        let v = g.view();
        assert!(find_xpoints(&v).is_empty());
        let c = extract_isocontour(&v, -0.25, Point::new(0.0, 0.0)).unwrap();
        for p in &c {
            assert!((p.norm() - 0.5).abs() < 2e-3);
        }
        assert!(matches!(
            extract_isocontour(&v, 5.0, Point::new(0.0, 0.0)),
            Err(Error::NoClosedContour(_))
        ));
    }

    #[test]
    fn grid_skips_failed_samples() {
        let g = GridField::sample(Point::new(0.0, 0.0), Point::new(1.0, 1.0), 0.5, |p| {
            if p.r == 0.0 && p.z == 0.0 {
                Err(Error::Domain("x".into()))
            } else {
                Ok(1.0)
            }
        })
        .unwrap();
        assert_eq!(g.triangles.len(), 6);
    }
}
