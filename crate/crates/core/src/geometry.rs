//! Planar geometry in the poloidal (r, z) half-plane.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point of the poloidal cross-section, in metres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub r: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(r: f64, z: f64) -> Self {
        Self { r, z }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.r * o.r + self.z * o.z
    }

    /// z-component of the planar cross product.
    pub fn cross(self, o: Point) -> f64 {
        self.r * o.z - self.z * o.r
    }

    pub fn norm(self) -> f64 {
        self.r.hypot(self.z)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.z.is_finite()
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.r + o.r, self.z + o.z)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.r - o.r, self.z - o.z)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.r * s, self.z * s)
    }
}

impl Neg for Point {
    type Output = Point;
    fn neg(self) -> Point {
        Point::new(-self.r, -self.z)
    }
}

impl From<(f64, f64)> for Point {
    fn from((r, z): (f64, f64)) -> Self {
        Point::new(r, z)
    }
}

/// Signed area of a closed polygon (positive when counter-clockwise in (r, z)).
pub fn signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| poly[i].cross(poly[(i + 1) % n]))
        .sum::<f64>()
        * 0.5
}

pub fn centroid(poly: &[Point]) -> Point {
    let n = poly.len();
    let a = signed_area(poly);
    if a.abs() < 1e-300 {
        let s = poly.iter().fold(Point::default(), |acc, &p| acc + p);
        return s * (1.0 / n as f64);
    }
    let mut c = Point::default();
    for i in 0..n {
        let p = poly[i];
        let q = poly[(i + 1) % n];
        let w = p.cross(q);
        c = c + (p + q) * w;
    }
    c * (1.0 / (6.0 * a))
}

/// Winding number of a closed polygon around `p`.
pub fn winding_number(poly: &[Point], p: Point) -> i32 {
    let n = poly.len();
    let mut wn = 0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let side = (b - a).cross(p - a);
        if a.z <= p.z {
            if b.z > p.z && side > 0.0 {
                wn += 1;
            }
        } else if b.z <= p.z && side < 0.0 {
            wn -= 1;
        }
    }
    wn
}

pub fn point_in_polygon(poly: &[Point], p: Point) -> bool {
    winding_number(poly, p) != 0
}

/// Closest point to `p` on the segment [a, b].
pub fn project_on_segment(p: Point, a: Point, b: Point) -> Point {
    let d = b - a;
    let l2 = d.dot(d);
    if l2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(d) / l2).clamp(0.0, 1.0);
    a + d * t
}

/// Closest point to `p` on a closed polyline.
pub fn project_on_closed_polyline(poly: &[Point], p: Point) -> Point {
    let n = poly.len();
    let mut best = poly[0];
    let mut best_d = f64::INFINITY;
    for i in 0..n {
        let q = project_on_segment(p, poly[i], poly[(i + 1) % n]);
        let d = q.dist(p);
        if d < best_d {
            best_d = d;
            best = q;
        }
    }
    best
}

pub fn distance_to_closed_polyline(poly: &[Point], p: Point) -> f64 {
    project_on_closed_polyline(poly, p).dist(p)
}

/// Symmetric Hausdorff distance between two closed polylines.
///
/// Vertices of each curve are measured against the segments of the other.
pub fn hausdorff(a: &[Point], b: &[Point]) -> f64 {
    let one = |x: &[Point], y: &[Point]| {
        x.iter()
            .map(|&p| distance_to_closed_polyline(y, p))
            .fold(0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

pub fn closed_length(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| poly[i].dist(poly[(i + 1) % n])).sum()
}

/// Drops a repeated closing vertex, if any.
pub fn strip_closing(poly: &[Point]) -> &[Point] {
    if poly.len() > 1 && poly[0] == poly[poly.len() - 1] {
        &poly[..poly.len() - 1]
    } else {
        poly
    }
}

/// Resamples a closed polyline to `n` points equally spaced in arc length,
/// starting at the first vertex.
pub fn resample_closed(poly: &[Point], n: usize) -> Vec<Point> {
    let poly = strip_closing(poly);
    let m = poly.len();
    let total = closed_length(poly);
    let step = total / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut seg_len = poly[0].dist(poly[1 % m]);
    for k in 0..n {
        let s = k as f64 * step;
        while seg_start + seg_len < s && seg < m - 1 {
            seg_start += seg_len;
            seg += 1;
            seg_len = poly[seg].dist(poly[(seg + 1) % m]);
        }
        let t = if seg_len > 0.0 {
            ((s - seg_start) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let a = poly[seg];
        let b = poly[(seg + 1) % m];
        out.push(a + (b - a) * t);
    }
    out
}

fn segments_cross(a: Point, b: Point, c: Point, d: Point) -> bool {
    let d1 = (b - a).cross(c - a);
    let d2 = (b - a).cross(d - a);
    let d3 = (d - c).cross(a - c);
    let d4 = (d - c).cross(b - c);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// True when no two non-adjacent edges of the closed polygon intersect.
pub fn is_simple(poly: &[Point]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        for j in i + 2..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (c, d) = (poly[j], poly[(j + 1) % n]);
            if segments_cross(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// True when any edge of `a` crosses any edge of `b`.
pub fn polygons_intersect(a: &[Point], b: &[Point]) -> bool {
    let (na, nb) = (a.len(), b.len());
    for i in 0..na {
        for j in 0..nb {
            if segments_cross(a[i], a[(i + 1) % na], b[j], b[(j + 1) % nb]) {
                return true;
            }
        }
    }
    false
}

/// Convex hull (counter-clockwise, monotone chain).
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.r.total_cmp(&b.r).then(a.z.total_cmp(&b.z)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 {
            let k = lower.len();
            if (lower[k - 1] - lower[k - 2]).cross(p - lower[k - 2]) <= 0.0 {
                lower.pop();
            } else {
                break;
            }
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 {
            let k = upper.len();
            if (upper[k - 1] - upper[k - 2]).cross(p - upper[k - 2]) <= 0.0 {
                upper.pop();
            } else {
                break;
            }
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Half extent of a closed curve along r.
pub fn minor_radius(poly: &[Point]) -> f64 {
    let (lo, hi) = poly
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.r), hi.max(p.r))
        });
    0.5 * (hi - lo)
}

/// A closed, counter-clockwise polyline carrying an outward unit normal per vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<Point>,
    pub normals: Vec<Point>,
}

impl Contour {
    /// Builds a contour from vertices, reorienting to counter-clockwise and
    /// estimating normals from neighbouring vertices.
    pub fn from_points(points: Vec<Point>) -> Result<Self> {
        let mut points = strip_closing(&points).to_vec();
        if points.len() < 3 {
            return Err(Error::Geometry("contour needs at least 3 points".into()));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::Geometry("non-finite contour vertex".into()));
        }
        if signed_area(&points) < 0.0 {
            points.reverse();
        }
        if !is_simple(&points) {
            return Err(Error::Geometry("contour self-intersects".into()));
        }
        let n = points.len();
        let normals = (0..n)
            .map(|i| {
                let t = points[(i + 1) % n] - points[(i + n - 1) % n];
                Point::new(t.z, -t.r) * (1.0 / t.norm())
            })
            .collect();
        Ok(Self { points, normals })
    }

    /// Builds a contour with caller-supplied outward normals.
    pub fn with_normals(points: Vec<Point>, normals: Vec<Point>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::Dimension("contour normals".into()));
        }
        let c = Self::from_points(points.clone())?;
        if c.points[0] != points[0] || c.points[1] != points[1] {
            return Err(Error::Geometry(
                "contour with explicit normals must be counter-clockwise".into(),
            ));
        }
        Ok(Self {
            points: c.points,
            normals,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(&self.points, p)
    }

    /// Trapezoid-rule arc-length weight of each vertex.
    pub fn arc_weights(&self) -> Vec<f64> {
        let n = self.points.len();
        (0..n)
            .map(|i| {
                0.5 * (self.points[i].dist(self.points[(i + 1) % n])
                    + self.points[i].dist(self.points[(i + n - 1) % n]))
            })
            .collect()
    }

    /// Smooth contour lying `distance` inside the convex hull of `sensors`,
    /// resampled to `count` points.
    ///
    /// The hull is low-pass filtered (Fourier modes up to `SMOOTH_MODES`) before
    /// offsetting so that normals are continuous.
    pub fn offset_inside_hull(sensors: &[Point], distance: f64, count: usize) -> Result<Self> {
        const SMOOTH_MODES: usize = 8;
        const DENSE: usize = 1024;
        if count < 8 {
            return Err(Error::Config("contour needs at least 8 points".into()));
        }
        let hull = convex_hull(sensors);
        if hull.len() < 3 {
            return Err(Error::Geometry("sensor hull is degenerate".into()));
        }
        let dense = resample_closed(&hull, DENSE);
        let smooth = fourier_lowpass(&dense, SMOOTH_MODES);
        let n = smooth.len();
        let offset: Vec<Point> = (0..n)
            .map(|i| {
                let t = smooth[(i + 1) % n] - smooth[(i + n - 1) % n];
                let nrm = Point::new(t.z, -t.r) * (1.0 / t.norm());
                smooth[i] - nrm * distance
            })
            .collect();
        if !is_simple(&resample_closed(&offset, 256)) {
            return Err(Error::Geometry(
                "offset distance too large for the sensor hull".into(),
            ));
        }
        Self::from_points(resample_closed(&offset, count))
    }
}

/// Keeps the Fourier modes |k| <= `modes` of a closed curve sampled uniformly.
fn fourier_lowpass(points: &[Point], modes: usize) -> Vec<Point> {
    let n = points.len();
    let mut coeffs = Vec::with_capacity(2 * modes + 1);
    for k in -(modes as i64)..=(modes as i64) {
        let (mut cr, mut ci, mut zr, mut zi) = (0.0, 0.0, 0.0, 0.0);
        for (j, p) in points.iter().enumerate() {
            let th = -2.0 * PI * k as f64 * j as f64 / n as f64;
            let (s, c) = th.sin_cos();
            cr += p.r * c;
            ci += p.r * s;
            zr += p.z * c;
            zi += p.z * s;
        }
        coeffs.push((
            k,
            cr / n as f64,
            ci / n as f64,
            zr / n as f64,
            zi / n as f64,
        ));
    }
    (0..n)
        .map(|j| {
            let mut p = Point::default();
            for &(k, cr, ci, zr, zi) in &coeffs {
                let th = 2.0 * PI * k as f64 * j as f64 / n as f64;
                let (s, c) = th.sin_cos();
                p.r += cr * c - ci * s;
                p.z += zr * c - zi * s;
            }
            p
        })
        .collect()
}
