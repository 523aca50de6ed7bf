//! Independent oracles shared by the integration tests.
#![allow(dead_code, clippy::excessive_precision)]

use std::f64::consts::PI;

use tokrecon_core::fem::TriMesh;
use tokrecon_core::magnetostatics::{psi_grad_filament, Filament};
use tokrecon_core::Point;

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const GK_WK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const GK_WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WK[7] * fc;
    let mut g = GK_WG[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        k += GK_WK[i] * s;
        if i % 2 == 1 {
            g += GK_WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss-Kronrod (7/15) quadrature on `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let mut stack = vec![(a, b, gk15(&f, a, b))];
    let mut total = 0.0;
    let mut done = Vec::new();
    let whole = stack[0].2 .0.abs().max(1e-300);
    while let Some((lo, hi, (v, e))) = stack.pop() {
        // below a few ulps the estimate measures rounding, not truncation
        let floor = 50.0 * f64::EPSILON * v.abs();
        if e <= (rel_tol * whole * (hi - lo) / (b - a)).max(floor) || hi - lo < 1e-12 * (b - a) {
            done.push(v);
            continue;
        }
        let mid = 0.5 * (lo + hi);
        stack.push((lo, mid, gk15(&f, lo, mid)));
        stack.push((mid, hi, gk15(&f, mid, hi)));
    }
    done.sort_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap());
    for v in done {
        total += v;
    }
    total
}

/// `∫_0^∞ f` through `t = s / (1 - s)`.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, rel_tol: f64) -> f64 {
    integrate(
        |s| {
            if s >= 1.0 {
                return 0.0;
            }
            let t = s / (1.0 - s);
            f(t) / ((1.0 - s) * (1.0 - s))
        },
        0.0,
        1.0,
        rel_tol,
    )
}

/// `P^1_nu(x) = sqrt(x^2-1) d/dx P_nu(x)` from Laplace's integral
/// `P_nu(x) = (1/pi) ∫_0^pi (x + s cos t)^nu dt`, differentiated under the
/// integral sign.
pub fn p1_quadrature(nu: f64, x: f64) -> f64 {
    let s = (x * x - 1.0).sqrt();
    nu / PI
        * integrate(
            |t| (x + s * t.cos()).powf(nu - 1.0) * (s + x * t.cos()),
            0.0,
            PI,
            1e-13,
        )
}

/// `Q^1_nu(x) = sqrt(x^2-1) d/dx Q_nu(x)` from Heine's integral
/// `Q_nu(x) = ∫_0^∞ (x + s cosh t)^(-nu-1) dt`.
pub fn q1_quadrature(nu: f64, x: f64) -> f64 {
    let s = (x * x - 1.0).sqrt();
    -(nu + 1.0)
        * integrate_half_line(
            |t| {
                let w = x + s * t.cosh();
                if !w.is_finite() {
                    return 0.0;
                }
                w.powf(-nu - 2.0) * (s + x * t.cosh())
            },
            1e-13,
        )
}

/// Sum of filament fluxes with gradient, the manufactured vacuum solution.
pub fn filament_field(fils: &[Filament], p: Point) -> (f64, f64, f64) {
    let mut acc = (0.0, 0.0, 0.0);
    for f in fils {
        let (a, b, c) = psi_grad_filament(f, p).unwrap();
        acc.0 += a;
        acc.1 += b;
        acc.2 += c;
    }
    acc
}

pub fn filament_psi(fils: &[Filament], p: Point) -> f64 {
    filament_field(fils, p).0
}

// Degree-4 six-point rule on the reference triangle.
const TRI_W: [f64; 6] = [
    0.223381589678011,
    0.223381589678011,
    0.223381589678011,
    0.109951743655322,
    0.109951743655322,
    0.109951743655322,
];
const TRI_A: [f64; 2] = [0.445948490915965, 0.091576213509771];

fn tri_points() -> [[f64; 3]; 6] {
    let (a, b) = (TRI_A[0], TRI_A[1]);
    [
        [a, a, 1.0 - 2.0 * a],
        [a, 1.0 - 2.0 * a, a],
        [1.0 - 2.0 * a, a, a],
        [b, b, 1.0 - 2.0 * b],
        [b, 1.0 - 2.0 * b, b],
        [1.0 - 2.0 * b, b, b],
    ]
}

/// `(∫ (u_h − u)², ∫ u²)^{1/2}` over the mesh.
pub fn l2_error<F: Fn(Point) -> f64>(mesh: &TriMesh, values: &[f64], exact: F) -> (f64, f64) {
    let mut err = 0.0;
    let mut norm = 0.0;
    for t in &mesh.triangles {
        let p = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
        let area = 0.5 * (p[1] - p[0]).cross(p[2] - p[0]);
        for (w, l) in TRI_W.iter().zip(tri_points()) {
            let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
            let uh = values[t[0]] * l[0] + values[t[1]] * l[1] + values[t[2]] * l[2];
            let u = exact(x);
            err += w * area * (uh - u).powi(2);
            norm += w * area * u * u;
        }
    }
    (err.sqrt(), norm.sqrt())
}

/// Discrete L2 norm on a boundary loop given by node indices.
pub fn boundary_l2(points: &[Point], values: &[f64]) -> f64 {
    let n = points.len();
    let mut s = 0.0;
    for k in 0..n {
        let j = (k + 1) % n;
        let len = points[k].dist(points[j]);
        s += len / 3.0 * (values[k].powi(2) + values[k] * values[j] + values[j].powi(2));
    }
    s.sqrt()
}
