//! Toroidal coordinates, half-integer-degree Legendre functions of order one,
//! and the truncated toroidal-harmonic expansion of the vacuum flux.
//!
//! Coordinates about a pole `(r0, z0)`:
//!
//! ```text
//! r      = r0 sinh(zeta) / (cosh(zeta) - cos(eta))
//! z - z0 = r0 sin(eta)   / (cosh(zeta) - cos(eta))
//! ```
//!
//! The expansion is
//!
//! ```text
//! psi = r0 sinh(zeta) / sqrt(cosh(zeta) - cos(eta))
//!       * sum_n (a_n cos(n eta) + b_n sin(n eta)) F_n(cosh(zeta))
//! ```
//!
//! with `F_n = Q^1_{n-1/2}` for the external part and `F_n = P^1_{n-1/2}` for the
//! internal part. Order-one functions follow the convention
//! `F^1_nu(x) = sqrt(x^2 - 1) dF_nu/dx` for `x > 1`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::magnetostatics::ellip_ke;

/// Largest truncation order accepted for either part of the expansion.
pub const MAX_ORDER: usize = 12;

const POLE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToroidalPole {
    pub r0: f64,
    pub z0: f64,
}

impl ToroidalPole {
    pub fn new(r0: f64, z0: f64) -> Result<Self> {
        if !(r0 > 0.0) || !z0.is_finite() || !r0.is_finite() {
            return Err(Error::AxisDomain { r: r0 });
        }
        Ok(Self { r0, z0 })
    }

    pub fn position(&self) -> Point {
        Point::new(self.r0, self.z0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToroidalCoords {
    pub zeta: f64,
    pub eta: f64,
}

/// Partial derivatives of `(zeta, eta)` with respect to `(r, z)`.
#[derive(Debug, Clone, Copy)]
struct Jacobian {
    zeta_r: f64,
    zeta_z: f64,
    eta_r: f64,
    eta_z: f64,
}

fn check_point(p: Point, pole: &ToroidalPole) -> Result<()> {
    if !(p.r > 0.0) {
        return Err(Error::AxisDomain { r: p.r });
    }
    if p.dist(pole.position()) < POLE_TOLERANCE {
        return Err(Error::PoleSingularity { r: p.r, z: p.z });
    }
    Ok(())
}

fn coords_and_jacobian(p: Point, pole: &ToroidalPole) -> Result<(ToroidalCoords, Jacobian)> {
    check_point(p, pole)?;
    let r0 = pole.r0;
    let dz = p.z - pole.z0;
    let d1 = (p.r + r0).powi(2) + dz * dz;
    let d2 = (p.r - r0).powi(2) + dz * dz;
    let zeta = 0.5 * (d1 / d2).ln();
    let x = p.r * p.r + dz * dz - r0 * r0;
    let y = 2.0 * r0 * dz;
    let mut eta = y.atan2(x);
    if eta < 0.0 {
        eta += TAU;
    }
    if eta >= TAU {
        eta -= TAU;
    }
    let q = d1 * d2; // x^2 + y^2
    let jac = Jacobian {
        zeta_r: (p.r + r0) / d1 - (p.r - r0) / d2,
        zeta_z: dz * (1.0 / d1 - 1.0 / d2),
        eta_r: -2.0 * p.r * y / q,
        eta_z: (2.0 * r0 * x - 2.0 * dz * y) / q,
    };
    Ok((ToroidalCoords { zeta, eta }, jac))
}

/// Toroidal coordinates of `p` about `pole`, with `eta` in `[0, 2 pi)`.
pub fn to_toroidal(p: Point, pole: &ToroidalPole) -> Result<ToroidalCoords> {
    coords_and_jacobian(p, pole).map(|(c, _)| c)
}

pub fn from_toroidal(c: ToroidalCoords, pole: &ToroidalPole) -> Result<Point> {
    if !(c.zeta > 0.0) || !c.eta.is_finite() {
        return Err(Error::Domain(format!(
            "toroidal coordinate zeta = {}",
            c.zeta
        )));
    }
    let den = c.zeta.cosh() - c.eta.cos();
    let p = Point::new(
        pole.r0 * c.zeta.sinh() / den,
        pole.z0 + pole.r0 * c.eta.sin() / den,
    );
    if !p.is_finite() {
        return Err(Error::Domain("toroidal coordinates overflow".into()));
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LegendreKind {
    /// First kind, growing in degree; used for the internal harmonics.
    P,
    /// Second kind, decaying in degree; used for the external harmonics.
    Q,
}

/// Values `F^1_{n-1/2}(x)` for `n = 0..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendreTable {
    pub values: Vec<f64>,
    /// Set when a value left the representable range (P-kind at large argument).
    pub overflow: bool,
}

fn check_argument(x: f64) -> Result<()> {
    if !(x > 1.0 + 1e-14) || !x.is_finite() {
        return Err(Error::Domain(format!(
            "Legendre argument must exceed 1, got {x}"
        )));
    }
    Ok(())
}

/// `P^1_{-1/2}` and `P^1_{1/2}` from complete elliptic integrals.
fn p_seeds(x: f64) -> Result<(f64, f64)> {
    let (k, e) = ellip_ke((x - 1.0) / (x + 1.0))?;
    let c = (2.0 * (x - 1.0)).sqrt();
    Ok(((2.0 / PI) * (e - k) / c, (2.0 / PI) * (x * e - k) / c))
}

/// `Q^1_{-1/2}` and `Q^1_{1/2}` from complete elliptic integrals.
fn q_seeds(x: f64, s: f64) -> Result<(f64, f64)> {
    let m = 2.0 / (x + 1.0);
    let (k, e) = ellip_ke(m)?;
    let km = m.sqrt();
    let q_m = km * k; // Q_{-1/2}
    let q_p = x * km * k - (2.0 / km) * e; // Q_{1/2}
    let q1_m = -e / (2.0 * (x - 1.0)).sqrt();
    let q1_p = (x * q_p - q_m) / (2.0 * s);
    Ok((q1_m, q1_p))
}

/// Forward sweep of `(n - 1/2) f_{n+1} = 2 n x f_n - (n + 1/2) f_{n-1}`.
fn forward(f0: f64, f1: f64, x: f64, n_max: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(n_max + 1);
    v.push(f0);
    if n_max >= 1 {
        v.push(f1);
    }
    for n in 1..n_max {
        let nf = n as f64;
        let next = (2.0 * nf * x * v[n] - (nf + 0.5) * v[n - 1]) / (nf - 0.5);
        v.push(next);
    }
    v
}

/// Miller backward sweep for the minimal (Q-kind) solution, normalized by `f0`.
fn backward(f0: f64, x: f64, zeta: f64, n_max: usize) -> Vec<f64> {
    let extra = (20.0 / zeta).ceil() as usize + 10;
    let start = n_max + extra;
    let mut v = vec![0.0; start + 2];
    v[start] = 1.0;
    for n in (1..=start).rev() {
        let nf = n as f64;
        v[n - 1] = (2.0 * nf * x * v[n] - (nf - 0.5) * v[n + 1]) / (nf + 0.5);
        if v[n - 1].abs() > 1e200 {
            for w in &mut v[n - 1..] {
                *w *= 1e-200;
            }
        }
    }
    let scale = f0 / v[0];
    v.truncate(n_max + 1);
    v.iter_mut().for_each(|w| *w *= scale);
    v
}

fn table_with_sinh(kind: LegendreKind, n_max: usize, x: f64, s: f64) -> Result<LegendreTable> {
    let values = match kind {
        LegendreKind::P => {
            let (p0, p1) = p_seeds(x)?;
            forward(p0, p1, x, n_max)
        }
        LegendreKind::Q => {
            let zeta = s.asinh();
            let (q0, q1) = q_seeds(x, s)?;
            // Close to x = 1 the degree recurrence barely separates P from Q,
            // so the forward sweep stays accurate and Miller would need
            // O(1/zeta) steps.
            if zeta * n_max as f64 <= 1.0 {
                forward(q0, q1, x, n_max)
            } else {
                backward(q0, x, zeta, n_max)
            }
        }
    };
    let overflow = values.iter().any(|v| !v.is_finite());
    Ok(LegendreTable { values, overflow })
}

/// `F^1_{n-1/2}(x)` for `n = 0..=n_max`.
pub fn legendre_half_table(kind: LegendreKind, n_max: usize, x: f64) -> Result<LegendreTable> {
    check_argument(x)?;
    let s = ((x - 1.0) * (x + 1.0)).sqrt();
    table_with_sinh(kind, n_max, x, s)
}

/// Associated Legendre function of order one and degree `n - 1/2`.
pub fn legendre_half(kind: LegendreKind, n: usize, x: f64) -> Result<f64> {
    let t = legendre_half_table(kind, n, x)?;
    if t.overflow {
        return Err(Error::Domain(format!("P^1_{{{n}-1/2}}({x}) overflows")));
    }
    Ok(t.values[n])
}

/// Coefficients of the truncated expansion around `pole`.
///
/// `b_e[k]` and `b_i[k]` multiply `sin((k + 1) eta)`; the `sin(0)` terms vanish
/// and are not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicCoeffs {
    pub pole: ToroidalPole,
    pub n_e: usize,
    pub n_i: usize,
    pub a_e: Vec<f64>,
    pub b_e: Vec<f64>,
    pub a_i: Vec<f64>,
    pub b_i: Vec<f64>,
}

impl HarmonicCoeffs {
    pub fn dim(n_e: usize, n_i: usize) -> usize {
        2 * n_e + 1 + 2 * n_i + 1
    }

    pub fn zeros(pole: ToroidalPole, n_e: usize, n_i: usize) -> Result<Self> {
        Self::from_vec(pole, n_e, n_i, &vec![0.0; Self::dim(n_e, n_i)])
    }

    /// Unpacks `u = (a_e[0..=n_e], b_e[1..=n_e], a_i[0..=n_i], b_i[1..=n_i])`.
    pub fn from_vec(pole: ToroidalPole, n_e: usize, n_i: usize, u: &[f64]) -> Result<Self> {
        if n_e > MAX_ORDER || n_i > MAX_ORDER {
            return Err(Error::Config(format!(
                "harmonic order above {MAX_ORDER}: n_e = {n_e}, n_i = {n_i}"
            )));
        }
        if u.len() != Self::dim(n_e, n_i) {
            return Err(Error::Dimension(format!(
                "coefficient vector has {} entries, expected {}",
                u.len(),
                Self::dim(n_e, n_i)
            )));
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite harmonic coefficient".into()));
        }
        let (a_e, rest) = u.split_at(n_e + 1);
        let (b_e, rest) = rest.split_at(n_e);
        let (a_i, b_i) = rest.split_at(n_i + 1);
        Ok(Self {
            pole,
            n_e,
            n_i,
            a_e: a_e.to_vec(),
            b_e: b_e.to_vec(),
            a_i: a_i.to_vec(),
            b_i: b_i.to_vec(),
        })
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(Self::dim(self.n_e, self.n_i));
        u.extend_from_slice(&self.a_e);
        u.extend_from_slice(&self.b_e);
        u.extend_from_slice(&self.a_i);
        u.extend_from_slice(&self.b_i);
        u
    }

    pub fn norm(&self) -> f64 {
        self.to_vec().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest magnitude among the sine coefficients.
    pub fn max_sine(&self) -> f64 {
        self.b_e
            .iter()
            .chain(&self.b_i)
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Values and gradients of every basis function of the expansion at one point,
/// in coefficient-vector order.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicBasis {
    pub psi: Vec<f64>,
    pub dpsi_dr: Vec<f64>,
    pub dpsi_dz: Vec<f64>,
}

impl HarmonicBasis {
    pub fn dot(values: &[f64], u: &[f64]) -> f64 {
        values.iter().zip(u).map(|(a, b)| a * b).sum()
    }
}

/// Evaluates all basis functions (and their gradients) at `p`.
pub fn harmonic_basis(
    pole: &ToroidalPole,
    n_e: usize,
    n_i: usize,
    p: Point,
) -> Result<HarmonicBasis> {
    let (c, jac) = coords_and_jacobian(p, pole)?;
    let (sh, ch) = (c.zeta.sinh(), c.zeta.cosh());
    let (se, ce) = c.eta.sin_cos();
    let den = ch - ce;
    let r0 = pole.r0;
    let amp = r0 * sh / den.sqrt();
    let amp_zeta = r0 * (ch / den.sqrt() - 0.5 * sh * sh / den.powf(1.5));
    let amp_eta = -0.5 * r0 * sh * se / den.powf(1.5);

    let dim = HarmonicCoeffs::dim(n_e, n_i);
    let mut basis = HarmonicBasis {
        psi: Vec::with_capacity(dim),
        dpsi_dr: Vec::with_capacity(dim),
        dpsi_dz: Vec::with_capacity(dim),
    };

    for (kind, order) in [(LegendreKind::Q, n_e), (LegendreKind::P, n_i)] {
        let table = table_with_sinh(kind, order + 1, ch, sh)?;
        if table.overflow {
            return Err(Error::Domain(format!(
                "Legendre functions overflow at zeta = {}",
                c.zeta
            )));
        }
        let f = &table.values;
        // dF_n/dzeta = sinh(zeta) F'_n(x), (x^2 - 1) F'_n = (n - 1/2) f_{n+1} - (n + 1/2) x f_n
        let df: Vec<f64> = (0..=order)
            .map(|n| {
                let nf = n as f64;
                ((nf - 0.5) * f[n + 1] - (nf + 0.5) * ch * f[n]) / sh
            })
            .collect();
        let mut push = |trig: f64, dtrig: f64, n: usize| {
            let v = amp * trig * f[n];
            let vz = amp_zeta * trig * f[n] + amp * trig * df[n];
            let ve = amp_eta * trig * f[n] + amp * dtrig * f[n];
            basis.psi.push(v);
            basis.dpsi_dr.push(vz * jac.zeta_r + ve * jac.eta_r);
            basis.dpsi_dz.push(vz * jac.zeta_z + ve * jac.eta_z);
        };
        for n in 0..=order {
            let (s, co) = (n as f64 * c.eta).sin_cos();
            push(co, -(n as f64) * s, n);
        }
        for n in 1..=order {
            let (s, co) = (n as f64 * c.eta).sin_cos();
            push(s, n as f64 * co, n);
        }
    }
    Ok(basis)
}

/// Flux of the truncated expansion at `p` [Wb].
pub fn eval_psi_th(coeffs: &HarmonicCoeffs, p: Point) -> Result<f64> {
    let b = harmonic_basis(&coeffs.pole, coeffs.n_e, coeffs.n_i, p)?;
    Ok(HarmonicBasis::dot(&b.psi, &coeffs.to_vec()))
}

/// `(dpsi/dr, dpsi/dz)` of the expansion at `p` [Wb/m].
pub fn eval_grad_psi_th(coeffs: &HarmonicCoeffs, p: Point) -> Result<(f64, f64)> {
    let b = harmonic_basis(&coeffs.pole, coeffs.n_e, coeffs.n_i, p)?;
    let u = coeffs.to_vec();
    Ok((
        HarmonicBasis::dot(&b.dpsi_dr, &u),
        HarmonicBasis::dot(&b.dpsi_dz, &u),
    ))
}

/// Poloidal field `(B_r, B_z)` of the expansion at `p` [T].
pub fn eval_b_th(coeffs: &HarmonicCoeffs, p: Point) -> Result<(f64, f64)> {
    if !(p.r > 0.0) {
        return Err(Error::AxisDomain { r: p.r });
    }
    let (dr, dz) = eval_grad_psi_th(coeffs, p)?;
    Ok((-dz / p.r, dr / p.r))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pole() -> ToroidalPole {
        ToroidalPole::new(2.4, 0.1).unwrap()
    }

    #[test]
    fn eta_zero_line() {
        let p = pole();
        let r = p.r0 * 1f64.sinh() / (1f64.cosh() - 1.0);
        let c = to_toroidal(Point::new(r, p.z0), &p).unwrap();
        assert!((c.zeta - 1.0).abs() < 1e-12);
        assert!(c.eta.abs() < 1e-12 || (c.eta - TAU).abs() < 1e-12);
    }

    #[test]
    fn eta_pi_substitution() {
        let p = pole();
        let q = from_toroidal(ToroidalCoords { zeta: 1.0, eta: PI }, &p).unwrap();
        let r = p.r0 * 1f64.sinh() / (1f64.cosh() + 1.0);
        assert!((q.r - r).abs() < 1e-14 && (q.z - p.z0).abs() < 1e-14);
    }

    #[test]
    fn large_zeta_approaches_pole() {
        let p = pole();
        for k in 0..8 {
            let eta = k as f64 * 0.8;
            let q = from_toroidal(ToroidalCoords { zeta: 30.0, eta }, &p).unwrap();
            assert!(q.dist(p.position()) < 1e-6);
        }
    }

    #[test]
    fn coordinate_errors() {
        let p = pole();
        assert!(matches!(
            to_toroidal(p.position(), &p),
            Err(Error::PoleSingularity { .. })
        ));
        assert!(matches!(
            to_toroidal(Point::new(0.0, 0.0), &p),
            Err(Error::AxisDomain { .. })
        ));
        assert!(from_toroidal(
            ToroidalCoords {
                zeta: 0.0,
                eta: 1.0
            },
            &p
        )
        .is_err());
    }

    #[test]
    fn legendre_domain() {
        assert!(legendre_half(LegendreKind::P, 2, 1.0).is_err());
        assert!(legendre_half(LegendreKind::Q, 2, 0.5).is_err());
    }

    #[test]
    fn q_branches_agree_near_switch() {
        // zeta * n_max close to 1 from either side selects different sweeps
        for &zeta in &[0.08, 0.09, 0.1] {
            let x: f64 = f64::cosh(zeta);
            let s = zeta.sinh();
            let (q0, q1) = q_seeds(x, s).unwrap();
            let fw = forward(q0, q1, x, 10);
            let bw = backward(q0, x, zeta, 10);
            for (a, b) in fw.iter().zip(&bw) {
                assert!((a - b).abs() < 1e-9 * b.abs(), "{a} {b}");
            }
        }
    }

    #[test]
    fn coefficient_vector_layout() {
        let u: Vec<f64> = (0..HarmonicCoeffs::dim(2, 3)).map(|v| v as f64).collect();
        let c = HarmonicCoeffs::from_vec(pole(), 2, 3, &u).unwrap();
        assert_eq!(c.a_e, vec![0.0, 1.0, 2.0]);
        assert_eq!(c.b_e, vec![3.0, 4.0]);
        assert_eq!(c.a_i, vec![5.0, 6.0, 7.0, 8.0]);
        assert_eq!(c.b_i, vec![9.0, 10.0, 11.0]);
        assert_eq!(c.to_vec(), u);
        assert!(HarmonicCoeffs::from_vec(pole(), 13, 0, &[0.0; 28]).is_err());
    }

    #[test]
    fn zero_expansion() {
        let c = HarmonicCoeffs::zeros(pole(), 4, 4).unwrap();
        let p = Point::new(3.0, 0.4);
        assert_eq!(eval_psi_th(&c, p).unwrap(), 0.0);
        assert_eq!(eval_grad_psi_th(&c, p).unwrap(), (0.0, 0.0));
        assert_eq!(eval_b_th(&c, p).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn field_matches_flux_relation() {
        let u: Vec<f64> = (0..HarmonicCoeffs::dim(3, 3))
            .map(|k| ((k * 7 % 5) as f64 - 2.0) * 0.1)
            .collect();
        let c = HarmonicCoeffs::from_vec(pole(), 3, 3, &u).unwrap();
        let p = Point::new(2.9, -0.3);
        let (dr, dz) = eval_grad_psi_th(&c, p).unwrap();
        let (br, bz) = eval_b_th(&c, p).unwrap();
        assert!((p.r * bz - dr).abs() < 1e-14 * dr.abs().max(1.0));
        assert!((p.r * br + dz).abs() < 1e-14 * dz.abs().max(1.0));
    }
}
