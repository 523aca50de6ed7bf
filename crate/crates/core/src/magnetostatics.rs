//! Flux and field of axisymmetric circular current filaments.
//!
//! The flux of a filament of current `I` at `(r_f, z_f)` is
//!
//! ```text
//! psi = mu0 I / pi * sqrt(r r_f) / k * [(1 - k^2/2) K(k^2) - E(k^2)],
//! k^2 = 4 r r_f / ((r + r_f)^2 + (z - z_f)^2)
//! ```
//!
//! and the field follows from `B = (1/r) (-dpsi/dz, dpsi/dr)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

pub const MU0: f64 = 4.0e-7 * PI;

/// Minimum distance between an evaluation point and a filament circle.
pub const FILAMENT_GUARD: f64 = 1e-10;

/// Complete elliptic integrals `(K, E)` of parameter `k2 = k^2`.
pub fn ellip_ke(k2: f64) -> Result<(f64, f64)> {
    if !(0.0..1.0 - 1e-15).contains(&k2) {
        return Err(Error::Domain(format!(
            "elliptic parameter k^2 = {k2} outside [0, 1)"
        )));
    }
    Ok(ellip_ke_complement(1.0 - k2))
}

/// `(K, E)` from the complementary parameter `1 - k^2`, accurate near `k^2 = 1`.
fn ellip_ke_complement(m1: f64) -> (f64, f64) {
    let mut a = 1.0f64;
    let mut b = m1.sqrt();
    let mut c = (1.0 - m1).max(0.0).sqrt();
    let mut pow = 0.5;
    let mut sum = pow * c * c;
    for _ in 0..64 {
        if c.abs() <= f64::EPSILON * a {
            break;
        }
        let an = 0.5 * (a + b);
        let bn = (a * b).sqrt();
        c = 0.5 * (a - b);
        a = an;
        b = bn;
        pow *= 2.0;
        sum += pow * c * c;
    }
    let k = PI / (2.0 * a);
    (k, k * (1.0 - sum))
}

/// `(1 - m/2) K(m) - E(m)`, the bracket of the loop flux, without cancellation
/// at small `m`.
fn loop_bracket(m: f64, m1: f64) -> f64 {
    if m < 0.05 {
        // coefficient of m^n is c_{n-1} (n-1)/(2n), c_j = ((2j-1)!!/(2j)!!)^2
        let mut c_prev = 1.0; // c_1 = 1/4 after the first update
        let mut mn = m;
        let mut sum = 0.0;
        for n in 2..60 {
            let j = (n - 1) as f64;
            c_prev *= ((2.0 * j - 1.0) / (2.0 * j)).powi(2);
            mn *= m;
            let term = c_prev * (n as f64 - 1.0) / (2.0 * n as f64) * mn;
            sum += term;
            if term.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        0.5 * PI * sum
    } else {
        let (k, e) = ellip_ke_complement(m1);
        (1.0 - 0.5 * m) * k - e
    }
}

/// A toroidal current filament.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Filament {
    pub r: f64,
    pub z: f64,
    pub current: f64,
}

impl Filament {
    pub fn new(r: f64, z: f64, current: f64) -> Self {
        Self { r, z, current }
    }

    pub fn position(&self) -> Point {
        Point::new(self.r, self.z)
    }
}

struct LoopGeom {
    m: f64,
    m1: f64,
    beta2: f64,
    alpha2: f64,
}

fn loop_geom(f: &Filament, p: Point) -> Result<LoopGeom> {
    let dz = p.z - f.z;
    let alpha2 = (f.r - p.r).powi(2) + dz * dz;
    if alpha2.sqrt() <= FILAMENT_GUARD {
        return Err(Error::FilamentSingularity { r: p.r, z: p.z });
    }
    let beta2 = (f.r + p.r).powi(2) + dz * dz;
    Ok(LoopGeom {
        m: 4.0 * f.r * p.r / beta2,
        m1: alpha2 / beta2,
        beta2,
        alpha2,
    })
}

/// Poloidal flux of one filament at `p` [Wb].
pub fn psi_filament(f: &Filament, p: Point) -> Result<f64> {
    if p.r <= 0.0 {
        return Ok(0.0);
    }
    let g = loop_geom(f, p)?;
    let k = g.m.sqrt();
    Ok(MU0 * f.current / PI * (p.r * f.r).sqrt() / k * loop_bracket(g.m, g.m1))
}

/// Poloidal field `(B_r, B_z)` of one filament at `p` [T].
pub fn b_filament(f: &Filament, p: Point) -> Result<(f64, f64)> {
    let g = loop_geom(f, p)?;
    let (k, e) = ellip_ke_complement(g.m1);
    let beta = g.beta2.sqrt();
    let dz = p.z - f.z;
    let rho2 = p.r * p.r + dz * dz;
    let pre = MU0 * f.current / (2.0 * PI * g.alpha2 * beta);
    let bz = pre * ((f.r * f.r - rho2) * e + g.alpha2 * k);
    let br = if p.r.abs() < 1e-12 {
        0.0
    } else {
        pre * dz / p.r * ((f.r * f.r + rho2) * e - g.alpha2 * k)
    };
    Ok((br, bz))
}

/// Flux and its gradient `(psi, dpsi/dr, dpsi/dz)` of one filament.
pub fn psi_grad_filament(f: &Filament, p: Point) -> Result<(f64, f64, f64)> {
    let psi = psi_filament(f, p)?;
    let (br, bz) = b_filament(f, p)?;
    Ok((psi, p.r * bz, -p.r * br))
}

/// A filament of a coil description, carrying `turns` times the coil current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoilFilament {
    pub r: f64,
    pub z: f64,
    #[serde(default = "one")]
    pub turns: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coil {
    pub label: String,
    pub filaments: Vec<CoilFilament>,
}

/// Geometry of the poloidal field coils, without currents.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CoilGeometry {
    #[serde(default)]
    pub coils: Vec<Coil>,
}

impl CoilGeometry {
    /// Assigns a current to every coil. Extra labels in `currents` are ignored.
    pub fn energize(&self, currents: &BTreeMap<String, f64>) -> Result<CoilSet> {
        let mut set = CoilSet::default();
        for coil in &self.coils {
            let current = *currents
                .get(&coil.label)
                .ok_or_else(|| Error::MissingCurrent(coil.label.clone()))?;
            let start = set.filaments.len();
            set.filaments.extend(
                coil.filaments
                    .iter()
                    .map(|f| Filament::new(f.r, f.z, f.turns * current)),
            );
            set.labels
                .push((coil.label.clone(), start..set.filaments.len()));
        }
        Ok(set)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.coils.iter().map(|c| c.label.as_str())
    }
}

/// Energized coils: filaments with currents, grouped by coil label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoilSet {
    pub filaments: Vec<Filament>,
    pub labels: Vec<(String, Range<usize>)>,
}

impl CoilSet {
    pub fn from_filaments(label: &str, filaments: Vec<Filament>) -> Self {
        let n = filaments.len();
        Self {
            filaments,
            labels: vec![(label.to_string(), 0..n)],
        }
    }

    pub fn is_empty(&self) -> bool {
        self.filaments.is_empty()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut s = self.clone();
        for f in &mut s.filaments {
            f.current *= alpha;
        }
        s
    }

    pub fn merged(&self, other: &CoilSet) -> Self {
        let mut s = self.clone();
        let off = s.filaments.len();
        s.filaments.extend_from_slice(&other.filaments);
        s.labels.extend(
            other
                .labels
                .iter()
                .map(|(l, r)| (l.clone(), r.start + off..r.end + off)),
        );
        s
    }
}

pub fn psi_coils(coils: &CoilSet, p: Point) -> Result<f64> {
    coils.filaments.iter().map(|f| psi_filament(f, p)).sum()
}

pub fn b_coils(coils: &CoilSet, p: Point) -> Result<(f64, f64)> {
    let mut acc = (0.0, 0.0);
    for f in &coils.filaments {
        let (br, bz) = b_filament(f, p)?;
        acc.0 += br;
        acc.1 += bz;
    }
    Ok(acc)
}

/// `(psi, dpsi/dr, dpsi/dz)` summed over all filaments.
pub fn psi_grad_coils(coils: &CoilSet, p: Point) -> Result<(f64, f64, f64)> {
    let mut acc = (0.0, 0.0, 0.0);
    for f in &coils.filaments {
        let (a, b, c) = psi_grad_filament(f, p)?;
        acc.0 += a;
        acc.1 += b;
        acc.2 += c;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ke_at_zero_modulus() {
        let (k, e) = ellip_ke(0.0).unwrap();
        assert!((k - PI / 2.0).abs() < 1e-15);
        assert!((e - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn e_tends_to_one() {
        let (_, e) = ellip_ke(1.0 - 1e-12).unwrap();
        assert!((e - 1.0).abs() < 1e-5);
    }

    #[test]
    fn ke_domain() {
        assert!(ellip_ke(-0.1).is_err());
        assert!(ellip_ke(1.0).is_err());
    }

    #[test]
    fn bracket_series_matches_agm() {
        for &m in &[0.01, 0.03, 0.049] {
            let (k, e) = ellip_ke_complement(1.0 - m);
            let direct = (1.0 - 0.5 * m) * k - e;
            let series = loop_bracket(m, 1.0 - m);
            assert!((direct - series).abs() < 1e-12 * series.abs() + 1e-15);
        }
    }

    #[test]
    fn flux_vanishes_on_axis() {
        let f = Filament::new(1.5, 0.3, 1e5);
        assert_eq!(psi_filament(&f, Point::new(0.0, 0.7)).unwrap(), 0.0);
        // O(r^2) near the axis
        let a = psi_filament(&f, Point::new(1e-3, 0.7)).unwrap();
        let b = psi_filament(&f, Point::new(2e-3, 0.7)).unwrap();
        assert!((b / a - 4.0).abs() < 1e-4);
    }

    #[test]
    fn mirror_symmetry() {
        let f = Filament::new(2.0, 0.1, 3e5);
        let a = psi_filament(&f, Point::new(2.4, 0.1 + 0.35)).unwrap();
        let b = psi_filament(&f, Point::new(2.4, 0.1 - 0.35)).unwrap();
        assert!((a - b).abs() < 1e-14 * a.abs());
        let (br, _) = b_filament(&f, Point::new(2.7, 0.1)).unwrap();
        assert!(br.abs() < 1e-18);
    }

    #[test]
    fn on_filament_is_an_error() {
        let f = Filament::new(2.0, 0.0, 1.0);
        assert!(matches!(
            psi_filament(&f, Point::new(2.0, 0.0)),
            Err(Error::FilamentSingularity { .. })
        ));
    }

    #[test]
    fn missing_current() {
        let geo = CoilGeometry {
            coils: vec![Coil {
                label: "PF1".into(),
                filaments: vec![CoilFilament {
                    r: 1.0,
                    z: 1.0,
                    turns: 2.0,
                }],
            }],
        };
        assert!(matches!(
            geo.energize(&BTreeMap::new()),
            Err(Error::MissingCurrent(_))
        ));
        let set = geo
            .energize(&BTreeMap::from([("PF1".to_string(), 10.0)]))
            .unwrap();
        assert_eq!(set.filaments[0].current, 20.0);
        assert_eq!(set.labels[0].1, 0..1);
    }
}
