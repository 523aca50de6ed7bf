//! Least-squares fit of the toroidal-harmonic expansion to magnetic
//! measurements, Cauchy data on the outer contour, and the plasma current
//! center from contour moments.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, point_in_polygon, Contour, Point};
use crate::magnetostatics::{psi_grad_coils, CoilGeometry, CoilSet, MU0};
use crate::toroidal_harmonics::{harmonic_basis, HarmonicBasis, HarmonicCoeffs, ToroidalPole};

/// Condition number above which the fit is refused.
pub const MAX_CONDITION: f64 = 1e12;

/// Default plasma-current threshold of [`current_center`] [A].
pub const DEFAULT_MIN_CURRENT: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagneticProbe {
    pub pos: Point,
    pub dir: Point,
}

impl MagneticProbe {
    pub fn new(pos: Point, dir: Point) -> Result<Self> {
        if (dir.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "probe direction must be a unit vector, |d| = {}",
                dir.norm()
            )));
        }
        Ok(Self { pos, dir })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxLoop {
    pub pos: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddleLoop {
    pub pos1: Point,
    pub pos2: Point,
}

/// The magnetic diagnostics of a machine.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorSet {
    #[serde(default)]
    pub probes: Vec<MagneticProbe>,
    #[serde(default)]
    pub flux_loops: Vec<FluxLoop>,
    #[serde(default)]
    pub saddle_loops: Vec<SaddleLoop>,
}

impl SensorSet {
    pub fn len(&self) -> usize {
        self.probes.len() + self.flux_loops.len() + self.saddle_loops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn positions(&self) -> Vec<Point> {
        let mut v: Vec<Point> = self.probes.iter().map(|p| p.pos).collect();
        v.extend(self.flux_loops.iter().map(|l| l.pos));
        for s in &self.saddle_loops {
            v.push(s.pos1);
            v.push(s.pos2);
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Config("machine has no sensors".into()));
        }
        for p in &self.probes {
            MagneticProbe::new(p.pos, p.dir)?;
        }
        for l in &self.flux_loops {
            if !(l.pos.r > 0.0) {
                return Err(Error::AxisDomain { r: l.pos.r });
            }
        }
        for s in &self.saddle_loops {
            if s.pos1 == s.pos2 {
                return Err(Error::Config("saddle loop with coincident points".into()));
            }
        }
        Ok(())
    }

    /// Readings of a field given as `p -> (psi, dpsi/dr, dpsi/dz)`.
    pub fn readings<F>(&self, mut field: F) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)>
    where
        F: FnMut(Point) -> Result<(f64, f64, f64)>,
    {
        let b = self
            .probes
            .iter()
            .map(|pr| {
                let (_, dr, dz) = field(pr.pos)?;
                Ok((-dz * pr.dir.r + dr * pr.dir.z) / pr.pos.r)
            })
            .collect::<Result<Vec<_>>>()?;
        let f = self
            .flux_loops
            .iter()
            .map(|l| field(l.pos).map(|v| v.0))
            .collect::<Result<Vec<_>>>()?;
        let s = self
            .saddle_loops
            .iter()
            .map(|s| Ok(field(s.pos1)?.0 - field(s.pos2)?.0))
            .collect::<Result<Vec<_>>>()?;
        Ok((b, f, s))
    }
}

/// Assumed measurement errors per sensor type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Sigmas {
    pub b: f64,
    pub f: f64,
    pub s: f64,
}

impl Sigmas {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0 && self.f > 0.0 && self.s > 0.0) {
            return Err(Error::Config("measurement sigmas must be positive".into()));
        }
        Ok(())
    }
}

impl Default for Sigmas {
    fn default() -> Self {
        Self {
            b: 2.0e-3,
            f: 1.0e-3,
            s: 1.0e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub b_values: Vec<f64>,
    pub f_values: Vec<f64>,
    pub s_values: Vec<f64>,
    pub sigmas: Sigmas,
}

impl MeasurementSet {
    pub fn check_against(&self, sensors: &SensorSet) -> Result<()> {
        if self.b_values.len() != sensors.probes.len()
            || self.f_values.len() != sensors.flux_loops.len()
            || self.s_values.len() != sensors.saddle_loops.len()
        {
            return Err(Error::Dimension(format!(
                "measurement counts ({}, {}, {}) do not match sensors ({}, {}, {})",
                self.b_values.len(),
                self.f_values.len(),
                self.s_values.len(),
                sensors.probes.len(),
                sensors.flux_loops.len(),
                sensors.saddle_loops.len()
            )));
        }
        if self
            .b_values
            .iter()
            .chain(&self.f_values)
            .chain(&self.s_values)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Domain("non-finite measurement".into()));
        }
        self.sigmas.validate()
    }

    /// All values in sensor order: probes, flux loops, saddle loops.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = self.b_values.clone();
        v.extend_from_slice(&self.f_values);
        v.extend_from_slice(&self.s_values);
        v
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let sc = |v: &Vec<f64>| v.iter().map(|x| x * alpha).collect();
        Self {
            b_values: sc(&self.b_values),
            f_values: sc(&self.f_values),
            s_values: sc(&self.s_values),
            sigmas: self.sigmas,
        }
    }
}

/// Removes the known coil contributions from the readings.
pub fn subtract_coil_contributions(
    meas: &MeasurementSet,
    sensors: &SensorSet,
    coils: &CoilGeometry,
    currents: &BTreeMap<String, f64>,
) -> Result<MeasurementSet> {
    meas.check_against(sensors)?;
    let set = coils.energize(currents)?;
    subtract_coil_set(meas, sensors, &set)
}

pub fn subtract_coil_set(
    meas: &MeasurementSet,
    sensors: &SensorSet,
    coils: &CoilSet,
) -> Result<MeasurementSet> {
    let (b, f, s) = sensors.readings(|p| psi_grad_coils(coils, p))?;
    let sub = |m: &[f64], c: &[f64]| m.iter().zip(c).map(|(a, b)| a - b).collect();
    Ok(MeasurementSet {
        b_values: sub(&meas.b_values, &b),
        f_values: sub(&meas.f_values, &f),
        s_values: sub(&meas.s_values, &s),
        sigmas: meas.sigmas,
    })
}

/// Weighted design matrix mapping coefficients to model predictions.
///
/// Row `i` holds the prediction of measurement `i` per unit coefficient,
/// divided by the sigma of its sensor type.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub matrix: DMatrix<f64>,
    pub pole: ToroidalPole,
    pub n_e: usize,
    pub n_i: usize,
    pub sigmas: Sigmas,
    pub counts: [usize; 3],
}

pub fn pole_inside_hull(sensors: &SensorSet, pole: &ToroidalPole) -> bool {
    let hull = convex_hull(&sensors.positions());
    hull.len() >= 3 && point_in_polygon(&hull, pole.position())
}

pub fn build_design_matrix(
    sensors: &SensorSet,
    pole: ToroidalPole,
    n_e: usize,
    n_i: usize,
    sigmas: Sigmas,
) -> Result<DesignMatrix> {
    sigmas.validate()?;
    if !pole_inside_hull(sensors, &pole) {
        return Err(Error::PoleOutsideHull {
            r: pole.r0,
            z: pole.z0,
        });
    }
    let cols = HarmonicCoeffs::dim(n_e, n_i);
    HarmonicCoeffs::zeros(pole, n_e, n_i)?;
    let rows = sensors.len();
    let mut m = DMatrix::zeros(rows, cols);
    let basis = |p: Point| harmonic_basis(&pole, n_e, n_i, p);
    let mut row = 0;
    for pr in &sensors.probes {
        let b = basis(pr.pos)?;
        for j in 0..cols {
            let bn = (-b.dpsi_dz[j] * pr.dir.r + b.dpsi_dr[j] * pr.dir.z) / pr.pos.r;
            m[(row, j)] = bn / sigmas.b;
        }
        row += 1;
    }
    for l in &sensors.flux_loops {
        let b = basis(l.pos)?;
        for j in 0..cols {
            m[(row, j)] = b.psi[j] / sigmas.f;
        }
        row += 1;
    }
    for s in &sensors.saddle_loops {
        let b1 = basis(s.pos1)?;
        let b2 = basis(s.pos2)?;
        for j in 0..cols {
            m[(row, j)] = (b1.psi[j] - b2.psi[j]) / sigmas.s;
        }
        row += 1;
    }
    Ok(DesignMatrix {
        matrix: m,
        pole,
        n_e,
        n_i,
        sigmas,
        counts: [
            sensors.probes.len(),
            sensors.flux_loops.len(),
            sensors.saddle_loops.len(),
        ],
    })
}

impl DesignMatrix {
    /// Weighted right-hand side for a measurement set.
    pub fn weighted_rhs(&self, meas: &MeasurementSet) -> Result<DVector<f64>> {
        let [nb, nf, ns] = self.counts;
        if meas.b_values.len() != nb || meas.f_values.len() != nf || meas.s_values.len() != ns {
            return Err(Error::Dimension("measurements vs design matrix".into()));
        }
        let mut y = Vec::with_capacity(nb + nf + ns);
        y.extend(meas.b_values.iter().map(|v| v / self.sigmas.b));
        y.extend(meas.f_values.iter().map(|v| v / self.sigmas.f));
        y.extend(meas.s_values.iter().map(|v| v / self.sigmas.s));
        Ok(DVector::from_vec(y))
    }

    fn row_sigma(&self, i: usize) -> f64 {
        let [nb, nf, _] = self.counts;
        if i < nb {
            self.sigmas.b
        } else if i < nb + nf {
            self.sigmas.f
        } else {
            self.sigmas.s
        }
    }

    /// Unweighted model predictions for coefficient vector `u`.
    pub fn predict(&self, u: &[f64]) -> Vec<f64> {
        let mu = &self.matrix * DVector::from_column_slice(u);
        mu.iter()
            .enumerate()
            .map(|(i, v)| v * self.row_sigma(i))
            .collect()
    }
}

/// Optimal coefficients and fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub coeffs: HarmonicCoeffs,
    /// Prediction minus measurement, per sensor, in physical units.
    pub residuals: Vec<f64>,
    pub rms_b: f64,
    pub rms_f: f64,
    pub rms_s: f64,
    pub condition: f64,
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }
}

/// Minimizes the weighted misfit with a column-equilibrated SVD.
pub fn fit_coefficients(m: &DesignMatrix, meas: &MeasurementSet) -> Result<FitResult> {
    let a = &m.matrix;
    let (rows, cols) = a.shape();
    if rows < cols {
        return Err(Error::RankDeficient {
            rank: rows,
            cols,
            condition: f64::INFINITY,
        });
    }
    let y = m.weighted_rhs(meas)?;
    let scale: Vec<f64> = (0..cols)
        .map(|j| {
            let n = a.column(j).norm();
            if n > 0.0 {
                1.0 / n
            } else {
                1.0
            }
        })
        .collect();
    let mut a_s = a.clone();
    for (j, s) in scale.iter().enumerate() {
        a_s.column_mut(j).scale_mut(*s);
    }
    let svd = a_s.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    let smin = sv.min();
    let condition = if smin > 0.0 {
        smax / smin
    } else {
        f64::INFINITY
    };
    if !(condition <= MAX_CONDITION) {
        let rank = sv.iter().filter(|&&s| s > smax / MAX_CONDITION).count();
        return Err(Error::RankDeficient {
            rank,
            cols,
            condition,
        });
    }
    let us = svd
        .solve(&y, 0.0)
        .map_err(|e| Error::SingularMatrix(e.to_string()))?;
    let u: Vec<f64> = us.iter().zip(&scale).map(|(v, s)| v * s).collect();
    let coeffs = HarmonicCoeffs::from_vec(m.pole, m.n_e, m.n_i, &u)?;
    let pred = m.predict(&u);
    let residuals: Vec<f64> = pred
        .iter()
        .zip(meas.stacked())
        .map(|(p, v)| p - v)
        .collect();
    let [nb, nf, _] = m.counts;
    Ok(FitResult {
        coeffs,
        rms_b: rms(&residuals[..nb]),
        rms_f: rms(&residuals[nb..nb + nf]),
        rms_s: rms(&residuals[nb + nf..]),
        residuals,
        condition,
    })
}

/// Dirichlet and weighted Neumann data on the outer contour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyData {
    pub contour: Contour,
    /// Flux at each contour point [Wb].
    pub f: Vec<f64>,
    /// `(1/r) dpsi/dn` with the outward normal [T].
    pub g: Vec<f64>,
    /// Derivative of the flux along the counter-clockwise tangent [Wb/m].
    pub dfds: Vec<f64>,
}

impl CauchyData {
    /// Samples a field given as `p -> (psi, dpsi/dr, dpsi/dz)` on `contour`.
    pub fn from_field<F>(contour: &Contour, mut field: F) -> Result<Self>
    where
        F: FnMut(Point) -> Result<(f64, f64, f64)>,
    {
        let n = contour.len();
        let (mut f, mut g, mut dfds) = (
            Vec::with_capacity(n),
            Vec::with_capacity(n),
            Vec::with_capacity(n),
        );
        for (p, nrm) in contour.points.iter().zip(&contour.normals) {
            let (psi, dr, dz) = field(*p)?;
            f.push(psi);
            g.push((dr * nrm.r + dz * nrm.z) / p.r);
            dfds.push(-dr * nrm.z + dz * nrm.r);
        }
        Ok(Self {
            contour: contour.clone(),
            f,
            g,
            dfds,
        })
    }
}

/// Flux of the fitted expansion plus the coils, with its gradient.
pub fn total_field(coeffs: &HarmonicCoeffs, coils: &CoilSet, p: Point) -> Result<(f64, f64, f64)> {
    let b = harmonic_basis(&coeffs.pole, coeffs.n_e, coeffs.n_i, p)?;
    let u = coeffs.to_vec();
    let (pc, drc, dzc) = psi_grad_coils(coils, p)?;
    Ok((
        HarmonicBasis::dot(&b.psi, &u) + pc,
        HarmonicBasis::dot(&b.dpsi_dr, &u) + drc,
        HarmonicBasis::dot(&b.dpsi_dz, &u) + dzc,
    ))
}

pub fn eval_cauchy(
    coeffs: &HarmonicCoeffs,
    coils: &CoilSet,
    contour: &Contour,
) -> Result<CauchyData> {
    CauchyData::from_field(contour, |p| total_field(coeffs, coils, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentCenter {
    pub r_c: f64,
    pub z_c: f64,
    pub ip: f64,
}

impl CurrentCenter {
    pub fn position(&self) -> Point {
        Point::new(self.r_c, self.z_c)
    }
}

/// Plasma current and current center from contour moments of the field.
///
/// With `B_s` the field along the clockwise tangent and `B_n` the outward
/// normal field:
///
/// ```text
/// mu0 I_p         = ∮ B_s ds
/// mu0 z_c I_p     = ∮ (-r ln r B_n + z B_s) ds
/// mu0 r_c^2 I_p   = ∮ (2 r z B_n + r^2 B_s) ds
/// ```
pub fn current_center(cauchy: &CauchyData, min_current: f64) -> Result<CurrentCenter> {
    let c = &cauchy.contour;
    let w = c.arc_weights();
    let (mut i0, mut iz, mut ir2) = (0.0, 0.0, 0.0);
    for k in 0..c.len() {
        let p = c.points[k];
        let bs = -cauchy.g[k];
        let bn = -cauchy.dfds[k] / p.r;
        i0 += w[k] * bs;
        iz += w[k] * (-p.r * p.r.ln() * bn + p.z * bs);
        ir2 += w[k] * (2.0 * p.r * p.z * bn + p.r * p.r * bs);
    }
    let ip = i0 / MU0;
    if !(ip.abs() >= min_current) {
        return Err(Error::ZeroCurrent {
            ip,
            threshold: min_current,
        });
    }
    let z_c = iz / i0;
    let r2 = ir2 / i0;
    if !(r2 > 0.0) {
        return Err(Error::Geometry(format!(
            "current center moment r_c^2 = {r2} is not positive"
        )));
    }
    let cc = CurrentCenter {
        r_c: r2.sqrt(),
        z_c,
        ip,
    };
    if !c.contains(cc.position()) {
        return Err(Error::Geometry(format!(
            "current center ({}, {}) lies outside the contour",
            cc.r_c, cc.z_c
        )));
    }
    Ok(cc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnetostatics::{Coil, CoilFilament};

    fn ring_sensors() -> SensorSet {
        let mut s = SensorSet::default();
        for k in 0..24 {
            let t = std::f64::consts::TAU * k as f64 / 24.0;
            let pos = Point::new(2.5 + 0.8 * t.cos(), 0.8 * t.sin());
            s.probes.push(MagneticProbe {
                pos,
                dir: Point::new(-t.sin(), t.cos()),
            });
            if k % 2 == 0 {
                s.flux_loops.push(FluxLoop { pos });
            }
        }
        s
    }

    #[test]
    fn pole_outside_hull_rejected() {
        let s = ring_sensors();
        let pole = ToroidalPole::new(4.0, 0.0).unwrap();
        assert!(matches!(
            build_design_matrix(&s, pole, 2, 2, Sigmas::default()),
            Err(Error::PoleOutsideHull { .. })
        ));
    }

    #[test]
    fn probe_direction_must_be_unit() {
        assert!(MagneticProbe::new(Point::new(1.0, 0.0), Point::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn zero_coil_currents_leave_measurements() {
        let s = ring_sensors();
        let meas = MeasurementSet {
            b_values: vec![0.1; s.probes.len()],
            f_values: vec![0.2; s.flux_loops.len()],
            s_values: vec![],
            sigmas: Sigmas::default(),
        };
        let geo = CoilGeometry {
            coils: vec![Coil {
                label: "PF".into(),
                filaments: vec![CoilFilament {
                    r: 4.0,
                    z: 1.0,
                    turns: 1.0,
                }],
            }],
        };
        let out = subtract_coil_contributions(
            &meas,
            &s,
            &geo,
            &BTreeMap::from([("PF".to_string(), 0.0)]),
        )
        .unwrap();
        assert_eq!(out, meas);
    }

    #[test]
    fn zero_current_is_reported() {
        let s = ring_sensors();
        let contour = Contour::from_points(s.probes.iter().map(|p| p.pos * 1.0).collect()).unwrap();
        let pole = ToroidalPole::new(2.5, 0.0).unwrap();
        let coeffs = HarmonicCoeffs::zeros(pole, 2, 2).unwrap();
        let cd = eval_cauchy(&coeffs, &CoilSet::default(), &contour).unwrap();
        assert!(cd.f.iter().chain(&cd.g).all(|v| *v == 0.0));
        assert!(matches!(
            current_center(&cd, DEFAULT_MIN_CURRENT),
            Err(Error::ZeroCurrent { .. })
        ));
    }
}
