//! Synthetic equilibria built from current filaments: exact vacuum fields,
//! sensor readings with seeded noise, and reference boundaries.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::boundary::{extract_boundary, BoundarySearch, GridField, PlasmaBoundary};
use crate::error::{Error, Result};
use crate::geometry::{convex_hull, distance_to_closed_polyline, point_in_polygon, Point};
use crate::machine::MachineDescription;
use crate::magnetostatics::{psi_grad_coils, psi_grad_filament, CoilSet, Filament};
use crate::th_fit::{MeasurementSet, SensorSet, Sigmas};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// A reference boundary has the same content as a reconstructed one.
pub type ReferenceBoundary = PlasmaBoundary;

/// D-shaped plasma cross-section filled with filaments carrying a parabolic
/// current profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlasmaShape {
    pub r0: f64,
    pub z0: f64,
    /// Half width of the filament region [m].
    pub a: f64,
    pub kappa: f64,
    pub delta: f64,
    /// Total plasma current [A].
    pub current: f64,
    /// Filament rings around the central filament.
    #[serde(default = "default_rings")]
    pub rings: usize,
}

fn default_rings() -> usize {
    3
}

impl PlasmaShape {
    pub fn point(&self, rho: f64, theta: f64) -> Point {
        Point::new(
            self.r0 + rho * self.a * (theta + self.delta * theta.sin()).cos(),
            self.z0 + self.kappa * rho * self.a * theta.sin(),
        )
    }

    /// A central filament and `4k` filaments on ring `k`, carrying the
    /// current of a `1 − ρ²` profile over the area they represent.
    pub fn filaments(&self) -> Vec<Filament> {
        let d = 1.0 / (self.rings as f64 + 1.0);
        let mut pts = vec![(self.point(0.0, 0.0), d * d / 8.0)];
        for k in 1..=self.rings {
            let rho = k as f64 * d;
            let n = 4 * k;
            let w = (1.0 - rho * rho) * rho * d / n as f64;
            for j in 0..n {
                pts.push((self.point(rho, TAU * j as f64 / n as f64), w));
            }
        }
        let total: f64 = pts.iter().map(|p| p.1).sum();
        pts.into_iter()
            .map(|(p, w)| Filament::new(p.r, p.z, self.current * w / total))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PlasmaSpec {
    Shape(PlasmaShape),
    Filaments { filaments: Vec<Filament> },
}

impl PlasmaSpec {
    pub fn filaments(&self) -> Vec<Filament> {
        match self {
            PlasmaSpec::Shape(s) => s.filaments(),
            PlasmaSpec::Filaments { filaments } => filaments.clone(),
        }
    }
}

/// Gaussian measurement noise per sensor type.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NoiseSpec {
    #[default]
    None,
    /// Standard deviations in physical units.
    Absolute { b: f64, f: f64, s: f64 },
    /// Standard deviation as a fraction of the RMS of the noiseless readings
    /// of each sensor type.
    Relative { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticEquilibrium {
    pub plasma_filaments: Vec<Filament>,
    pub coils: CoilSet,
    pub coil_currents: BTreeMap<String, f64>,
    pub noise: NoiseSpec,
    pub seed: u64,
}

impl SyntheticEquilibrium {
    pub fn new(
        machine: &MachineDescription,
        plasma_filaments: Vec<Filament>,
        coil_currents: BTreeMap<String, f64>,
        noise: NoiseSpec,
        seed: u64,
    ) -> Result<Self> {
        let coils = machine.coils.energize(&coil_currents)?;
        Ok(Self {
            plasma_filaments,
            coils,
            coil_currents,
            noise,
            seed,
        })
    }

    pub fn plasma_current(&self) -> f64 {
        self.plasma_filaments.iter().map(|f| f.current).sum()
    }

    /// Current-weighted centroid of the plasma filaments.
    pub fn current_centroid(&self) -> Option<Point> {
        let ip = self.plasma_current();
        if ip == 0.0 {
            return None;
        }
        let (r, z) = self.plasma_filaments.iter().fold((0.0, 0.0), |(r, z), f| {
            (r + f.current * f.r, z + f.current * f.z)
        });
        Some(Point::new(r / ip, z / ip))
    }

    /// Exact `(ψ, ∂ψ/∂r, ∂ψ/∂z)` of plasma and coils.
    pub fn field(&self, p: Point) -> Result<(f64, f64, f64)> {
        let mut acc = psi_grad_coils(&self.coils, p)?;
        for f in &self.plasma_filaments {
            let (a, b, c) = psi_grad_filament(f, p)?;
            acc.0 += a;
            acc.1 += b;
            acc.2 += c;
        }
        Ok(acc)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }
}

/// Noiseless readings of the exact field.
pub fn exact_readings(
    eq: &SyntheticEquilibrium,
    sensors: &SensorSet,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    sensors.readings(|p| eq.field(p))
}

/// Sensor readings of the equilibrium with seeded Gaussian noise.
///
/// The returned sigmas are the noise levels used, or the defaults when the
/// equilibrium is noiseless.
pub fn generate_measurements(
    eq: &SyntheticEquilibrium,
    sensors: &SensorSet,
) -> Result<MeasurementSet> {
    let (mut b, mut f, mut s) = exact_readings(eq, sensors)?;
    let sig = match eq.noise {
        NoiseSpec::None => None,
        NoiseSpec::Absolute { b, f, s } => Some((b, f, s)),
        NoiseSpec::Relative { fraction } => {
            Some((fraction * rms(&b), fraction * rms(&f), fraction * rms(&s)))
        }
    };
    let mut sigmas = Sigmas::default();
    if let Some((sb, sf, ss)) = sig {
        if [sb, sf, ss].iter().any(|x| !(*x >= 0.0)) {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(eq.seed);
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        for (vals, sd) in [(&mut b, sb), (&mut f, sf), (&mut s, ss)] {
            for v in vals.iter_mut() {
                *v += sd * std.sample(&mut rng);
            }
        }
        if sb > 0.0 {
            sigmas.b = sb;
        }
        if sf > 0.0 {
            sigmas.f = sf;
        }
        if ss > 0.0 {
            sigmas.s = ss;
        }
    }
    Ok(MeasurementSet {
        b_values: b,
        f_values: f,
        s_values: s,
        sigmas,
    })
}

/// Boundary of the exact field, contoured on a grid of spacing `grid_h`
/// covering the limiter.
pub fn reference_boundary(
    eq: &SyntheticEquilibrium,
    limiter: &[Point],
    grid_h: f64,
) -> Result<ReferenceBoundary> {
    let ip = eq.plasma_current();
    let center = eq
        .current_centroid()
        .ok_or(Error::ZeroCurrent { ip, threshold: 0.0 })?;
    let sign = ip.signum();
    let (mut lo, mut hi) = (
        Point::new(f64::INFINITY, f64::INFINITY),
        Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
    );
    for p in limiter {
        lo = Point::new(lo.r.min(p.r), lo.z.min(p.z));
        hi = Point::new(hi.r.max(p.r), hi.z.max(p.z));
    }
    // Contour the current-free region only. Saddles between the filaments
    // of a distributed channel are not X-points, so a hull with area is
    // masked whole; one or two filaments only get small disks.
    let positions: Vec<Point> = eq.plasma_filaments.iter().map(|f| f.position()).collect();
    let hull = convex_hull(&positions);
    let pad = 2.0 * grid_h;
    let solid = hull.len() > 2;
    let in_current = |p: Point| {
        if solid {
            point_in_polygon(&hull, p) || distance_to_closed_polyline(&hull, p) < pad
        } else {
            positions.iter().any(|q| q.dist(p) < pad)
        }
    };
    let margin = Point::new(pad, pad);
    let grid = GridField::sample(lo - margin, hi + margin, grid_h, |p| {
        if in_current(p) {
            Ok(f64::NAN)
        } else {
            eq.field(p).map(|v| v.0)
        }
    })?;
    let view = grid.view();
    let axis_bound = view
        .nodes
        .iter()
        .zip(view.values)
        .filter(|(p, v)| v.is_finite() && point_in_polygon(limiter, **p))
        .map(|(_, v)| sign * v)
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .map(|v| sign * v)
        .ok_or_else(|| Error::Geometry("plasma lies outside the limiter grid".into()))?;
    extract_boundary(
        &view,
        &BoundarySearch {
            limiter,
            sign,
            axis_bound,
            center,
            h: grid_h,
        },
    )
}

/// Scenario file contents: plasma, coil currents, noise and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub plasma: PlasmaSpec,
    #[serde(default)]
    pub coil_currents: BTreeMap<String, f64>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
    /// Number of time slices; slice `k` uses seed `seed + k`.
    #[serde(default = "one")]
    pub slices: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_reference_h")]
    pub reference_grid_h: f64,
}

fn one() -> usize {
    1
}

fn default_dt() -> f64 {
    1e-3
}

fn default_reference_h() -> f64 {
    2.5e-3
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if s.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::VersionMismatch(format!(
                "scenario schema version {} (expected {SCENARIO_SCHEMA_VERSION})",
                s.schema_version
            )));
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn equilibrium(&self, machine: &MachineDescription) -> Result<SyntheticEquilibrium> {
        let fils = self.plasma.filaments();
        for f in &fils {
            if !machine.contains_in_limiter(f.position()) {
                return Err(Error::Geometry(format!(
                    "plasma filament at ({}, {}) lies outside the limiter",
                    f.r, f.z
                )));
            }
        }
        SyntheticEquilibrium::new(
            machine,
            fils,
            self.coil_currents.clone(),
            self.noise,
            self.seed,
        )
    }
}
