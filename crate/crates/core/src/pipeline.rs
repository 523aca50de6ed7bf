//! Full reconstruction of one time slice: coil subtraction, harmonic fit,
//! Cauchy data, current center, bank selection, control solve, boundary.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::boundary::{extract_boundary, BoundarySearch, FieldView, GridField, PlasmaBoundary};
use crate::error::{Error, Result, StageExt};
use crate::fem::{grid_centers, outer_boundary, InnerContour, MeshBank, RefinementZone};
use crate::geometry::{Contour, Point};
use crate::machine::MachineDescription;
use crate::magnetostatics::CoilSet;
use crate::th_fit::{
    build_design_matrix, current_center, eval_cauchy, fit_coefficients, pole_inside_hull,
    subtract_coil_set, total_field, CauchyData, CurrentCenter, FitResult, MeasurementSet, Sigmas,
};
use crate::toroidal_harmonics::{HarmonicCoeffs, ToroidalPole, MAX_ORDER};

/// Grid of inner-contour centers around the limiter centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BankGrid {
    pub nr: usize,
    pub nz: usize,
    /// Center spacing as a fraction of the limiter minor radius.
    pub spacing_fraction: f64,
}

impl Default for BankGrid {
    fn default() -> Self {
        Self {
            nr: 3,
            nz: 3,
            spacing_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub n_e: usize,
    pub n_i: usize,
    pub epsilon: f64,
    pub sigmas: Sigmas,
    /// Inner contour half width as a fraction of the limiter minor radius.
    pub inner_radius_fraction: f64,
    /// Ratio of vertical to horizontal semi-axis of the inner contour.
    pub inner_elongation: f64,
    pub mesh_h: f64,
    pub bank: BankGrid,
    pub refinement_zones: Vec<RefinementZone>,
    /// Refit with the pole moved to the first current center.
    pub two_pass: bool,
    /// Plasma current below which a slice is rejected [A].
    pub min_current: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_e: 4,
            n_i: 4,
            epsilon: crate::fem::DEFAULT_EPSILON,
            sigmas: Sigmas::default(),
            inner_radius_fraction: 0.4,
            inner_elongation: 1.0,
            mesh_h: 0.025,
            bank: BankGrid::default(),
            refinement_zones: Vec::new(),
            two_pass: true,
            min_current: crate::th_fit::DEFAULT_MIN_CURRENT,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_e > MAX_ORDER || self.n_i > MAX_ORDER {
            return Err(Error::Config(format!(
                "harmonic orders must not exceed {MAX_ORDER}"
            )));
        }
        self.sigmas.validate()?;
        let positive = [
            ("epsilon", self.epsilon),
            ("inner_radius_fraction", self.inner_radius_fraction),
            ("inner_elongation", self.inner_elongation),
            ("mesh_h", self.mesh_h),
            ("bank.spacing_fraction", self.bank.spacing_fraction),
            ("min_current", self.min_current),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.bank.nr == 0 || self.bank.nz == 0 {
            return Err(Error::Config(
                "bank grid must have at least one center".into(),
            ));
        }
        Ok(())
    }

    /// Inner contours of the mesh bank for `machine`.
    pub fn inner_contours(&self, machine: &MachineDescription) -> Vec<InnerContour> {
        let a = machine.minor_radius();
        let c = machine.limiter_center();
        let half = |n: usize| 0.5 * (n.max(1) - 1) as f64 * self.bank.spacing_fraction * a;
        let (hr, hz) = (half(self.bank.nr), half(self.bank.nz));
        let radius = self.inner_radius_fraction * a;
        grid_centers(
            (c.r - hr, c.r + hr),
            (c.z - hz, c.z + hz),
            self.bank.nr,
            self.bank.nz,
        )
        .into_iter()
        .map(|p| {
            if self.inner_elongation == 1.0 {
                InnerContour::circle(p, radius)
            } else {
                InnerContour::ellipse(p, radius, radius * self.inner_elongation)
            }
        })
        .collect()
    }
}

/// Wall-clock time per stage [ms].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub subtract: f64,
    pub fit: f64,
    pub cauchy: f64,
    pub current_center: f64,
    pub control: f64,
    pub boundary: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub rms_b: f64,
    pub rms_f: f64,
    pub rms_s: f64,
    pub condition: f64,
    /// Prediction minus measurement, probes then flux loops then saddles.
    pub residuals: Vec<f64>,
    /// Number of probes, flux loops and saddle loops.
    pub counts: [usize; 3],
}

impl FitSummary {
    pub fn new(f: &FitResult, counts: [usize; 3]) -> Self {
        Self {
            rms_b: f.rms_b,
            rms_f: f.rms_f,
            rms_s: f.rms_s,
            condition: f.condition,
            residuals: f.residuals.clone(),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub coeffs: HarmonicCoeffs,
    pub fit: FitSummary,
    pub cauchy: CauchyData,
    pub current_center: CurrentCenter,
    pub bank_index: usize,
    /// Optimal flux values on the inner contour nodes [Wb].
    pub control: Vec<f64>,
    pub boundary: PlasmaBoundary,
    /// Regularized functional at the optimum, with its misfit part and the
    /// data-only constant.
    pub j: f64,
    pub misfit: f64,
    pub c: f64,
    pub timings: StageTimings,
}

/// The fitted expansion with its Cauchy data and current center.
#[derive(Debug, Clone)]
pub struct HarmonicStep {
    pub fit: FitResult,
    pub cauchy: CauchyData,
    pub center: CurrentCenter,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Immutable reconstruction context: machine, configuration and mesh bank.
#[derive(Debug, Clone)]
pub struct Reconstructor {
    pub machine: MachineDescription,
    pub config: PipelineConfig,
    pub bank: MeshBank,
    /// Outer boundary shared by all bank meshes.
    pub outer: Contour,
    limiter: Vec<Point>,
}

impl Reconstructor {
    /// Precomputes the mesh bank.
    pub fn build(machine: MachineDescription, config: PipelineConfig) -> Result<Self> {
        machine.validate().stage("machine")?;
        config.validate().stage("config")?;
        let contour = machine.outer_contour().stage("outer contour")?;
        let inners = config.inner_contours(&machine);
        let bank = MeshBank::build(
            &contour,
            &inners,
            config.mesh_h,
            config.epsilon,
            &config.refinement_zones,
        )
        .stage("mesh bank")?;
        Self::new(machine, config, bank)
    }

    /// Wraps a bank built earlier, e.g. loaded from a cache file.
    pub fn new(
        machine: MachineDescription,
        config: PipelineConfig,
        bank: MeshBank,
    ) -> Result<Self> {
        let contour = machine.outer_contour().stage("outer contour")?;
        let outer = outer_boundary(&contour, bank.h).stage("outer contour")?;
        if bank.entries.is_empty() {
            return Err(Error::EmptyBank);
        }
        for e in &bank.entries {
            if e.mesh.outer_points() != outer.points.as_slice() {
                return Err(Error::Geometry(
                    "bank mesh does not match the machine outer contour".into(),
                ));
            }
        }
        let limiter = machine.limiter_ccw();
        Ok(Self {
            machine,
            config,
            bank,
            outer,
            limiter,
        })
    }

    pub fn initial_pole(&self) -> Result<ToroidalPole> {
        let c = self.machine.limiter_center();
        ToroidalPole::new(c.r, c.z)
    }

    fn fit_at(
        &self,
        pole: ToroidalPole,
        meas: &MeasurementSet,
        coils: &CoilSet,
        n_e: usize,
        n_i: usize,
        t: &mut StageTimings,
    ) -> Result<HarmonicStep> {
        let t0 = Instant::now();
        let m =
            build_design_matrix(&self.machine.sensors, pole, n_e, n_i, meas.sigmas).stage("fit")?;
        let fit = fit_coefficients(&m, meas).stage("fit")?;
        t.fit += ms(t0);
        let t0 = Instant::now();
        let cauchy = eval_cauchy(&fit.coeffs, coils, &self.outer).stage("cauchy")?;
        t.cauchy += ms(t0);
        let t0 = Instant::now();
        let center = current_center(&cauchy, self.config.min_current).stage("current center")?;
        t.current_center += ms(t0);
        Ok(HarmonicStep {
            fit,
            cauchy,
            center,
        })
    }

    /// Step one: harmonic fit, Cauchy data and current center.
    pub fn harmonic_step(
        &self,
        raw: &MeasurementSet,
        coil_currents: &BTreeMap<String, f64>,
        n_e: usize,
        n_i: usize,
        t: &mut StageTimings,
    ) -> Result<(HarmonicStep, CoilSet)> {
        let t0 = Instant::now();
        raw.check_against(&self.machine.sensors)
            .stage("measurements")?;
        let coils = self
            .machine
            .coils
            .energize(coil_currents)
            .stage("subtract")?;
        let mut meas = subtract_coil_set(raw, &self.machine.sensors, &coils).stage("subtract")?;
        meas.sigmas = self.config.sigmas;
        t.subtract += ms(t0);
        let pole = self.initial_pole().stage("fit")?;
        let mut step = self.fit_at(pole, &meas, &coils, n_e, n_i, t)?;
        if self.config.two_pass {
            let cc = step.center.position();
            let pole = ToroidalPole::new(cc.r, cc.z).stage("fit")?;
            if pole_inside_hull(&self.machine.sensors, &pole) {
                step = self.fit_at(pole, &meas, &coils, n_e, n_i, t)?;
            }
        }
        Ok((step, coils))
    }

    /// Reconstructs one slice with the configured harmonic orders.
    pub fn reconstruct(
        &self,
        raw: &MeasurementSet,
        coil_currents: &BTreeMap<String, f64>,
    ) -> Result<ReconstructionResult> {
        let start = Instant::now();
        let mut t = StageTimings::default();
        let (step, _) =
            self.harmonic_step(raw, coil_currents, self.config.n_e, self.config.n_i, &mut t)?;

        let t0 = Instant::now();
        let idx = self
            .bank
            .select_index(step.center.position())
            .stage("control")?;
        let entry = &self.bank.entries[idx];
        let sol = entry
            .system
            .solve_control(&step.cauchy.f, &step.cauchy.g)
            .stage("control")?;
        t.control = ms(t0);

        let t0 = Instant::now();
        let view = FieldView {
            nodes: &entry.mesh.nodes,
            triangles: &entry.mesh.triangles,
            values: &sol.field.values,
        };
        let sign = step.center.ip.signum();
        let axis_bound = sol
            .u
            .iter()
            .map(|v| sign * v)
            .fold(f64::NEG_INFINITY, f64::max)
            * sign;
        let boundary = extract_boundary(
            &view,
            &BoundarySearch {
                limiter: &self.limiter,
                sign,
                axis_bound,
                center: entry.inner.center,
                h: self.bank.h,
            },
        )
        .stage("boundary")?;
        t.boundary = ms(t0);
        t.total = ms(start);

        Ok(ReconstructionResult {
            fit: FitSummary::new(
                &step.fit,
                [raw.b_values.len(), raw.f_values.len(), raw.s_values.len()],
            ),
            coeffs: step.fit.coeffs,
            cauchy: step.cauchy,
            current_center: step.center,
            bank_index: idx,
            control: sol.u,
            boundary,
            j: sol.j,
            misfit: sol.misfit,
            c: sol.c,
            timings: t,
        })
    }

    /// Boundary of the fitted expansion itself, contoured on a grid of
    /// spacing `grid_h` over the limiter, without the annulus solve.
    pub fn harmonic_only_boundary(
        &self,
        raw: &MeasurementSet,
        coil_currents: &BTreeMap<String, f64>,
        n_e: usize,
        n_i: usize,
        grid_h: f64,
    ) -> Result<PlasmaBoundary> {
        let mut t = StageTimings::default();
        let (step, coils) = self.harmonic_step(raw, coil_currents, n_e, n_i, &mut t)?;
        let coeffs = &step.fit.coeffs;
        let (mut lo, mut hi) = (
            Point::new(f64::INFINITY, f64::INFINITY),
            Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for p in &self.limiter {
            lo = Point::new(lo.r.min(p.r), lo.z.min(p.z));
            hi = Point::new(hi.r.max(p.r), hi.z.max(p.z));
        }
        let pad = Point::new(2.0 * grid_h, 2.0 * grid_h);
        let entry = self.bank.select(step.center.position()).stage("boundary")?;
        // same vacuum region as the two-step pipeline: the expansion is not
        // valid inside the inner contour, where it is singular at the pole
        let grid = GridField::sample(lo - pad, hi + pad, grid_h, |p| {
            if entry.inner.contains(p) {
                Ok(f64::NAN)
            } else {
                total_field(coeffs, &coils, p).map(|v| v.0)
            }
        })
        .stage("boundary")?;
        let view = grid.view();
        let sign = step.center.ip.signum();
        let mut axis_bound = f64::NEG_INFINITY;
        for p in entry.inner.polyline(256) {
            let v = total_field(coeffs, &coils, p).stage("boundary")?.0;
            axis_bound = axis_bound.max(sign * v);
        }
        axis_bound *= sign;
        extract_boundary(
            &view,
            &BoundarySearch {
                limiter: &self.limiter,
                sign,
                axis_bound,
                center: entry.inner.center,
                h: grid_h,
            },
        )
        .stage("boundary")
    }
}
