//! Built-in synthetic machines and scenarios.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use crate::geometry::Point;
use crate::machine::{MachineDescription, OuterContourSpec, MACHINE_SCHEMA_VERSION};
use crate::magnetostatics::{Coil, CoilFilament, CoilGeometry};
use crate::pipeline::PipelineConfig;
use crate::synth::{NoiseSpec, PlasmaShape, PlasmaSpec, Scenario, SCENARIO_SCHEMA_VERSION};
use crate::th_fit::{FluxLoop, MagneticProbe, SaddleLoop, SensorSet};

/// Geometry parameters of a preset machine.
#[derive(Debug, Clone, Copy)]
pub struct MachineLayout {
    pub r0: f64,
    /// Limiter half width, elongation and triangularity.
    pub a: f64,
    pub kappa: f64,
    pub delta: f64,
    /// Half width and elongation of the sensor ellipse.
    pub sensor_a: f64,
    pub sensor_kappa: f64,
    pub n_probes: usize,
    pub n_loops: usize,
    pub n_saddles: usize,
}

fn ellipse(c: Point, a: f64, kappa: f64, t: f64) -> Point {
    Point::new(c.r + a * t.cos(), c.z + kappa * a * t.sin())
}

fn d_shape(c: Point, a: f64, kappa: f64, delta: f64, t: f64) -> Point {
    Point::new(
        c.r + a * (t + delta * t.sin()).cos(),
        c.z + kappa * a * t.sin(),
    )
}

fn block_coil(label: &str, r: f64, z: f64, turns: f64) -> Coil {
    let d = 0.03;
    Coil {
        label: label.into(),
        filaments: [(-d, -d), (d, -d), (-d, d), (d, d)]
            .iter()
            .map(|&(dr, dz)| CoilFilament {
                r: r + dr,
                z: z + dz,
                turns: turns / 4.0,
            })
            .collect(),
    }
}

/// Sensors on an ellipse around the limiter, up-down symmetric pairs of
/// coils outside them.
pub fn layout_machine(name: &str, l: &MachineLayout, coils: Vec<Coil>) -> MachineDescription {
    let c = Point::new(l.r0, 0.0);
    let mut sensors = SensorSet::default();
    for k in 0..l.n_probes {
        let t = TAU * (k as f64 + 0.5) / l.n_probes as f64;
        let pos = ellipse(c, l.sensor_a, l.sensor_kappa, t);
        let tan = Point::new(-t.sin(), l.sensor_kappa * t.cos());
        let tan = tan * (1.0 / tan.norm());
        // the type pattern is invariant under k -> n - 1 - k, the mirror image
        let dir = if matches!(k % 4, 0 | 3) {
            tan
        } else {
            Point::new(tan.z, -tan.r)
        };
        sensors.probes.push(MagneticProbe { pos, dir });
    }
    let loop_a = l.sensor_a + 0.06;
    for k in 0..l.n_loops {
        let t = TAU * k as f64 / l.n_loops as f64;
        sensors.flux_loops.push(FluxLoop {
            pos: ellipse(c, loop_a, l.sensor_kappa, t),
        });
    }
    for k in 0..l.n_saddles {
        let t = TAU * (k as f64 + 0.25) / l.n_saddles as f64;
        let dt = 0.5 * TAU / l.n_saddles as f64;
        sensors.saddle_loops.push(SaddleLoop {
            pos1: ellipse(c, loop_a + 0.03, l.sensor_kappa, t),
            pos2: ellipse(c, loop_a + 0.03, l.sensor_kappa, t + dt),
        });
    }
    let limiter = (0..96)
        .map(|k| d_shape(c, l.a, l.kappa, l.delta, TAU * k as f64 / 96.0))
        .collect();
    MachineDescription {
        schema_version: MACHINE_SCHEMA_VERSION,
        name: name.into(),
        sensors,
        coils: CoilGeometry { coils },
        limiter,
        outer_contour: OuterContourSpec::Offset {
            distance: 0.04,
            count: 128,
        },
    }
}

pub const WEST_LAYOUT: MachineLayout = MachineLayout {
    r0: 2.45,
    a: 0.5,
    kappa: 1.3,
    delta: 0.25,
    sensor_a: 0.72,
    sensor_kappa: 1.3,
    n_probes: 48,
    n_loops: 24,
    n_saddles: 12,
};

fn pf_pairs(r0: f64, specs: &[(&str, f64, f64)]) -> Vec<Coil> {
    let mut v = Vec::new();
    for &(name, dr, z) in specs {
        v.push(block_coil(&format!("{name}_U"), r0 + dr, z, 1.0));
        v.push(block_coil(&format!("{name}_L"), r0 + dr, -z, 1.0));
    }
    v
}

/// Medium-size machine with a D-shaped limiter and 84 magnetic sensors.
pub fn west_like_machine() -> MachineDescription {
    let coils = pf_pairs(
        WEST_LAYOUT.r0,
        &[
            ("VF", 1.4, 0.5),
            ("SHO", 0.95, 1.1),
            ("SHI", -0.95, 1.1),
            ("DIV", -0.2, 1.4),
        ],
    );
    layout_machine("west-like", &WEST_LAYOUT, coils)
}

fn pair_currents(specs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for &(name, i) in specs {
        m.insert(format!("{name}_U"), i);
        m.insert(format!("{name}_L"), i);
    }
    m
}

/// Limited 500 kA plasma in the WEST-like machine.
pub fn west_like_scenario() -> Scenario {
    Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: "west-like limiter".into(),
        plasma: PlasmaSpec::Shape(PlasmaShape {
            r0: 2.47,
            z0: 0.0,
            a: 0.15,
            kappa: 1.4,
            delta: 0.3,
            current: 5.0e5,
            rings: 3,
        }),
        coil_currents: pair_currents(&[
            ("VF", -2.0e5),
            ("SHO", 6.0e4),
            ("SHI", 6.0e4),
            ("DIV", 0.0),
        ]),
        noise: NoiseSpec::None,
        seed: 1,
        slices: 1,
        dt: 1e-3,
        reference_grid_h: 2.5e-3,
    }
}

pub const ELONGATED_LAYOUT: MachineLayout = MachineLayout {
    r0: 1.65,
    a: 0.3,
    kappa: 2.4,
    delta: 0.2,
    sensor_a: 0.6,
    sensor_kappa: 1.6,
    n_probes: 48,
    n_loops: 24,
    n_saddles: 12,
};

/// Compact machine with a strongly elongated limiter.
pub fn elongated_machine() -> MachineDescription {
    let coils = pf_pairs(
        ELONGATED_LAYOUT.r0,
        &[("VF", 1.2, 0.6), ("SHO", 0.8, 1.45), ("SHI", -0.75, 1.45)],
    );
    layout_machine("elongated", &ELONGATED_LAYOUT, coils)
}

/// Vertically elongated current channel in the elongated machine.
pub fn elongated_scenario() -> Scenario {
    Scenario {
        schema_version: SCENARIO_SCHEMA_VERSION,
        name: "elongated limiter".into(),
        plasma: PlasmaSpec::Shape(PlasmaShape {
            r0: 1.66,
            z0: 0.0,
            a: 0.14,
            kappa: 3.0,
            delta: 0.2,
            current: 8.0e5,
            rings: 3,
        }),
        coil_currents: pair_currents(&[("VF", -3.0e5), ("SHO", 1.0e5), ("SHI", 1.0e5)]),
        noise: NoiseSpec::None,
        seed: 1,
        slices: 1,
        dt: 1e-3,
        reference_grid_h: 2.5e-3,
    }
}

/// Reconstruction settings for the elongated case: the inner contour is an
/// ellipse enclosing the current channel inside the last closed surface.
pub fn elongated_config() -> PipelineConfig {
    PipelineConfig {
        inner_radius_fraction: 0.63,
        inner_elongation: 1.95,
        ..PipelineConfig::default()
    }
}
