//! Benchmark fixtures.

use std::collections::BTreeMap;

use tokrecon_core::pipeline::{PipelineConfig, Reconstructor};
use tokrecon_core::presets::{west_like_machine, west_like_scenario};
use tokrecon_core::synth::generate_measurements;
use tokrecon_core::th_fit::MeasurementSet;

/// A warm reconstructor for the WEST-like machine with one noiseless slice.
pub struct WestSlice {
    pub rec: Reconstructor,
    pub meas: MeasurementSet,
    pub coil_currents: BTreeMap<String, f64>,
}

impl WestSlice {
    /// Builds the default 3×3 bank at mesh size `mesh_h`.
    pub fn new(mesh_h: f64) -> Self {
        let machine = west_like_machine();
        let eq = west_like_scenario()
            .equilibrium(&machine)
            .expect("preset scenario");
        let meas = generate_measurements(&eq, &machine.sensors).expect("preset sensors");
        let config = PipelineConfig {
            mesh_h,
            ..PipelineConfig::default()
        };
        Self {
            rec: Reconstructor::build(machine, config).expect("preset bank"),
            meas,
            coil_currents: eq.coil_currents,
        }
    }

    /// Node count of the first bank mesh.
    pub fn nodes(&self) -> usize {
        self.rec.bank.entries[0].mesh.n_nodes()
    }
}
