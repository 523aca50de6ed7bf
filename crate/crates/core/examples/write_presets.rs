//! Writes the built-in machines, scenarios and configurations as TOML files.
//!
//! Usage: cargo run --example write_presets -- <dir>

use std::path::PathBuf;

use tokrecon_core::pipeline::PipelineConfig;
use tokrecon_core::presets::*;
use tokrecon_core::synth::NoiseSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    std::fs::create_dir_all(&dir)?;
    let write = |name: &str, text: String| std::fs::write(dir.join(name), text);

    write("west_like.machine.toml", west_like_machine().to_toml()?)?;
    write("west_like.scenario.toml", west_like_scenario().to_toml()?)?;
    let mut noisy = west_like_scenario();
    noisy.name = "west-like limiter, 1% noise".into();
    noisy.noise = NoiseSpec::Relative { fraction: 0.01 };
    noisy.slices = 20;
    write("west_like_noisy.scenario.toml", noisy.to_toml()?)?;
    write("elongated.machine.toml", elongated_machine().to_toml()?)?;
    write("elongated.scenario.toml", elongated_scenario().to_toml()?)?;
    write(
        "default.config.toml",
        toml::to_string_pretty(&PipelineConfig::default())?,
    )?;
    write(
        "elongated.config.toml",
        toml::to_string_pretty(&elongated_config())?,
    )?;
    println!("wrote presets to {}", dir.display());
    Ok(())
}
