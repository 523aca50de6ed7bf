use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tokrecon_core::formats::{
    boundary_csv, cauchy_csv, parse_measurement, process_slices, read_cache, read_results,
    residuals_csv, summary_csv, write_cache, write_json_line, BoundaryFile, CacheHeader,
    MeasurementRecord,
};
use tokrecon_core::machine::MachineDescription;
use tokrecon_core::pipeline::{PipelineConfig, Reconstructor};
use tokrecon_core::synth::{generate_measurements, reference_boundary, Scenario};

/// Plasma boundary reconstruction from magnetic measurements.
#[derive(Parser)]
#[command(name = "tokrecon", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the mesh bank for a machine and write the cache file.
    Precompute {
        #[arg(long)]
        machine: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Output cache file.
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Reconstruct every time slice of a measurement file, one JSON line each.
    Reconstruct {
        #[arg(long)]
        machine: PathBuf,
        /// Mesh-bank cache; built on the fly when absent.
        #[arg(long)]
        cache: Option<PathBuf>,
        /// Measurement records, `-` for standard input.
        #[arg(long, default_value = "-")]
        measurements: String,
        #[command(flatten)]
        config: ConfigArgs,
        /// Result file; standard output when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Slices reconstructed per parallel batch when streaming.
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Synthesize measurements and the reference boundary of a scenario.
    Synth {
        #[arg(long)]
        machine: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Measurement records to write.
        #[arg(long)]
        measurements: PathBuf,
        /// Reference boundary to write.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write CSV tables for plotting from result files.
    Plotdata {
        /// Result files (JSON lines).
        #[arg(required = true)]
        results: Vec<PathBuf>,
        #[arg(short, long)]
        out_dir: PathBuf,
    },
}

/// Pipeline settings: flags override the config file, which overrides the
/// defaults.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Pipeline configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_e: Option<usize>,
    #[arg(long)]
    n_i: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    mesh_h: Option<f64>,
    #[arg(long)]
    inner_radius_fraction: Option<f64>,
    #[arg(long)]
    inner_elongation: Option<f64>,
    #[arg(long)]
    sigma_b: Option<f64>,
    #[arg(long)]
    sigma_f: Option<f64>,
    #[arg(long)]
    sigma_s: Option<f64>,
    /// Disable the refit at the first current center.
    #[arg(long)]
    single_pass: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_toml(&read_text(p)?)
                .with_context(|| format!("config {}", p.display()))?,
            None => PipelineConfig::default(),
        };
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        if let Some(v) = self.n_e {
            c.n_e = v;
        }
        if let Some(v) = self.n_i {
            c.n_i = v;
        }
        set(&mut c.epsilon, self.epsilon);
        set(&mut c.mesh_h, self.mesh_h);
        set(&mut c.inner_radius_fraction, self.inner_radius_fraction);
        set(&mut c.inner_elongation, self.inner_elongation);
        set(&mut c.sigmas.b, self.sigma_b);
        set(&mut c.sigmas.f, self.sigma_f);
        set(&mut c.sigmas.s, self.sigma_s);
        if self.single_pass {
            c.two_pass = false;
        }
        c.validate()?;
        Ok(c)
    }
}

fn read_text(p: &Path) -> Result<String> {
    fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
}

fn load_machine(p: &Path) -> Result<MachineDescription> {
    MachineDescription::from_toml(&read_text(p)?)
        .with_context(|| format!("machine {}", p.display()))
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(
        File::create(p).with_context(|| format!("creating {}", p.display()))?,
    ))
}

fn precompute(machine: &Path, config: &ConfigArgs, output: &Path) -> Result<()> {
    let m = load_machine(machine)?;
    let cfg = config.resolve()?;
    let rec = Reconstructor::build(m, cfg)?;
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let header = CacheHeader::new(rec.machine.hash(), &rec.bank, created);
    write_cache(create(output)?, &header, &rec.bank)?;
    let nodes: Vec<usize> = rec.bank.entries.iter().map(|e| e.mesh.n_nodes()).collect();
    eprintln!(
        "wrote {} bank entries ({:?} nodes) to {}",
        nodes.len(),
        nodes,
        output.display()
    );
    Ok(())
}

fn reconstructor(
    machine: &Path,
    cache: Option<&Path>,
    config: &ConfigArgs,
) -> Result<Reconstructor> {
    let m = load_machine(machine)?;
    let mut cfg = config.resolve()?;
    let Some(path) = cache else {
        return Ok(Reconstructor::build(m, cfg)?);
    };
    let file =
        BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let (header, bank) =
        read_cache(file, &m.hash()).with_context(|| format!("cache {}", path.display()))?;
    // the bank fixes the mesh and the regularization
    if config.mesh_h.is_some_and(|h| h != header.h)
        || config.epsilon.is_some_and(|e| e != header.epsilon)
    {
        eprintln!("warning: mesh size and epsilon are taken from the cache");
    }
    cfg.mesh_h = header.h;
    cfg.epsilon = header.epsilon;
    Ok(Reconstructor::new(m, cfg, bank)?)
}

fn reconstruct(
    rec: &Reconstructor,
    measurements: &str,
    output: Option<&Path>,
    batch: usize,
) -> Result<(usize, usize)> {
    let input: Box<dyn BufRead> = if measurements == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        Box::new(BufReader::new(
            File::open(measurements).with_context(|| format!("opening {measurements}"))?,
        ))
    };
    let mut out: Box<dyn Write> = match output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout())),
    };
    let batch = batch.max(1);
    let (mut seq, mut failed) = (0, 0);
    let mut pending = Vec::with_capacity(batch);
    let mut lines = input.lines().enumerate();
    loop {
        let next = lines.next();
        if let Some((k, line)) = &next {
            let line = line
                .as_ref()
                .map_err(|e| anyhow::anyhow!("reading measurements: {e}"))?;
            let t = line.trim();
            if !t.is_empty() && !t.starts_with('#') {
                pending.push(
                    parse_measurement(t)
                        .map_err(|e| tokrecon_core::Error::Parse(format!("line {}: {e}", k + 1))),
                );
            }
        }
        if pending.len() >= batch || (next.is_none() && !pending.is_empty()) {
            for mut r in process_slices(rec, &pending) {
                r.seq += seq;
                failed += usize::from(r.result.is_none());
                write_json_line(&mut out, &r)?;
            }
            out.flush()?;
            seq += pending.len();
            pending.clear();
        }
        if next.is_none() {
            break;
        }
    }
    Ok((seq, failed))
}

fn synth(
    machine: &Path,
    scenario: &Path,
    measurements: &Path,
    reference: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let m = load_machine(machine)?;
    let mut s = Scenario::from_toml(&read_text(scenario)?)
        .with_context(|| format!("scenario {}", scenario.display()))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let eq = s.equilibrium(&m)?;
    let mut out = create(measurements)?;
    for k in 0..s.slices {
        let meas = generate_measurements(&eq.with_seed(s.seed + k as u64), &m.sensors)?;
        let rec = MeasurementRecord::new(k as f64 * s.dt, &meas, eq.coil_currents.clone());
        write_json_line(&mut out, &rec)?;
    }
    out.flush()?;
    if let Some(p) = reference {
        let b = reference_boundary(&eq, &m.limiter, s.reference_grid_h)
            .context("reference boundary")?;
        let mut w = create(p)?;
        w.write_all(BoundaryFile::new(b).to_json()?.as_bytes())?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

fn plotdata(results: &[PathBuf], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let write = |name: String, text: String| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    };
    for path in results {
        let file = BufReader::new(
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        );
        let recs = read_results(file).with_context(|| format!("results {}", path.display()))?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "results".into());
        for rec in &recs {
            if let Some(r) = &rec.result {
                write(
                    format!("{stem}_{:05}_boundary.csv", rec.seq),
                    boundary_csv(&r.boundary),
                )?;
                write(format!("{stem}_{:05}_cauchy.csv", rec.seq), cauchy_csv(r))?;
                write(
                    format!("{stem}_{:05}_residuals.csv", rec.seq),
                    residuals_csv(r),
                )?;
            }
        }
        write(format!("{stem}_summary.csv"), summary_csv(&recs))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Precompute {
            machine,
            config,
            output,
        } => precompute(&machine, &config, &output),
        Command::Reconstruct {
            machine,
            cache,
            measurements,
            config,
            output,
            batch,
        } => {
            let rec = reconstructor(&machine, cache.as_deref(), &config)?;
            let (n, failed) = reconstruct(&rec, &measurements, output.as_deref(), batch)?;
            eprintln!("{n} slices, {failed} failed");
            Ok(())
        }
        Command::Synth {
            machine,
            scenario,
            measurements,
            reference,
            seed,
        } => synth(
            &machine,
            &scenario,
            &measurements,
            reference.as_deref(),
            seed,
        ),
        Command::Plotdata { results, out_dir } => {
            if results.is_empty() {
                bail!("no result files given");
            }
            plotdata(&results, &out_dir)
        }
    }
}
