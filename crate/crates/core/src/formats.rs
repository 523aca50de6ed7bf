//! File formats: measurement and result records (JSON lines), the mesh-bank
//! cache, and plot-data CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::PlasmaBoundary;
use crate::error::{Error, Result};
use crate::fem::{InnerContour, MeshBank};
use crate::pipeline::{ReconstructionResult, Reconstructor};
use crate::th_fit::{MeasurementSet, Sigmas};

pub const MEASUREMENT_SCHEMA_VERSION: u32 = 1;
pub const RESULT_SCHEMA_VERSION: u32 = 1;
pub const BOUNDARY_SCHEMA_VERSION: u32 = 1;
pub const CACHE_MAGIC: &[u8; 8] = b"TKRBANK\0";
pub const CACHE_VERSION: u32 = 1;

/// One time slice of raw readings: probes [T], flux loops [Wb], saddle
/// loops [Wb] and the coil currents [A].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub schema_version: u32,
    pub time: f64,
    pub b: Vec<f64>,
    pub f: Vec<f64>,
    pub s: Vec<f64>,
    #[serde(default)]
    pub coil_currents: BTreeMap<String, f64>,
}

impl MeasurementRecord {
    pub fn new(time: f64, m: &MeasurementSet, coil_currents: BTreeMap<String, f64>) -> Self {
        Self {
            schema_version: MEASUREMENT_SCHEMA_VERSION,
            time,
            b: m.b_values.clone(),
            f: m.f_values.clone(),
            s: m.s_values.clone(),
            coil_currents,
        }
    }

    /// Readings with the given weights.
    pub fn measurement_set(&self, sigmas: Sigmas) -> MeasurementSet {
        MeasurementSet {
            b_values: self.b.clone(),
            f_values: self.f.clone(),
            s_values: self.s.clone(),
            sigmas,
        }
    }
}

fn check_version(found: u32, expected: u32, what: &str) -> Result<()> {
    if found != expected {
        return Err(Error::VersionMismatch(format!(
            "{what} schema version {found} (expected {expected})"
        )));
    }
    Ok(())
}

/// Parses JSON lines, skipping blank lines and `#` comments.
pub fn read_json_lines<T, R>(reader: R) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
    R: BufRead,
{
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(
            serde_json::from_str(t).map_err(|e| Error::Parse(format!("line {}: {e}", k + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_json_line<T: Serialize, W: Write>(w: &mut W, value: &T) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::Parse(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_measurements<R: BufRead>(reader: R) -> Result<Vec<MeasurementRecord>> {
    let recs: Vec<MeasurementRecord> = read_json_lines(reader)?;
    for r in &recs {
        check_version(r.schema_version, MEASUREMENT_SCHEMA_VERSION, "measurement")?;
    }
    Ok(recs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    /// Pipeline stage that failed, when known.
    pub stage: Option<String>,
    pub message: String,
}

impl From<&Error> for ErrorRecord {
    fn from(e: &Error) -> Self {
        Self {
            stage: e.stage().map(str::to_string),
            message: e.to_string(),
        }
    }
}

/// One line of the result stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub seq: usize,
    /// Slice time, absent when the measurement record could not be read.
    pub time: Option<f64>,
    pub status: SliceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ReconstructionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorRecord>,
}

impl ResultRecord {
    pub fn from_outcome(
        seq: usize,
        time: Option<f64>,
        outcome: Result<ReconstructionResult>,
    ) -> Self {
        let (status, result, error) = match outcome {
            Ok(r) => (SliceStatus::Ok, Some(r), None),
            Err(e) => (SliceStatus::Error, None, Some(ErrorRecord::from(&e))),
        };
        Self {
            schema_version: RESULT_SCHEMA_VERSION,
            seq,
            time,
            status,
            result,
            error,
        }
    }
}

pub fn read_results<R: BufRead>(reader: R) -> Result<Vec<ResultRecord>> {
    let recs: Vec<ResultRecord> = read_json_lines(reader)?;
    for r in &recs {
        check_version(r.schema_version, RESULT_SCHEMA_VERSION, "result")?;
    }
    Ok(recs)
}

/// Parses one measurement line.
pub fn parse_measurement(line: &str) -> Result<MeasurementRecord> {
    let r: MeasurementRecord =
        serde_json::from_str(line.trim()).map_err(|e| Error::Parse(e.to_string()))?;
    check_version(r.schema_version, MEASUREMENT_SCHEMA_VERSION, "measurement")?;
    Ok(r)
}

/// Reconstructs all slices on the worker pool. Unreadable records and
/// failed slices become error records; the output keeps input order.
pub fn process_slices(
    rec: &Reconstructor,
    slices: &[Result<MeasurementRecord>],
) -> Vec<ResultRecord> {
    slices
        .par_iter()
        .enumerate()
        .map(|(seq, m)| match m {
            Ok(m) => ResultRecord::from_outcome(
                seq,
                Some(m.time),
                rec.reconstruct(&m.measurement_set(rec.config.sigmas), &m.coil_currents),
            ),
            Err(e) => ResultRecord {
                schema_version: RESULT_SCHEMA_VERSION,
                seq,
                time: None,
                status: SliceStatus::Error,
                result: None,
                error: Some(ErrorRecord {
                    stage: Some("measurements".into()),
                    message: e.to_string(),
                }),
            },
        })
        .collect()
}

/// Reference boundary file written next to synthetic measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFile {
    pub schema_version: u32,
    pub boundary: PlasmaBoundary,
}

impl BoundaryFile {
    pub fn new(boundary: PlasmaBoundary) -> Self {
        Self {
            schema_version: BOUNDARY_SCHEMA_VERSION,
            boundary,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let b: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        check_version(b.schema_version, BOUNDARY_SCHEMA_VERSION, "boundary")?;
        Ok(b)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// Identifies the inputs a cached bank was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheHeader {
    pub machine_hash: String,
    pub h: f64,
    pub epsilon: f64,
    pub inner: Vec<InnerContour>,
    /// Seconds since the Unix epoch; the only field that varies between
    /// runs with identical inputs.
    pub created: u64,
}

impl CacheHeader {
    pub fn new(machine_hash: String, bank: &MeshBank, created: u64) -> Self {
        Self {
            machine_hash,
            h: bank.h,
            epsilon: bank.epsilon,
            inner: bank.entries.iter().map(|e| e.inner).collect(),
            created,
        }
    }
}

fn encode_err(e: bincode::Error) -> Error {
    Error::Parse(format!("cache encoding: {e}"))
}

/// Layout: magic, little-endian u32 version, bincode header, bincode bank.
pub fn write_cache<W: Write>(mut w: W, header: &CacheHeader, bank: &MeshBank) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    bincode::serialize_into(&mut w, header).map_err(encode_err)?;
    bincode::serialize_into(&mut w, bank).map_err(encode_err)?;
    w.flush()?;
    Ok(())
}

/// Reads only the header, validating magic and version.
pub fn read_cache_header<R: Read>(mut r: R) -> Result<CacheHeader> {
    let mut magic = [0u8; 8];
    let mut version = [0u8; 4];
    r.read_exact(&mut magic)
        .and_then(|_| r.read_exact(&mut version))
        .map_err(|_| Error::VersionMismatch("truncated cache header".into()))?;
    if &magic != CACHE_MAGIC {
        return Err(Error::VersionMismatch("not a mesh-bank cache file".into()));
    }
    let version = u32::from_le_bytes(version);
    if version != CACHE_VERSION {
        return Err(Error::VersionMismatch(format!(
            "cache version {version} (expected {CACHE_VERSION})"
        )));
    }
    bincode::deserialize_from(&mut r)
        .map_err(|e| Error::VersionMismatch(format!("corrupted cache header: {e}")))
}

/// Reads a cache, rejecting it when built for another machine.
pub fn read_cache<R: Read>(mut r: R, machine_hash: &str) -> Result<(CacheHeader, MeshBank)> {
    let header = read_cache_header(&mut r)?;
    if header.machine_hash != machine_hash {
        return Err(Error::HashMismatch {
            expected: header.machine_hash,
            found: machine_hash.to_string(),
        });
    }
    let bank: MeshBank =
        bincode::deserialize_from(&mut r).map_err(|e| Error::Parse(format!("cache body: {e}")))?;
    if bank.h != header.h
        || bank.epsilon != header.epsilon
        || bank.entries.len() != header.inner.len()
        || bank
            .entries
            .iter()
            .zip(&header.inner)
            .any(|(e, c)| e.inner != *c)
    {
        return Err(Error::VersionMismatch(
            "cache body does not match its header".into(),
        ));
    }
    Ok((header, bank))
}

/// `r,z` rows of a closed boundary polyline.
pub fn boundary_csv(b: &PlasmaBoundary) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# plasma boundary, kind {}, psi_p {} Wb",
        b.kind.name(),
        b.psi_p
    );
    let _ = writeln!(s, "# r [m], z [m]; closed: first row equals last row");
    s.push_str("r,z\n");
    for p in &b.points {
        let _ = writeln!(s, "{},{}", p.r, p.z);
    }
    s
}

/// Cauchy data on the outer contour.
pub fn cauchy_csv(r: &ReconstructionResult) -> String {
    let c = &r.cauchy;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# outer contour traces: node index, r [m], z [m], flux f [Wb], normal derivative g [Wb/m]"
    );
    s.push_str("index,r,z,f,g\n");
    for (k, p) in c.contour.points.iter().enumerate() {
        let _ = writeln!(s, "{k},{},{},{},{}", p.r, p.z, c.f[k], c.g[k]);
    }
    s
}

/// One row per sensor: fit prediction minus measurement.
pub fn residuals_csv(r: &ReconstructionResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# fit residuals: sensor kind (probe [T], flux_loop [Wb], saddle [Wb]), index within kind, prediction minus measurement"
    );
    s.push_str("kind,index,residual\n");
    let kinds = ["probe", "flux_loop", "saddle"];
    let mut k = 0;
    for (kind, &n) in kinds.iter().zip(&r.fit.counts) {
        for i in 0..n {
            let _ = writeln!(s, "{kind},{i},{}", r.fit.residuals[k]);
            k += 1;
        }
    }
    s
}

fn time(rec: &ResultRecord) -> String {
    rec.time.map(|t| t.to_string()).unwrap_or_default()
}

/// One row per slice with the scalar diagnostics.
pub fn summary_csv(records: &[ResultRecord]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# per-slice summary: seq, time [s], status, boundary kind, psi_p [Wb], current center r_c z_c [m], ip [A], fit rms probes [T] loops [Wb] saddles [Wb], J, misfit, c, total time [ms]; empty fields for failed slices"
    );
    s.push_str("seq,time,status,kind,psi_p,r_c,z_c,ip,rms_b,rms_f,rms_s,j,misfit,c,total_ms\n");
    for rec in records {
        match &rec.result {
            Some(r) => {
                let _ = writeln!(
                    s,
                    "{},{},ok,{},{},{},{},{},{},{},{},{},{},{},{}",
                    rec.seq,
                    time(rec),
                    r.boundary.kind.name(),
                    r.boundary.psi_p,
                    r.current_center.r_c,
                    r.current_center.z_c,
                    r.current_center.ip,
                    r.fit.rms_b,
                    r.fit.rms_f,
                    r.fit.rms_s,
                    r.j,
                    r.misfit,
                    r.c,
                    r.timings.total
                );
            }
            None => {
                let _ = writeln!(s, "{},{},error,,,,,,,,,,,,", rec.seq, time(rec));
            }
        }
    }
    s
}
