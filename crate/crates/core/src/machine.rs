//! Machine description: diagnostics, coils, limiter and the outer contour.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{
    centroid, is_simple, minor_radius, point_in_polygon, signed_area, Contour, Point,
};
use crate::magnetostatics::CoilGeometry;
use crate::th_fit::SensorSet;

pub const MACHINE_SCHEMA_VERSION: u32 = 1;

/// Default number of points of an offset outer contour.
pub const DEFAULT_OUTER_POINTS: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OuterContourSpec {
    /// Explicit closed polyline.
    Polyline { points: Vec<Point> },
    /// Smoothed polyline at `distance` inside the convex hull of the sensors.
    Offset {
        distance: f64,
        #[serde(default = "default_outer_points")]
        count: usize,
    },
}

fn default_outer_points() -> usize {
    DEFAULT_OUTER_POINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineDescription {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub sensors: SensorSet,
    #[serde(default)]
    pub coils: CoilGeometry,
    /// Closed limiter polyline, without repeated closing point.
    pub limiter: Vec<Point>,
    pub outer_contour: OuterContourSpec,
}

impl MachineDescription {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MACHINE_SCHEMA_VERSION {
            return Err(Error::VersionMismatch(format!(
                "machine schema version {} (expected {MACHINE_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.sensors.validate()?;
        if self.limiter.len() < 3 || !is_simple(&self.limiter) {
            return Err(Error::Geometry(
                "limiter must be a simple closed polyline".into(),
            ));
        }
        let outer = self.outer_contour()?;
        if !self.limiter.iter().all(|&p| outer.contains(p)) {
            return Err(Error::Geometry(
                "limiter must lie inside the outer contour".into(),
            ));
        }
        Ok(())
    }

    /// Limiter in counter-clockwise order.
    pub fn limiter_ccw(&self) -> Vec<Point> {
        let mut l = self.limiter.clone();
        if signed_area(&l) < 0.0 {
            l.reverse();
        }
        l
    }

    pub fn limiter_center(&self) -> Point {
        centroid(&self.limiter)
    }

    pub fn minor_radius(&self) -> f64 {
        minor_radius(&self.limiter)
    }

    pub fn outer_contour(&self) -> Result<Contour> {
        match &self.outer_contour {
            OuterContourSpec::Polyline { points } => Contour::from_points(points.clone()),
            OuterContourSpec::Offset { distance, count } => {
                Contour::offset_inside_hull(&self.sensors.positions(), *distance, *count)
            }
        }
    }

    pub fn contains_in_limiter(&self, p: Point) -> bool {
        point_in_polygon(&self.limiter, p)
    }

    /// SHA-256 of the canonical JSON serialization, hex encoded.
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self).expect("machine serializes");
        let canonical = serde_json::to_string(&value).expect("machine serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}
