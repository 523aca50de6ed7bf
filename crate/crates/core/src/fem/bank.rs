//! Precomputed meshes and factorized operators keyed by inner-contour center.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mesh::{build_annulus_mesh, InnerContour, RefinementZone, TriMesh};
use super::system::{assemble_operators, FemSystem};
use crate::error::{Error, Result};
use crate::geometry::{Contour, Point};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub inner: InnerContour,
    pub mesh: TriMesh,
    pub system: FemSystem,
}

impl BankEntry {
    pub fn build(
        outer: &Contour,
        inner: InnerContour,
        h: f64,
        epsilon: f64,
        zones: &[RefinementZone],
    ) -> Result<Self> {
        let mesh = build_annulus_mesh(outer, &inner, h, zones)?;
        let mut system = assemble_operators(&mesh)?;
        system.assemble_control_system(epsilon)?;
        Ok(Self {
            inner,
            mesh,
            system,
        })
    }

    pub fn center(&self) -> Point {
        self.inner.center
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshBank {
    pub h: f64,
    pub epsilon: f64,
    pub entries: Vec<BankEntry>,
}

impl MeshBank {
    /// Builds one entry per inner contour, in parallel.
    pub fn build(
        outer: &Contour,
        inners: &[InnerContour],
        h: f64,
        epsilon: f64,
        zones: &[RefinementZone],
    ) -> Result<Self> {
        if inners.is_empty() {
            return Err(Error::EmptyBank);
        }
        let entries = inners
            .par_iter()
            .map(|inner| BankEntry::build(outer, *inner, h, epsilon, zones))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            h,
            epsilon,
            entries,
        })
    }

    /// Index of the entry whose center is nearest to `p`; ties go to the
    /// lowest index.
    pub fn select_index(&self, p: Point) -> Result<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (k, e) in self.entries.iter().enumerate() {
            let d = e.center().dist(p);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best.map(|b| b.0).ok_or(Error::EmptyBank)
    }

    pub fn select(&self, p: Point) -> Result<&BankEntry> {
        Ok(&self.entries[self.select_index(p)?])
    }
}

/// Circles of radius `radius` centered on an `nr × nz` grid spanning
/// `[r_min, r_max] × [z_min, z_max]`.
pub fn grid_centers(r_range: (f64, f64), z_range: (f64, f64), nr: usize, nz: usize) -> Vec<Point> {
    let lin = |(a, b): (f64, f64), n: usize, k: usize| {
        if n <= 1 {
            0.5 * (a + b)
        } else {
            a + (b - a) * k as f64 / (n - 1) as f64
        }
    };
    let mut v = Vec::with_capacity(nr * nz);
    for j in 0..nz {
        for i in 0..nr {
            v.push(Point::new(lin(r_range, nr, i), lin(z_range, nz, j)));
        }
    }
    v
}
