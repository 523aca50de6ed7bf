//! Operators of the annulus problem and the regularized Kohn-Vogelius
//! control system.
//!
//! With `K` the stiffness matrix of `∫ (1/r) ∇φ_i·∇φ_j`, the Dirichlet
//! problem keeps the interior nodes as unknowns (`A_DD`) and the Neumann
//! problem keeps interior and outer-boundary nodes (`A_DN`). For inner
//! basis functions `φ_i`, `φ_j`:
//!
//! ```text
//! S_ij = (1 + ε) (K ψ_D(φ_j))_i − (K ψ_N(φ_j))_i
//! l_i  = −(K (ψ_D(0, f) − ψ_N(0, g)))_i
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mesh::{tri_area, TriMesh};
use super::sparse::{CsrMatrix, SkylineCholesky};
use crate::error::{Error, Result};

/// Default regularization parameter.
pub const DEFAULT_EPSILON: f64 = 5e-4;

/// Assembles the weighted stiffness matrix with the centroid value of `1/r`.
pub fn stiffness(mesh: &TriMesh) -> CsrMatrix {
    let mut t = Vec::with_capacity(9 * mesh.triangles.len());
    for tri in &mesh.triangles {
        let p = [mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]];
        let area = tri_area(p[0], p[1], p[2]);
        let rc = (p[0].r + p[1].r + p[2].r) / 3.0;
        // gradient of the barycentric function k is perp(edge opposite k) / (2 area)
        let g: Vec<(f64, f64)> = (0..3)
            .map(|k| {
                let e = p[(k + 2) % 3] - p[(k + 1) % 3];
                (-e.z / (2.0 * area), e.r / (2.0 * area))
            })
            .collect();
        for a in 0..3 {
            for b in 0..3 {
                let v = area / rc * (g[a].0 * g[b].0 + g[a].1 * g[b].1);
                t.push((tri[a], tri[b], v));
            }
        }
    }
    let n = mesh.n_nodes();
    let mut k = CsrMatrix::from_triplets(n, n, t);
    symmetrize_exact(&mut k);
    k
}

/// Replaces each off-diagonal pair by its exact mean so that `K = Kᵀ`
/// holds bit for bit.
fn symmetrize_exact(k: &mut CsrMatrix) {
    for i in 0..k.n_rows {
        for idx in k.row_ptr[i]..k.row_ptr[i + 1] {
            let j = k.col_idx[idx];
            if j > i {
                let v = 0.5 * (k.values[idx] + k.get(j, i));
                k.values[idx] = v;
                let r = k.row_ptr[j]..k.row_ptr[j + 1];
                let pos = k.col_idx[r.clone()].binary_search(&i).unwrap();
                k.values[r.start + pos] = v;
            }
        }
    }
}

/// Nodal values of a P1 field on a mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemField {
    pub values: Vec<f64>,
}

impl FemField {
    pub fn energy(&self, k: &CsrMatrix) -> f64 {
        let kv = k.mul_vec(&self.values);
        kv.iter().zip(&self.values).map(|(a, b)| a * b).sum()
    }

    pub fn sub(&self, other: &FemField) -> FemField {
        FemField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &FemField) -> FemField {
        FemField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Linear interpolation at `p`, if `p` lies in the mesh.
    pub fn eval(&self, mesh: &TriMesh, p: crate::geometry::Point) -> Option<f64> {
        mesh.locate(p).map(|(k, w)| {
            let t = mesh.triangles[k];
            w[0] * self.values[t[0]] + w[1] * self.values[t[1]] + w[2] * self.values[t[2]]
        })
    }
}

/// Symmetric `L D Lᵀ` factorization of the dense control matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLdlt {
    n: usize,
    /// Unit lower triangle below the diagonal, row-major.
    l: Vec<f64>,
    d: Vec<f64>,
}

/// Signs of the pivots of an `L D Lᵀ` factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl DenseLdlt {
    /// Factorizes the row-major symmetric matrix `a` without pivoting.
    /// Pivots below `tol * max|a_ii|` count as zero.
    pub fn factor(a: &[f64], n: usize, tol: f64) -> (Self, Inertia) {
        let mut l = a.to_vec();
        let mut d = vec![0.0; n];
        let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
        let mut inertia = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        for j in 0..n {
            let mut dj = l[j * n + j];
            for k in 0..j {
                dj -= l[j * n + k] * l[j * n + k] * d[k];
            }
            d[j] = dj;
            if dj.abs() <= tol * scale {
                inertia.zero += 1;
            } else if dj < 0.0 {
                inertia.negative += 1;
            } else {
                inertia.positive += 1;
            }
            for i in j + 1..n {
                let mut s = l[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k] * d[k];
                }
                l[i * n + j] = if dj != 0.0 { s / dj } else { 0.0 };
            }
        }
        (Self { n, l, d }, inertia)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.l[i * n + k] * y[k];
            }
        }
        for i in 0..n {
            y[i] /= self.d[i];
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                y[i] -= self.l[k * n + i] * y[k];
            }
        }
        y
    }
}

/// Assembled and factorized operators of one annulus mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FemSystem {
    pub k: CsrMatrix,
    /// Interior rows of `K` against boundary columns (inner then outer).
    k_ib: CsrMatrix,
    /// Interior and outer rows of `K` against inner columns.
    k_ni: CsrMatrix,
    /// Inner rows of `K` against all columns.
    k_inner_rows: CsrMatrix,
    pub a_dd: SkylineCholesky,
    pub a_dn: SkylineCholesky,
    n_inner: usize,
    n_outer: usize,
    /// Outer boundary edge lengths, in loop order.
    outer_edges: Vec<f64>,
    pub control: Option<ControlSystem>,
}

/// The control matrix `S` and its factorization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSystem {
    pub epsilon: f64,
    /// Row-major `S` after symmetrization.
    pub s: Vec<f64>,
    /// `max|S − Sᵀ| / max|S|` before symmetrization.
    pub asymmetry: f64,
    pub inertia: Inertia,
    ldlt: DenseLdlt,
}

impl ControlSystem {
    pub fn dim(&self) -> usize {
        self.inertia.positive + self.inertia.negative + self.inertia.zero
    }
}

/// Result of the control solve on a slice of Cauchy data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSolution {
    /// Optimal Dirichlet values on the inner boundary.
    pub u: Vec<f64>,
    /// `ψ_D(u, f)` on all mesh nodes.
    pub field: FemField,
    /// Regularized functional at `u`, from its definition.
    pub j: f64,
    /// Misfit term `½∫(1/r)|∇(ψ_D(u,f) − ψ_N(u,g))|²`.
    pub misfit: f64,
    /// Data-only constant of the functional.
    pub c: f64,
}

pub fn assemble_operators(mesh: &TriMesh) -> Result<FemSystem> {
    let k = stiffness(mesh);
    let n = mesh.n_nodes();
    let ni = mesh.n_inner;
    let nb = mesh.n_boundary();
    if nb >= n {
        return Err(Error::Geometry("mesh has no interior nodes".into()));
    }
    let a_dd = SkylineCholesky::factor(&k.block(nb..n, nb..n))
        .map_err(|e| Error::SingularMatrix(format!("A_DD: {e}")))?;
    let a_dn = SkylineCholesky::factor(&k.block(ni..n, ni..n))
        .map_err(|e| Error::SingularMatrix(format!("A_DN: {e}")))?;
    let outer_edges = mesh
        .outer_segments()
        .map(|(a, b)| mesh.nodes[a].dist(mesh.nodes[b]))
        .collect();
    Ok(FemSystem {
        k_ib: k.block(nb..n, 0..nb),
        k_ni: k.block(ni..n, 0..ni),
        k_inner_rows: k.block(0..ni, 0..n),
        k,
        a_dd,
        a_dn,
        n_inner: ni,
        n_outer: mesh.n_outer,
        outer_edges,
        control: None,
    })
}

impl FemSystem {
    pub fn n_inner(&self) -> usize {
        self.n_inner
    }

    pub fn n_outer(&self) -> usize {
        self.n_outer
    }

    fn n_nodes(&self) -> usize {
        self.k.n_rows
    }

    fn check(&self, v: &[f64], outer: &[f64]) -> Result<()> {
        if v.len() != self.n_inner || outer.len() != self.n_outer {
            return Err(Error::Dimension(format!(
                "boundary data of lengths ({}, {}), mesh has ({}, {})",
                v.len(),
                outer.len(),
                self.n_inner,
                self.n_outer
            )));
        }
        Ok(())
    }

    /// Solution with `ψ = v` on the inner and `ψ = f` on the outer boundary.
    pub fn solve_dirichlet(&self, v: &[f64], f: &[f64]) -> Result<FemField> {
        self.check(v, f)?;
        let mut bvals = v.to_vec();
        bvals.extend_from_slice(f);
        let lift = self.k_ib.mul_vec(&bvals);
        let rhs: Vec<f64> = lift.iter().map(|x| -x).collect();
        let x = self.a_dd.solve(&rhs);
        bvals.extend(x);
        Ok(FemField { values: bvals })
    }

    /// Solution with `ψ = v` on the inner boundary and `(1/r) ∂ψ/∂n = g` on
    /// the outer boundary.
    pub fn solve_neumann(&self, v: &[f64], g: &[f64]) -> Result<FemField> {
        self.check(v, g)?;
        let lift = self.k_ni.mul_vec(v);
        let mut rhs: Vec<f64> = lift.iter().map(|x| -x).collect();
        let no = self.n_outer;
        for (k, len) in self.outer_edges.iter().enumerate() {
            let (a, b) = (k, (k + 1) % no);
            rhs[a] += len / 6.0 * (2.0 * g[a] + g[b]);
            rhs[b] += len / 6.0 * (g[a] + 2.0 * g[b]);
        }
        let x = self.a_dn.solve(&rhs);
        let mut values = v.to_vec();
        values.extend(x);
        Ok(FemField { values })
    }

    fn inner_rows(&self, field: &FemField) -> Vec<f64> {
        self.k_inner_rows.mul_vec(&field.values)
    }

    /// Builds `S` with one Dirichlet and one Neumann solve per inner node.
    pub fn assemble_control_system(&mut self, epsilon: f64) -> Result<&ControlSystem> {
        if !(epsilon >= 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be nonnegative, got {epsilon}"
            )));
        }
        let ni = self.n_inner;
        let zeros_o = vec![0.0; self.n_outer];
        let cols: Vec<Vec<f64>> = (0..ni)
            .into_par_iter()
            .map(|j| {
                let mut e = vec![0.0; ni];
                e[j] = 1.0;
                let d = self.solve_dirichlet(&e, &zeros_o)?;
                let n = self.solve_neumann(&e, &zeros_o)?;
                let kd = self.inner_rows(&d);
                let kn = self.inner_rows(&n);
                Ok(kd
                    .iter()
                    .zip(&kn)
                    .map(|(a, b)| (1.0 + epsilon) * a - b)
                    .collect())
            })
            .collect::<Result<_>>()?;
        let mut s = vec![0.0; ni * ni];
        for (j, col) in cols.iter().enumerate() {
            for i in 0..ni {
                s[i * ni + j] = col[i];
            }
        }
        let smax = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut asym = 0.0f64;
        for i in 0..ni {
            for j in i + 1..ni {
                asym = asym.max((s[i * ni + j] - s[j * ni + i]).abs());
                let m = 0.5 * (s[i * ni + j] + s[j * ni + i]);
                s[i * ni + j] = m;
                s[j * ni + i] = m;
            }
        }
        let (ldlt, inertia) = DenseLdlt::factor(&s, ni, 1e-14);
        if inertia.negative > 0 || inertia.zero > 0 {
            return Err(Error::SingularControlSystem {
                epsilon,
                negative: inertia.negative,
                zero: inertia.zero,
            });
        }
        self.control = Some(ControlSystem {
            epsilon,
            s,
            asymmetry: if smax > 0.0 { asym / smax } else { 0.0 },
            inertia,
            ldlt,
        });
        Ok(self.control.as_ref().unwrap())
    }

    fn control(&self) -> Result<&ControlSystem> {
        self.control
            .as_ref()
            .ok_or_else(|| Error::SingularMatrix("control system not assembled".into()))
    }

    /// Right-hand side `l` together with the two data-only fields.
    pub fn assemble_rhs(&self, f: &[f64], g: &[f64]) -> Result<(Vec<f64>, FemField, FemField)> {
        let z = vec![0.0; self.n_inner];
        let d = self.solve_dirichlet(&z, f)?;
        let n = self.solve_neumann(&z, g)?;
        let l = self.inner_rows(&d.sub(&n)).iter().map(|x| -x).collect();
        Ok((l, d, n))
    }

    /// Minimizes the regularized functional for Cauchy data `(f, g)`.
    pub fn solve_control(&self, f: &[f64], g: &[f64]) -> Result<ControlSolution> {
        let cs = self.control()?;
        let (l, d_f, n_g) = self.assemble_rhs(f, g)?;
        let u = cs.ldlt.solve(&l);
        let field = self.solve_dirichlet(&u, f)?;
        let neumann = self.solve_neumann(&u, g)?;
        let misfit = 0.5 * field.sub(&neumann).energy(&self.k);
        let reg = 0.5 * cs.epsilon * field.sub(&d_f).energy(&self.k);
        let c = 0.5 * d_f.sub(&n_g).energy(&self.k);
        Ok(ControlSolution {
            u,
            field,
            j: misfit + reg,
            misfit,
            c,
        })
    }

    /// The functional evaluated from its definition at an arbitrary `v`.
    pub fn functional(&self, v: &[f64], f: &[f64], g: &[f64]) -> Result<f64> {
        let eps = self.control()?.epsilon;
        let d = self.solve_dirichlet(v, f)?;
        let n = self.solve_neumann(v, g)?;
        let d0 = self.solve_dirichlet(v, &vec![0.0; self.n_outer])?;
        Ok(0.5 * d.sub(&n).energy(&self.k) + 0.5 * eps * d0.energy(&self.k))
    }

    pub fn n_nodes_total(&self) -> usize {
        self.n_nodes()
    }
}
