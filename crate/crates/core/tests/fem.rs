mod common;

use common::filament_field;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokrecon_core::fem::{
    assemble_operators, build_annulus_mesh, FemSystem, InnerContour, MeshBank, TriMesh,
};
use tokrecon_core::magnetostatics::Filament;
use tokrecon_core::{Contour, Point};

const C: Point = Point { r: 2.0, z: 0.0 };

fn coarse_mesh(h: f64) -> TriMesh {
    let outer = Contour::from_points(InnerContour::circle(C, 0.6).polyline(48)).unwrap();
    build_annulus_mesh(&outer, &InnerContour::circle(C, 0.25), h, &[]).unwrap()
}

/// `∫ (1/r) ∇a·∇b` of two P1 fields, assembled here with a three-point
/// edge-midpoint rule for the weight.
fn energy_form(mesh: &TriMesh, a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for t in &mesh.triangles {
        let p = [mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]];
        let det = (p[1].r - p[0].r) * (p[2].z - p[0].z) - (p[2].r - p[0].r) * (p[1].z - p[0].z);
        let grad = |v: [f64; 3]| {
            let gr = ((v[1] - v[0]) * (p[2].z - p[0].z) - (v[2] - v[0]) * (p[1].z - p[0].z)) / det;
            let gz = ((v[2] - v[0]) * (p[1].r - p[0].r) - (v[1] - v[0]) * (p[2].r - p[0].r)) / det;
            (gr, gz)
        };
        let ga = grad([a[t[0]], a[t[1]], a[t[2]]]);
        let gb = grad([b[t[0]], b[t[1]], b[t[2]]]);
        let inv_r = (1.0 / (0.5 * (p[0].r + p[1].r))
            + 1.0 / (0.5 * (p[1].r + p[2].r))
            + 1.0 / (0.5 * (p[2].r + p[0].r)))
            / 3.0;
        s += 0.5 * det.abs() * inv_r * (ga.0 * gb.0 + ga.1 * gb.1);
    }
    s
}

fn unit(n: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    e
}

#[test]
fn mesh_topology_and_tags() {
    let mesh = coarse_mesh(0.05);
    let v = mesh.n_nodes() as i64;
    let e = mesh.edges().len() as i64;
    let f = mesh.triangles.len() as i64;
    assert_eq!(v - e + f, 0, "Euler characteristic of an annulus");
    assert!(mesh.min_angle_deg() >= 15.0);
    for p in mesh.inner_points() {
        assert!((p.dist(C) - 0.25).abs() < 1e-10);
    }
    assert!(mesh.nodes.iter().all(|p| p.r > 0.0));
}

#[test]
fn halving_h_roughly_quadruples_triangles() {
    let coarse = coarse_mesh(0.08).triangles.len() as f64;
    let fine = coarse_mesh(0.04).triangles.len() as f64;
    let ratio = fine / coarse;
    assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn stiffness_matches_independent_assembly() {
    let mesh = coarse_mesh(0.1);
    let sys = assemble_operators(&mesh).unwrap();
    assert!(sys.k.is_symmetric());
    let n = mesh.n_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ka = sys.k.mul_vec(&a);
        let lib: f64 = ka.iter().zip(&b).map(|(x, y)| x * y).sum();
        let oracle = energy_form(&mesh, &a, &b);
        // the two weight rules differ at O(h^2) relative
        assert!(
            (lib - oracle).abs() < 2e-2 * oracle.abs().max(1e-3),
            "{lib} vs {oracle}"
        );
    }
}

#[test]
fn control_matrix_matches_direct_bilinear_forms() {
    let mesh = coarse_mesh(0.15);
    let ni = mesh.n_inner;
    assert!(ni <= 12, "{ni} inner nodes");
    let mut sys = assemble_operators(&mesh).unwrap();
    let eps = 5e-4;
    let cs = sys.assemble_control_system(eps).unwrap().clone();
    assert!(cs.asymmetry < 1e-10, "asymmetry {:.2e}", cs.asymmetry);
    let zeros = vec![0.0; mesh.n_outer];
    let d: Vec<_> = (0..ni)
        .map(|j| sys.solve_dirichlet(&unit(ni, j), &zeros).unwrap())
        .collect();
    let nf: Vec<_> = (0..ni)
        .map(|j| sys.solve_neumann(&unit(ni, j), &zeros).unwrap())
        .collect();
    // discrete harmonicity turns s(φ_i, R φ_j) into the symmetric energy
    // forms of the two extensions
    let smax = cs.s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..ni {
        for j in 0..ni {
            let kd = sys.k.mul_vec(&d[j].values);
            let kn = sys.k.mul_vec(&nf[j].values);
            let direct = (1.0 + eps) * dot(&kd, &d[i].values) - dot(&kn, &nf[i].values);
            assert!(
                (cs.s[i * ni + j] - direct).abs() < 1e-9 * smax,
                "S[{i},{j}] {} vs {direct}",
                cs.s[i * ni + j]
            );
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn smallest_eigenvalue(s: &[f64], n: usize) -> f64 {
    DMatrix::from_row_slice(n, n, s)
        .symmetric_eigenvalues()
        .min()
}

#[test]
fn smallest_eigenvalue_grows_with_epsilon() {
    let mesh = coarse_mesh(0.1);
    let mut sys = assemble_operators(&mesh).unwrap();
    let n = mesh.n_inner;
    let mut last = f64::NEG_INFINITY;
    for eps in [0.0, 5e-4, 5e-2] {
        let s = sys.assemble_control_system(eps).unwrap().s.clone();
        let lmin = smallest_eigenvalue(&s, n);
        assert!(lmin >= last, "eps {eps}: {lmin} < {last}");
        last = lmin;
    }
}

fn system_with_control(h: f64) -> (TriMesh, FemSystem) {
    let mesh = coarse_mesh(h);
    let mut sys = assemble_operators(&mesh).unwrap();
    sys.assemble_control_system(5e-4).unwrap();
    (mesh, sys)
}

fn manufactured(mesh: &TriMesh) -> (Vec<f64>, Vec<f64>) {
    let src = [Filament::new(2.02, 0.04, 8e5)];
    let (mut f, mut g) = (Vec::new(), Vec::new());
    for &p in mesh.outer_points() {
        let (psi, dr, dz) = filament_field(&src, p);
        let n = (p - C) * (1.0 / p.dist(C));
        f.push(psi);
        g.push((dr * n.r + dz * n.z) / p.r);
    }
    (f, g)
}

#[test]
fn functional_is_minimal_at_the_control_solution() {
    let (mesh, sys) = system_with_control(0.08);
    let (f, g) = manufactured(&mesh);
    let sol = sys.solve_control(&f, &g).unwrap();
    let j0 = sys.functional(&sol.u, &f, &g).unwrap();
    assert!((j0 - sol.j).abs() < 1e-10 * j0.abs().max(sol.c));
    let scale = sol.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let amp = scale * 10f64.powf(rng.random_range(-4.0..-1.0));
        let v: Vec<f64> = sol
            .u
            .iter()
            .map(|x| x + amp * rng.random_range(-1.0..1.0))
            .collect();
        assert!(sys.functional(&v, &f, &g).unwrap() >= j0);
    }
}

#[test]
fn discrete_optimality_condition() {
    let (mesh, sys) = system_with_control(0.08);
    let (f, g) = manufactured(&mesh);
    let sol = sys.solve_control(&f, &g).unwrap();
    let cs = sys.control.as_ref().unwrap();
    let (l, _, _) = sys.assemble_rhs(&f, &g).unwrap();
    let n = sys.n_inner();
    let su: Vec<f64> = (0..n)
        .map(|i| dot(&cs.s[i * n..(i + 1) * n], &sol.u))
        .collect();
    let res: f64 = su
        .iter()
        .zip(&l)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let lnorm = l.iter().map(|x| x * x).sum::<f64>().sqrt();
    assert!(res < 1e-10 * lnorm, "{:.2e}", res / lnorm);
    // the gradient of the functional vanishes: central differences along
    // each inner basis function
    let h = 1e-4 * sol.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        let mut up = sol.u.clone();
        let mut dn = sol.u.clone();
        up[i] += h;
        dn[i] -= h;
        let dj = (sys.functional(&up, &f, &g).unwrap() - sys.functional(&dn, &f, &g).unwrap())
            / (2.0 * h);
        // second-order term of the quadratic is S_ii h^2 / 2
        assert!(
            dj.abs() < 1e-6 * lnorm + cs.s[i * n + i] * h,
            "component {i}: {dj:.3e}"
        );
    }
}

#[test]
fn zero_data_gives_zero_control() {
    let (mesh, sys) = system_with_control(0.1);
    let z = vec![0.0; mesh.n_outer];
    let sol = sys.solve_control(&z, &z).unwrap();
    assert!(sol.u.iter().all(|v| *v == 0.0));
    assert_eq!(sol.j, sol.c);
    let (l, _, _) = sys.assemble_rhs(&z, &z).unwrap();
    assert!(l.iter().all(|v| *v == 0.0));
}

#[test]
fn solves_reuse_factorizations_bit_identically() {
    let (mesh, sys) = system_with_control(0.1);
    let (f, g) = manufactured(&mesh);
    let a = sys.solve_control(&f, &g).unwrap();
    let fg2: Vec<f64> = f.iter().map(|x| 0.5 * x).collect();
    let _ = sys.solve_control(&fg2, &g).unwrap();
    let b = sys.solve_control(&f, &g).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn subproblems_decompose_and_are_linear(seed in 0u64..1000, alpha in -2.0f64..2.0) {
        let (mesh, sys) = system_with_control(0.12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rand = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() };
        let (v, f, g) = (rand(mesh.n_inner), rand(mesh.n_outer), rand(mesh.n_outer));
        let zi = vec![0.0; mesh.n_inner];
        let zo = vec![0.0; mesh.n_outer];
        let close = |a: &[f64], b: &[f64]| {
            let s = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * s)
        };
        let d = sys.solve_dirichlet(&v, &f).unwrap();
        let d_sum = sys.solve_dirichlet(&v, &zo).unwrap().add(&sys.solve_dirichlet(&zi, &f).unwrap());
        prop_assert!(close(&d.values, &d_sum.values));
        let n = sys.solve_neumann(&v, &g).unwrap();
        let n_sum = sys.solve_neumann(&v, &zo).unwrap().add(&sys.solve_neumann(&zi, &g).unwrap());
        prop_assert!(close(&n.values, &n_sum.values));
        let scaled = |x: &[f64]| x.iter().map(|y| alpha * y).collect::<Vec<_>>();
        let (l1, _, _) = sys.assemble_rhs(&f, &g).unwrap();
        let (l2, _, _) = sys.assemble_rhs(&scaled(&f), &scaled(&g)).unwrap();
        prop_assert!(close(&l2, &scaled(&l1)));
        let u1 = sys.solve_control(&f, &g).unwrap().u;
        let u2 = sys.solve_control(&scaled(&f), &scaled(&g)).unwrap().u;
        prop_assert!(close(&u2, &scaled(&u1)));
    }
}

#[test]
fn single_entry_bank_is_always_selected() {
    let outer = Contour::from_points(InnerContour::circle(C, 0.6).polyline(40)).unwrap();
    let bank = MeshBank::build(
        &outer,
        &[InnerContour::circle(Point::new(2.05, 0.02), 0.2)],
        0.12,
        5e-4,
        &[],
    )
    .unwrap();
    for p in [Point::new(1.0, 3.0), Point::new(2.05, 0.02), C] {
        assert_eq!(bank.select_index(p).unwrap(), 0);
    }
}

#[test]
fn center_hit_exactly_selects_that_entry() {
    let outer = Contour::from_points(InnerContour::circle(C, 0.6).polyline(40)).unwrap();
    let centers = [
        Point::new(1.875, 0.0),
        Point::new(2.0, 0.0),
        Point::new(2.125, 0.0),
    ];
    let inners: Vec<_> = centers
        .iter()
        .map(|&c| InnerContour::circle(c, 0.2))
        .collect();
    let bank = MeshBank::build(&outer, &inners, 0.12, 5e-4, &[]).unwrap();
    for (k, c) in centers.iter().enumerate() {
        assert_eq!(bank.select_index(*c).unwrap(), k);
    }
    // exact ties go to the lower index
    assert_eq!(bank.select_index(Point::new(1.9375, 0.0)).unwrap(), 0);
    assert_eq!(bank.select_index(Point::new(2.0625, 0.25)).unwrap(), 1);
}
