mod common;

use std::f64::consts::TAU;

use common::filament_field;
use nalgebra::DVector;
use proptest::prelude::*;
use tokrecon_core::magnetostatics::{CoilSet, Filament, MU0};
use tokrecon_core::presets::{west_like_machine, west_like_scenario};
use tokrecon_core::synth::{generate_measurements, NoiseSpec};
use tokrecon_core::th_fit::{
    build_design_matrix, current_center, eval_cauchy, fit_coefficients, subtract_coil_set,
    CauchyData, MeasurementSet, SensorSet, Sigmas, DEFAULT_MIN_CURRENT,
};
use tokrecon_core::toroidal_harmonics::{
    eval_grad_psi_th, eval_psi_th, HarmonicCoeffs, ToroidalPole,
};
use tokrecon_core::{Contour, Point};

fn sensors() -> SensorSet {
    west_like_machine().sensors
}

fn ellipse_contour(c: Point, a: f64, kappa: f64, n: usize) -> Contour {
    Contour::from_points(
        (0..n)
            .map(|k| {
                let t = TAU * k as f64 / n as f64;
                Point::new(c.r + a * t.cos(), c.z + kappa * a * t.sin())
            })
            .collect(),
    )
    .unwrap()
}

fn harmonic_measurements(c: &HarmonicCoeffs, s: &SensorSet, sigmas: Sigmas) -> MeasurementSet {
    let (b, f, sd) = s
        .readings(|p| {
            let (dr, dz) = eval_grad_psi_th(c, p)?;
            Ok((eval_psi_th(c, p)?, dr, dz))
        })
        .unwrap();
    MeasurementSet {
        b_values: b,
        f_values: f,
        s_values: sd,
        sigmas,
    }
}

fn known_coeffs(pole: ToroidalPole, n: usize) -> HarmonicCoeffs {
    let dim = HarmonicCoeffs::dim(n, n);
    let u: Vec<f64> = (0..dim)
        .map(|k| (0.3 + (1.3 * k as f64).cos()) / (1.0 + k as f64))
        .collect();
    HarmonicCoeffs::from_vec(pole, n, n, &u).unwrap()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

#[test]
fn consistent_measurements_recover_the_coefficients() {
    let s = sensors();
    let pole = ToroidalPole::new(2.45, 0.02).unwrap();
    for n in [2, 4] {
        let c = known_coeffs(pole, n);
        let sig = Sigmas::default();
        let meas = harmonic_measurements(&c, &s, sig);
        let m = build_design_matrix(&s, pole, n, n, sig).unwrap();
        let fit = fit_coefficients(&m, &meas).unwrap();
        let err = rel_diff(&fit.coeffs.to_vec(), &c.to_vec());
        assert!(err < 1e-8, "order {n}: relative error {err:.2e}");
    }
}

#[test]
fn normal_equations_hold_at_the_optimum() {
    let s = sensors();
    let pole = ToroidalPole::new(2.47, 0.0).unwrap();
    let mut scen = west_like_scenario();
    scen.noise = NoiseSpec::Relative { fraction: 0.01 };
    let m_desc = west_like_machine();
    let eq = scen.equilibrium(&m_desc).unwrap();
    let meas = generate_measurements(&eq, &s).unwrap();
    let meas = subtract_coil_set(&meas, &s, &eq.coils).unwrap();
    let m = build_design_matrix(&s, pole, 4, 4, meas.sigmas).unwrap();
    let fit = fit_coefficients(&m, &meas).unwrap();
    let y = m.weighted_rhs(&meas).unwrap();
    let u = DVector::from_vec(fit.coeffs.to_vec());
    let r = &m.matrix * &u - &y;
    let grad = m.matrix.transpose() * r;
    let scale = (m.matrix.transpose() * &y).norm();
    assert!(grad.norm() < 1e-10 * scale, "{:.2e}", grad.norm() / scale);
}

#[test]
fn noise_residuals_stay_within_twice_sigma() {
    let s = sensors();
    let machine = west_like_machine();
    let (sb, sf) = (2.0e-3, 1.0e-3);
    let mut scen = west_like_scenario();
    scen.noise = NoiseSpec::Absolute {
        b: sb,
        f: sf,
        s: sf,
    };
    let eq = scen.equilibrium(&machine).unwrap();
    let pole = ToroidalPole::new(2.47, 0.0).unwrap();
    let sig = Sigmas {
        b: sb,
        f: sf,
        s: sf,
    };
    let m = build_design_matrix(&s, pole, 4, 4, sig).unwrap();
    let mut worst = [0.0f64; 3];
    for seed in 0..100 {
        let meas = generate_measurements(&eq.with_seed(seed), &s).unwrap();
        let meas = subtract_coil_set(&meas, &s, &eq.coils).unwrap();
        let fit = fit_coefficients(&m, &meas).unwrap();
        for (w, v) in worst.iter_mut().zip([fit.rms_b, fit.rms_f, fit.rms_s]) {
            *w = w.max(v);
        }
        assert!(fit.rms_b <= 2.0 * sb, "seed {seed}: rms_b {}", fit.rms_b);
        assert!(fit.rms_f <= 2.0 * sf, "seed {seed}: rms_f {}", fit.rms_f);
        assert!(fit.rms_s <= 2.0 * sf, "seed {seed}: rms_s {}", fit.rms_s);
    }
    println!(
        "worst rms b {:.2e} f {:.2e} s {:.2e}",
        worst[0], worst[1], worst[2]
    );
}

#[test]
fn sine_columns_are_odd_under_reflection() {
    let s = sensors();
    let pole = ToroidalPole::new(2.45, 0.0).unwrap();
    let n = 3;
    let m = build_design_matrix(&s, pole, n, n, Sigmas::default()).unwrap();
    let mut mirror = s.clone();
    for p in &mut mirror.probes {
        p.pos.z = -p.pos.z;
        p.dir.z = -p.dir.z;
    }
    for l in &mut mirror.flux_loops {
        l.pos.z = -l.pos.z;
    }
    for l in &mut mirror.saddle_loops {
        l.pos1.z = -l.pos1.z;
        l.pos2.z = -l.pos2.z;
    }
    let mm = build_design_matrix(&mirror, pole, n, n, Sigmas::default()).unwrap();
    // u = (a_e[0..=n], b_e[1..=n], a_i[0..=n], b_i[1..=n])
    let sine: Vec<usize> = (n + 1..2 * n + 1).chain(3 * n + 2..4 * n + 2).collect();
    let cosine: Vec<usize> = (0..m.matrix.ncols())
        .filter(|j| !sine.contains(j))
        .collect();
    // B is axial, so probe readings have the opposite parity of fluxes
    let n_probes = s.probes.len();
    for (cols, parity) in [(&sine, -1.0), (&cosine, 1.0)] {
        for &j in cols {
            let scale = m.matrix.column(j).amax();
            for i in 0..m.matrix.nrows() {
                let parity = if i < n_probes { -parity } else { parity };
                let (a, b) = (m.matrix[(i, j)], mm.matrix[(i, j)]);
                assert!(
                    (a - parity * b).abs() <= 1e-10 * scale,
                    "row {i} col {j}: {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn symmetric_configuration_has_no_sine_terms() {
    let s = sensors();
    let machine = west_like_machine();
    let eq = west_like_scenario().equilibrium(&machine).unwrap();
    let meas = generate_measurements(&eq, &s).unwrap();
    let meas = subtract_coil_set(&meas, &s, &eq.coils).unwrap();
    let pole = ToroidalPole::new(2.47, 0.0).unwrap();
    let m = build_design_matrix(&s, pole, 6, 6, meas.sigmas).unwrap();
    let fit = fit_coefficients(&m, &meas).unwrap();
    let u = fit.coeffs.to_vec();
    let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let bmax = fit
        .coeffs
        .b_e
        .iter()
        .chain(&fit.coeffs.b_i)
        .fold(0.0f64, |a, b| a.max(b.abs()));
    assert!(bmax <= 1e-8 * norm, "{bmax:.2e} vs {norm:.2e}");
}

#[test]
fn coil_only_readings_cancel() {
    let s = sensors();
    let machine = west_like_machine();
    let eq = west_like_scenario().equilibrium(&machine).unwrap();
    let (b, f, sd) = s
        .readings(|p| tokrecon_core::magnetostatics::psi_grad_coils(&eq.coils, p))
        .unwrap();
    let meas = MeasurementSet {
        b_values: b.clone(),
        f_values: f.clone(),
        s_values: sd,
        sigmas: Sigmas::default(),
    };
    let out = subtract_coil_set(&meas, &s, &eq.coils).unwrap();
    let bmax = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let fmax = f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(out.b_values.iter().all(|v| v.abs() <= 1e-12 * bmax));
    assert!(out.f_values.iter().all(|v| v.abs() <= 1e-12 * fmax));
}

fn filament_cauchy(fils: &[Filament], contour: &Contour) -> CauchyData {
    CauchyData::from_field(contour, |p| Ok(filament_field(fils, p))).unwrap()
}

#[test]
fn single_filament_current_and_center() {
    let contour = ellipse_contour(Point::new(2.45, 0.0), 0.6, 1.3, 512);
    let f = Filament::new(2.5, 0.12, 4.0e5);
    let cc = current_center(&filament_cauchy(&[f], &contour), DEFAULT_MIN_CURRENT).unwrap();
    assert!((cc.ip - 4.0e5).abs() < 1e-3 * 4.0e5, "ip {}", cc.ip);
    assert!((cc.z_c - 0.12).abs() < 1e-3, "z_c {}", cc.z_c);
    assert!((cc.r_c - 2.5).abs() < 5e-3, "r_c {}", cc.r_c);
}

#[test]
fn symmetric_pair_is_centered_on_the_midplane() {
    let contour = ellipse_contour(Point::new(2.45, 0.0), 0.6, 1.3, 512);
    let fils = [
        Filament::new(2.4, 0.2, 2.0e5),
        Filament::new(2.4, -0.2, 2.0e5),
    ];
    let cc = current_center(&filament_cauchy(&fils, &contour), DEFAULT_MIN_CURRENT).unwrap();
    assert!(cc.z_c.abs() < 1e-9, "z_c {}", cc.z_c);
}

#[test]
fn second_moment_matches_filament_sum() {
    let contour = ellipse_contour(Point::new(2.45, 0.0), 0.6, 1.3, 512);
    let fils = [
        Filament::new(2.2, 0.1, 1.0e5),
        Filament::new(2.7, -0.2, 2.5e5),
        Filament::new(2.45, 0.3, 1.5e5),
        Filament::new(2.6, 0.0, 0.8e5),
    ];
    let cc = current_center(&filament_cauchy(&fils, &contour), DEFAULT_MIN_CURRENT).unwrap();
    let ip: f64 = fils.iter().map(|f| f.current).sum();
    let r2: f64 = fils.iter().map(|f| f.current * f.r * f.r).sum::<f64>() / ip;
    let zc: f64 = fils.iter().map(|f| f.current * f.z).sum::<f64>() / ip;
    assert!(
        (cc.r_c * cc.r_c - r2).abs() < 5e-3 * r2,
        "{} vs {r2}",
        cc.r_c * cc.r_c
    );
    assert!((cc.z_c - zc).abs() < 1e-3, "{} vs {zc}", cc.z_c);
    assert!((cc.ip - ip).abs() < 1e-3 * ip);
    // the enclosed current is the circulation of B
    let circ: f64 = filament_cauchy(&fils, &contour)
        .g
        .iter()
        .zip(contour.arc_weights())
        .map(|(g, w)| -g * w)
        .sum();
    assert!((circ / MU0 - ip).abs() < 1e-3 * ip);
}

#[test]
fn normal_derivative_matches_finite_differences() {
    let pole = ToroidalPole::new(2.45, 0.0).unwrap();
    let c = known_coeffs(pole, 4);
    let machine = west_like_machine();
    let coils = machine
        .coils
        .energize(&west_like_scenario().coil_currents)
        .unwrap();
    let contour = ellipse_contour(Point::new(2.45, 0.0), 0.6, 1.3, 64);
    let data = eval_cauchy(&c, &coils, &contour).unwrap();
    let h = 1e-6;
    let psi = |p: Point| {
        eval_psi_th(&c, p).unwrap() + tokrecon_core::magnetostatics::psi_coils(&coils, p).unwrap()
    };
    let gmax = data.g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for (k, (p, n)) in contour.points.iter().zip(&contour.normals).enumerate() {
        let fd = (psi(*p + *n * h) - psi(*p - *n * h)) / (2.0 * h) / p.r;
        let err = (fd - data.g[k]).abs() / data.g[k].abs().max(1e-3 * gmax);
        assert!(err < 1e-6, "point {k}: {fd} vs {} ({err:.2e})", data.g[k]);
        assert!((data.f[k] - psi(*p)).abs() < 1e-12 * (1.0 + data.f[k].abs()));
    }
}

#[test]
fn zero_expansion_and_coils_give_zero_data() {
    let pole = ToroidalPole::new(2.45, 0.0).unwrap();
    let c = HarmonicCoeffs::zeros(pole, 3, 3).unwrap();
    let contour = ellipse_contour(Point::new(2.45, 0.0), 0.6, 1.3, 32);
    let data = eval_cauchy(&c, &CoilSet::default(), &contour).unwrap();
    assert!(data.f.iter().chain(&data.g).all(|v| *v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn design_matrix_reproduces_the_model(u in proptest::collection::vec(-1.0f64..1.0, 14)) {
        let s = sensors();
        let pole = ToroidalPole::new(2.45, 0.05).unwrap();
        let sig = Sigmas { b: 1e-3, f: 2e-3, s: 5e-4 };
        let m = build_design_matrix(&s, pole, 3, 3, sig).unwrap();
        let c = HarmonicCoeffs::from_vec(pole, 3, 3, &u).unwrap();
        let direct = harmonic_measurements(&c, &s, sig).stacked();
        let pred = m.predict(&u);
        for (a, b) in pred.iter().zip(&direct) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn fit_scales_with_the_measurements(alpha in -5.0f64..5.0) {
        prop_assume!(alpha.abs() > 1e-3);
        let s = sensors();
        let machine = west_like_machine();
        let eq = west_like_scenario().equilibrium(&machine).unwrap();
        let meas = generate_measurements(&eq, &s).unwrap();
        let meas = subtract_coil_set(&meas, &s, &eq.coils).unwrap();
        let pole = ToroidalPole::new(2.47, 0.0).unwrap();
        let m = build_design_matrix(&s, pole, 4, 4, meas.sigmas).unwrap();
        let u1 = fit_coefficients(&m, &meas).unwrap().coeffs.to_vec();
        let u2 = fit_coefficients(&m, &meas.scaled(alpha)).unwrap().coeffs.to_vec();
        let scaled: Vec<f64> = u1.iter().map(|x| alpha * x).collect();
        prop_assert!(rel_diff(&u2, &scaled) < 1e-10);
    }
}
