//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to stderr
//! before asserting, so `cargo test --test acceptance -- --nocapture` is not
//! needed to see the summary.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use regscatter::harness::{
    breakdown_probe, contaminate, cv_experiment, normal_sample, ContaminationKind, ContaminationMode,
    ContaminationScheme, Design, ProbeEstimator, ProbeOptions, Verdict,
};
use regscatter::hbd::{sigma_r, sigma_sc_r, D_value, HbdOptions};
use regscatter::matrix::{riemannian_distance, shape_of};
use regscatter::penalized::{solve_penalized, PenaltySpec};
use regscatter::population::{population_table, solve_lambda_system, EllipticalModel, NamedModel, Radial};
use regscatter::tuning::{cv_value, cvr_value, rescale_rows, Criterion, EstimatorKind};
use regscatter::weight::WeightKind;
use regscatter::{CenterSpec, DataMatrix, SymmetricPd, WeightFunction};

fn report(n: usize, pass: bool, detail: &str) {
    let line = format!("criterion {n}: {} - {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn gaussian(n: usize, q: usize, rng: &mut ChaCha8Rng) -> DataMatrix {
    let rows = (0..n).map(|_| DVector::from_fn(q, |_, _| rng.sample(StandardNormal))).collect();
    DataMatrix::from_vectors(rows, q).unwrap()
}

fn random_pd(q: usize, rng: &mut ChaCha8Rng) -> SymmetricPd {
    let a = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    SymmetricPd::new(&a * a.transpose() + DMatrix::identity(q, q) * 0.1).unwrap()
}

fn rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Printed `lambda_1/lambda_5` and `lambda_v1/lambda_v5`, rows kappa in
/// {0.5, 1, 3, 5, 8}, columns gamma in {0.05, 0.2, 0.5, 0.8, 0.95}.
const TABLE_M1: [[[f64; 5]; 2]; 5] = [
    [[1.22, 1.17, 1.09, 1.03, 1.00], [4.91, 5.03, 5.19, 5.30, 5.35]],
    [[1.53, 1.40, 1.21, 1.07, 1.01], [5.37, 5.39, 5.39, 5.38, 5.37]],
    [[4.00, 2.92, 1.81, 1.24, 1.05], [7.65, 7.09, 6.29, 5.68, 5.44]],
    [[7.38, 5.03, 2.66, 1.43, 1.08], [9.31, 8.49, 7.20, 6.01, 5.51]],
    [[9.38, 7.43, 4.12, 1.79, 1.14], [9.94, 9.49, 8.27, 6.51, 5.62]],
];
const TABLE_M2: [[[f64; 5]; 2]; 5] = [
    [[1.13, 1.11, 1.06, 1.02, 1.00], [5.91, 5.99, 6.12, 6.22, 6.26]],
    [[1.31, 1.24, 1.13, 1.04, 1.01], [6.10, 6.15, 6.22, 6.26, 6.27]],
    [[2.66, 2.11, 1.50, 1.15, 1.03], [7.22, 6.98, 6.65, 6.41, 6.31]],
    [[6.36, 3.87, 2.04, 1.28, 1.06], [8.99, 8.10, 7.16, 6.57, 6.34]],
    [[9.33, 7.03, 3.27, 1.51, 1.10], [9.92, 9.38, 8.01, 6.83, 6.40]],
];

#[test]
fn criterion_1_population_table() {
    let kappas = [0.5, 1.0, 3.0, 5.0, 8.0];
    let gammas = [0.05, 0.2, 0.5, 0.8, 0.95];
    let models = vec![
        NamedModel { name: "1".into(), model: EllipticalModel::spiked(5).unwrap() },
        NamedModel { name: "2".into(), model: EllipticalModel::linear(5).unwrap() },
    ];
    let rows = population_table(&models, &kappas, &gammas, 100_000, 1);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for row in &rows {
        let k = kappas.iter().position(|&k| k == row.kappa).unwrap();
        let g = gammas.iter().position(|&g| g == row.gamma).unwrap();
        let printed = if row.model == "1" { TABLE_M1[k] } else { TABLE_M2[k] };
        for (got, want, label) in [(row.cn, printed[0][g], "cn"), (row.cn_v, printed[1][g], "cn_v")] {
            let e = got.map_or(f64::INFINITY, |v| (v - want).abs() / want);
            worst = worst.max(e);
            if e > 0.15 {
                failures.push(format!("M{} k={} g={} {label}={got:?} vs {want}", row.model, row.kappa, row.gamma));
            }
        }
    }
    let pass = rows.len() == 50 && failures.is_empty();
    report(1, pass, &format!("50 cells, worst relative error {worst:.3}; {failures:?}"));
    assert!(pass);
}

#[test]
fn criterion_2_analytic_fixed_points() {
    let q = 5;
    let model = EllipticalModel::new(vec![1.0; q], Radial::Normal).unwrap();
    let mut worst = 0.0f64;
    for &(kappa, gamma) in &[(0.5, 0.2), (3.0, 0.5), (8.0, 0.6), (4.0, 0.95)] {
        let w = WeightFunction::tyler(kappa).unwrap();
        let s = solve_lambda_system(&model, &w, gamma, 100_000, 3).unwrap();
        let want = gamma * q as f64 / (q as f64 - (1.0 - gamma) * kappa);
        for l in &s.lambda {
            worst = worst.max((l - want).abs() / want);
        }
    }
    let basis: Vec<Vec<f64>> = (0..q).map(|i| (0..q).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let x = DataMatrix::from_rows(basis).unwrap();
    for &beta in &[0.5, 2.0, 4.5] {
        for &gamma in &[0.3, 0.9] {
            let est = solve_penalized(&x, &WeightFunction::tyler(beta).unwrap(), &PenaltySpec::tyler_beta(beta, gamma))
                .unwrap()
                .ensure_converged()
                .unwrap();
            let want = DMatrix::identity(q, q) * (gamma * q as f64 / (q as f64 - beta));
            worst = worst.max(rel(est.sigma.matrix(), &want));
        }
    }
    let pass = worst <= 1e-8;
    report(2, pass, &format!("largest relative error {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_3_spectral_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut solved = 0;
    for case in 0..200 {
        let q = rng.random_range(2..=6usize);
        let n = rng.random_range(q + 1..=60usize);
        let x = gaussian(n, q, &mut rng);
        let kappa = if case % 2 == 0 { 0.3 } else { 0.7 };
        let weight = if case % 4 < 2 {
            WeightFunction::tyler(kappa).unwrap()
        } else {
            WeightFunction::t_shift(kappa, rng.random_range(0.5..5.0)).unwrap()
        };
        let eta = rng.random_range(0.05..3.0);
        let gamma = rng.random_range(0.05..0.95);
        let tp = solve_penalized(&x, &weight, &PenaltySpec::tp(eta)).unwrap().ensure_converged().unwrap();
        let kl = solve_penalized(&x, &weight, &PenaltySpec::kl(gamma)).unwrap().ensure_converged().unwrap();
        solved += 2;
        let within = |s: &SymmetricPd, lo: f64, hi: f64| s.min_eigenvalue() >= lo - 1e-9 && s.max_eigenvalue() <= hi + 1e-9;
        if !within(&tp.sigma, eta, eta / (1.0 - kappa)) {
            violations += 1;
        }
        if !within(&kl.sigma, gamma, gamma / (1.0 - (1.0 - gamma) * kappa)) {
            violations += 1;
        }
    }
    let pass = violations == 0 && solved == 400;
    report(3, pass, &format!("{solved} solutions, {violations} outside their bounds"));
    assert!(pass);
}

#[test]
fn criterion_4_algebraic_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut remark, mut scaling, mut shape) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let q = rng.random_range(2..=5usize);
        let n = rng.random_range(2 * q + 5..=50usize);
        let x = gaussian(n, q, &mut rng);

        let w1 = WeightFunction::t_shift(rng.random_range(0.5..5.0), rng.random_range(0.5..3.0)).unwrap();
        let eta = rng.random_range(0.05..2.0);
        let gamma = eta / (1.0 + eta);
        let tp = solve_penalized(&x, &w1, &PenaltySpec::tp(eta)).unwrap().ensure_converged().unwrap();
        let w2 = w1.rescaled_argument(1.0 - gamma).unwrap();
        let kl = solve_penalized(&x, &w2, &PenaltySpec::kl(gamma)).unwrap().ensure_converged().unwrap();
        remark = remark.max(rel(kl.sigma.matrix(), &(tp.sigma.matrix() * (1.0 - gamma))));

        let beta = rng.random_range(0.05..0.9) * q as f64;
        let w = WeightFunction::tyler(beta).unwrap();
        let fits: Vec<_> = [0.1, 0.5, 0.9]
            .iter()
            .map(|&g| solve_penalized(&x, &w, &PenaltySpec::tyler_beta(beta, g)).unwrap().ensure_converged().unwrap())
            .collect();
        scaling = scaling.max(rel(fits[0].sigma.matrix(), &(fits[2].sigma.matrix() * (0.1 / 0.9))));
        scaling = scaling.max(rel(fits[1].sigma.matrix(), &(fits[2].sigma.matrix() * (0.5 / 0.9))));
        let reference = shape_of(&fits[1].sigma);
        for f in [&fits[0], &fits[2]] {
            shape = shape.max(rel(shape_of(&f.sigma).matrix(), reference.matrix()));
        }
    }
    let pass = remark <= 1e-8 && scaling <= 1e-8 && shape <= 1e-8;
    report(4, pass, &format!("remark {remark:.2e}, gamma scaling {scaling:.2e}, shape {shape:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_5_criterion_invariances() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut at_identity = 0.0f64;
    for _ in 0..100 {
        let q = rng.random_range(2..=6usize);
        let n = rng.random_range(3..=40usize);
        let x = gaussian(n, q, &mut rng);
        let s = shape_of(&random_pd(q, &mut rng));
        let lam = 10f64.powf(rng.random_range(-3.0..3.0));
        let c: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-3.0..3.0))).collect();
        let xs = rescale_rows(&x, &c).unwrap();
        let scaled = s.scaled(lam).unwrap();
        for f in [cv_value, cvr_value] {
            let base = f(&s, &x).unwrap();
            let tol = base.abs().max(1.0);
            worst = worst.max((f(&scaled, &x).unwrap() - base).abs() / tol);
            worst = worst.max((f(&s, &xs).unwrap() - base).abs() / tol);
            at_identity = at_identity.max(f(&SymmetricPd::identity(q), &x).unwrap().abs());
        }
    }
    let pass = worst <= 1e-10 && at_identity <= 1e-10;
    report(5, pass, &format!("largest change {worst:.2e}, largest value at identity {at_identity:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_6_contaminated_cv_selection() {
    let mut lines = Vec::new();
    let mut pass = true;
    for design in [Design::Spherical, Design::Spiked] {
        let mut at_q = 0;
        let mut in_band = 0;
        for seed in 1..=5u64 {
            let run = cv_experiment(design, EstimatorKind::SigmaShape, true, seed).unwrap();
            let mean = run.curve.selected(Criterion::CvMean);
            if mean == Some(5.0) {
                at_q += 1;
            }
            if let Some(s) = run.selection(Criterion::CvMedMed) {
                if (1.0..=3.0).contains(&s.beta) && s.condition_number < 10.0 {
                    in_band += 1;
                }
                lines.push(format!("{design:?} seed {seed}: cvmean {mean:?}, cvmedmed {} (cn {:.2})", s.beta, s.condition_number));
            }
        }
        pass &= at_q >= 4 && in_band >= 4;
        lines.push(format!("{design:?}: cvmean at 5 in {at_q}/5, cvmedmed in [1,3] with cn<10 in {in_band}/5"));
    }
    report(6, pass, &lines.join("; "));
    assert!(pass);
}

#[test]
fn criterion_7_breakdown_probes() {
    let n = 30;
    let x = normal_sample(n, &[1.0, 1.0, 1.0], 7).unwrap();
    let opts = ProbeOptions { ladder: vec![1e2, 1e4, 1e6], directions: 8, seed: 7 };
    let cases: Vec<(ProbeEstimator, Vec<usize>)> = vec![
        (ProbeEstimator::Sscm { center: CenterSpec::origin(3) }, vec![1, n / 2, n - 1]),
        (ProbeEstimator::Kl { gamma: 0.5, weight: WeightKind::Tyler { kappa: 1.5 } }, vec![1, n / 2, n - 1]),
        (ProbeEstimator::Kl { gamma: 0.3, weight: WeightKind::TShift { kappa: 1.2, shift: 1.0 } }, vec![n - 1]),
        (ProbeEstimator::TylerBeta { beta: 0.8 }, vec![1, n / 2, n - 1]),
        (ProbeEstimator::Sscm { center: CenterSpec::SpatialMedian }, vec![1, n / 4, n / 2 - 1]),
    ];
    let mut failures = Vec::new();
    let mut probes = 0;
    for (est, ms) in &cases {
        for &m in ms {
            let r = breakdown_probe(est, &x, m, &opts).unwrap();
            probes += 1;
            if r.verdict != Verdict::Resistant {
                failures.push(format!("{est} m={m} bias {:?}", r.bias));
            }
        }
    }
    let pass = failures.is_empty();
    report(7, pass, &format!("{probes} probes, diverging: {failures:?}"));
    assert!(pass);
}

/// Brute-force minimizer of `D` over `R(t) diag(e^s, 1) R(t)'` on a grid.
fn grid_oracle(x: &DataMatrix) -> SymmetricPd {
    let mut best = (f64::INFINITY, SymmetricPd::identity(2));
    for i in 0..180 {
        let t = std::f64::consts::PI * i as f64 / 180.0;
        let r = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
        for j in 0..=200 {
            let s = -3.0 + 6.0 * j as f64 / 200.0;
            let d = DMatrix::from_diagonal(&DVector::from_vec(vec![s.exp(), 1.0]));
            let shape = shape_of(&SymmetricPd::new(&r * d * r.transpose()).unwrap());
            let v = D_value(x, &shape).unwrap();
            if v < best.0 {
                best = (v, shape);
            }
        }
    }
    best.1
}

#[test]
fn criterion_8_sigma_r_suite() {
    let mut notes = Vec::new();
    let mut pass = true;

    let cross = DataMatrix::from_rows(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
    let fit = sigma_r(&cross, &HbdOptions::default()).unwrap();
    let oracle = grid_oracle(&cross);
    let d = riemannian_distance(&fit.shape, &oracle).unwrap();
    let ok = d <= 0.05 && fit.objective_value <= D_value(&cross, &SymmetricPd::identity(2)).unwrap();
    pass &= ok;
    notes.push(format!("4-point grid distance {d:.4}"));

    let target = shape_of(&SymmetricPd::from_diagonal(&[4.0, 1.0]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for seed in 1..=3u64 {
        let x = normal_sample(60, &[4.0, 1.0], seed).unwrap();
        let opts = HbdOptions { seed, ..Default::default() };
        let clean = sigma_r(&x, &opts).unwrap();
        let dist = riemannian_distance(&clean.shape, &target).unwrap();
        pass &= dist <= 0.5;
        notes.push(format!("seed {seed} consistency {dist:.3}"));

        let m = (60 - 2 * 2 + 2) / 2 - 1;
        let clean_cn = clean.shape.condition_number();
        for dir in [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]] {
            let scheme = ContaminationScheme {
                kind: ContaminationKind::RadialBlowup { direction: dir.clone(), distance: 1e6 },
                m,
                mode: ContaminationMode::Add,
                seed,
            };
            let z = contaminate(&x, &scheme).unwrap();
            let cn = sigma_r(&z, &opts).unwrap().shape.condition_number();
            pass &= cn <= 1.5 * clean_cn;
            notes.push(format!("seed {seed} m={m} dir {dir:?} cn {cn:.2} vs clean {clean_cn:.2}"));
        }

        let a = DMatrix::from_fn(2, 2, |i, j| f64::from(u8::from(i == j)) + 0.5 * rng.sample::<f64, _>(StandardNormal));
        let s1 = sigma_sc_r(&x, &opts).unwrap();
        let s2 = sigma_sc_r(&x.transformed(&a), &opts).unwrap();
        let e = riemannian_distance(&s2, &s1.congruence(&a).unwrap()).unwrap();
        pass &= e <= 0.1;
        notes.push(format!("seed {seed} equivariance {e:.3}"));
    }
    report(8, pass, &notes.join("; "));
    assert!(pass);
}

#[test]
fn criterion_9_population_eigenstructure() {
    let gammas = [0.05, 0.2, 0.5, 0.8, 0.95];
    let configs: Vec<(&str, EllipticalModel, f64)> = vec![
        ("spiked", EllipticalModel::spiked(5).unwrap(), 3.0),
        ("spiked", EllipticalModel::spiked(5).unwrap(), 8.0),
        ("linear", EllipticalModel::linear(5).unwrap(), 1.0),
        ("linear", EllipticalModel::linear(5).unwrap(), 5.0),
        ("paired", EllipticalModel::new(vec![6.0, 6.0, 2.0, 1.0, 1.0], Radial::Normal).unwrap(), 3.0),
        ("t3", EllipticalModel::new(vec![8.0, 4.0, 2.0, 1.0], Radial::StudentT { dof: 3.0 }).unwrap(), 5.0),
    ];
    let mut failures = Vec::new();
    for (name, model, kappa) in &configs {
        let w = WeightFunction::t_shift(*kappa, 2.0).unwrap();
        let lo = &model.sigma_o_eigenvalues;
        let q = model.q;
        let sols: Vec<_> = gammas.iter().map(|&g| solve_lambda_system(model, &w, g, 100_000, 9).unwrap()).collect();
        for (s, g) in sols.iter().zip(gammas) {
            let lv = s.lambda_v.as_ref().unwrap();
            for i in 0..q {
                for j in i + 1..q {
                    let tag = format!("{name} k={kappa} g={g} ({i},{j})");
                    let r = s.lambda[i] / s.lambda[j];
                    let rv = lv[i] / lv[j];
                    let ro = lo[i] / lo[j];
                    let se = s.ratio_se(i, j);
                    let se_v = s.ratio_v_se(i, j).unwrap();
                    if lo[i] > lo[j] {
                        if s.lambda[i] - s.lambda[j] <= -3.0 * s.difference_se(i, j) {
                            failures.push(format!("{tag} ordering"));
                        }
                        if r < 1.0 - 3.0 * se || r > rv + 3.0 * (se + se_v) || rv > ro + 3.0 * se_v {
                            failures.push(format!("{tag} sandwich {r:.4} {rv:.4} {ro:.4}"));
                        }
                    } else if (s.lambda[i] - s.lambda[j]).abs() > 3.0 * s.difference_se(i, j) {
                        failures.push(format!("{tag} multiplicity"));
                    }
                }
            }
        }
        for w2 in sols.windows(2) {
            for i in 0..q {
                for j in i + 1..q {
                    let (a, b) = (&w2[0], &w2[1]);
                    let (ra, rb) = (a.lambda[i] / a.lambda[j], b.lambda[i] / b.lambda[j]);
                    let tol = 3.0 * (a.ratio_se(i, j).powi(2) + b.ratio_se(i, j).powi(2)).sqrt();
                    if rb > ra + tol {
                        failures.push(format!("{name} k={kappa} ({i},{j}) rises from g={} to g={}", a.gamma, b.gamma));
                    }
                }
            }
        }
    }
    let pass = failures.is_empty();
    report(9, pass, &format!("{} configurations x 5 gammas; violations: {failures:?}", configs.len()));
    assert!(pass);
}
