//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mselect_core::bootstrap::bootstrap;
use mselect_core::ecm::{e_step, fit, FitConfig};
use mselect_core::likelihood::{classical_heckman_loglik, loglik};
use mselect_core::linalg::{gather, gather_block, SpdMatrix};
use mselect_core::model::{
    censor_partition, mean_vector, observed_vector, ModelParams, ObservationRecord,
};
use mselect_core::mvn::mvn_rect_prob;
use mselect_core::normal;
use mselect_core::sim::{
    compare_univariate, generate, median, run_mc, scenario1, scenario2, Arm, CellResult,
    CovariateLaw, Scenario, ScenarioName,
};
use mselect_core::sun::{conditional_mean_mc_oracle, mills_correction};
use mselect_core::{DMatrix, DVector};

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion} {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// Criterion 1: R = 1 likelihood equivalence.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_r1_likelihood_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let sigma = 0.5 + rng.random::<f64>() * 2.0;
        let rho = rng.random::<f64>() * 1.7 - 0.85;
        let beta = dv(&[rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]);
        let gamma = dv(&[
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
            rng.random::<f64>() - 0.5,
        ]);
        let params = ModelParams::new(
            vec![beta.clone()],
            vec![gamma.clone()],
            sigma,
            rho,
            SpdMatrix::identity(1),
        )
        .unwrap();
        let chol = params.sigma_matrix().chol().lower().clone();
        let data: Vec<ObservationRecord> = (0..50)
            .map(|_| {
                let x = dv(&[1.0, rng.random::<f64>() * 2.0 - 1.0]);
                let w = dv(&[1.0, x[1], rng.random::<f64>() * 2.0 - 1.0]);
                let z = dv(&[
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                ]);
                let e = &chol * z;
                let y1 = beta.dot(&x) + e[0];
                let c = gamma.dot(&w) + e[1] > 0.0;
                ObservationRecord::new(
                    vec![x],
                    vec![w],
                    vec![c],
                    vec![if c { Some(y1) } else { None }],
                )
                .unwrap()
            })
            .collect();
        let general = loglik(&params, &data, 1e-10, trial as u64).unwrap().total;
        let classical = classical_heckman_loglik(&beta, &gamma, sigma, rho, &data).unwrap();
        worst = worst.max((general - classical).abs());
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "01",
        worst < 1e-8 && elapsed < 10.0,
        &format!("R=1 likelihood equivalence: max |diff| = {worst:.2e} over 100 instances ({elapsed:.1}s)"),
    );
}

// ---------------------------------------------------------------------------
// Criteria 2 and 3 share a diagnosed Scenario-1 fit (n = 200).
// ---------------------------------------------------------------------------

struct DiagnosedFit {
    q_gap: f64,
    min_eig: f64,
    iterations: usize,
    elapsed: f64,
}

fn diagnosed_fit() -> &'static DiagnosedFit {
    static CELL: OnceLock<DiagnosedFit> = OnceLock::new();
    CELL.get_or_init(|| {
        let start = Instant::now();
        let sc = scenario1().with_n(200).with_missing_rate(0.1);
        let gen = generate(&sc, 2024).unwrap();
        let mut cfg = FitConfig::with_seed(2024);
        cfg.capture_diagnostics = true;
        let res = fit(&gen.records, &sc.design(), &cfg).unwrap();
        let q_gap = res
            .diagnostics
            .iter()
            .map(|d| (d.q_column_form - d.q_kron_form).abs())
            .fold(0.0f64, f64::max);
        let min_eig = res
            .diagnostics
            .iter()
            .map(|d| d.min_delta_eigenvalue)
            .fold(f64::INFINITY, f64::min);
        DiagnosedFit {
            q_gap,
            min_eig,
            iterations: res.iterations,
            elapsed: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_02_objective_form_identity() {
    let d = diagnosed_fit();
    report(
        "02",
        d.q_gap < 1e-8 && d.elapsed < 120.0,
        &format!(
            "objective-form identity: max |Q_column - Q_kron| = {:.2e} over {} iterations ({:.1}s)",
            d.q_gap, d.iterations, d.elapsed
        ),
    );
}

#[test]
fn criterion_03_cross_product_semidefiniteness() {
    let d = diagnosed_fit();
    report(
        "03",
        d.min_eig >= -1e-9,
        &format!(
            "cross-product PSD: smallest eigenvalue = {:.3e} across all iterations",
            d.min_eig
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: ECM monotonicity on 10 fixed-seed fits.
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_ecm_monotonicity() {
    let grid = [
        (1, 0.1, 301u64),
        (1, 0.1, 302),
        (1, 0.5, 303),
        (1, 0.5, 304),
        (1, 0.5, 305),
        (2, 0.1, 306),
        (2, 0.1, 307),
        (2, 0.5, 308),
        (2, 0.5, 309),
        (2, 0.1, 310),
    ];
    let mut worst_dip: f64 = 0.0;
    let mut fits = 0usize;
    for (scn, rate, seed) in grid {
        let sc = if scn == 1 { scenario1() } else { scenario2() };
        let sc = sc.with_n(150).with_missing_rate(rate);
        let gen = generate(&sc, seed).unwrap();
        let res = fit(&gen.records, &sc.design(), &FitConfig::with_seed(seed)).unwrap();
        for w in res.loglik_trace.windows(2) {
            worst_dip = worst_dip.max(w[0] - w[1]);
        }
        fits += 1;
    }
    report(
        "04",
        worst_dip <= 1e-6,
        &format!("ECM monotonicity: worst per-iteration dip = {worst_dip:.3e} over {fits} fits"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: E-step moments vs rejection sampler on 20 random R=2 records.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_e_step_rejection_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5005);
    let mut checked = 0usize;
    let mut worst_z: f64 = 0.0;
    for trial in 0..20 {
        let sigma = 0.8 + rng.random::<f64>() * 1.2;
        let rho = rng.random::<f64>() * 1.4 - 0.7;
        let phi = rng.random::<f64>() * 1.0 - 0.5;
        let psi = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, phi, phi, 1.0])).unwrap();
        let params = ModelParams::new(
            vec![
                dv(&[rng.random::<f64>() - 0.5]),
                dv(&[rng.random::<f64>() - 0.5]),
            ],
            vec![
                dv(&[rng.random::<f64>() - 0.5]),
                dv(&[rng.random::<f64>() - 0.5]),
            ],
            sigma,
            rho,
            psi,
        )
        .unwrap();
        let c = [rng.random::<bool>(), rng.random::<bool>()];
        let y: Vec<Option<f64>> = c
            .iter()
            .map(|&ci| {
                if ci {
                    Some(rng.random::<f64>() * 2.0 - 0.5)
                } else {
                    None
                }
            })
            .collect();
        let rec = ObservationRecord::new(vec![dv(&[1.0]); 2], vec![dv(&[1.0]); 2], c.to_vec(), y)
            .unwrap();
        let es = e_step(&params, &rec, 1e-9, 500 + trial as u64).unwrap();

        // Independent oracle: condition on the observed block by explicit
        // Schur algebra, then rejection-sample the rectangle to 1e6 draws.
        let lam = params.lambda().unwrap();
        let mu = mean_vector(&params, &rec).unwrap();
        let part = censor_partition(&rec);
        let y_obs = observed_vector(&rec, &part);
        let (mu_c, cov_c) = if part.obs_idx.is_empty() {
            (
                gather(&mu, &part.cens_idx),
                gather_block(lam.mat(), &part.cens_idx, &part.cens_idx),
            )
        } else {
            let mu_o = gather(&mu, &part.obs_idx);
            let s_oo = gather_block(lam.mat(), &part.obs_idx, &part.obs_idx);
            let s_co = gather_block(lam.mat(), &part.cens_idx, &part.obs_idx);
            let s_oo_inv = s_oo.clone().try_inverse().unwrap();
            let mu_c = gather(&mu, &part.cens_idx) + &s_co * &s_oo_inv * (&y_obs - mu_o);
            let cov_c = gather_block(lam.mat(), &part.cens_idx, &part.cens_idx)
                - &s_co * s_oo_inv * s_co.transpose();
            (mu_c, cov_c)
        };
        let chol = SpdMatrix::new(cov_c).unwrap().chol().lower().clone();
        let d = mu_c.len();
        let mut kept = 0usize;
        let mut sum: DVector<f64> = DVector::zeros(d);
        let mut sumsq: DVector<f64> = DVector::zeros(d);
        let target = 1_000_000usize;
        let mut draws = 0usize;
        while kept < target && draws < target * 60 {
            draws += 1;
            let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let yv = &mu_c + &chol * z;
            let inside = (0..d).all(|k| yv[k] > part.lower[k] && yv[k] <= part.upper[k]);
            if inside {
                kept += 1;
                for k in 0..d {
                    sum[k] += yv[k];
                    sumsq[k] += yv[k] * yv[k];
                }
            }
        }
        if kept < 20_000 {
            continue; // tiny cell; the oracle has no power here
        }
        let nk = kept as f64;
        for (k, &comp) in part.cens_idx.iter().enumerate() {
            let mean = sum[k] / nk;
            let var: f64 = (sumsq[k] - sum[k] * sum[k] / nk) / (nk - 1.0);
            let se = (var / nk).sqrt();
            let z = (es.yhat[comp] - mean).abs() / se;
            worst_z = worst_z.max(z);
            checked += 1;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "05",
        checked >= 20 && worst_z < 3.0 && elapsed < 300.0,
        &format!(
            "E-step oracle: {checked} moment checks, worst |z| = {worst_z:.2} (limit 3.0), {elapsed:.1}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: inverse-Mills reduction and diagonal-Psi oracle agreement.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_mills_correction_reduction() {
    // Machine-precision classical reduction at R = 1.
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut worst_rel: f64 = 0.0;
    for _ in 0..50 {
        let sigma = 0.5 + rng.random::<f64>() * 2.0;
        let rho = rng.random::<f64>() * 1.8 - 0.9;
        let beta = dv(&[rng.random::<f64>(), rng.random::<f64>()]);
        let gamma = dv(&[rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5]);
        let params = ModelParams::new(
            vec![beta.clone()],
            vec![gamma.clone()],
            sigma,
            rho,
            SpdMatrix::identity(1),
        )
        .unwrap();
        let x = dv(&[1.0, rng.random::<f64>()]);
        let w = dv(&[1.0, rng.random::<f64>()]);
        let rec = ObservationRecord::new(
            vec![x.clone()],
            vec![w.clone()],
            vec![true],
            vec![Some(0.0)],
        )
        .unwrap();
        let corr = mills_correction(&params, &rec).unwrap();
        let expect = beta.dot(&x) + rho * sigma * normal::inv_mills(gamma.dot(&w));
        let rel = (corr.corrected_mean[0] - expect).abs() / expect.abs().max(1.0);
        worst_rel = worst_rel.max(rel);
    }

    // Diagonal-Psi agreement with the shipped MC oracle.
    let params = ModelParams::new(
        vec![dv(&[0.4]), dv(&[-0.3])],
        vec![dv(&[0.5]), dv(&[0.2])],
        1.8,
        0.55,
        SpdMatrix::identity(2),
    )
    .unwrap();
    let rec = ObservationRecord::new(
        vec![dv(&[1.0]); 2],
        vec![dv(&[1.0]); 2],
        vec![true, true],
        vec![Some(0.0), Some(0.0)],
    )
    .unwrap();
    let corr = mills_correction(&params, &rec).unwrap();
    let mc = conditional_mean_mc_oracle(&params, &rec, 400_000, 616).unwrap();
    let mut worst_z: f64 = 0.0;
    for j in 0..2 {
        worst_z = worst_z.max((mc.mean[j] - corr.corrected_mean[j]).abs() / mc.se[j]);
    }
    report(
        "06",
        worst_rel < 1e-12 && worst_z < 3.0,
        &format!(
            "Mills correction: R=1 reduction max rel err = {worst_rel:.2e}; diagonal-Psi oracle worst |z| = {worst_z:.2}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 7 and 9 share the Scenario-1 Monte Carlo cells.
// ---------------------------------------------------------------------------

// Seeds frozen after one calibration pass, per the stated protocol.
fn scenario1_cells() -> &'static Vec<CellResult> {
    static CELL: OnceLock<Vec<CellResult>> = OnceLock::new();
    CELL.get_or_init(|| {
        let sc = scenario1();
        let cfg = FitConfig::default();
        let mut cells = run_mc(&sc, &[100, 200, 300], &[Some(0.1)], 20, &cfg, 772, false).unwrap();
        cells.extend(run_mc(&sc, &[200], &[Some(0.5)], 20, &cfg, 872, false).unwrap());
        cells
    })
}

#[test]
fn criterion_07_trend_reproduction() {
    let start = Instant::now();
    let cells = scenario1_cells();
    let b100 = cells[0].median_frob_b(Arm::Multivariate).unwrap();
    let b200 = cells[1].median_frob_b(Arm::Multivariate).unwrap();
    let b300 = cells[2].median_frob_b(Arm::Multivariate).unwrap();
    let g_rate_low = cells[1].median_frob_gamma(Arm::Multivariate).unwrap();
    let g_rate_high = cells[3].median_frob_gamma(Arm::Multivariate).unwrap();
    let decreasing = b100 > b200 && b200 > b300;
    let increasing = g_rate_high > g_rate_low;
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "07",
        decreasing && increasing && elapsed < 1800.0,
        &format!(
            "trend reproduction: median frob_B {b100:.3} > {b200:.3} > {b300:.3} (n=100,200,300); \
             median frob_Gamma {g_rate_low:.3} (rate .1) < {g_rate_high:.3} (rate .5); {elapsed:.0}s"
        ),
    );
}

#[test]
fn criterion_09_parameter_recovery_bands() {
    let sc = scenario1();
    let cells = run_mc(
        &sc,
        &[300],
        &[Some(0.1)],
        20,
        &FitConfig::default(),
        777,
        false,
    )
    .unwrap();
    let cell = &cells[0];
    let rows: Vec<_> = cell
        .outcomes
        .iter()
        .filter(|o| o.arm == Arm::Multivariate)
        .collect();
    let med_rho = median(&rows.iter().map(|o| o.err_rho.abs()).collect::<Vec<_>>());
    let med_sigma = median(&rows.iter().map(|o| o.err_sigma.abs()).collect::<Vec<_>>());
    let med_phi = median(&rows.iter().map(|o| o.err_phi.abs()).collect::<Vec<_>>());
    report(
        "09",
        med_rho < 0.1 && med_sigma < 0.2 && med_phi < 0.1,
        &format!(
            "recovery bands (n=300, rate .1, 20 reps): median |rho-0.6| = {med_rho:.3} (<0.1), \
             median |sigma-2| = {med_sigma:.3} (<0.2), median |phi-0.4| = {med_phi:.3} (<0.1)"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: univariate comparison.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_univariate_comparison() {
    let start = Instant::now();
    let sc = scenario2();
    let cell = compare_univariate(&sc, 300, Some(0.25), 20, &FitConfig::default(), 888).unwrap();
    let multi = cell.median_frob_b(Arm::Multivariate).unwrap();
    let uni = cell.median_frob_b(Arm::Univariate).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    report(
        "08",
        multi <= uni && elapsed < 1200.0,
        &format!(
            "univariate comparison (scenario 2, n=300, rate .25): median frob_B multivariate \
             {multi:.3} <= univariate {uni:.3}; {elapsed:.0}s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: bootstrap contract.
// ---------------------------------------------------------------------------

fn r2_bootstrap_scenario(n: usize) -> Scenario {
    let psi = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0])).unwrap();
    Scenario {
        name: ScenarioName::Custom,
        true_params: ModelParams::new(
            vec![dv(&[1.0, 0.3]), dv(&[1.0, -0.8])],
            vec![dv(&[1.0, 0.3, -0.7]), dv(&[1.0, -0.5, -1.0])],
            2.0,
            0.6,
            psi,
        )
        .unwrap(),
        covariate_laws: vec![
            (CovariateLaw::StdNormal, CovariateLaw::StdNormal),
            (CovariateLaw::StdNormal, CovariateLaw::StudentT { df: 6.0 }),
        ],
        n,
        target_missing_rate: None,
    }
}

#[test]
fn criterion_10_bootstrap_contract() {
    let sc = r2_bootstrap_scenario(200);
    let gen = generate(&sc, 4242).unwrap();
    let design = sc.design();
    let cfg = FitConfig::with_seed(4242);

    // Determinism: identical inputs yield identical reports.
    let rep1 = bootstrap(&gen.records, &design, &cfg, 12, 99).unwrap();
    let rep2 = bootstrap(&gen.records, &design, &cfg, 12, 99).unwrap();
    let deterministic = rep1.point_values == rep2.point_values
        && rep1.se == rep2.se
        && rep1.ci_lower == rep2.ci_lower
        && rep1.ci_upper == rep2.ci_upper
        && rep1.replicates == rep2.replicates;

    // SE definition: exactly the B-1 standard deviation of the replicates.
    let mut worst_se_err: f64 = 0.0;
    for j in 0..rep1.point_values.len() {
        let col: Vec<f64> = rep1.replicates.iter().map(|(_, v)| v[j]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (col.len() as f64 - 1.0))
            .sqrt();
        worst_se_err = worst_se_err.max((sd - rep1.se[j]).abs());
    }

    // Coverage smoke test: the 95% CI for rho contains 0.6 in at least 14 of
    // 20 simulated datasets.
    let rho_idx = rep1.names.iter().position(|n| n == "rho").unwrap();
    let mut covered = 0usize;
    for ds in 0..20u64 {
        let gen = generate(&sc.clone().with_n(200), 10_000 + ds).unwrap();
        let mut cfg = FitConfig::with_seed(10_000 + ds);
        cfg.tol = 1e-5; // refits dominate runtime; the CI is quantile-based
        if let Ok(rep) = bootstrap(&gen.records, &design, &cfg, 50, 20_000 + ds) {
            if rep.ci_lower[rho_idx] <= 0.6 && 0.6 <= rep.ci_upper[rho_idx] {
                covered += 1;
            }
        }
    }

    let se_rho = rep1.se[rho_idx];
    report(
        "10",
        deterministic && worst_se_err < 1e-12 && covered >= 14,
        &format!(
            "bootstrap: deterministic = {deterministic}, max SE deviation = {worst_se_err:.1e}, \
             rho CI coverage {covered}/20 (need >= 14), se(rho) = {se_rho:.3}"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 11: rectangle-probability accuracy.
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_rectangle_probability_accuracy() {
    // Bivariate orthant at rho = 0.6.
    let cov2 = SpdMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 1.0])).unwrap();
    let inf = f64::INFINITY;
    let orthant = mvn_rect_prob(
        &dv(&[0.0, 0.0]),
        &dv(&[inf, inf]),
        &dv(&[0.0, 0.0]),
        &cov2,
        1e-6,
        1,
    )
    .unwrap()
    .probability;
    let expect = 0.25 + 0.6f64.asin() / (2.0 * PI);
    let orthant_err = (orthant - expect).abs();

    // Four-dimensional random rectangles vs plain Monte Carlo with 1e7 draws.
    let mut rng = ChaCha8Rng::seed_from_u64(1111);
    let mut worst_z: f64 = 0.0;
    for trial in 0..3 {
        let a = DMatrix::from_fn(4, 4, |_, _| rng.random::<f64>() - 0.5);
        let cov = SpdMatrix::new(&a * a.transpose() + DMatrix::identity(4, 4)).unwrap();
        let mu = DVector::from_fn(4, |_, _| rng.random::<f64>() - 0.5);
        let lower = DVector::from_fn(4, |i, _| mu[i] - 0.3 - rng.random::<f64>() * 1.5);
        let upper = DVector::from_fn(4, |i, _| mu[i] + 0.3 + rng.random::<f64>() * 1.5);
        let est = mvn_rect_prob(&lower, &upper, &mu, &cov, 1e-6, 40 + trial).unwrap();

        let chol = cov.chol().lower().clone();
        let n = 10_000_000usize;
        let mut hits = 0usize;
        for _ in 0..n {
            let z = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
            let y = &mu + &chol * z;
            if (0..4).all(|k| y[k] > lower[k] && y[k] < upper[k]) {
                hits += 1;
            }
        }
        let p_mc = hits as f64 / n as f64;
        let se = (p_mc * (1.0 - p_mc) / n as f64).sqrt();
        worst_z = worst_z.max((est.probability - p_mc).abs() / se);
    }
    report(
        "11",
        orthant_err < 1e-5 && worst_z < 3.0,
        &format!(
            "rectangle accuracy: orthant error = {orthant_err:.2e} (<1e-5); \
             4-dim vs 1e7-draw MC worst |z| = {worst_z:.2} (<3)"
        ),
    );
}
