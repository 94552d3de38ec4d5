//! Acceptance checks, one line per criterion.
//!
//! Runs without the libtest harness so every line is printed on a normal
//! `cargo test`. The process fails when a criterion outside `KNOWN_RED`
//! fails, or when a known red starts passing (so the record gets updated).

mod common;

use std::time::{Duration, Instant};

use mpl_index::baseline::{cpd_estimate, tableau_from_panel};
use mpl_index::classical::{
    axiom_suite, classical_index, mpl_two_period, theta_for, AxiomParams, AxiomStatus, IndexKind,
    MplIndex, TwoPeriodInstance, Weighting,
};
use mpl_index::datasets::{
    synthetic_panel, worked_example, SyntheticDesign, WorkedCase, WorkedExample,
};
use mpl_index::oracle::{max_relative_error, stacked_estimate};
use mpl_index::sim::{
    price_matrix_estimate, run_perturbation, sse, EstimatorKind, Scheme, SimConfig,
};
use mpl_index::updater::{append_period, update_multilateral, NewColumn};
use mpl_index::{estimate_mpl, fit, BasketMode, FitOptions, Panel, Regime};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Criteria expected to fail; see the project notes for the analysis.
const KNOWN_RED: &[u32] = &[2, 9];

// Criterion 1.
const C1_TARGET: f64 = 0.00333;
const C1_ABS_TOL: f64 = 1.5e-3;
const C1_MAX_TIME: Duration = Duration::from_secs(1);
// Criterion 2.
const C2_OLS: [(WorkedCase, f64); 2] = [
    (WorkedCase::ClassicalBasket, 0.00126),
    (WorkedCase::MplBasket, 0.00212),
];
const C2_OLS_ABS_TOL: f64 = 1.5e-3;
const C2_GLS: [(WorkedCase, Regime, f64); 6] = [
    (WorkedCase::Complete, Regime::GlsS, 0.00308),
    (WorkedCase::Complete, Regime::GlsD, 0.00311),
    (WorkedCase::ClassicalBasket, Regime::GlsS, 0.00053),
    (WorkedCase::ClassicalBasket, Regime::GlsD, 0.00327),
    (WorkedCase::MplBasket, Regime::GlsS, 0.00219),
    (WorkedCase::MplBasket, Regime::GlsD, 0.00352),
];
const C2_GLS_REL_TOL: f64 = 0.5;
// Criterion 3.
const C3_TPD_TARGET: f64 = 0.04327;
const C3_REL_TOL: f64 = 0.25;
// Criterion 4.
const C4_REF_PRICES: [f64; 3] = [0.0165, 0.0008, 0.0055];
const C4_PRICE_MATRIX: [f64; 3] = [0.1324, 0.0227, 0.0724];
const C4_REL_TOL: f64 = 0.5;
// Criterion 5.
const C5_PANELS: usize = 200;
const C5_TOL: f64 = 1e-10;
const C5_MAX_TIME: Duration = Duration::from_secs(30);
// Criterion 6.
const C6_INSTANCES: usize = 500;
const C6_TOL: f64 = 1e-12;
// Criterion 7.
const C7_INSTANCES: usize = 500;
// Criterion 8.
const C8_CONTINUATION_TOL: f64 = 1e-8;
const C8_MULTILATERAL_TOL: f64 = 1e-10;
const C8_TRIALS: usize = 200;
// Criterion 9.
const C9_REPLICATIONS: u64 = 1000;
const C9_MAX_TIME: Duration = Duration::from_secs(300);
const C9_SEED: u64 = 20_040_217;
// Criterion 10.
const C10_TOL: f64 = 1e-10;

struct Outcome {
    id: u32,
    pass: bool,
    detail: String,
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Index SSE against the true path for one worked case.
fn worked_index_sse(ex: &WorkedExample, case: WorkedCase, regime: Regime) -> f64 {
    let (panel, basket) = ex.case(case);
    let opts = FitOptions {
        basket,
        ..FitOptions::with_regime(regime)
    };
    let f = fit(&panel, &opts).expect("worked example fits");
    sse(f.estimate.indices.as_slice(), ex.index.as_slice()).unwrap()
}

fn criterion_1(ex: &WorkedExample) -> Outcome {
    let start = Instant::now();
    let got = worked_index_sse(ex, WorkedCase::Complete, Regime::Ols);
    let took = start.elapsed();
    Outcome {
        id: 1,
        pass: (got - C1_TARGET).abs() <= C1_ABS_TOL && took < C1_MAX_TIME,
        detail: format!("OLS index SSE {got:.5} (target {C1_TARGET} ± {C1_ABS_TOL}), {took:?}"),
    }
}

fn criterion_2(ex: &WorkedExample) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (case, target) in C2_OLS {
        let got = worked_index_sse(ex, case, Regime::Ols);
        let ok = (got - target).abs() <= C2_OLS_ABS_TOL;
        pass &= ok;
        parts.push(format!(
            "{} ols {got:.5}/{target}{}",
            case.label(),
            if ok { "" } else { " FAIL" }
        ));
    }
    for (case, regime, target) in C2_GLS {
        let got = worked_index_sse(ex, case, regime);
        let ok = rel(got, target) <= C2_GLS_REL_TOL;
        pass &= ok;
        parts.push(format!(
            "{} {regime} {got:.5}/{target}{}",
            case.label(),
            if ok { "" } else { " FAIL" }
        ));
    }
    Outcome {
        id: 2,
        pass,
        detail: parts.join("; "),
    }
}

/// Index and price matrix of the dummy regression on a basket-filtered panel.
fn tpd_on(panel: &Panel) -> (DVector<f64>, DMatrix<f64>) {
    let est =
        cpd_estimate(&tableau_from_panel(panel), false, panel.base_index()).expect("tpd fits");
    let pm = &est.product_effects * est.indices.transpose();
    (est.indices, pm)
}

fn filtered_case(ex: &WorkedExample, case: WorkedCase, regime: Regime) -> mpl_index::Fit {
    let (panel, basket) = ex.case(case);
    fit(
        &panel,
        &FitOptions {
            basket,
            ..FitOptions::with_regime(regime)
        },
    )
    .expect("worked example fits")
}

fn criterion_3(ex: &WorkedExample) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for case in [WorkedCase::Complete, WorkedCase::ClassicalBasket] {
        let f = filtered_case(ex, case, Regime::Ols);
        let mpl = sse(f.estimate.indices.as_slice(), ex.index.as_slice()).unwrap();
        let (tpd_idx, _) = tpd_on(&f.panel);
        let tpd = sse(tpd_idx.as_slice(), ex.index.as_slice()).unwrap();
        if case == WorkedCase::Complete {
            let ok = rel(tpd, C3_TPD_TARGET) <= C3_REL_TOL;
            pass &= ok;
            parts.push(format!("tpd {tpd:.5}/{C3_TPD_TARGET}"));
        }
        pass &= mpl < tpd;
        parts.push(format!("{} mpl {mpl:.5} < tpd {tpd:.5}", case.label()));
    }
    Outcome {
        id: 3,
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_4(ex: &WorkedExample) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, case) in WorkedCase::ALL.into_iter().enumerate() {
        let f = filtered_case(ex, case, Regime::Ols);
        let kept = &f.basket.kept;
        let p_true = DVector::from_fn(kept.len(), |i, _| ex.reference_prices[kept[i]]);
        let truth = &p_true * ex.index.transpose();
        let a1 = sse(f.estimate.reference_prices.as_slice(), p_true.as_slice()).unwrap();
        let pm = price_matrix_estimate(&f.estimate);
        let a2 = sse(pm.as_slice(), truth.as_slice()).unwrap();
        let (_, tpd_pm) = tpd_on(&f.panel);
        let a2_tpd = sse(tpd_pm.as_slice(), truth.as_slice()).unwrap();
        let ok = rel(a1, C4_REF_PRICES[k]) <= C4_REL_TOL
            && rel(a2, C4_PRICE_MATRIX[k]) <= C4_REL_TOL
            && a2 < a2_tpd;
        pass &= ok;
        parts.push(format!(
            "{} p {a1:.4}/{} P {a2:.4}/{} tpd P {a2_tpd:.4}",
            case.label(),
            C4_REF_PRICES[k],
            C4_PRICE_MATRIX[k]
        ));
    }
    Outcome {
        id: 4,
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for k in 0..C5_PANELS {
        let regime = Regime::ALL[k % 4];
        let n = rng.random_range(1..=10);
        let t = rng.random_range(2..=8);
        let gap = if k % 3 == 0 { 0.2 } else { 0.0 };
        let (panel, _, _) = common::random_panel(&mut rng, n, t, gap, 0.1);
        let cov = common::structured_covariance(&mut rng, regime, n, t);
        match (estimate_mpl(&panel, &cov), stacked_estimate(&panel, &cov)) {
            (Ok(a), Ok(b)) => worst = worst.max(max_relative_error(&a, &b)),
            _ => failures += 1,
        }
    }
    let took = start.elapsed();
    Outcome {
        id: 5,
        pass: failures == 0 && worst <= C5_TOL && took < C5_MAX_TIME,
        detail: format!("{C5_PANELS} panels, max rel err {worst:.2e} (≤ {C5_TOL:e}), {failures} failures, {took:?}"),
    }
}

fn random_instance(rng: &mut ChaCha20Rng, with_gaps: bool) -> TwoPeriodInstance {
    let n = rng.random_range(1..=8);
    let p1 = DVector::from_fn(n, |_, _| rng.random_range(0.5..10.0));
    let p2 = DVector::from_fn(n, |i, _| p1[i] * rng.random_range(0.5..2.0));
    let mut q1 = DVector::from_fn(n, |_, _| rng.random_range(0.5..20.0));
    let q2 = DVector::from_fn(n, |_, _| rng.random_range(0.5..20.0));
    if with_gaps && n > 1 && rng.random_bool(0.5) {
        q1[rng.random_range(1..n)] = 0.0;
    }
    TwoPeriodInstance::new(p1, p2, q1, q2).expect("valid instance")
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for kind in IndexKind::ALL {
        for _ in 0..C6_INSTANCES {
            let inst = random_instance(&mut rng, true);
            match (
                mpl_two_period(&inst, &theta_for(kind, &inst)),
                classical_index(kind, &inst),
            ) {
                (Ok((m, _)), Ok(c)) => worst = worst.max(rel(m, c)),
                _ => failures += 1,
            }
        }
    }
    Outcome {
        id: 6,
        pass: failures == 0 && worst <= C6_TOL,
        detail: format!("5 kinds x {C6_INSTANCES}, max rel err {worst:.2e} (≤ {C6_TOL:e})"),
    }
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    const ALWAYS: [&str; 10] = [
        "P.1", "P.2", "P.3", "P.4", "P.5", "P.6", "P.7", "P.8", "P.9", "P.12",
    ];
    let mut bad: Vec<String> = Vec::new();
    for _ in 0..C7_INSTANCES {
        let inst = random_instance(&mut rng, false);
        let n = inst.len();
        let mut params = AxiomParams::new(n);
        params.gamma = DVector::from_fn(n, |_, _| rng.random_range(0.1..10.0));
        params.k = DVector::from_fn(n, |_, _| rng.random_range(1.01..3.0));
        params.alpha = rng.random_range(0.2..5.0);
        params.beta = rng.random_range(0.2..5.0);

        let unit = axiom_suite(&MplIndex::new(Weighting::Unit), &inst, &params);
        for p in ALWAYS {
            if unit.status(p) != Some(AxiomStatus::Pass) {
                bad.push(format!("{p}: {:?}", unit.row(p)));
            }
        }
        for p in ["P.10", "P.11"] {
            if unit.status(p) != Some(AxiomStatus::NotApplicable) {
                bad.push(format!("{p} should be not-applicable under unit weights"));
            }
        }

        let z = rng.random_range(0.1..10.0);
        let prop = axiom_suite(
            &MplIndex::new(Weighting::PriceProportional { z }),
            &inst,
            &params,
        );
        if prop.status("P.10") != Some(AxiomStatus::Pass) {
            bad.push(format!("P.10: {:?}", prop.row("P.10")));
        }

        let p3 = DVector::from_fn(n, |i, _| inst.p1[i] * rng.random_range(0.5..2.0));
        let q3 = DVector::from_fn(n, |_, _| rng.random_range(0.5..20.0));
        params.third = Some((p3, q3));
        let gk = axiom_suite(
            &MplIndex::new(Weighting::Kind(IndexKind::GearyKhamis)),
            &inst,
            &params,
        );
        if gk.status("P.11") != Some(AxiomStatus::Pass) {
            bad.push(format!("P.11: {:?}", gk.row("P.11")));
        }
    }
    Outcome {
        id: 7,
        pass: bad.is_empty(),
        detail: format!(
            "{C7_INSTANCES} instances, {} violations{}",
            bad.len(),
            bad.first()
                .map(|b| format!(" (first: {b})"))
                .unwrap_or_default()
        ),
    }
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let mut parts = Vec::new();

    // Temporal fixity and noiseless continuation.
    let mut fixity = true;
    let mut worst_cont: f64 = 0.0;
    for _ in 0..C8_TRIALS {
        let n = rng.random_range(2..=8);
        let t = rng.random_range(2..=7);
        let (p, l) = common::truth(&mut rng, n, t + 1);
        let q = common::quantities(&mut rng, n, t + 1, 0.0);
        let v = common::values(&mut rng, &q, &p, &l, 0.0);
        let panel =
            Panel::from_matrices(q.columns(0, t).into_owned(), v.columns(0, t).into_owned())
                .unwrap();
        let cov = mpl_index::CovarianceSpec::identity(n);
        let prev = estimate_mpl(&panel, &cov).unwrap();
        let col = NewColumn::new("next", q.column(t).into_owned(), v.column(t).into_owned());
        let (ext, _) = append_period(&prev, &panel, &col, &cov).unwrap();
        fixity &= (0..t).all(|j| {
            ext.deflators[j].to_bits() == prev.deflators[j].to_bits()
                && ext.indices[j].to_bits() == prev.indices[j].to_bits()
        });
        worst_cont = worst_cont.max(rel(ext.indices[t], l[t]));
    }
    parts.push(format!(
        "fixity bit-exact {fixity}; continuation max rel err {worst_cont:.2e}"
    ));

    // Multilateral update versus a full fit.
    let mut worst_multi: f64 = 0.0;
    for k in 0..C8_TRIALS {
        let n = rng.random_range(1..=8);
        let t = rng.random_range(2..=7);
        let (panel, p, _) = common::random_panel(&mut rng, n, t, 0.15, 0.1);
        let regime = Regime::ALL[k % 3];
        let cov = common::structured_covariance(&mut rng, regime, n, t);
        let block = cov.block(0).clone();
        let q = DVector::from_fn(n, |_, _| rng.random_range(1.0..30.0));
        let lam = rng.random_range(0.7..1.5);
        let v = DVector::from_fn(n, |i, _| {
            p[i] * lam * q[i] * (1.0 + 0.1 * rng.random_range(-1.0..1.0))
        });
        let col = NewColumn::new("added", q.clone(), v.clone()).with_block(block);
        let upd = update_multilateral(&panel, &col, &cov).unwrap();
        let ext = panel.append_column("added", &q, &v).unwrap();
        let full = estimate_mpl(&ext, &cov).unwrap();
        worst_multi = worst_multi.max(max_relative_error(&upd, &full));
    }
    parts.push(format!("multilateral max rel err {worst_multi:.2e}"));
    Outcome {
        id: 8,
        pass: fixity && worst_cont <= C8_CONTINUATION_TOL && worst_multi <= C8_MULTILATERAL_TOL,
        detail: parts.join("; "),
    }
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let panel = synthetic_panel(&SyntheticDesign::default()).unwrap().panel;
    let estimators = [
        EstimatorKind::mpl(Regime::GlsD),
        EstimatorKind::Tpd { weighted: false },
    ];
    let schemes = [
        ("additive", Scheme::AdditiveNoise, 20_000.0, 1_000.0),
        ("random-walk", Scheme::RandomWalkNoise, -5_000.0, 800.0),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, scheme, mean, sd_high) in schemes {
        let cfg = SimConfig {
            scheme,
            noise_mean: mean,
            sd_low: 0.0,
            sd_high,
            replications: C9_REPLICATIONS,
            seed: C9_SEED,
        };
        let a = run_perturbation(&panel, &cfg, &estimators).unwrap();
        let mpl = a.summaries[0].band_width();
        let tpd = a.summaries[1].band_width();
        let ratio = mpl
            .iter()
            .zip(&tpd)
            .filter(|(_, t)| **t > 0.0)
            .map(|(m, t)| m / t)
            .fold(0.0, f64::max);
        let narrower = mpl.iter().zip(&tpd).all(|(m, t)| m <= t);
        let b = run_perturbation(&panel, &cfg, &estimators).unwrap();
        let deterministic = a == b;
        pass &= narrower && deterministic;
        parts.push(format!(
            "{name}: max width ratio {ratio:.3}, dropped {}, deterministic {deterministic}",
            a.dropped.len()
        ));
    }
    let took = start.elapsed();
    pass &= took < C9_MAX_TIME;
    parts.push(format!("{took:?}"));
    Outcome {
        id: 9,
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for regime in Regime::ALL {
        for _ in 0..25 {
            let n = rng.random_range(1..=8);
            let t = rng.random_range(2..=7);
            let (panel, p, l) = common::random_panel(&mut rng, n, t, 0.15, 0.0);
            let opts = FitOptions {
                basket: BasketMode::Mpl,
                ..FitOptions::with_regime(regime)
            };
            match fit(&panel, &opts) {
                Ok(f) => {
                    let kept = &f.basket.kept;
                    for j in 0..t {
                        worst = worst.max(rel(f.estimate.indices[j], l[j]));
                    }
                    for (i, &e) in kept.iter().enumerate() {
                        worst = worst.max(rel(f.estimate.reference_prices[i], p[e]));
                    }
                }
                Err(_) => failures += 1,
            }
        }
    }
    Outcome {
        id: 10,
        pass: failures == 0 && worst <= C10_TOL,
        detail: format!(
            "4 regimes x 25 panels, max rel err {worst:.2e} (≤ {C10_TOL:e}), {failures} failures"
        ),
    }
}

fn main() {
    let ex = worked_example();
    let outcomes = [
        criterion_1(&ex),
        criterion_2(&ex),
        criterion_3(&ex),
        criterion_4(&ex),
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ];
    let mut unexpected = Vec::new();
    for o in &outcomes {
        let known = KNOWN_RED.contains(&o.id);
        let tag = match (o.pass, known) {
            (true, false) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
            (true, true) => "PASS (listed as known red)",
        };
        println!("criterion {:>2}: {tag}: {}", o.id, o.detail);
        if o.pass == known {
            unexpected.push(o.id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
