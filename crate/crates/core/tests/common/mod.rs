//! Random panels and covariance blocks shared by the integration tests.
#![allow(dead_code)]

use mpl_index::{CovarianceSpec, Panel, Regime};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Random reference prices and index (base period 0 pinned to 1).
pub fn truth(rng: &mut ChaCha20Rng, n: usize, t: usize) -> (DVector<f64>, DVector<f64>) {
    let p = DVector::from_fn(n, |_, _| rng.random_range(0.5..5.0));
    let l = DVector::from_fn(t, |j, _| {
        if j == 0 {
            1.0
        } else {
            rng.random_range(0.7..1.5)
        }
    });
    (p, l)
}

/// Quantities on `[1, 30]`; off-base cells are absent with probability
/// `gap`, keeping at least one good per period and two periods per good.
pub fn quantities(rng: &mut ChaCha20Rng, n: usize, t: usize, gap: f64) -> DMatrix<f64> {
    let mut q = DMatrix::from_fn(n, t, |_, _| rng.random_range(1.0..30.0));
    for j in 1..t {
        for i in 0..n {
            if rng.random_bool(gap) {
                let col_left = (0..n).filter(|&k| k != i && q[(k, j)] > 0.0).count();
                let row_left = (0..t).filter(|&s| s != j && q[(i, s)] > 0.0).count();
                if col_left >= 1 && row_left >= 2 {
                    q[(i, j)] = 0.0;
                }
            }
        }
    }
    q
}

/// `v = p̃ λ q (1 + noise·u)`, `u` uniform on `[-1, 1]`, on present cells.
pub fn values(
    rng: &mut ChaCha20Rng,
    q: &DMatrix<f64>,
    p: &DVector<f64>,
    l: &DVector<f64>,
    noise: f64,
) -> DMatrix<f64> {
    DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| {
        if q[(i, j)] > 0.0 {
            p[i] * l[j] * q[(i, j)] * (1.0 + noise * rng.random_range(-1.0..1.0))
        } else {
            0.0
        }
    })
}

pub fn random_panel(
    rng: &mut ChaCha20Rng,
    n: usize,
    t: usize,
    gap: f64,
    noise: f64,
) -> (Panel, DVector<f64>, DVector<f64>) {
    let (p, l) = truth(rng, n, t);
    let q = quantities(rng, n, t, gap);
    let v = values(rng, &q, &p, &l, noise);
    (
        Panel::from_matrices(q, v).expect("valid random panel"),
        p,
        l,
    )
}

/// Well-conditioned SPD block: `A A' / n + I`.
pub fn spd_block(rng: &mut ChaCha20Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() / n as f64 + DMatrix::identity(n, n)
}

/// A covariance with the structure of `regime`: identity, random diagonal,
/// one shared full block, or a distinct full block per period.
pub fn structured_covariance(
    rng: &mut ChaCha20Rng,
    regime: Regime,
    n: usize,
    t: usize,
) -> CovarianceSpec {
    match regime {
        Regime::Ols => CovarianceSpec::identity(n),
        Regime::GlsD => CovarianceSpec::shared(
            regime,
            DMatrix::from_diagonal(&DVector::from_fn(n, |_, _| rng.random_range(0.2..5.0))),
        ),
        Regime::GlsS => CovarianceSpec::shared(regime, spd_block(rng, n)),
        Regime::GlsF => {
            CovarianceSpec::per_period(regime, (0..t).map(|_| spd_block(rng, n)).collect())
        }
    }
}
