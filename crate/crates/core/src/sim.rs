//! Monte Carlo harness: simulated value matrices, perturbation studies and
//! the comparison statistics built on them.
//!
//! Every replication draws from its own ChaCha20 stream, keyed by the run
//! seed and the replication number, so results do not depend on thread
//! scheduling and runs over disjoint replication ranges can be merged.

use std::ops::Range;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{cpd_estimate, tableau_from_panel};
use crate::error::{MplError, Result};
use crate::estimator::{fit, FitOptions, MplEstimate, Regime};
use crate::panel::Panel;

const MAX_REDRAWS: usize = 100;
const FLOOR_FRACTION: f64 = 1e-6;

/// How each replication's value matrix is produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scheme {
    /// `v_it = p̃_i λ_t q_it + ε_it` on the panel's present cells; the panel's
    /// own values are ignored.
    GenerateFromModel {
        reference_prices: Vec<f64>,
        indices: Vec<f64>,
    },
    /// Non-base columns are the observed ones plus independent noise.
    AdditiveNoise,
    /// Each non-base column is the previous simulated column plus noise,
    /// walking outward from the base period.
    RandomWalkNoise,
}

/// Monte Carlo settings. The noise sd of a replication is drawn once,
/// uniformly on `[sd_low, sd_high]`, and shared by all of its cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scheme: Scheme,
    pub noise_mean: f64,
    pub sd_low: f64,
    pub sd_high: f64,
    pub replications: u64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sd_low >= 0.0 && self.sd_low <= self.sd_high && self.sd_high.is_finite()) {
            return Err(MplError::InvalidConfig(format!(
                "noise sd range [{}, {}] is invalid",
                self.sd_low, self.sd_high
            )));
        }
        if !self.noise_mean.is_finite() {
            return Err(MplError::InvalidConfig("noise mean must be finite".into()));
        }
        if self.replications == 0 {
            return Err(MplError::InvalidConfig(
                "at least one replication is required".into(),
            ));
        }
        Ok(())
    }

    fn replication_rng(&self, replication: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(replication);
        rng
    }
}

/// An index estimator run on every replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimatorKind {
    Mpl { options: FitOptions },
    Tpd { weighted: bool },
}

impl EstimatorKind {
    pub fn mpl(regime: Regime) -> Self {
        EstimatorKind::Mpl {
            options: FitOptions::with_regime(regime),
        }
    }

    pub fn label(&self) -> String {
        match self {
            EstimatorKind::Mpl { options } => format!("mpl-{}", options.regime),
            EstimatorKind::Tpd { weighted: false } => "tpd".into(),
            EstimatorKind::Tpd { weighted: true } => "tpd-weighted".into(),
        }
    }

    /// Index vector and its standard errors, when available.
    pub fn run(&self, panel: &Panel) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        match self {
            EstimatorKind::Mpl { options } => {
                let est = fit(panel, options)?.estimate;
                Ok((
                    est.indices.as_slice().to_vec(),
                    est.index_se.map(|s| s.as_slice().to_vec()),
                ))
            }
            EstimatorKind::Tpd { weighted } => {
                let est = cpd_estimate(&tableau_from_panel(panel), *weighted, panel.base_index())?;
                Ok((
                    est.indices.as_slice().to_vec(),
                    est.se.map(|s| s.as_slice().to_vec()),
                ))
            }
        }
    }
}

/// Estimates from one replication, one entry per estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationResult {
    pub replication: u64,
    pub sd: f64,
    pub indices: Vec<Vec<f64>>,
    pub se: Vec<Option<Vec<f64>>>,
}

/// A replication discarded because an estimator failed on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedReplication {
    pub replication: u64,
    pub estimator: String,
    pub error: String,
}

/// Where the half-width of a band comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandSource {
    /// Mean over replications of the estimator's own standard error.
    ModelSe,
    /// Monte Carlo sd across replications, used when an estimator reports no
    /// standard errors.
    MonteCarlo,
}

/// Aggregates for one estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub mean_indices: Vec<f64>,
    pub mc_sd: Vec<f64>,
    pub mean_se: Option<Vec<f64>>,
    pub band_source: BandSource,
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
    /// SSE of the mean index against the reference path.
    pub sse_of_mean: f64,
    /// Mean over replications of the per-replication SSE.
    pub mean_sse: f64,
}

impl EstimatorSummary {
    pub fn band_width(&self) -> Vec<f64> {
        self.band_high
            .iter()
            .zip(&self.band_low)
            .map(|(h, l)| h - l)
            .collect()
    }
}

/// Outcome of a Monte Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub config: SimConfig,
    pub periods: Vec<String>,
    pub estimators: Vec<EstimatorKind>,
    /// Path each estimator is scored against: the true index for
    /// [`Scheme::GenerateFromModel`], otherwise the estimator's own result on
    /// the unperturbed panel.
    pub references: Vec<Vec<f64>>,
    pub replications: Vec<ReplicationResult>,
    pub dropped: Vec<DroppedReplication>,
    pub summaries: Vec<EstimatorSummary>,
}

impl SimReport {
    pub fn summary(&self, estimator: &str) -> Option<&EstimatorSummary> {
        self.summaries.iter().find(|s| s.estimator == estimator)
    }

    /// `(estimator, sse_of_mean, mean_sse)` per estimator.
    pub fn sse_table(&self) -> Vec<(String, f64, f64)> {
        self.summaries
            .iter()
            .map(|s| (s.estimator.clone(), s.sse_of_mean, s.mean_sse))
            .collect()
    }

    /// Flat `(replication, estimator, period, index)` rows for plotting.
    pub fn index_rows(&self) -> Vec<(u64, String, String, f64)> {
        let labels: Vec<String> = self.estimators.iter().map(EstimatorKind::label).collect();
        let mut rows = Vec::new();
        for r in &self.replications {
            for (k, idx) in r.indices.iter().enumerate() {
                for (t, x) in idx.iter().enumerate() {
                    rows.push((
                        r.replication,
                        labels[k].clone(),
                        self.periods[t].clone(),
                        *x,
                    ));
                }
            }
        }
        rows
    }

    /// Pool two runs over disjoint replication ranges of the same
    /// configuration. The result equals a single run over the union.
    pub fn merge(mut self, other: SimReport) -> Result<SimReport> {
        let same_config = SimConfig {
            replications: 0,
            ..self.config.clone()
        } == SimConfig {
            replications: 0,
            ..other.config.clone()
        };
        if !same_config || self.estimators != other.estimators || self.periods != other.periods {
            return Err(MplError::InvalidConfig(
                "reports come from different runs".into(),
            ));
        }
        let mut seen: Vec<u64> = self.attempted();
        seen.extend(other.attempted());
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(MplError::InvalidConfig("replication ranges overlap".into()));
        }
        self.replications.extend(other.replications);
        self.replications.sort_by_key(|r| r.replication);
        self.dropped.extend(other.dropped);
        self.dropped.sort_by_key(|d| d.replication);
        self.config.replications += other.config.replications;
        self.summaries = summarize(&self.estimators, &self.references, &self.replications)?;
        Ok(self)
    }

    fn attempted(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.replications.iter().map(|r| r.replication).collect();
        ids.extend(self.dropped.iter().map(|d| d.replication));
        ids.dedup();
        ids
    }
}

/// `Σ (a_i − b_i)²`.
pub fn sse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MplError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `base + noise`, redrawn until positive; after [`MAX_REDRAWS`] attempts the
/// cell is clamped to `floor`.
fn positive_draw(base: f64, noise: &Normal<f64>, floor: f64, rng: &mut ChaCha20Rng) -> f64 {
    for _ in 0..MAX_REDRAWS {
        let x = base + noise.sample(rng);
        if x > 0.0 {
            return x;
        }
    }
    warn!("value stayed non-positive after {MAX_REDRAWS} draws; clamped to {floor:e}");
    floor
}

fn column_floor(m: &DMatrix<f64>, mask: &DMatrix<bool>, t: usize) -> f64 {
    let present: Vec<f64> = (0..m.nrows())
        .filter(|&i| mask[(i, t)])
        .map(|i| m[(i, t)])
        .collect();
    let mean = present.iter().sum::<f64>() / present.len().max(1) as f64;
    FLOOR_FRACTION * mean.abs().max(f64::MIN_POSITIVE)
}

fn normal(mean: f64, sd: f64) -> Result<Normal<f64>> {
    Normal::new(mean, sd).map_err(|e| MplError::InvalidConfig(format!("noise distribution: {e}")))
}

fn model_values(
    q: &DMatrix<f64>,
    p_ref: &[f64],
    lambda: &[f64],
    noise: &Normal<f64>,
    rng: &mut ChaCha20Rng,
) -> Result<DMatrix<f64>> {
    let (n, t) = q.shape();
    if p_ref.len() != n {
        return Err(MplError::ShapeMismatch(format!(
            "{} reference prices for {n} entities",
            p_ref.len()
        )));
    }
    if lambda.len() != t {
        return Err(MplError::ShapeMismatch(format!(
            "{} index entries for {t} periods",
            lambda.len()
        )));
    }
    let mean = DMatrix::from_fn(n, t, |i, j| p_ref[i] * lambda[j] * q[(i, j)]);
    let mask = q.map(|x| x > 0.0);
    let mut v = DMatrix::zeros(n, t);
    for j in 0..t {
        let floor = column_floor(&mean, &mask, j);
        for i in 0..n {
            if mask[(i, j)] {
                v[(i, j)] = positive_draw(mean[(i, j)], noise, floor, rng);
            }
        }
    }
    Ok(v)
}

/// Values from the model with i.i.d. `N(0, noise_sd²)` errors on the cells
/// where `q > 0`. With `noise_sd = 0` the result is exactly `(p̃λ′) ∗ Q`.
pub fn generate_values(
    q: &DMatrix<f64>,
    p_ref: &DVector<f64>,
    lambda: &DVector<f64>,
    noise_sd: f64,
    seed: u64,
) -> Result<DMatrix<f64>> {
    if !(noise_sd >= 0.0) {
        return Err(MplError::InvalidConfig(format!(
            "noise sd {noise_sd} is negative"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    model_values(
        q,
        p_ref.as_slice(),
        lambda.as_slice(),
        &normal(0.0, noise_sd)?,
        &mut rng,
    )
}

/// Simulated value matrix of one replication.
fn replicate_values(
    panel: &Panel,
    cfg: &SimConfig,
    noise: &Normal<f64>,
    rng: &mut ChaCha20Rng,
) -> Result<DMatrix<f64>> {
    let v0 = panel.values();
    let q = panel.quantities();
    let mask = q.map(|x| x > 0.0);
    let (n, t) = v0.shape();
    let base = panel.base_index();
    match &cfg.scheme {
        Scheme::GenerateFromModel {
            reference_prices,
            indices,
        } => model_values(q, reference_prices, indices, noise, rng),
        Scheme::AdditiveNoise => {
            let mut v = v0.clone();
            for j in (0..t).filter(|&j| j != base) {
                let floor = column_floor(v0, &mask, j);
                for i in (0..n).filter(|&i| mask[(i, j)]) {
                    v[(i, j)] = positive_draw(v0[(i, j)], noise, floor, rng);
                }
            }
            Ok(v)
        }
        Scheme::RandomWalkNoise => {
            let mut v = v0.clone();
            let order = (base + 1..t)
                .map(|j| (j, j - 1))
                .chain((0..base).rev().map(|j| (j, j + 1)));
            for (j, prev) in order {
                let floor = column_floor(v0, &mask, j);
                for i in (0..n).filter(|&i| mask[(i, j)]) {
                    // A cell whose predecessor is unpriced restarts from its
                    // observed value.
                    let start = if mask[(i, prev)] {
                        v[(i, prev)]
                    } else {
                        v0[(i, j)]
                    };
                    v[(i, j)] = positive_draw(start, noise, floor, rng);
                }
            }
            Ok(v)
        }
    }
}

fn run_one(
    panel: &Panel,
    cfg: &SimConfig,
    estimators: &[EstimatorKind],
    replication: u64,
) -> Result<std::result::Result<ReplicationResult, DroppedReplication>> {
    let mut rng = cfg.replication_rng(replication);
    let sd = if cfg.sd_high > cfg.sd_low {
        rng.random_range(cfg.sd_low..cfg.sd_high)
    } else {
        cfg.sd_low
    };
    let noise = normal(cfg.noise_mean, sd)?;
    let values = replicate_values(panel, cfg, &noise, &mut rng)?;
    let simulated = Panel::new(
        panel.entities().to_vec(),
        panel.periods().to_vec(),
        panel.quantities().clone(),
        values,
        panel.base_index(),
    )?;
    let mut indices = Vec::with_capacity(estimators.len());
    let mut se = Vec::with_capacity(estimators.len());
    for est in estimators {
        match est.run(&simulated) {
            Ok((idx, s)) => {
                indices.push(idx);
                se.push(s);
            }
            Err(e) => {
                warn!(
                    "replication {replication} dropped: {} failed: {e}",
                    est.label()
                );
                return Ok(Err(DroppedReplication {
                    replication,
                    estimator: est.label(),
                    error: e.to_string(),
                }));
            }
        }
    }
    Ok(Ok(ReplicationResult {
        replication,
        sd,
        indices,
        se,
    }))
}

fn summarize(
    estimators: &[EstimatorKind],
    references: &[Vec<f64>],
    reps: &[ReplicationResult],
) -> Result<Vec<EstimatorSummary>> {
    if reps.is_empty() {
        return Err(MplError::InvalidConfig(
            "every replication was dropped".into(),
        ));
    }
    let m = reps.len() as f64;
    let t = references[0].len();
    let mut out = Vec::with_capacity(estimators.len());
    for (k, est) in estimators.iter().enumerate() {
        let mut mean = vec![0.0; t];
        for r in reps {
            for (acc, x) in mean.iter_mut().zip(&r.indices[k]) {
                *acc += x;
            }
        }
        mean.iter_mut().for_each(|x| *x /= m);

        let mut var = vec![0.0; t];
        for r in reps {
            for j in 0..t {
                let d = r.indices[k][j] - mean[j];
                var[j] += d * d;
            }
        }
        let mc_sd: Vec<f64> = var
            .iter()
            .map(|v| {
                if reps.len() > 1 {
                    (v / (m - 1.0)).sqrt()
                } else {
                    0.0
                }
            })
            .collect();

        let mean_se = if reps.iter().all(|r| r.se[k].is_some()) {
            let mut acc = vec![0.0; t];
            for r in reps {
                for (a, s) in acc.iter_mut().zip(r.se[k].as_ref().expect("checked above")) {
                    *a += s;
                }
            }
            Some(acc.into_iter().map(|a| a / m).collect::<Vec<f64>>())
        } else {
            None
        };
        let (band_source, half): (BandSource, Vec<f64>) = match &mean_se {
            Some(s) => (BandSource::ModelSe, s.iter().map(|x| 2.0 * x).collect()),
            None => (
                BandSource::MonteCarlo,
                mc_sd.iter().map(|x| 2.0 * x).collect(),
            ),
        };

        let mut mean_sse = 0.0;
        for r in reps {
            mean_sse += sse(&r.indices[k], &references[k])?;
        }
        out.push(EstimatorSummary {
            estimator: est.label(),
            band_low: mean.iter().zip(&half).map(|(a, h)| a - h).collect(),
            band_high: mean.iter().zip(&half).map(|(a, h)| a + h).collect(),
            sse_of_mean: sse(&mean, &references[k])?,
            mean_sse: mean_sse / m,
            mean_indices: mean,
            mc_sd,
            mean_se,
            band_source,
        });
    }
    Ok(out)
}

/// Run `cfg.replications` replications starting at replication 0.
pub fn run_perturbation(
    panel: &Panel,
    cfg: &SimConfig,
    estimators: &[EstimatorKind],
) -> Result<SimReport> {
    run_replications(panel, cfg, estimators, 0..cfg.replications)
}

/// Run the replications numbered in `range`; `cfg.replications` is ignored
/// except in the returned report, which records the range length.
pub fn run_replications(
    panel: &Panel,
    cfg: &SimConfig,
    estimators: &[EstimatorKind],
    range: Range<u64>,
) -> Result<SimReport> {
    if estimators.is_empty() {
        return Err(MplError::InvalidConfig("no estimator requested".into()));
    }
    let cfg = SimConfig {
        replications: range.end.saturating_sub(range.start),
        ..cfg.clone()
    };
    cfg.validate()?;

    let references = match &cfg.scheme {
        Scheme::GenerateFromModel { indices, .. } => {
            if indices.len() != panel.n_periods() {
                return Err(MplError::ShapeMismatch(format!(
                    "{} index entries for {} periods",
                    indices.len(),
                    panel.n_periods()
                )));
            }
            vec![indices.clone(); estimators.len()]
        }
        _ => estimators
            .iter()
            .map(|e| e.run(panel).map(|(idx, _)| idx))
            .collect::<Result<Vec<_>>>()?,
    };

    let outcomes = range
        .into_par_iter()
        .map(|r| run_one(panel, &cfg, estimators, r))
        .collect::<Result<Vec<_>>>()?;
    let mut replications = Vec::new();
    let mut dropped = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => replications.push(r),
            Err(d) => dropped.push(d),
        }
    }
    let summaries = summarize(estimators, &references, &replications)?;
    Ok(SimReport {
        config: cfg,
        periods: panel.periods().to_vec(),
        estimators: estimators.to_vec(),
        references,
        replications,
        dropped,
        summaries,
    })
}

/// `p̂_it = p̃̂_i λ̂_t` for each requested cell.
pub fn recover_missing_prices(est: &MplEstimate, cells: &[(usize, usize)]) -> Result<Vec<f64>> {
    let (rows, cols) = (est.n_entities(), est.n_periods());
    cells
        .iter()
        .map(|&(entity, period)| {
            if entity >= rows || period >= cols {
                return Err(MplError::OutOfRange {
                    entity,
                    period,
                    rows,
                    cols,
                });
            }
            let lambda = est.indices[period];
            if lambda == 0.0 {
                warn!("index is zero in period {period}; recovered price is zero");
            }
            Ok(est.reference_prices[entity] * lambda)
        })
        .collect()
}

/// Fitted price matrix `p̃̂ λ̂′`; unit rank by construction.
pub fn price_matrix_estimate(est: &MplEstimate) -> DMatrix<f64> {
    &est.reference_prices * est.indices.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{estimate_mpl, CovarianceSpec};

    fn small_panel() -> Panel {
        let q = DMatrix::from_row_slice(
            3,
            4,
            &[
                5.0, 8.0, 10.0, 10.0, 15.0, 18.0, 20.0, 10.0, 25.0, 27.0, 30.0, 35.0,
            ],
        );
        let p = DVector::from_vec(vec![2.0, 1.5, 0.9]);
        let l = DVector::from_vec(vec![1.0, 1.1, 1.2, 1.15]);
        let v = generate_values(&q, &p, &l, 0.3, 11).unwrap();
        Panel::from_matrices(q, v).unwrap()
    }

    fn cfg(scheme: Scheme, reps: u64, sd: f64) -> SimConfig {
        SimConfig {
            scheme,
            noise_mean: 0.0,
            sd_low: 0.0,
            sd_high: sd,
            replications: reps,
            seed: 42,
        }
    }

    #[test]
    fn sse_examples() {
        assert_eq!(sse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(sse(&[1.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert!(matches!(
            sse(&[1.0], &[1.0, 2.0]),
            Err(MplError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn zero_noise_generation_is_exact() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 0.0]);
        let v = generate_values(
            &q,
            &DVector::from_vec(vec![2.0, 3.0]),
            &DVector::from_vec(vec![1.0, 1.5]),
            0.0,
            1,
        )
        .unwrap();
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[2.0, 6.0, 9.0, 0.0]));
    }

    #[test]
    fn generation_shape_checked() {
        let q = DMatrix::from_element(2, 2, 1.0);
        let r = generate_values(
            &q,
            &DVector::from_vec(vec![1.0]),
            &DVector::from_vec(vec![1.0, 1.0]),
            0.0,
            1,
        );
        assert!(matches!(r, Err(MplError::ShapeMismatch(_))));
    }

    #[test]
    fn single_zero_noise_replication_equals_point_estimate() {
        let panel = small_panel();
        let ests = [
            EstimatorKind::mpl(Regime::Ols),
            EstimatorKind::Tpd { weighted: false },
        ];
        let rep = run_perturbation(&panel, &cfg(Scheme::AdditiveNoise, 1, 0.0), &ests).unwrap();
        for (k, e) in ests.iter().enumerate() {
            let (idx, _) = e.run(&panel).unwrap();
            assert_eq!(rep.summaries[k].mean_indices, idx);
            assert_eq!(rep.summaries[k].sse_of_mean, 0.0);
        }
    }

    #[test]
    fn zero_noise_random_walk_repeats_base_column() {
        let panel = small_panel();
        let c = cfg(Scheme::RandomWalkNoise, 1, 0.0);
        let noise = normal(0.0, 0.0).unwrap();
        let v = replicate_values(&panel, &c, &noise, &mut c.replication_rng(0)).unwrap();
        for t in 1..4 {
            assert_eq!(v.column(t), panel.values().column(0));
        }
    }

    #[test]
    fn deterministic_and_poolable() {
        let panel = small_panel();
        let ests = [
            EstimatorKind::mpl(Regime::GlsD),
            EstimatorKind::Tpd { weighted: true },
        ];
        let c = SimConfig {
            noise_mean: 0.5,
            ..cfg(Scheme::AdditiveNoise, 40, 1.0)
        };
        let a = run_perturbation(&panel, &c, &ests).unwrap();
        let b = run_perturbation(&panel, &c, &ests).unwrap();
        assert_eq!(a, b);
        let lo = run_replications(&panel, &c, &ests, 0..17).unwrap();
        let hi = run_replications(&panel, &c, &ests, 17..40).unwrap();
        let pooled = hi.merge(lo).unwrap();
        for k in 0..2 {
            for (x, y) in pooled.summaries[k]
                .mean_indices
                .iter()
                .zip(&a.summaries[k].mean_indices)
            {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn bands_bracket_means() {
        let panel = small_panel();
        let rep = run_perturbation(
            &panel,
            &cfg(Scheme::RandomWalkNoise, 20, 0.5),
            &[EstimatorKind::mpl(Regime::Ols)],
        )
        .unwrap();
        let s = &rep.summaries[0];
        for t in 0..4 {
            assert!(s.band_low[t] <= s.mean_indices[t] && s.mean_indices[t] <= s.band_high[t]);
        }
        assert!(s.mean_sse >= 0.0);
        assert_eq!(rep.index_rows().len(), 20 * 4);
    }

    #[test]
    fn generate_scheme_scores_against_truth() {
        let panel = small_panel();
        let truth = vec![1.0, 1.1, 1.2, 1.15];
        let scheme = Scheme::GenerateFromModel {
            reference_prices: vec![2.0, 1.5, 0.9],
            indices: truth.clone(),
        };
        let rep = run_perturbation(
            &panel,
            &cfg(scheme, 5, 0.0),
            &[EstimatorKind::mpl(Regime::Ols)],
        )
        .unwrap();
        assert_eq!(rep.references[0], truth);
        assert!(rep.summaries[0].sse_of_mean < 1e-20);
    }

    #[test]
    fn negative_values_are_clamped() {
        let panel = small_panel();
        let c = SimConfig {
            noise_mean: -1e6,
            ..cfg(Scheme::AdditiveNoise, 1, 0.0)
        };
        let rep = run_perturbation(&panel, &c, &[EstimatorKind::mpl(Regime::Ols)]);
        // Clamped values are still positive, so estimation proceeds.
        assert!(rep.is_ok());
    }

    #[test]
    fn recovery_and_price_matrix() {
        let q = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 3.0, 1.0, 2.0]);
        let p = DVector::from_vec(vec![2.0, 0.5]);
        let l = DVector::from_vec(vec![1.0, 1.2, 1.4]);
        let v = generate_values(&q, &p, &l, 0.0, 0).unwrap();
        let panel = Panel::from_matrices(q, v).unwrap();
        let est = estimate_mpl(&panel, &CovarianceSpec::identity(2)).unwrap();
        let got = recover_missing_prices(&est, &[(0, 2)]).unwrap();
        assert!((got[0] - 2.8).abs() < 1e-12);
        assert!(matches!(
            recover_missing_prices(&est, &[(2, 0)]),
            Err(MplError::OutOfRange { .. })
        ));
        let pm = price_matrix_estimate(&est);
        assert_eq!(pm.rank(1e-9), 1);
    }
}
