//! Closed-form GLS estimation of deflators, indices and reference prices.
//!
//! The model is `δ_t v_t = p̃ ∗ q_t + ε_t` with `δ_base = 1` and a
//! block-diagonal error covariance. Writing `D = Σ_t (q_t q_t') ∗ Ω_t⁻¹`,
//! `w_t = q_t ∗ Ω_t⁻¹ v_t` and `c_t = v_t' Ω_t⁻¹ v_t`, the deflators of the
//! non-base periods solve `κ δ = W' D⁻¹ w_base` with the Schur complement
//! `κ = diag(c) − W' D⁻¹ W`, and the reference prices are
//! `p̃ = D⁻¹ (w_base + W δ)`.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{MplError, Result};
use crate::linalg::{condition_number_sym, spd_factor, spd_inverse, symmetrize, ILL_CONDITIONED};
use crate::panel::{basket_panel, BasketMode, BasketReport, Panel};

/// Error-covariance regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// Spherical errors.
    #[serde(rename = "ols")]
    Ols,
    /// Heteroskedastic, uncorrelated errors: one shared diagonal block.
    #[serde(rename = "gls-d")]
    GlsD,
    /// Stationary correlated errors: one shared full block, shrunk toward
    /// its diagonal.
    #[serde(rename = "gls-s")]
    GlsS,
    /// Heteroskedastic correlated errors: one shared full block, unshrunk.
    #[serde(rename = "gls-f")]
    GlsF,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::Ols, Regime::GlsD, Regime::GlsS, Regime::GlsF];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Ols => "ols",
            Regime::GlsD => "gls-d",
            Regime::GlsS => "gls-s",
            Regime::GlsF => "gls-f",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Regime {
    type Err = MplError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ols" => Ok(Regime::Ols),
            "gls-d" | "glsd" => Ok(Regime::GlsD),
            "gls-s" | "glss" => Ok(Regime::GlsS),
            "gls-f" | "glsf" => Ok(Regime::GlsF),
            other => Err(MplError::InvalidConfig(format!("unknown regime `{other}`"))),
        }
    }
}

/// Diagonal blocks of the error covariance.
#[derive(Debug, Clone, PartialEq)]
pub enum Blocks {
    /// One `N x N` block used for every period.
    Shared(DMatrix<f64>),
    /// One block per period, in panel column order.
    PerPeriod(Vec<DMatrix<f64>>),
}

/// Block-diagonal error covariance together with the settings that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSpec {
    pub regime: Regime,
    pub blocks: Blocks,
    pub shrinkage: f64,
    pub ridge: f64,
}

impl CovarianceSpec {
    /// Identity blocks: the OLS case.
    pub fn identity(n: usize) -> Self {
        CovarianceSpec {
            regime: Regime::Ols,
            blocks: Blocks::Shared(DMatrix::identity(n, n)),
            shrinkage: 0.0,
            ridge: 0.0,
        }
    }

    /// A single user-supplied block shared by all periods.
    pub fn shared(regime: Regime, block: DMatrix<f64>) -> Self {
        CovarianceSpec {
            regime,
            blocks: Blocks::Shared(block),
            shrinkage: 0.0,
            ridge: 0.0,
        }
    }

    /// User-supplied per-period blocks.
    pub fn per_period(regime: Regime, blocks: Vec<DMatrix<f64>>) -> Self {
        CovarianceSpec {
            regime,
            blocks: Blocks::PerPeriod(blocks),
            shrinkage: 0.0,
            ridge: 0.0,
        }
    }

    /// Block dimension.
    pub fn dim(&self) -> usize {
        match &self.blocks {
            Blocks::Shared(b) => b.nrows(),
            Blocks::PerPeriod(bs) => bs.first().map_or(0, |b| b.nrows()),
        }
    }

    /// Block for period `t`.
    pub fn block(&self, t: usize) -> &DMatrix<f64> {
        match &self.blocks {
            Blocks::Shared(b) => b,
            Blocks::PerPeriod(bs) => &bs[t],
        }
    }

    /// The shared block, if the covariance is stationary.
    pub fn shared_block(&self) -> Option<&DMatrix<f64>> {
        match &self.blocks {
            Blocks::Shared(b) => Some(b),
            Blocks::PerPeriod(_) => None,
        }
    }

    /// Expanded per-period blocks for `t` periods.
    pub fn expanded(&self, t: usize) -> Vec<DMatrix<f64>> {
        (0..t).map(|j| self.block(j).clone()).collect()
    }

    /// Check dimensions against a panel of `n` entities and `t` periods.
    pub fn check(&self, n: usize, t: usize) -> Result<()> {
        let check_block = |b: &DMatrix<f64>, what: String| -> Result<()> {
            if b.shape() != (n, n) {
                return Err(MplError::DimensionMismatch(format!(
                    "{what} is {}x{}, expected {n}x{n}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            Ok(())
        };
        match &self.blocks {
            Blocks::Shared(b) => check_block(b, "shared covariance block".into()),
            Blocks::PerPeriod(bs) => {
                if bs.len() != t {
                    return Err(MplError::DimensionMismatch(format!(
                        "{} covariance blocks for {t} periods",
                        bs.len()
                    )));
                }
                bs.iter()
                    .enumerate()
                    .try_for_each(|(j, b)| check_block(b, format!("covariance block {j}")))
            }
        }
    }

    /// Inverse of every block, one per period. Shared covariances are
    /// factorized once.
    pub(crate) fn inverses(&self, t: usize) -> Result<Vec<DMatrix<f64>>> {
        let invert = |b: &DMatrix<f64>, j: Option<usize>| -> Result<DMatrix<f64>> {
            let chol = spd_factor(b).ok_or_else(|| {
                MplError::SingularBlock(match j {
                    Some(j) => format!("block for period {j}"),
                    None => "shared block".into(),
                })
            })?;
            Ok(spd_inverse(&chol))
        };
        match &self.blocks {
            Blocks::Shared(b) => {
                let inv = invert(b, None)?;
                Ok(vec![inv; t])
            }
            Blocks::PerPeriod(bs) => bs
                .iter()
                .enumerate()
                .map(|(j, b)| invert(b, Some(j)))
                .collect(),
        }
    }
}

/// Non-fatal conditions detected during estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EstimateWarning {
    /// A deflator came out zero or negative; the index entry is reported as
    /// computed (zero when the deflator is exactly zero).
    NonPositiveDeflator { period: String, deflator: f64 },
    /// A system matrix has a condition number above the threshold.
    IllConditioned { matrix: String, condition: f64 },
    /// No residual degrees of freedom; variances are unavailable.
    NoResidualDof,
}

impl fmt::Display for EstimateWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimateWarning::NonPositiveDeflator { period, deflator } => {
                write!(f, "non-positive deflator {deflator} in period {period}")
            }
            EstimateWarning::IllConditioned { matrix, condition } => {
                write!(
                    f,
                    "{matrix} is ill-conditioned (condition number {condition:.3e})"
                )
            }
            EstimateWarning::NoResidualDof => f.write_str("no residual degrees of freedom"),
        }
    }
}

/// Result of an MPL estimation. Vectors indexed by period follow the panel's
/// column order; `kappa` covers the non-base periods in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct MplEstimate {
    pub entities: Vec<String>,
    pub periods: Vec<String>,
    pub base_index: usize,
    pub regime: Regime,
    pub deflators: DVector<f64>,
    pub indices: DVector<f64>,
    pub reference_prices: DVector<f64>,
    pub kappa: DMatrix<f64>,
    pub sigma2: Option<f64>,
    pub deflator_se: Option<DVector<f64>>,
    pub index_se: Option<DVector<f64>>,
    pub residuals: DMatrix<f64>,
    pub dof: i64,
    pub warnings: Vec<EstimateWarning>,
}

impl MplEstimate {
    pub fn n_periods(&self) -> usize {
        self.deflators.len()
    }

    pub fn n_entities(&self) -> usize {
        self.reference_prices.len()
    }

    /// Positions of the non-base periods.
    pub fn non_base(&self) -> Vec<usize> {
        non_base_periods(self.n_periods(), self.base_index)
    }

    /// Serializable view with plain vectors.
    pub fn to_record(&self) -> EstimateRecord {
        EstimateRecord {
            deflators: self.deflators.iter().copied().collect(),
            indices: self.indices.iter().copied().collect(),
            reference_prices: self.reference_prices.iter().copied().collect(),
            index_se: self.index_se.as_ref().map(|v| v.iter().copied().collect()),
            sigma2: self.sigma2,
            dof: self.dof,
            warnings: self.warnings.clone(),
            regime: self.regime,
            base: self.periods[self.base_index].clone(),
            periods: self.periods.clone(),
            entities: self.entities.clone(),
            deflator_se: self
                .deflator_se
                .as_ref()
                .map(|v| v.iter().copied().collect()),
            kappa: rows_of(&self.kappa),
            residuals: rows_of(&self.residuals),
        }
    }

    /// Rebuild an estimate from its serialized form.
    pub fn from_record(r: &EstimateRecord) -> Result<Self> {
        let t = r.periods.len();
        let n = r.entities.len();
        let len_check = |len: usize, want: usize| {
            if len != want {
                Err(MplError::LengthMismatch {
                    left: len,
                    right: want,
                })
            } else {
                Ok(())
            }
        };
        len_check(r.deflators.len(), t)?;
        len_check(r.indices.len(), t)?;
        len_check(r.reference_prices.len(), n)?;
        let base_index = r.periods.iter().position(|p| *p == r.base).ok_or_else(|| {
            MplError::InvalidConfig(format!("base period `{}` not among periods", r.base))
        })?;
        let kappa = matrix_of(&r.kappa, t.saturating_sub(1), t.saturating_sub(1))?;
        let residuals = matrix_of(&r.residuals, n, t)?;
        Ok(MplEstimate {
            entities: r.entities.clone(),
            periods: r.periods.clone(),
            base_index,
            regime: r.regime,
            deflators: DVector::from_vec(r.deflators.clone()),
            indices: DVector::from_vec(r.indices.clone()),
            reference_prices: DVector::from_vec(r.reference_prices.clone()),
            kappa,
            sigma2: r.sigma2,
            deflator_se: r.deflator_se.clone().map(DVector::from_vec),
            index_se: r.index_se.clone().map(DVector::from_vec),
            residuals,
            dof: r.dof,
            warnings: r.warnings.clone(),
        })
    }
}

/// JSON form of [`MplEstimate`]. The leading keys are the headline results;
/// the remaining ones make the record self-contained for later updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub deflators: Vec<f64>,
    pub indices: Vec<f64>,
    pub reference_prices: Vec<f64>,
    pub index_se: Option<Vec<f64>>,
    pub sigma2: Option<f64>,
    pub dof: i64,
    pub warnings: Vec<EstimateWarning>,
    pub regime: Regime,
    pub base: String,
    pub periods: Vec<String>,
    pub entities: Vec<String>,
    pub deflator_se: Option<Vec<f64>>,
    pub kappa: Vec<Vec<f64>>,
    pub residuals: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_of(rows: &[Vec<f64>], n: usize, m: usize) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != m) {
        return Err(MplError::ShapeMismatch(format!(
            "expected a {n}x{m} matrix"
        )));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// `1/δ_t` where `δ_t ≠ 0`, else 0.
pub fn reciprocal_map(delta: &DVector<f64>) -> DVector<f64> {
    delta.map(|d| if d != 0.0 { 1.0 / d } else { 0.0 })
}

pub(crate) fn non_base_periods(t: usize, base: usize) -> Vec<usize> {
    (0..t).filter(|&j| j != base).collect()
}

/// Sufficient statistics of the normal equations.
pub(crate) struct Pieces {
    /// `Σ_t (q_t q_t') ∗ Ω_t⁻¹`
    pub d: DMatrix<f64>,
    /// Column `t` is `q_t ∗ Ω_t⁻¹ v_t`, all periods.
    pub w: DMatrix<f64>,
    /// `v_t' Ω_t⁻¹ v_t`, all periods.
    pub c: DVector<f64>,
}

pub(crate) fn pieces(panel: &Panel, inverses: &[DMatrix<f64>]) -> Pieces {
    let (n, t) = (panel.n_entities(), panel.n_periods());
    let q = panel.quantities();
    let v = panel.values();
    let mut d = DMatrix::zeros(n, n);
    let mut w = DMatrix::zeros(n, t);
    let mut c = DVector::zeros(t);
    for j in 0..t {
        let (dj, wj, cj) = column_pieces(
            &q.column(j).into_owned(),
            &v.column(j).into_owned(),
            &inverses[j],
        );
        d += dj;
        w.set_column(j, &wj);
        c[j] = cj;
    }
    Pieces { d, w, c }
}

/// Contribution of one column: `(q q') ∗ Ω⁻¹`, `q ∗ Ω⁻¹ v` and `v' Ω⁻¹ v`.
pub(crate) fn column_pieces(
    q: &DVector<f64>,
    v: &DVector<f64>,
    inv: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>, f64) {
    let d = (q * q.transpose()).component_mul(inv);
    let vt = inv * v;
    let w = q.component_mul(&vt);
    let c = v.dot(&vt);
    (d, w, c)
}

/// Solution of the normal equations from their pieces.
pub(crate) struct Solved {
    pub deflators: DVector<f64>,
    pub reference_prices: DVector<f64>,
    pub kappa: DMatrix<f64>,
    pub kappa_chol: Cholesky<f64, Dyn>,
    pub warnings: Vec<EstimateWarning>,
}

pub(crate) fn solve_pieces(p: &Pieces, base: usize) -> Result<Solved> {
    let t = p.c.len();
    let nb = non_base_periods(t, base);
    let mut warnings = Vec::new();

    let d_chol = spd_factor(&p.d).ok_or_else(|| {
        MplError::SingularKernel("quantity kernel D is not positive definite".into())
    })?;
    let cond_d = condition_number_sym(&p.d);
    if cond_d > ILL_CONDITIONED {
        warnings.push(EstimateWarning::IllConditioned {
            matrix: "D".into(),
            condition: cond_d,
        });
    }

    let w_nb = p.w.select_columns(&nb);
    let w_base = p.w.column(base).into_owned();
    let dinv_w = d_chol.solve(&w_nb);
    let dinv_wb = d_chol.solve(&w_base);

    let mut kappa = -(w_nb.transpose() * &dinv_w);
    for (k, &j) in nb.iter().enumerate() {
        kappa[(k, k)] += p.c[j];
    }
    let kappa = symmetrize(&kappa);
    let kappa_chol = spd_factor(&kappa).ok_or_else(|| {
        MplError::SingularKernel("Schur complement kappa is not positive definite".into())
    })?;
    let cond_k = condition_number_sym(&kappa);
    if cond_k > ILL_CONDITIONED {
        warnings.push(EstimateWarning::IllConditioned {
            matrix: "kappa".into(),
            condition: cond_k,
        });
    }

    let rhs = w_nb.transpose() * &dinv_wb;
    let delta_nb = kappa_chol.solve(&rhs);

    let mut deflators = DVector::from_element(t, 1.0);
    for (k, &j) in nb.iter().enumerate() {
        deflators[j] = delta_nb[k];
    }
    let reference_prices = d_chol.solve(&(w_base + &w_nb * &delta_nb));

    Ok(Solved {
        deflators,
        reference_prices,
        kappa,
        kappa_chol,
        warnings,
    })
}

/// Residuals `e_it = δ_t v_it − p̃_i q_it`; zero on absent cells.
pub fn residuals(
    panel: &Panel,
    deflators: &DVector<f64>,
    reference_prices: &DVector<f64>,
) -> DMatrix<f64> {
    let q = panel.quantities();
    let v = panel.values();
    DMatrix::from_fn(panel.n_entities(), panel.n_periods(), |i, t| {
        v[(i, t)] * deflators[t] - reference_prices[i] * q[(i, t)]
    })
}

/// Present cells minus the `N + T − 1` free parameters.
pub fn residual_dof(panel: &Panel) -> i64 {
    let present = panel.quantities().iter().filter(|&&q| q > 0.0).count() as i64;
    present - (panel.n_entities() + panel.n_periods() - 1) as i64
}

/// GLS estimate of deflators, indices, reference prices and their variances.
///
/// ```
/// use mpl_index::{estimate_mpl, CovarianceSpec, Panel};
/// use nalgebra::DMatrix;
///
/// let q = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
/// // Prices 2 and 5 in the base period, inflation 10% then 25%.
/// let v = DMatrix::from_row_slice(2, 3, &[2.0, 4.4, 7.5, 20.0, 27.5, 37.5]);
/// let panel = Panel::from_matrices(q, v).unwrap();
/// let est = estimate_mpl(&panel, &CovarianceSpec::identity(2)).unwrap();
/// assert!((est.indices[1] - 1.1).abs() < 1e-12);
/// assert!((est.indices[2] - 1.25).abs() < 1e-12);
/// assert!((est.reference_prices[1] - 5.0).abs() < 1e-12);
/// ```
pub fn estimate_mpl(panel: &Panel, cov: &CovarianceSpec) -> Result<MplEstimate> {
    let (n, t) = (panel.n_entities(), panel.n_periods());
    cov.check(n, t)?;
    let inverses = cov.inverses(t)?;
    let p = pieces(panel, &inverses);
    let solved = solve_pieces(&p, panel.base_index())?;
    Ok(finish_estimate(panel, cov.regime, &inverses, solved))
}

/// Residuals, variances and warnings on top of a solved system.
pub(crate) fn finish_estimate(
    panel: &Panel,
    regime: Regime,
    inverses: &[DMatrix<f64>],
    solved: Solved,
) -> MplEstimate {
    let t = panel.n_periods();
    let base = panel.base_index();
    let nb = non_base_periods(t, base);
    let Solved {
        deflators,
        reference_prices,
        kappa,
        kappa_chol,
        mut warnings,
    } = solved;

    let indices = reciprocal_map(&deflators);
    for &j in &nb {
        if deflators[j] <= 0.0 {
            warnings.push(EstimateWarning::NonPositiveDeflator {
                period: panel.periods()[j].clone(),
                deflator: deflators[j],
            });
        }
    }

    let resid = residuals(panel, &deflators, &reference_prices);
    let dof = residual_dof(panel);
    let (sigma2, deflator_se, index_se) = if dof > 0 {
        let ss: f64 = (0..t)
            .map(|j| {
                let e = resid.column(j);
                (e.transpose() * &inverses[j] * e)[(0, 0)]
            })
            .sum();
        let s2 = (ss / dof as f64).max(0.0);
        let kinv_diag = spd_inverse(&kappa_chol).diagonal();
        let mut dse = DVector::zeros(t);
        let mut ise = DVector::zeros(t);
        for (k, &j) in nb.iter().enumerate() {
            let var = (s2 * kinv_diag[k]).max(0.0);
            dse[j] = var.sqrt();
            let d = deflators[j];
            ise[j] = if d != 0.0 {
                var.sqrt() / (d * d)
            } else {
                f64::INFINITY
            };
        }
        (Some(s2), Some(dse), Some(ise))
    } else {
        warnings.push(EstimateWarning::NoResidualDof);
        (None, None, None)
    };

    MplEstimate {
        entities: panel.entities().to_vec(),
        periods: panel.periods().to_vec(),
        base_index: base,
        regime,
        deflators,
        indices,
        reference_prices,
        kappa,
        sigma2,
        deflator_se,
        index_se,
        residuals: resid,
        dof,
        warnings,
    }
}

/// Deflators for a stationary covariance computed with whole-tableau
/// Hadamard products: `D = (Q Q') ∗ Ω̃⁻¹`, `Ṽ = Ω̃⁻¹ V`,
/// `κ = I ∗ (Ṽ₁' V₁) − (Q₁' ∗ Ṽ₁') D⁻¹ (Q₁ ∗ Ṽ₁)`.
///
/// Mathematically identical to [`estimate_mpl`] with a shared block; kept
/// as a separate route so the two can be checked against each other.
pub fn estimate_stationary(panel: &Panel, omega: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (n, t) = (panel.n_entities(), panel.n_periods());
    if omega.shape() != (n, n) {
        return Err(MplError::DimensionMismatch(format!(
            "covariance block is {}x{}, expected {n}x{n}",
            omega.nrows(),
            omega.ncols()
        )));
    }
    let base = panel.base_index();
    let nb = non_base_periods(t, base);
    let om_chol =
        spd_factor(omega).ok_or_else(|| MplError::SingularBlock("shared block".into()))?;
    let om_inv = spd_inverse(&om_chol);

    let q = panel.quantities();
    let v = panel.values();
    let d = (q * q.transpose()).component_mul(&om_inv);
    let v_hat = om_chol.solve(v);

    let q1 = q.select_columns(&nb);
    let v1 = v.select_columns(&nb);
    let v1_hat = v_hat.select_columns(&nb);
    let w1 = q1.component_mul(&v1_hat);
    let wb = q.column(base).component_mul(&v_hat.column(base));

    let d_chol = spd_factor(&d).ok_or_else(|| {
        MplError::SingularKernel("quantity kernel D is not positive definite".into())
    })?;
    let gram = v1_hat.transpose() * &v1;
    let kappa = DMatrix::from_diagonal(&gram.diagonal()) - w1.transpose() * d_chol.solve(&w1);
    let k_chol = spd_factor(&kappa).ok_or_else(|| {
        MplError::SingularKernel("Schur complement kappa is not positive definite".into())
    })?;
    let delta_nb = k_chol.solve(&(w1.transpose() * d_chol.solve(&wb)));

    let mut out = DVector::from_element(t, 1.0);
    for (k, &j) in nb.iter().enumerate() {
        out[j] = delta_nb[k];
    }
    Ok(out)
}

/// Two-period index as a ratio of weighted price averages with weights
/// `π̄_i = p_i2 q_i1² q_i2² / (θ_i (q_i1² + q_i2²))`.
///
/// Goods absent in either period, and goods with infinite `θ_i`, get zero
/// weight. Returns the index and the weight vector.
///
/// ```
/// use mpl_index::two_period_closed_form;
/// use nalgebra::DVector;
///
/// let one = DVector::from_element(1, 1.0);
/// let (lambda, _) = two_period_closed_form(&one, &one, &one, &DVector::from_element(1, 2.0), &one).unwrap();
/// assert_eq!(lambda, 2.0);
/// ```
pub fn two_period_closed_form(
    q1: &DVector<f64>,
    q2: &DVector<f64>,
    v1: &DVector<f64>,
    v2: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    let n = q1.len();
    for len in [q2.len(), v1.len(), v2.len(), theta.len()] {
        if len != n {
            return Err(MplError::LengthMismatch {
                left: n,
                right: len,
            });
        }
    }
    let mut weights = DVector::zeros(n);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        if !(q1[i] > 0.0 && q2[i] > 0.0) || theta[i].is_infinite() {
            continue;
        }
        let (p1, p2) = (v1[i] / q1[i], v2[i] / q2[i]);
        let (a, b) = (q1[i] * q1[i], q2[i] * q2[i]);
        let w = p2 * a * b / (theta[i] * (a + b));
        weights[i] = w;
        num += p2 * w;
        den += p1 * w;
    }
    if weights.iter().all(|&w| w == 0.0) {
        return Err(MplError::AllWeightsZero);
    }
    if den == 0.0 {
        return Err(MplError::ZeroDenominator);
    }
    Ok((num / den, weights))
}

/// Covariance estimation from a residual tableau.
///
/// Only cells flagged present in `mask` enter the moments. GLS-d uses the
/// mean squared residual of each entity; GLS-s the pairwise second moment
/// over co-present periods shrunk toward its diagonal; GLS-f the same moment
/// unshrunk. Every estimated block gets `ridge · I` added.
pub fn omega_from_residuals(
    resid: &DMatrix<f64>,
    mask: &DMatrix<bool>,
    regime: Regime,
    shrinkage: f64,
    ridge: f64,
) -> Result<CovarianceSpec> {
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(MplError::InvalidConfig(format!(
            "shrinkage {shrinkage} outside [0, 1]"
        )));
    }
    if !(ridge >= 0.0) {
        return Err(MplError::InvalidConfig(format!(
            "ridge {ridge} is negative"
        )));
    }
    if resid.shape() != mask.shape() {
        return Err(MplError::ShapeMismatch(
            "residuals and mask differ in shape".into(),
        ));
    }
    let (n, t) = resid.shape();
    let block = match regime {
        Regime::Ols => {
            return Ok(CovarianceSpec::identity(n));
        }
        Regime::GlsD => {
            let mut diag = DVector::zeros(n);
            for i in 0..n {
                let cells: Vec<f64> = (0..t)
                    .filter(|&j| mask[(i, j)])
                    .map(|j| resid[(i, j)])
                    .collect();
                if cells.is_empty() {
                    return Err(MplError::DegenerateResiduals { entity: i });
                }
                diag[i] = cells.iter().map(|e| e * e).sum::<f64>() / cells.len() as f64;
            }
            DMatrix::from_diagonal(&diag)
        }
        Regime::GlsS | Regime::GlsF => {
            let mut s = DMatrix::zeros(n, n);
            for i in 0..n {
                for k in i..n {
                    let (mut acc, mut cnt) = (0.0, 0usize);
                    for j in 0..t {
                        if mask[(i, j)] && mask[(k, j)] {
                            acc += resid[(i, j)] * resid[(k, j)];
                            cnt += 1;
                        }
                    }
                    let m = if cnt > 0 { acc / cnt as f64 } else { 0.0 };
                    s[(i, k)] = m;
                    s[(k, i)] = m;
                }
            }
            if regime == Regime::GlsS {
                let diag = DMatrix::from_diagonal(&s.diagonal());
                s * (1.0 - shrinkage) + diag * shrinkage
            } else {
                s
            }
        }
    };
    let block = block + DMatrix::identity(n, n) * ridge;
    if spd_factor(&block).is_none() {
        return Err(MplError::SingularBlock(format!("estimated {regime} block")));
    }
    Ok(CovarianceSpec {
        regime,
        blocks: Blocks::Shared(block),
        shrinkage: if regime == Regime::GlsS {
            shrinkage
        } else {
            0.0
        },
        ridge,
    })
}

/// Presence mask of a panel.
pub fn presence_mask(panel: &Panel) -> DMatrix<bool> {
    panel.quantities().map(|q| q > 0.0)
}

/// Feasible covariance from first-stage OLS residuals (two-step).
pub fn estimate_omega(
    panel: &Panel,
    regime: Regime,
    shrinkage: f64,
    ridge: f64,
) -> Result<CovarianceSpec> {
    estimate_omega_iterated(panel, regime, shrinkage, ridge, 0)
}

/// As [`estimate_omega`], then re-estimates the block `iterations` more
/// times from the residuals of the previous GLS fit.
pub fn estimate_omega_iterated(
    panel: &Panel,
    regime: Regime,
    shrinkage: f64,
    ridge: f64,
    iterations: usize,
) -> Result<CovarianceSpec> {
    let n = panel.n_entities();
    if regime == Regime::Ols {
        return Ok(CovarianceSpec::identity(n));
    }
    let mask = presence_mask(panel);
    let mut cov = CovarianceSpec::identity(n);
    for _ in 0..=iterations {
        let est = estimate_mpl(panel, &cov)?;
        cov = omega_from_residuals(&est.residuals, &mask, regime, shrinkage, ridge)?;
    }
    Ok(cov)
}

/// Settings for the one-call estimation pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub regime: Regime,
    pub basket: BasketMode,
    pub shrinkage: f64,
    pub ridge: f64,
    pub iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            regime: Regime::Ols,
            basket: BasketMode::Mpl,
            shrinkage: 0.5,
            ridge: 1e-8,
            iterations: 0,
        }
    }
}

impl FitOptions {
    pub fn with_regime(regime: Regime) -> Self {
        FitOptions {
            regime,
            ..FitOptions::default()
        }
    }
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct Fit {
    pub estimate: MplEstimate,
    pub basket: BasketReport,
    pub panel: Panel,
    pub covariance: CovarianceSpec,
}

/// Basket filtering, covariance estimation and GLS in one call.
pub fn fit(panel: &Panel, opts: &FitOptions) -> Result<Fit> {
    let (filtered, basket) = basket_panel(panel, opts.basket)?;
    let covariance = estimate_omega_iterated(
        &filtered,
        opts.regime,
        opts.shrinkage,
        opts.ridge,
        opts.iterations,
    )?;
    let estimate = estimate_mpl(&filtered, &covariance)?;
    Ok(Fit {
        estimate,
        basket,
        panel: filtered,
        covariance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn noiseless(q: &DMatrix<f64>, p: &[f64], lambda: &[f64]) -> Panel {
        let v = DMatrix::from_fn(q.nrows(), q.ncols(), |i, t| p[i] * lambda[t] * q[(i, t)]);
        Panel::from_matrices(q.clone(), v).unwrap()
    }

    fn small_q() -> DMatrix<f64> {
        DMatrix::from_row_slice(
            3,
            4,
            &[
                5.0, 8.0, 10.0, 10.0, 15.0, 18.0, 20.0, 10.0, 25.0, 27.0, 30.0, 35.0,
            ],
        )
    }

    #[test]
    fn reciprocal_map_examples() {
        let r = reciprocal_map(&DVector::from_vec(vec![1.0, 2.0, 0.5]));
        assert_eq!(r.as_slice(), &[1.0, 0.5, 2.0]);
        let r = reciprocal_map(&DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(r.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn noiseless_identity_case() {
        let q = small_q();
        let panel = noiseless(&q, &[2.0, 1.5, 0.9], &[1.0; 4]);
        let est = estimate_mpl(&panel, &CovarianceSpec::identity(3)).unwrap();
        for t in 0..4 {
            assert_relative_eq!(est.deflators[t], 1.0, epsilon = 1e-12);
            assert_relative_eq!(est.indices[t], 1.0, epsilon = 1e-12);
        }
        assert_relative_eq!(est.reference_prices[1], 1.5, epsilon = 1e-12);
        assert!(est.sigma2.unwrap() < 1e-20);
        assert_eq!(est.dof, 12 - 6);
        assert_eq!(est.deflator_se.as_ref().unwrap()[0], 0.0);
    }

    #[test]
    fn non_first_base() {
        let q = small_q();
        let lambda = [1.0, 1.1, 1.3, 0.9];
        let panel = noiseless(&q, &[2.0, 1.5, 0.9], &lambda)
            .with_base(2)
            .unwrap();
        let est = estimate_mpl(&panel, &CovarianceSpec::identity(3)).unwrap();
        for t in 0..4 {
            assert_relative_eq!(est.indices[t], lambda[t] / 1.3, max_relative = 1e-12);
        }
        assert_eq!(est.deflators[2], 1.0);
        assert_eq!(est.kappa.nrows(), 3);
    }

    #[test]
    fn stationary_route_matches() {
        let q = small_q();
        let mut v = q.clone();
        let noise = [
            0.3, -0.2, 0.1, 0.05, -0.4, 0.2, 0.3, -0.1, 0.15, 0.0, -0.3, 0.25,
        ];
        for (k, x) in v.iter_mut().enumerate() {
            *x = *x * 1.7 + noise[k];
        }
        let panel = Panel::from_matrices(q, v).unwrap();
        let om = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, -0.2, 0.1, -0.2, 0.5]);
        let a = estimate_mpl(&panel, &CovarianceSpec::shared(Regime::GlsF, om.clone())).unwrap();
        let b = estimate_stationary(&panel, &om).unwrap();
        for t in 0..4 {
            assert_relative_eq!(a.deflators[t], b[t], max_relative = 1e-12);
        }
    }

    #[test]
    fn gls_d_mean_squared_residual() {
        let resid = DMatrix::from_row_slice(2, 4, &[1.0, -1.0, 1.0, -1.0, 2.0, -2.0, 2.0, -2.0]);
        let mask = DMatrix::from_element(2, 4, true);
        let cov = omega_from_residuals(&resid, &mask, Regime::GlsD, 0.5, 0.0).unwrap();
        assert_eq!(
            cov.block(0),
            &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))
        );
    }

    #[test]
    fn gls_d_masks_absent_cells() {
        let resid = DMatrix::from_row_slice(1, 3, &[2.0, 100.0, 2.0]);
        let mask = DMatrix::from_row_slice(1, 3, &[true, false, true]);
        let cov = omega_from_residuals(&resid, &mask, Regime::GlsD, 0.5, 0.0).unwrap();
        assert_eq!(cov.block(0)[(0, 0)], 4.0);
        let none = DMatrix::from_element(1, 3, false);
        assert_eq!(
            omega_from_residuals(&resid, &none, Regime::GlsD, 0.5, 0.0),
            Err(MplError::DegenerateResiduals { entity: 0 })
        );
    }

    #[test]
    fn ols_regime_is_identity() {
        let panel = noiseless(&small_q(), &[1.0, 2.0, 3.0], &[1.0, 1.2, 1.1, 1.4]);
        let cov = estimate_omega(&panel, Regime::Ols, 0.5, 1e-8).unwrap();
        assert_eq!(cov.block(0), &DMatrix::identity(3, 3));
    }

    #[test]
    fn zero_residual_block_is_singular_without_ridge() {
        let panel = noiseless(&small_q(), &[1.0, 2.0, 3.0], &[1.0, 1.2, 1.1, 1.4]);
        let e = estimate_omega(&panel, Regime::GlsD, 0.5, 0.0);
        // Exact arithmetic gives zero residuals; floating point may leave
        // dust, so either outcome is a valid block or a singular one.
        if let Err(err) = e {
            assert!(matches!(err, MplError::SingularBlock(_)));
        }
        assert!(estimate_omega(&panel, Regime::GlsD, 0.5, 1e-8).is_ok());
    }

    #[test]
    fn two_period_examples() {
        let one = DVector::from_element(1, 1.0);
        let (l, w) =
            two_period_closed_form(&one, &one, &one, &DVector::from_element(1, 2.0), &one).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(w[0], 1.0);

        // Absent first good: identical to the two-good sub-problem.
        let q1 = DVector::from_vec(vec![0.0, 2.0, 3.0]);
        let q2 = DVector::from_vec(vec![4.0, 1.0, 5.0]);
        let v1 = DVector::from_vec(vec![0.0, 5.0, 4.0]);
        let v2 = DVector::from_vec(vec![9.0, 3.0, 7.0]);
        let th = DVector::from_element(3, 1.0);
        let (full, w) = two_period_closed_form(&q1, &q2, &v1, &v2, &th).unwrap();
        assert_eq!(w[0], 0.0);
        let sub = |x: &DVector<f64>| x.rows(1, 2).into_owned();
        let (part, _) =
            two_period_closed_form(&sub(&q1), &sub(&q2), &sub(&v1), &sub(&v2), &sub(&th)).unwrap();
        assert_eq!(full, part);
    }

    #[test]
    fn two_period_all_absent() {
        let q1 = DVector::from_vec(vec![1.0, 0.0]);
        let q2 = DVector::from_vec(vec![0.0, 1.0]);
        let th = DVector::from_element(2, 1.0);
        assert_eq!(
            two_period_closed_form(&q1, &q2, &q1, &q2, &th),
            Err(MplError::AllWeightsZero)
        );
    }

    #[test]
    fn two_period_matches_general_estimator() {
        let q = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 1.5, 2.5, 2.0, 4.0, 3.0]);
        let v = DMatrix::from_row_slice(4, 2, &[2.2, 4.1, 6.3, 3.5, 1.1, 1.3, 8.2, 6.9]);
        let panel = Panel::from_matrices(q.clone(), v.clone()).unwrap();
        let est = estimate_mpl(&panel, &CovarianceSpec::identity(4)).unwrap();
        let col = |m: &DMatrix<f64>, j| m.column(j).into_owned();
        let (l, _) = two_period_closed_form(
            &col(&q, 0),
            &col(&q, 1),
            &col(&v, 0),
            &col(&v, 1),
            &DVector::from_element(4, 1.0),
        )
        .unwrap();
        assert_relative_eq!(est.indices[1], l, max_relative = 1e-12);
    }

    #[test]
    fn value_scaling() {
        let q = small_q();
        let v = DMatrix::from_fn(3, 4, |i, t| {
            q[(i, t)] * (1.0 + 0.1 * i as f64) * (1.0 + 0.05 * ((i * 7 + t * 3) % 5) as f64)
        });
        let a = estimate_mpl(
            &Panel::from_matrices(q.clone(), v.clone()).unwrap(),
            &CovarianceSpec::identity(3),
        )
        .unwrap();
        let b = estimate_mpl(
            &Panel::from_matrices(q, v * 3.5).unwrap(),
            &CovarianceSpec::identity(3),
        )
        .unwrap();
        for t in 0..4 {
            assert_relative_eq!(a.deflators[t], b.deflators[t], max_relative = 1e-12);
        }
        for i in 0..3 {
            assert_relative_eq!(
                a.reference_prices[i] * 3.5,
                b.reference_prices[i],
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn record_round_trip() {
        let panel = noiseless(&small_q(), &[1.0, 2.0, 3.0], &[1.0, 1.2, 1.1, 1.4]);
        let est = estimate_mpl(&panel, &CovarianceSpec::identity(3)).unwrap();
        let back = MplEstimate::from_record(&est.to_record()).unwrap();
        assert_eq!(back, est);
    }

    #[test]
    fn singular_kernel() {
        // No good is present in both periods, so kappa vanishes.
        let q = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 2.0]);
        let panel = Panel::from_matrices(q.clone(), q).unwrap();
        let r = estimate_mpl(&panel, &CovarianceSpec::identity(2));
        assert!(matches!(r, Err(MplError::SingularKernel(_))), "{r:?}");
    }

    #[test]
    fn regime_parsing() {
        for r in Regime::ALL {
            assert_eq!(r.name().parse::<Regime>().unwrap(), r);
        }
        assert!("gls-x".parse::<Regime>().is_err());
    }
}
