//! Adding a period or country to an existing estimate.
//!
//! Two flavours:
//!
//! * [`update_multilateral`] folds the new column into the normal equations
//!   and re-solves jointly; every entry may move, exactly as a fresh fit on
//!   the extended panel would.
//! * [`update_multiperiod`] holds the published deflators fixed and solves
//!   only for the new one, so history is never rewritten:
//!   `δ_{T+1} = [c − w' D_u⁻¹ w]⁻¹ w' D_u⁻¹ Σ_j δ_j w_j`, where `D_u` already
//!   contains the new column and `w = q_{T+1} ∗ Ω_{T+1}⁻¹ v_{T+1}`.

use nalgebra::{DMatrix, DVector};

use crate::error::{MplError, Result};
use crate::estimator::{
    column_pieces, estimate_omega, finish_estimate, pieces, reciprocal_map, residual_dof,
    residuals, solve_pieces, CovarianceSpec, MplEstimate,
};
use crate::linalg::{spd_factor, spd_inverse};
use crate::panel::Panel;

/// A column to append: quantities and values per entity (zero pairs mark
/// absence) and an optional covariance block for it.
#[derive(Debug, Clone, PartialEq)]
pub struct NewColumn {
    pub label: String,
    pub quantities: DVector<f64>,
    pub values: DVector<f64>,
    pub block: Option<DMatrix<f64>>,
}

impl NewColumn {
    pub fn new(label: impl Into<String>, quantities: DVector<f64>, values: DVector<f64>) -> Self {
        NewColumn {
            label: label.into(),
            quantities,
            values,
            block: None,
        }
    }

    pub fn with_block(mut self, block: DMatrix<f64>) -> Self {
        self.block = Some(block);
        self
    }
}

/// Extended panel and the inverse of the new column's block.
fn prepare(panel: &Panel, col: &NewColumn, cov: &CovarianceSpec) -> Result<(Panel, DMatrix<f64>)> {
    let extended = panel.append_column(col.label.clone(), &col.quantities, &col.values)?;
    let block = match &col.block {
        Some(b) => {
            if b.shape() != (panel.n_entities(), panel.n_entities()) {
                return Err(MplError::DimensionMismatch(format!(
                    "new block is {}x{}, expected {n}x{n}",
                    b.nrows(),
                    b.ncols(),
                    n = panel.n_entities()
                )));
            }
            b.clone()
        }
        None => estimate_omega(
            &extended,
            cov.regime,
            cov.shrinkage.clamp(0.0, 1.0),
            cov.ridge.max(0.0),
        )?
        .block(0)
        .clone(),
    };
    let chol = spd_factor(&block)
        .ok_or_else(|| MplError::SingularBlock("block of the new column".into()))?;
    Ok((extended, spd_inverse(&chol)))
}

/// Joint re-estimation with one more column, computed by bordering the
/// normal-equation pieces of the existing panel.
pub fn update_multilateral(
    panel: &Panel,
    col: &NewColumn,
    cov: &CovarianceSpec,
) -> Result<MplEstimate> {
    let (n, t) = (panel.n_entities(), panel.n_periods());
    cov.check(n, t)?;
    let (extended, new_inv) = prepare(panel, col, cov)?;
    let mut inverses = cov.inverses(t)?;
    let old = pieces(panel, &inverses);

    let (d_new, w_new, c_new) = column_pieces(&col.quantities, &col.values, &new_inv);
    let mut p = old;
    p.d += d_new;
    p.w = p.w.insert_column(t, 0.0);
    p.w.set_column(t, &w_new);
    p.c = p.c.insert_row(t, c_new);
    inverses.push(new_inv);

    let solved = solve_pieces(&p, extended.base_index())?;
    Ok(finish_estimate(&extended, cov.regime, &inverses, solved))
}

fn check_prev(prev: &MplEstimate, panel: &Panel) -> Result<()> {
    if prev.deflators.len() != panel.n_periods()
        || prev.reference_prices.len() != panel.n_entities()
        || prev.periods != panel.periods()
        || prev.entities != panel.entities()
        || prev.base_index != panel.base_index()
    {
        return Err(MplError::StaleEstimate(format!(
            "estimate covers {} entities and {} periods, panel has {} and {}",
            prev.reference_prices.len(),
            prev.deflators.len(),
            panel.n_entities(),
            panel.n_periods()
        )));
    }
    Ok(())
}

struct FixedHistory {
    extended: Panel,
    delta: f64,
    /// `c − w' D_u⁻¹ w`
    kappa: f64,
    reference_prices: DVector<f64>,
}

fn solve_fixed_history(
    prev: &MplEstimate,
    panel: &Panel,
    col: &NewColumn,
    cov: &CovarianceSpec,
) -> Result<FixedHistory> {
    check_prev(prev, panel)?;
    let (n, t) = (panel.n_entities(), panel.n_periods());
    cov.check(n, t)?;
    let (extended, new_inv) = prepare(panel, col, cov)?;
    let inverses = cov.inverses(t)?;
    let old = pieces(panel, &inverses);
    let (d_new, w_new, c_new) = column_pieces(&col.quantities, &col.values, &new_inv);
    let d_u = old.d + d_new;
    let chol = spd_factor(&d_u).ok_or_else(|| {
        MplError::SingularKernel(
            "quantity kernel of the extended panel is not positive definite".into(),
        )
    })?;

    let history = &old.w * &prev.deflators;
    let dinv_w = chol.solve(&w_new);
    let kappa = c_new - w_new.dot(&dinv_w);
    if !(kappa > 0.0) || !kappa.is_finite() {
        return Err(MplError::SingularKernel(format!(
            "new-period kernel c - w'D^-1 w = {kappa} is not positive"
        )));
    }
    let delta = dinv_w.dot(&history) / kappa;
    let reference_prices = chol.solve(&(history + w_new * delta));
    Ok(FixedHistory {
        extended,
        delta,
        kappa,
        reference_prices,
    })
}

/// Deflator and index of a new period with all earlier deflators held at
/// their published values. `prev` is not modified.
pub fn update_multiperiod(
    prev: &MplEstimate,
    panel: &Panel,
    col: &NewColumn,
    cov: &CovarianceSpec,
) -> Result<(f64, f64)> {
    let fixed = solve_fixed_history(prev, panel, col, cov)?;
    let lambda = reciprocal_map(&DVector::from_element(1, fixed.delta))[0];
    Ok((fixed.delta, lambda))
}

/// `prev` extended by one period through [`update_multiperiod`].
///
/// Earlier deflators, indices and standard errors are copied unchanged.
/// Reference prices and residuals are re-solved on the extended panel given
/// the fixed deflators. The new period's variance is the conditional one,
/// `σ̂² / (c − w' D_u⁻¹ w)` with the previous `σ̂²`, and `kappa` is extended
/// block-diagonally with that scalar.
pub fn append_period(
    prev: &MplEstimate,
    panel: &Panel,
    col: &NewColumn,
    cov: &CovarianceSpec,
) -> Result<(MplEstimate, Panel)> {
    let fixed = solve_fixed_history(prev, panel, col, cov)?;
    let t = prev.deflators.len();
    let mut est = prev.clone();
    est.periods.push(col.label.clone());
    est.deflators = est.deflators.insert_row(t, fixed.delta);
    est.indices = est
        .indices
        .insert_row(t, reciprocal_map(&DVector::from_element(1, fixed.delta))[0]);
    est.kappa = {
        let k = prev.kappa.nrows();
        let mut m = DMatrix::zeros(k + 1, k + 1);
        m.view_mut((0, 0), (k, k)).copy_from(&prev.kappa);
        m[(k, k)] = fixed.kappa;
        m
    };
    let var = prev.sigma2.map(|s2| s2 / fixed.kappa);
    est.deflator_se = prev
        .deflator_se
        .as_ref()
        .zip(var)
        .map(|(se, v)| se.clone().insert_row(t, v.sqrt()));
    est.index_se = prev.index_se.as_ref().zip(var).map(|(se, v)| {
        se.clone()
            .insert_row(t, v.sqrt() / (fixed.delta * fixed.delta))
    });
    est.residuals = residuals(&fixed.extended, &est.deflators, &fixed.reference_prices);
    est.reference_prices = fixed.reference_prices;
    est.dof = residual_dof(&fixed.extended);
    Ok((est, fixed.extended))
}
