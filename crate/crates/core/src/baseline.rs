//! Time/country product dummy regression on log prices.
//!
//! `ln p_it = α_i + β_t + e_it` over the priced cells, with the base-period
//! dummy dropped, optionally weighted by expenditure shares. The index is
//! `exp(β̂_t)`; its standard error comes from the delta method,
//! `exp(β̂_t) · se(β̂_t)`, with the classical (not heteroskedasticity-robust)
//! covariance. No log-normal bias correction is applied on the way back.

use nalgebra::{DMatrix, DVector};
use petgraph::unionfind::UnionFind;

use crate::error::{MplError, Result};
use crate::linalg::{spd_factor, spd_inverse};
use crate::panel::Panel;

/// Unit prices with a presence mask and per-period expenditure shares.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceTableau {
    pub entities: Vec<String>,
    pub periods: Vec<String>,
    /// Prices on present cells, zero elsewhere.
    pub prices: DMatrix<f64>,
    pub mask: DMatrix<bool>,
    /// `v_it / Σ_i v_it` on present cells, zero elsewhere.
    pub shares: DMatrix<f64>,
}

impl PriceTableau {
    /// Tableau from raw prices; `None` marks an unpriced cell. Shares are
    /// uniform within each period.
    pub fn from_prices(prices: &DMatrix<Option<f64>>) -> Result<Self> {
        let (n, t) = prices.shape();
        let mask = prices.map(|p| p.is_some());
        if let Some(bad) = prices
            .iter()
            .flatten()
            .find(|p| !(**p > 0.0) || !p.is_finite())
        {
            return Err(MplError::InvalidPanel(format!(
                "price {bad} is not positive"
            )));
        }
        let p = prices.map(|x| x.unwrap_or(0.0));
        let mut shares = DMatrix::zeros(n, t);
        for j in 0..t {
            let cnt = (0..n).filter(|&i| mask[(i, j)]).count();
            for i in 0..n {
                if mask[(i, j)] {
                    shares[(i, j)] = 1.0 / cnt as f64;
                }
            }
        }
        Ok(PriceTableau {
            entities: (1..=n).map(|i| format!("e{i}")).collect(),
            periods: (1..=t).map(|j| format!("t{j}")).collect(),
            prices: p,
            mask,
            shares,
        })
    }

    pub fn n_entities(&self) -> usize {
        self.prices.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.prices.ncols()
    }
}

/// Unit values `v/q` and expenditure shares of a panel.
pub fn tableau_from_panel(panel: &Panel) -> PriceTableau {
    let (n, t) = (panel.n_entities(), panel.n_periods());
    let mask = panel.quantities().map(|q| q > 0.0);
    let prices = DMatrix::from_fn(n, t, |i, j| panel.price(i, j).unwrap_or(0.0));
    let v = panel.values();
    let mut shares = DMatrix::zeros(n, t);
    for j in 0..t {
        let total: f64 = v.column(j).sum();
        if total > 0.0 {
            for i in 0..n {
                shares[(i, j)] = v[(i, j)] / total;
            }
        }
    }
    PriceTableau {
        entities: panel.entities().to_vec(),
        periods: panel.periods().to_vec(),
        prices,
        mask,
        shares,
    }
}

/// Fitted dummy regression.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdEstimate {
    /// `exp(β̂_t)`, exactly 1 at the base.
    pub indices: DVector<f64>,
    /// Delta-method standard errors (0 at the base); `None` without residual
    /// degrees of freedom.
    pub se: Option<DVector<f64>>,
    /// `exp(α̂_i)`: entity price levels in the base period.
    pub product_effects: DVector<f64>,
    pub sigma2: Option<f64>,
    pub dof: i64,
}

/// Fail unless the bipartite entity/period presence graph is connected.
fn check_connected(mask: &DMatrix<bool>) -> Result<()> {
    let (n, t) = mask.shape();
    let mut uf = UnionFind::<usize>::new(n + t);
    for i in 0..n {
        for j in 0..t {
            if mask[(i, j)] {
                uf.union(i, n + j);
            }
        }
    }
    if let Some(j) = (0..t).find(|&j| !(0..n).any(|i| mask[(i, j)])) {
        return Err(MplError::RankDeficientDesign(format!(
            "period {j} has no prices"
        )));
    }
    if let Some(i) = (0..n).find(|&i| !(0..t).any(|j| mask[(i, j)])) {
        return Err(MplError::RankDeficientDesign(format!(
            "entity {i} has no prices"
        )));
    }
    let root = uf.find(0);
    if (1..n + t).any(|k| uf.find(k) != root) {
        return Err(MplError::RankDeficientDesign(
            "entity/period presence graph is disconnected".into(),
        ));
    }
    Ok(())
}

/// Dummy-variable regression of log prices.
///
/// ```
/// use mpl_index::baseline::{cpd_estimate, PriceTableau};
/// use nalgebra::DMatrix;
///
/// // Two goods, prices rising 10% then 20% on the base level.
/// let p = DMatrix::from_row_slice(2, 3, &[2.0, 2.2, 2.4, 5.0, 5.5, 6.0]).map(Some);
/// let fit = cpd_estimate(&PriceTableau::from_prices(&p).unwrap(), false, 0).unwrap();
/// assert!((fit.indices[1] - 1.1).abs() < 1e-12);
/// assert!((fit.indices[2] - 1.2).abs() < 1e-12);
/// ```
pub fn cpd_estimate(tab: &PriceTableau, weighted: bool, base: usize) -> Result<CpdEstimate> {
    let (n, t) = (tab.n_entities(), tab.n_periods());
    if base >= t {
        return Err(MplError::InvalidConfig(format!(
            "base {base} outside {t} periods"
        )));
    }
    check_connected(&tab.mask)?;

    // Columns: α_0..α_{N-1}, then β for every non-base period.
    let k = n + t - 1;
    let col_of = |j: usize| -> Option<usize> {
        match j.cmp(&base) {
            std::cmp::Ordering::Less => Some(n + j),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(n + j - 1),
        }
    };
    let mut xtwx = DMatrix::<f64>::zeros(k, k);
    let mut xtwy = DVector::<f64>::zeros(k);
    let mut cells = Vec::new();
    for i in 0..n {
        for j in 0..t {
            if !tab.mask[(i, j)] {
                continue;
            }
            let w = if weighted { tab.shares[(i, j)] } else { 1.0 };
            if !(w >= 0.0) {
                return Err(MplError::InvalidPanel(format!(
                    "negative weight at ({i}, {j})"
                )));
            }
            let y = tab.prices[(i, j)].ln();
            xtwx[(i, i)] += w;
            xtwy[i] += w * y;
            if let Some(c) = col_of(j) {
                xtwx[(c, c)] += w;
                xtwx[(i, c)] += w;
                xtwx[(c, i)] += w;
                xtwy[c] += w * y;
            }
            cells.push((i, j, w, y));
        }
    }
    let chol = spd_factor(&xtwx)
        .ok_or_else(|| MplError::RankDeficientDesign("normal equations are singular".into()))?;
    let coef = chol.solve(&xtwy);

    let mut beta = DVector::zeros(t);
    for j in 0..t {
        if let Some(c) = col_of(j) {
            beta[j] = coef[c];
        }
    }
    let indices = beta.map(f64::exp);
    let product_effects = coef.rows(0, n).map(f64::exp);

    let dof = cells.len() as i64 - k as i64;
    let (sigma2, se) = if dof > 0 {
        let ss: f64 = cells
            .iter()
            .map(|&(i, j, w, y)| {
                let e = y - coef[i] - col_of(j).map_or(0.0, |c| coef[c]);
                w * e * e
            })
            .sum();
        let s2 = ss / dof as f64;
        let inv = spd_inverse(&chol);
        let se = DVector::from_fn(t, |j, _| match col_of(j) {
            Some(c) => indices[j] * (s2 * inv[(c, c)]).max(0.0).sqrt(),
            None => 0.0,
        });
        (Some(s2), Some(se))
    } else {
        (None, None)
    };

    Ok(CpdEstimate {
        indices,
        se,
        product_effects,
        sigma2,
        dof,
    })
}
