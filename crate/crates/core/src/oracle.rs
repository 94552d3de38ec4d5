//! Brute-force stacked regression used to validate the closed forms.
//!
//! The whole system `y = X β + μ` is materialized with dense Kronecker
//! products and solved through the generic GLS normal equations. Memory is
//! `O(N² T²)`, so this is for desk-scale checks only.

use nalgebra::{DMatrix, DVector};

use crate::error::{MplError, Result};
use crate::estimator::{reciprocal_map, residual_dof, CovarianceSpec, MplEstimate};
use crate::panel::Panel;

/// The `j² x j` 0/1 matrix whose column `k` is `e_k ⊗ e_k`.
///
/// Its transpose `R_j` turns Kronecker products into Hadamard products:
/// `A ∗ B = R_N (A ⊗ B) R_M'`.
///
/// ```
/// use mpl_index::oracle::transition_matrix;
/// let r = transition_matrix(2);
/// assert_eq!(r.shape(), (4, 2));
/// assert_eq!((r[(0, 0)], r[(3, 1)], r.sum()), (1.0, 1.0, 2.0));
/// ```
pub fn transition_matrix(j: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(j * j, j);
    for k in 0..j {
        r[(k * j + k, k)] = 1.0;
    }
    r
}

/// Stacked form of the model with the base period first.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    /// Base-period values followed by `N (T − 1)` zeros.
    pub y: DVector<f64>,
    /// `NT x (N + T − 1)` design; the first `T − 1` columns carry the
    /// deflators, the last `N` the reference prices.
    pub x: DMatrix<f64>,
    /// `NT x NT` block-diagonal error covariance.
    pub omega: DMatrix<f64>,
    /// Panel column stacked in each row block: base first, then the others
    /// in panel order.
    pub column_order: Vec<usize>,
    pub n: usize,
    pub t: usize,
}

/// Assemble `y`, `X` and `Ω` from Kronecker blocks:
///
/// ```text
/// X = [ 0                        (q_b' ⊗ I_N) R_N' ]
///     [ (I_{T-1} ⊗ (−V₁)) R_{T-1}'   (Q₁' ⊗ I_N) R_N' ]
/// ```
pub fn build_stacked(panel: &Panel, cov: &CovarianceSpec) -> Result<StackedSystem> {
    let (n, t) = (panel.n_entities(), panel.n_periods());
    cov.check(n, t)?;
    let base = panel.base_index();
    let mut order = vec![base];
    order.extend((0..t).filter(|&j| j != base));
    let nb = &order[1..];

    let q = panel.quantities();
    let v = panel.values();
    let qb = q.column(base).into_owned();
    let q1 = q.select_columns(nb);
    let v1 = v.select_columns(nb);
    let i_n = DMatrix::<f64>::identity(n, n);
    let r_n = transition_matrix(n);
    let r_t1 = transition_matrix(t - 1);
    let i_t1 = DMatrix::<f64>::identity(t - 1, t - 1);

    let top_right = qb.transpose().kronecker(&i_n) * &r_n;
    let low_left = i_t1.kronecker(&(-&v1)) * &r_t1;
    let low_right = q1.transpose().kronecker(&i_n) * &r_n;

    let k = t - 1 + n;
    let mut x = DMatrix::zeros(n * t, k);
    x.view_mut((0, t - 1), (n, n)).copy_from(&top_right);
    x.view_mut((n, 0), (n * (t - 1), t - 1))
        .copy_from(&low_left);
    x.view_mut((n, t - 1), (n * (t - 1), n))
        .copy_from(&low_right);

    let mut y = DVector::zeros(n * t);
    y.rows_mut(0, n).copy_from(&v.column(base));

    let mut omega = DMatrix::zeros(n * t, n * t);
    for (row_block, &j) in order.iter().enumerate() {
        omega
            .view_mut((row_block * n, row_block * n), (n, n))
            .copy_from(cov.block(j));
    }

    Ok(StackedSystem {
        y,
        x,
        omega,
        column_order: order,
        n,
        t,
    })
}

/// `β̂ = (X' Ω⁻¹ X)⁻¹ X' Ω⁻¹ y` and its unscaled covariance `(X' Ω⁻¹ X)⁻¹`,
/// both through explicit LU inverses.
pub fn gls_solve(sys: &StackedSystem) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let omega_inv = sys
        .omega
        .clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| MplError::SingularBlock("stacked covariance".into()))?;
    let xt_oi = sys.x.transpose() * &omega_inv;
    let normal = &xt_oi * &sys.x;
    let cov = normal
        .lu()
        .try_inverse()
        .ok_or(MplError::SingularNormalEquations)?;
    if cov.iter().any(|c| !c.is_finite()) {
        return Err(MplError::SingularNormalEquations);
    }
    let beta = &cov * (xt_oi * &sys.y);
    Ok((beta, cov))
}

/// Full estimate from the stacked system, packaged like
/// [`estimate_mpl`](crate::estimate_mpl). `kappa` is the inverse of the
/// deflator block of `(X' Ω⁻¹ X)⁻¹`.
pub fn stacked_estimate(panel: &Panel, cov: &CovarianceSpec) -> Result<MplEstimate> {
    let sys = build_stacked(panel, cov)?;
    let (beta, normal_inv) = gls_solve(&sys)?;
    let (n, t) = (sys.n, sys.t);
    let nb = &sys.column_order[1..];

    let mut deflators = DVector::from_element(t, 1.0);
    for (k, &j) in nb.iter().enumerate() {
        deflators[j] = beta[k];
    }
    let reference_prices = beta.rows(t - 1, n).into_owned();
    let lambda11 = normal_inv.view((0, 0), (t - 1, t - 1)).into_owned();
    let kappa = lambda11
        .clone()
        .lu()
        .try_inverse()
        .ok_or(MplError::SingularNormalEquations)?;

    let mu = &sys.y - &sys.x * &beta;
    let mut resid = DMatrix::zeros(n, t);
    for (row_block, &j) in sys.column_order.iter().enumerate() {
        resid.set_column(j, &mu.rows(row_block * n, n));
    }
    let dof = residual_dof(panel);
    let (sigma2, deflator_se, index_se) = if dof > 0 {
        let omega_inv = sys
            .omega
            .clone()
            .lu()
            .try_inverse()
            .ok_or(MplError::SingularNormalEquations)?;
        let s2 = (mu.transpose() * omega_inv * &mu)[(0, 0)] / dof as f64;
        let mut dse = DVector::zeros(t);
        let mut ise = DVector::zeros(t);
        for (k, &j) in nb.iter().enumerate() {
            let sd = (s2 * lambda11[(k, k)]).max(0.0).sqrt();
            dse[j] = sd;
            ise[j] = sd / (deflators[j] * deflators[j]);
        }
        (Some(s2), Some(dse), Some(ise))
    } else {
        (None, None, None)
    };

    Ok(MplEstimate {
        entities: panel.entities().to_vec(),
        periods: panel.periods().to_vec(),
        base_index: panel.base_index(),
        regime: cov.regime,
        indices: reciprocal_map(&deflators),
        deflators,
        reference_prices,
        kappa,
        sigma2,
        deflator_se,
        index_se,
        residuals: resid,
        dof,
        warnings: Vec::new(),
    })
}

/// Largest relative discrepancy between the deflators, reference prices and
/// kappa of two estimates. Entries are compared relative to
/// `max(|a|, |b|, 1e-300)`.
pub fn max_relative_error(a: &MplEstimate, b: &MplEstimate) -> f64 {
    fn rel<'a>(x: impl Iterator<Item = &'a f64>, y: impl Iterator<Item = &'a f64>) -> f64 {
        x.zip(y)
            .map(|(p, q)| (p - q).abs() / p.abs().max(q.abs()).max(1e-300))
            .fold(0.0, f64::max)
    }
    let k_scale = a
        .kappa
        .iter()
        .chain(b.kappa.iter())
        .fold(0.0_f64, |m, x| m.max(x.abs()));
    let kappa_err = a
        .kappa
        .iter()
        .zip(b.kappa.iter())
        .map(|(p, q)| (p - q).abs() / k_scale.max(1e-300))
        .fold(0.0, f64::max);
    rel(a.deflators.iter(), b.deflators.iter())
        .max(rel(a.reference_prices.iter(), b.reference_prices.iter()))
        .max(kappa_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{estimate_mpl, Regime};
    use approx::assert_relative_eq;

    #[test]
    fn transition_matrix_small() {
        assert_eq!(transition_matrix(1), DMatrix::from_element(1, 1, 1.0));
        let r = transition_matrix(2);
        let expected = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(r, expected);
    }

    #[test]
    fn hadamard_from_kronecker() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, -2.0, 0.5, 3.0, 4.0, -1.0, 0.25, 2.0, 7.0]);
        let b = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, -3.0, 0.5, -4.0, 6.0, 1.5, 2.5, -0.5]);
        let r = transition_matrix(3);
        let h = r.transpose() * a.kronecker(&b) * &r;
        assert_eq!(h, a.component_mul(&b));
    }

    #[test]
    fn smallest_design() {
        let q = DMatrix::from_row_slice(1, 2, &[2.0, 3.0]);
        let v = DMatrix::from_row_slice(1, 2, &[5.0, 7.0]);
        let panel = Panel::from_matrices(q, v).unwrap();
        let sys = build_stacked(&panel, &CovarianceSpec::identity(1)).unwrap();
        assert_eq!(sys.x, DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -7.0, 3.0]));
        assert_eq!(sys.y.as_slice(), &[5.0, 0.0]);
    }

    #[test]
    fn two_by_two_design() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let v = DMatrix::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        let panel = Panel::from_matrices(q, v).unwrap();
        let sys = build_stacked(&panel, &CovarianceSpec::identity(2)).unwrap();
        let expected = DMatrix::from_row_slice(
            4,
            3,
            &[0.0, 1.0, 0.0, 0.0, 0.0, 3.0, -6.0, 2.0, 0.0, -8.0, 0.0, 4.0],
        );
        assert_eq!(sys.x, expected);
    }

    #[test]
    fn orthonormal_design() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let sys = StackedSystem {
            y: DVector::from_vec(vec![2.0, 3.0, 4.0]),
            x: x.clone(),
            omega: DMatrix::identity(3, 3),
            column_order: vec![0, 1],
            n: 1,
            t: 3,
        };
        let (beta, _) = gls_solve(&sys).unwrap();
        assert_eq!(beta, x.transpose() * &sys.y);
    }

    #[test]
    fn agrees_with_closed_form() {
        let q =
            DMatrix::from_row_slice(3, 3, &[5.0, 8.0, 10.0, 15.0, 18.0, 20.0, 25.0, 27.0, 30.0]);
        let v = DMatrix::from_row_slice(
            3,
            3,
            &[10.3, 18.1, 24.9, 22.4, 30.0, 35.2, 23.1, 26.0, 31.5],
        );
        let panel = Panel::from_matrices(q, v).unwrap().with_base(1).unwrap();
        let blocks = vec![
            DMatrix::from_row_slice(3, 3, &[2.0, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 3.0]),
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 0.5])),
            DMatrix::identity(3, 3) * 1.5,
        ];
        let cov = CovarianceSpec::per_period(Regime::GlsF, blocks);
        let a = estimate_mpl(&panel, &cov).unwrap();
        let b = stacked_estimate(&panel, &cov).unwrap();
        assert!(max_relative_error(&a, &b) < 1e-10);
        assert_relative_eq!(a.sigma2.unwrap(), b.sigma2.unwrap(), max_relative = 1e-9);
    }
}
