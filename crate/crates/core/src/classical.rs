//! Classical two-period indices as special cases of the MPL weights, the
//! min-norm formulation, and an axiom checker.
//!
//! With a diagonal stationary covariance `diag(θ)` the two-period MPL index
//! is `Σ p_i2 π̄_i / Σ p_i1 π̄_i` with
//! `π̄_i = p_i2 q_i1² q_i2² / (θ_i (q_i1² + q_i2²))`. Choosing `θ` suitably
//! reproduces the textbook indices:
//!
//! | index               | `θ_i`                                         | `π̄_i`              |
//! |---------------------|-----------------------------------------------|--------------------|
//! | Laspeyres           | `p_i2 q_i1 q_i2² / (q_i1² + q_i2²)`           | `q_i1`             |
//! | Paasche             | `p_i2 q_i1² q_i2 / (q_i1² + q_i2²)`           | `q_i2`             |
//! | Marshall-Edgeworth  | `p_i2 q_i1² q_i2² / ((q_i1² + q_i2²)(q_i1 + q_i2))` | `q_i1 + q_i2` |
//! | Walsh               | `p_i2 (q_i1 q_i2)^{3/2} / (q_i1² + q_i2²)`    | `√(q_i1 q_i2)`     |
//! | Geary-Khamis        | `p_i2`, on square-root quantities             | `q_i1 q_i2 / (q_i1 + q_i2)` |

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MplError, Result};
use crate::estimator::{estimate_mpl, two_period_closed_form, CovarianceSpec};
use crate::panel::Panel;

/// Prices and quantities of `N` goods in two periods. A good with zero
/// quantity in a period is absent there and its price is ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPeriodInstance {
    pub p1: DVector<f64>,
    pub p2: DVector<f64>,
    pub q1: DVector<f64>,
    pub q2: DVector<f64>,
}

impl TwoPeriodInstance {
    pub fn new(
        p1: DVector<f64>,
        p2: DVector<f64>,
        q1: DVector<f64>,
        q2: DVector<f64>,
    ) -> Result<Self> {
        let n = p1.len();
        for len in [p2.len(), q1.len(), q2.len()] {
            if len != n {
                return Err(MplError::LengthMismatch {
                    left: n,
                    right: len,
                });
            }
        }
        for i in 0..n {
            if q1[i] < 0.0 || q2[i] < 0.0 {
                return Err(MplError::InvalidPanel(format!(
                    "negative quantity for good {i}"
                )));
            }
            if (q1[i] > 0.0 && !(p1[i] > 0.0)) || (q2[i] > 0.0 && !(p2[i] > 0.0)) {
                return Err(MplError::InvalidPanel(format!(
                    "non-positive price for present good {i}"
                )));
            }
        }
        Ok(TwoPeriodInstance { p1, p2, q1, q2 })
    }

    pub fn len(&self) -> usize {
        self.p1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p1.is_empty()
    }

    /// Same instance with the two periods swapped.
    pub fn reversed(&self) -> Self {
        TwoPeriodInstance {
            p1: self.p2.clone(),
            p2: self.p1.clone(),
            q1: self.q2.clone(),
            q2: self.q1.clone(),
        }
    }

    fn permuted(&self, perm: &[usize]) -> Self {
        let take =
            |v: &DVector<f64>| DVector::from_iterator(perm.len(), perm.iter().map(|&i| v[i]));
        TwoPeriodInstance {
            p1: take(&self.p1),
            p2: take(&self.p2),
            q1: take(&self.q1),
            q2: take(&self.q2),
        }
    }

    fn both_present(&self, i: usize) -> bool {
        self.q1[i] > 0.0 && self.q2[i] > 0.0
    }
}

/// Classical index formulas reachable through a choice of `θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexKind {
    Laspeyres,
    Paasche,
    MarshallEdgeworth,
    Walsh,
    GearyKhamis,
}

impl IndexKind {
    pub const ALL: [IndexKind; 5] = [
        IndexKind::Laspeyres,
        IndexKind::Paasche,
        IndexKind::MarshallEdgeworth,
        IndexKind::Walsh,
        IndexKind::GearyKhamis,
    ];

    /// Quantity weight of the textbook formula.
    fn weight(self, q1: f64, q2: f64) -> f64 {
        match self {
            IndexKind::Laspeyres => q1,
            IndexKind::Paasche => q2,
            IndexKind::MarshallEdgeworth => q1 + q2,
            IndexKind::Walsh => (q1 * q2).sqrt(),
            IndexKind::GearyKhamis => {
                if q1 + q2 > 0.0 {
                    q1 * q2 / (q1 + q2)
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for IndexKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            IndexKind::Laspeyres => "Laspeyres",
            IndexKind::Paasche => "Paasche",
            IndexKind::MarshallEdgeworth => "Marshall-Edgeworth",
            IndexKind::Walsh => "Walsh",
            IndexKind::GearyKhamis => "Geary-Khamis",
        };
        f.write_str(s)
    }
}

/// Textbook formula `Σ p_i2 w_i / Σ p_i1 w_i` with the kind's quantity
/// weights. Goods absent in either period are skipped.
///
/// ```
/// use mpl_index::classical::{classical_index, IndexKind, TwoPeriodInstance};
/// use nalgebra::dvector;
///
/// let inst = TwoPeriodInstance::new(dvector![1.0, 2.0], dvector![2.0, 2.0], dvector![1.0, 1.0], dvector![3.0, 5.0]).unwrap();
/// let l = classical_index(IndexKind::Laspeyres, &inst).unwrap();
/// assert!((l - 4.0 / 3.0).abs() < 1e-15);
/// ```
pub fn classical_index(kind: IndexKind, inst: &TwoPeriodInstance) -> Result<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..inst.len() {
        if !inst.both_present(i) {
            continue;
        }
        let w = kind.weight(inst.q1[i], inst.q2[i]);
        num += inst.p2[i] * w;
        den += inst.p1[i] * w;
    }
    if den == 0.0 {
        return Err(MplError::ZeroDenominator);
    }
    Ok(num / den)
}

/// A `θ` vector together with the quantity transform it assumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSpec {
    pub theta: DVector<f64>,
    /// Apply the weights to `√q` instead of `q` (and to values `p √q`).
    pub sqrt_quantities: bool,
}

/// `θ` reducing the MPL weights to those of `kind`. Goods absent in either
/// period get `θ_i = ∞`, i.e. zero weight.
pub fn theta_for(kind: IndexKind, inst: &TwoPeriodInstance) -> ThetaSpec {
    let theta = DVector::from_fn(inst.len(), |i, _| {
        if !inst.both_present(i) {
            return f64::INFINITY;
        }
        let (q1, q2, p2) = (inst.q1[i], inst.q2[i], inst.p2[i]);
        let s = q1 * q1 + q2 * q2;
        match kind {
            IndexKind::Laspeyres => p2 * q1 * q2 * q2 / s,
            IndexKind::Paasche => p2 * q1 * q1 * q2 / s,
            IndexKind::MarshallEdgeworth => p2 * q1 * q1 * q2 * q2 / (s * (q1 + q2)),
            IndexKind::Walsh => p2 * (q1 * q2).powf(1.5) / s,
            IndexKind::GearyKhamis => p2,
        }
    });
    ThetaSpec {
        theta,
        sqrt_quantities: kind == IndexKind::GearyKhamis,
    }
}

/// Two-period MPL index for a given `θ`, returning the index and the
/// weights `π̄`.
pub fn mpl_two_period(inst: &TwoPeriodInstance, spec: &ThetaSpec) -> Result<(f64, DVector<f64>)> {
    let (q1, q2) = if spec.sqrt_quantities {
        (inst.q1.map(f64::sqrt), inst.q2.map(f64::sqrt))
    } else {
        (inst.q1.clone(), inst.q2.clone())
    };
    let v1 = inst.p1.component_mul(&q1);
    let v2 = inst.p2.component_mul(&q2);
    two_period_closed_form(&q1, &q2, &v1, &v2, &spec.theta)
}

/// `p₂' A p₁ / p₁' A p₁` with `A = π̄ π̄'`.
///
/// This is the minimizer of `‖p₂ − λ p₁‖²_A`; with the MPL weights it
/// equals the two-period closed form.
pub fn minnorm_index(inst: &TwoPeriodInstance, weights: &DVector<f64>) -> Result<f64> {
    if weights.len() != inst.len() {
        return Err(MplError::LengthMismatch {
            left: weights.len(),
            right: inst.len(),
        });
    }
    // Absent goods carry zero weight; zero their prices so no NaN leaks in.
    let mask = |p: &DVector<f64>| {
        DVector::from_fn(p.len(), |i, _| if weights[i] != 0.0 { p[i] } else { 0.0 })
    };
    let (p1, p2) = (mask(&inst.p1), mask(&inst.p2));
    let a: DMatrix<f64> = weights * weights.transpose();
    let den = (p1.transpose() * &a * &p1)[(0, 0)];
    if den == 0.0 || !den.is_finite() {
        return Err(MplError::DegenerateNorm);
    }
    Ok((p2.transpose() * &a * &p1)[(0, 0)] / den)
}

/// A two-period price index `λ(p₁, p₂, q₁, q₂)` that can be put through the
/// axiom checks.
pub trait TwoPeriodIndex {
    fn index(&self, inst: &TwoPeriodInstance) -> Result<f64>;

    /// Whether base reversibility is expected to hold for this index.
    fn base_reversible(&self) -> bool {
        false
    }

    /// Indices `(λ₁₂, λ₂₃, λ₁₃)` for a third period, when the index has a
    /// transitive configuration; `None` otherwise.
    fn chain(
        &self,
        _inst: &TwoPeriodInstance,
        _p3: &DVector<f64>,
        _q3: &DVector<f64>,
    ) -> Option<Result<(f64, f64, f64)>> {
        None
    }
}

/// How the MPL weights `θ` are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// `θ_i = 1`: spherical errors.
    Unit,
    /// `θ_i = z p_i2`: weights free of prices.
    PriceProportional { z: f64 },
    /// `θ` reproducing a classical index.
    Kind(IndexKind),
}

/// The two-period MPL closed form under a weighting rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MplIndex {
    pub weighting: Weighting,
}

impl MplIndex {
    pub fn new(weighting: Weighting) -> Self {
        MplIndex { weighting }
    }

    pub fn theta(&self, inst: &TwoPeriodInstance) -> ThetaSpec {
        match self.weighting {
            Weighting::Unit => ThetaSpec {
                theta: DVector::from_element(inst.len(), 1.0),
                sqrt_quantities: false,
            },
            Weighting::PriceProportional { z } => ThetaSpec {
                theta: DVector::from_fn(inst.len(), |i, _| {
                    if inst.both_present(i) {
                        z * inst.p2[i]
                    } else {
                        f64::INFINITY
                    }
                }),
                sqrt_quantities: false,
            },
            Weighting::Kind(kind) => theta_for(kind, inst),
        }
    }
}

impl TwoPeriodIndex for MplIndex {
    fn index(&self, inst: &TwoPeriodInstance) -> Result<f64> {
        mpl_two_period(inst, &self.theta(inst)).map(|(l, _)| l)
    }

    fn base_reversible(&self) -> bool {
        matches!(self.weighting, Weighting::PriceProportional { .. })
    }

    /// Under the Geary-Khamis configuration the three periods are estimated
    /// jointly on square-root quantities, so every bilateral comparison is a
    /// ratio of the same multilateral index.
    fn chain(
        &self,
        inst: &TwoPeriodInstance,
        p3: &DVector<f64>,
        q3: &DVector<f64>,
    ) -> Option<Result<(f64, f64, f64)>> {
        if self.weighting != Weighting::Kind(IndexKind::GearyKhamis) {
            return None;
        }
        Some(joint_three_period(inst, p3, q3))
    }
}

fn joint_three_period(
    inst: &TwoPeriodInstance,
    p3: &DVector<f64>,
    q3: &DVector<f64>,
) -> Result<(f64, f64, f64)> {
    let n = inst.len();
    if p3.len() != n || q3.len() != n {
        return Err(MplError::LengthMismatch {
            left: n,
            right: p3.len().min(q3.len()),
        });
    }
    let cols = [(&inst.p1, &inst.q1), (&inst.p2, &inst.q2), (p3, q3)];
    let q = DMatrix::from_fn(n, 3, |i, t| cols[t].1[i].sqrt());
    let v = DMatrix::from_fn(n, 3, |i, t| {
        if q[(i, t)] > 0.0 {
            cols[t].0[i] * q[(i, t)]
        } else {
            0.0
        }
    });
    let panel = Panel::from_matrices(q, v)?;
    let est = estimate_mpl(&panel, &CovarianceSpec::identity(n))?;
    let l = &est.indices;
    Ok((l[1] / l[0], l[2] / l[1], l[2] / l[0]))
}

/// A textbook index wrapped for the axiom checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classical(pub IndexKind);

impl TwoPeriodIndex for Classical {
    fn index(&self, inst: &TwoPeriodInstance) -> Result<f64> {
        classical_index(self.0, inst)
    }
}

/// Parameters of the axiom checks.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomParams {
    /// Per-good unit change for commensurability; entries must be positive.
    pub gamma: DVector<f64>,
    /// Scalar for proportionality, dimensionality and the base-period checks.
    pub alpha: f64,
    /// Per-good factors above one for monotonicity.
    pub k: DVector<f64>,
    /// Uniform price change for the last monotonicity check.
    pub beta: f64,
    /// Prices and quantities of a third period for transitivity.
    pub third: Option<(DVector<f64>, DVector<f64>)>,
}

impl AxiomParams {
    /// Fixed default parameters for `n` goods.
    pub fn new(n: usize) -> Self {
        AxiomParams {
            gamma: DVector::from_fn(n, |i, _| 0.5 + 0.37 * ((i * 7 % 5) as f64)),
            alpha: 2.5,
            k: DVector::from_fn(n, |i, _| 1.1 + 0.2 * ((i * 3 % 4) as f64)),
            beta: 1.7,
            third: None,
        }
    }
}

/// Outcome of a single check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxiomStatus {
    Pass,
    Fail,
    NotApplicable,
}

impl fmt::Display for AxiomStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AxiomStatus::Pass => "pass",
            AxiomStatus::Fail => "fail",
            AxiomStatus::NotApplicable => "not-applicable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomRow {
    /// `P.1` to `P.12`.
    pub property: String,
    pub name: String,
    pub status: AxiomStatus,
    /// Relative discrepancy for identities; size of the violation for
    /// inequalities (0 when they hold).
    pub discrepancy: f64,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub rows: Vec<AxiomRow>,
}

impl AxiomReport {
    pub fn row(&self, property: &str) -> Option<&AxiomRow> {
        self.rows.iter().find(|r| r.property == property)
    }

    pub fn status(&self, property: &str) -> Option<AxiomStatus> {
        self.row(property).map(|r| r.status)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AxiomRow> {
        self.rows.iter().filter(|r| r.status == AxiomStatus::Fail)
    }
}

/// Relative tolerance for the identity checks.
pub const AXIOM_TOLERANCE: f64 = 1e-12;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Check properties P.1 to P.12 of a two-period index on one instance.
///
/// Base reversibility (P.10) is only checked when the index declares it;
/// transitivity (P.11) only when the index has a transitive configuration and
/// `params.third` is set. Otherwise they are reported as not applicable. The
/// quantity reversal check (P.9) is read as invariance under exchanging
/// `q₁` and `q₂` with prices held fixed.
pub fn axiom_suite(
    index: &dyn TwoPeriodIndex,
    inst: &TwoPeriodInstance,
    params: &AxiomParams,
) -> AxiomReport {
    let mut rows = Vec::with_capacity(12);
    let base = index.index(inst);

    let identity = |prop: &str, name: &str, got: Result<f64>, want: Option<f64>| -> AxiomRow {
        let (status, discrepancy, note) = match (got, want) {
            (Ok(g), Some(w)) if g.is_finite() && w.is_finite() => {
                let d = rel(g, w);
                let s = if d <= AXIOM_TOLERANCE {
                    AxiomStatus::Pass
                } else {
                    AxiomStatus::Fail
                };
                (s, d, None)
            }
            (Err(e), _) => (AxiomStatus::Fail, f64::INFINITY, Some(e.to_string())),
            _ => (
                AxiomStatus::Fail,
                f64::INFINITY,
                Some("base index unavailable".into()),
            ),
        };
        AxiomRow {
            property: prop.into(),
            name: name.into(),
            status,
            discrepancy,
            note,
        }
    };
    let b = base.as_ref().ok().copied();
    let scale = |v: &DVector<f64>, s: f64| v * s;

    rows.push(identity(
        "P.1",
        "strong identity",
        index.index(&TwoPeriodInstance {
            p1: inst.p2.clone(),
            ..inst.clone()
        }),
        Some(1.0),
    ));

    if params.gamma.len() == inst.len() && params.gamma.iter().all(|&g| g > 0.0) {
        let g = &params.gamma;
        let moved = TwoPeriodInstance {
            p1: inst.p1.component_mul(g),
            p2: inst.p2.component_mul(g),
            q1: inst.q1.component_div(g),
            q2: inst.q2.component_div(g),
        };
        rows.push(identity("P.2", "commensurability", index.index(&moved), b));
    } else {
        rows.push(AxiomRow {
            property: "P.2".into(),
            name: "commensurability".into(),
            status: AxiomStatus::NotApplicable,
            discrepancy: 0.0,
            note: Some("gamma must have one positive entry per good".into()),
        });
    }

    let a = params.alpha;
    rows.push(identity(
        "P.3",
        "proportionality",
        index.index(&TwoPeriodInstance {
            p2: scale(&inst.p2, a),
            ..inst.clone()
        }),
        b.map(|x| a * x),
    ));
    rows.push(identity(
        "P.4",
        "dimensionality",
        index.index(&TwoPeriodInstance {
            p1: scale(&inst.p1, a),
            p2: scale(&inst.p2, a),
            ..inst.clone()
        }),
        b,
    ));

    // Monotonicity: strict inequalities in both directions.
    let mono = if params.k.len() == inst.len() && params.k.iter().all(|&k| k > 1.0) {
        let up = index.index(&TwoPeriodInstance {
            p2: inst.p2.component_mul(&params.k),
            ..inst.clone()
        });
        let down = index.index(&TwoPeriodInstance {
            p1: inst.p1.component_mul(&params.k),
            ..inst.clone()
        });
        match (up, down, b) {
            (Ok(u), Ok(d), Some(l)) => {
                let violation = (l - u).max(d - l).max(0.0);
                let ok = u > l && d < l;
                (
                    if ok {
                        AxiomStatus::Pass
                    } else {
                        AxiomStatus::Fail
                    },
                    violation,
                    None,
                )
            }
            _ => (
                AxiomStatus::Fail,
                f64::INFINITY,
                Some("index unavailable".into()),
            ),
        }
    } else {
        (
            AxiomStatus::NotApplicable,
            0.0,
            Some("k must have one entry above 1 per good".into()),
        )
    };
    rows.push(AxiomRow {
        property: "P.5".into(),
        name: "monotonicity".into(),
        status: mono.0,
        discrepancy: mono.1,
        note: mono.2,
    });

    let base_scaled = index.index(&TwoPeriodInstance {
        p1: scale(&inst.p1, a),
        ..inst.clone()
    });
    let positivity = match &base_scaled {
        Ok(x) if *x >= 0.0 => (AxiomStatus::Pass, 0.0),
        Ok(x) => (AxiomStatus::Fail, -x),
        Err(_) => (AxiomStatus::Fail, f64::INFINITY),
    };
    rows.push(AxiomRow {
        property: "P.6".into(),
        name: "positivity".into(),
        status: positivity.0,
        discrepancy: positivity.1,
        note: None,
    });
    rows.push(identity(
        "P.7",
        "inverse proportionality in the base period",
        base_scaled,
        b.map(|x| x / a),
    ));

    let perm: Vec<usize> = (0..inst.len()).rev().collect();
    rows.push(identity(
        "P.8",
        "commodity reversal",
        index.index(&inst.permuted(&perm)),
        b,
    ));

    let mut p9 = identity(
        "P.9",
        "quantity reversal",
        index.index(&TwoPeriodInstance {
            q1: inst.q2.clone(),
            q2: inst.q1.clone(),
            ..inst.clone()
        }),
        b,
    );
    p9.note = Some(p9.note.map_or_else(
        || "checked as invariance under exchanging q1 and q2 with prices fixed".to_string(),
        |n| format!("{n}; checked as invariance under exchanging q1 and q2"),
    ));
    rows.push(p9);

    if index.base_reversible() {
        let rev = index.index(&inst.reversed());
        rows.push(identity(
            "P.10",
            "base reversibility",
            rev.map(|r| 1.0 / r),
            b,
        ));
    } else {
        rows.push(AxiomRow {
            property: "P.10".into(),
            name: "base reversibility".into(),
            status: AxiomStatus::NotApplicable,
            discrepancy: 0.0,
            note: Some("holds only for weights proportional to second-period prices".into()),
        });
    }

    let chain = params
        .third
        .as_ref()
        .and_then(|(p3, q3)| index.chain(inst, p3, q3));
    match chain {
        Some(Ok((l12, l23, l13))) => {
            rows.push(identity("P.11", "transitivity", Ok(l12 * l23), Some(l13)))
        }
        Some(Err(e)) => rows.push(identity("P.11", "transitivity", Err(e), None)),
        None => rows.push(AxiomRow {
            property: "P.11".into(),
            name: "transitivity".into(),
            status: AxiomStatus::NotApplicable,
            discrepancy: 0.0,
            note: Some(
                "holds only under the joint Geary-Khamis configuration with a third period".into(),
            ),
        }),
    }

    rows.push(identity(
        "P.12",
        "uniform price change",
        index.index(&TwoPeriodInstance {
            p2: scale(&inst.p1, params.beta),
            ..inst.clone()
        }),
        Some(params.beta),
    ));

    AxiomReport { rows }
}
