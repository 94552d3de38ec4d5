//! Panel data model: aligned quantity and value tableaux with absence
//! encoded as a `(0, 0)` cell, plus reference-basket construction.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MplError, Result};

/// One observation in long format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub entity: String,
    pub period: String,
    pub quantity: f64,
    pub value: f64,
}

impl Record {
    pub fn new(
        entity: impl Into<String>,
        period: impl Into<String>,
        quantity: f64,
        value: f64,
    ) -> Self {
        Record {
            entity: entity.into(),
            period: period.into(),
            quantity,
            value,
        }
    }
}

/// An `N x T` tableau of quantities and values.
///
/// Rows are entities (commodities), columns are periods or countries. A cell
/// is present when both its quantity and its value are strictly positive and
/// absent when both are zero; mixed cells are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    entities: Vec<String>,
    periods: Vec<String>,
    quantities: DMatrix<f64>,
    values: DMatrix<f64>,
    base_index: usize,
}

impl Panel {
    pub fn new(
        entities: Vec<String>,
        periods: Vec<String>,
        quantities: DMatrix<f64>,
        values: DMatrix<f64>,
        base_index: usize,
    ) -> Result<Self> {
        let (n, t) = quantities.shape();
        if values.shape() != (n, t) {
            return Err(MplError::DimensionMismatch(format!(
                "quantities are {}x{} but values are {}x{}",
                n,
                t,
                values.nrows(),
                values.ncols()
            )));
        }
        if entities.len() != n || periods.len() != t {
            return Err(MplError::DimensionMismatch(format!(
                "{} entity and {} period labels for a {}x{} tableau",
                entities.len(),
                periods.len(),
                n,
                t
            )));
        }
        if t < 2 {
            return Err(MplError::TooFewPeriods(t));
        }
        if n == 0 {
            return Err(MplError::InvalidPanel("panel has no entities".into()));
        }
        if base_index >= t {
            return Err(MplError::InvalidPanel(format!(
                "base index {base_index} outside {t} periods"
            )));
        }
        for i in 0..n {
            for j in 0..t {
                let (q, v) = (quantities[(i, j)], values[(i, j)]);
                let both_zero = q == 0.0 && v == 0.0;
                let both_pos = q > 0.0 && v > 0.0 && q.is_finite() && v.is_finite();
                if !(both_zero || both_pos) {
                    return Err(MplError::InvalidPanel(format!(
                        "cell ({}, {}) has quantity {} and value {}; cells must be both positive or both zero",
                        entities[i], periods[j], q, v
                    )));
                }
            }
        }
        Ok(Panel {
            entities,
            periods,
            quantities,
            values,
            base_index,
        })
    }

    /// Panel with generated labels `e1..eN` and `t1..tT`, base period first.
    pub fn from_matrices(quantities: DMatrix<f64>, values: DMatrix<f64>) -> Result<Self> {
        let entities = (1..=quantities.nrows()).map(|i| format!("e{i}")).collect();
        let periods = (1..=quantities.ncols()).map(|t| format!("t{t}")).collect();
        Panel::new(entities, periods, quantities, values, 0)
    }

    pub fn entities(&self) -> &[String] {
        &self.entities
    }

    pub fn periods(&self) -> &[String] {
        &self.periods
    }

    pub fn quantities(&self) -> &DMatrix<f64> {
        &self.quantities
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn base_index(&self) -> usize {
        self.base_index
    }

    pub fn n_entities(&self) -> usize {
        self.quantities.nrows()
    }

    pub fn n_periods(&self) -> usize {
        self.quantities.ncols()
    }

    pub fn is_present(&self, entity: usize, period: usize) -> bool {
        self.quantities[(entity, period)] > 0.0
    }

    /// Unit value `v / q` of a present cell.
    pub fn price(&self, entity: usize, period: usize) -> Option<f64> {
        self.is_present(entity, period)
            .then(|| self.values[(entity, period)] / self.quantities[(entity, period)])
    }

    /// Number of periods in which each entity is present.
    pub fn presence_counts(&self) -> Vec<usize> {
        (0..self.n_entities())
            .map(|i| {
                (0..self.n_periods())
                    .filter(|&t| self.is_present(i, t))
                    .count()
            })
            .collect()
    }

    pub fn with_base(mut self, base_index: usize) -> Result<Self> {
        if base_index >= self.n_periods() {
            return Err(MplError::InvalidPanel(format!(
                "base index {base_index} outside {} periods",
                self.n_periods()
            )));
        }
        self.base_index = base_index;
        Ok(self)
    }

    pub fn period_index(&self, label: &str) -> Option<usize> {
        self.periods.iter().position(|p| p == label)
    }

    /// Rows restricted to `keep`, in the given order.
    pub fn select_entities(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(MplError::EmptyBasket);
        }
        let t = self.n_periods();
        let mut q = DMatrix::zeros(keep.len(), t);
        let mut v = DMatrix::zeros(keep.len(), t);
        let mut labels = Vec::with_capacity(keep.len());
        for (row, &i) in keep.iter().enumerate() {
            if i >= self.n_entities() {
                return Err(MplError::DimensionMismatch(format!(
                    "entity index {i} outside {} entities",
                    self.n_entities()
                )));
            }
            q.set_row(row, &self.quantities.row(i));
            v.set_row(row, &self.values.row(i));
            labels.push(self.entities[i].clone());
        }
        Panel::new(labels, self.periods.clone(), q, v, self.base_index)
    }

    /// Panel with one extra column appended after the last period.
    pub fn append_column(
        &self,
        label: impl Into<String>,
        quantities: &DVector<f64>,
        values: &DVector<f64>,
    ) -> Result<Self> {
        let n = self.n_entities();
        if quantities.len() != n || values.len() != n {
            return Err(MplError::DimensionMismatch(format!(
                "new column has {} quantities and {} values for {} entities",
                quantities.len(),
                values.len(),
                n
            )));
        }
        let label = label.into();
        if self.periods.contains(&label) {
            return Err(MplError::InvalidPanel(format!(
                "period `{label}` already exists"
            )));
        }
        let t = self.n_periods();
        let mut q = self.quantities.clone().insert_column(t, 0.0);
        let mut v = self.values.clone().insert_column(t, 0.0);
        q.set_column(t, quantities);
        v.set_column(t, values);
        let mut periods = self.periods.clone();
        periods.push(label);
        Panel::new(self.entities.clone(), periods, q, v, self.base_index)
    }

    /// Long-format records for every present cell.
    ///
    /// Records are ordered so that first appearance reproduces the panel's
    /// entity and period order whenever some record stream could, which
    /// holds for every panel produced by [`build_panel`]. Labels of rows or
    /// columns with no present cell cannot be represented.
    pub fn to_records(&self) -> Vec<Record> {
        let (n, t) = (self.n_entities(), self.n_periods());
        let mut emitted = DMatrix::from_element(n, t, false);
        let mut order = Vec::with_capacity(n * t);
        // Entities `0..a` and periods `0..b` have appeared so far.
        let (mut a, mut b) = (0usize, 0usize);
        loop {
            for i in 0..a {
                for j in 0..b {
                    if self.is_present(i, j) && !emitted[(i, j)] {
                        emitted[(i, j)] = true;
                        order.push((i, j));
                    }
                }
            }
            let next_entity = (a < n)
                .then(|| (0..b).find(|&j| self.is_present(a, j)).map(|j| (a, j)))
                .flatten();
            let next_period = (b < t)
                .then(|| (0..a).find(|&i| self.is_present(i, b)).map(|i| (i, b)))
                .flatten();
            let both = (a < n && b < t && self.is_present(a, b)).then_some((a, b));
            let Some((i, j)) = next_entity.or(next_period).or(both) else {
                break;
            };
            emitted[(i, j)] = true;
            order.push((i, j));
            a = a.max(i + 1);
            b = b.max(j + 1);
        }
        for i in 0..n {
            for j in 0..t {
                if self.is_present(i, j) && !emitted[(i, j)] {
                    order.push((i, j));
                }
            }
        }
        order
            .into_iter()
            .map(|(i, j)| {
                Record::new(
                    self.entities[i].clone(),
                    self.periods[j].clone(),
                    self.quantities[(i, j)],
                    self.values[(i, j)],
                )
            })
            .collect()
    }
}

/// Build a dense panel from long-format records.
///
/// Entities and periods are ordered by first appearance. Missing cells become
/// `(0, 0)`. The first period is the base.
pub fn build_panel(records: &[Record]) -> Result<Panel> {
    build_panel_with_order(records, None)
}

/// As [`build_panel`], with an explicit period ordering. Every period label
/// seen in `records` must appear in `period_order`; listed periods without
/// records are kept as all-absent columns.
pub fn build_panel_with_order(
    records: &[Record],
    period_order: Option<&[String]>,
) -> Result<Panel> {
    let mut entity_ix: HashMap<&str, usize> = HashMap::new();
    let mut entities: Vec<String> = Vec::new();
    let mut period_ix: HashMap<String, usize> = HashMap::new();
    let mut periods: Vec<String> = Vec::new();

    if let Some(order) = period_order {
        for p in order {
            if period_ix.insert(p.clone(), periods.len()).is_some() {
                return Err(MplError::InvalidPanel(format!(
                    "period `{p}` listed twice in the period order"
                )));
            }
            periods.push(p.clone());
        }
    }

    for r in records {
        if !(r.quantity > 0.0 && r.value > 0.0 && r.quantity.is_finite() && r.value.is_finite()) {
            return Err(MplError::NonPositiveRecord {
                entity: r.entity.clone(),
                period: r.period.clone(),
            });
        }
        if !entity_ix.contains_key(r.entity.as_str()) {
            entity_ix.insert(r.entity.as_str(), entities.len());
            entities.push(r.entity.clone());
        }
        if !period_ix.contains_key(&r.period) {
            if period_order.is_some() {
                return Err(MplError::InvalidPanel(format!(
                    "period `{}` is missing from the period order",
                    r.period
                )));
            }
            period_ix.insert(r.period.clone(), periods.len());
            periods.push(r.period.clone());
        }
    }

    if periods.len() < 2 {
        return Err(MplError::TooFewPeriods(periods.len()));
    }

    let (n, t) = (entities.len(), periods.len());
    let mut q = DMatrix::zeros(n, t);
    let mut v = DMatrix::zeros(n, t);
    for r in records {
        let i = entity_ix[r.entity.as_str()];
        let j = period_ix[&r.period];
        if q[(i, j)] != 0.0 {
            return Err(MplError::DuplicateCell {
                entity: r.entity.clone(),
                period: r.period.clone(),
            });
        }
        q[(i, j)] = r.quantity;
        v[(i, j)] = r.value;
    }
    Panel::new(entities, periods, q, v, 0)
}

/// Which commodities enter the reference basket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasketMode {
    /// Union of the pairwise intersections: present in at least two periods.
    #[default]
    Mpl,
    /// Intersection of all periods: present everywhere.
    Intersection,
}

/// Outcome of the basket rule applied to a panel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasketReport {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    pub presence_counts: Vec<usize>,
    pub mode: BasketMode,
}

/// MPL reference basket: entities present in at least two periods.
pub fn reference_basket(panel: &Panel) -> Result<BasketReport> {
    reference_basket_with(panel, BasketMode::Mpl)
}

pub fn reference_basket_with(panel: &Panel, mode: BasketMode) -> Result<BasketReport> {
    let counts = panel.presence_counts();
    let needed = match mode {
        BasketMode::Mpl => 2,
        BasketMode::Intersection => panel.n_periods(),
    };
    let (kept, dropped): (Vec<usize>, Vec<usize>) =
        (0..counts.len()).partition(|&i| counts[i] >= needed);
    if kept.is_empty() {
        return Err(MplError::EmptyBasket);
    }
    Ok(BasketReport {
        kept,
        dropped,
        presence_counts: counts,
        mode,
    })
}

/// Restrict the panel to the kept entities of `report`.
pub fn filter_panel(panel: &Panel, report: &BasketReport) -> Result<Panel> {
    if report.presence_counts.len() != panel.n_entities() {
        return Err(MplError::DimensionMismatch(format!(
            "basket report covers {} entities, panel has {}",
            report.presence_counts.len(),
            panel.n_entities()
        )));
    }
    if report.kept.is_empty() {
        return Err(MplError::EmptyBasket);
    }
    if report.dropped.is_empty() {
        return Ok(panel.clone());
    }
    panel.select_entities(&report.kept)
}

/// Basket rule and filtering in one step.
pub fn basket_panel(panel: &Panel, mode: BasketMode) -> Result<(Panel, BasketReport)> {
    let report = reference_basket_with(panel, mode)?;
    let filtered = filter_panel(panel, &report)?;
    Ok((filtered, report))
}
