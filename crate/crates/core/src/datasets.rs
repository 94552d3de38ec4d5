//! Built-in panels: a small four-good, six-period worked example with known
//! reference prices and index, and a seeded synthetic generator at the scale
//! of a national museum panel.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::panel::{BasketMode, Panel};

/// Quantities, one row per good.
const Q: [[f64; 6]; 4] = [
    [5.0, 8.0, 10.0, 10.0, 15.0, 20.0],
    [15.0, 18.0, 20.0, 10.0, 15.0, 10.0],
    [25.0, 27.0, 30.0, 35.0, 30.0, 20.0],
    [5.0, 5.0, 5.0, 10.0, 15.0, 20.0],
];

/// Values rounded to two decimals.
const V_PRINTED: [[f64; 6]; 4] = [
    [9.29, 19.10, 24.14, 23.36, 38.17, 53.59],
    [22.78, 30.51, 34.40, 17.31, 28.40, 19.49],
    [19.08, 26.43, 31.29, 37.17, 34.83, 22.21],
    [7.15, 10.01, 10.18, 21.73, 33.28, 47.55],
];

/// Observed unit prices rounded to two decimals.
const P_PRINTED: [[f64; 6]; 4] = [
    [1.86, 2.39, 2.41, 2.34, 2.54, 2.68],
    [1.52, 1.69, 1.72, 1.73, 1.89, 1.95],
    [0.94, 0.98, 1.04, 1.06, 1.16, 1.11],
    [1.43, 2.00, 2.04, 2.17, 2.22, 2.38],
];

const REFERENCE_PRICES: [f64; 4] = [2.1, 1.5, 0.9, 1.9];
const INDEX: [f64; 6] = [1.0, 1.11, 1.18, 1.15, 1.25, 1.27];

/// The tabulated value of good 3 in period 1 (19.08) disagrees with its
/// tabulated price (0.94 × 25 = 23.5); every other cell agrees with `p·q` to
/// rounding. The corrected value is used throughout.
pub const CORRECTED_CELL: (usize, usize, f64) = (2, 0, 23.5);

/// Which slice of the worked example to estimate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkedCase {
    /// All four goods in all six periods.
    Complete,
    /// Good 4 unpriced in period 1 and good 2 in period 2, keeping only the
    /// goods present throughout (goods 1 and 3).
    ClassicalBasket,
    /// Same gaps, keeping every good present in at least two periods.
    MplBasket,
}

impl WorkedCase {
    pub const ALL: [WorkedCase; 3] = [
        WorkedCase::Complete,
        WorkedCase::ClassicalBasket,
        WorkedCase::MplBasket,
    ];

    pub fn label(self) -> &'static str {
        match self {
            WorkedCase::Complete => "complete",
            WorkedCase::ClassicalBasket => "classical-basket",
            WorkedCase::MplBasket => "mpl-basket",
        }
    }
}

/// The worked example and its known truth.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkedExample {
    pub quantities: DMatrix<f64>,
    /// Tabulated values with [`CORRECTED_CELL`] applied.
    pub values: DMatrix<f64>,
    pub printed_values: DMatrix<f64>,
    pub printed_prices: DMatrix<f64>,
    pub reference_prices: DVector<f64>,
    pub index: DVector<f64>,
}

fn rows<const C: usize>(data: &[[f64; C]]) -> DMatrix<f64> {
    DMatrix::from_fn(data.len(), C, |i, j| data[i][j])
}

/// Four goods over six periods with known `p̃` and `λ`.
pub fn worked_example() -> WorkedExample {
    let printed_values = rows(&V_PRINTED);
    let mut values = printed_values.clone();
    let (i, t, v) = CORRECTED_CELL;
    values[(i, t)] = v;
    WorkedExample {
        quantities: rows(&Q),
        values,
        printed_values,
        printed_prices: rows(&P_PRINTED),
        reference_prices: DVector::from_row_slice(&REFERENCE_PRICES),
        index: DVector::from_row_slice(&INDEX),
    }
}

impl WorkedExample {
    /// True price matrix `p̃ λ′`.
    pub fn true_prices(&self) -> DMatrix<f64> {
        &self.reference_prices * self.index.transpose()
    }

    /// Full panel with the two gaps punched, before basket selection.
    pub fn incomplete_panel(&self) -> Panel {
        let mut q = self.quantities.clone();
        let mut v = self.values.clone();
        for (i, t) in [(3, 0), (1, 1)] {
            q[(i, t)] = 0.0;
            v[(i, t)] = 0.0;
        }
        Panel::from_matrices(q, v).expect("worked example is a valid panel")
    }

    /// Panel for a case together with the basket mode that defines it.
    pub fn case(&self, case: WorkedCase) -> (Panel, BasketMode) {
        match case {
            WorkedCase::Complete => (
                Panel::from_matrices(self.quantities.clone(), self.values.clone())
                    .expect("worked example is a valid panel"),
                BasketMode::Mpl,
            ),
            WorkedCase::ClassicalBasket => (self.incomplete_panel(), BasketMode::Intersection),
            WorkedCase::MplBasket => (self.incomplete_panel(), BasketMode::Mpl),
        }
    }
}

/// Seeded synthetic panel with known prices and index.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPanel {
    pub panel: Panel,
    pub reference_prices: DVector<f64>,
    pub index: DVector<f64>,
}

/// Shape and noise levels of [`synthetic_panel`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticDesign {
    pub entities: usize,
    pub periods: usize,
    /// Log-sd of the entity-level quantity scale around 3e5.
    pub scale_dispersion: f64,
    /// Log-sd of the cell-level quantity noise.
    pub quantity_noise: f64,
    /// Log-sd of the multiplicative value noise.
    pub value_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticDesign {
    fn default() -> Self {
        SyntheticDesign {
            entities: 36,
            periods: 14,
            scale_dispersion: 0.8,
            quantity_noise: 0.05,
            value_noise: 0.05,
            seed: 2004,
        }
    }
}

/// Complete panel with attendance-like quantities, prices uniform on
/// `[5, 15]` and an index drifting about 2% per period.
pub fn synthetic_panel(design: &SyntheticDesign) -> Result<SyntheticPanel> {
    let (n, t) = (design.entities, design.periods);
    let mut rng = ChaCha20Rng::seed_from_u64(design.seed);
    let scale = Normal::new(3e5_f64.ln(), design.scale_dispersion).expect("finite sd");
    let qnoise = Normal::new(0.0, design.quantity_noise).expect("finite sd");
    let vnoise = Normal::new(0.0, design.value_noise).expect("finite sd");
    let growth = Normal::new(0.02, 0.02).expect("finite sd");

    let levels: Vec<f64> = (0..n).map(|_| scale.sample(&mut rng).exp()).collect();
    let q = DMatrix::from_fn(n, t, |i, _| levels[i] * qnoise.sample(&mut rng).exp());
    let prices = DVector::from_fn(n, |_, _| rng.random_range(5.0..15.0));
    let mut index = DVector::from_element(t, 1.0);
    for j in 1..t {
        index[j] = index[j - 1] * (1.0 + growth.sample(&mut rng));
    }
    let v = DMatrix::from_fn(n, t, |i, j| {
        prices[i] * index[j] * q[(i, j)] * vnoise.sample(&mut rng).exp()
    });
    Ok(SyntheticPanel {
        panel: Panel::from_matrices(q, v)?,
        reference_prices: prices,
        index,
    })
}
