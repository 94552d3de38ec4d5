//! Multi-period and multilateral price indices estimated as the GLS solution
//! of a regression of values on quantities.

pub mod baseline;
pub mod classical;
pub mod datasets;
pub mod error;
pub mod estimator;
mod linalg;
pub mod oracle;
pub mod panel;
pub mod sim;
pub mod updater;

pub use error::{MplError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use estimator::{
    estimate_mpl, estimate_omega, estimate_omega_iterated, estimate_stationary, fit,
    omega_from_residuals, reciprocal_map, two_period_closed_form, Blocks, CovarianceSpec,
    EstimateRecord, EstimateWarning, Fit, FitOptions, MplEstimate, Regime,
};
pub use linalg::{condition_number_sym, ILL_CONDITIONED};
pub use panel::{
    basket_panel, build_panel, build_panel_with_order, filter_panel, reference_basket,
    reference_basket_with, BasketMode, BasketReport, Panel, Record,
};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    struct Intro;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/estimation.md")]
    struct Estimation;
    #[doc = include_str!("../../../book/src/covariance.md")]
    struct Covariance;
    #[doc = include_str!("../../../book/src/classical.md")]
    struct Classical;
    #[doc = include_str!("../../../book/src/updating.md")]
    struct Updating;
    #[doc = include_str!("../../../book/src/baseline.md")]
    struct Baseline;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
