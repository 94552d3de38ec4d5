//! Band-width ratios of MPL (GLS-d) to TPD per period on a synthetic panel,
//! for both perturbation schemes.
//!
//! `cargo run --example bands -- [design seed] [quantity noise] [replications]`

use mpl_index::datasets::{synthetic_panel, SyntheticDesign};
use mpl_index::sim::{run_perturbation, EstimatorKind, Scheme, SimConfig};
use mpl_index::Regime;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map_or(2004, |s| s.parse().unwrap());
    let qn: f64 = args.get(2).map_or(0.05, |s| s.parse().unwrap());
    let reps: u64 = args.get(3).map_or(300, |s| s.parse().unwrap());
    let d = SyntheticDesign {
        seed,
        quantity_noise: qn,
        ..SyntheticDesign::default()
    };
    let panel = synthetic_panel(&d).unwrap().panel;
    let est = [
        EstimatorKind::mpl(Regime::GlsD),
        EstimatorKind::Tpd { weighted: false },
    ];
    for (scheme, mean, sd) in [
        (Scheme::AdditiveNoise, 20000.0, 1000.0),
        (Scheme::RandomWalkNoise, -5000.0, 800.0),
    ] {
        let cfg = SimConfig {
            scheme,
            noise_mean: mean,
            sd_low: 0.0,
            sd_high: sd,
            replications: reps,
            seed: 20040217,
        };
        let r = run_perturbation(&panel, &cfg, &est).unwrap();
        let m = r.summaries[0].band_width();
        let t = r.summaries[1].band_width();
        let ratios: Vec<String> = m
            .iter()
            .zip(&t)
            .skip(1)
            .map(|(a, b)| format!("{:.3}", a / b))
            .collect();
        println!("{}", ratios.join(" "));
    }
}
