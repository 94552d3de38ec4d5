mod io;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use mpl_index::baseline::{cpd_estimate, tableau_from_panel};
use mpl_index::classical::{
    axiom_suite, AxiomParams, Classical, IndexKind, MplIndex, TwoPeriodIndex, TwoPeriodInstance,
    Weighting,
};
use mpl_index::datasets::{synthetic_panel, SyntheticDesign};
use mpl_index::oracle::{max_relative_error, stacked_estimate};
use mpl_index::sim::{run_perturbation, EstimatorKind, Scheme, SimConfig};
use mpl_index::updater::{append_period, update_multilateral, NewColumn};
use mpl_index::{
    estimate_omega, fit, BasketMode, EstimateRecord, FitOptions, MplError, MplEstimate, Panel,
    Regime,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::io::{fmt12, read_json, read_panel, read_records, write_json, RunManifest};

/// Seed used when `--seed` is not given.
const DEFAULT_SEED: u64 = 2004;
const ORACLE_TOLERANCE: f64 = 1e-10;

#[derive(Parser)]
#[command(
    name = "mpl",
    version,
    about = "Multi-period and multilateral price indices"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the index on a panel CSV (entity,period,quantity,value).
    Estimate(EstimateArgs),
    /// Extend a published estimate with one more column.
    Update(UpdateArgs),
    /// Compare the MPL index with the dummy-variable regression index.
    Compare(CompareArgs),
    /// Monte Carlo perturbation study.
    Simulate(SimulateArgs),
    /// Run the axiom checks on a two-period instance.
    Axioms(AxiomArgs),
}

#[derive(Args, Clone, Serialize)]
struct FitFlags {
    /// Error covariance regime: ols, gls-d, gls-s or gls-f.
    #[arg(long, default_value = "ols")]
    regime: Regime,
    /// Label of the base period (defaults to the first).
    #[arg(long)]
    base: Option<String>,
    #[arg(long, value_enum, default_value = "mpl")]
    basket: BasketArg,
    /// Shrinkage toward the diagonal for gls-s.
    #[arg(long, default_value_t = 0.5)]
    shrinkage: f64,
    /// Ridge added to estimated covariance blocks.
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
    /// Extra covariance re-estimation rounds.
    #[arg(long, default_value_t = 0)]
    iterations: usize,
    /// Comma-separated period order (defaults to first appearance).
    #[arg(long, value_delimiter = ',')]
    period_order: Option<Vec<String>>,
}

impl FitFlags {
    fn options(&self) -> FitOptions {
        FitOptions {
            regime: self.regime,
            basket: self.basket.into(),
            shrinkage: self.shrinkage,
            ridge: self.ridge,
            iterations: self.iterations,
        }
    }

    fn load(&self, path: &Path) -> Result<Panel> {
        let panel = read_panel(path, self.period_order.as_deref())?;
        match &self.base {
            Some(label) => {
                let b = panel.period_index(label).ok_or_else(|| {
                    MplError::InvalidConfig(format!("unknown base period `{label}`"))
                })?;
                Ok(panel.with_base(b)?)
            }
            None => Ok(panel),
        }
    }
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BasketArg {
    Mpl,
    Intersection,
}

impl From<BasketArg> for BasketMode {
    fn from(b: BasketArg) -> Self {
        match b {
            BasketArg::Mpl => BasketMode::Mpl,
            BasketArg::Intersection => BasketMode::Intersection,
        }
    }
}

#[derive(Args, Serialize)]
struct EstimateArgs {
    csv: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    fit: FitFlags,
    /// Cross-check against the brute-force stacked regression.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value = "mpl-out")]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum UpdateMode {
    /// Temporal update: earlier periods are kept fixed.
    Period,
    /// Multilateral update: all entries are re-estimated.
    Country,
}

#[derive(Args, Serialize)]
struct UpdateArgs {
    /// Panel the estimate was computed on.
    #[arg(long)]
    panel: PathBuf,
    /// Estimate JSON written by `mpl estimate`.
    #[arg(long)]
    estimate: PathBuf,
    /// CSV with the records of the new column (a single period label).
    #[arg(long)]
    append: PathBuf,
    #[arg(long, value_enum, default_value = "period")]
    mode: UpdateMode,
    #[arg(long, default_value_t = 0.5)]
    shrinkage: f64,
    #[arg(long, default_value_t = 1e-8)]
    ridge: f64,
    #[arg(long, default_value = "mpl-out")]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum BaselineArg {
    /// Time product dummy (columns are periods).
    Tpd,
    /// Country product dummy (columns are areas).
    Cpd,
}

#[derive(Args, Serialize)]
struct CompareArgs {
    csv: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    fit: FitFlags,
    #[arg(long, value_enum, default_value = "tpd")]
    baseline: BaselineArg,
    /// Weight the dummy regression by expenditure shares.
    #[arg(long)]
    weighted: bool,
    #[arg(long, default_value = "mpl-out")]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum SchemeArg {
    Additive,
    RandomWalk,
}

#[derive(Args, Serialize)]
struct SimulateArgs {
    /// Panel to perturb; a seeded synthetic 36x14 panel when omitted.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Seed of the synthetic panel.
    #[arg(long, default_value_t = 2004)]
    design_seed: u64,
    #[arg(long, value_enum, default_value = "additive")]
    scheme: SchemeArg,
    #[arg(long, default_value_t = 20000.0, allow_negative_numbers = true)]
    noise_mean: f64,
    #[arg(long, default_value_t = 0.0)]
    sd_low: f64,
    #[arg(long, default_value_t = 1000.0)]
    sd_high: f64,
    #[arg(long, default_value_t = 1000)]
    replications: u64,
    #[arg(long)]
    seed: Option<u64>,
    /// Estimators: mpl-ols, mpl-gls-d, mpl-gls-s, mpl-gls-f, tpd, tpd-weighted.
    #[arg(
        long = "estimator",
        value_delimiter = ',',
        default_value = "mpl-gls-d,tpd"
    )]
    estimators: Vec<String>,
    #[arg(long, default_value = "mpl-out")]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum IndexArg {
    MplUnit,
    MplPrice,
    MplGearyKhamis,
    Laspeyres,
    Paasche,
    MarshallEdgeworth,
    Walsh,
    GearyKhamis,
}

#[derive(Args, Serialize)]
struct AxiomArgs {
    #[arg(long, value_enum, default_value = "mpl-unit")]
    index: IndexArg,
    /// JSON instance `{p1, p2, q1, q2, p3?, q3?}`; random when omitted.
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Number of goods of a random instance.
    #[arg(long, default_value_t = 5)]
    goods: usize,
    /// Proportionality constant for mpl-price.
    #[arg(long, default_value_t = 1.0)]
    z: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "mpl-out")]
    out: PathBuf,
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn print_index_table(est: &MplEstimate) {
    println!("period,index,se");
    for (t, p) in est.periods.iter().enumerate() {
        let se = est.index_se.as_ref().map_or(String::new(), |s| fmt12(s[t]));
        println!("{p},{},{se}", fmt12(est.indices[t]));
    }
}

fn cmd_estimate(args: &EstimateArgs) -> Result<()> {
    let panel = args.fit.load(&args.csv)?;
    let f = fit(&panel, &args.fit.options())?;
    prepare_out(&args.out)?;
    for w in &f.estimate.warnings {
        log::warn!("{w}");
    }
    write_json(&args.out.join("estimate.json"), &f.estimate.to_record())?;

    let dropped: Vec<&str> = f
        .basket
        .dropped
        .iter()
        .map(|&i| panel.entities()[i].as_str())
        .collect();
    let mut report = json!({
        "regime": f.estimate.regime,
        "basket": f.basket.mode,
        "dropped_entities": dropped,
    });
    let mut outputs = vec!["estimate.json", "report.json"];
    if args.oracle {
        let oracle = stacked_estimate(&f.panel, &f.covariance)?;
        let err = max_relative_error(&f.estimate, &oracle);
        let verdict = if err <= ORACLE_TOLERANCE {
            "ok"
        } else {
            "MISMATCH"
        };
        println!("oracle: max rel err {err:.3e} (≤ {ORACLE_TOLERANCE:e}): {verdict}");
        report["oracle_max_rel_err"] = json!(err);
    }
    write_json(&args.out.join("report.json"), &report)?;
    print_index_table(&f.estimate);
    outputs.sort();
    RunManifest::new(
        "estimate",
        std::slice::from_ref(&args.csv),
        serde_json::to_value(args)?,
        None,
    )?
    .write(&args.out, &outputs)
}

fn cmd_update(args: &UpdateArgs) -> Result<()> {
    let record: EstimateRecord = read_json(&args.estimate)?;
    let prev = MplEstimate::from_record(&record)?;
    let full = read_panel(&args.panel, Some(&record.periods))?;
    let full = full.with_base(prev.base_index)?;
    let keep =
        prev.entities
            .iter()
            .map(|e| {
                full.entities().iter().position(|x| x == e).ok_or_else(|| {
                    MplError::StaleEstimate(format!("entity `{e}` is not in the panel"))
                })
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
    let panel = full.select_entities(&keep)?;

    let appended = read_records(&args.append)?;
    let labels: Vec<&str> = {
        let mut l: Vec<&str> = appended.iter().map(|r| r.period.as_str()).collect();
        l.dedup();
        l
    };
    let label = match labels.as_slice() {
        [one] => one.to_string(),
        _ => bail!(MplError::InvalidPanel(
            "the appended CSV must hold exactly one period".into()
        )),
    };
    let mut q = DVector::zeros(panel.n_entities());
    let mut v = DVector::zeros(panel.n_entities());
    for r in &appended {
        let i = panel
            .entities()
            .iter()
            .position(|e| *e == r.entity)
            .ok_or_else(|| {
                MplError::InvalidPanel(format!("entity `{}` is not part of the estimate", r.entity))
            })?;
        if q[i] != 0.0 {
            bail!(MplError::DuplicateCell {
                entity: r.entity.clone(),
                period: label.clone()
            });
        }
        q[i] = r.quantity;
        v[i] = r.value;
    }
    let col = NewColumn::new(label, q, v);
    let cov = estimate_omega(&panel, prev.regime, args.shrinkage, args.ridge)?;
    let updated = match args.mode {
        UpdateMode::Period => append_period(&prev, &panel, &col, &cov)?.0,
        UpdateMode::Country => update_multilateral(&panel, &col, &cov)?,
    };
    prepare_out(&args.out)?;
    write_json(&args.out.join("estimate.json"), &updated.to_record())?;
    print_index_table(&updated);
    RunManifest::new(
        "update",
        &[
            args.panel.clone(),
            args.estimate.clone(),
            args.append.clone(),
        ],
        serde_json::to_value(args)?,
        None,
    )?
    .write(&args.out, &["estimate.json"])
}

#[derive(Serialize)]
struct CompareRow {
    period: String,
    mpl: f64,
    mpl_low: Option<f64>,
    mpl_high: Option<f64>,
    baseline: f64,
    baseline_low: Option<f64>,
    baseline_high: Option<f64>,
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let panel = args.fit.load(&args.csv)?;
    let f = fit(&panel, &args.fit.options())?;
    let base = cpd_estimate(
        &tableau_from_panel(&f.panel),
        args.weighted,
        f.panel.base_index(),
    )?;
    let band = |x: f64, se: Option<f64>, sign: f64| se.map(|s| x + sign * 2.0 * s);
    let rows: Vec<CompareRow> = f
        .estimate
        .periods
        .iter()
        .enumerate()
        .map(|(t, p)| {
            let mse = f.estimate.index_se.as_ref().map(|s| s[t]);
            let bse = base.se.as_ref().map(|s| s[t]);
            CompareRow {
                period: p.clone(),
                mpl: f.estimate.indices[t],
                mpl_low: band(f.estimate.indices[t], mse, -1.0),
                mpl_high: band(f.estimate.indices[t], mse, 1.0),
                baseline: base.indices[t],
                baseline_low: band(base.indices[t], bse, -1.0),
                baseline_high: band(base.indices[t], bse, 1.0),
            }
        })
        .collect();

    prepare_out(&args.out)?;
    let mut w = csv::Writer::from_path(args.out.join("compare.csv"))?;
    let name = match args.baseline {
        BaselineArg::Tpd => "tpd",
        BaselineArg::Cpd => "cpd",
    };
    w.write_record([
        "period",
        "mpl",
        "mpl_low",
        "mpl_high",
        name,
        &format!("{name}_low"),
        &format!("{name}_high"),
    ])?;
    let opt = |x: Option<f64>| x.map(fmt12).unwrap_or_default();
    println!("period,mpl,{name}");
    for r in &rows {
        w.write_record([
            r.period.clone(),
            fmt12(r.mpl),
            opt(r.mpl_low),
            opt(r.mpl_high),
            fmt12(r.baseline),
            opt(r.baseline_low),
            opt(r.baseline_high),
        ])?;
        println!("{},{},{}", r.period, fmt12(r.mpl), fmt12(r.baseline));
    }
    w.flush()?;
    write_json(&args.out.join("compare.json"), &rows)?;
    RunManifest::new(
        "compare",
        std::slice::from_ref(&args.csv),
        serde_json::to_value(args)?,
        None,
    )?
    .write(&args.out, &["compare.csv", "compare.json"])
}

fn parse_estimator(s: &str) -> Result<EstimatorKind> {
    match s {
        "tpd" => Ok(EstimatorKind::Tpd { weighted: false }),
        "tpd-weighted" => Ok(EstimatorKind::Tpd { weighted: true }),
        _ => {
            let regime = s
                .strip_prefix("mpl-")
                .ok_or_else(|| MplError::InvalidConfig(format!("unknown estimator `{s}`")))?
                .parse::<Regime>()?;
            Ok(EstimatorKind::mpl(regime))
        }
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let seed = args.seed.unwrap_or(DEFAULT_SEED);
    let (panel, inputs) = match &args.panel {
        Some(p) => (read_panel(p, None)?, vec![p.clone()]),
        None => {
            let design = SyntheticDesign {
                seed: args.design_seed,
                ..SyntheticDesign::default()
            };
            (synthetic_panel(&design)?.panel, Vec::new())
        }
    };
    let estimators = args
        .estimators
        .iter()
        .map(|s| parse_estimator(s))
        .collect::<Result<Vec<_>>>()?;
    let cfg = SimConfig {
        scheme: match args.scheme {
            SchemeArg::Additive => Scheme::AdditiveNoise,
            SchemeArg::RandomWalk => Scheme::RandomWalkNoise,
        },
        noise_mean: args.noise_mean,
        sd_low: args.sd_low,
        sd_high: args.sd_high,
        replications: args.replications,
        seed,
    };
    info!("running {} replications", cfg.replications);
    let report = run_perturbation(&panel, &cfg, &estimators)?;

    prepare_out(&args.out)?;
    write_json(&args.out.join("sim.json"), &report)?;
    let mut w = csv::Writer::from_path(args.out.join("sim_indices.csv"))?;
    w.write_record(["replication", "estimator", "period", "index"])?;
    for (r, e, p, x) in report.index_rows() {
        w.write_record([r.to_string(), e, p, fmt12(x)])?;
    }
    w.flush()?;

    let mut b = csv::Writer::from_path(args.out.join("sim_bands.csv"))?;
    b.write_record(["estimator", "period", "mean", "band_low", "band_high"])?;
    for s in &report.summaries {
        for (t, p) in report.periods.iter().enumerate() {
            b.write_record([
                s.estimator.clone(),
                p.clone(),
                fmt12(s.mean_indices[t]),
                fmt12(s.band_low[t]),
                fmt12(s.band_high[t]),
            ])?;
        }
    }
    b.flush()?;

    println!("estimator,sse_of_mean,mean_sse,dropped");
    for (e, a, m) in report.sse_table() {
        let dropped = report.dropped.iter().filter(|d| d.estimator == e).count();
        println!("{e},{},{},{dropped}", fmt12(a), fmt12(m));
    }
    RunManifest::new("simulate", &inputs, serde_json::to_value(args)?, Some(seed))?
        .write(&args.out, &["sim.json", "sim_bands.csv", "sim_indices.csv"])
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceFile {
    p1: Vec<f64>,
    p2: Vec<f64>,
    q1: Vec<f64>,
    q2: Vec<f64>,
    p3: Option<Vec<f64>>,
    q3: Option<Vec<f64>>,
}

fn random_instance(rng: &mut ChaCha20Rng, n: usize) -> InstanceFile {
    let p1: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..10.0)).collect();
    let mut draw = |base: &[f64]| -> Vec<f64> {
        base.iter()
            .map(|p| p * rng.random_range(0.5..2.0))
            .collect()
    };
    let p2 = draw(&p1);
    let p3 = draw(&p1);
    let mut qs = || -> Vec<f64> { (0..n).map(|_| rng.random_range(0.5..20.0)).collect() };
    InstanceFile {
        q1: qs(),
        q2: qs(),
        q3: Some(qs()),
        p1,
        p2,
        p3: Some(p3),
    }
}

fn cmd_axioms(args: &AxiomArgs) -> Result<()> {
    let seed = args.seed.unwrap_or(DEFAULT_SEED);
    let (file, inputs) = match &args.instance {
        Some(p) => (read_json::<InstanceFile>(p)?, vec![p.clone()]),
        None => {
            if args.goods == 0 {
                bail!(MplError::InvalidConfig(
                    "at least one good is required".into()
                ));
            }
            (
                random_instance(&mut ChaCha20Rng::seed_from_u64(seed), args.goods),
                Vec::new(),
            )
        }
    };
    let v = |x: &[f64]| DVector::from_column_slice(x);
    let inst = TwoPeriodInstance::new(v(&file.p1), v(&file.p2), v(&file.q1), v(&file.q2))?;
    let mut params = AxiomParams::new(inst.len());
    if let (Some(p3), Some(q3)) = (&file.p3, &file.q3) {
        params.third = Some((v(p3), v(q3)));
    }
    let index: Box<dyn TwoPeriodIndex> = match args.index {
        IndexArg::MplUnit => Box::new(MplIndex::new(Weighting::Unit)),
        IndexArg::MplPrice => Box::new(MplIndex::new(Weighting::PriceProportional { z: args.z })),
        IndexArg::MplGearyKhamis => {
            Box::new(MplIndex::new(Weighting::Kind(IndexKind::GearyKhamis)))
        }
        IndexArg::Laspeyres => Box::new(Classical(IndexKind::Laspeyres)),
        IndexArg::Paasche => Box::new(Classical(IndexKind::Paasche)),
        IndexArg::MarshallEdgeworth => Box::new(Classical(IndexKind::MarshallEdgeworth)),
        IndexArg::Walsh => Box::new(Classical(IndexKind::Walsh)),
        IndexArg::GearyKhamis => Box::new(Classical(IndexKind::GearyKhamis)),
    };
    let report = axiom_suite(index.as_ref(), &inst, &params);

    prepare_out(&args.out)?;
    write_json(
        &args.out.join("axioms.json"),
        &json!({ "instance": file, "report": report }),
    )?;
    println!("property,name,status,discrepancy");
    for r in &report.rows {
        println!(
            "{},{},{},{:.3e}",
            r.property, r.name, r.status, r.discrepancy
        );
    }
    RunManifest::new("axioms", &inputs, serde_json::to_value(args)?, Some(seed))?
        .write(&args.out, &["axioms.json"])
}

/// 2 for bad input, 3 for singular systems, 4 for anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<MplError>() {
        return if e.is_singular() { 3 } else { 2 };
    }
    let input = err.chain().any(|c| {
        c.is::<std::io::Error>()
            || c.is::<csv::Error>()
            || c.is::<serde_json::Error>()
            || c.is::<MplError>()
    });
    if input {
        2
    } else {
        4
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Update(a) => cmd_update(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Axioms(a) => cmd_axioms(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
