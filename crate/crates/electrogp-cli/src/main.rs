//! Command line front end for the electrogp curve learner.
//!
//! Verbs cover the whole workflow: simulate a dataset, fit a model, export
//! the posterior mean curve, compute an uncertainty band, predict missing
//! coordinates of new records, draw from the repulsive location process,
//! and render an SVG plot. Every command reads and writes plain files;
//! nothing is kept between invocations except the model JSON.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 data integrity
//! error (malformed CSV cells, model files that fail their checksum or
//! objective checks), 4 numerical failure.

mod config;
mod dataset;
mod generate;
mod plot;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use electrogp::corp::{self, CorpConfig};
use electrogp::lle::LleSettings;
use electrogp::scg::ScgSettings;
use electrogp::{infer, model, FitOptions, FittedModel};

use config::{resolve, resolve_required, Config};
use generate::Shape;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unusable paths, or settings the algorithms reject.
    Usage(String),
    /// Files whose contents are malformed or fail integrity checks.
    Data(String),
    /// Numerical breakdown while computing.
    Numeric(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => f.write_str(m),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<electrogp::Error> for CliError {
    fn from(e: electrogp::Error) -> Self {
        fn root(e: &electrogp::Error) -> &electrogp::Error {
            match e {
                electrogp::Error::Stage(_, inner) => root(inner),
                other => other,
            }
        }
        let msg = e.to_string();
        use electrogp::Error as E;
        match root(&e) {
            E::Domain(_) | E::DisconnectedGraph { .. } => CliError::Usage(msg),
            E::Persistence(_) | E::ChecksumMismatch { .. } => CliError::Data(msg),
            E::Conditioning(_) | E::RejectionCap { .. } => CliError::Numeric(msg),
            E::Stage(..) => unreachable!("root strips stage wrappers"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "electrogp",
    version,
    about = "Curve learning with repulsive latent locations and Gaussian process coordinate maps"
)]
struct Cli {
    /// TOML file supplying values for omitted flags (keys match flag names).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a noisy synthetic dataset plus a noise-free truth sidecar.
    Simulate {
        #[arg(long, value_enum)]
        shape: Shape,
        /// Number of points.
        #[arg(long)]
        n: usize,
        /// Standard deviation of the isotropic observation noise.
        #[arg(long)]
        noise_sd: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; the sidecar lands next to it as <stem>_truth.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the model to a dataset and write it as self-describing JSON.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Repulsion strength of the latent location prior.
        #[arg(long)]
        r: Option<f64>,
        /// Quadrature nodes for location-process integrals.
        #[arg(long)]
        quad_points: Option<usize>,
        /// Neighborhood size of the embedding initializer.
        #[arg(long)]
        k_neighbors: Option<usize>,
        /// Ridge added to local Gram matrices, as a fraction of the trace.
        #[arg(long)]
        reg: Option<f64>,
        /// Conjugate gradient iteration cap per optimization stage.
        #[arg(long)]
        max_iters: Option<usize>,
        /// Relative improvement below which optimization stops.
        #[arg(long)]
        rel_tol: Option<f64>,
        /// Gradient norm below which optimization stops.
        #[arg(long)]
        grad_tol: Option<f64>,
        /// Subtract per-dimension means before fitting (recorded in the model).
        #[arg(long)]
        center: bool,
        /// Drop the repulsion term from the objective.
        #[arg(long)]
        no_corp_prior: bool,
        /// Single-column CSV of initial coordinates, replacing the embedding.
        #[arg(long)]
        init_coords: Option<PathBuf>,
    },
    /// Evaluate the posterior mean curve on a uniform grid.
    Curve {
        #[arg(long)]
        model: PathBuf,
        /// The training data the model was fitted to (checked against the model).
        #[arg(long)]
        data: PathBuf,
        /// Grid resolution.
        #[arg(long)]
        n_mu: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo uncertainty band radius around the mean curve.
    Band {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Band coverage level in (0,1).
        #[arg(long)]
        eta: Option<f64>,
        /// Latent draws per repetition.
        #[arg(long)]
        n1: Option<usize>,
        /// Repetitions.
        #[arg(long)]
        n2: Option<usize>,
        #[arg(long)]
        n_mu: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV of all pooled curve distances.
        #[arg(long)]
        out_distances: PathBuf,
        /// JSON summary with the band radius.
        #[arg(long)]
        out_summary: PathBuf,
    },
    /// Infer latent locations of partially observed records and
    /// reconstruct their missing coordinates.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Records CSV with the training header; empty cells are missing.
        #[arg(long)]
        records: PathBuf,
        /// map: grid-scanned posterior mode. mh: posterior mean of an
        /// independence Metropolis-Hastings chain.
        #[arg(long, default_value = "map")]
        method: PredictMethod,
        /// Retained chain length (mh).
        #[arg(long)]
        n_samples: Option<usize>,
        /// Discarded warmup length (mh).
        #[arg(long)]
        burn_in: Option<usize>,
        /// Chain seed (mh); record i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw locations from the repulsive process on (0,1).
    SampleCorp {
        /// Number of locations.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        quad_points: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV; omitted means one value per line on stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render data, mean curve, and optional band tube as SVG (d = 2 only).
    Plot {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Band summary JSON from the band command; adds the tube.
        #[arg(long)]
        band: Option<PathBuf>,
        #[arg(long)]
        n_mu: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum PredictMethod {
    Map,
    Mh,
}

#[derive(Serialize, Deserialize)]
struct BandSummary {
    eta: f64,
    rho: f64,
    n1: usize,
    n2: usize,
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_thread_pool()?;
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate { shape, n, noise_sd, seed, out } => {
            cmd_simulate(&cfg, shape, n, noise_sd, seed, &out)
        }
        Command::Fit {
            data,
            out,
            r,
            quad_points,
            k_neighbors,
            reg,
            max_iters,
            rel_tol,
            grad_tol,
            center,
            no_corp_prior,
            init_coords,
        } => {
            let opts = build_fit_options(
                &cfg,
                r,
                quad_points,
                k_neighbors,
                reg,
                max_iters,
                rel_tol,
                grad_tol,
                center,
                no_corp_prior,
                init_coords.as_deref(),
            )?;
            cmd_fit(&data, &out, &opts)
        }
        Command::Curve { model, data, n_mu, out } => {
            let n_mu = resolve(n_mu, cfg.n_mu, 512);
            cmd_curve(&model, &data, n_mu, &out)
        }
        Command::Band { model, data, eta, n1, n2, n_mu, seed, out_distances, out_summary } => {
            let eta = resolve(eta, cfg.eta, 0.95);
            let n1 = resolve(n1, cfg.n1, 100);
            let n2 = resolve(n2, cfg.n2, 50);
            let n_mu = resolve(n_mu, cfg.n_mu, 512);
            let seed = resolve_required(seed, cfg.seed, "--seed")?;
            cmd_band(&model, &data, eta, n1, n2, n_mu, seed, &out_distances, &out_summary)
        }
        Command::Predict { model, data, records, method, n_samples, burn_in, seed, out } => {
            let n_samples = resolve(n_samples, cfg.n_samples, 5000);
            let burn_in = resolve(burn_in, cfg.burn_in, 500);
            let seed = match method {
                PredictMethod::Mh => Some(resolve_required(seed, cfg.seed, "--seed")?),
                PredictMethod::Map => None,
            };
            cmd_predict(&model, &data, &records, method, n_samples, burn_in, seed, &out)
        }
        Command::SampleCorp { n, r, quad_points, seed, out } => {
            let corp_cfg = CorpConfig {
                r: resolve(r, cfg.r, CorpConfig::default().r),
                quad_points: resolve(quad_points, cfg.quad_points, CorpConfig::default().quad_points),
            };
            let seed = resolve_required(seed, cfg.seed, "--seed")?;
            cmd_sample_corp(n, &corp_cfg, seed, out.as_deref())
        }
        Command::Plot { model, data, band, n_mu, out } => {
            let n_mu = resolve(n_mu, cfg.n_mu, 512);
            cmd_plot(&model, &data, band.as_deref(), n_mu, &out)
        }
    }
}

/// ELECTROGP_THREADS caps the worker pool; unset lets the runtime decide.
fn init_thread_pool() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("ELECTROGP_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            CliError::Usage(format!(
                "ELECTROGP_THREADS must be a positive integer, got {:?}",
                raw
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot size thread pool: {}", e)))
}

#[allow(clippy::too_many_arguments)]
fn build_fit_options(
    cfg: &Config,
    r: Option<f64>,
    quad_points: Option<usize>,
    k_neighbors: Option<usize>,
    reg: Option<f64>,
    max_iters: Option<usize>,
    rel_tol: Option<f64>,
    grad_tol: Option<f64>,
    center_flag: bool,
    no_corp_prior_flag: bool,
    init_coords: Option<&Path>,
) -> Result<FitOptions, CliError> {
    let corp_default = CorpConfig::default();
    let lle_default = LleSettings::default();
    let scg_default = ScgSettings::default();
    let init = match init_coords {
        None => None,
        Some(path) => {
            let (m, _) = dataset::read_matrix(path)?;
            if m.ncols() != 1 {
                return Err(CliError::Usage(format!(
                    "{}: initial coordinates must be a single column, found {}",
                    path.display(),
                    m.ncols()
                )));
            }
            Some(m.column(0).iter().copied().collect())
        }
    };
    Ok(FitOptions {
        corp: CorpConfig {
            r: resolve(r, cfg.r, corp_default.r),
            quad_points: resolve(quad_points, cfg.quad_points, corp_default.quad_points),
        },
        lle: LleSettings {
            k_neighbors: resolve(k_neighbors, cfg.k_neighbors, lle_default.k_neighbors),
            reg: resolve(reg, cfg.reg, lle_default.reg),
        },
        scg: ScgSettings {
            max_iters: resolve(max_iters, cfg.max_iters, scg_default.max_iters),
            rel_tol: resolve(rel_tol, cfg.rel_tol, scg_default.rel_tol),
            grad_tol: resolve(grad_tol, cfg.grad_tol, scg_default.grad_tol),
            ..scg_default
        },
        use_corp_prior: resolve(no_corp_prior_flag.then_some(false), cfg.corp_prior, true),
        center: resolve(center_flag.then_some(true), cfg.center, false),
        init_coords: init,
    })
}

fn load_model_file(model_path: &Path, data_path: &Path) -> Result<(FittedModel, Vec<String>), CliError> {
    let (data, names) = dataset::read_matrix(data_path)?;
    let json = std::fs::read_to_string(model_path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {}", model_path.display(), e)))?;
    let fitted = model::load_model(&json, &data)?;
    Ok((fitted, names))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {}", path.display(), e)))
}

fn cmd_simulate(
    cfg: &Config,
    shape: Shape,
    n: usize,
    noise_sd: f64,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let seed = resolve_required(seed, cfg.seed, "--seed")?;
    let (data, truth) = generate::simulate(shape, n, noise_sd, seed)?;
    dataset::write_matrix(out, &generate::data_headers(), &data)?;
    let sidecar = dataset::truth_sidecar_path(out);
    dataset::write_matrix(&sidecar, &generate::truth_headers(), &truth)?;
    println!(
        "wrote {} points to {} (truth: {})",
        n,
        out.display(),
        sidecar.display()
    );
    Ok(())
}

fn cmd_fit(data_path: &Path, out: &Path, opts: &FitOptions) -> Result<(), CliError> {
    let (data, _) = dataset::read_matrix(data_path)?;
    let fitted = electrogp::fit::fit(&data, opts)?;
    write_text(out, &model::save_model(&fitted))?;
    let stages = fitted.stage_objectives();
    println!("embedding objective: {}", stages[0]);
    println!("hyperparameter objective: {}", stages[1]);
    println!("joint objective: {}", stages[2]);
    println!("final objective: {}", fitted.final_objective());
    println!("wrote model to {}", out.display());
    Ok(())
}

fn cmd_curve(model_path: &Path, data_path: &Path, n_mu: usize, out: &Path) -> Result<(), CliError> {
    let (fitted, _) = load_model_file(model_path, data_path)?;
    let curve = infer::mean_curve(&fitted, n_mu)?;
    let mut headers = vec!["x_mu".to_string()];
    for j in 0..fitted.d() {
        headers.push(format!("mu_{}", j + 1));
    }
    let mut table = DMatrix::zeros(n_mu, fitted.d() + 1);
    for i in 0..n_mu {
        table[(i, 0)] = curve.grid[i];
        for j in 0..fitted.d() {
            table[(i, j + 1)] = curve.vertices[(i, j)];
        }
    }
    dataset::write_matrix(out, &headers, &table)?;
    println!("wrote {} curve points to {}", n_mu, out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_band(
    model_path: &Path,
    data_path: &Path,
    eta: f64,
    n1: usize,
    n2: usize,
    n_mu: usize,
    seed: u64,
    out_distances: &Path,
    out_summary: &Path,
) -> Result<(), CliError> {
    let (fitted, _) = load_model_file(model_path, data_path)?;
    let curve = infer::mean_curve(&fitted, n_mu)?;
    let band = infer::uncertainty_band(&fitted, &curve, eta, n1, n2, seed)?;

    let distances = DMatrix::from_column_slice(band.sample_distances.len(), 1, &band.sample_distances);
    dataset::write_matrix(out_distances, &["distance".to_string()], &distances)?;

    let summary = BandSummary { eta: band.eta, rho: band.rho, n1: band.n1, n2: band.n2, seed };
    let json = serde_json::to_string_pretty(&summary).expect("band summary serializes");
    write_text(out_summary, &json)?;

    println!("rho = {}", band.rho);
    println!(
        "wrote {} distances to {} and summary to {}",
        band.sample_distances.len(),
        out_distances.display(),
        out_summary.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_predict(
    model_path: &Path,
    data_path: &Path,
    records_path: &Path,
    method: PredictMethod,
    n_samples: usize,
    burn_in: usize,
    seed: Option<u64>,
    out: &Path,
) -> Result<(), CliError> {
    let (fitted, names) = load_model_file(model_path, data_path)?;
    let (records, record_names) = dataset::read_records(records_path)?;
    if record_names != names {
        return Err(CliError::Data(format!(
            "{}: header {:?} does not match the training header {:?}",
            records_path.display(),
            record_names,
            names
        )));
    }

    let mut wtr = csv::Writer::from_path(out)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {}", out.display(), e)))?;
    let io_err = |e: csv::Error| CliError::Usage(format!("cannot write {}: {}", out.display(), e));

    let mut headers = vec!["record".to_string(), "latent".to_string(), "acceptance".to_string()];
    for name in &names {
        headers.push(format!("{}_mean", name));
        headers.push(format!("{}_sd", name));
    }
    wtr.write_record(&headers).map_err(io_err)?;

    for (i, record) in records.iter().enumerate() {
        let obs = infer::PartialObservation::new(record)?;
        let posterior = match method {
            PredictMethod::Map => infer::predict_latent_map(&fitted, &obs)?,
            PredictMethod::Mh => {
                let seed = seed.expect("mh seed resolved").wrapping_add(i as u64);
                infer::predict_latent_mh(&fitted, &obs, n_samples, burn_in, seed)?
            }
        };
        if posterior.multimodal_warning {
            eprintln!(
                "warning: record {}: latent posterior has competing modes; \
                 the reported location may be one of several",
                i + 1
            );
        }
        if posterior.low_acceptance_warning {
            eprintln!(
                "warning: record {}: chain acceptance rate below 0.1%, \
                 estimates may be unreliable",
                i + 1
            );
        }
        let recon = infer::reconstruct_missing(&fitted, &obs, &posterior)?;

        let mut row: Vec<String> = Vec::with_capacity(headers.len());
        row.push(format!("{}", i + 1));
        row.push(format!("{}", posterior.point()));
        row.push(match posterior.acceptance_rate {
            Some(a) => format!("{}", a),
            None => String::new(),
        });
        for j in 0..fitted.d() {
            match recon.missing_dims.iter().position(|&m| m == j) {
                Some(k) => {
                    row.push(format!("{}", recon.mean[k]));
                    row.push(format!("{}", recon.covariance[(k, k)].sqrt()));
                }
                None => {
                    row.push(String::new());
                    row.push(String::new());
                }
            }
        }
        wtr.write_record(&row).map_err(io_err)?;
    }
    wtr.flush()
        .map_err(|e| CliError::Usage(format!("cannot write {}: {}", out.display(), e)))?;
    println!("wrote {} predictions to {}", records.len(), out.display());
    Ok(())
}

fn cmd_sample_corp(
    n: usize,
    corp_cfg: &CorpConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Usage("--n must be at least 1".to_string()));
    }
    let points = corp::sample(n, corp_cfg, seed)?;
    match out {
        Some(path) => {
            let m = DMatrix::from_column_slice(n, 1, points.as_slice());
            dataset::write_matrix(path, &["x".to_string()], &m)?;
            println!("wrote {} locations to {}", n, path.display());
        }
        None => {
            for x in points.as_slice() {
                println!("{}", x);
            }
        }
    }
    Ok(())
}

fn cmd_plot(
    model_path: &Path,
    data_path: &Path,
    band_path: Option<&Path>,
    n_mu: usize,
    out: &Path,
) -> Result<(), CliError> {
    let (fitted, _) = load_model_file(model_path, data_path)?;
    let curve = infer::mean_curve(&fitted, n_mu)?;
    let rho = match band_path {
        None => None,
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("cannot read {}: {}", path.display(), e)))?;
            let summary: BandSummary = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("{}: {}", path.display(), e)))?;
            Some(summary.rho)
        }
    };
    let svg = plot::render_plot(fitted.data(), &curve, rho)?;
    write_text(out, &svg)?;
    println!("wrote plot to {}", out.display());
    Ok(())
}
