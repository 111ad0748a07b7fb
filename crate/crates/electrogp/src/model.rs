//! Model persistence: one self-describing JSON document per fitted model.
//!
//! The document stores the data checksum rather than the data, so loading
//! takes the original dataset and verifies it. All reals are written with
//! 17 significant digits, which a correctly rounding parser maps back to
//! the identical f64 bits.

use crate::corp::CorpConfig;
use crate::error::{Error, Result};
use crate::fit::{FittedModel, HyperParams, LatentConfig};
use crate::gp::KernelParams;
use nalgebra::DMatrix;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

const FORMAT: &str = "electrogp-model";
const VERSION: u64 = 1;
/// Reloaded models must reproduce the stored objective to this relative
/// tolerance; natural-scale hyperparameters lose at most 1 ulp in the
/// log/exp round trip, far below it.
const OBJECTIVE_RTOL: f64 = 1e-8;

/// 17 significant digits: enough for any f64 to parse back bit-exactly.
fn real(v: f64) -> String {
    format!("{:.16e}", v)
}

fn real_list(vs: &[f64]) -> String {
    let items: Vec<String> = vs.iter().map(|v| real(*v)).collect();
    format!("[{}]", items.join(","))
}

/// SHA-256 over a tagged canonical encoding of the matrix: shape as
/// little-endian u64, then row-major little-endian f64 bits.
pub fn data_checksum(data: &DMatrix<f64>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"electrogp-data-v1");
    hasher.update((data.nrows() as u64).to_le_bytes());
    hasher.update((data.ncols() as u64).to_le_bytes());
    for i in 0..data.nrows() {
        for j in 0..data.ncols() {
            hasher.update(data[(i, j)].to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{:02x}", byte).unwrap();
    }
    hex
}

pub fn save_model(model: &FittedModel) -> String {
    let mut out = String::new();
    out.push_str("{\n");
    out.push_str(&format!("  \"format\": \"{}\",\n", FORMAT));
    out.push_str(&format!("  \"version\": {},\n", VERSION));
    out.push_str(&format!("  \"n\": {},\n", model.n()));
    out.push_str(&format!("  \"d\": {},\n", model.d()));
    out.push_str(&format!(
        "  \"data_checksum\": \"{}\",\n",
        data_checksum(model.data())
    ));
    out.push_str(&format!(
        "  \"corp\": {{\"r\": {}, \"quad_points\": {}}},\n",
        real(model.corp_cfg().r),
        model.corp_cfg().quad_points
    ));
    out.push_str(&format!("  \"corp_prior\": {},\n", model.use_corp_prior()));
    match model.centering() {
        Some(c) => out.push_str(&format!("  \"centering\": {},\n", real_list(c))),
        None => out.push_str("  \"centering\": null,\n"),
    }
    out.push_str(&format!(
        "  \"latent\": {},\n",
        real_list(model.latent().as_slice())
    ));
    out.push_str("  \"hyperparams\": [\n");
    for (j, p) in model.theta().dims.iter().enumerate() {
        let sep = if j + 1 < model.d() { "," } else { "" };
        out.push_str(&format!(
            "    {{\"phi\": {}, \"alpha\": {}, \"sigma2\": {}}}{}\n",
            real(p.phi()),
            real(p.alpha()),
            real(p.sigma2_raw()),
            sep
        ));
    }
    out.push_str("  ],\n");
    out.push_str(&format!(
        "  \"objective\": {},\n",
        real(model.final_objective())
    ));
    out.push_str(&format!(
        "  \"stage_objectives\": {}\n",
        real_list(model.stage_objectives())
    ));
    out.push_str("}\n");
    out
}

#[derive(Deserialize)]
struct HyperDoc {
    phi: f64,
    alpha: f64,
    sigma2: f64,
}

#[derive(Deserialize)]
struct CorpDoc {
    r: f64,
    quad_points: usize,
}

#[derive(Deserialize)]
struct ModelDoc {
    format: String,
    version: u64,
    n: usize,
    d: usize,
    data_checksum: String,
    corp: CorpDoc,
    corp_prior: bool,
    centering: Option<Vec<f64>>,
    latent: Vec<f64>,
    hyperparams: Vec<HyperDoc>,
    objective: f64,
    stage_objectives: Vec<f64>,
}

/// Parses a model document and rebuilds the model against the original
/// dataset, verifying the checksum and that the objective still evaluates
/// to the stored value.
pub fn load_model(json: &str, data: &DMatrix<f64>) -> Result<FittedModel> {
    let doc: ModelDoc = serde_json::from_str(json)
        .map_err(|e| Error::Persistence(format!("cannot parse model document: {}", e)))?;
    if doc.format != FORMAT {
        return Err(Error::Persistence(format!(
            "not a model document (format \"{}\")",
            doc.format
        )));
    }
    if doc.version != VERSION {
        return Err(Error::Persistence(format!(
            "unsupported model version {}",
            doc.version
        )));
    }
    if data.nrows() != doc.n || data.ncols() != doc.d {
        return Err(Error::Persistence(format!(
            "model was fitted to {}x{} data, got {}x{}",
            doc.n,
            doc.d,
            data.nrows(),
            data.ncols()
        )));
    }
    let actual = data_checksum(data);
    if actual != doc.data_checksum {
        return Err(Error::ChecksumMismatch {
            expected: doc.data_checksum,
            actual,
        });
    }
    if doc.latent.len() != doc.n {
        return Err(Error::Persistence(format!(
            "{} latent coordinates for {} rows",
            doc.latent.len(),
            doc.n
        )));
    }
    if doc.hyperparams.len() != doc.d {
        return Err(Error::Persistence(format!(
            "{} kernel entries for {} columns",
            doc.hyperparams.len(),
            doc.d
        )));
    }
    let corp_cfg = CorpConfig {
        r: doc.corp.r,
        quad_points: doc.corp.quad_points,
    };
    corp_cfg.validate()?;
    let latent = LatentConfig::new(doc.latent)?;
    let dims: Result<Vec<KernelParams>> = doc
        .hyperparams
        .iter()
        .map(|h| KernelParams::from_natural(h.phi, h.alpha, h.sigma2))
        .collect();
    let theta = HyperParams { dims: dims? };

    let model = FittedModel::assemble(
        data.clone(),
        latent,
        theta,
        corp_cfg,
        doc.corp_prior,
        doc.centering,
        doc.stage_objectives,
    )?;
    let err = (model.final_objective() - doc.objective).abs();
    if !(err <= OBJECTIVE_RTOL * (1.0 + doc.objective.abs())) {
        return Err(Error::Persistence(format!(
            "stored objective {} not reproduced (got {})",
            doc.objective,
            model.final_objective()
        )));
    }
    Ok(model)
}
