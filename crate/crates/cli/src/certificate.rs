//! `sgb certificate`: dual-precertificate nondegeneracy analysis of a
//! ground-truth configuration.
//!
//! Solves the least-norm precertificate for the given truth and mixing
//! parameter, runs the three-clause nondegeneracy check, and optionally
//! rasters the full landscape for plotting. Scientific verdicts — including
//! a degenerate certificate — exit with code 0; only broken inputs fail.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sgb_core::certificate::{
    check_nondegeneracy, raster_g, solve_precertificate, CertificateOptions, GroundTruth,
};
use sgb_core::{io, Error, Result, SpikeMeasure, Theta, Tsmi};

use crate::shared::{self, doc, ModelSpec};

/// Configuration of `sgb certificate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateConfig {
    /// Model whose atoms the certificate lives on.
    pub model: ModelSpec,
    pub truth: TruthSpec,
    /// Group/elementwise mixing β ∈ [0, 1].
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub options: CertificateOptions,
    /// Write the full landscape over the scan raster.
    #[serde(default = "default_raster")]
    pub raster: bool,
}

fn default_beta() -> f64 {
    1e-3
}

fn default_raster() -> bool {
    true
}

/// Where the ground truth comes from; the first populated source wins, in
/// the order `tsmi`, `measure`, inline `thetas`/`weights`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthSpec {
    /// `truth.json` from `sgb phantom`.
    pub tsmi: Option<PathBuf>,
    /// `measure.json` from `sgb demix`.
    pub measure: Option<PathBuf>,
    /// Inline spike locations (T1 ms, T2 ms)...
    pub thetas: Vec<(f64, f64)>,
    /// ...with one weight row per spike (spikes × voxels).
    pub weights: Vec<Vec<f64>>,
}

impl TruthSpec {
    fn build(&self) -> Result<GroundTruth> {
        if let Some(p) = &self.tsmi {
            let t: Tsmi = io::load_json(p)?;
            return GroundTruth::from_measure(&t.to_measure());
        }
        if let Some(p) = &self.measure {
            let m: SpikeMeasure = io::load_json(p)?;
            return GroundTruth::from_measure(&m);
        }
        if self.thetas.is_empty() {
            return Err(Error::InvalidParam(
                "truth needs one of `tsmi`, `measure`, or inline `thetas` + `weights`".into(),
            ));
        }
        if self.weights.len() != self.thetas.len() {
            return Err(Error::DimMismatch(format!(
                "{} spike locations but {} weight rows",
                self.thetas.len(),
                self.weights.len()
            )));
        }
        let v = self.weights[0].len();
        if self.weights.iter().any(|row| row.len() != v) {
            return Err(Error::DimMismatch("ragged weight rows".into()));
        }
        let thetas: Vec<Theta> = self
            .thetas
            .iter()
            .map(|&(t1, t2)| Theta::new(t1, t2))
            .collect::<Result<_>>()?;
        let w = DMatrix::from_fn(thetas.len(), v, |i, j| self.weights[i][j]);
        GroundTruth::new(thetas, w)
    }
}

pub fn run(config: Option<&Path>, out: &Path, _seed: Option<u64>) -> Result<()> {
    let cfg: CertificateConfig = shared::require_config(config, "certificate")?;
    shared::record_config(out, &cfg)?;

    let (model, _basis) = cfg.model.build()?;
    let truth = cfg.truth.build()?;
    let report = check_nondegeneracy(model.as_ref(), &truth, cfg.beta, &cfg.options)?;
    log::info!(
        "verdict: {:?} (max off-support level {:.6}, constraint residual {:.3e})",
        report.verdict,
        report.max_g_off_support,
        report.constraint_residual
    );
    for f in &report.failures {
        log::info!("clause failed: {f}");
    }
    io::save_json(&out.join("report.json"), &report)?;

    let mut files = BTreeMap::new();
    files.insert(
        "report.json".into(),
        doc(
            "verdict with its evidence: off-support maximum, per-spike levels, Hessian eigenvalues, failed clauses",
            &[],
        ),
    );
    if cfg.raster {
        let pc = solve_precertificate(model.as_ref(), &truth, cfg.beta)?;
        let grid = cfg.options.grid.build()?;
        let g = raster_g(&pc, model.as_ref(), grid.nodes());
        let rows: Vec<Vec<f64>> = grid
            .nodes()
            .iter()
            .zip(&g)
            .map(|(th, gi)| vec![th.t1(), th.t2(), *gi])
            .collect();
        io::write_csv(&out.join("heatmap.csv"), &["t1_ms", "t2_ms", "g"], &rows)?;
        files.insert(
            "heatmap.csv".into(),
            doc(
                "certificate landscape over the scan raster; levels above 1 away from the truth mean degeneracy",
                &[
                    ("t1_ms", "raster node T1, ms"),
                    ("t2_ms", "raster node T2, ms"),
                    ("g", "certificate level at the node"),
                ],
            ),
        );
    }
    shared::write_schema(out, "certificate", files)
}
