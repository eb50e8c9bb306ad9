//! `sgb train-surrogate`: dictionary simulation, subspace fit, and MLP
//! training.
//!
//! Simulates the fingerprint dictionary on a log-spaced grid, fits the
//! dominant subspace, trains the surrogate on the compressed, renormalized
//! atoms, and saves the network with its compression basis embedded so one
//! artifact suffices for demixing raw data.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sgb_core::surrogate::{
    epg_dictionary, fit_subspace, normalize_columns, train_surrogate, TrainConfig,
};
use sgb_core::{io, GridSpec, Result};

use crate::shared::{self, doc, SequenceSpec};

/// Configuration of `sgb train-surrogate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSurrogateConfig {
    /// Sampling grid for the dictionary.
    pub grid: GridSpec,
    /// Acquisition simulated at each grid node.
    pub sequence: SequenceSpec,
    /// Output dimension after compression.
    pub subspace_dim: usize,
    pub train: TrainConfig,
}

impl Default for TrainSurrogateConfig {
    fn default() -> Self {
        TrainSurrogateConfig {
            grid: GridSpec::training(130),
            sequence: SequenceSpec {
                len: 1000,
                ..SequenceSpec::default()
            },
            subspace_dim: 10,
            train: TrainConfig::default(),
        }
    }
}

/// Metrics of one training run.
#[derive(Debug, Serialize, Deserialize)]
pub struct TrainRunReport {
    pub n_samples: usize,
    pub signal_len: usize,
    pub subspace_dim: usize,
    /// Fraction of dictionary energy the subspace keeps.
    pub subspace_energy_fraction: f64,
    pub train_nrmse: f64,
    pub val_nrmse: f64,
    pub test_nrmse: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

pub fn run(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: TrainSurrogateConfig = shared::load_config(config)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    shared::record_config(out, &cfg)?;

    let grid = cfg.grid.build()?;
    let seq = cfg.sequence.build()?;
    log::info!(
        "simulating {} fingerprints of length {}",
        grid.len(),
        seq.len()
    );
    let dict = epg_dictionary(&seq, grid.nodes())?;
    let sub = fit_subspace(&dict, cfg.subspace_dim)?;
    log::info!(
        "{}-dimensional subspace keeps {:.8} of the dictionary energy",
        sub.dim(),
        sub.energy_fraction
    );
    let mut targets = sub.compress(&dict);
    normalize_columns(&mut targets);

    let (net, report) = train_surrogate(grid.nodes(), &targets, &cfg.train)?;
    let net = net.with_subspace(sub.basis.clone())?;
    net.save(&out.join("surrogate.mlp"))?;
    log::info!(
        "NRMSE: train {:.4e}, val {:.4e}, test {:.4e}",
        report.train_nrmse,
        report.val_nrmse,
        report.test_nrmse
    );

    io::save_json(
        &out.join("report.json"),
        &TrainRunReport {
            n_samples: grid.len(),
            signal_len: seq.len(),
            subspace_dim: sub.dim(),
            subspace_energy_fraction: sub.energy_fraction,
            train_nrmse: report.train_nrmse,
            val_nrmse: report.val_nrmse,
            test_nrmse: report.test_nrmse,
            n_train: report.n_train,
            n_val: report.n_val,
            n_test: report.n_test,
        },
    )?;
    let trace: Vec<Vec<f64>> = report
        .val_trace
        .iter()
        .enumerate()
        .map(|(e, v)| vec![(e + 1) as f64, *v])
        .collect();
    io::write_csv(&out.join("val_trace.csv"), &["epoch", "val_nrmse"], &trace)?;
    let eigs: Vec<Vec<f64>> = sub
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, l)| vec![i as f64, *l])
        .collect();
    io::write_csv(&out.join("subspace.csv"), &["index", "eigenvalue"], &eigs)?;

    let mut files = BTreeMap::new();
    files.insert(
        "surrogate.mlp".into(),
        doc(
            "trained surrogate: one-line JSON header, then all coefficients and the compression basis as little-endian f64",
            &[],
        ),
    );
    files.insert(
        "report.json".into(),
        doc("sample counts, subspace energy, and train/val/test NRMSE", &[]),
    );
    files.insert(
        "val_trace.csv".into(),
        doc(
            "validation error after each epoch",
            &[
                ("epoch", "1-based epoch index"),
                ("val_nrmse", "validation NRMSE after the epoch"),
            ],
        ),
    );
    files.insert(
        "subspace.csv".into(),
        doc(
            "spectrum of the fitted subspace",
            &[
                ("index", "0-based eigenvalue index, descending magnitude"),
                ("eigenvalue", "eigenvalue of the dictionary Gram matrix"),
            ],
        ),
    );
    shared::write_schema(out, "train-surrogate", files)
}
