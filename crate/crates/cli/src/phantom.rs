//! `sgb phantom`: ground-truth tissue maps plus simulated time-series
//! data.
//!
//! Writes the truth (JSON and per-compartment weight maps), the clean and
//! optionally noisy data matrices, and a per-compartment summary table.
//! Data simulation always runs the exact (untruncated) recursion.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sgb_core::phantom::{add_noise, gen_dirichlet, two_compartment_halves, DirichletPhantomConfig};
use sgb_core::surrogate::epg_dictionary;
use sgb_core::{io, Error, Result, Theta, Tsmi};

use crate::shared::{self, doc, SequenceSpec};

/// Spatial layout of the generated phantom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    /// Per-voxel Dirichlet mixtures of all compartments.
    Dirichlet,
    /// Two pure halves (requires exactly two compartments).
    Halves,
}

/// Configuration of `sgb phantom`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub kind: PhantomKind,
    pub nx: usize,
    pub ny: usize,
    /// Compartment relaxation pairs (T1 ms, T2 ms).
    pub compartments: Vec<(f64, f64)>,
    /// Dirichlet concentration; values below 1 favor nearly pure voxels.
    pub concentration: f64,
    /// With [`PhantomKind::Halves`], mix the (0, 0) corner voxel 50/50.
    pub mixed_corner: bool,
    pub seed: u64,
    /// Measurement SNR in dB; `null` keeps the data noiseless.
    pub snr_db: Option<f64>,
    /// Acquisition used to simulate the data.
    pub sequence: SequenceSpec,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            kind: PhantomKind::Dirichlet,
            nx: 20,
            ny: 20,
            compartments: vec![(784.0, 77.0), (1216.0, 96.0), (4083.0, 1394.0)],
            concentration: 0.5,
            mixed_corner: false,
            seed: 0,
            snr_db: None,
            sequence: SequenceSpec::default(),
        }
    }
}

/// Generate the ground truth and simulate the noiseless data matrix
/// (time points × voxels, unit-norm responses weighted by the truth).
pub fn simulate(cfg: &PhantomConfig) -> Result<(Tsmi, DMatrix<f64>)> {
    let thetas: Vec<Theta> = cfg
        .compartments
        .iter()
        .map(|&(t1, t2)| Theta::new(t1, t2))
        .collect::<Result<_>>()?;
    let truth = match cfg.kind {
        PhantomKind::Dirichlet => gen_dirichlet(&DirichletPhantomConfig {
            nx: cfg.nx,
            ny: cfg.ny,
            thetas,
            concentration: cfg.concentration,
            seed: cfg.seed,
        })?,
        PhantomKind::Halves => {
            if thetas.len() != 2 {
                return Err(Error::InvalidParam(format!(
                    "the halves phantom needs exactly 2 compartments, got {}",
                    thetas.len()
                )));
            }
            two_compartment_halves(cfg.nx, cfg.ny, thetas[0], thetas[1], cfg.mixed_corner)?
        }
    };
    let seq = cfg.sequence.build()?;
    let atoms = epg_dictionary(&seq, &truth.thetas)?;
    let clean = &atoms * &truth.weights;
    Ok((truth, clean))
}

pub fn run(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: PhantomConfig = shared::load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    shared::record_config(out, &cfg)?;

    let (truth, clean) = simulate(&cfg)?;
    let data = match cfg.snr_db {
        Some(snr) => add_noise(&clean, snr, cfg.seed),
        None => clean.clone(),
    };
    log::info!(
        "phantom: {}×{} voxels, {} compartments, {} time points{}",
        cfg.nx,
        cfg.ny,
        truth.thetas.len(),
        data.nrows(),
        match cfg.snr_db {
            Some(snr) => format!(", SNR {snr} dB"),
            None => ", noiseless".into(),
        }
    );

    io::save_json(&out.join("truth.json"), &truth)?;
    io::write_matrix(&out.join("data.map"), &data, "timeseries")?;
    if cfg.snr_db.is_some() {
        io::write_matrix(&out.join("clean.map"), &clean, "timeseries_clean")?;
    }
    let maps: Vec<DMatrix<f64>> = (0..truth.thetas.len())
        .map(|k| DMatrix::from_fn(cfg.ny, cfg.nx, |y, x| truth.weight_at(k, x, y)))
        .collect();
    io::write_map(&out.join("weights.map"), &maps, "weights")?;

    let rows: Vec<Vec<f64>> = truth
        .thetas
        .iter()
        .enumerate()
        .map(|(k, th)| {
            let w = truth.weights.row(k);
            vec![
                k as f64,
                th.t1(),
                th.t2(),
                w.sum() / w.len() as f64,
                w.max(),
            ]
        })
        .collect();
    io::write_csv(
        &out.join("compartments.csv"),
        &["index", "t1_ms", "t2_ms", "mean_weight", "max_weight"],
        &rows,
    )?;

    let mut files = BTreeMap::new();
    files.insert(
        "truth.json".into(),
        doc(
            "ground truth: raster size, compartment (T1, T2) pairs, and the compartments × voxels weight matrix",
            &[],
        ),
    );
    files.insert(
        "data.map".into(),
        doc(
            "simulated time series to demix (noisy when snr_db is set), rows = time points, columns = voxels",
            &[],
        ),
    );
    if cfg.snr_db.is_some() {
        files.insert(
            "clean.map".into(),
            doc("the same time series before noise was added", &[]),
        );
    }
    files.insert(
        "weights.map".into(),
        doc("per-compartment weight images, one ny×nx channel per compartment", &[]),
    );
    files.insert(
        "compartments.csv".into(),
        doc(
            "one row per compartment",
            &[
                ("index", "compartment index, matching weights.map channels"),
                ("t1_ms", "longitudinal relaxation time, ms"),
                ("t2_ms", "transverse relaxation time, ms"),
                ("mean_weight", "average weight over all voxels"),
                ("max_weight", "largest weight over all voxels"),
            ],
        ),
    );
    shared::write_schema(out, "phantom", files)
}
