//! `sgb demix`: run the sparse-group solver on one data set, or on a
//! Monte-Carlo study of simulated phantoms.
//!
//! Single-run mode reads a data matrix (projecting it through the
//! surrogate's compression basis when the dimensions call for it), solves,
//! and writes the recovered measure, maps, objective trace, and — when
//! ground truth is supplied — error metrics. Study mode simulates a
//! phantom per (SNR, seed) pair, demixes each, and writes per-run and
//! per-SNR summary tables. Study workers run in parallel; results are
//! merged in (SNR, seed) order, so outputs do not depend on scheduling.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sgb_core::phantom::{add_noise, evaluate};
use sgb_core::sfw::solve_sgb;
use sgb_core::{io, Error, FingerprintModel, Result, SgbConfig, StopReason, Tsmi};

use crate::phantom::{self, PhantomConfig};
use crate::shared::{self, doc, ModelSpec};

/// Configuration of `sgb demix`. Exactly one of `input` and `study` must
/// be present.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DemixConfig {
    /// Model the solver works in.
    pub model: ModelSpec,
    /// Single-run mode: an existing data matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<InputSpec>,
    /// Study mode: phantoms simulated on the fly over SNRs × seeds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySpec>,
    #[serde(default)]
    pub solver: SgbConfig,
}

/// A data matrix to demix, with optional spatial layout and ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InputSpec {
    /// Single-channel map file; rows = signal dimension, columns = voxels.
    pub data: PathBuf,
    /// Raster size (nx, ny); required for map outputs and metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raster: Option<(usize, usize)>,
    /// `truth.json` from `sgb phantom`, enabling error metrics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<PathBuf>,
}

/// Monte-Carlo study: the base phantom is re-generated for every (SNR,
/// seed) pair, overriding its own `seed` and `snr_db` fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct StudySpec {
    pub phantom: PhantomConfig,
    pub seeds: Vec<u64>,
    /// SNRs in dB; a `null` entry runs noiseless.
    pub snrs_db: Vec<Option<f64>>,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            phantom: PhantomConfig::default(),
            seeds: vec![0],
            snrs_db: vec![Some(30.0)],
        }
    }
}

/// Solver outcome of a single run.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub n_spikes: usize,
    pub stop: StopReason,
    pub certified: bool,
    pub outer_iters: usize,
    pub final_score: f64,
    pub score_threshold: f64,
    pub objective_first: f64,
    pub objective_final: f64,
    /// Whether the input was projected through the compression basis.
    pub compressed_input: bool,
}

pub fn run(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: DemixConfig = shared::require_config(config, "demix")?;
    if let Some(s) = seed {
        if let Some(study) = cfg.study.as_mut() {
            study.phantom.seed = s;
        }
    }
    shared::record_config(out, &cfg)?;
    let (model, basis) = cfg.model.build()?;
    match (&cfg.input, &cfg.study) {
        (Some(input), None) => run_single(model.as_ref(), basis.as_ref(), input, &cfg.solver, out),
        (None, Some(study)) => run_study(model.as_ref(), basis.as_ref(), study, &cfg.solver, out),
        _ => Err(Error::InvalidParam(
            "demix needs exactly one of `input` or `study`".into(),
        )),
    }
}

fn spike_rows(measure: &sgb_core::SpikeMeasure) -> Vec<Vec<f64>> {
    measure
        .spikes()
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let v = s.weights.len() as f64;
            vec![
                k as f64,
                s.theta.t1(),
                s.theta.t2(),
                s.weights.norm(),
                s.weights.sum() / v,
                s.weights.max(),
            ]
        })
        .collect()
}

const SPIKE_COLUMNS: [&str; 6] = [
    "index",
    "t1_ms",
    "t2_ms",
    "weight_l2",
    "mean_weight",
    "max_weight",
];

const SPIKE_COLUMN_DOCS: [(&str, &str); 6] = [
    ("index", "spike index, matching weights.map channels"),
    ("t1_ms", "recovered longitudinal relaxation time, ms"),
    ("t2_ms", "recovered transverse relaxation time, ms"),
    ("weight_l2", "ℓ2 norm of the spike's weight row"),
    ("mean_weight", "average weight over all voxels"),
    ("max_weight", "largest weight over all voxels"),
];

fn run_single(
    model: &dyn FingerprintModel,
    basis: Option<&DMatrix<f64>>,
    input: &InputSpec,
    solver: &SgbConfig,
    out: &Path,
) -> Result<()> {
    let raw = io::read_matrix(&input.data)?;
    let (x, compressed) = shared::adapt_data(raw, model.dim(), basis)?;
    if compressed {
        log::info!(
            "projected the data into the model's {}-dimensional output space",
            model.dim()
        );
    }
    let res = solve_sgb(model, &x, solver)?;
    log::info!(
        "{} spikes, {:?} after {} outer iterations (score {:.3e} vs threshold {:.3e})",
        res.measure.len(),
        res.stop,
        res.outer_iters,
        res.final_score,
        res.score_threshold
    );

    io::save_json(&out.join("measure.json"), &res.measure)?;
    io::save_json(
        &out.join("result.json"),
        &RunReport {
            n_spikes: res.measure.len(),
            stop: res.stop,
            certified: res.certified,
            outer_iters: res.outer_iters,
            final_score: res.final_score,
            score_threshold: res.score_threshold,
            objective_first: *res.objective_trace.first().unwrap_or(&f64::NAN),
            objective_final: *res.objective_trace.last().unwrap_or(&f64::NAN),
            compressed_input: compressed,
        },
    )?;
    let trace: Vec<Vec<f64>> = res
        .objective_trace
        .iter()
        .enumerate()
        .map(|(i, o)| vec![i as f64, *o])
        .collect();
    io::write_csv(&out.join("trace.csv"), &["iteration", "objective"], &trace)?;
    io::write_csv(
        &out.join("compartments.csv"),
        &SPIKE_COLUMNS,
        &spike_rows(&res.measure),
    )?;

    let mut files = BTreeMap::new();
    files.insert(
        "measure.json".into(),
        doc("the recovered measure: spike locations with their weight rows", &[]),
    );
    files.insert(
        "result.json".into(),
        doc("solver outcome: spike count, stop reason, certification, objective", &[]),
    );
    files.insert(
        "trace.csv".into(),
        doc(
            "objective after each outer iteration",
            &[
                ("iteration", "0 = empty starting measure"),
                ("objective", "data fit plus regularizer"),
            ],
        ),
    );
    files.insert(
        "compartments.csv".into(),
        doc("one row per recovered spike", &SPIKE_COLUMN_DOCS),
    );

    if let Some((nx, ny)) = input.raster {
        if nx * ny != x.ncols() {
            return Err(Error::DimMismatch(format!(
                "raster {nx}×{ny} does not cover {} voxels",
                x.ncols()
            )));
        }
        let est = Tsmi::from_measure(&res.measure, nx, ny)?;
        io::save_json(&out.join("tsmi.json"), &est)?;
        files.insert(
            "tsmi.json".into(),
            doc("the recovered measure arranged on the raster", &[]),
        );
        if est.thetas.len() > 0 {
            let maps: Vec<DMatrix<f64>> = (0..est.thetas.len())
                .map(|k| DMatrix::from_fn(ny, nx, |y, xx| est.weight_at(k, xx, y)))
                .collect();
            io::write_map(&out.join("weights.map"), &maps, "weights")?;
            files.insert(
                "weights.map".into(),
                doc("recovered weight images, one ny×nx channel per spike", &[]),
            );
        }
        if let Some(tp) = &input.truth {
            let truth: Tsmi = io::load_json(tp)?;
            let metrics = evaluate(&est, &truth)?;
            log::info!(
                "joint T1/T2 error {:.3} %, mean PSNR {:.2} dB",
                metrics.mape_percent,
                metrics.mean_psnr_db
            );
            io::save_json(&out.join("metrics.json"), &metrics)?;
            files.insert(
                "metrics.json".into(),
                doc("errors against the ground truth: matching, MAPE, PSNR, SSIM", &[]),
            );
        }
    } else if input.truth.is_some() {
        return Err(Error::InvalidParam(
            "metrics against ground truth need `raster` so the estimate can be arranged spatially"
                .into(),
        ));
    }
    shared::write_schema(out, "demix", files)
}

/// Flat record of one study run.
#[derive(Debug, Serialize, Deserialize)]
struct StudyRow {
    snr_db: Option<f64>,
    seed: u64,
    n_spikes: usize,
    certified: bool,
    mape_percent: f64,
    mean_psnr_db: f64,
    mean_ssim: f64,
}

/// Aggregate over the seeds of one SNR level.
#[derive(Debug, Serialize, Deserialize)]
struct SnrSummary {
    snr_db: Option<f64>,
    n_runs: usize,
    mean_mape_percent: f64,
    max_mape_percent: f64,
    mean_psnr_db: f64,
    mean_ssim: f64,
    certified_fraction: f64,
}

fn run_study(
    model: &dyn FingerprintModel,
    basis: Option<&DMatrix<f64>>,
    study: &StudySpec,
    solver: &SgbConfig,
    out: &Path,
) -> Result<()> {
    if study.seeds.is_empty() || study.snrs_db.is_empty() {
        return Err(Error::InvalidParam(
            "study needs at least one seed and one SNR entry".into(),
        ));
    }
    let runs: Vec<(Option<f64>, u64)> = study
        .snrs_db
        .iter()
        .flat_map(|&snr| study.seeds.iter().map(move |&s| (snr, s)))
        .collect();
    log::info!(
        "study: {} runs ({} SNR levels × {} seeds)",
        runs.len(),
        study.snrs_db.len(),
        study.seeds.len()
    );
    let rows: Vec<StudyRow> = runs
        .par_iter()
        .map(|&(snr, run_seed)| -> Result<StudyRow> {
            let mut pc = study.phantom.clone();
            pc.seed = run_seed;
            pc.snr_db = None; // noise is applied here, per run
            let (truth, clean) = phantom::simulate(&pc)?;
            let data = match snr {
                Some(db) => add_noise(&clean, db, run_seed),
                None => clean,
            };
            let (x, _) = shared::adapt_data(data, model.dim(), basis)?;
            let res = solve_sgb(model, &x, solver)?;
            let est = Tsmi::from_measure(&res.measure, pc.nx, pc.ny)?;
            let metrics = evaluate(&est, &truth)?;
            Ok(StudyRow {
                snr_db: snr,
                seed: run_seed,
                n_spikes: res.measure.len(),
                certified: res.certified,
                mape_percent: metrics.mape_percent,
                mean_psnr_db: metrics.mean_psnr_db,
                mean_ssim: metrics.mean_ssim,
            })
        })
        .collect::<Result<_>>()?;

    // A missing SNR (noiseless) is written as +inf in the CSV tables.
    let snr_cell = |s: Option<f64>| s.unwrap_or(f64::INFINITY);
    let csv_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            vec![
                snr_cell(r.snr_db),
                r.seed as f64,
                r.n_spikes as f64,
                r.certified as u8 as f64,
                r.mape_percent,
                r.mean_psnr_db,
                r.mean_ssim,
            ]
        })
        .collect();
    io::write_csv(
        &out.join("runs.csv"),
        &[
            "snr_db",
            "seed",
            "n_spikes",
            "certified",
            "mape_percent",
            "mean_psnr_db",
            "mean_ssim",
        ],
        &csv_rows,
    )?;

    let summaries: Vec<SnrSummary> = study
        .snrs_db
        .iter()
        .map(|&snr| {
            let group: Vec<&StudyRow> = rows.iter().filter(|r| r.snr_db == snr).collect();
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&StudyRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            SnrSummary {
                snr_db: snr,
                n_runs: group.len(),
                mean_mape_percent: mean(&|r| r.mape_percent),
                max_mape_percent: group
                    .iter()
                    .map(|r| r.mape_percent)
                    .fold(f64::NEG_INFINITY, f64::max),
                mean_psnr_db: mean(&|r| r.mean_psnr_db),
                mean_ssim: mean(&|r| r.mean_ssim),
                certified_fraction: mean(&|r| r.certified as u8 as f64),
            }
        })
        .collect();
    for s in &summaries {
        log::info!(
            "SNR {}: mean joint T1/T2 error {:.3} % over {} runs",
            s.snr_db.map_or("inf".into(), |v| v.to_string()),
            s.mean_mape_percent,
            s.n_runs
        );
    }
    let summary_rows: Vec<Vec<f64>> = summaries
        .iter()
        .map(|s| {
            vec![
                snr_cell(s.snr_db),
                s.n_runs as f64,
                s.mean_mape_percent,
                s.max_mape_percent,
                s.mean_psnr_db,
                s.mean_ssim,
                s.certified_fraction,
            ]
        })
        .collect();
    io::write_csv(
        &out.join("summary.csv"),
        &[
            "snr_db",
            "n_runs",
            "mean_mape_percent",
            "max_mape_percent",
            "mean_psnr_db",
            "mean_ssim",
            "certified_fraction",
        ],
        &summary_rows,
    )?;
    io::save_json(&out.join("summary.json"), &summaries)?;

    let mut files = BTreeMap::new();
    files.insert(
        "runs.csv".into(),
        doc(
            "one row per (SNR, seed) run; snr_db = inf means noiseless",
            &[
                ("snr_db", "measurement SNR in dB (inf = noiseless)"),
                ("seed", "phantom and noise seed"),
                ("n_spikes", "recovered spike count"),
                ("certified", "1 when the optimality scan passed"),
                ("mape_percent", "joint T1/T2 mean absolute percentage error"),
                ("mean_psnr_db", "mean weight-map PSNR over compartments"),
                ("mean_ssim", "mean weight-map SSIM over compartments"),
            ],
        ),
    );
    files.insert(
        "summary.csv".into(),
        doc(
            "one row per SNR level, aggregated over seeds",
            &[
                ("snr_db", "measurement SNR in dB (inf = noiseless)"),
                ("n_runs", "number of seeds at this level"),
                ("mean_mape_percent", "mean of mape_percent over seeds"),
                ("max_mape_percent", "worst mape_percent over seeds"),
                ("mean_psnr_db", "mean of mean_psnr_db over seeds"),
                ("mean_ssim", "mean of mean_ssim over seeds"),
                ("certified_fraction", "fraction of certified runs"),
            ],
        ),
    );
    files.insert(
        "summary.json".into(),
        doc("the same per-SNR aggregates as summary.csv", &[]),
    );
    shared::write_schema(out, "demix", files)
}
