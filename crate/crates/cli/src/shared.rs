//! Pieces shared by the subcommands: configuration loading, sequence and
//! model specifications, data adaptation, and the generated output
//! documentation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sgb_core::{
    io, AnalyticExpo, EpgModel, Error, FingerprintModel, FispSequence, MlpSurrogate, Result,
};

/// Load the subcommand configuration, falling back to its defaults when no
/// file is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => io::load_json(p),
        None => Ok(T::default()),
    }
}

/// Load a configuration that has no sensible default.
pub fn require_config<T: DeserializeOwned>(path: Option<&Path>, command: &str) -> Result<T> {
    match path {
        Some(p) => io::load_json(p),
        None => Err(Error::InvalidParam(format!(
            "`{command}` needs --config <path>"
        ))),
    }
}

/// Write the resolved configuration into the output directory so every run
/// is self-describing and reproducible from its artifacts alone.
pub fn record_config<T: Serialize>(out: &Path, cfg: &T) -> Result<()> {
    io::save_json(&out.join("config.json"), cfg)
}

/// Acquisition description: a synthetic flip-angle ramp of a given length,
/// or an explicit schedule file (one angle in degrees per line).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SequenceSpec {
    /// Repetition count of the synthetic ramp; ignored when a schedule
    /// file is given.
    pub len: usize,
    pub schedule_file: Option<PathBuf>,
    pub tr_ms: f64,
    pub te_ms: f64,
    pub ti_ms: f64,
    /// EPG state cap for model evaluation; `null` keeps the default
    /// speed/accuracy trade-off. Dictionary and phantom simulation always
    /// run at the exact cap regardless of this setting.
    pub epg_order: Option<usize>,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        SequenceSpec {
            len: 400,
            schedule_file: None,
            tr_ms: 10.0,
            te_ms: 1.9,
            ti_ms: 18.0,
            epg_order: None,
        }
    }
}

impl SequenceSpec {
    pub fn build(&self) -> Result<FispSequence> {
        let seq = match &self.schedule_file {
            Some(p) => {
                let flips = io::read_schedule(p)?;
                FispSequence::new(&flips, self.tr_ms, self.te_ms, self.ti_ms)?
            }
            None => {
                let flips: Vec<f64> = FispSequence::synthetic(self.len)
                    .flip_rad
                    .iter()
                    .map(|a| a.to_degrees())
                    .collect();
                FispSequence::new(&flips, self.tr_ms, self.te_ms, self.ti_ms)?
            }
        };
        match self.epg_order {
            Some(k) => seq.with_epg_order(k),
            None => Ok(seq),
        }
    }
}

/// Which fingerprint model drives a computation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// Extended-phase-graph simulation; Jacobians by finite differences.
    Epg {
        #[serde(default)]
        sequence: SequenceSpec,
    },
    /// Closed-form inversion-recovery model with exact Jacobians, sampled
    /// uniformly every `dt_ms`.
    Analytic { len: usize, dt_ms: f64 },
    /// Trained MLP surrogate loaded from disk.
    Surrogate { path: PathBuf },
}

impl ModelSpec {
    /// Build the model. Surrogates also return their compression basis so
    /// raw time series can be projected into the model's output space.
    pub fn build(&self) -> Result<(Box<dyn FingerprintModel>, Option<DMatrix<f64>>)> {
        match self {
            ModelSpec::Epg { sequence } => {
                Ok((Box::new(EpgModel::new(sequence.build()?)), None))
            }
            ModelSpec::Analytic { len, dt_ms } => {
                if *len < 2 || !(*dt_ms > 0.0) {
                    return Err(Error::InvalidParam(format!(
                        "analytic model needs len ≥ 2 and dt_ms > 0, got len={len}, dt_ms={dt_ms}"
                    )));
                }
                Ok((Box::new(AnalyticExpo::uniform(*len, *dt_ms)), None))
            }
            ModelSpec::Surrogate { path } => {
                let net = MlpSurrogate::load(path)?;
                let basis = net.subspace.clone();
                Ok((Box::new(net), basis))
            }
        }
    }
}

/// Match `data` to a model's input space: returned unchanged when the row
/// count already fits, otherwise projected through the compression basis.
/// The flag reports whether a projection happened.
pub fn adapt_data(
    data: DMatrix<f64>,
    dim: usize,
    basis: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, bool)> {
    if data.nrows() == dim {
        return Ok((data, false));
    }
    if let Some(b) = basis {
        if b.nrows() == data.nrows() && b.ncols() == dim {
            return Ok((b.tr_mul(&data), true));
        }
    }
    Err(Error::DimMismatch(format!(
        "data has {} rows but the model expects {dim}, and no compatible compression basis is available",
        data.nrows()
    )))
}

/// One documented output file.
#[derive(Debug, Serialize)]
pub struct FileDoc {
    pub description: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<ColumnDoc>,
}

#[derive(Debug, Serialize)]
pub struct ColumnDoc {
    pub name: String,
    pub description: String,
}

/// Assemble a [`FileDoc`]; pass an empty column list for non-tabular files.
pub fn doc(description: &str, columns: &[(&str, &str)]) -> FileDoc {
    FileDoc {
        description: description.into(),
        columns: columns
            .iter()
            .map(|(n, d)| ColumnDoc {
                name: (*n).into(),
                description: (*d).into(),
            })
            .collect(),
    }
}

/// Write `schema.json`: what every file in the output directory contains,
/// column by column for the CSV tables.
pub fn write_schema(out: &Path, command: &str, files: BTreeMap<String, FileDoc>) -> Result<()> {
    #[derive(Serialize)]
    struct Schema<'a> {
        command: &'a str,
        files: BTreeMap<String, FileDoc>,
    }
    io::save_json(&out.join("schema.json"), &Schema { command, files })
}
