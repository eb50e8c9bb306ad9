//! File formats: binary matrix maps, JSON documents, CSV tables, and
//! flip-angle schedules.
//!
//! The map format is a single JSON header line — `rows`, `cols`,
//! `channels`, `dtype` (always `"f64le"`), and a semantic `tag` — followed
//! by the raw payload: `channels` blocks, each a row-major little-endian
//! `f64` matrix, `rows·cols·channels·8` bytes in total. Writing the same
//! data twice produces byte-identical files, so outputs can be diffed and
//! cached. JSON helpers exist for structured results (measures, reports,
//! configs), and [`read_schedule`] parses plain-text flip-angle lists (one
//! angle in degrees per line, `#` starts a comment).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const MAP_DTYPE: &str = "f64le";

pub(crate) fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::File {
        path: path.display().to_string(),
        source: e,
    })
}

pub(crate) fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::File {
        path: path.display().to_string(),
        source: e,
    })
}

/// Header line of a binary map file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapHeader {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub dtype: String,
    pub tag: String,
}

fn write_map_inner(path: &Path, channels: &[&DMatrix<f64>], tag: &str) -> Result<()> {
    let first = channels
        .first()
        .ok_or_else(|| Error::format("map", "no channels to write"))?;
    let (rows, cols) = (first.nrows(), first.ncols());
    for ch in channels {
        if ch.nrows() != rows || ch.ncols() != cols {
            return Err(Error::DimMismatch(format!(
                "map channels disagree: {}×{} vs {}×{}",
                rows,
                cols,
                ch.nrows(),
                ch.ncols()
            )));
        }
    }
    let mut w = BufWriter::new(create(path)?);
    let header = MapHeader {
        rows,
        cols,
        channels: channels.len(),
        dtype: MAP_DTYPE.into(),
        tag: tag.into(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for ch in channels {
        for r in 0..rows {
            for c in 0..cols {
                w.write_all(&ch[(r, c)].to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Write a stack of equally sized matrices as one multi-channel map file.
pub fn write_map(path: &Path, channels: &[DMatrix<f64>], tag: &str) -> Result<()> {
    let refs: Vec<&DMatrix<f64>> = channels.iter().collect();
    write_map_inner(path, &refs, tag)
}

/// Write a single matrix as a one-channel map file.
pub fn write_matrix(path: &Path, m: &DMatrix<f64>, tag: &str) -> Result<()> {
    write_map_inner(path, &[m], tag)
}

/// Read a map file, returning one matrix per channel and the header.
pub fn read_map(path: &Path) -> Result<(Vec<DMatrix<f64>>, MapHeader)> {
    let mut r = BufReader::new(open(path)?);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: MapHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| Error::format("map header", &e.to_string()))?;
    if header.dtype != MAP_DTYPE {
        return Err(Error::format(
            "map header",
            &format!("unsupported dtype {:?}", header.dtype),
        ));
    }
    let per_channel = header.rows * header.cols;
    let n = per_channel * header.channels;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != n * 8 {
        return Err(Error::format(
            "map payload",
            &format!(
                "expected {} bytes for {}×{}×{}, found {}",
                n * 8,
                header.rows,
                header.cols,
                header.channels,
                payload.len()
            ),
        ));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mats = values
        .chunks_exact(per_channel)
        .map(|chunk| DMatrix::from_row_slice(header.rows, header.cols, chunk))
        .collect();
    Ok((mats, header))
}

/// Read a single-channel map file written by [`write_matrix`].
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let (mut mats, header) = read_map(path)?;
    if header.channels != 1 {
        return Err(Error::format(
            "map header",
            &format!("expected 1 channel, found {}", header.channels),
        ));
    }
    Ok(mats.remove(0))
}

/// Serialize a value as pretty-printed JSON.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Deserialize a JSON file.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(open(path)?);
    Ok(serde_json::from_reader(r)?)
}

/// Write a CSV table. Floating-point cells use the shortest representation
/// that round-trips, so repeated runs produce identical bytes.
pub fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(create(path)?);
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        if row.len() != columns.len() {
            return Err(Error::DimMismatch(format!(
                "csv row has {} cells, header has {}",
                row.len(),
                columns.len()
            )));
        }
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a flip-angle schedule: one angle in degrees per line, blank lines
/// skipped, `#` starts a comment (full-line or trailing).
pub fn read_schedule(path: &Path) -> Result<Vec<f64>> {
    let r = BufReader::new(open(path)?);
    let mut angles = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let text = match line.find('#') {
            Some(pos) => &line[..pos],
            None => &line[..],
        };
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let angle: f64 = text.parse().map_err(|_| {
            Error::format(
                "schedule",
                &format!("line {}: expected an angle in degrees, found {:?}", idx + 1, text),
            )
        })?;
        angles.push(angle);
    }
    if angles.is_empty() {
        return Err(Error::format("schedule", "no angles found"));
    }
    Ok(angles)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::Theta;
    use crate::measure::SpikeMeasure;
    use nalgebra::DVector;

    #[test]
    fn matrix_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.map");
        let m = DMatrix::from_fn(7, 5, |r, c| ((r * 5 + c) as f64).sqrt() * 0.1 - 0.3);
        write_matrix(&path, &m, "test").unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(m.nrows(), back.nrows());
        assert_eq!(m.ncols(), back.ncols());
        for (a, b) in m.iter().zip(back.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // Writing again produces identical bytes.
        let path2 = dir.path().join("m2.map");
        write_matrix(&path2, &m, "test").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn payload_is_row_major() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.map");
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        write_matrix(&path, &m, "test").unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let start = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        let payload: Vec<f64> = bytes[start..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(payload, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let header: MapHeader =
            serde_json::from_slice(&bytes[..start - 1]).unwrap();
        assert_eq!((header.rows, header.cols, header.channels), (2, 3, 1));
        assert_eq!(header.dtype, "f64le");
        assert_eq!(header.tag, "test");
    }

    #[test]
    fn multi_channel_stack_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.map");
        let stack: Vec<DMatrix<f64>> = (0..3)
            .map(|k| DMatrix::from_fn(4, 6, |r, c| (k * 100 + r * 6 + c) as f64 * 0.25))
            .collect();
        write_map(&path, &stack, "weights").unwrap();
        let (back, header) = read_map(&path).unwrap();
        assert_eq!(header.channels, 3);
        assert_eq!(header.tag, "weights");
        for (a, b) in stack.iter().zip(back.iter()) {
            assert_eq!(a, b);
        }
        // A stack is not readable through the single-matrix interface.
        assert!(read_matrix(&path).is_err());
        // Mixed shapes are rejected when writing.
        let bad = vec![DMatrix::zeros(2, 2), DMatrix::zeros(3, 2)];
        assert!(write_map(&dir.path().join("bad.map"), &bad, "x").is_err());
    }

    #[test]
    fn matrix_reader_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.map");
        let m = DMatrix::from_element(3, 3, 1.5);
        write_matrix(&path, &m, "test").unwrap();
        // Truncate the payload.
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(read_matrix(&path).is_err());
        // Wrong dtype.
        let bad = path.with_extension("bad");
        std::fs::write(
            &bad,
            b"{\"rows\":0,\"cols\":0,\"channels\":1,\"dtype\":\"f32le\",\"tag\":\"x\"}\n",
        )
        .unwrap();
        assert!(read_matrix(&bad).is_err());
    }

    #[test]
    fn json_roundtrip_of_a_measure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("measure.json");
        let mut m = SpikeMeasure::empty(3);
        m.push(crate::measure::Spike {
            theta: Theta::new(800.0, 80.0).unwrap(),
            weights: DVector::from_vec(vec![0.5, 0.0, 1.0]),
        })
        .unwrap();
        save_json(&path, &m).unwrap();
        let back: SpikeMeasure = load_json(&path).unwrap();
        assert_eq!(back.n_voxels(), 3);
        assert_eq!(back.len(), 1);
        assert_eq!(back.spikes()[0].weights[2], 1.0);
    }

    #[test]
    fn schedule_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flips.txt");
        std::fs::write(&path, "# preparation\n10.0\n 25.5 # ramp\n\n90\n").unwrap();
        assert_eq!(read_schedule(&path).unwrap(), vec![10.0, 25.5, 90.0]);
        std::fs::write(&path, "10\noops\n").unwrap();
        let err = read_schedule(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        std::fs::write(&path, "# nothing\n").unwrap();
        assert!(read_schedule(&path).is_err());
    }

    #[test]
    fn csv_rows_match_header_width() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_csv(&path, &["a", "b"], &[vec![1.0, 2.5], vec![3.0, -0.125]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a,b\n1,2.5\n3,-0.125\n");
        assert!(write_csv(&path, &["a", "b"], &[vec![1.0]]).is_err());
    }
}
