//! CSV and JSON writers for sweep records and reconstruction grids.
//!
//! Every CSV starts with one comment line `# schema: <name>/<version>`,
//! followed by a fixed header. Readers refuse a different schema line.
//! Files are written to a temporary sibling and renamed into place.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SWEEP_SCHEMA: &str = "krsketch-sweep/1";
pub const EIT_SCHEMA: &str = "krsketch-eit/1";
pub const GRID_SCHEMA: &str = "krsketch-grid/1";
pub const SUMMARY_SCHEMA: &str = "krsketch-summary/1";

pub fn schema_line(schema: &str) -> String {
    format!("# schema: {schema}")
}

/// Serializes records as CSV, preceded by the schema comment line.
pub fn csv_bytes<R: Serialize>(schema: &str, records: &[R]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "{}", schema_line(schema))?;
    {
        let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(&mut out);
        for rec in records {
            w.serialize(rec)?;
        }
        w.flush()?;
    }
    Ok(out)
}

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_csv<R: Serialize>(path: &Path, schema: &str, records: &[R]) -> Result<()> {
    atomic_write(path, &csv_bytes(schema, records)?)
}

/// Reads records from a CSV written by [`write_csv`], checking the schema.
pub fn read_csv<R: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<R>> {
    let mut reader = BufReader::new(fs::File::open(path)?);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let found = first.trim_end();
    if found != schema_line(schema) {
        return Err(Error::InvalidArgument(format!(
            "schema mismatch in {}: expected `{}`, found `{found}`",
            path.display(),
            schema_line(schema)
        )));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// Pretty JSON with a trailing newline.
pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// One cell of a reconstructed (or true) conductivity field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub cell_i: usize,
    pub cell_j: usize,
    pub sigma_hat: f64,
}

pub const GRID_CSV_HEADER: &str = "cell_i,cell_j,sigma_hat";

/// Flattens an `nx × nx` field stored with index `i + nx·j` (i along x).
pub fn grid_cells(nx: usize, values: &[f64]) -> Result<Vec<GridCell>> {
    crate::error::check_dim("grid field", nx * nx, values.len())?;
    Ok((0..nx)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .map(|(i, j)| GridCell {
            cell_i: i,
            cell_j: j,
            sigma_hat: values[i + nx * j],
        })
        .collect())
}

pub fn write_grid_csv(path: &Path, nx: usize, values: &[f64]) -> Result<()> {
    write_csv(path, GRID_SCHEMA, &grid_cells(nx, values)?)
}

/// JSON summary of a sweep: metadata plus the per-point medians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary<M> {
    pub schema: String,
    pub kind: String,
    pub master_seed: u64,
    pub trials: usize,
    pub medians: Vec<M>,
}

impl<M> Summary<M> {
    pub fn new(kind: &str, master_seed: u64, trials: usize, medians: Vec<M>) -> Self {
        Self {
            schema: SUMMARY_SCHEMA.to_string(),
            kind: kind.to_string(),
            master_seed,
            trials,
            medians,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::Strategy;
    use crate::synthbench::{SweepRecord, SWEEP_CSV_HEADER};

    fn record(strategy: Strategy, r1: Option<usize>) -> SweepRecord {
        SweepRecord {
            strategy,
            r: 256,
            r1,
            r2: r1,
            n1: 100,
            n2: 100,
            p: 10,
            trial: 3,
            rel_error: 0.012345678901234567,
            wall_time_ms: 0.0,
        }
    }

    #[test]
    fn sweep_csv_layout() {
        let bytes = csv_bytes(SWEEP_SCHEMA, &[record(Strategy::Case1, Some(16)), record(Strategy::DenseGaussian, None)]).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# schema: krsketch-sweep/1");
        assert_eq!(lines[1], SWEEP_CSV_HEADER);
        assert_eq!(lines[2], "case1,256,16,16,100,100,10,3,0.012345678901234567,0.0");
        assert_eq!(lines[3], "dense-gaussian,256,,,100,100,10,3,0.012345678901234567,0.0");
    }

    #[test]
    fn round_trip_and_schema_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        let recs = vec![record(Strategy::Case2, None), record(Strategy::Case1, Some(16))];
        write_csv(&path, SWEEP_SCHEMA, &recs).unwrap();
        let back: Vec<SweepRecord> = read_csv(&path, SWEEP_SCHEMA).unwrap();
        assert_eq!(back, recs);
        assert!(read_csv::<SweepRecord>(&path, "krsketch-sweep/2").is_err());
    }

    #[test]
    fn grid_layout() {
        let cells = grid_cells(2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1], GridCell { cell_i: 1, cell_j: 0, sigma_hat: 2.0 });
        assert_eq!(cells[2], GridCell { cell_i: 0, cell_j: 1, sigma_hat: 3.0 });
        assert!(grid_cells(3, &[1.0]).is_err());
        let text = String::from_utf8(csv_bytes(GRID_SCHEMA, &cells).unwrap()).unwrap();
        assert_eq!(text.lines().nth(1), Some(GRID_CSV_HEADER));
    }

    #[test]
    fn json_summary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.json");
        write_json(&path, &Summary::new("sweep_r", 7, 10, vec![1.5f64])).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(v["schema"], SUMMARY_SCHEMA);
        assert_eq!(v["medians"][0], 1.5);
    }
}
