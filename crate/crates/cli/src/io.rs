//! CSV ingestion and emission, and model checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use agmmn::copulas::pseudo_obs;
use agmmn::nn::{MlpArchitecture, MlpModel};
use agmmn::trainer::EpochRecord;
use agmmn::Matrix;
use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

/// Reads a headed CSV of decimal values into a matrix.
///
/// If any value lies outside (0, 1) the columns are replaced by their
/// pseudo-observations and a warning is logged. Returns the matrix and whether
/// the rank transform was applied.
pub fn ingest_csv(path: &Path) -> Result<(Matrix, bool)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let d = reader.headers().context("reading CSV header")?.len();
    ensure!(d > 0, "{}: missing header row", path.display());
    let mut values = Vec::new();
    let mut n = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed row {}", path.display(), i + 2))?;
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().with_context(|| {
                format!(
                    "{}: row {}, column {}: '{cell}' is not a number",
                    path.display(),
                    i + 2,
                    j + 1
                )
            })?;
            if !v.is_finite() {
                bail!("{}: row {}, column {}: non-finite value", path.display(), i + 2, j + 1);
            }
            values.push(v);
        }
        n += 1;
    }
    ensure!(n >= 2, "{}: need at least 2 data rows, found {n}", path.display());
    let m = Matrix::from_shape_vec((n, d), values).expect("rectangular by construction");
    if m.iter().any(|&v| v <= 0.0 || v >= 1.0) {
        log::warn!(
            "{}: values outside (0, 1); using pseudo-observations of the columns",
            path.display()
        );
        Ok((pseudo_obs(m.view()), true))
    } else {
        Ok((m, false))
    }
}

/// Writes `m` with header `u1, ..., ud`.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record((1..=m.ncols()).map(|j| format!("u{j}")))?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_loss_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record([
        "epoch",
        "train_loss",
        "val_loss",
        "n_krn",
        "learning_rate",
        "patience",
        "plateau",
        "updated",
        "stopped",
    ])?;
    for r in records {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.n_krn.to_string(),
            r.learning_rate.to_string(),
            r.patience.to_string(),
            r.plateau.to_string(),
            r.updated.to_string(),
            r.stopped.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub epochs: u32,
    pub stop_reason: String,
    pub final_bandwidths: Vec<f64>,
    pub min_val_loss: f64,
    pub seeds: BTreeMap<String, u64>,
}

/// Versioned text checkpoint of a trained generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub architecture: MlpArchitecture,
    /// Per layer: the weight matrix row-major, then the bias.
    pub parameters: Vec<f64>,
    pub metadata: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(model: &MlpModel, metadata: CheckpointMeta) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            architecture: model.architecture().clone(),
            parameters: model.to_flat(),
            metadata,
        }
    }

    pub fn model(&self) -> Result<MlpModel> {
        Ok(MlpModel::from_flat(self.architecture.clone(), &self.parameters)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).context("parsing checkpoint")?;
        let version = value.get("format_version").and_then(serde_json::Value::as_u64);
        ensure!(
            version == Some(u64::from(CHECKPOINT_VERSION)),
            "unsupported checkpoint format_version {version:?} (expected {CHECKPOINT_VERSION})"
        );
        let ck: Checkpoint = serde_json::from_value(value).context("decoding checkpoint")?;
        ensure!(
            ck.parameters.len() == ck.architecture.num_params(),
            "checkpoint has {} parameters, architecture needs {}",
            ck.parameters.len(),
            ck.architecture.num_params()
        );
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn csv_passthrough_and_rank_transform() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "x,y\n0.1,0.2\n0.3,0.4\n0.5,0.6\n");
        let (m, ranked) = ingest_csv(&p).unwrap();
        assert!(!ranked);
        assert_eq!(m, ndarray::array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]]);
        let p = write(&dir, "b.csv", "x\n3.1\n-0.2\n0.7\n");
        let (m, ranked) = ingest_csv(&p).unwrap();
        assert!(ranked);
        assert_eq!(m, ndarray::array![[0.75], [0.25], [0.5]]);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in [
            ("empty.csv", ""),
            ("ragged.csv", "x,y\n0.1,0.2\n0.3\n"),
            ("text.csv", "x,y\n0.1,abc\n0.3,0.4\n"),
            ("short.csv", "x,y\n0.1,0.2\n"),
        ] {
            let p = write(&dir, name, body);
            assert!(ingest_csv(&p).is_err(), "{name}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let arch = MlpArchitecture::new(3, vec![5], 2).unwrap();
        let model = MlpModel::init(arch, 4).unwrap();
        let meta = CheckpointMeta {
            epochs: 3,
            stop_reason: "max-epochs".into(),
            final_bandwidths: vec![0.1, 1.0 / 3.0],
            min_val_loss: 0.123_456_789_012_345_67,
            seeds: BTreeMap::from([("init".to_string(), u64::MAX)]),
        };
        let ck = Checkpoint::new(&model, meta);
        let text = ck.to_json();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back.to_json(), text);
        assert_eq!(back.model().unwrap(), model);
        let bad = text.replace("\"format_version\": 1", "\"format_version\": 9");
        assert!(Checkpoint::from_json(&bad).is_err());
    }
}
