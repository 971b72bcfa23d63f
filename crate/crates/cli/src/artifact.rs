//! JSON model artifact: the learned transform, normalization and training echo.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use lvd_core::{Matrix, MetricModel, NormalizationStats, TrainConfig, TrainSummary};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformDoc {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationDoc {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub kept_dims: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub k: usize,
    pub smooth: bool,
    pub seed: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_batches: usize,
    pub patience: usize,
    pub neighbor_cap: usize,
    pub neighbor_sample: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub best_batch_loss: f64,
    pub batches_run: usize,
    pub reverted_to_init: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub transform: TransformDoc,
    pub normalization: NormalizationDoc,
    pub config: ConfigEcho,
    pub summary: SummaryDoc,
}

impl ModelArtifact {
    pub fn new(model: &MetricModel, config: &TrainConfig, summary: &TrainSummary) -> Self {
        let a = model.transform();
        let norm = model.norm();
        Self {
            format_version: FORMAT_VERSION,
            transform: TransformDoc {
                rows: a.rows(),
                cols: a.cols(),
                data: a.as_slice().to_vec(),
            },
            normalization: NormalizationDoc {
                means: norm.means().to_vec(),
                stds: norm.stds().to_vec(),
                kept_dims: norm.kept_dims().to_vec(),
            },
            config: ConfigEcho {
                k: summary.rank,
                smooth: config.smooth,
                seed: config.seed,
                learning_rate: config.learning_rate,
                batch_size: config.batch_size,
                max_batches: config.max_batches,
                patience: config.patience,
                neighbor_cap: config.neighbor_cap,
                neighbor_sample: config.neighbor_sample,
            },
            summary: SummaryDoc {
                initial_loss: summary.initial_loss,
                final_loss: summary.final_loss,
                best_batch_loss: summary.best_batch_loss,
                batches_run: summary.batches_run,
                reverted_to_init: summary.reverted_to_init,
            },
        }
    }

    /// Checks the version and shapes and rebuilds the model.
    pub fn to_model(&self) -> std::result::Result<MetricModel, String> {
        if self.format_version != FORMAT_VERSION {
            return Err(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        let t = &self.transform;
        let kept = self.normalization.kept_dims.len();
        if t.cols != kept {
            return Err(format!(
                "transform has {} columns but {kept} kept dimensions",
                t.cols
            ));
        }
        if t.rows > t.cols {
            return Err(format!(
                "rank k = {} exceeds kept dimension {}",
                t.rows, t.cols
            ));
        }
        if self.config.k != t.rows {
            return Err(format!(
                "config k = {} but transform has {} rows",
                self.config.k, t.rows
            ));
        }
        let a =
            Matrix::from_row_major(t.rows, t.cols, t.data.clone()).map_err(|e| e.to_string())?;
        let n = &self.normalization;
        let norm =
            NormalizationStats::from_parts(n.means.clone(), n.stds.clone(), n.kept_dims.clone())
                .map_err(|e| e.to_string())?;
        MetricModel::new(a, norm).map_err(|e| e.to_string())
    }
}

pub fn save_model(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, artifact).map_err(|e| CliError::data_in(path, e))?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

/// Loads and validates an artifact.
pub fn load_model(path: &Path) -> Result<(ModelArtifact, MetricModel)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let artifact: ModelArtifact =
        serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::data_in(path, e))?;
    let model = artifact
        .to_model()
        .map_err(|m| CliError::data_in(path, m))?;
    Ok((artifact, model))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (MetricModel, TrainConfig, TrainSummary) {
        let xs: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let t = f64::from(i) / 7.0;
                vec![t.sin(), 5.0, t.cos() * 3.0]
            })
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] - x[2]).collect();
        let cfg = TrainConfig {
            rank: 2,
            max_batches: 5,
            batch_size: 8,
            seed: 4,
            ..TrainConfig::default()
        };
        let (model, summary) = lvd_core::train::train_metric(&xs, &ys, &cfg).unwrap();
        (model, cfg, summary)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (model, cfg, summary) = sample();
        // Dimension 1 is constant and dropped.
        assert_eq!(model.norm().kept_dims(), &[0, 2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let art = ModelArtifact::new(&model, &cfg, &summary);
        save_model(&art, &path).unwrap();
        let (back_art, back) = load_model(&path).unwrap();
        assert_eq!(back_art, art);
        let bits = |m: &MetricModel| {
            m.transform()
                .as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&back), bits(&model));
        assert_eq!(back.norm(), model.norm());
    }

    #[test]
    fn truncated_file_is_a_parse_error() {
        let (model, cfg, summary) = sample();
        let text = serde_json::to_string(&ModelArtifact::new(&model, &cfg, &summary)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        let err = load_model(&path).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("EOF"), "{err}");
    }

    #[test]
    fn validation() {
        let (model, cfg, summary) = sample();
        let good = ModelArtifact::new(&model, &cfg, &summary);

        let mut a = good.clone();
        a.format_version = 2;
        assert!(a.to_model().unwrap_err().contains("format_version"));

        let mut a = good.clone();
        a.transform = TransformDoc {
            rows: 3,
            cols: 2,
            data: vec![0.0; 6],
        };
        a.config.k = 3;
        assert!(a.to_model().unwrap_err().contains("exceeds"));

        let mut a = good.clone();
        a.normalization.kept_dims = vec![0, 1, 2];
        assert!(a.to_model().unwrap_err().contains("kept dimensions"));

        let mut a = good;
        a.transform.data.pop();
        assert!(a.to_model().is_err());
    }
}
