//! Per-epoch training metrics and their CSV log.
//!
//! One row per layer per epoch:
//!
//! `phase,epoch,layer,lr,tau,seconds,hier_loss,con_loss,total_loss,train_acc,val_acc,val_sip_acc`
//!
//! `val_acc` and `val_sip_acc` are empty when no validation pass ran;
//! `val_sip_acc` repeats on every row of an epoch. Rows are only ever
//! appended.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Phase;
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str =
    "phase,epoch,layer,lr,tau,seconds,hier_loss,con_loss,total_loss,train_acc,val_acc,val_sip_acc";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerMetrics {
    pub hier_loss: f64,
    pub con_loss: f64,
    pub total_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub lr: f64,
    pub tau: f64,
    pub seconds: f64,
    pub layers: Vec<LayerMetrics>,
    /// Validation accuracy of each layer's own goodness argmax.
    pub val_layer_accuracy: Vec<f64>,
    pub val_sip_accuracy: Option<f64>,
}

fn phase_name(p: Phase) -> &'static str {
    match p {
        Phase::Pretrain => "pretrain",
        Phase::Train => "train",
    }
}

impl MetricsRecord {
    pub fn to_csv_rows(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for (l, m) in self.layers.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{l},{},{},{},{},{},{},{},{},{}\n",
                phase_name(self.phase),
                self.epoch,
                self.lr,
                self.tau,
                self.seconds,
                m.hier_loss,
                m.con_loss,
                m.total_loss,
                m.train_accuracy,
                opt(self.val_layer_accuracy.get(l).copied()),
                opt(self.val_sip_accuracy),
            ));
        }
        out
    }
}

/// Appends `record` to the CSV at `path`, writing the header first if the
/// file is new.
pub fn append_metrics(path: &Path, record: &MetricsRecord) -> Result<()> {
    let fresh = !path.exists();
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(METRICS_HEADER);
        text.push('\n');
    }
    text.push_str(&record.to_csv_rows());
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn parse_metrics(text: &str, origin: &Path) -> Result<Vec<MetricsRecord>> {
    let bad = |line: usize, msg: String| Error::Validation {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == METRICS_HEADER => {}
        _ => return Err(bad(1, "missing metrics header".into())),
    }
    let mut records: Vec<MetricsRecord> = Vec::new();
    for (i, line) in lines {
        let no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 12 {
            return Err(bad(no, format!("expected 12 fields, found {}", cells.len())));
        }
        let num = |j: usize| -> Result<f64> {
            cells[j]
                .parse::<f64>()
                .map_err(|_| bad(no, format!("field {j} is not a number: {:?}", cells[j])))
        };
        let opt = |j: usize| -> Result<Option<f64>> {
            if cells[j].is_empty() {
                Ok(None)
            } else {
                num(j).map(Some)
            }
        };
        let int = |j: usize| -> Result<usize> {
            cells[j]
                .parse::<usize>()
                .map_err(|_| bad(no, format!("field {j} is not an integer: {:?}", cells[j])))
        };
        let phase = match cells[0] {
            "pretrain" => Phase::Pretrain,
            "train" => Phase::Train,
            other => return Err(bad(no, format!("unknown phase {other:?}"))),
        };
        let (epoch, layer) = (int(1)?, int(2)?);
        let metrics = LayerMetrics {
            hier_loss: num(6)?,
            con_loss: num(7)?,
            total_loss: num(8)?,
            train_accuracy: num(9)?,
        };
        let same_epoch = records
            .last()
            .is_some_and(|r| r.phase == phase && r.epoch == epoch);
        if !same_epoch {
            if layer != 0 {
                return Err(bad(no, format!("epoch {epoch} does not start at layer 0")));
            }
            if let Some(prev) = records.last() {
                if prev.phase == phase && epoch < prev.epoch {
                    return Err(bad(no, format!("epoch {epoch} after epoch {}", prev.epoch)));
                }
            }
            records.push(MetricsRecord {
                phase,
                epoch,
                lr: num(3)?,
                tau: num(4)?,
                seconds: num(5)?,
                layers: Vec::new(),
                val_layer_accuracy: Vec::new(),
                val_sip_accuracy: opt(11)?,
            });
        }
        let rec = records.last_mut().expect("record pushed above");
        if layer != rec.layers.len() {
            return Err(bad(no, format!("layer {layer} out of order")));
        }
        rec.layers.push(metrics);
        if let Some(v) = opt(10)? {
            rec.val_layer_accuracy.push(v);
        }
    }
    Ok(records)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_metrics(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize) -> MetricsRecord {
        MetricsRecord {
            phase: Phase::Train,
            epoch,
            lr: 0.01,
            tau: 0.5,
            seconds: 1.25,
            layers: vec![
                LayerMetrics {
                    hier_loss: 0.5,
                    con_loss: 4.0,
                    total_loss: 4.5,
                    train_accuracy: 0.75,
                };
                2
            ],
            val_layer_accuracy: vec![0.5, 0.625],
            val_sip_accuracy: Some(0.7),
        }
    }

    #[test]
    fn append_then_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        append_metrics(&path, &rec(0)).unwrap();
        append_metrics(&path, &rec(1)).unwrap();
        let back = read_metrics(&path).unwrap();
        assert_eq!(back, vec![rec(0), rec(1)]);
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("phase,").count(), 1);
    }

    #[test]
    fn out_of_order_rows_are_rejected() {
        let text = format!("{METRICS_HEADER}\n{}{}", rec(1).to_csv_rows(), rec(0).to_csv_rows());
        assert!(parse_metrics(&text, Path::new("m")).is_err());
    }
}
