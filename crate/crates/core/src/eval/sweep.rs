use std::fmt::Display;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricReport};
use crate::ingest::{split_dataset_with, LabeledSequence, Split};

pub const DEFAULT_FRACTIONS: [f64; 5] = [1.0, 0.7, 0.5, 0.4, 0.3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub train_size: usize,
    pub mauc: Option<f64>,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

/// Retrains through `run` on stratified subsets of the training portion;
/// the temporal test hold-out is the same for every fraction. A failing
/// fraction is recorded and the sweep continues.
pub fn scarcity_sweep<E: Display>(
    seq: &LabeledSequence,
    fractions: &[f64],
    seed: u64,
    test_fraction: f64,
    mut run: impl FnMut(&Split) -> Result<MetricReport, E>,
) -> Result<Vec<SweepPoint>, EvalError> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(EvalError::Config(format!("fraction {f} outside (0, 1]")));
    }
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let split = split_dataset_with(seq, fraction, seed, test_fraction).map_err(|e| EvalError::Config(e.to_string()))?;
        let train_size = split.train.len();
        let point = match run(&split) {
            Ok(r) => SweepPoint {
                fraction,
                train_size,
                mauc: Some(r.mauc),
                report: Some(r),
                error: None,
            },
            Err(e) => {
                log::warn!("sweep fraction {fraction} failed: {e}");
                SweepPoint {
                    fraction,
                    train_size,
                    mauc: None,
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        };
        out.push(point);
    }
    Ok(out)
}

/// `fraction,train_size,mauc,error` rows in sweep order.
pub fn write_curve_csv(path: impl AsRef<Path>, points: &[SweepPoint]) -> Result<(), EvalError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| EvalError::Io(format!("{}: {e}", path.display()));
    w.write_record(["fraction", "train_size", "mauc", "error"]).map_err(err)?;
    for p in points {
        w.write_record([
            p.fraction.to_string(),
            p.train_size.to_string(),
            p.mauc.map(|m| m.to_string()).unwrap_or_default(),
            p.error.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth_dataset;

    #[test]
    fn one_point_per_fraction_and_errors_kept() {
        let d = synth_dataset(2, 40, 0).unwrap();
        let pts = scarcity_sweep(&d.sequence, &DEFAULT_FRACTIONS, 1, 0.2, |s: &Split| {
            if s.train.len() < 30 {
                Err("too small")
            } else {
                Ok(MetricReport {
                    per_class_auc: Default::default(),
                    excluded: vec![],
                    mauc: s.train.len() as f64,
                    top_k: Default::default(),
                    counts: Default::default(),
                    fingerprint: String::new(),
                })
            }
        })
        .unwrap();
        assert_eq!(pts.len(), 5);
        assert_eq!(pts[0].mauc, Some(64.0));
        assert!(pts[4].error.is_some());
        assert!(pts.windows(2).all(|w| w[0].train_size >= w[1].train_size));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        write_curve_csv(&path, &pts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("fraction,train_size,mauc,error"));
        assert!(scarcity_sweep(&d.sequence, &[0.0], 1, 0.2, |_: &Split| Err::<MetricReport, _>("x")).is_err());
    }
}
