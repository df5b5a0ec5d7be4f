use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{summarize, ConfusionMatrix, EvalError, MetricsReport};

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub truth: String,
    pub prediction: String,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), EvalError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| EvalError::Record {
            line: 0,
            msg: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, EvalError> {
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Record {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

pub fn evaluate_predictions(records: &[PredictionRecord], classes: &[&str]) -> Result<MetricsReport, EvalError> {
    let truth: Vec<&str> = records.iter().map(|r| r.truth.as_str()).collect();
    let pred: Vec<&str> = records.iter().map(|r| r.prediction.as_str()).collect();
    summarize(&ConfusionMatrix::from_labels(&truth, &pred, classes)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_evaluate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.jsonl");
        let recs = vec![
            PredictionRecord {
                id: "a".into(),
                truth: "High".into(),
                prediction: "High".into(),
            },
            PredictionRecord {
                id: "b".into(),
                truth: "Low".into(),
                prediction: "High".into(),
            },
        ];
        write_predictions(&p, &recs).unwrap();
        let back = read_predictions(&p).unwrap();
        assert_eq!(back, recs);
        let r = evaluate_predictions(&back, &["High", "Low"]).unwrap();
        assert_eq!(r.accuracy, 0.5);
        fs::write(&p, "{\"id\":1}\n").unwrap();
        assert!(matches!(read_predictions(&p), Err(EvalError::Record { line: 1, .. })));
    }
}
