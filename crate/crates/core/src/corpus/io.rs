use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Document};

/// One line of a dataset file. Absent labels are empty strings.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    summary: String,
    priority: String,
    severity: String,
    #[serde(rename = "type")]
    kind: String,
}

fn opt(s: String) -> Option<String> {
    (!s.is_empty()).then_some(s)
}

/// Writes one JSON record per line.
pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for d in &corpus.documents {
        let rec = Record {
            id: d.id.clone(),
            summary: d.summary.clone(),
            priority: d.priority.clone().unwrap_or_default(),
            severity: d.severity.clone().unwrap_or_default(),
            kind: d.kind.clone().unwrap_or_default(),
        };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::other)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Corpus, CorpusError> {
    let r = BufReader::new(File::open(path)?);
    let mut docs = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| CorpusError::Record {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let rec: Record = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let doc = Document {
            id: rec.id,
            summary: rec.summary,
            priority: opt(rec.priority),
            severity: opt(rec.severity),
            kind: opt(rec.kind),
        };
        doc.validate().map_err(|e| err(e.to_string()))?;
        docs.push(doc);
    }
    Ok(Corpus::new(docs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_with_absent_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let c = Corpus::new(vec![
            Document {
                id: "a".into(),
                summary: "Export artifact to a PDF file is not working".into(),
                priority: Some("High".into()),
                severity: Some("Major".into()),
                kind: Some("Other".into()),
            },
            Document::unlabeled("b", "plain text"),
        ]);
        write_corpus(&p, &c).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().nth(1).unwrap().contains(r#""priority":"""#));
        assert_eq!(read_corpus(&p).unwrap(), c);
    }

    #[test]
    fn bad_label_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            "{\"id\":\"a\",\"summary\":\"x\",\"priority\":\"\",\"severity\":\"\",\"type\":\"Bug\"}\n",
        )
        .unwrap();
        let e = read_corpus(&p).unwrap_err().to_string();
        assert!(e.contains(":1:"), "{e}");
    }
}
