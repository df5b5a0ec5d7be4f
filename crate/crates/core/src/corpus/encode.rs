use super::vocab::{tokenize, CLS, PAD};
use super::{CorpusError, Document, Task, Vocabulary};

/// Fixed-length model input: `[CLS]` + word ids, right-padded with `[PAD]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedExample {
    pub ids: Vec<usize>,
    /// `true` for real tokens (including `[CLS]`), `false` for padding.
    pub attention: Vec<bool>,
    pub label: Option<usize>,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-padding positions.
    pub fn real_len(&self) -> usize {
        self.attention.iter().filter(|&&a| a).count()
    }
}

pub fn encode(doc: &Document, vocab: &Vocabulary, max_len: usize) -> Result<EncodedExample, CorpusError> {
    if max_len < 2 {
        return Err(CorpusError::MaxLen(max_len));
    }
    let mut ids = Vec::with_capacity(max_len);
    ids.push(CLS);
    ids.extend(
        tokenize(&doc.summary)
            .iter()
            .take(max_len - 1)
            .map(|w| vocab.id(w)),
    );
    let real = ids.len();
    ids.resize(max_len, PAD);
    let attention = (0..max_len).map(|i| i < real).collect();
    Ok(EncodedExample {
        ids,
        attention,
        label: None,
    })
}

/// Like [`encode`], attaching the class index of `task` when the document has one.
pub fn encode_for_task(
    doc: &Document,
    vocab: &Vocabulary,
    max_len: usize,
    task: Task,
) -> Result<EncodedExample, CorpusError> {
    let mut ex = encode(doc, vocab, max_len)?;
    ex.label = match doc.label(task) {
        Some(l) => Some(doc.label_index(task).ok_or_else(|| CorpusError::UnknownLabel {
            task,
            label: l.to_string(),
        })?),
        None => None,
    };
    Ok(ex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, UNK};

    fn vocab() -> Vocabulary {
        let c = Corpus::new(vec![Document::unlabeled("0", "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11")]);
        Vocabulary::build(&[&c], 1)
    }

    #[test]
    fn truncates_to_cls_plus_first_words() {
        let v = vocab();
        let d = Document::unlabeled("x", "w0 w1 w2 w3 w4 w5 w6 w7 w8 w9 w10 w11");
        let e = encode(&d, &v, 8).unwrap();
        assert_eq!(e.len(), 8);
        assert_eq!(e.ids[0], CLS);
        let want: Vec<usize> = (0..7).map(|i| v.id(&format!("w{i}"))).collect();
        assert_eq!(&e.ids[1..], &want[..]);
        assert!(e.attention.iter().all(|&a| a));
    }

    #[test]
    fn pads_and_masks_short_docs() {
        let v = vocab();
        let d = Document::unlabeled("x", "w3 unseen");
        let e = encode(&d, &v, 6).unwrap();
        assert_eq!(e.ids, vec![CLS, v.id("w3"), UNK, PAD, PAD, PAD]);
        assert_eq!(e.attention, vec![true, true, true, false, false, false]);
        assert_eq!(e.real_len(), 3);
    }

    #[test]
    fn cls_always_present() {
        let v = vocab();
        let e = encode(&Document::unlabeled("x", "w1 w2 w3"), &v, 2).unwrap();
        assert_eq!(e.ids, vec![CLS, v.id("w1")]);
        assert!(encode(&Document::unlabeled("x", "w1"), &v, 1).is_err());
    }

    #[test]
    fn task_label_attached() {
        let v = vocab();
        let d = Document {
            id: "1".into(),
            summary: "w1".into(),
            priority: Some("High".into()),
            severity: Some("Blocker".into()),
            kind: Some("JUnit".into()),
        };
        assert_eq!(encode_for_task(&d, &v, 4, Task::Priority).unwrap().label, Some(1));
        assert_eq!(encode_for_task(&d, &v, 4, Task::Severity).unwrap().label, Some(5));
        assert_eq!(encode_for_task(&d, &v, 4, Task::Type).unwrap().label, Some(6));
        let bad = Document {
            kind: Some("Defect".into()),
            ..d
        };
        assert!(encode_for_task(&bad, &v, 4, Task::Type).is_err());
    }
}
