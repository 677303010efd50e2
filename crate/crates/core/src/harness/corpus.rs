use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{TokenId, TokenSeq, Vocabulary};

/// A field given either as token ids or as raw text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TextOrIds {
    Ids(Vec<TokenId>),
    Text(String),
}

impl TextOrIds {
    /// Text is split on whitespace and looked up in the vocabulary's display map.
    pub fn resolve(&self, vocab: &Vocabulary) -> Result<TokenSeq> {
        match self {
            TextOrIds::Ids(ids) => TokenSeq::checked(ids.clone(), vocab),
            TextOrIds::Text(text) => vocab.encode_words(text),
        }
    }
}

impl From<Vec<TokenId>> for TextOrIds {
    fn from(ids: Vec<TokenId>) -> Self {
        TextOrIds::Ids(ids)
    }
}

/// One JSON-lines corpus record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub doc_id: String,
    pub context: TextOrIds,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<TextOrIds>,
    /// Summary whose spans are annotated (profile mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<TextOrIds>,
    /// Token indices into `summary` where hallucinated spans start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub prepend_reference: bool,
}

impl CorpusRecord {
    pub fn from_ids(doc_id: impl Into<String>, context: Vec<TokenId>) -> Self {
        Self {
            doc_id: doc_id.into(),
            context: context.into(),
            reference: None,
            summary: None,
            annotations: None,
            prepend_reference: false,
        }
    }

    /// The decoding context, with the reference in front when requested.
    pub fn context_ids(&self, vocab: &Vocabulary, force_prepend: bool) -> Result<TokenSeq> {
        let context = self.context.resolve(vocab)?;
        match (&self.reference, self.prepend_reference || force_prepend) {
            (Some(reference), true) => {
                let mut joined = reference.resolve(vocab)?;
                joined.extend_from(&context);
                Ok(joined)
            }
            _ => Ok(context),
        }
    }

    pub fn reference_ids(&self, vocab: &Vocabulary) -> Result<Option<TokenSeq>> {
        self.reference.as_ref().map(|r| r.resolve(vocab)).transpose()
    }

    /// Summary and in-range span starts; an error when either is missing.
    pub fn annotated_summary(&self, vocab: &Vocabulary) -> Result<(TokenSeq, Vec<usize>)> {
        let summary = self
            .summary
            .as_ref()
            .ok_or_else(|| Error::contract(format!("record {} has no summary", self.doc_id)))?
            .resolve(vocab)?;
        let spans = self
            .annotations
            .clone()
            .ok_or_else(|| Error::contract(format!("record {} has no annotations", self.doc_id)))?;
        if let Some(bad) = spans.iter().find(|&&s| s >= summary.len()) {
            return Err(Error::contract(format!(
                "record {}: span start {bad} outside summary of length {}",
                self.doc_id,
                summary.len()
            )));
        }
        Ok((summary, spans))
    }
}

/// Reads a JSON-lines corpus; blank lines are skipped.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}: {e}", path.display(), i + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_corpus(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn vocab() -> Vocabulary {
        let display: BTreeMap<TokenId, String> =
            [(2, "a"), (3, "b"), (4, "c")].into_iter().map(|(k, v)| (k, v.to_string())).collect();
        Vocabulary::new(5, 0, 1, None, []).unwrap().with_display(display).unwrap()
    }

    #[test]
    fn parses_ids_and_text() {
        let r: CorpusRecord =
            serde_json::from_str(r#"{"doc_id":"x","context":"a b c","reference":[3]}"#).unwrap();
        let v = vocab();
        assert_eq!(r.context_ids(&v, false).unwrap().to_vec(), vec![2, 3, 4]);
        assert_eq!(r.context_ids(&v, true).unwrap().to_vec(), vec![3, 2, 3, 4]);
        assert_eq!(r.reference_ids(&v).unwrap().unwrap().to_vec(), vec![3]);
        assert!(r.annotated_summary(&v).is_err());
    }

    #[test]
    fn annotations_are_range_checked() {
        let mut r = CorpusRecord::from_ids("y", vec![2]);
        r.summary = Some(vec![2, 3].into());
        r.annotations = Some(vec![2]);
        assert!(r.annotated_summary(&vocab()).is_err());
        r.annotations = Some(vec![1]);
        assert_eq!(r.annotated_summary(&vocab()).unwrap().1, vec![1]);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recs = vec![CorpusRecord::from_ids("a", vec![2, 3]), CorpusRecord::from_ids("b", vec![4])];
        write_corpus(&path, &recs).unwrap();
        assert_eq!(load_corpus(&path).unwrap(), recs);
    }
}
