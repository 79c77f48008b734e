//! File formats: trace JSONL, annotation JSONL, JSON reports, CSV tables.
//!
//! A trace line is `{"id", "tokens", "surfaces"?, "logprobs"?, "spans"?}`
//! with spans as `[start, len]` pairs. An annotation line is `{"id",
//! "spans", "ratings"?, "provenance"}`. Writers emit keys in declaration
//! order and no timestamps, so identical inputs produce identical bytes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotate::{AnnotationRecord, Provenance};
use crate::seq::{Corpus, CorpusInstance, CorpusRole, Span, SpanSet, TokenSequence};
use crate::toylm::EpochRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    pub tokens: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub surfaces: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub logprobs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationFileRecord {
    pub id: String,
    pub spans: Vec<[usize; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratings: Option<Vec<u8>>,
    pub provenance: Provenance,
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path)
        .map_err(|e| Error::input(format!("cannot open {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| {
            Error::input(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(record);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::input(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut w, record)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>> {
    read_jsonl(path)
}

pub fn write_traces(path: &Path, records: &[TraceRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationFileRecord>> {
    read_jsonl(path)
}

pub fn write_annotations(path: &Path, records: &[AnnotationFileRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn spans_to_pairs(spans: &SpanSet) -> Vec<[usize; 2]> {
    spans.spans().iter().map(|s| [s.start(), s.len()]).collect()
}

pub fn spans_from_pairs(pairs: &[[usize; 2]], id: &str) -> Result<SpanSet> {
    let spans = pairs
        .iter()
        .map(|&[start, len]| {
            Span::new(start, len)
                .map_err(|_| Error::input(format!("'{id}': span [{start}, {len}] has length 0")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpanSet::new(spans))
}

fn instance_from_trace(record: TraceRecord) -> Result<CorpusInstance> {
    let TraceRecord { id, tokens, surfaces, logprobs, spans } = record;
    let seq = match surfaces {
        Some(surfaces) => TokenSequence::with_surfaces(&id, tokens, surfaces)?,
        None => TokenSequence::new(&id, tokens)?,
    };
    let mut inst = CorpusInstance::new(seq);
    if let Some(pairs) = spans {
        let spans = spans_from_pairs(&pairs, &id)?;
        spans.validate_for(inst.seq.len(), &id)?;
        inst = inst.with_spans(spans);
    }
    if let Some(logprobs) = logprobs {
        inst = inst.with_logprobs(logprobs);
    }
    Ok(inst)
}

pub fn corpus_from_traces(records: Vec<TraceRecord>, role: CorpusRole) -> Result<Corpus> {
    Corpus::new(
        role,
        records
            .into_iter()
            .map(instance_from_trace)
            .collect::<Result<Vec<_>>>()?,
    )
}

pub fn traces_from_corpus(corpus: &Corpus) -> Vec<TraceRecord> {
    corpus
        .instances()
        .iter()
        .map(|inst| TraceRecord {
            id: inst.seq.id().to_owned(),
            tokens: inst.seq.tokens().to_vec(),
            surfaces: inst.seq.surfaces().map(<[String]>::to_vec),
            logprobs: inst.logprobs.clone(),
            spans: inst.spans.as_ref().map(spans_to_pairs),
        })
        .collect()
}

pub fn annotation_file_record(record: &AnnotationRecord) -> AnnotationFileRecord {
    AnnotationFileRecord {
        id: record.instance_id.clone(),
        spans: spans_to_pairs(&record.final_spans),
        ratings: Some(record.final_ratings()),
        provenance: record.provenance,
    }
}

/// Joins annotation records to the given instance ids. Every id must be
/// annotated; the error lists the ids that are not.
pub fn join_annotations<'a>(
    ids: impl Iterator<Item = &'a str>,
    annotations: &[AnnotationFileRecord],
    source: &Path,
) -> Result<BTreeMap<String, SpanSet>> {
    let mut by_id: BTreeMap<&str, &AnnotationFileRecord> = BTreeMap::new();
    for ann in annotations {
        if by_id.insert(&ann.id, ann).is_some() {
            return Err(Error::input(format!(
                "duplicate annotation for id '{}' in {}",
                ann.id,
                source.display()
            )));
        }
    }
    let mut joined = BTreeMap::new();
    let mut missing = Vec::new();
    for id in ids {
        match by_id.get(id) {
            Some(ann) => {
                joined.insert(id.to_owned(), spans_from_pairs(&ann.spans, id)?);
            }
            None => missing.push(id.to_owned()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::input(format!(
            "{} has no annotation for ids: {}",
            source.display(),
            missing.join(", ")
        )));
    }
    Ok(joined)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Error::input(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map(|v| format!("{v:.6}")).unwrap_or_default()
}

/// Trajectory CSV: epoch, unlearning loss, and the four forget-set metrics.
/// Undefined values are empty cells.
pub fn write_trajectory_csv(path: &Path, trajectory: &[EpochRecord]) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::input(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "epoch,loss,el,ma,s_el,s_ma")?;
    for record in trajectory {
        let avg = &record.report.corpus_avg;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            record.epoch,
            fmt_opt(record.loss),
            fmt_opt(avg.el),
            fmt_opt(avg.ma),
            fmt_opt(avg.s_el),
            fmt_opt(avg.s_ma),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let records = vec![
            TraceRecord {
                id: "a".into(),
                tokens: vec![1, 2, 3],
                surfaces: Some(vec!["x".into(), "y".into(), "z".into()]),
                logprobs: Some(vec![-0.5, -1.25, 0.0]),
                spans: Some(vec![[1, 2]]),
            },
            TraceRecord { id: "b".into(), tokens: vec![7], surfaces: None, logprobs: None, spans: None },
        ];
        write_traces(&path, &records).unwrap();
        let back = read_traces(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].tokens, vec![1, 2, 3]);
        assert_eq!(back[0].logprobs.as_ref().unwrap()[1], -1.25);
        assert_eq!(back[0].spans.as_ref().unwrap(), &vec![[1usize, 2usize]]);
    }

    #[test]
    fn malformed_line_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\": \"a\", \"tokens\": [1]}\nnot json\n").unwrap();
        let err = read_traces(&path).unwrap_err();
        assert!(err.to_string().contains(":2"), "{err}");
    }

    #[test]
    fn join_reports_missing_ids() {
        let anns = vec![AnnotationFileRecord {
            id: "a".into(),
            spans: vec![[0, 1]],
            ratings: None,
            provenance: Provenance::External,
        }];
        let ids = ["a", "b", "c"];
        let err =
            join_annotations(ids.iter().copied(), &anns, Path::new("x.jsonl")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("b") && msg.contains("c"), "{msg}");
    }

    #[test]
    fn corpus_roundtrip_preserves_spans() {
        let records = vec![TraceRecord {
            id: "a".into(),
            tokens: vec![5, 6, 7, 8],
            surfaces: None,
            logprobs: None,
            spans: Some(vec![[0, 2], [2, 1]]),
        }];
        let corpus = corpus_from_traces(records, CorpusRole::Forget).unwrap();
        // adjacent spans merge on construction
        let back = traces_from_corpus(&corpus);
        assert_eq!(back[0].spans.as_ref().unwrap(), &vec![[0usize, 3usize]]);
    }
}
