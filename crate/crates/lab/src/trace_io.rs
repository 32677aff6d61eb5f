//! Newline-delimited JSON trace files: a header line, then one record per line.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use dleaf_core::trace::{Label, TraceHeader, TraceRecord, TRACE_MAGIC, TRACE_SCHEMA_VERSION};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

/// Allowed excursion of stored attention values outside `[0, 1]`.
pub const RANGE_SLACK: f64 = 1e-9;

pub fn validate_header(header: &TraceHeader, origin: &str) -> LabResult<()> {
    let schema = |message: String| LabError::Schema { origin: origin.to_string(), message };
    if header.magic != TRACE_MAGIC {
        return Err(schema(format!("bad magic {:?}", header.magic)));
    }
    if header.schema_version != TRACE_SCHEMA_VERSION {
        return Err(schema(format!("unsupported version {}", header.schema_version)));
    }
    let (start, end) = header.image_span;
    if header.num_layers == 0 || header.num_heads == 0 || header.num_image_tokens == 0 {
        return Err(schema("layer, head and image token counts must be positive".into()));
    }
    if end <= start || end - start != header.num_image_tokens {
        return Err(schema(format!(
            "image span ({start}, {end}) does not cover {} tokens",
            header.num_image_tokens
        )));
    }
    Ok(())
}

pub fn validate_record(header: &TraceHeader, record: &TraceRecord, origin: &str, line: usize) -> LabResult<()> {
    record
        .check_dims(header.num_layers, header.num_heads, header.num_image_tokens)
        .map_err(|e| LabError::Dim { origin: origin.to_string(), line, message: e.to_string() })?;
    if record.token_id as usize >= header.vocab_size {
        return Err(LabError::Range {
            origin: origin.to_string(),
            line,
            message: format!("token id {} outside vocabulary {}", record.token_id, header.vocab_size),
        });
    }
    let out_of_range = |v: f64| !v.is_finite() || v < -RANGE_SLACK || v > 1.0 + RANGE_SLACK;
    for (l, layer) in record.attention.iter().enumerate() {
        for (h, row) in layer.iter().enumerate() {
            if let Some((n, v)) = row.iter().enumerate().find(|(_, v)| out_of_range(**v)) {
                return Err(LabError::Range {
                    origin: origin.to_string(),
                    line,
                    message: format!("attention[{l}][{h}][{n}] = {v} outside [0, 1]"),
                });
            }
        }
    }
    if let Some(sums) = &record.row_sums {
        if sums.iter().flatten().any(|&s| !s.is_finite() || s < -RANGE_SLACK) {
            return Err(LabError::Range { origin: origin.to_string(), line, message: "negative or non-finite row sum".into() });
        }
    }
    Ok(())
}

pub fn write_trace_to<'a, W, I>(mut out: W, header: &TraceHeader, records: I, origin: &str) -> LabResult<()>
where
    W: Write,
    I: IntoIterator<Item = &'a TraceRecord>,
{
    validate_header(header, origin)?;
    let io = |e: std::io::Error| LabError::io(origin, e);
    serde_json::to_writer(&mut out, header).map_err(|e| io(e.into()))?;
    out.write_all(b"\n").map_err(io)?;
    for (i, record) in records.into_iter().enumerate() {
        validate_record(header, record, origin, i + 2)?;
        serde_json::to_writer(&mut out, record).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Writes a trace file. Nothing is left behind if a record fails validation.
pub fn write_trace<'a, I>(path: &Path, header: &TraceHeader, records: I) -> LabResult<()>
where
    I: IntoIterator<Item = &'a TraceRecord>,
{
    let origin = path.display().to_string();
    let mut buffer = Vec::new();
    write_trace_to(&mut buffer, header, records, &origin)?;
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    let mut writer = BufWriter::new(file);
    writer.write_all(&buffer).map_err(|e| LabError::io(path, e))?;
    writer.flush().map_err(|e| LabError::io(path, e))
}

fn parse_line<T: for<'de> Deserialize<'de>>(text: &str, origin: &str, line: usize) -> LabResult<T> {
    serde_json::from_str(text).map_err(|e| LabError::Parse { origin: origin.to_string(), line, message: e.to_string() })
}

/// Non-blank lines with their 1-based line numbers.
fn numbered_lines<'a, R: BufRead + 'a>(reader: R, origin: &'a str) -> impl Iterator<Item = LabResult<(usize, String)>> + 'a {
    reader.lines().enumerate().filter_map(move |(i, line)| match line {
        Ok(text) if text.trim().is_empty() => None,
        Ok(text) => Some(Ok((i + 1, text))),
        Err(e) => Some(Err(LabError::io(origin, e))),
    })
}

pub fn read_trace_from<R: BufRead>(reader: R, origin: &str) -> LabResult<(TraceHeader, Vec<TraceRecord>)> {
    let mut lines = numbered_lines(reader, origin);
    let (line, text) = lines
        .next()
        .ok_or_else(|| LabError::Schema { origin: origin.to_string(), message: "missing header line".into() })??;
    let header: TraceHeader = parse_line(&text, origin, line)?;
    validate_header(&header, origin)?;
    let mut records = Vec::new();
    for item in lines {
        let (line, text) = item?;
        let record: TraceRecord = parse_line(&text, origin, line)?;
        validate_record(&header, &record, origin, line)?;
        records.push(record);
    }
    Ok((header, records))
}

pub fn read_trace(path: &Path) -> LabResult<(TraceHeader, Vec<TraceRecord>)> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    read_trace_from(BufReader::new(file), &path.display().to_string())
}

/// Reads one JSON value per non-blank line.
pub fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> LabResult<Vec<T>> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let origin = path.display().to_string();
    numbered_lines(BufReader::new(file), &origin)
        .map(|item| item.and_then(|(line, text)| parse_line(&text, &origin, line)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelEntry {
    pub step: usize,
    pub label: Label,
}

pub fn read_labels_from<R: BufRead>(reader: R, origin: &str) -> LabResult<BTreeMap<usize, Label>> {
    let mut labels = BTreeMap::new();
    for item in numbered_lines(reader, origin) {
        let (line, text) = item?;
        let entry: LabelEntry = parse_line(&text, origin, line)?;
        if labels.insert(entry.step, entry.label).is_some() {
            return Err(LabError::Label {
                origin: origin.to_string(),
                line,
                message: format!("duplicate step {}", entry.step),
            });
        }
    }
    Ok(labels)
}

pub fn read_labels(path: &Path) -> LabResult<BTreeMap<usize, Label>> {
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    read_labels_from(BufReader::new(file), &path.display().to_string())
}

pub fn write_labels(path: &Path, records: &[TraceRecord]) -> LabResult<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(&LabelEntry { step: r.step, label: r.label }).expect("label entry"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| LabError::io(path, e))
}

/// Counts after a label join.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LabelJoin {
    pub real: usize,
    pub hallucinated: usize,
    pub unlabeled: usize,
}

/// Sets each record's label from `labels` by step; unmatched records become unlabeled.
pub fn attach_labels(records: &mut [TraceRecord], labels: &BTreeMap<usize, Label>) -> LabelJoin {
    let mut join = LabelJoin { real: 0, hallucinated: 0, unlabeled: 0 };
    for record in records {
        record.label = labels.get(&record.step).copied().unwrap_or(Label::Unlabeled);
        match record.label {
            Label::Real => join.real += 1,
            Label::Hallucinated => join.hallucinated += 1,
            Label::Unlabeled => join.unlabeled += 1,
        }
    }
    join
}
