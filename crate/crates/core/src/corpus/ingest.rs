use std::collections::HashSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::types::*;
use super::{CorpusError, EmbeddingSet};

/// A record type stored as one JSON object per line.
pub trait LineRecord: DeserializeOwned + Serialize {
    /// Enum-valued fields and their accepted spellings, checked before deserialization
    /// so unknown values surface as [`CorpusError::UnknownEnum`].
    const ENUM_FIELDS: &'static [(&'static str, &'static [&'static str])];
}

impl LineRecord for ImageRecord {
    const ENUM_FIELDS: &'static [(&'static str, &'static [&'static str])] = &[
        ("country", Country::NAMES),
        ("era", Era::NAMES),
        ("protocol", Protocol::NAMES),
    ];
}

impl LineRecord for MetricScoreRow {
    const ENUM_FIELDS: &'static [(&'static str, &'static [&'static str])] =
        &[("metric", Metric::NAMES)];
}

impl LineRecord for AnswerRecord {
    const ENUM_FIELDS: &'static [(&'static str, &'static [&'static str])] = &[
        ("axis", Axis::NAMES),
        ("expected", YesNo::NAMES),
        ("answered", Answer::NAMES),
    ];
}

impl LineRecord for RatingRecord {
    const ENUM_FIELDS: &'static [(&'static str, &'static [&'static str])] = &[];
}

impl LineRecord for GoldItem {
    const ENUM_FIELDS: &'static [(&'static str, &'static [&'static str])] =
        &[("expected", YesNo::NAMES)];
}

impl LineRecord for GoldResponse {
    const ENUM_FIELDS: &'static [(&'static str, &'static [&'static str])] =
        &[("answer", YesNo::NAMES)];
}

impl LineRecord for DemographicLabel {
    const ENUM_FIELDS: &'static [(&'static str, &'static [&'static str])] = &[];
}

/// Parses line-delimited records. Blank lines are skipped; line numbers are 1-based.
pub fn parse_lines<T: LineRecord>(text: &str) -> Result<Vec<T>, CorpusError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| CorpusError::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        check_enums(&value, T::ENUM_FIELDS)?;
        let record = serde_json::from_value(value).map_err(|e| CorpusError::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

fn check_enums(value: &Value, fields: &[(&str, &[&str])]) -> Result<(), CorpusError> {
    for (field, allowed) in fields {
        if let Some(v) = value.get(*field) {
            let s = match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            if !allowed.contains(&s.as_str()) {
                return Err(CorpusError::UnknownEnum { field: field.to_string(), value: s });
            }
        }
    }
    Ok(())
}

pub fn read_lines<T: LineRecord>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| CorpusError::MalformedLine {
        line: 0,
        message: format!("invalid UTF-8: {e}"),
    })?;
    parse_lines(&text)
}

/// Serializes records one per line, each line terminated by `\n`.
pub fn to_lines<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialization is infallible"));
        out.push('\n');
    }
    out
}

/// Parses and validates a manifest held in memory.
///
/// Checks the vocabulary, id and full-key uniqueness, and (when `embeddings`
/// is given) that every embedding reference resolves.
pub fn parse_manifest(
    text: &str,
    vocab: &Vocabulary,
    embeddings: Option<&EmbeddingSet>,
) -> Result<Vec<ImageRecord>, CorpusError> {
    let records: Vec<ImageRecord> = parse_lines(text)?;
    let mut ids = HashSet::new();
    let mut keys = HashSet::new();
    for r in &records {
        if !vocab.has_category(&r.category) {
            return Err(CorpusError::UnknownEnum {
                field: "category".into(),
                value: r.category.clone(),
            });
        }
        if r.protocol != Protocol::OccupationAudit
            && !vocab.accepts_subcategory(&r.category, &r.subcategory)
        {
            return Err(CorpusError::UnknownEnum {
                field: "subcategory".into(),
                value: r.subcategory.clone(),
            });
        }
        if !ids.insert(r.id.as_str()) || !keys.insert(r.key()) {
            return Err(CorpusError::DuplicateKey(r.id.clone()));
        }
        if let Some(set) = embeddings {
            if set.resolve(&r.embedding_ref).is_none() {
                return Err(CorpusError::DanglingRef(r.id.clone()));
            }
        }
    }
    Ok(records)
}

pub fn ingest_manifest(
    path: &Path,
    vocab: &Vocabulary,
    embeddings: Option<&EmbeddingSet>,
) -> Result<Vec<ImageRecord>, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| CorpusError::MalformedLine {
        line: 0,
        message: format!("invalid UTF-8: {e}"),
    })?;
    parse_manifest(&text, vocab, embeddings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EmbeddingMatrix;

    fn line(id: &str, country: &str, row: u64) -> String {
        format!(
            r#"{{"id":"{id}","model":"m1","country":"{country}","category":"Food","subcategory":"Snack","era":"modern","protocol":"t2i_base","step":0,"prompt":"p","embedding_ref":{{"file_id":"e","row":{row}}}}}"#
        )
    }

    fn two_rows() -> EmbeddingSet {
        std::iter::once(EmbeddingMatrix::new("e", 2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).collect()
    }

    #[test]
    fn three_line_manifest() {
        let text = [line("a", "Korea", 0), line("b", "China", 1), line("c", "Kenya", 0)].join("\n");
        let recs = parse_manifest(&text, &Vocabulary::default(), Some(&two_rows())).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].country, Country::Korea);
    }

    #[test]
    fn duplicate_full_key() {
        let text = [line("a", "Korea", 0), line("b", "Korea", 1)].join("\n");
        let err = parse_manifest(&text, &Vocabulary::default(), None).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateKey(id) if id == "b"));
    }

    #[test]
    fn duplicate_id() {
        let text = [line("a", "Korea", 0), line("a", "China", 1)].join("\n");
        assert!(matches!(
            parse_manifest(&text, &Vocabulary::default(), None),
            Err(CorpusError::DuplicateKey(_))
        ));
    }

    #[test]
    fn dangling_embedding_row() {
        let text = line("a", "Korea", 5);
        let err = parse_manifest(&text, &Vocabulary::default(), Some(&two_rows())).unwrap_err();
        assert!(matches!(err, CorpusError::DanglingRef(id) if id == "a"));
    }

    #[test]
    fn unknown_country() {
        let text = line("a", "Atlantis", 0);
        let err = parse_manifest(&text, &Vocabulary::default(), None).unwrap_err();
        assert!(
            matches!(err, CorpusError::UnknownEnum { field, value } if field == "country" && value == "Atlantis")
        );
    }

    #[test]
    fn unknown_category() {
        let text = line("a", "Korea", 0).replace("\"Food\"", "\"Sport\"");
        let err = parse_manifest(&text, &Vocabulary::default(), None).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownEnum { field, .. } if field == "category"));
    }

    #[test]
    fn malformed_line_number() {
        let text = format!("{}\n{{not json\n", line("a", "Korea", 0));
        let err = parse_manifest(&text, &Vocabulary::default(), None).unwrap_err();
        assert!(matches!(err, CorpusError::MalformedLine { line: 2, .. }));
    }

    #[test]
    fn answer_enum_checked() {
        let text = r#"{"image_id":"a","question_id":"q","question_text":"?","axis":"image_quality","expected":"maybe","answered":"yes","is_negative_check":false}"#;
        let err = parse_lines::<AnswerRecord>(text).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownEnum { field, .. } if field == "expected"));
    }
}
