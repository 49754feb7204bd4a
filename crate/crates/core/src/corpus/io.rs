use std::io::Write;
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{ClaimInstance, EvidencePair, Verdict};
use crate::error::{Error, Result};

/// Writes one JSON record per line with fields id, claim, evidence, verdict, justification.
pub fn save_corpus(path: &Path, instances: &[ClaimInstance]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for inst in instances {
        serde_json::to_writer(&mut out, inst)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_external(path: &Path) -> Result<Vec<ClaimInstance>> {
    parse_external(&std::fs::read_to_string(path)?, path)
}

#[derive(Deserialize)]
struct RawPair {
    question: String,
    answer: String,
}

/// Parses line-delimited claim records. Blank lines are skipped; records
/// without an `id` get one derived from their line number.
pub fn parse_external(text: &str, path: &Path) -> Result<Vec<ClaimInstance>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |msg: String| Error::Schema {
            path: path.to_path_buf(),
            line: line_no,
            msg,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| schema("record is not an object".into()))?;
        let string_field = |name: &str| -> Result<String> {
            match obj.get(name) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(_) => Err(schema(format!("field `{name}` must be a string"))),
                None => Err(schema(format!("missing field `{name}`"))),
            }
        };
        let claim = string_field("claim")?;
        let justification = string_field("justification")?;
        let label = string_field("verdict")?;
        let evidence = match obj.get("evidence") {
            Some(v) => Vec::<RawPair>::deserialize(v)
                .map_err(|e| schema(format!("field `evidence`: {e}")))?,
            None => return Err(schema("missing field `evidence`".into())),
        };
        if evidence.is_empty() {
            return Err(schema("field `evidence` is empty".into()));
        }
        let id = match obj.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(schema("field `id` must be a string".into())),
            None => format!("ext-{line_no:05}"),
        };
        let gold_verdict = match label.as_str() {
            "Supported" => Verdict::Supported,
            "Refuted" => Verdict::Refuted,
            _ => {
                return Err(Error::UnknownLabel {
                    path: path.to_path_buf(),
                    line: line_no,
                    label,
                })
            }
        };
        out.push(ClaimInstance {
            id,
            claim,
            evidence: evidence
                .into_iter()
                .map(|p| EvidencePair {
                    question: p.question,
                    answer: p.answer,
                })
                .collect(),
            gold_verdict,
            gold_justification: justification,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_corpus;

    const P: &str = "records.jsonl";

    #[test]
    fn two_records() {
        let text = concat!(
            r#"{"claim":"Kelo 's rank is 4","evidence":[{"question":"Kelo 's rank ?","answer":"4"}],"verdict":"Supported","justification":"x"}"#,
            "\n",
            r#"{"id":"b","claim":"c","evidence":[{"question":"q","answer":"a"}],"verdict":"Refuted","justification":"y"}"#,
            "\n"
        );
        let got = parse_external(text, Path::new(P)).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].id, "ext-00001");
        assert_eq!(got[1].gold_verdict, Verdict::Refuted);
    }

    #[test]
    fn missing_evidence_reports_line() {
        let text = concat!(
            r#"{"claim":"a","evidence":[{"question":"q","answer":"a"}],"verdict":"Refuted","justification":"y"}"#,
            "\n",
            r#"{"claim":"a","verdict":"Refuted","justification":"y"}"#
        );
        match parse_external(text, Path::new(P)) {
            Err(Error::Schema { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("evidence"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conflicting_label_rejected() {
        let text = r#"{"claim":"a","evidence":[{"question":"q","answer":"a"}],"verdict":"Conflicting","justification":"y"}"#;
        assert!(matches!(
            parse_external(text, Path::new(P)),
            Err(Error::UnknownLabel { line: 1, ref label, .. }) if label == "Conflicting"
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let corpus = generate_corpus(25, 0.4, 8);
        save_corpus(&path, &corpus).unwrap();
        assert_eq!(load_external(&path).unwrap(), corpus);
        let first = std::fs::read_to_string(&path).unwrap();
        let first_line = first.lines().next().unwrap();
        let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, Value>>(first_line)
            .unwrap()
            .keys()
            .cloned()
            .collect();
        let mut expected = vec!["claim", "evidence", "id", "justification", "verdict"];
        expected.sort();
        assert_eq!(keys, expected);
    }
}
