//! MRQA shared-task files: one header line, then one JSON record per context.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{DatasetError, QAExample};

#[derive(Deserialize, Serialize)]
struct Record {
    context: String,
    qas: Vec<Qa>,
}

#[derive(Deserialize, Serialize)]
struct Qa {
    qid: String,
    question: String,
    answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedRecord {
    pub line: usize,
    pub qid: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub examples: Vec<QAExample>,
    pub skipped: Vec<SkippedRecord>,
}

pub fn parse_mrqa<R: BufRead>(reader: R) -> Result<LoadReport, DatasetError> {
    let mut lines = reader.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Err(DatasetError::Format("empty file".into())),
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
        }
    };
    let header: serde_json::Value = serde_json::from_str(&header).map_err(|e| DatasetError::Parse {
        line: 1,
        message: format!("header: {e}"),
    })?;
    if header.get("header").is_none() {
        return Err(DatasetError::Format("first line is not a header record".into()));
    }
    let mut report = LoadReport::default();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        for qa in record.qas {
            let qid = qa.qid.clone();
            match QAExample::new(qa.qid, qa.question, record.context.clone(), qa.answers) {
                Some(ex) => report.examples.push(ex),
                None => report.skipped.push(SkippedRecord {
                    line: i + 1,
                    qid,
                    reason: "empty id, question, context or answer list".into(),
                }),
            }
        }
    }
    Ok(report)
}

pub fn load_mrqa(path: &Path) -> Result<LoadReport, DatasetError> {
    let report = parse_mrqa(BufReader::new(std::fs::File::open(path)?))?;
    if !report.skipped.is_empty() {
        log::warn!("{}: skipped {} questions", path.display(), report.skipped.len());
    }
    Ok(report)
}

/// Writes examples, grouping consecutive examples that share a context into
/// one record.
pub fn write_mrqa<W: Write>(mut w: W, dataset: &str, examples: &[QAExample]) -> Result<(), DatasetError> {
    let header = json!({ "header": { "dataset": dataset, "split": "dev" } });
    writeln!(w, "{header}")?;
    let mut i = 0;
    while i < examples.len() {
        let context = &examples[i].context;
        let mut j = i;
        while j < examples.len() && &examples[j].context == context {
            j += 1;
        }
        let record = Record {
            context: context.clone(),
            qas: examples[i..j]
                .iter()
                .map(|e| Qa {
                    qid: e.id.clone(),
                    question: e.question.clone(),
                    answers: e.answers.clone(),
                })
                .collect(),
        };
        let line = serde_json::to_string(&record).map_err(|e| DatasetError::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
        i = j;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{"header": {"dataset": "SQuAD", "split": "dev"}}
{"context": "Paris is in France.", "qas": [{"qid": "a1", "question": "Where is Paris?", "answers": ["France", "France"], "detected_answers": []}, {"qid": "a2", "question": "What is in France?", "answers": ["Paris"]}]}
{"context": "Nothing here.", "qas": [{"qid": "b1", "question": "Anything?", "answers": []}]}
"#;

    #[test]
    fn fans_out_and_skips() {
        let r = parse_mrqa(FIXTURE.as_bytes()).unwrap();
        assert_eq!(r.examples.len(), 2);
        assert_eq!(r.examples[0].context, r.examples[1].context);
        assert_eq!(r.examples[0].answers, vec!["France"]);
        assert_eq!(
            r.skipped,
            vec![SkippedRecord {
                line: 3,
                qid: "b1".into(),
                reason: "empty id, question, context or answer list".into()
            }]
        );
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(parse_mrqa("".as_bytes()), Err(DatasetError::Format(_))));
        assert!(matches!(parse_mrqa("{\"x\": 1}\n".as_bytes()), Err(DatasetError::Format(_))));
        let missing = "{\"header\": {}}\n{\"context\": \"c\"}\n";
        assert!(matches!(parse_mrqa(missing.as_bytes()), Err(DatasetError::Parse { line: 2, .. })));
        let broken = "{\"header\": {}}\n\n{\"context\": \"c\", \"qas\": [}\n";
        assert!(matches!(parse_mrqa(broken.as_bytes()), Err(DatasetError::Parse { line: 3, .. })));
    }

    #[test]
    fn writer_round_trip() {
        let r = parse_mrqa(FIXTURE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_mrqa(&mut buf, "SQuAD", &r.examples).unwrap();
        let back = parse_mrqa(buf.as_slice()).unwrap();
        assert_eq!(back.examples, r.examples);
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }
}
