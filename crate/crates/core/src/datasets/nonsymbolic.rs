use std::path::Path;

use serde::Serialize;

use super::instance::{Belief, QuantifierForm, SyllogismInstance, Terms};
use super::scheme::SyllogisticScheme;
use crate::error::{Error, Result};
use crate::model::Tokenizer;

/// Small hand-written word set (belief-consistent and -inconsistent).
pub const BUNDLED_NONSYMBOLIC: &str = include_str!("../../assets/nonsymbolic.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedRow {
    /// 1-based line number in the file.
    pub line: usize,
    pub row: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct IngestReport {
    pub instances: Vec<SyllogismInstance>,
    pub rejected: Vec<RejectedRow>,
}

/// Read a `s,m,p,label` CSV file and render each row with `scheme`.
pub fn ingest_nonsymbolic(
    path: impl AsRef<Path>,
    scheme: SyllogisticScheme,
    tokenizer: &Tokenizer,
) -> Result<IngestReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_nonsymbolic(&text, scheme, tokenizer)
}

/// Rows whose words are not single tokens are reported and skipped; a bad
/// header or a row without four fields fails the whole file.
pub fn parse_nonsymbolic(
    text: &str,
    scheme: SyllogisticScheme,
    tokenizer: &Tokenizer,
) -> Result<IngestReport> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Empty("non-symbolic file"))?;
    let header: Vec<String> =
        header.trim_start_matches('\u{feff}').split(',').map(|h| h.trim().to_ascii_lowercase()).collect();
    if header != ["s", "m", "p", "label"] {
        return Err(Error::Dataset(format!(
            "expected header `s,m,p,label`, found `{}`",
            header.join(",")
        )));
    }
    let mut report = IngestReport::default();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [s, m, p, label] = fields[..] else {
            return Err(Error::Dataset(format!(
                "line {}: expected 4 fields, found {}",
                i + 1,
                fields.len()
            )));
        };
        let label = match label.to_ascii_lowercase().as_str() {
            "consistent" => Belief::Consistent,
            "inconsistent" => Belief::Inconsistent,
            other => {
                return Err(Error::Dataset(format!("line {}: unknown label `{other}`", i + 1)))
            }
        };
        let reject = |reason: String| RejectedRow { line: i + 1, row: line.to_string(), reason };
        if let Some(w) = [s, m, p].into_iter().find(|w| w.is_empty() || w.contains(char::is_whitespace)) {
            report.rejected.push(reject(format!("`{w}` is not a single word")));
            continue;
        }
        let terms = Terms::triple(&format!(" {s}"), &format!(" {m}"), &format!(" {p}"));
        match SyllogismInstance::render(scheme, terms, QuantifierForm::Plural, tokenizer) {
            Ok(mut inst) => {
                inst.label = Some(label);
                report.instances.push(inst);
            }
            Err(e @ (Error::MultiToken(_) | Error::Dataset(_))) => {
                report.rejected.push(reject(e.to_string()))
            }
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn barbara() -> SyllogisticScheme {
        SyllogisticScheme::lookup("AAA-1").unwrap()
    }

    #[test]
    fn renders_word_rows_and_reports_multi_token_ones() {
        let tok = Tokenizer::gpt2();
        let csv = "s,m,p,label\nmen,humans,mortal,consistent\npilots,people,blond,inconsistent\n\
                   magnets,electromagnetism,forces,consistent\n";
        let report = parse_nonsymbolic(csv, barbara(), &tok).unwrap();
        assert_eq!(report.instances.len(), 2);
        let men = &report.instances[0];
        assert_eq!(men.prompt, "All men are humans. All humans are mortal. Therefore, all men are");
        assert_eq!(
            men.tokens,
            [3237, 1450, 389, 5384, 13, 1439, 5384, 389, 22122, 13, 8447, 11, 477, 1450, 389]
        );
        assert_eq!(men.answer_token, 22122);
        assert_eq!(men.label, Some(Belief::Consistent));
        assert_eq!(report.instances[1].label, Some(Belief::Inconsistent));
        assert_eq!(report.instances[1].answer_token, 32749);
        assert_eq!(report.rejected.len(), 1);
        assert_eq!(report.rejected[0].line, 4);
        assert!(report.rejected[0].reason.contains("electromagnetism"));
    }

    #[test]
    fn malformed_input_is_fatal() {
        let tok = Tokenizer::gpt2();
        assert!(parse_nonsymbolic("a,b,c\nx,y,z\n", barbara(), &tok).is_err());
        assert!(parse_nonsymbolic("s,m,p,label\nmen,humans\n", barbara(), &tok).is_err());
        assert!(parse_nonsymbolic("s,m,p,label\nmen,humans,mortal,maybe\n", barbara(), &tok).is_err());
        assert!(parse_nonsymbolic("", barbara(), &tok).is_err());
    }

    #[test]
    fn bundled_set_is_fully_single_token() {
        let tok = Tokenizer::gpt2();
        let report = parse_nonsymbolic(BUNDLED_NONSYMBOLIC, barbara(), &tok).unwrap();
        assert!(report.rejected.is_empty(), "{:?}", report.rejected);
        assert_eq!(report.instances.len(), 40);
        assert!(report.instances.iter().all(|i| i.n_tokens() == 15));
    }
}
