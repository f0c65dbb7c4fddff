//! Descriptor text codecs.
//!
//! Three serializations of a [`SemanticGrid`]:
//!
//! * `full`: every cell label in row-major order, joined by `" | "`.
//! * `irle`: run-length encoding over the whole flattened sequence, so runs
//!   may cross row boundaries.
//! * `rrle`: run-length encoding per row, rows joined by `"\n"`.
//!
//! A run is rendered as `label` when its count is 1 and `label *count`
//! otherwise. The grammar, for reference:
//!
//! ```text
//! response := "The result is :\n" "<seg>" body "</seg>"
//! body     := row ("\n" row)*          (rrle; full and irle are one row)
//! row      := run (" | " run)*
//! run      := label | label " *" count
//! ```
//!
//! [`decode`] parses text produced by an imperfect generator. Under
//! [`RepairPolicy::Strict`] the first grammar or shape violation is an error;
//! under [`RepairPolicy::PadTruncate`] the decoder truncates overflow, pads
//! underflow with the background label, maps unknown labels to background and
//! records every repair as a [`Diagnostic`].

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{LabelId, LabelVocab, SemanticGrid};

pub const RUN_SEPARATOR: &str = " | ";
pub const ROW_SEPARATOR: char = '\n';
pub const RESPONSE_PREFIX: &str = "The result is :\n";
pub const SEG_OPEN: &str = "<seg>";
pub const SEG_CLOSE: &str = "</seg>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Full,
    Irle,
    Rrle,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Full, Scheme::Irle, Scheme::Rrle];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Full => "full",
            Scheme::Irle => "irle",
            Scheme::Rrle => "rrle",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Scheme::Full),
            "irle" => Ok(Scheme::Irle),
            "rrle" => Ok(Scheme::Rrle),
            other => Err(Error::invalid(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairPolicy {
    Strict,
    #[default]
    PadTruncate,
}

impl FromStr for RepairPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(RepairPolicy::Strict),
            "pad-truncate" => Ok(RepairPolicy::PadTruncate),
            other => Err(Error::invalid(format!("unknown repair policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Run {
    pub label: LabelId,
    pub count: u32,
}

/// Collapses adjacent equal labels.
pub fn runs_of(ids: &[LabelId]) -> Vec<Run> {
    let mut runs: Vec<Run> = Vec::new();
    for &id in ids {
        match runs.last_mut() {
            Some(run) if run.label == id => run.count += 1,
            _ => runs.push(Run { label: id, count: 1 }),
        }
    }
    runs
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedText {
    pub scheme: Scheme,
    pub body: String,
    pub rows: usize,
    pub cols: usize,
}

fn push_run(out: &mut String, vocab: &LabelVocab, run: Run) {
    out.push_str(vocab.label(run.label).expect("grid labels are in vocab"));
    if run.count > 1 {
        out.push_str(" *");
        out.push_str(&run.count.to_string());
    }
}

fn push_runs(out: &mut String, vocab: &LabelVocab, runs: &[Run]) {
    for (i, &run) in runs.iter().enumerate() {
        if i > 0 {
            out.push_str(RUN_SEPARATOR);
        }
        push_run(out, vocab, run);
    }
}

pub fn encode_full(grid: &SemanticGrid) -> EncodedText {
    let vocab = grid.vocab();
    let mut body = String::new();
    for (i, &id) in grid.cells().iter().enumerate() {
        if i > 0 {
            body.push_str(RUN_SEPARATOR);
        }
        body.push_str(vocab.label(id).expect("grid labels are in vocab"));
    }
    EncodedText {
        scheme: Scheme::Full,
        body,
        rows: grid.rows(),
        cols: grid.cols(),
    }
}

pub fn encode_irle(grid: &SemanticGrid) -> EncodedText {
    let mut body = String::new();
    push_runs(&mut body, grid.vocab(), &runs_of(grid.cells()));
    EncodedText {
        scheme: Scheme::Irle,
        body,
        rows: grid.rows(),
        cols: grid.cols(),
    }
}

pub fn encode_rrle(grid: &SemanticGrid) -> EncodedText {
    let mut body = String::new();
    for r in 0..grid.rows() {
        if r > 0 {
            body.push(ROW_SEPARATOR);
        }
        push_runs(&mut body, grid.vocab(), &runs_of(grid.row(r)));
    }
    EncodedText {
        scheme: Scheme::Rrle,
        body,
        rows: grid.rows(),
        cols: grid.cols(),
    }
}

pub fn encode(grid: &SemanticGrid, scheme: Scheme) -> EncodedText {
    match scheme {
        Scheme::Full => encode_full(grid),
        Scheme::Irle => encode_irle(grid),
        Scheme::Rrle => encode_rrle(grid),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnosticKind {
    RowOverflow,
    RowUnderflow,
    MissingRows,
    ExtraRows,
    UnknownLabel,
    BadCount,
    MissingTerminator,
    /// Separator whitespace deviates from `" | "` / `" *"`.
    BadSeparator,
}

impl DiagnosticKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticKind::RowOverflow => "row-overflow",
            DiagnosticKind::RowUnderflow => "row-underflow",
            DiagnosticKind::MissingRows => "missing-rows",
            DiagnosticKind::ExtraRows => "extra-rows",
            DiagnosticKind::UnknownLabel => "unknown-label",
            DiagnosticKind::BadCount => "bad-count",
            DiagnosticKind::MissingTerminator => "missing-terminator",
            DiagnosticKind::BadSeparator => "bad-separator",
        }
    }
}

/// One repair (or, in strict mode, the violation that aborted decoding).
/// `row` is `None` for flat schemes and whole-text conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub row: Option<usize>,
    pub kind: DiagnosticKind,
    pub detail: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.row {
            Some(r) => write!(f, "row {r}: {}: {}", self.kind.as_str(), self.detail),
            None => write!(f, "{}: {}", self.kind.as_str(), self.detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeReport {
    pub grid: SemanticGrid,
    pub diagnostics: Vec<Diagnostic>,
}

impl DecodeReport {
    pub fn repaired(&self) -> bool {
        !self.diagnostics.is_empty()
    }
}

struct Diagnostics {
    policy: RepairPolicy,
    list: Vec<Diagnostic>,
}

impl Diagnostics {
    fn push(&mut self, row: Option<usize>, kind: DiagnosticKind, detail: String) -> Result<()> {
        let d = Diagnostic { row, kind, detail };
        match self.policy {
            RepairPolicy::Strict => Err(Error::Parse(d)),
            RepairPolicy::PadTruncate => {
                self.list.push(d);
                Ok(())
            }
        }
    }
}

fn parse_row(
    line: &str,
    row: Option<usize>,
    vocab: &LabelVocab,
    diags: &mut Diagnostics,
) -> Result<Vec<Run>> {
    let mut runs = Vec::new();
    if line.is_empty() {
        return Ok(runs);
    }
    let pieces: Vec<&str> = line.split('|').collect();
    let last = pieces.len() - 1;
    for (i, piece) in pieces.into_iter().enumerate() {
        let core = piece.trim();
        let lead = if i > 0 { " " } else { "" };
        let trail = if i < last { " " } else { "" };
        if piece.len() != lead.len() + core.len() + trail.len()
            || !piece.starts_with(lead)
            || !piece.ends_with(trail)
        {
            diags.push(
                row,
                DiagnosticKind::BadSeparator,
                format!("run {i}: {piece:?}"),
            )?;
        }
        if core.is_empty() {
            diags.push(row, DiagnosticKind::UnknownLabel, format!("run {i}: empty descriptor"))?;
            continue;
        }

        let (label, count) = match core.rfind('*') {
            None => (core, 1),
            Some(star) => {
                let head = &core[..star];
                let label = head.trim_end();
                if head.len() != label.len() + 1 {
                    diags.push(
                        row,
                        DiagnosticKind::BadSeparator,
                        format!("run {i}: expected one space before '*' in {core:?}"),
                    )?;
                }
                let digits = &core[star + 1..];
                let parsed = if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                    digits.parse::<u32>().ok()
                } else {
                    None
                };
                match parsed {
                    Some(0) => {
                        diags.push(row, DiagnosticKind::BadCount, format!("run {i}: zero count"))?;
                        continue;
                    }
                    Some(n) => (label, n),
                    None => {
                        diags.push(
                            row,
                            DiagnosticKind::BadCount,
                            format!("run {i}: bad count {digits:?}, using 1"),
                        )?;
                        (label, 1)
                    }
                }
            }
        };

        let id = match vocab.id_of(label) {
            Some(id) => id,
            None => {
                diags.push(
                    row,
                    DiagnosticKind::UnknownLabel,
                    format!("run {i}: {label:?}"),
                )?;
                vocab.background_id()
            }
        };
        runs.push(Run { label: id, count });
    }
    Ok(runs)
}

/// Expands `runs` into exactly `capacity` cells.
fn fill(
    runs: &[Run],
    capacity: usize,
    row: Option<usize>,
    background: LabelId,
    out: &mut Vec<LabelId>,
    diags: &mut Diagnostics,
) -> Result<()> {
    let mut filled = 0usize;
    let mut excess = 0u64;
    for run in runs {
        let take = (run.count as usize).min(capacity - filled);
        out.extend(std::iter::repeat_n(run.label, take));
        filled += take;
        excess += (run.count as usize - take) as u64;
    }
    if excess > 0 {
        diags.push(
            row,
            DiagnosticKind::RowOverflow,
            format!("{excess} cells beyond {capacity} truncated"),
        )?;
    }
    if filled < capacity {
        diags.push(
            row,
            DiagnosticKind::RowUnderflow,
            format!("{filled} of {capacity} cells, padded with background"),
        )?;
        out.extend(std::iter::repeat_n(background, capacity - filled));
    }
    Ok(())
}

/// Parses descriptor text back into a `rows × cols` grid.
pub fn decode(
    text: &str,
    scheme: Scheme,
    rows: usize,
    cols: usize,
    vocab: Arc<LabelVocab>,
    policy: RepairPolicy,
) -> Result<DecodeReport> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("grid must have at least one row and column"));
    }
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let mut diags = Diagnostics {
        policy,
        list: Vec::new(),
    };
    let bg = vocab.background_id();
    let mut cells = Vec::with_capacity(rows * cols);

    match scheme {
        Scheme::Rrle => {
            let lines: Vec<&str> = text.split(ROW_SEPARATOR).collect();
            for (r, line) in lines.iter().take(rows).enumerate() {
                let runs = parse_row(line, Some(r), &vocab, &mut diags)?;
                fill(&runs, cols, Some(r), bg, &mut cells, &mut diags)?;
            }
            if lines.len() > rows {
                diags.push(
                    Some(rows),
                    DiagnosticKind::ExtraRows,
                    format!("{} rows beyond {rows} dropped", lines.len() - rows),
                )?;
            } else if lines.len() < rows {
                diags.push(
                    Some(lines.len()),
                    DiagnosticKind::MissingRows,
                    format!("{} of {rows} rows, padded with background", lines.len()),
                )?;
                cells.resize(rows * cols, bg);
            }
        }
        Scheme::Full | Scheme::Irle => {
            let lines: Vec<&str> = text.split(ROW_SEPARATOR).collect();
            if lines.len() > 1 {
                diags.push(
                    None,
                    DiagnosticKind::ExtraRows,
                    format!("{} newlines in a flat {scheme} body", lines.len() - 1),
                )?;
            }
            let mut runs = Vec::new();
            for line in lines {
                runs.extend(parse_row(line, None, &vocab, &mut diags)?);
            }
            if scheme == Scheme::Full {
                for (i, run) in runs.iter_mut().enumerate() {
                    if run.count > 1 {
                        diags.push(
                            None,
                            DiagnosticKind::BadCount,
                            format!("run {i}: counted run in a full-length body"),
                        )?;
                    }
                }
            }
            fill(&runs, rows * cols, None, bg, &mut cells, &mut diags)?;
        }
    }

    let grid = SemanticGrid::new(rows, cols, cells, vocab)?;
    Ok(DecodeReport {
        grid,
        diagnostics: diags.list,
    })
}

/// Wraps an encoded body in the response template.
pub fn wrap_response(encoded: &EncodedText) -> Result<String> {
    if encoded.body.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(format!(
        "{RESPONSE_PREFIX}{SEG_OPEN}{}{SEG_CLOSE}",
        encoded.body
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegBody<'a> {
    pub body: &'a str,
    pub diagnostic: Option<Diagnostic>,
}

/// Text between the first `<seg>` and the following `</seg>`. A missing
/// terminator yields everything after `<seg>` plus a diagnostic.
pub fn extract_seg(response: &str) -> Result<SegBody<'_>> {
    let start = response.find(SEG_OPEN).ok_or(Error::MissingSegTag)? + SEG_OPEN.len();
    let rest = &response[start..];
    Ok(match rest.find(SEG_CLOSE) {
        Some(end) => SegBody {
            body: &rest[..end],
            diagnostic: None,
        },
        None => SegBody {
            body: rest,
            diagnostic: Some(Diagnostic {
                row: None,
                kind: DiagnosticKind::MissingTerminator,
                detail: format!("no {SEG_CLOSE} after {SEG_OPEN}"),
            }),
        },
    })
}

/// [`extract_seg`] followed by [`decode`]; a missing terminator is an error
/// under the strict policy and a logged repair otherwise.
pub fn decode_response(
    response: &str,
    scheme: Scheme,
    rows: usize,
    cols: usize,
    vocab: Arc<LabelVocab>,
    policy: RepairPolicy,
) -> Result<DecodeReport> {
    let seg = extract_seg(response)?;
    if let Some(d) = &seg.diagnostic {
        if policy == RepairPolicy::Strict {
            return Err(Error::Parse(d.clone()));
        }
    }
    let mut report = decode(seg.body, scheme, rows, cols, vocab, policy)?;
    if let Some(d) = seg.diagnostic {
        report.diagnostics.insert(0, d);
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenStats {
    /// Maximal non-whitespace substrings; a proxy for model tokens.
    pub word_tokens: usize,
    pub chars: usize,
    pub rows: usize,
    pub runs: usize,
}

pub fn token_stats(text: &str) -> TokenStats {
    if text.is_empty() {
        return TokenStats::default();
    }
    TokenStats {
        word_tokens: text.split_whitespace().count(),
        chars: text.chars().count(),
        rows: text.split(ROW_SEPARATOR).count(),
        runs: text
            .split(['|', ROW_SEPARATOR])
            .filter(|p| !p.trim().is_empty())
            .count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Arc<LabelVocab> {
        Arc::new(LabelVocab::new(["others", "sky", "sea", "brown dog"]).unwrap())
    }

    fn grid(rows: usize, cols: usize, cells: &[LabelId]) -> SemanticGrid {
        SemanticGrid::new(rows, cols, cells.to_vec(), vocab()).unwrap()
    }

    const SKY: LabelId = 1;
    const SEA: LabelId = 2;

    /// Scan-and-count oracle over label strings, independent of `runs_of`.
    fn naive_rle(labels: &[&str]) -> String {
        let mut parts = Vec::new();
        let mut i = 0;
        while i < labels.len() {
            let mut j = i;
            while j < labels.len() && labels[j] == labels[i] {
                j += 1;
            }
            parts.push(if j - i == 1 {
                labels[i].to_string()
            } else {
                format!("{} *{}", labels[i], j - i)
            });
            i = j;
        }
        parts.join(" | ")
    }

    fn labels_of(g: &SemanticGrid) -> Vec<&str> {
        g.cells().iter().map(|&id| g.vocab().label(id).unwrap()).collect()
    }

    #[test]
    fn full_examples() {
        let g = grid(2, 2, &[SKY, SKY, SEA, SEA]);
        assert_eq!(encode_full(&g).body, "sky | sky | sea | sea");
        assert_eq!(encode_full(&grid(1, 1, &[0])).body, "others");
        let g = grid(16, 16, &[0; 256]);
        let body = encode_full(&g).body;
        assert_eq!(body.split(" | ").count(), 256);
        assert_eq!(body.matches('|').count(), 255);
    }

    #[test]
    fn irle_examples() {
        let g = grid(2, 2, &[SKY, SKY, SEA, SEA]);
        assert_eq!(encode_irle(&g).body, naive_rle(&labels_of(&g)));
        assert_eq!(encode_irle(&g).body, "sky *2 | sea *2");
        let g = grid(2, 2, &[SKY, SEA, SEA, SKY]);
        assert_eq!(encode_irle(&g).body, naive_rle(&labels_of(&g)));
        assert_eq!(encode_irle(&g).body, "sky | sea *2 | sky");
        assert_eq!(encode_irle(&grid(3, 5, &[SEA; 15])).body, "sea *15");
    }

    #[test]
    fn rrle_examples() {
        let g = grid(2, 2, &[SKY, SKY, SEA, SEA]);
        assert_eq!(encode_rrle(&g).body, "sky *2\nsea *2");
        let g = grid(2, 2, &[SKY, SEA, SEA, SKY]);
        assert_eq!(encode_rrle(&g).body, "sky | sea\nsea | sky");
        let g = grid(1, 7, &[3; 7]);
        assert_eq!(encode_rrle(&g).body, "brown dog *7");
    }

    #[test]
    fn decode_clean_rrle() {
        let r = decode("sky *2\nsea *2", Scheme::Rrle, 2, 2, vocab(), RepairPolicy::Strict).unwrap();
        assert_eq!(r.grid, grid(2, 2, &[SKY, SKY, SEA, SEA]));
        assert!(!r.repaired());
    }

    #[test]
    fn decode_overflow_and_underflow() {
        let r = decode("sky *3\nsea", Scheme::Rrle, 2, 2, vocab(), RepairPolicy::PadTruncate)
            .unwrap();
        assert_eq!(r.grid, grid(2, 2, &[SKY, SKY, SEA, 0]));
        let kinds: Vec<_> = r.diagnostics.iter().map(|d| (d.row, d.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                (Some(0), DiagnosticKind::RowOverflow),
                (Some(1), DiagnosticKind::RowUnderflow)
            ]
        );
        assert!(r.repaired());

        let err = decode("sky *3\nsea", Scheme::Rrle, 2, 2, vocab(), RepairPolicy::Strict)
            .unwrap_err();
        match err {
            Error::Parse(d) => assert_eq!((d.row, d.kind), (Some(0), DiagnosticKind::RowOverflow)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decode_row_count_repairs() {
        let r = decode("sky *2", Scheme::Rrle, 3, 2, vocab(), RepairPolicy::PadTruncate).unwrap();
        assert_eq!(r.grid, grid(3, 2, &[SKY, SKY, 0, 0, 0, 0]));
        assert_eq!(r.diagnostics[0].kind, DiagnosticKind::MissingRows);

        let r = decode("sky *2\nsea *2\nsky *2", Scheme::Rrle, 2, 2, vocab(), RepairPolicy::PadTruncate)
            .unwrap();
        assert_eq!(r.grid, grid(2, 2, &[SKY, SKY, SEA, SEA]));
        assert_eq!(r.diagnostics[0].kind, DiagnosticKind::ExtraRows);
    }

    #[test]
    fn decode_label_and_count_repairs() {
        let r = decode("cat | sky *x | sea *0 | sea", Scheme::Irle, 1, 3, vocab(), RepairPolicy::PadTruncate)
            .unwrap();
        assert_eq!(r.grid.cells(), &[0, SKY, SEA]);
        let kinds: Vec<_> = r.diagnostics.iter().map(|d| d.kind).collect();
        assert_eq!(
            kinds,
            vec![
                DiagnosticKind::UnknownLabel,
                DiagnosticKind::BadCount,
                DiagnosticKind::BadCount
            ]
        );
    }

    #[test]
    fn decode_whitespace_and_multiword_labels() {
        let r = decode("brown dog *2 | sky", Scheme::Rrle, 1, 3, vocab(), RepairPolicy::Strict).unwrap();
        assert_eq!(r.grid.cells(), &[3, 3, SKY]);

        let r = decode("sky|sea", Scheme::Irle, 1, 2, vocab(), RepairPolicy::PadTruncate).unwrap();
        assert_eq!(r.grid.cells(), &[SKY, SEA]);
        assert!(r.diagnostics.iter().all(|d| d.kind == DiagnosticKind::BadSeparator));
        assert!(decode("sky|sea", Scheme::Irle, 1, 2, vocab(), RepairPolicy::Strict).is_err());
        assert!(decode("sky  *2", Scheme::Irle, 1, 2, vocab(), RepairPolicy::Strict).is_err());
    }

    #[test]
    fn decode_full_rejects_counts_in_strict_mode() {
        assert!(decode("sky *2", Scheme::Full, 1, 2, vocab(), RepairPolicy::Strict).is_err());
        let r = decode("sky *2", Scheme::Full, 1, 2, vocab(), RepairPolicy::PadTruncate).unwrap();
        assert_eq!(r.grid.cells(), &[SKY, SKY]);
        assert!(decode("sky\nsea", Scheme::Irle, 1, 2, vocab(), RepairPolicy::Strict).is_err());
    }

    #[test]
    fn decode_empty_text_is_error() {
        for policy in [RepairPolicy::Strict, RepairPolicy::PadTruncate] {
            assert!(matches!(
                decode("", Scheme::Rrle, 2, 2, vocab(), policy),
                Err(Error::EmptyText)
            ));
            assert!(matches!(
                decode(" \n ", Scheme::Rrle, 2, 2, vocab(), policy),
                Err(Error::EmptyText)
            ));
        }
        assert!(decode("sky", Scheme::Rrle, 0, 2, vocab(), RepairPolicy::Strict).is_err());
    }

    #[test]
    fn wrap_and_extract() {
        let enc = EncodedText {
            scheme: Scheme::Rrle,
            body: "sky".into(),
            rows: 1,
            cols: 1,
        };
        assert_eq!(wrap_response(&enc).unwrap(), "The result is :\n<seg>sky</seg>");
        let multi = EncodedText {
            body: "sky\nsea".into(),
            ..enc.clone()
        };
        assert_eq!(
            wrap_response(&multi).unwrap(),
            "The result is :\n<seg>sky\nsea</seg>"
        );
        let empty = EncodedText {
            body: String::new(),
            ..enc
        };
        assert!(wrap_response(&empty).is_err());

        let seg = extract_seg("The result is :\n<seg>sky *4</seg>").unwrap();
        assert_eq!(seg.body, "sky *4");
        assert!(seg.diagnostic.is_none());
        let seg = extract_seg("<seg>sky").unwrap();
        assert_eq!(seg.body, "sky");
        assert_eq!(
            seg.diagnostic.unwrap().kind,
            DiagnosticKind::MissingTerminator
        );
        assert!(matches!(extract_seg("no tags here"), Err(Error::MissingSegTag)));
    }

    #[test]
    fn decode_response_handles_terminator() {
        let r = decode_response("The result is :\n<seg>sky *2\nsea *2", Scheme::Rrle, 2, 2, vocab(), RepairPolicy::PadTruncate)
            .unwrap();
        assert_eq!(r.grid, grid(2, 2, &[SKY, SKY, SEA, SEA]));
        assert_eq!(r.diagnostics.len(), 1);
        assert!(decode_response("<seg>sky *2\nsea *2", Scheme::Rrle, 2, 2, vocab(), RepairPolicy::Strict).is_err());
    }

    #[test]
    fn token_stats_examples() {
        // maximal non-whitespace substrings: "sky" "*2" "|" "sea" "*2"
        let s = token_stats("sky *2 | sea *2");
        assert_eq!(s.word_tokens, 5);
        assert_eq!(s.chars, 15);
        assert_eq!(s.rows, 1);
        assert_eq!(s.runs, 2);
        assert_eq!(token_stats(""), TokenStats::default());
        let s = token_stats("sky | sea\nsea | sky");
        assert_eq!((s.rows, s.runs, s.word_tokens), (2, 4, 6));
    }

    #[test]
    fn exhaustive_2x2_round_trip() {
        let v = Arc::new(LabelVocab::new(["others", "a", "b"]).unwrap());
        for n in 0..81u32 {
            let cells: Vec<LabelId> = (0..4).map(|i| ((n / 3u32.pow(i)) % 3) as LabelId).collect();
            let g = SemanticGrid::new(2, 2, cells, v.clone()).unwrap();
            for scheme in Scheme::ALL {
                let enc = encode(&g, scheme);
                let r = decode(&enc.body, scheme, 2, 2, v.clone(), RepairPolicy::Strict).unwrap();
                assert_eq!(r.grid, g);
                assert!(!r.repaired());
            }
        }
    }

    fn arb_grid() -> impl Strategy<Value = SemanticGrid> {
        (1usize..8, 1usize..8).prop_flat_map(|(r, c)| {
            prop::collection::vec(0..4u16, r * c)
                .prop_map(move |cells| SemanticGrid::new(r, c, cells, vocab()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip_all_schemes(g in arb_grid()) {
            for scheme in Scheme::ALL {
                let enc = encode(&g, scheme);
                let r = decode(&enc.body, scheme, g.rows(), g.cols(), vocab(), RepairPolicy::Strict).unwrap();
                prop_assert_eq!(&r.grid, &g);
                prop_assert!(!r.repaired());
            }
        }

        #[test]
        fn irle_matches_naive_oracle(g in arb_grid()) {
            prop_assert_eq!(encode_irle(&g).body, naive_rle(&labels_of(&g)));
            let rows: Vec<String> = (0..g.rows())
                .map(|r| {
                    let labels: Vec<&str> = g.row(r).iter().map(|&id| g.vocab().label(id).unwrap()).collect();
                    naive_rle(&labels)
                })
                .collect();
            prop_assert_eq!(encode_rrle(&g).body, rows.join("\n"));
        }

        #[test]
        fn run_counts_sum_to_shape(g in arb_grid()) {
            let total: u32 = runs_of(g.cells()).iter().map(|r| r.count).sum();
            prop_assert_eq!(total as usize, g.rows() * g.cols());
            for r in 0..g.rows() {
                let row: u32 = runs_of(g.row(r)).iter().map(|r| r.count).sum();
                prop_assert_eq!(row as usize, g.cols());
            }
        }

        #[test]
        fn length_bounds(g in arb_grid()) {
            let full = token_stats(&encode_full(&g).body);
            let irle = token_stats(&encode_irle(&g).body);
            let rrle = token_stats(&encode_rrle(&g).body);
            prop_assert!(rrle.chars <= full.chars);
            prop_assert!(rrle.word_tokens <= full.word_tokens);
            // I-RLE replaces each row break ("\n") by " | " unless the runs
            // on both sides merge, so it can exceed R-RLE by 2 chars per break.
            prop_assert!(irle.chars <= rrle.chars + 2 * (g.rows() - 1));
            prop_assert_eq!(rrle.rows, g.rows());
        }

        #[test]
        fn pad_truncate_is_total_and_deterministic(text in "[a-z |*0-9\n]{1,40}") {
            prop_assume!(!text.trim().is_empty());
            let a = decode(&text, Scheme::Rrle, 3, 4, vocab(), RepairPolicy::PadTruncate).unwrap();
            let b = decode(&text, Scheme::Rrle, 3, 4, vocab(), RepairPolicy::PadTruncate).unwrap();
            prop_assert_eq!(a.grid.cells().len(), 12);
            prop_assert_eq!(&a, &b);
            for scheme in [Scheme::Full, Scheme::Irle] {
                let r = decode(&text, scheme, 3, 4, vocab(), RepairPolicy::PadTruncate).unwrap();
                prop_assert_eq!(r.grid.cells().len(), 12);
            }
        }
    }
}
