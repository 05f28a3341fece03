//! Corpus manifests, bitext readers and join-key normalization.
//!
//! A manifest is a TOML document:
//!
//! ```toml
//! pivot = "en"
//!
//! [[corpora]]
//! source = "nc"
//! lang = "de"
//! format = "line_pair"          # or "tsv"
//! paths = ["nc.en", "nc.de"]    # line_pair: pivot file first; tsv: one file, pivot column first
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::borrow::Cow;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::{is_nfc_quick, IsNormalized, UnicodeNormalization};

use crate::model::{BilingualRecord, LanguageId, RecordPosition, SourceId};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: manifest parse error: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{path}: referenced file does not exist: {missing}")]
    MissingFile { path: PathBuf, missing: PathBuf },
    #[error("{path}: duplicate corpus entry for source {source_tag} and language {lang}")]
    DuplicateSource {
        path: PathBuf,
        source_tag: SourceId,
        lang: LanguageId,
    },
    #[error("{path}: corpus {source_tag}: pivot language listed as non-pivot side ({lang})")]
    PivotAsOther {
        path: PathBuf,
        source_tag: SourceId,
        lang: LanguageId,
    },
    #[error("{path}: corpus {source_tag}: format {format} expects {expected} path(s), got {got}")]
    PathCount {
        path: PathBuf,
        source_tag: SourceId,
        format: BitextFormat,
        expected: usize,
        got: usize,
    },
    #[error("{pivot_path} / {other_path}: line count mismatch {pivot_lines} vs {other_lines}")]
    LineCountMismatch {
        pivot_path: PathBuf,
        other_path: PathBuf,
        pivot_lines: u64,
        other_lines: u64,
    },
    #[error("{path}: line {line}: expected 2 tab-separated columns, found {columns}")]
    TsvColumns {
        path: PathBuf,
        line: u64,
        columns: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitextFormat {
    LinePair,
    Tsv,
}

impl std::fmt::Display for BitextFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BitextFormat::LinePair => "line_pair",
            BitextFormat::Tsv => "tsv",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub source: SourceId,
    pub lang: LanguageId,
    pub format: BitextFormat,
    pub paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub pivot: LanguageId,
    pub corpora: Vec<CorpusEntry>,
}

impl CorpusManifest {
    /// Checks the manifest invariants. `origin` is only used in error messages.
    pub fn validate(&self, origin: &Path) -> Result<(), IngestError> {
        let mut seen = BTreeSet::new();
        for entry in &self.corpora {
            if entry.lang == self.pivot {
                return Err(IngestError::PivotAsOther {
                    path: origin.to_owned(),
                    source_tag: entry.source.clone(),
                    lang: entry.lang.clone(),
                });
            }
            if !seen.insert((entry.source.clone(), entry.lang.clone())) {
                return Err(IngestError::DuplicateSource {
                    path: origin.to_owned(),
                    source_tag: entry.source.clone(),
                    lang: entry.lang.clone(),
                });
            }
            let expected = match entry.format {
                BitextFormat::LinePair => 2,
                BitextFormat::Tsv => 1,
            };
            if entry.paths.len() != expected {
                return Err(IngestError::PathCount {
                    path: origin.to_owned(),
                    source_tag: entry.source.clone(),
                    format: entry.format,
                    expected,
                    got: entry.paths.len(),
                });
            }
            for p in &entry.paths {
                if !p.is_file() {
                    return Err(IngestError::MissingFile {
                        path: origin.to_owned(),
                        missing: p.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest, IngestError> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut manifest: CorpusManifest = toml::from_str(&text).map_err(|e| IngestError::Parse {
        path: path.to_owned(),
        message: e.to_string().trim_end().to_owned(),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    for entry in &mut manifest.corpora {
        for p in &mut entry.paths {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
    manifest.validate(path)?;
    Ok(manifest)
}

/// How pivot sentences are canonicalized before they are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationPolicy {
    pub unicode_nfc: bool,
    pub trim: bool,
    pub collapse_internal_whitespace: bool,
    pub case_fold: bool,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        NormalizationPolicy {
            unicode_nfc: true,
            trim: true,
            collapse_internal_whitespace: true,
            case_fold: false,
        }
    }
}

impl NormalizationPolicy {
    /// The same policy without case folding; applied to non-pivot texts, which are
    /// training targets and keep their case.
    pub fn for_translations(self) -> Self {
        NormalizationPolicy {
            case_fold: false,
            ..self
        }
    }
}

/// Applies NFC, trimming, whitespace collapsing and lowercasing, in that order,
/// as enabled by `policy`.
pub fn normalize_key(raw: &str, policy: &NormalizationPolicy) -> String {
    let mut s: Cow<'_, str> = Cow::Borrowed(raw);
    if policy.unicode_nfc && is_nfc_quick(s.chars()) != IsNormalized::Yes {
        s = Cow::Owned(s.nfc().collect());
    }
    if policy.trim {
        s = match s {
            Cow::Borrowed(b) => Cow::Borrowed(b.trim()),
            Cow::Owned(o) => Cow::Owned(o.trim().to_owned()),
        };
    }
    if policy.collapse_internal_whitespace && needs_collapse(&s) {
        let mut out = String::with_capacity(s.len());
        let mut in_run = false;
        for c in s.chars() {
            if c.is_whitespace() {
                if !in_run {
                    out.push(' ');
                }
                in_run = true;
            } else {
                out.push(c);
                in_run = false;
            }
        }
        s = Cow::Owned(out);
    }
    if policy.case_fold {
        let lowered = s.to_lowercase();
        s = if policy.unicode_nfc {
            Cow::Owned(lowered.nfc().collect())
        } else {
            Cow::Owned(lowered)
        };
    }
    s.into_owned()
}

fn needs_collapse(s: &str) -> bool {
    let mut prev_ws = false;
    for c in s.chars() {
        let ws = c.is_whitespace();
        if ws && (prev_ws || c != ' ') {
            return true;
        }
        prev_ws = ws;
    }
    false
}

/// Decodes a line as UTF-8, replacing invalid sequences with U+FFFD. The flag
/// reports whether any replacement happened.
pub fn decode_line(bytes: &[u8]) -> (String, bool) {
    match String::from_utf8_lossy(bytes) {
        Cow::Borrowed(s) => (s.to_owned(), false),
        Cow::Owned(s) => (s, true),
    }
}

/// Counters kept while reading one corpus entry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadStats {
    pub lines: u64,
    pub records: u64,
    pub dropped_empty: u64,
    pub invalid_utf8_lines: u64,
}

impl ReadStats {
    pub fn merge(&mut self, other: &ReadStats) {
        self.lines += other.lines;
        self.records += other.records;
        self.dropped_empty += other.dropped_empty;
        self.invalid_utf8_lines += other.invalid_utf8_lines;
    }
}

enum Inputs {
    LinePair {
        pivot: LineSource,
        other: LineSource,
    },
    Tsv(LineSource),
}

struct LineSource {
    path: PathBuf,
    reader: Box<dyn BufRead + Send>,
    buf: Vec<u8>,
}

impl LineSource {
    fn open(path: &Path) -> Result<Self, IngestError> {
        let file = File::open(path).map_err(|source| IngestError::Io {
            path: path.to_owned(),
            source,
        })?;
        Ok(LineSource {
            path: path.to_owned(),
            reader: Box::new(BufReader::with_capacity(1 << 16, file)),
            buf: Vec::new(),
        })
    }

    /// Reads the next line into `buf` without its terminator. Returns false at EOF.
    fn next_line(&mut self) -> Result<bool, IngestError> {
        self.buf.clear();
        let n = self
            .reader
            .read_until(b'\n', &mut self.buf)
            .map_err(|source| IngestError::Io {
                path: self.path.clone(),
                source,
            })?;
        if n == 0 {
            return Ok(false);
        }
        if self.buf.last() == Some(&b'\n') {
            self.buf.pop();
            if self.buf.last() == Some(&b'\r') {
                self.buf.pop();
            }
        }
        Ok(true)
    }

    fn count_remaining(&mut self) -> Result<u64, IngestError> {
        let mut n = 0;
        while self.next_line()? {
            n += 1;
        }
        Ok(n)
    }
}

/// Streaming reader over one manifest entry, yielding records in file order.
///
/// Holds one line per input file in memory at a time.
pub struct BitextReader {
    inputs: Inputs,
    lang: LanguageId,
    source: SourceId,
    corpus_index: u32,
    policy: NormalizationPolicy,
    stats: ReadStats,
    done: bool,
}

impl BitextReader {
    pub fn stats(&self) -> ReadStats {
        self.stats
    }

    fn make_record(&mut self, pivot: &[u8], other: &[u8]) -> Option<BilingualRecord> {
        let (pivot_raw, bad_pivot) = decode_line(pivot);
        let (other_raw, bad_other) = decode_line(other);
        if bad_pivot || bad_other {
            self.stats.invalid_utf8_lines += 1;
        }
        let key = normalize_key(&pivot_raw, &self.policy);
        let other_text = normalize_key(&other_raw, &self.policy.for_translations());
        if key.is_empty() || other_text.is_empty() {
            self.stats.dropped_empty += 1;
            return None;
        }
        self.stats.records += 1;
        Some(BilingualRecord {
            pivot_text: key,
            pivot_raw,
            other_lang: self.lang.clone(),
            other_text,
            source: self.source.clone(),
            position: RecordPosition {
                corpus: self.corpus_index,
                line: self.stats.lines,
            },
        })
    }

    fn advance(&mut self) -> Result<Option<BilingualRecord>, IngestError> {
        loop {
            let (pivot, other) = match &mut self.inputs {
                Inputs::LinePair { pivot, other } => {
                    let has_pivot = pivot.next_line()?;
                    let has_other = other.next_line()?;
                    match (has_pivot, has_other) {
                        (false, false) => return Ok(None),
                        (true, true) => {}
                        _ => {
                            let read = self.stats.lines;
                            let pivot_lines = read + has_pivot as u64 + pivot.count_remaining()?;
                            let other_lines = read + has_other as u64 + other.count_remaining()?;
                            return Err(IngestError::LineCountMismatch {
                                pivot_path: pivot.path.clone(),
                                other_path: other.path.clone(),
                                pivot_lines,
                                other_lines,
                            });
                        }
                    }
                    self.stats.lines += 1;
                    (
                        std::mem::take(&mut pivot.buf),
                        std::mem::take(&mut other.buf),
                    )
                }
                Inputs::Tsv(src) => {
                    if !src.next_line()? {
                        return Ok(None);
                    }
                    self.stats.lines += 1;
                    let line = &src.buf;
                    let columns = line.iter().filter(|&&b| b == b'\t').count() + 1;
                    if columns != 2 {
                        return Err(IngestError::TsvColumns {
                            path: src.path.clone(),
                            line: self.stats.lines,
                            columns,
                        });
                    }
                    let tab = line.iter().position(|&b| b == b'\t').unwrap();
                    (line[..tab].to_vec(), line[tab + 1..].to_vec())
                }
            };
            if let Some(record) = self.make_record(&pivot, &other) {
                self.restore_buffers(pivot, other);
                return Ok(Some(record));
            }
            self.restore_buffers(pivot, other);
        }
    }

    // Hands the line buffers back so their allocations are reused.
    fn restore_buffers(&mut self, pivot: Vec<u8>, other: Vec<u8>) {
        if let Inputs::LinePair { pivot: p, other: o } = &mut self.inputs {
            p.buf = pivot;
            o.buf = other;
        }
    }
}

impl Iterator for BitextReader {
    type Item = Result<BilingualRecord, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.advance() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

/// Opens a streaming reader over `entry`. `corpus_index` is the entry's position in
/// its manifest and ends up in each record's [`RecordPosition`].
pub fn read_bitext(
    entry: &CorpusEntry,
    corpus_index: u32,
    policy: NormalizationPolicy,
) -> Result<BitextReader, IngestError> {
    let inputs = match entry.format {
        BitextFormat::LinePair => {
            let [pivot, other] = entry.paths.as_slice() else {
                return Err(IngestError::PathCount {
                    path: entry.paths.first().cloned().unwrap_or_default(),
                    source_tag: entry.source.clone(),
                    format: entry.format,
                    expected: 2,
                    got: entry.paths.len(),
                });
            };
            Inputs::LinePair {
                pivot: LineSource::open(pivot)?,
                other: LineSource::open(other)?,
            }
        }
        BitextFormat::Tsv => {
            let [path] = entry.paths.as_slice() else {
                return Err(IngestError::PathCount {
                    path: entry.paths.first().cloned().unwrap_or_default(),
                    source_tag: entry.source.clone(),
                    format: entry.format,
                    expected: 1,
                    got: entry.paths.len(),
                });
            };
            Inputs::Tsv(LineSource::open(path)?)
        }
    };
    Ok(BitextReader {
        inputs,
        lang: entry.lang.clone(),
        source: entry.source.clone(),
        corpus_index,
        policy,
        stats: ReadStats::default(),
        done: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, content: &[u8]) -> PathBuf {
        let p = dir.join(name);
        File::create(&p).unwrap().write_all(content).unwrap();
        p
    }

    fn entry(lang: &str, format: BitextFormat, paths: Vec<PathBuf>) -> CorpusEntry {
        CorpusEntry {
            source: SourceId::new("nc").unwrap(),
            lang: LanguageId::new(lang).unwrap(),
            format,
            paths,
        }
    }

    #[test]
    fn normalize_trims_and_collapses() {
        let p = NormalizationPolicy::default();
        assert_eq!(normalize_key("  Stay  safe ", &p), "Stay safe");
        assert_eq!(normalize_key("Stay safe", &p), "Stay safe");
        assert_eq!(normalize_key("Stay\t\u{a0}safe", &p), "Stay safe");
    }

    #[test]
    fn normalize_composes_to_nfc() {
        let p = NormalizationPolicy::default();
        let out = normalize_key("e\u{301}", &p);
        assert_eq!(out, "\u{e9}");
        assert_eq!(out.chars().count(), 1);
    }

    #[test]
    fn normalize_respects_switches() {
        let off = NormalizationPolicy {
            unicode_nfc: false,
            trim: false,
            collapse_internal_whitespace: false,
            case_fold: false,
        };
        assert_eq!(normalize_key(" e\u{301}  X ", &off), " e\u{301}  X ");
        let fold = NormalizationPolicy {
            case_fold: true,
            ..Default::default()
        };
        assert_eq!(normalize_key(" Stay SAFE ", &fold), "stay safe");
    }

    #[test]
    fn decode_replaces_invalid_bytes() {
        let (s, bad) = decode_line(b"ok\xffok");
        assert!(bad);
        assert_eq!(s, "ok\u{fffd}ok");
        assert!(!decode_line("fine".as_bytes()).1);
    }

    #[test]
    fn line_pair_reads_table4_record() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "x.en", b"Stay safe\n");
        let b = write(dir.path(), "x.de", b"Bleib sicher\n");
        let mut reader = read_bitext(
            &entry("de", BitextFormat::LinePair, vec![a, b]),
            0,
            Default::default(),
        )
        .unwrap();
        let rec = reader.next().unwrap().unwrap();
        assert_eq!(rec.pivot_text, "Stay safe");
        assert_eq!(rec.other_text, "Bleib sicher");
        assert_eq!(rec.other_lang.as_str(), "de");
        assert_eq!(rec.position, RecordPosition { corpus: 0, line: 1 });
        assert!(reader.next().is_none());
    }

    #[test]
    fn line_pair_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "x.en", b"a\nb\nc\n");
        let b = write(dir.path(), "x.de", b"a\nb\n");
        let reader = read_bitext(
            &entry("de", BitextFormat::LinePair, vec![a, b]),
            0,
            Default::default(),
        )
        .unwrap();
        let err = reader.collect::<Result<Vec<_>, _>>().unwrap_err();
        assert!(
            err.to_string().contains("line count mismatch 3 vs 2"),
            "{err}"
        );
    }

    #[test]
    fn empty_sides_are_dropped_and_counted() {
        let dir = tempfile::tempdir().unwrap();
        let a = write(dir.path(), "x.en", b"\nStay safe\n");
        let b = write(dir.path(), "x.de", b"x\nBleib sicher\n");
        let mut reader = read_bitext(
            &entry("de", BitextFormat::LinePair, vec![a, b]),
            0,
            Default::default(),
        )
        .unwrap();
        let records: Vec<_> = reader.by_ref().collect::<Result<_, _>>().unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].position.line, 2);
        let stats = reader.stats();
        assert_eq!(stats.dropped_empty, 1);
        assert_eq!(stats.records, stats.lines - stats.dropped_empty);
    }

    #[test]
    fn tsv_reads_and_rejects_bad_rows() {
        let dir = tempfile::tempdir().unwrap();
        let good = write(dir.path(), "g.tsv", b"Stay safe\tMantente segura\r\n");
        let recs: Vec<_> = read_bitext(
            &entry("es", BitextFormat::Tsv, vec![good]),
            3,
            Default::default(),
        )
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].other_text, "Mantente segura");
        assert_eq!(recs[0].position.corpus, 3);

        let bad = write(dir.path(), "b.tsv", b"a\tb\nonly one column\n");
        let err = read_bitext(
            &entry("es", BitextFormat::Tsv, vec![bad]),
            0,
            Default::default(),
        )
        .unwrap()
        .collect::<Result<Vec<_>, _>>()
        .unwrap_err();
        assert!(
            matches!(
                err,
                IngestError::TsvColumns {
                    line: 2,
                    columns: 1,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn manifest_happy_path_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        for f in ["nc.en", "nc.de", "epps.en", "epps.fr"] {
            write(dir.path(), f, b"x\n");
        }
        let good = write(
            dir.path(),
            "m.toml",
            br#"pivot = "en"
[[corpora]]
source = "nc"
lang = "de"
format = "line_pair"
paths = ["nc.en", "nc.de"]
[[corpora]]
source = "epps"
lang = "fr"
format = "line_pair"
paths = ["epps.en", "epps.fr"]
"#,
        );
        let m = load_manifest(&good).unwrap();
        assert_eq!(m.corpora.len(), 2);
        assert_eq!(m.corpora[0].paths[0], dir.path().join("nc.en"));

        let pivot_side = write(
            dir.path(),
            "p.toml",
            br#"pivot = "en"
[[corpora]]
source = "nc"
lang = "en"
format = "line_pair"
paths = ["nc.en", "nc.de"]
"#,
        );
        let err = load_manifest(&pivot_side).unwrap_err();
        assert!(err
            .to_string()
            .contains("pivot language listed as non-pivot side"));

        let missing = write(
            dir.path(),
            "mi.toml",
            br#"pivot = "en"
[[corpora]]
source = "nc"
lang = "de"
format = "line_pair"
paths = ["nc.en", "gone.de"]
"#,
        );
        let err = load_manifest(&missing).unwrap_err();
        assert!(err.to_string().contains("gone.de"), "{err}");

        let dup = write(
            dir.path(),
            "d.toml",
            br#"pivot = "en"
[[corpora]]
source = "nc"
lang = "de"
format = "line_pair"
paths = ["nc.en", "nc.de"]
[[corpora]]
source = "nc"
lang = "de"
format = "tsv"
paths = ["nc.de"]
"#,
        );
        assert!(matches!(
            load_manifest(&dup).unwrap_err(),
            IngestError::DuplicateSource { .. }
        ));

        let broken = write(
            dir.path(),
            "b.toml",
            b"pivot = \"en\"\n[[corpora]]\nsource = 3\n",
        );
        let err = load_manifest(&broken).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("source"), "{msg}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalize_is_idempotent(
                raw in "[ \\t\\u{a0}a-zA-Z\\u{300}-\\u{36f}\\u{c0}-\\u{17f}\\u{130}\\u{1e9e}]{0,24}",
                nfc in any::<bool>(), trim in any::<bool>(),
                collapse in any::<bool>(), fold in any::<bool>(),
            ) {
                let p = NormalizationPolicy {
                    unicode_nfc: nfc, trim, collapse_internal_whitespace: collapse, case_fold: fold,
                };
                let once = normalize_key(&raw, &p);
                prop_assert_eq!(normalize_key(&once, &p), once);
            }
        }
    }
}
