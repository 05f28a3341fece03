//! The pivot join: grouping bilingual records by pivot key into multi-way examples,
//! plus everything derived from a grouped store (direct pairs, arity filters,
//! target selection and augmentation of new corpora).

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::escape::{escape_field, split_escaped_fields};
use crate::model::{
    BilingualRecord, ExampleBuilder, LanguageId, ModelError, MultiWayExample, PairMatrix,
    RecordPosition, SourceId,
};

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("spill I/O failure at {path}")]
    Spill {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corrupt spill record in {path}: {message}")]
    CorruptSpill { path: PathBuf, message: String },
    #[error("record for key {key:?} uses the pivot language {lang} as its other side")]
    PivotAsOther { key: String, lang: LanguageId },
    #[error("invalid arity range {min}..={max}: need 2 <= min <= max")]
    InvalidArityRange { min: usize, max: usize },
    #[error("store pivot {store} does not match record pivot {records}")]
    PivotMismatch {
        store: LanguageId,
        records: LanguageId,
    },
    #[error("shard count must be at least 1")]
    ZeroShards,
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Where grouping happens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionMode {
    InMemory,
    /// Records are routed to `shard_count` spill files under `spill_directory`, each
    /// shard is grouped on its own, and the sorted shard outputs are merged.
    Sharded {
        shard_count: usize,
        spill_directory: PathBuf,
        workers: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionLimits {
    pub max_group_pairs: u64,
    pub min_key_chars: usize,
}

impl Default for ExtractionLimits {
    fn default() -> Self {
        ExtractionLimits {
            max_group_pairs: 10_000,
            min_key_chars: 1,
        }
    }
}

impl ExtractionLimits {
    pub fn new(max_group_pairs: u64, min_key_chars: usize) -> Option<Self> {
        (max_group_pairs >= 1 && min_key_chars >= 1).then_some(ExtractionLimits {
            max_group_pairs,
            min_key_chars,
        })
    }
}

/// Multi-way examples sorted ascending by key bytes, one per distinct key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiWayStore {
    pivot: LanguageId,
    examples: Vec<MultiWayExample>,
}

impl MultiWayStore {
    pub fn empty(pivot: LanguageId) -> Self {
        MultiWayStore {
            pivot,
            examples: Vec::new(),
        }
    }

    /// Builds a store from examples in any order. Keys must be distinct.
    pub fn from_examples(
        pivot: LanguageId,
        mut examples: Vec<MultiWayExample>,
    ) -> Result<Self, ModelError> {
        examples.sort_by(|a, b| a.key().cmp(b.key()));
        if let Some(w) = examples.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(ModelError::DuplicateKey(w[0].key().to_owned()));
        }
        Ok(MultiWayStore { pivot, examples })
    }

    pub fn pivot(&self) -> &LanguageId {
        &self.pivot
    }

    pub fn examples(&self) -> &[MultiWayExample] {
        &self.examples
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MultiWayExample> {
        self.examples.iter()
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&MultiWayExample> {
        self.examples
            .binary_search_by(|e| e.key().cmp(key))
            .ok()
            .map(|i| &self.examples[i])
    }

    /// Languages present anywhere in the store.
    pub fn languages(&self) -> BTreeSet<LanguageId> {
        self.examples
            .iter()
            .flat_map(|e| e.languages().cloned())
            .collect()
    }

    /// Writes the store as JSON lines, one example per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for ex in &self.examples {
            serde_json::to_writer(&mut out, ex)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }
}

impl<'a> IntoIterator for &'a MultiWayStore {
    type Item = &'a MultiWayExample;
    type IntoIter = std::slice::Iter<'a, MultiWayExample>;

    fn into_iter(self) -> Self::IntoIter {
        self.examples.iter()
    }
}

fn check_record(pivot: &LanguageId, record: &BilingualRecord) -> Result<(), ExtractError> {
    if record.other_lang == *pivot {
        return Err(ExtractError::PivotAsOther {
            key: record.pivot_text.clone(),
            lang: record.other_lang.clone(),
        });
    }
    Ok(())
}

/// Groups records by their normalized pivot key.
///
/// The result does not depend on record order, shard count or worker count.
pub fn extract_multiway<I>(
    pivot: &LanguageId,
    records: I,
    mode: &ExtractionMode,
) -> Result<MultiWayStore, ExtractError>
where
    I: IntoIterator<Item = BilingualRecord>,
{
    match mode {
        ExtractionMode::InMemory => {
            let mut table = FlatTable::default();
            for record in records {
                check_record(pivot, &record)?;
                table.push(
                    &record.pivot_text,
                    &record.pivot_raw,
                    &record.other_lang,
                    &record.other_text,
                    &record.source,
                    record.position,
                );
            }
            let mut examples = Vec::new();
            table.group(pivot, |ex| {
                examples.push(ex);
                Ok(())
            })?;
            Ok(MultiWayStore {
                pivot: pivot.clone(),
                examples,
            })
        }
        ExtractionMode::Sharded {
            shard_count,
            spill_directory,
            workers,
        } => {
            let mut extractor =
                ShardedExtractor::new(pivot.clone(), *shard_count, spill_directory)?;
            for record in records {
                extractor.push(&record)?;
            }
            let mut examples = Vec::new();
            extractor.finish(*workers, |ex| {
                examples.push(ex);
                Ok(())
            })?;
            Ok(MultiWayStore {
                pivot: pivot.clone(),
                examples,
            })
        }
    }
}

/// Records in a compact form (interned language and source, boxed strings), grouped
/// by sorting rather than through per-key maps.
#[derive(Default)]
struct FlatTable {
    langs: Vec<LanguageId>,
    sources: Vec<SourceId>,
    rows: Vec<FlatRow>,
}

struct FlatRow {
    key: Box<str>,
    text: Box<str>,
    /// `None` when the raw pivot text equals the key.
    raw: Option<Box<str>>,
    position: RecordPosition,
    lang: u32,
    source: u32,
}

fn intern<T: PartialEq + Clone>(table: &mut Vec<T>, value: &T) -> u32 {
    match table.iter().position(|v| v == value) {
        Some(i) => i as u32,
        None => {
            table.push(value.clone());
            (table.len() - 1) as u32
        }
    }
}

impl FlatTable {
    fn push(
        &mut self,
        key: &str,
        raw: &str,
        lang: &LanguageId,
        text: &str,
        source: &SourceId,
        position: RecordPosition,
    ) {
        let lang = intern(&mut self.langs, lang);
        let source = intern(&mut self.sources, source);
        self.rows.push(FlatRow {
            key: key.into(),
            text: text.into(),
            raw: (raw != key).then(|| raw.into()),
            position,
            lang,
            source,
        });
    }

    /// Sorts by key and hands one example per key to `sink`, in key order.
    fn group<F>(self, pivot: &LanguageId, mut sink: F) -> Result<(), ExtractError>
    where
        F: FnMut(MultiWayExample) -> Result<(), ExtractError>,
    {
        let FlatTable {
            langs,
            sources,
            mut rows,
        } = self;
        rows.sort_unstable_by(|a, b| a.key.cmp(&b.key));
        for group in rows.chunk_by(|a, b| a.key == b.key) {
            let key: &str = &group[0].key;
            let mut builder = ExampleBuilder::new(key, pivot.clone());
            for row in group {
                let raw = row.raw.as_deref().unwrap_or(key);
                let source = &sources[row.source as usize];
                builder.offer_pivot(row.position, raw, source);
                builder.add_translation(&langs[row.lang as usize], &row.text, source);
            }
            sink(builder.build()?)?;
        }
        Ok(())
    }
}

/// 64-bit FNV-1a; only routes keys to shards, grouping always compares full keys.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// External-memory grouping.
///
/// Records are hash-routed by key into spill files. Each shard is grouped
/// independently (in parallel, at most one worker per shard) into a key-sorted run,
/// and the runs are k-way merged so that the overall output is sorted by key.
/// Peak memory is about `workers` shards' worth of grouped data.
pub struct ShardedExtractor {
    pivot: LanguageId,
    dir: tempfile::TempDir,
    writers: Vec<BufWriter<File>>,
    paths: Vec<PathBuf>,
    line: String,
}

impl ShardedExtractor {
    pub fn new(
        pivot: LanguageId,
        shard_count: usize,
        spill_dir: &Path,
    ) -> Result<Self, ExtractError> {
        if shard_count == 0 {
            return Err(ExtractError::ZeroShards);
        }
        std::fs::create_dir_all(spill_dir).map_err(|source| ExtractError::Spill {
            path: spill_dir.to_owned(),
            source,
        })?;
        let dir = tempfile::Builder::new()
            .prefix("multiway-spill-")
            .tempdir_in(spill_dir)
            .map_err(|source| ExtractError::Spill {
                path: spill_dir.to_owned(),
                source,
            })?;
        let mut writers = Vec::with_capacity(shard_count);
        let mut paths = Vec::with_capacity(shard_count);
        for i in 0..shard_count {
            let path = dir.path().join(format!("shard-{i:05}.spill"));
            let file = File::create(&path).map_err(|source| ExtractError::Spill {
                path: path.clone(),
                source,
            })?;
            writers.push(BufWriter::with_capacity(1 << 16, file));
            paths.push(path);
        }
        Ok(ShardedExtractor {
            pivot,
            dir,
            writers,
            paths,
            line: String::new(),
        })
    }

    pub fn push(&mut self, record: &BilingualRecord) -> Result<(), ExtractError> {
        check_record(&self.pivot, record)?;
        let shard = (fnv1a(record.pivot_text.as_bytes()) % self.writers.len() as u64) as usize;
        self.line.clear();
        for field in [
            record.pivot_text.as_str(),
            record.pivot_raw.as_str(),
            record.other_lang.as_str(),
            record.other_text.as_str(),
            record.source.as_str(),
        ] {
            escape_field(field, &mut self.line);
            self.line.push('\t');
        }
        use std::fmt::Write as _;
        let _ = writeln!(
            self.line,
            "{}\t{}",
            record.position.corpus, record.position.line
        );
        self.writers[shard]
            .write_all(self.line.as_bytes())
            .map_err(|source| ExtractError::Spill {
                path: self.paths[shard].clone(),
                source,
            })
    }

    /// Groups every shard and hands the examples to `sink` in ascending key order.
    pub fn finish<F>(self, workers: usize, mut sink: F) -> Result<(), ExtractError>
    where
        F: FnMut(MultiWayExample) -> Result<(), ExtractError>,
    {
        let ShardedExtractor {
            pivot,
            dir,
            writers,
            paths,
            ..
        } = self;
        for (w, path) in writers.into_iter().zip(&paths) {
            let mut w = w;
            w.flush().map_err(|source| ExtractError::Spill {
                path: path.clone(),
                source,
            })?;
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| ExtractError::Pool(e.to_string()))?;
        let runs: Vec<PathBuf> = pool.install(|| {
            paths
                .par_iter()
                .map(|p| group_shard(&pivot, p))
                .collect::<Result<Vec<_>, _>>()
        })?;
        merge_runs(&runs, &mut sink)?;
        debug!(
            "merged {} shard runs from {}",
            runs.len(),
            dir.path().display()
        );
        drop(dir);
        Ok(())
    }
}

fn spill_err(path: &Path) -> impl Fn(io::Error) -> ExtractError + '_ {
    move |source| ExtractError::Spill {
        path: path.to_owned(),
        source,
    }
}

fn parse_spill_line(
    path: &Path,
    line: &str,
) -> Result<(String, String, LanguageId, String, SourceId, RecordPosition), ExtractError> {
    let corrupt = |message: String| ExtractError::CorruptSpill {
        path: path.to_owned(),
        message,
    };
    let fields = split_escaped_fields(line).map_err(|e| corrupt(e.to_string()))?;
    let [key, raw, lang, text, source, corpus, line_no]: [String; 7] = fields
        .try_into()
        .map_err(|f: Vec<String>| corrupt(format!("expected 7 fields, got {}", f.len())))?;
    let lang = LanguageId::new(lang).map_err(|e| corrupt(e.to_string()))?;
    let source = SourceId::new(source).map_err(|e| corrupt(e.to_string()))?;
    let position = RecordPosition {
        corpus: corpus
            .parse()
            .map_err(|_| corrupt("bad corpus index".into()))?,
        line: line_no
            .parse()
            .map_err(|_| corrupt("bad line number".into()))?,
    };
    Ok((key, raw, lang, text, source, position))
}

/// Groups one spill file into a key-sorted run file and removes the spill.
fn group_shard(pivot: &LanguageId, spill: &Path) -> Result<PathBuf, ExtractError> {
    let reader = BufReader::new(File::open(spill).map_err(spill_err(spill))?);
    let mut table = FlatTable::default();
    for line in reader.lines() {
        let line = line.map_err(spill_err(spill))?;
        let (key, raw, lang, text, source, position) = parse_spill_line(spill, &line)?;
        table.push(&key, &raw, &lang, &text, &source, position);
    }
    std::fs::remove_file(spill).map_err(spill_err(spill))?;
    let run = spill.with_extension("run");
    let mut out = BufWriter::new(File::create(&run).map_err(spill_err(&run))?);
    table.group(pivot, |ex| {
        serde_json::to_writer(&mut out, &ex).map_err(|e| spill_err(&run)(e.into()))?;
        out.write_all(b"\n").map_err(spill_err(&run))
    })?;
    out.flush().map_err(spill_err(&run))?;
    Ok(run)
}

struct RunCursor {
    path: PathBuf,
    lines: io::Lines<BufReader<File>>,
}

impl RunCursor {
    fn next_example(&mut self) -> Result<Option<MultiWayExample>, ExtractError> {
        match self.lines.next() {
            None => Ok(None),
            Some(line) => {
                let line = line.map_err(spill_err(&self.path))?;
                serde_json::from_str(&line)
                    .map(Some)
                    .map_err(|e| ExtractError::CorruptSpill {
                        path: self.path.clone(),
                        message: e.to_string(),
                    })
            }
        }
    }
}

fn merge_runs<F>(runs: &[PathBuf], sink: &mut F) -> Result<(), ExtractError>
where
    F: FnMut(MultiWayExample) -> Result<(), ExtractError>,
{
    let mut cursors = Vec::with_capacity(runs.len());
    let mut heads: Vec<Option<MultiWayExample>> = Vec::with_capacity(runs.len());
    let mut heap = BinaryHeap::new();
    for (i, path) in runs.iter().enumerate() {
        let file = File::open(path).map_err(spill_err(path))?;
        let mut cursor = RunCursor {
            path: path.clone(),
            lines: BufReader::with_capacity(1 << 16, file).lines(),
        };
        let head = cursor.next_example()?;
        if let Some(ex) = &head {
            heap.push(Reverse((ex.key().to_owned(), i)));
        }
        cursors.push(cursor);
        heads.push(head);
    }
    while let Some(Reverse((_, i))) = heap.pop() {
        let ex = heads[i].take().expect("heap entry without head");
        let next = cursors[i].next_example()?;
        if let Some(n) = &next {
            heap.push(Reverse((n.key().to_owned(), i)));
        }
        heads[i] = next;
        sink(ex)?;
    }
    for path in runs {
        std::fs::remove_file(path).map_err(spill_err(path))?;
    }
    Ok(())
}

/// One direct training pair derived from a multi-way example. `lang_x` sorts
/// before `lang_y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub lang_x: LanguageId,
    pub lang_y: LanguageId,
    pub text_x: String,
    pub text_y: String,
    pub sources: BTreeSet<SourceId>,
}

impl PairRecord {
    /// `lang_x  lang_y  text_x  text_y  sources` separated by TABs, newline-terminated.
    pub fn to_tsv_line(&self) -> String {
        let mut line = String::with_capacity(self.text_x.len() + self.text_y.len() + 32);
        line.push_str(self.lang_x.as_str());
        line.push('\t');
        line.push_str(self.lang_y.as_str());
        line.push('\t');
        escape_field(&self.text_x, &mut line);
        line.push('\t');
        escape_field(&self.text_y, &mut line);
        line.push('\t');
        let joined: Vec<&str> = self.sources.iter().map(SourceId::as_str).collect();
        escape_field(&joined.join(","), &mut line);
        line.push('\n');
        line
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSummary {
    pub examples: u64,
    pub pairs_emitted: u64,
    /// Keys whose cross product exceeded `max_group_pairs`.
    pub truncated_keys: u64,
    pub pairs_truncated: u64,
    /// Keys shorter than `min_key_chars`, skipped entirely.
    pub skipped_short_keys: u64,
}

/// Number of pair records an example yields without a cap: the sum over language
/// pairs of the product of their translation counts.
pub fn uncapped_pair_count(example: &MultiWayExample) -> u64 {
    let sizes: Vec<u64> = example
        .translations()
        .values()
        .map(|v| v.len() as u64)
        .collect();
    let total: u64 = sizes.iter().sum();
    let squares: u64 = sizes.iter().map(|s| s * s).sum();
    (total * total - squares) / 2
}

/// Streaming pair derivation; feed examples one at a time.
#[derive(Debug, Clone)]
pub struct PairDeriver {
    limits: ExtractionLimits,
    matrix: PairMatrix,
    summary: PairSummary,
}

impl PairDeriver {
    pub fn new(limits: ExtractionLimits) -> Self {
        PairDeriver {
            limits,
            matrix: PairMatrix::new(),
            summary: PairSummary::default(),
        }
    }

    /// Emits the cross product of every unordered language pair in `example`, in
    /// canonical order, stopping at the per-key cap.
    pub fn add<F: FnMut(PairRecord)>(&mut self, example: &MultiWayExample, mut emit: F) {
        self.summary.examples += 1;
        if example.key().chars().count() < self.limits.min_key_chars {
            self.summary.skipped_short_keys += 1;
            return;
        }
        let cap = self.limits.max_group_pairs;
        let mut emitted = 0u64;
        let langs: Vec<(&LanguageId, &Vec<_>)> = example.translations().iter().collect();
        'outer: for (i, (lx, tx)) in langs.iter().enumerate() {
            for (ly, ty) in &langs[i + 1..] {
                for a in tx.iter() {
                    for b in ty.iter() {
                        if emitted == cap {
                            break 'outer;
                        }
                        emit(PairRecord {
                            lang_x: (*lx).clone(),
                            lang_y: (*ly).clone(),
                            text_x: a.text.clone(),
                            text_y: b.text.clone(),
                            sources: a.sources.union(&b.sources).cloned().collect(),
                        });
                        self.matrix.add(lx, ly, 1);
                        emitted += 1;
                    }
                }
            }
        }
        let full = uncapped_pair_count(example);
        if full > emitted {
            self.summary.truncated_keys += 1;
            self.summary.pairs_truncated += full - emitted;
            warn!(
                "key {:?}: {} pairs truncated to {}",
                example.key(),
                full,
                emitted
            );
        }
        self.summary.pairs_emitted += emitted;
    }

    pub fn finish(self) -> (PairMatrix, PairSummary) {
        (self.matrix, self.summary)
    }
}

/// Derives all direct pairs of a store, with the per-key cap from `limits`.
pub fn derive_pairs(
    store: &MultiWayStore,
    limits: ExtractionLimits,
) -> (PairMatrix, Vec<PairRecord>, PairSummary) {
    let mut deriver = PairDeriver::new(limits);
    let mut records = Vec::new();
    for ex in store {
        deriver.add(ex, |r| records.push(r));
    }
    let (matrix, summary) = deriver.finish();
    (matrix, records, summary)
}

/// Keeps examples with `min_arity <= arity <= max_arity`; `None` means unbounded.
pub fn filter_by_arity(
    store: &MultiWayStore,
    min_arity: usize,
    max_arity: Option<usize>,
) -> Result<MultiWayStore, ExtractError> {
    let max = max_arity.unwrap_or(usize::MAX);
    if min_arity < 2 || min_arity > max {
        return Err(ExtractError::InvalidArityRange {
            min: min_arity,
            max,
        });
    }
    Ok(MultiWayStore {
        pivot: store.pivot.clone(),
        examples: store
            .iter()
            .filter(|e| (min_arity..=max).contains(&e.arity()))
            .cloned()
            .collect(),
    })
}

/// Examples with at least one translation in `target`, in store order.
pub fn select_by_target<'a>(
    store: &'a MultiWayStore,
    target: &LanguageId,
) -> impl Iterator<Item = &'a MultiWayExample> + 'a {
    let target = target.clone();
    store.iter().filter(move |e| e.contains(&target))
}

/// Groups `new_records` by key and merges in whatever `base` holds under the same
/// keys. The result covers the new records' keys only; `base` is not modified.
pub fn augment_with_multiway<I>(
    new_records: I,
    base: &MultiWayStore,
) -> Result<MultiWayStore, ExtractError>
where
    I: IntoIterator<Item = BilingualRecord>,
{
    let fresh = extract_multiway(&base.pivot, new_records, &ExtractionMode::InMemory)?;
    let examples = fresh
        .examples
        .into_iter()
        .map(|ex| match base.get(ex.key()) {
            None => Ok(ex),
            Some(existing) => {
                let mut b = ExampleBuilder::new(ex.key(), base.pivot.clone());
                b.merge_example(&ex);
                b.merge_example(existing);
                b.build()
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MultiWayStore {
        pivot: base.pivot.clone(),
        examples,
    })
}
