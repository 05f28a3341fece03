use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;

use multiway_core::extract::{uncapped_pair_count, ExtractionMode};
use multiway_core::ingest::{read_bitext, ReadStats};
use multiway_core::sampler::{compare_schedulers, Schedule, TargetSizeMode};
use multiway_core::stats::{pair_availability, PairCell, StoreStats};
use multiway_core::storefile::{load_store, resolve_pivot, StoreReader, StoreWriter};
use multiway_core::{
    augment_with_multiway, load_manifest, BilingualRecord, CorpusManifest, ExtractionLimits,
    LanguageId, MultiWayStore, PairDeriver, PairSummary, PairWeights, ShardedExtractor, SourceId,
    TargetWeights, Temperature,
};

use crate::{
    AugmentArgs, Command, ExtractArgs, ModeArg, PairsArgs, ScheduleArgs, SizeModeArg, StatsArgs,
};

pub const STORE_FILE: &str = "store.jsonl";
pub const CONFIG_ECHO: &str = "run_config.json";
const PROGRESS_EVERY: u64 = 1_000_000;

pub fn load_config(path: &Path) -> Result<Command> {
    let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{}: invalid run config", path.display()))
}

pub fn run(command: &Command) -> Result<()> {
    let out = match command {
        Command::Extract(a) => &a.output_dir,
        Command::Stats(a) => &a.output_dir,
        Command::Pairs(a) => &a.output_dir,
        Command::Schedule(a) => &a.output_dir,
        Command::Augment(a) => &a.output_dir,
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut echo = serde_json::to_string_pretty(command)?;
    echo.push('\n');
    write_file(&out.join(CONFIG_ECHO), echo.as_bytes())?;
    match command {
        Command::Extract(a) => extract(a),
        Command::Stats(a) => stats(a),
        Command::Pairs(a) => pairs(a),
        Command::Schedule(a) => schedule(a),
        Command::Augment(a) => augment(a),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[derive(Debug, Serialize)]
struct CorpusSummary {
    source: SourceId,
    lang: LanguageId,
    #[serde(flatten)]
    read: ReadStats,
}

#[derive(Debug, Serialize)]
struct ExtractSummary {
    pivot: LanguageId,
    lines_read: u64,
    records: u64,
    dropped_empty: u64,
    invalid_utf8_lines: u64,
    keys: u64,
    arity_histogram: BTreeMap<String, u64>,
    max_group_pairs: u64,
    keys_over_pair_cap: u64,
    corpora: Vec<CorpusSummary>,
}

/// Feeds every corpus of `manifest` to `sink`, in manifest order.
fn for_each_record(
    manifest: &CorpusManifest,
    args: &crate::NormalizationArgs,
    mut sink: impl FnMut(BilingualRecord) -> Result<()>,
) -> Result<Vec<CorpusSummary>> {
    let policy = args.policy();
    let mut summaries = Vec::new();
    let mut seen = 0u64;
    for (i, entry) in manifest.corpora.iter().enumerate() {
        info!(
            "reading {} {}-{} ({})",
            entry.source, manifest.pivot, entry.lang, entry.format
        );
        let mut reader = read_bitext(entry, i as u32, policy)?;
        for record in reader.by_ref() {
            sink(record?)?;
            seen += 1;
            if seen.is_multiple_of(PROGRESS_EVERY) {
                info!("{seen} records");
            }
        }
        summaries.push(CorpusSummary {
            source: entry.source.clone(),
            lang: entry.lang.clone(),
            read: reader.stats(),
        });
    }
    Ok(summaries)
}

fn extract(args: &ExtractArgs) -> Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let pivot = manifest.pivot.clone();
    let store_path = args.output_dir.join(STORE_FILE);
    let mut writer = StoreWriter::create(&store_path, pivot.clone())?;
    let mut histogram = multiway_core::ArityHistogram::default();
    let mut over_cap = 0u64;
    let mut emit = |ex: &multiway_core::MultiWayExample| -> Result<()> {
        histogram.add(ex.arity());
        if uncapped_pair_count(ex) > args.max_group_pairs {
            over_cap += 1;
        }
        writer.write(ex)?;
        Ok(())
    };

    let corpora = match args.mode {
        ModeArg::Memory => {
            let mut records = Vec::new();
            let corpora = for_each_record(&manifest, &args.normalization, |r| {
                records.push(r);
                Ok(())
            })?;
            let store =
                multiway_core::extract_multiway(&pivot, records, &ExtractionMode::InMemory)?;
            for ex in &store {
                emit(ex)?;
            }
            corpora
        }
        ModeArg::Sharded => {
            let spill = args.spill_dir.clone().unwrap_or_else(std::env::temp_dir);
            let mut extractor = ShardedExtractor::new(pivot.clone(), args.shard_count, &spill)?;
            let corpora = for_each_record(&manifest, &args.normalization, |r| {
                extractor.push(&r)?;
                Ok(())
            })?;
            info!(
                "grouping {} shards with {} worker(s)",
                args.shard_count, args.workers
            );
            let mut failure = None;
            extractor.finish(args.workers, |ex| {
                if failure.is_none() {
                    if let Err(e) = emit(&ex) {
                        failure = Some(e);
                    }
                }
                Ok(())
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            corpora
        }
    };
    let meta = writer.finish()?;

    let mut total = ReadStats::default();
    for c in &corpora {
        total.merge(&c.read);
    }
    let summary = ExtractSummary {
        pivot,
        lines_read: total.lines,
        records: total.records,
        dropped_empty: total.dropped_empty,
        invalid_utf8_lines: total.invalid_utf8_lines,
        keys: meta.examples,
        arity_histogram: histogram
            .buckets
            .iter()
            .map(|(a, n)| (a.to_string(), *n))
            .collect(),
        max_group_pairs: args.max_group_pairs,
        keys_over_pair_cap: over_cap,
        corpora,
    };
    write_json(&args.output_dir.join("extract_summary.json"), &summary)?;
    info!(
        "{} records, {} dropped, {} keys -> {}",
        summary.records,
        summary.dropped_empty,
        summary.keys,
        store_path.display()
    );
    Ok(())
}

fn stats(args: &StatsArgs) -> Result<()> {
    let pivot = resolve_pivot(&args.store, args.pivot.as_ref())?;
    let mut acc = StoreStats::new(pivot);
    for ex in StoreReader::open(&args.store)? {
        acc.add(&ex?);
    }
    let report = acc.report();
    write_file(
        &args.output_dir.join("stats.json"),
        report.to_json().as_bytes(),
    )?;
    write_file(
        &args.output_dir.join("stats.txt"),
        report.render_text().as_bytes(),
    )?;
    info!("{} examples summarized", report.examples);
    Ok(())
}

#[derive(Debug, Serialize)]
struct PairsReport {
    cells: Vec<PairCell>,
    summary: PairSummary,
    max_group_pairs: u64,
    min_key_chars: u64,
}

fn pairs(args: &PairsArgs) -> Result<()> {
    // Only validates the sidecar/override; pairs themselves do not depend on the pivot.
    resolve_pivot(&args.store, args.pivot.as_ref())?;
    let limits = ExtractionLimits::new(args.max_group_pairs, args.min_key_chars as usize)
        .context("limits must be at least 1")?;
    let tsv_path = args.output_dir.join("pairs.tsv");
    let mut tsv = BufWriter::new(
        File::create(&tsv_path).with_context(|| format!("creating {}", tsv_path.display()))?,
    );
    let mut deriver = PairDeriver::new(limits);
    let mut io_error = None;
    for ex in StoreReader::open(&args.store)? {
        let ex = ex?;
        deriver.add(&ex, |rec| {
            if io_error.is_none() {
                if let Err(e) = tsv.write_all(rec.to_tsv_line().as_bytes()) {
                    io_error = Some(e);
                }
            }
        });
        if let Some(e) = io_error.take() {
            return Err(e).with_context(|| format!("writing {}", tsv_path.display()));
        }
    }
    tsv.flush()
        .with_context(|| format!("writing {}", tsv_path.display()))?;
    let (matrix, summary) = deriver.finish();
    let report = PairsReport {
        cells: matrix
            .iter()
            .map(|(x, y, count)| PairCell {
                x: x.clone(),
                y: y.clone(),
                count,
            })
            .collect(),
        summary,
        max_group_pairs: args.max_group_pairs,
        min_key_chars: args.min_key_chars,
    };
    write_json(&args.output_dir.join("pair_matrix.json"), &report)?;
    write_file(
        &args.output_dir.join("pair_matrix.txt"),
        pair_availability(&matrix, &[]).as_bytes(),
    )?;
    info!(
        "{} pair records, {} keys truncated ({} pairs dropped)",
        summary.pairs_emitted, summary.truncated_keys, summary.pairs_truncated
    );
    Ok(())
}

fn target_weights(args: &ScheduleArgs, store: &MultiWayStore) -> Result<TargetWeights> {
    let weights = match &args.weights {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("{}", path.display()))?;
            let map: BTreeMap<LanguageId, u64> = serde_json::from_str(&text)
                .with_context(|| format!("{}: expected a JSON object of sizes", path.display()))?;
            TargetWeights::new(map)?
        }
        None => {
            let mode = match args.size_mode {
                SizeModeArg::Examples => TargetSizeMode::Examples,
                SizeModeArg::DerivedPairs => TargetSizeMode::DerivedPairs,
            };
            TargetWeights::from_store(store, mode)
        }
    };
    let store_langs = store.languages();
    if let Some(targets) = &args.targets {
        for t in targets {
            if !store_langs.contains(t) {
                bail!("target language {t} is absent from the store");
            }
        }
        Ok(weights.restrict(targets))
    } else {
        Ok(weights)
    }
}

const SCHEDULE_BATCH: u64 = 1 << 14;

fn schedule(args: &ScheduleArgs) -> Result<()> {
    let pivot = args.pivot.clone();
    let store = load_store(&args.store, pivot.as_ref())?;
    let temperature = Temperature::new(args.temperature)?;
    let weights = target_weights(args, &store)?;
    let schedule = Schedule::new(&store, &weights, temperature, args.seed)?;

    let path = args.output_dir.join("schedule.jsonl");
    let mut out = BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    );
    let workers = args.workers.max(1) as u64;
    let mut start = 0u64;
    while start < args.draws {
        let end = (start + SCHEDULE_BATCH * workers).min(args.draws);
        let span = (end - start).div_ceil(workers);
        let chunks: Vec<String> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let lo = (start + w * span).min(end);
                    let hi = (lo + span).min(end);
                    let schedule = &schedule;
                    scope.spawn(move || {
                        let mut buf = String::new();
                        for rec in schedule.records(lo..hi) {
                            buf.push_str(&rec.to_json_line());
                            buf.push('\n');
                        }
                        buf
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("schedule worker panicked"))
                .collect()
        });
        for chunk in chunks {
            out.write_all(chunk.as_bytes())
                .with_context(|| format!("writing {}", path.display()))?;
        }
        start = end;
    }
    out.flush()
        .with_context(|| format!("writing {}", path.display()))?;

    if args.compare {
        let (matrix, _) = {
            let mut d = PairDeriver::new(ExtractionLimits {
                max_group_pairs: u64::MAX,
                min_key_chars: 1,
            });
            for ex in &store {
                d.add(ex, |_| {});
            }
            d.finish()
        };
        let pair_weights = PairWeights::from_pair_matrix(&matrix);
        let report = compare_schedulers(
            &store,
            &pair_weights,
            &weights,
            temperature,
            args.draws,
            args.seed,
        )?;
        write_json(&args.output_dir.join("compare.json"), &report)?;
        write_file(
            &args.output_dir.join("compare.txt"),
            report.render_text().as_bytes(),
        )?;
    }
    info!("{} draws -> {}", args.draws, path.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct AugmentSummary {
    pivot: LanguageId,
    new_records: u64,
    keys: u64,
    keys_found_in_base: u64,
    arity_histogram: BTreeMap<String, u64>,
}

fn augment(args: &AugmentArgs) -> Result<()> {
    let base_pivot = resolve_pivot(&args.store, args.pivot.as_ref())?;
    let manifest = load_manifest(&args.manifest)?;
    if manifest.pivot != base_pivot {
        bail!(
            "pivot mismatch: base store {} uses {}, manifest {} uses {}",
            args.store.display(),
            base_pivot,
            args.manifest.display(),
            manifest.pivot
        );
    }
    let base = load_store(&args.store, Some(&base_pivot))?;
    let mut records = Vec::new();
    for_each_record(&manifest, &args.normalization, |r| {
        records.push(r);
        Ok(())
    })?;
    let new_records = records.len() as u64;
    let augmented = augment_with_multiway(records, &base)?;
    let found = augmented
        .iter()
        .filter(|e| base.get(e.key()).is_some())
        .count() as u64;
    let store_path: PathBuf = args.output_dir.join(STORE_FILE);
    multiway_core::storefile::write_store(&store_path, &augmented)?;
    let summary = AugmentSummary {
        pivot: base_pivot,
        new_records,
        keys: augmented.len() as u64,
        keys_found_in_base: found,
        arity_histogram: multiway_core::arity_histogram(&augmented)
            .buckets
            .iter()
            .map(|(a, n)| (a.to_string(), *n))
            .collect(),
    };
    write_json(&args.output_dir.join("augment_summary.json"), &summary)?;
    info!(
        "{} keys ({} matched the base store) -> {}",
        summary.keys,
        found,
        store_path.display()
    );
    Ok(())
}
