//! Synthetic corpora and a naive grouping reference shared by the integration and
//! acceptance suites.
#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use multiway_core::model::RecordPosition;
use multiway_core::{
    extract_multiway, target_distribution, BilingualRecord, ExtractionMode, LanguageId,
    MultiWayExample, MultiWayStore, Schedule, SourceId, TargetWeights, Temperature, Translation,
};

pub const PIVOT: &str = "en";
pub const OTHERS: [&str; 5] = ["cs", "de", "es", "fr", "ru"];
pub const SOURCES: [&str; 4] = ["cc", "epps", "nc", "un"];

pub fn lang(code: &str) -> LanguageId {
    LanguageId::new(code).unwrap()
}

pub fn src(tag: &str) -> SourceId {
    SourceId::new(tag).unwrap()
}

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub records: usize,
    /// Size of the pivot sentence pool; fewer keys means more collisions.
    pub keys: usize,
    /// Distinct texts per (key, language).
    pub variants: usize,
    pub corpora: u32,
}

fn key_text(id: usize) -> String {
    format!("sentence {id:07} stays put")
}

/// Records with already-normalized keys, random raw pivot spellings and random
/// positions.
pub fn synth_records(seed: u64, cfg: SynthConfig) -> Vec<BilingualRecord> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..cfg.records)
        .map(|i| {
            let id = rng.gen_range(0..cfg.keys);
            let key = key_text(id);
            let other = OTHERS[rng.gen_range(0..OTHERS.len())];
            let variant = rng.gen_range(0..cfg.variants);
            let raw = match rng.gen_range(0..3) {
                0 => key.clone(),
                1 => format!(" {key}"),
                _ => key.replace(' ', "  "),
            };
            BilingualRecord {
                pivot_text: key,
                pivot_raw: raw,
                other_lang: lang(other),
                other_text: format!("{other} {id} v{variant}"),
                source: src(SOURCES[rng.gen_range(0..SOURCES.len())]),
                position: RecordPosition {
                    corpus: rng.gen_range(0..cfg.corpora),
                    line: i as u64 + 1,
                },
            }
        })
        .collect()
}

fn key_hash(key: &str) -> u64 {
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    h.finish()
}

/// Group-by on the exact key with a linear scan over the groups found so far (a hash
/// is compared first only to make the scan cheaper). Returns canonical JSON lines in
/// key order.
pub fn naive_extract(pivot: &LanguageId, records: &[BilingualRecord]) -> Vec<String> {
    struct Group<'a> {
        hash: u64,
        key: &'a str,
        members: Vec<&'a BilingualRecord>,
    }
    let mut groups: Vec<Group<'_>> = Vec::new();
    for r in records {
        let hash = key_hash(&r.pivot_text);
        match groups
            .iter_mut()
            .find(|g| g.hash == hash && g.key == r.pivot_text)
        {
            Some(g) => g.members.push(r),
            None => groups.push(Group {
                hash,
                key: &r.pivot_text,
                members: vec![r],
            }),
        }
    }
    groups.sort_by(|a, b| a.key.cmp(b.key));
    groups
        .iter()
        .map(|g| {
            let mut triples: Vec<(LanguageId, String, SourceId)> = g
                .members
                .iter()
                .map(|r| (r.other_lang.clone(), r.other_text.clone(), r.source.clone()))
                .collect();
            triples.sort();
            triples.dedup();
            let mut translations: BTreeMap<LanguageId, Vec<Translation>> = BTreeMap::new();
            for (l, text, s) in triples {
                let list = translations.entry(l).or_default();
                match list.last_mut() {
                    Some(t) if t.text == text => {
                        t.sources.insert(s);
                    }
                    _ => list.push(Translation {
                        text,
                        sources: BTreeSet::from([s]),
                    }),
                }
            }
            let first = g
                .members
                .iter()
                .min_by(|a, b| (a.position, &a.pivot_raw).cmp(&(b.position, &b.pivot_raw)))
                .unwrap();
            let pivot_sources: BTreeSet<SourceId> =
                g.members.iter().map(|r| r.source.clone()).collect();
            translations.insert(
                pivot.clone(),
                vec![Translation {
                    text: first.pivot_raw.clone(),
                    sources: pivot_sources,
                }],
            );
            MultiWayExample::new(g.key, translations)
                .unwrap()
                .to_json_line()
        })
        .collect()
}

/// One record per unordered pair of non-pivot languages, two languages sharing a key.
pub fn complete_graph_records() -> Vec<BilingualRecord> {
    let mut out = Vec::new();
    let mut line = 0;
    for (i, a) in OTHERS.iter().enumerate() {
        for b in &OTHERS[i + 1..] {
            let key = format!("shared {a} {b}");
            for l in [a, b] {
                line += 1;
                out.push(BilingualRecord {
                    pivot_text: key.clone(),
                    pivot_raw: key.clone(),
                    other_lang: lang(l),
                    other_text: format!("{l} for {a}-{b}"),
                    source: src("nc"),
                    position: RecordPosition { corpus: 0, line },
                });
            }
        }
    }
    out
}

/// Writes one line_pair corpus per non-pivot language plus a manifest and returns
/// the manifest path. Record `i` of the stream goes to language `i % 5`.
pub fn write_line_pair_corpora(
    dir: &Path,
    seed: u64,
    records: usize,
    keys: usize,
    variants: usize,
) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut writers: Vec<(BufWriter<File>, BufWriter<File>)> = OTHERS
        .iter()
        .map(|l| {
            let p = BufWriter::with_capacity(
                1 << 20,
                File::create(dir.join(format!("{l}.en"))).unwrap(),
            );
            let o = BufWriter::with_capacity(
                1 << 20,
                File::create(dir.join(format!("{l}.{l}"))).unwrap(),
            );
            (p, o)
        })
        .collect();
    for i in 0..records {
        let slot = i % OTHERS.len();
        let id = rng.gen_range(0..keys);
        let variant = rng.gen_range(0..variants);
        let (p, o) = &mut writers[slot];
        writeln!(p, "{}", key_text(id)).unwrap();
        writeln!(o, "{} {id} v{variant}", OTHERS[slot]).unwrap();
    }
    let mut manifest = String::from("pivot = \"en\"\n");
    for (l, (p, o)) in OTHERS.iter().zip(writers.iter_mut()) {
        p.flush().unwrap();
        o.flush().unwrap();
        manifest.push_str(&format!(
            "\n[[corpora]]\nsource = \"synth-{l}\"\nlang = \"{l}\"\nformat = \"line_pair\"\npaths = [\"{l}.en\", \"{l}.{l}\"]\n"
        ));
    }
    let path = dir.join("manifest.toml");
    std::fs::write(&path, manifest).unwrap();
    path
}

/// Store with every non-pivot language present at a different rate, 1 to 3
/// translations per language and arities from 2 to 6.
pub fn skewed_store(seed: u64, examples: usize) -> MultiWayStore {
    let rates = [0.9, 0.6, 0.4, 0.2, 0.1];
    let mut rng = StdRng::seed_from_u64(seed);
    let mut records = Vec::new();
    for k in 0..examples {
        let key = key_text(k);
        let mut langs: Vec<&str> = OTHERS
            .iter()
            .zip(rates)
            .filter_map(|(l, r)| rng.gen_bool(r).then_some(*l))
            .collect();
        if langs.is_empty() {
            langs.push(OTHERS[k % OTHERS.len()]);
        }
        for l in langs {
            for v in 0..rng.gen_range(1..=3) {
                records.push(BilingualRecord {
                    pivot_text: key.clone(),
                    pivot_raw: key.clone(),
                    other_lang: lang(l),
                    other_text: format!("{l} {k} v{v}"),
                    source: src(SOURCES[v % SOURCES.len()]),
                    position: RecordPosition {
                        corpus: 0,
                        line: records.len() as u64 + 1,
                    },
                });
            }
        }
    }
    extract_multiway(&lang(PIVOT), records, &ExtractionMode::InMemory).unwrap()
}

pub struct Fidelity {
    /// L1 distance between empirical and analytic target marginals.
    pub target_l1: f64,
    /// Largest per-target gap between observed source-language frequency and the
    /// frequency expected from a uniform pick among each drawn example's languages.
    pub source_gap: f64,
}

pub fn fidelity(
    store: &MultiWayStore,
    weights: &TargetWeights,
    t: f64,
    seed: u64,
    draws: u64,
) -> Fidelity {
    let t = Temperature::new(t).unwrap();
    let schedule = Schedule::new(store, weights, t, seed).unwrap();
    let analytic = target_distribution(weights, t);
    let mut target_counts: BTreeMap<LanguageId, u64> = BTreeMap::new();
    let mut observed: BTreeMap<(LanguageId, LanguageId), f64> = BTreeMap::new();
    let mut expected: BTreeMap<(LanguageId, LanguageId), f64> = BTreeMap::new();
    for i in 0..draws {
        let d = schedule.draw(i);
        *target_counts.entry(d.target.clone()).or_insert(0) += 1;
        *observed
            .entry((d.target.clone(), d.source.clone()))
            .or_insert(0.0) += 1.0;
        let share = 1.0 / (d.example.arity() - 1) as f64;
        for l in d.example.languages().filter(|l| *l != d.target) {
            *expected.entry((d.target.clone(), l.clone())).or_insert(0.0) += share;
        }
    }
    let target_l1 = analytic
        .iter()
        .map(|(l, p)| (target_counts.get(l).copied().unwrap_or(0) as f64 / draws as f64 - p).abs())
        .sum::<f64>()
        + target_counts
            .keys()
            .filter(|l| !analytic.contains_key(*l))
            .map(|l| target_counts[l] as f64 / draws as f64)
            .sum::<f64>();
    let source_gap = expected
        .iter()
        .map(|((tgt, s), e)| {
            let o = observed
                .get(&(tgt.clone(), s.clone()))
                .copied()
                .unwrap_or(0.0);
            (o - e).abs() / target_counts[tgt] as f64
        })
        .fold(0.0, f64::max);
    Fidelity {
        target_l1,
        source_gap,
    }
}

/// Equal-size English-centric corpora over the same English sentences: every example
/// has all six languages.
pub fn multiway_store(examples: usize) -> MultiWayStore {
    let mut records = Vec::new();
    for l in OTHERS {
        for k in 0..examples {
            let key = key_text(k);
            records.push(BilingualRecord {
                pivot_text: key.clone(),
                pivot_raw: key,
                other_lang: lang(l),
                other_text: format!("{l} {k}"),
                source: src("nc"),
                position: RecordPosition {
                    corpus: 0,
                    line: records.len() as u64 + 1,
                },
            });
        }
    }
    extract_multiway(&lang(PIVOT), records, &ExtractionMode::InMemory).unwrap()
}
