//! Corpus diagnostics over a multi-way store.
//!
//! Everything here is a fold: [`StoreStats`] accumulates one example at a time and
//! partial accumulators merge associatively, so results do not depend on how the
//! store was partitioned.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::MultiWayStore;
use crate::model::{ArityHistogram, LanguageId, MultiWayExample, PairMatrix, SourceId};
use crate::sampler::{
    pair_distribution, target_distribution, PairWeights, TargetWeights, Temperature,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("empty weight map")]
    EmptyWeights,
    #[error("pair-based shares need per-pair sizes")]
    PairSizesRequired,
}

/// Counts per unordered pair of sources; the diagonal is allowed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OverlapMatrix {
    counts: BTreeMap<(SourceId, SourceId), u64>,
}

impl OverlapMatrix {
    fn ordered(a: &SourceId, b: &SourceId) -> (SourceId, SourceId) {
        if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    }

    pub fn add(&mut self, a: &SourceId, b: &SourceId, n: u64) {
        if n > 0 {
            *self.counts.entry(Self::ordered(a, b)).or_insert(0) += n;
        }
    }

    pub fn get(&self, a: &SourceId, b: &SourceId) -> u64 {
        self.counts.get(&Self::ordered(a, b)).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &OverlapMatrix) {
        for ((a, b), n) in &other.counts {
            self.add(a, b, *n);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&SourceId, &SourceId, u64)> {
        self.counts.iter().map(|((a, b), n)| (a, b, *n))
    }

    pub fn sources(&self) -> BTreeSet<SourceId> {
        self.counts
            .keys()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Exact mean of arities, kept as a sum over a count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MeanArity {
    pub arity_sum: u64,
    pub examples: u64,
}

impl MeanArity {
    pub fn value(&self) -> f64 {
        self.arity_sum as f64 / self.examples as f64
    }
}

/// Adds one example's contribution to the source-overlap matrix.
///
/// For every unordered pair of non-pivot translations under the key, each
/// combination of their sources is counted once. Instead of enumerating translation
/// pairs this works from per-source counts: with `n_a` translations carrying source
/// `a` and `n_ab` carrying both `a` and `b`, the `{a, b}` cell gains `n_a * n_b - n_ab`
/// and the `{a, a}` cell gains `n_a * (n_a - 1) / 2`.
pub fn add_overlap(matrix: &mut OverlapMatrix, example: &MultiWayExample, pivot: &LanguageId) {
    let translations: Vec<&BTreeSet<SourceId>> = example
        .translations()
        .iter()
        .filter(|(lang, _)| *lang != pivot)
        .flat_map(|(_, list)| list.iter().map(|t| &t.sources))
        .collect();
    if translations.len() < 2 {
        return;
    }
    let mut single: BTreeMap<&SourceId, u64> = BTreeMap::new();
    let mut both: BTreeMap<(&SourceId, &SourceId), u64> = BTreeMap::new();
    for sources in &translations {
        for a in sources.iter() {
            *single.entry(a).or_insert(0) += 1;
        }
        for (i, a) in sources.iter().enumerate() {
            for b in sources.iter().skip(i + 1) {
                *both.entry((a, b)).or_insert(0) += 1;
            }
        }
    }
    let present: Vec<(&SourceId, u64)> = single.into_iter().collect();
    for (i, (a, na)) in present.iter().enumerate() {
        matrix.add(a, a, na * (na - 1) / 2);
        for (b, nb) in &present[i + 1..] {
            let nab = both.get(&(*a, *b)).copied().unwrap_or(0);
            matrix.add(a, b, na * nb - nab);
        }
    }
}

/// Running aggregate of every diagnostic.
#[derive(Debug, Clone)]
pub struct StoreStats {
    pivot: LanguageId,
    pub examples: u64,
    pub histogram: ArityHistogram,
    pub mean_arity: BTreeMap<LanguageId, MeanArity>,
    pub overlap: OverlapMatrix,
    /// Uncapped direct-pair counts.
    pub pairs: PairMatrix,
}

impl StoreStats {
    pub fn new(pivot: LanguageId) -> Self {
        StoreStats {
            pivot,
            examples: 0,
            histogram: ArityHistogram::default(),
            mean_arity: BTreeMap::new(),
            overlap: OverlapMatrix::default(),
            pairs: PairMatrix::new(),
        }
    }

    pub fn pivot(&self) -> &LanguageId {
        &self.pivot
    }

    pub fn add(&mut self, example: &MultiWayExample) {
        let arity = example.arity();
        self.examples += 1;
        self.histogram.add(arity);
        for lang in example.languages() {
            let m = self.mean_arity.entry(lang.clone()).or_default();
            m.arity_sum += arity as u64;
            m.examples += 1;
        }
        add_overlap(&mut self.overlap, example, &self.pivot);
        let langs: Vec<(&LanguageId, u64)> = example
            .translations()
            .iter()
            .map(|(l, v)| (l, v.len() as u64))
            .collect();
        for (i, (x, nx)) in langs.iter().enumerate() {
            for (y, ny) in &langs[i + 1..] {
                self.pairs.add(x, y, nx * ny);
            }
        }
    }

    pub fn merge(&mut self, other: &StoreStats) {
        self.examples += other.examples;
        self.histogram.merge(&other.histogram);
        for (lang, m) in &other.mean_arity {
            let e = self.mean_arity.entry(lang.clone()).or_default();
            e.arity_sum += m.arity_sum;
            e.examples += m.examples;
        }
        self.overlap.merge(&other.overlap);
        self.pairs.merge(&other.pairs);
    }

    pub fn from_store(store: &MultiWayStore) -> Self {
        let mut s = StoreStats::new(store.pivot().clone());
        for ex in store {
            s.add(ex);
        }
        s
    }

    pub fn report(&self) -> StatsReport {
        StatsReport {
            pivot: self.pivot.clone(),
            examples: self.examples,
            arity_histogram: self
                .histogram
                .buckets
                .iter()
                .map(|(a, n)| (a.to_string(), *n))
                .collect(),
            avg_translations_by_language: self
                .mean_arity
                .iter()
                .map(|(l, m)| (l.clone(), format!("{:.4}", m.value())))
                .collect(),
            avg_translations_metric: AVG_METRIC_NOTE.to_owned(),
            source_overlap: self
                .overlap
                .iter()
                .map(|(a, b, count)| OverlapCell {
                    a: a.clone(),
                    b: b.clone(),
                    count,
                })
                .collect(),
            pair_matrix: self
                .pairs
                .iter()
                .map(|(x, y, count)| PairCell {
                    x: x.clone(),
                    y: y.clone(),
                    count,
                })
                .collect(),
        }
    }
}

const AVG_METRIC_NOTE: &str =
    "mean arity of the examples containing the language, the language itself included (interpretation)";

pub fn arity_histogram(store: &MultiWayStore) -> ArityHistogram {
    let mut h = ArityHistogram::default();
    for ex in store {
        h.add(ex.arity());
    }
    h
}

/// Mean arity of the examples containing each language. Absent languages are omitted.
pub fn avg_translations_by_language(store: &MultiWayStore) -> BTreeMap<LanguageId, MeanArity> {
    StoreStats::from_store(store).mean_arity
}

pub fn source_overlap(store: &MultiWayStore) -> OverlapMatrix {
    let mut m = OverlapMatrix::default();
    for ex in store {
        add_overlap(&mut m, ex, store.pivot());
    }
    m
}

/// Square, symmetric text table of pair counts with a blank diagonal. Languages
/// missing from the matrix but listed in `extra_languages` get rows of zeros.
pub fn pair_availability(matrix: &PairMatrix, extra_languages: &[LanguageId]) -> String {
    let mut langs = matrix.languages();
    langs.extend(extra_languages.iter().cloned());
    let langs: Vec<LanguageId> = langs.into_iter().collect();
    let mut cells: Vec<Vec<String>> = Vec::with_capacity(langs.len() + 1);
    let mut header = vec![String::new()];
    header.extend(langs.iter().map(|l| l.to_string()));
    cells.push(header);
    for row in &langs {
        let mut line = vec![row.to_string()];
        for col in &langs {
            line.push(if row == col {
                String::new()
            } else {
                matrix.get(row, col).to_string()
            });
        }
        cells.push(line);
    }
    render_grid(&cells)
}

fn render_grid(cells: &[Vec<String>]) -> String {
    let columns = cells.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..columns)
        .map(|c| {
            cells
                .iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in cells {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            if c > 0 {
                line.push_str("  ");
            }
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                line.push_str(cell);
                line.extend(std::iter::repeat_n(' ', pad));
            } else {
                line.extend(std::iter::repeat_n(' ', pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingPolicy {
    PairBased,
    LanguageBased,
}

/// Sizes for [`target_share`]: either per ordered pair or per target language.
#[derive(Debug, Clone)]
pub enum SizeTable {
    Pairs(PairWeights),
    Languages(TargetWeights),
}

/// Marginal probability of each target language under `policy` at temperature `t`.
///
/// Pair-based sums the tempered pair probabilities over pairs sharing a target.
/// Language-based applies the tempered distribution to per-target sizes directly;
/// given pair sizes, a target's size is the sum over pairs into it.
pub fn target_share(
    sizes: &SizeTable,
    policy: SamplingPolicy,
    t: Temperature,
) -> Result<BTreeMap<LanguageId, f64>, StatsError> {
    let empty = match sizes {
        SizeTable::Pairs(p) => p.is_empty(),
        SizeTable::Languages(l) => l.is_empty(),
    };
    if empty {
        return Err(StatsError::EmptyWeights);
    }
    match (policy, sizes) {
        (SamplingPolicy::PairBased, SizeTable::Pairs(pairs)) => {
            let mut out: BTreeMap<LanguageId, f64> = BTreeMap::new();
            for ((_, tgt), p) in pair_distribution(pairs, t) {
                *out.entry(tgt).or_insert(0.0) += p;
            }
            Ok(out)
        }
        (SamplingPolicy::PairBased, SizeTable::Languages(_)) => Err(StatsError::PairSizesRequired),
        (SamplingPolicy::LanguageBased, SizeTable::Pairs(pairs)) => {
            Ok(target_distribution(&pairs.target_totals(), t))
        }
        (SamplingPolicy::LanguageBased, SizeTable::Languages(langs)) => {
            Ok(target_distribution(langs, t))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCell {
    pub a: SourceId,
    pub b: SourceId,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCell {
    pub x: LanguageId,
    pub y: LanguageId,
    pub count: u64,
}

/// Serialized stats document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub pivot: LanguageId,
    pub examples: u64,
    pub arity_histogram: BTreeMap<String, u64>,
    /// Four decimal places.
    pub avg_translations_by_language: BTreeMap<LanguageId, String>,
    pub avg_translations_metric: String,
    pub source_overlap: Vec<OverlapCell>,
    pub pair_matrix: Vec<PairCell>,
}

impl StatsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Aligned plain-text rendering for terminals.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "pivot: {}", self.pivot);
        let _ = writeln!(out, "examples: {}", self.examples);

        out.push_str("\n# arity histogram\n");
        let mut rows = vec![vec!["arity".to_owned(), "examples".to_owned()]];
        rows.extend(
            self.arity_histogram
                .iter()
                .map(|(a, n)| vec![a.clone(), n.to_string()]),
        );
        out.push_str(&render_grid(&rows));

        let _ = writeln!(
            out,
            "\n# average translations by language ({})",
            self.avg_translations_metric
        );
        let mut rows = vec![vec!["lang".to_owned(), "mean".to_owned()]];
        rows.extend(
            self.avg_translations_by_language
                .iter()
                .map(|(l, v)| vec![l.to_string(), v.clone()]),
        );
        out.push_str(&render_grid(&rows));

        out.push_str("\n# source overlap\n");
        let sources: Vec<SourceId> = self
            .source_overlap
            .iter()
            .flat_map(|c| [c.a.clone(), c.b.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut overlap = OverlapMatrix::default();
        for c in &self.source_overlap {
            overlap.add(&c.a, &c.b, c.count);
        }
        let mut rows = vec![std::iter::once(String::new())
            .chain(sources.iter().map(|s| s.to_string()))
            .collect::<Vec<_>>()];
        for a in &sources {
            let mut row = vec![a.to_string()];
            row.extend(sources.iter().map(|b| overlap.get(a, b).to_string()));
            rows.push(row);
        }
        out.push_str(&render_grid(&rows));

        out.push_str("\n# direct pairs\n");
        let mut pairs = PairMatrix::new();
        for c in &self.pair_matrix {
            pairs.add(&c.x, &c.y, c.count);
        }
        out.push_str(&pair_availability(&pairs, &[]));
        out
    }
}
