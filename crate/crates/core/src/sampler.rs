//! Temperature-based sampling and deterministic schedule generation.
//!
//! Two samplers are provided. The pair-based one draws a directed language pair with
//! probability proportional to `(D(p) / sum D)^(1/T)`; the target-conditioned one draws
//! a target language the same way from per-target sizes, then picks an example
//! containing that target and a source language uniformly.
//!
//! # Draw protocol
//!
//! Draw `i` of a schedule is a pure function of `(seed, i)`. It uses a ChaCha8
//! stream keyed with the 32 bytes `seed.to_le_bytes() ++ domain.to_le_bytes() ++ [0; 16]`,
//! with the stream id set to `i`. Values are consumed as whole `u64` words, in order:
//!
//! 1. target language: one word `u`, `f = (u >> 11) * 2^-53`, first language whose
//!    cumulative probability exceeds `f`;
//! 2. example: uniform index over the examples containing the target, in key order;
//! 3. source language: uniform index over the example's other languages, in code order;
//! 4. source text: uniform index over that language's translations;
//! 5. target text: uniform index over the target language's translations.
//!
//! Uniform indices use Lemire's multiply-shift with rejection, one word per attempt.
//! Because each draw has its own stream, any partition of the index range into
//! chunks reproduces the sequential schedule exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extract::MultiWayStore;
use crate::model::{LanguageId, MultiWayExample, PairMatrix};
use crate::stats::{target_share, SamplingPolicy, SizeTable};

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("size for {0} must be positive")]
    ZeroSize(String),
    #[error("pair {0}->{0} has identical source and target")]
    SelfPair(LanguageId),
    #[error("duplicate weight entry for {0}")]
    DuplicateEntry(String),
    #[error("target language {0} has no examples in the store")]
    TargetAbsent(LanguageId),
    #[error("no target languages to sample from")]
    NoTargets,
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self, SamplerError> {
        if t.is_finite() && t > 0.0 {
            Ok(Temperature(t))
        } else {
            Err(SamplerError::InvalidTemperature(t))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Temperature {
    type Error = SamplerError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Temperature::new(value)
    }
}

impl From<Temperature> for f64 {
    fn from(t: Temperature) -> Self {
        t.0
    }
}

/// Sizes of directed language pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairWeights {
    sizes: BTreeMap<(LanguageId, LanguageId), u64>,
}

impl PairWeights {
    pub fn new(
        entries: impl IntoIterator<Item = (LanguageId, LanguageId, u64)>,
    ) -> Result<Self, SamplerError> {
        let mut sizes = BTreeMap::new();
        for (src, tgt, size) in entries {
            if src == tgt {
                return Err(SamplerError::SelfPair(src));
            }
            if size == 0 {
                return Err(SamplerError::ZeroSize(format!("{src}->{tgt}")));
            }
            let label = format!("{src}->{tgt}");
            if sizes.insert((src, tgt), size).is_some() {
                return Err(SamplerError::DuplicateEntry(label));
            }
        }
        Ok(PairWeights { sizes })
    }

    /// Both directions of every non-empty cell of an unordered pair matrix.
    pub fn from_pair_matrix(matrix: &PairMatrix) -> Self {
        let mut sizes = BTreeMap::new();
        for (a, b, n) in matrix.iter() {
            if n > 0 {
                sizes.insert((a.clone(), b.clone()), n);
                sizes.insert((b.clone(), a.clone()), n);
            }
        }
        PairWeights { sizes }
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LanguageId, &LanguageId, u64)> {
        self.sizes.iter().map(|((s, t), n)| (s, t, *n))
    }

    /// Per-target sizes: the sum over pairs into each language.
    pub fn target_totals(&self) -> TargetWeights {
        let mut sizes: BTreeMap<LanguageId, u64> = BTreeMap::new();
        for ((_, tgt), n) in &self.sizes {
            *sizes.entry(tgt.clone()).or_insert(0) += n;
        }
        TargetWeights { sizes }
    }
}

/// How the per-target size is measured on a store.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSizeMode {
    /// Number of examples containing the language.
    #[default]
    Examples,
    /// Number of derivable direct pairs with the language on the target side.
    DerivedPairs,
}

/// Sizes per target language.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TargetWeights {
    sizes: BTreeMap<LanguageId, u64>,
}

impl TargetWeights {
    pub fn new(entries: impl IntoIterator<Item = (LanguageId, u64)>) -> Result<Self, SamplerError> {
        let mut sizes = BTreeMap::new();
        for (lang, size) in entries {
            if size == 0 {
                return Err(SamplerError::ZeroSize(lang.to_string()));
            }
            let label = lang.to_string();
            if sizes.insert(lang, size).is_some() {
                return Err(SamplerError::DuplicateEntry(label));
            }
        }
        Ok(TargetWeights { sizes })
    }

    pub fn from_store(store: &MultiWayStore, mode: TargetSizeMode) -> Self {
        let mut sizes: BTreeMap<LanguageId, u64> = BTreeMap::new();
        for ex in store {
            let total: u64 = ex.translations().values().map(|v| v.len() as u64).sum();
            for (lang, list) in ex.translations() {
                let n = list.len() as u64;
                let add = match mode {
                    TargetSizeMode::Examples => 1,
                    TargetSizeMode::DerivedPairs => n * (total - n),
                };
                *sizes.entry(lang.clone()).or_insert(0) += add;
            }
        }
        sizes.retain(|_, n| *n > 0);
        TargetWeights { sizes }
    }

    /// Keeps only the listed languages.
    pub fn restrict(&self, langs: &[LanguageId]) -> Self {
        TargetWeights {
            sizes: self
                .sizes
                .iter()
                .filter(|(l, _)| langs.contains(l))
                .map(|(l, n)| (l.clone(), *n))
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn get(&self, lang: &LanguageId) -> Option<u64> {
        self.sizes.get(lang).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LanguageId, u64)> {
        self.sizes.iter().map(|(l, n)| (l, *n))
    }
}

/// `(s_i / sum s)^(1/T)`, renormalized to sum to one.
///
/// Shares are taken relative to the largest size, which cancels in the
/// normalization and keeps equal sizes exactly equal.
pub fn tempered(sizes: &[u64], t: Temperature) -> Vec<f64> {
    let max = sizes.iter().copied().max().unwrap_or(0) as f64;
    let exponent = 1.0 / t.value();
    let raw: Vec<f64> = sizes
        .iter()
        .map(|&s| {
            let share = s as f64 / max;
            if exponent == 1.0 {
                share
            } else {
                share.powf(exponent)
            }
        })
        .collect();
    let norm: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / norm).collect()
}

pub fn pair_distribution(
    weights: &PairWeights,
    t: Temperature,
) -> BTreeMap<(LanguageId, LanguageId), f64> {
    let sizes: Vec<u64> = weights.sizes.values().copied().collect();
    weights
        .sizes
        .keys()
        .cloned()
        .zip(tempered(&sizes, t))
        .collect()
}

pub fn target_distribution(weights: &TargetWeights, t: Temperature) -> BTreeMap<LanguageId, f64> {
    let sizes: Vec<u64> = weights.sizes.values().copied().collect();
    weights
        .sizes
        .keys()
        .cloned()
        .zip(tempered(&sizes, t))
        .collect()
}

/// Per-draw random stream; see the module docs for the exact construction.
pub struct DrawRng(ChaCha8Rng);

pub const DOMAIN_SCHEDULE: u64 = 0;
pub const DOMAIN_PAIR_BASED: u64 = 1;

impl DrawRng {
    pub fn new(seed: u64, domain: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&domain.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        DrawRng(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "uniform index over an empty range");
        let n = n as u64;
        let mut m = u128::from(self.next_u64()) * u128::from(n);
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = u128::from(self.next_u64()) * u128::from(n);
            }
        }
        (m >> 64) as usize
    }
}

/// A categorical distribution with its cumulative table.
#[derive(Debug, Clone)]
pub struct Categorical<T> {
    items: Vec<T>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl<T: Clone> Categorical<T> {
    pub fn new(entries: impl IntoIterator<Item = (T, f64)>) -> Self {
        let (items, probs): (Vec<T>, Vec<f64>) = entries.into_iter().unzip();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Categorical {
            items,
            probs,
            cumulative,
        }
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample_index(&self, rng: &mut DrawRng) -> usize {
        let total = *self.cumulative.last().expect("non-empty distribution");
        let f = rng.unit() * total;
        self.cumulative
            .partition_point(|&c| c <= f)
            .min(self.items.len() - 1)
    }
}

/// Example indices per language, in store (key) order.
#[derive(Debug, Clone, Default)]
pub struct TargetIndex {
    by_lang: BTreeMap<LanguageId, Vec<u32>>,
}

impl TargetIndex {
    pub fn build(store: &MultiWayStore) -> Self {
        let mut by_lang: BTreeMap<LanguageId, Vec<u32>> = BTreeMap::new();
        for (i, ex) in store.iter().enumerate() {
            for lang in ex.languages() {
                by_lang.entry(lang.clone()).or_default().push(i as u32);
            }
        }
        TargetIndex { by_lang }
    }

    pub fn examples_with(&self, lang: &LanguageId) -> &[u32] {
        self.by_lang.get(lang).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// One sampled training example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Draw<'a> {
    pub target: &'a LanguageId,
    pub source: &'a LanguageId,
    pub example: &'a MultiWayExample,
    pub example_index: usize,
    pub source_text: &'a str,
    pub target_text: &'a str,
}

/// Draws target, example, source language, source text and target text, consuming
/// the stream in that order.
pub fn hierarchical_draw<'a>(
    store: &'a MultiWayStore,
    index: &TargetIndex,
    dist: &'a Categorical<LanguageId>,
    rng: &mut DrawRng,
) -> Result<Draw<'a>, SamplerError> {
    let target = &dist.items()[dist.sample_index(rng)];
    let candidates = index.examples_with(target);
    if candidates.is_empty() {
        return Err(SamplerError::TargetAbsent(target.clone()));
    }
    let example_index = candidates[rng.index(candidates.len())] as usize;
    let example = &store.examples()[example_index];
    let sources: Vec<&LanguageId> = example.languages().filter(|l| *l != target).collect();
    let source = sources[rng.index(sources.len())];
    let source_list = example.texts(source);
    let source_text = source_list[rng.index(source_list.len())].text.as_str();
    let target_list = example.texts(target);
    let target_text = target_list[rng.index(target_list.len())].text.as_str();
    Ok(Draw {
        target,
        source,
        example,
        example_index,
        source_text,
        target_text,
    })
}

/// Marker prepended to the source text to request a target language.
pub fn target_token(target: &LanguageId) -> String {
    format!("<2{target}> ")
}

/// Serialized schedule line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleRecord {
    pub i: u64,
    pub tgt: LanguageId,
    pub src: LanguageId,
    pub src_text: String,
    pub tgt_text: String,
}

impl ScheduleRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("schedule record serializes")
    }
}

/// A target-conditioned schedule over a store snapshot.
pub struct Schedule<'a> {
    store: &'a MultiWayStore,
    index: TargetIndex,
    dist: Categorical<LanguageId>,
    seed: u64,
    temperature: Temperature,
}

impl<'a> Schedule<'a> {
    /// Fails if the weights are empty or name a language without examples.
    pub fn new(
        store: &'a MultiWayStore,
        weights: &TargetWeights,
        temperature: Temperature,
        seed: u64,
    ) -> Result<Self, SamplerError> {
        if weights.is_empty() {
            return Err(SamplerError::NoTargets);
        }
        let index = TargetIndex::build(store);
        for (lang, _) in weights.iter() {
            if index.examples_with(lang).is_empty() {
                return Err(SamplerError::TargetAbsent(lang.clone()));
            }
        }
        let dist = Categorical::new(target_distribution(weights, temperature));
        Ok(Schedule {
            store,
            index,
            dist,
            seed,
            temperature,
        })
    }

    pub fn temperature(&self) -> Temperature {
        self.temperature
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> &Categorical<LanguageId> {
        &self.dist
    }

    pub fn draw(&self, i: u64) -> Draw<'_> {
        let mut rng = DrawRng::new(self.seed, DOMAIN_SCHEDULE, i);
        hierarchical_draw(self.store, &self.index, &self.dist, &mut rng)
            .expect("targets validated at construction")
    }

    pub fn record(&self, i: u64) -> ScheduleRecord {
        let d = self.draw(i);
        let mut src_text = target_token(d.target);
        src_text.push_str(d.source_text);
        ScheduleRecord {
            i,
            tgt: d.target.clone(),
            src: d.source.clone(),
            src_text,
            tgt_text: d.target_text.to_owned(),
        }
    }

    /// Records for an index range; concatenating ranges equals one sequential run.
    pub fn records(&self, range: Range<u64>) -> impl Iterator<Item = ScheduleRecord> + '_ {
        range.map(move |i| self.record(i))
    }
}

/// `n_draws` schedule records with target tokens.
pub fn emit_schedule<'a>(
    store: &'a MultiWayStore,
    weights: &TargetWeights,
    temperature: Temperature,
    seed: u64,
    n_draws: u64,
) -> Result<impl Iterator<Item = ScheduleRecord> + 'a, SamplerError> {
    let schedule = Schedule::new(store, weights, temperature, seed)?;
    Ok((0..n_draws).map(move |i| schedule.record(i)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRow {
    pub lang: LanguageId,
    pub pair_analytic: f64,
    pub pair_empirical: f64,
    pub language_analytic: f64,
    pub language_empirical: f64,
}

/// Target-language marginals of both samplers, analytic and empirical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub temperature: f64,
    pub draws: u64,
    pub seed: u64,
    pub rows: Vec<MarginalRow>,
    pub pair_l1: f64,
    pub language_l1: f64,
}

impl ComparisonReport {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "target marginals, T={} draws={} seed={}",
            self.temperature, self.draws, self.seed
        );
        let _ = writeln!(
            out,
            "{:<8} {:>12} {:>12} {:>12} {:>12}",
            "lang", "pair-anal", "pair-emp", "lang-anal", "lang-emp"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
                r.lang.as_str(),
                r.pair_analytic,
                r.pair_empirical,
                r.language_analytic,
                r.language_empirical
            );
        }
        let _ = writeln!(
            out,
            "L1 empirical vs analytic: pair-based {:.6}, language-based {:.6}",
            self.pair_l1, self.language_l1
        );
        out
    }
}

/// Runs `n_draws` of each sampler and tabulates the target marginals next to the
/// analytic values.
pub fn compare_schedulers(
    store: &MultiWayStore,
    pair_weights: &PairWeights,
    target_weights: &TargetWeights,
    temperature: Temperature,
    n_draws: u64,
    seed: u64,
) -> Result<ComparisonReport, SamplerError> {
    let pair_analytic = target_share(
        &SizeTable::Pairs(pair_weights.clone()),
        SamplingPolicy::PairBased,
        temperature,
    )?;
    let language_analytic = target_share(
        &SizeTable::Languages(target_weights.clone()),
        SamplingPolicy::LanguageBased,
        temperature,
    )?;

    let pairs = Categorical::new(pair_distribution(pair_weights, temperature));
    let mut pair_counts: BTreeMap<LanguageId, u64> = BTreeMap::new();
    for i in 0..n_draws {
        let mut rng = DrawRng::new(seed, DOMAIN_PAIR_BASED, i);
        let (_, tgt) = &pairs.items()[pairs.sample_index(&mut rng)];
        *pair_counts.entry(tgt.clone()).or_insert(0) += 1;
    }

    let schedule = Schedule::new(store, target_weights, temperature, seed)?;
    let mut lang_counts: BTreeMap<LanguageId, u64> = BTreeMap::new();
    for i in 0..n_draws {
        *lang_counts
            .entry(schedule.draw(i).target.clone())
            .or_insert(0) += 1;
    }

    let mut langs: Vec<LanguageId> = pair_analytic
        .keys()
        .chain(language_analytic.keys())
        .cloned()
        .collect();
    langs.sort();
    langs.dedup();
    let frac = |counts: &BTreeMap<LanguageId, u64>, l: &LanguageId| {
        if n_draws == 0 {
            0.0
        } else {
            counts.get(l).copied().unwrap_or(0) as f64 / n_draws as f64
        }
    };
    let rows: Vec<MarginalRow> = langs
        .iter()
        .map(|l| MarginalRow {
            lang: l.clone(),
            pair_analytic: pair_analytic.get(l).copied().unwrap_or(0.0),
            pair_empirical: frac(&pair_counts, l),
            language_analytic: language_analytic.get(l).copied().unwrap_or(0.0),
            language_empirical: frac(&lang_counts, l),
        })
        .collect();
    let pair_l1 = rows
        .iter()
        .map(|r| (r.pair_analytic - r.pair_empirical).abs())
        .sum();
    let language_l1 = rows
        .iter()
        .map(|r| (r.language_analytic - r.language_empirical).abs())
        .sum();
    Ok(ComparisonReport {
        temperature: temperature.value(),
        draws: n_draws,
        seed,
        rows,
        pair_l1,
        language_l1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_util::*;

    fn t(v: f64) -> Temperature {
        Temperature::new(v).unwrap()
    }

    #[test]
    fn temperature_must_be_positive() {
        assert!(Temperature::new(0.0).is_err());
        assert!(Temperature::new(-1.0).is_err());
        assert!(Temperature::new(f64::NAN).is_err());
        assert!(Temperature::new(f64::INFINITY).is_err());
    }

    #[test]
    fn weights_validate() {
        assert_eq!(
            PairWeights::new([(lang("en"), lang("en"), 1)]),
            Err(SamplerError::SelfPair(lang("en")))
        );
        assert!(PairWeights::new([(lang("de"), lang("en"), 0)]).is_err());
        assert!(TargetWeights::new([(lang("de"), 1), (lang("de"), 2)]).is_err());
    }

    #[test]
    fn symmetric_pairs_split_evenly() {
        let w =
            PairWeights::new([(lang("aa"), lang("bb"), 1), (lang("bb"), lang("aa"), 1)]).unwrap();
        for temp in [0.5, 1.0, 7.0] {
            let d = pair_distribution(&w, t(temp));
            assert!(d.values().all(|p| (p - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn t1_is_the_data_distribution() {
        let w = PairWeights::new([(lang("aa"), lang("bb"), 100), (lang("bb"), lang("aa"), 900)])
            .unwrap();
        let d = pair_distribution(&w, t(1.0));
        assert!((d[&(lang("aa"), lang("bb"))] - 0.1).abs() < 1e-12);
        assert!((d[&(lang("bb"), lang("aa"))] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn t5_flattens_pair_sizes() {
        let w = PairWeights::new([(lang("aa"), lang("bb"), 100), (lang("bb"), lang("aa"), 900)])
            .unwrap();
        let d = pair_distribution(&w, t(5.0));
        // Frozen from an independent 50-digit evaluation of 0.1^0.2 / (0.1^0.2 + 0.9^0.2).
        let small = 0.391_873_242_731_406_86;
        assert!((d[&(lang("aa"), lang("bb"))] - small).abs() < 1e-12);
        assert!((d[&(lang("bb"), lang("aa"))] - (1.0 - small)).abs() < 1e-12);
    }

    #[test]
    fn target_distribution_examples() {
        let six = TargetWeights::new(
            ["cs", "de", "en", "es", "fr", "ru"]
                .map(|l| (lang(l), 3))
                .to_vec(),
        )
        .unwrap();
        for temp in [1.0, 5.0] {
            assert!(target_distribution(&six, t(temp))
                .values()
                .all(|p| (p - 1.0 / 6.0).abs() < 1e-15));
        }
        let xy = TargetWeights::new([(lang("xx"), 1), (lang("yy"), 3)]).unwrap();
        let d1 = target_distribution(&xy, t(1.0));
        assert!((d1[&lang("xx")] - 0.25).abs() < 1e-12);
        assert!((d1[&lang("yy")] - 0.75).abs() < 1e-12);
        let d100 = target_distribution(&xy, t(100.0));
        // 0.25^0.01 / (0.25^0.01 + 0.75^0.01), evaluated at 50 digits.
        let x = 0.497_253_496_902_349_65;
        assert!((d100[&lang("xx")] - x).abs() < 1e-12);
        assert!(d100.values().all(|p| (p - 0.5).abs() < 0.006));
    }

    #[test]
    fn uniform_index_covers_range() {
        let mut rng = DrawRng::new(1, 0, 0);
        let mut seen = [0u32; 3];
        for _ in 0..3000 {
            seen[rng.index(3)] += 1;
        }
        assert!(seen.iter().all(|&c| c > 900));
        let mut rng = DrawRng::new(1, 0, 0);
        assert_eq!(rng.index(1), 0);
    }

    #[test]
    fn draw_streams_are_independent_of_order() {
        let a: Vec<u64> = (0..4).map(|i| DrawRng::new(9, 0, i).next_u64()).collect();
        let b: Vec<u64> = (0..4)
            .rev()
            .map(|i| DrawRng::new(9, 0, i).next_u64())
            .collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
        assert_ne!(
            DrawRng::new(9, 0, 0).next_u64(),
            DrawRng::new(9, 1, 0).next_u64()
        );
    }

    fn store(examples: Vec<MultiWayExample>) -> MultiWayStore {
        MultiWayStore::from_examples(lang("en"), examples).unwrap()
    }

    #[test]
    fn forced_target_in_bilingual_store_uses_pivot_source() {
        let s = store(vec![
            example(&[("en", "a", "s"), ("de", "x", "s")]),
            example(&[("en", "b", "s"), ("de", "y", "s")]),
        ]);
        let w = TargetWeights::new([(lang("de"), 1)]).unwrap();
        let sched = Schedule::new(&s, &w, t(1.0), 3).unwrap();
        for i in 0..200 {
            let d = sched.draw(i);
            assert_eq!(d.target.as_str(), "de");
            assert_eq!(d.source.as_str(), "en");
        }
    }

    #[test]
    fn absent_target_is_rejected() {
        let s = store(vec![example(&[("en", "a", "s"), ("de", "x", "s")])]);
        let w = TargetWeights::new([(lang("fr"), 1)]).unwrap();
        assert!(matches!(
            Schedule::new(&s, &w, t(1.0), 0),
            Err(SamplerError::TargetAbsent(_))
        ));
        let dist = Categorical::new([(lang("fr"), 1.0)]);
        let index = TargetIndex::build(&s);
        assert!(hierarchical_draw(&s, &index, &dist, &mut DrawRng::new(0, 0, 0)).is_err());
    }

    #[test]
    fn schedule_records_carry_target_token() {
        let s = store(vec![example(&[
            ("en", "Stay safe", "s"),
            ("de", "Bleib sicher", "s"),
        ])]);
        let w = TargetWeights::new([(lang("de"), 1)]).unwrap();
        let recs: Vec<_> = emit_schedule(&s, &w, t(1.0), 0, 2).unwrap().collect();
        assert_eq!(recs[0].src_text, "<2de> Stay safe");
        assert_eq!(recs[0].tgt_text, "Bleib sicher");
        assert_eq!(
            recs[1].to_json_line(),
            r#"{"i":1,"tgt":"de","src":"en","src_text":"<2de> Stay safe","tgt_text":"Bleib sicher"}"#
        );
        assert_eq!(emit_schedule(&s, &w, t(1.0), 0, 0).unwrap().count(), 0);
    }

    #[test]
    fn chunked_generation_equals_sequential() {
        let s = store(vec![
            example(&[("en", "a", "s"), ("de", "x", "s"), ("fr", "y", "s")]),
            example(&[("en", "b", "s"), ("es", "z", "s")]),
        ]);
        let w = TargetWeights::from_store(&s, TargetSizeMode::Examples);
        let sched = Schedule::new(&s, &w, t(2.0), 11).unwrap();
        let seq: Vec<_> = sched.records(0..500).collect();
        let mut chunked = Vec::new();
        for range in [0..123, 123..124, 124..400, 400..500] {
            chunked.extend(sched.records(range));
        }
        assert_eq!(seq, chunked);
    }

    #[test]
    fn target_sizes_from_store() {
        let s = store(vec![
            example(&[
                ("en", "a", "s"),
                ("de", "x", "s"),
                ("de", "w", "s"),
                ("fr", "y", "s"),
            ]),
            example(&[("en", "b", "s"), ("de", "z", "s")]),
        ]);
        let ex = TargetWeights::from_store(&s, TargetSizeMode::Examples);
        assert_eq!(ex.get(&lang("en")), Some(2));
        assert_eq!(ex.get(&lang("de")), Some(2));
        assert_eq!(ex.get(&lang("fr")), Some(1));
        let pairs = TargetWeights::from_store(&s, TargetSizeMode::DerivedPairs);
        // de: 2*(1+1) + 1*1; en: 1*(2+1) + 1*1; fr: 1*(1+2)
        assert_eq!(pairs.get(&lang("de")), Some(5));
        assert_eq!(pairs.get(&lang("en")), Some(4));
        assert_eq!(pairs.get(&lang("fr")), Some(3));
    }

    #[test]
    fn single_pair_policies_agree() {
        let s = store(vec![example(&[("en", "a", "s"), ("de", "x", "s")])]);
        let pw =
            PairWeights::new([(lang("de"), lang("en"), 30), (lang("en"), lang("de"), 10)]).unwrap();
        let tw = pw.target_totals();
        let r = compare_schedulers(&s, &pw, &tw, t(5.0), 2000, 1).unwrap();
        for row in &r.rows {
            assert!((row.pair_analytic - row.language_analytic).abs() < 1e-12);
        }
        assert!(r.render_text().contains("pair-anal"));
    }
}
