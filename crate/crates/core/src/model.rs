//! Domain types shared by every stage of the pipeline. Nothing in here does I/O.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid language code {0:?}: expected 2-8 characters from [a-z0-9-]")]
    InvalidLanguage(String),
    #[error("invalid source tag {0:?}: must be non-empty without whitespace, commas or control characters")]
    InvalidSource(String),
    #[error("example {key:?} has arity {arity}, need at least 2 languages")]
    ArityTooSmall { key: String, arity: usize },
    #[error("example {key:?}: empty translation list for {lang}")]
    EmptyTranslations { key: String, lang: LanguageId },
    #[error("example {key:?}: translation in {lang} has no sources")]
    MissingSources { key: String, lang: LanguageId },
    #[error("duplicate example key {0:?}")]
    DuplicateKey(String),
    #[error("example {key:?}: translations in {lang} are not sorted and unique by text")]
    UnsortedTranslations { key: String, lang: LanguageId },
}

/// Lowercase language tag such as `en`, `de` or `pt-br`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LanguageId(String);

impl LanguageId {
    pub fn new(code: impl Into<String>) -> Result<Self, ModelError> {
        let code = code.into();
        let valid_len = (2..=8).contains(&code.len());
        let valid_chars = code
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-');
        if valid_len && valid_chars {
            Ok(LanguageId(code))
        } else {
            Err(ModelError::InvalidLanguage(code))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LanguageId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        LanguageId::new(value)
    }
}

impl From<LanguageId> for String {
    fn from(value: LanguageId) -> Self {
        value.0
    }
}

impl fmt::Display for LanguageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for LanguageId {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LanguageId::new(s)
    }
}

/// Tag naming the data source a record came from (`nc`, `epps`, `cc`, ...).
///
/// Commas are rejected because pair records join source sets with them.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SourceId(String);

impl SourceId {
    pub fn new(tag: impl Into<String>) -> Result<Self, ModelError> {
        let tag = tag.into();
        let valid = !tag.is_empty()
            && !tag
                .chars()
                .any(|c| c == ',' || c.is_whitespace() || c.is_control());
        if valid {
            Ok(SourceId(tag))
        } else {
            Err(ModelError::InvalidSource(tag))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SourceId {
    type Error = ModelError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        SourceId::new(value)
    }
}

impl From<SourceId> for String {
    fn from(value: SourceId) -> Self {
        value.0
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Where a record was read from: manifest entry index and 1-based line number.
///
/// Ordering follows manifest order, then file order, and decides which raw pivot
/// surface form an example keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct RecordPosition {
    pub corpus: u32,
    pub line: u64,
}

/// One sentence pair from one corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BilingualRecord {
    /// Normalized pivot sentence, used as the join key.
    pub pivot_text: String,
    /// Pivot sentence as it appeared in the input.
    pub pivot_raw: String,
    pub other_lang: LanguageId,
    pub other_text: String,
    pub source: SourceId,
    pub position: RecordPosition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Translation {
    pub text: String,
    pub sources: BTreeSet<SourceId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RawExample {
    key: String,
    translations: BTreeMap<LanguageId, Vec<Translation>>,
}

/// A pivot key with every translation found for it, the pivot language included.
///
/// Languages are kept in code order and translations in text order, so the
/// serialized form is byte-deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawExample", into = "RawExample")]
pub struct MultiWayExample {
    key: String,
    translations: BTreeMap<LanguageId, Vec<Translation>>,
}

impl MultiWayExample {
    pub fn new(
        key: impl Into<String>,
        translations: BTreeMap<LanguageId, Vec<Translation>>,
    ) -> Result<Self, ModelError> {
        let key = key.into();
        for (lang, list) in &translations {
            if list.is_empty() {
                return Err(ModelError::EmptyTranslations {
                    key,
                    lang: lang.clone(),
                });
            }
            if list.iter().any(|t| t.sources.is_empty()) {
                return Err(ModelError::MissingSources {
                    key,
                    lang: lang.clone(),
                });
            }
            if list.windows(2).any(|w| w[0].text >= w[1].text) {
                return Err(ModelError::UnsortedTranslations {
                    key,
                    lang: lang.clone(),
                });
            }
        }
        if translations.len() < 2 {
            return Err(ModelError::ArityTooSmall {
                key,
                arity: translations.len(),
            });
        }
        Ok(MultiWayExample { key, translations })
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn translations(&self) -> &BTreeMap<LanguageId, Vec<Translation>> {
        &self.translations
    }

    pub fn languages(&self) -> impl Iterator<Item = &LanguageId> {
        self.translations.keys()
    }

    pub fn texts(&self, lang: &LanguageId) -> &[Translation] {
        self.translations
            .get(lang)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn contains(&self, lang: &LanguageId) -> bool {
        self.translations.contains_key(lang)
    }

    /// Number of distinct languages with at least one translation.
    pub fn arity(&self) -> usize {
        arity(self)
    }

    /// Serializes to the one-line JSON store format.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("example serialization cannot fail")
    }
}

impl TryFrom<RawExample> for MultiWayExample {
    type Error = ModelError;

    fn try_from(raw: RawExample) -> Result<Self, Self::Error> {
        MultiWayExample::new(raw.key, raw.translations)
    }
}

impl From<MultiWayExample> for RawExample {
    fn from(value: MultiWayExample) -> Self {
        RawExample {
            key: value.key,
            translations: value.translations,
        }
    }
}

pub fn arity(example: &MultiWayExample) -> usize {
    example.translations.len()
}

/// Accumulates translations under one key and produces a canonical [`MultiWayExample`].
///
/// Adding the same `(language, text)` twice unions the source sets. The pivot
/// language keeps a single translation: the raw surface form with the smallest
/// [`RecordPosition`].
#[derive(Debug, Clone)]
pub struct ExampleBuilder {
    key: String,
    pivot: LanguageId,
    pivot_raw: Option<(RecordPosition, String)>,
    pivot_sources: BTreeSet<SourceId>,
    others: BTreeMap<LanguageId, BTreeMap<String, BTreeSet<SourceId>>>,
}

impl ExampleBuilder {
    pub fn new(key: impl Into<String>, pivot: LanguageId) -> Self {
        ExampleBuilder {
            key: key.into(),
            pivot,
            pivot_raw: None,
            pivot_sources: BTreeSet::new(),
            others: BTreeMap::new(),
        }
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    /// Adds a record whose `pivot_text` equals this builder's key.
    pub fn add_record(&mut self, record: &BilingualRecord) {
        debug_assert_eq!(record.pivot_text, self.key);
        self.offer_pivot(record.position, &record.pivot_raw, &record.source);
        self.add_translation(&record.other_lang, &record.other_text, &record.source);
    }

    pub fn offer_pivot(&mut self, position: RecordPosition, raw: &str, source: &SourceId) {
        let replace = match &self.pivot_raw {
            None => true,
            Some((current, text)) => (position, raw) < (*current, text.as_str()),
        };
        if replace {
            self.pivot_raw = Some((position, raw.to_owned()));
        }
        self.pivot_sources.insert(source.clone());
    }

    pub fn add_translation(&mut self, lang: &LanguageId, text: &str, source: &SourceId) {
        self.add_translation_sources(lang, text, std::iter::once(source));
    }

    fn add_translation_sources<'a>(
        &mut self,
        lang: &LanguageId,
        text: &str,
        sources: impl IntoIterator<Item = &'a SourceId>,
    ) {
        let texts = self.others.entry(lang.clone()).or_default();
        let set = match texts.get_mut(text) {
            Some(set) => set,
            None => texts.entry(text.to_owned()).or_default(),
        };
        set.extend(sources.into_iter().cloned());
    }

    /// Merges every non-pivot translation of `example` into this builder, and its
    /// pivot translation if this builder has none yet.
    pub fn merge_example(&mut self, example: &MultiWayExample) {
        for (lang, list) in example.translations() {
            if *lang == self.pivot {
                for t in list {
                    if self.pivot_raw.is_none() {
                        self.pivot_raw = Some((RecordPosition::default(), t.text.clone()));
                    }
                    self.pivot_sources.extend(t.sources.iter().cloned());
                }
            } else {
                for t in list {
                    self.add_translation_sources(lang, &t.text, &t.sources);
                }
            }
        }
    }

    pub fn build(self) -> Result<MultiWayExample, ModelError> {
        let mut translations: BTreeMap<LanguageId, Vec<Translation>> = self
            .others
            .into_iter()
            .map(|(lang, texts)| {
                let list = texts
                    .into_iter()
                    .map(|(text, sources)| Translation { text, sources })
                    .collect();
                (lang, list)
            })
            .collect();
        if let Some((_, raw)) = self.pivot_raw {
            translations.insert(
                self.pivot,
                vec![Translation {
                    text: raw,
                    sources: self.pivot_sources,
                }],
            );
        }
        MultiWayExample::new(self.key, translations)
    }
}

/// Counts per unordered language pair. Self-pairs are not representable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairMatrix {
    counts: BTreeMap<(LanguageId, LanguageId), u64>,
}

impl PairMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    fn ordered(a: &LanguageId, b: &LanguageId) -> (LanguageId, LanguageId) {
        if a <= b {
            (a.clone(), b.clone())
        } else {
            (b.clone(), a.clone())
        }
    }

    /// Adds `n` to the `{a, b}` cell. Self-pairs are ignored.
    pub fn add(&mut self, a: &LanguageId, b: &LanguageId, n: u64) {
        if a == b {
            return;
        }
        *self.counts.entry(Self::ordered(a, b)).or_insert(0) += n;
    }

    pub fn get(&self, a: &LanguageId, b: &LanguageId) -> u64 {
        if a == b {
            return 0;
        }
        self.counts.get(&Self::ordered(a, b)).copied().unwrap_or(0)
    }

    pub fn merge(&mut self, other: &PairMatrix) {
        for ((a, b), n) in &other.counts {
            self.add(a, b, *n);
        }
    }

    /// Cells in canonical order, first language sorting before the second.
    pub fn iter(&self) -> impl Iterator<Item = (&LanguageId, &LanguageId, u64)> {
        self.counts.iter().map(|((a, b), n)| (a, b, *n))
    }

    pub fn languages(&self) -> BTreeSet<LanguageId> {
        self.counts
            .keys()
            .flat_map(|(a, b)| [a.clone(), b.clone()])
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// Number of examples per arity.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArityHistogram {
    pub buckets: BTreeMap<usize, u64>,
}

impl ArityHistogram {
    pub fn add(&mut self, arity: usize) {
        *self.buckets.entry(arity).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &ArityHistogram) {
        for (arity, n) in &other.buckets {
            *self.buckets.entry(*arity).or_insert(0) += n;
        }
    }

    pub fn total(&self) -> u64 {
        self.buckets.values().sum()
    }

    pub fn get(&self, arity: usize) -> u64 {
        self.buckets.get(&arity).copied().unwrap_or(0)
    }
}
