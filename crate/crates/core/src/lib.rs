//! Multi-way aligned example extraction from pivot-centric bitext, corpus
//! diagnostics, and target-conditioned temperature sampling.

pub mod escape;
pub mod extract;
pub mod ingest;
pub mod model;
pub mod sampler;
pub mod stats;
pub mod storefile;

pub use extract::{
    augment_with_multiway, derive_pairs, extract_multiway, filter_by_arity, select_by_target,
    ExtractError, ExtractionLimits, ExtractionMode, MultiWayStore, PairDeriver, PairRecord,
    PairSummary, ShardedExtractor,
};
pub use ingest::{load_manifest, normalize_key, read_bitext, CorpusManifest, NormalizationPolicy};
pub use model::{
    arity, ArityHistogram, BilingualRecord, LanguageId, MultiWayExample, PairMatrix, SourceId,
    Translation,
};
pub use sampler::{
    compare_schedulers, emit_schedule, hierarchical_draw, pair_distribution, target_distribution,
    PairWeights, Schedule, TargetWeights, Temperature,
};
pub use stats::{
    arity_histogram, avg_translations_by_language, pair_availability, source_overlap, target_share,
    OverlapMatrix, StoreStats,
};
