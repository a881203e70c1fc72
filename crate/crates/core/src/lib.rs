//! skymatch-core: cross-matching engine for multi-run sky catalogs.
//!
//! The pipeline, in dependency order:
//!
//! 1. [`geometry`] — positions, angular distance, half-space/convex/union
//!    regions with buffering, erosion, and emptiness tests.
//! 2. [`catalog`] — catalog objects, run metadata, classification-distance
//!    strategies, CSV/JSON ingest and export.
//! 3. [`zones`] — declination-zone index answering "all pairs within r".
//! 4. [`matching`] — cross-run Hit records from the zone join.
//! 5. [`missclass`] — run-pair overlap regions and Edge/Masked/Ephemeral
//!    verdicts for objects missing from a run that should have seen them.
//! 6. [`fof`] — friends-of-friends bundles (connected components of the
//!    hit graph), Friend records, bundle statistics, incremental merge.
//! 7. [`pivot`] — one row per bundle, one object column per run,
//!    zero-filled, with a primary-row flag.
//! 8. [`skygen`] — deterministic synthetic skies with ground-truth labels.
//! 9. [`oracle`] — brute-force reference implementations used by tests
//!    and the CLI `verify` stage.

pub mod catalog;
pub mod fof;
pub mod geometry;
pub mod matching;
pub mod missclass;
pub mod oracle;
pub mod pivot;
pub mod skygen;
pub mod zones;
