//! Trajectory files, prediction windows, decentralization, domain
//! statistics and synthetic domains.

mod records;
mod sequence;
mod stats;
mod synth;

pub use records::{load_domain, parse_records, split_files, write_records, RawRecord, Recording};
pub use sequence::{
    build_sequences, load_split, recentralize, samples_from_recording, ObservedSample, Point,
    SequenceSample, WindowConfig,
};
pub use stats::{aggregate_cross_domain, compute_domain_stats, stats_csv, DomainStats};
pub use synth::{generate_synthetic_domain, write_synthetic_domain, SyntheticDomainSpec};
