//! Batch pipeline behind the `flexpose` binary. Stages talk only through
//! files in the run directory, and every stage records input and output
//! checksums in `manifest.json`.

mod commands;
mod config;
mod manifest;

pub use commands::{compare, run, Command};
pub use config::{DataSettings, MetricSettings, RenderSettings, RunConfig, SampleSettings, SourceInput, TargetInput};
pub use manifest::{file_checksum, sha256_hex, RunManifest, StageRecord, MANIFEST_FILE};
