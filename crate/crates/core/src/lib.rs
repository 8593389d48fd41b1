//! Grayscale image segmentation with grids of locally coupled nonlinear
//! oscillators.
//!
//! Each pixel drives one oscillator whose natural frequency is set by the
//! pixel intensity. Neighbouring oscillators are coupled, so regions of
//! similar intensity lock to a shared frequency. The per-node frequencies are
//! then clustered into regions. An Otsu intensity threshold serves as the
//! locality-blind baseline.

pub mod config;
pub mod error;
pub mod frequency;
pub mod harness;
pub mod image;
pub mod models;
pub mod network;
pub mod segmentation;

pub use config::{RunConfig, SegmentationMode};
pub use error::{ConfigError, PgmError, SegmentError, SimError};
pub use frequency::{estimate_frequency, frequency_histogram, FrequencyHistogram, FrequencyMap, NodeStatus};
pub use image::{add_gaussian_noise, generate_quadrant_image, generate_two_region_image, read_pgm, write_pgm, GrayImage, NoiseSpec};
pub use models::{BzParams, MemsParams, ModelConfig, ModelKind, NeuralParams};
pub use network::{simulate, simulate_oscillator, CouplingSpec, NetworkState, SimConfig, SimOutcome};
pub use segmentation::{cluster_by_gap, matched_accuracy, mislabel_rate, otsu_threshold, segment_binary, segment_otsu, LabelMap, SegmentationMetrics};
