//! Nexmon CSI ingestion for 80 MHz captures: pcap decoding, amplitude
//! windows, tone masking, smoothing and normalization into radio images,
//! plus a synthetic scenario generator and an on-disk dataset format.

pub mod dataset;
pub mod error;
pub mod frame;
pub mod image;
pub mod labels;
pub mod mask;
pub mod matrix;
pub mod pcap;
pub mod preprocess;
pub mod synth;

pub use dataset::{dataset_read, dataset_write, synth_dataset, Sample};
pub use error::{CsiError, Result};
pub use frame::{decode_payload, encode_payload, CsiFrame, CSI_PORT, SUBCARRIERS};
pub use image::RadioImage;
pub use labels::{Activity, Occupancy, TAXONOMY_VERSION};
pub use mask::{filter_rows, filter_subcarriers, SubcarrierMask, KEPT_TONES};
pub use matrix::{assemble_matrix, CsiMatrix, Matrix, WINDOW};
pub use pcap::{parse_pcap, parse_pcap_reader, write_capture, ParseStats, PcapWriter};
pub use preprocess::{moving_average, to_radio_image, Preprocessor, DEFAULT_SMOOTHING};
pub use synth::{derive_seed, synth_generate, synth_matrix, Scenario};
