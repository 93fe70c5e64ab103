//! Set autoencoder, clause-body predictor and their training loop.

pub mod adam;
pub mod autoencoder;
pub mod checkpoint;
pub mod layers;
pub mod model;
pub mod params;
pub mod rule;
pub mod segments;
pub mod train;

pub use adam::{Adam, AdamConfig};
pub use autoencoder::{AutoencoderConfig, LatentMode, SetAutoencoder};
pub use checkpoint::{load_checkpoint, read_setm, save_checkpoint, write_setm};
pub use layers::{Forward, Mode};
pub use model::{predict, SetModel};
pub use params::{Binding, ParamId, ParamStore};
pub use rule::{RuleNet, RuleNetConfig};
pub use segments::{Activation, Segment, SegmentPlan};
pub use train::{calibrate_batchnorm, evaluate_loss, train, EpochRecord, TemperatureSchedule, TrainConfig, TrainReport};
