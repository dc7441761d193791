//! Neural-network surrogates: layers with reverse-mode gradients, min-max
//! normalization, L-BFGS training with early stopping and the surrogate
//! architectures.

pub mod network;
pub mod normalize;
pub mod surrogate;
pub mod train;

pub use network::{LayerSpec, Network};
pub use normalize::{voltage_features, MinMax, NormalizationSpec};
pub use surrogate::{
    hyperparameter_search, train_surrogate, ConvStage, SearchTrial, SurrogateArchitecture,
    SurrogateKind, SurrogateTrainOptions, TrainedNet, TrainedSurrogate, TrainingProvenance,
};
pub use train::{EarlyStopping, EpochRecord, TrainOptions, TrainingHistory};
