//! Gradient estimators and the online training loops built on them.

pub mod kalman;
pub mod nbt;
pub mod rtrl;
pub mod schedule;
pub mod tbptt;
pub mod trainer;

pub use kalman::{CovarianceStructure, InformationFilter, InverseCovariance, Precision};
pub use nbt::{NbtState, ScalingRule};
pub use rtrl::{rtrl_step, FullJacobian};
pub use schedule::{Decay, LearningRate, TrainingSchedule};
pub use tbptt::{window_gradient, TbpttTrainer, WindowGradient};
pub use trainer::{
    sequence_gradient, sequence_loss, ExactSensitivity, Model, NbtSensitivity, OnlineLearner, OnlineTrainer,
    Sensitivity, UpdateRule,
};
