pub mod autodiff;
pub mod datagen;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod losses;
pub mod model;
pub mod nn;
pub mod online;
pub mod optim;
pub mod priors;
pub mod scalar;

pub use autodiff::{Graph, Var};
pub use error::{LstdError, Result};
pub use scalar::Scalar;

pub type LstdModel64 = model::LstdModel<f64>;
pub type LstdModel32 = model::LstdModel<f32>;
pub type LstdForecaster64 = online::LstdForecaster<f64>;
pub type LstdForecaster32 = online::LstdForecaster<f32>;
pub type PriorBank64 = priors::PriorNetworkBank<f64>;
pub type PriorBank32 = priors::PriorNetworkBank<f32>;
