pub mod error;
pub mod numerics;
pub mod encoder;
pub mod predictor;
pub mod segmenter;
pub mod eval;
pub mod cli;

pub use error::{Error, Result};

pub type Vector = numerics::Vector<f64>;
pub type Matrix = numerics::Matrix<f64>;
pub type Predictor = predictor::Predictor<f64>;
pub type Params = predictor::Params<f64>;
pub type Segmenter = segmenter::Segmenter<f64>;
pub type FeatureStream = encoder::FeatureStream<f64>;

pub type Vector32 = numerics::Vector<f32>;
pub type Matrix32 = numerics::Matrix<f32>;
pub type Predictor32 = predictor::Predictor<f32>;
pub type Segmenter32 = segmenter::Segmenter<f32>;
pub type FeatureStream32 = encoder::FeatureStream<f32>;
