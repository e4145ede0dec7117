//! Agent-based simulator of repeated school-choice markets in which students
//! form preferences from outcome predictions and returning schools can attack
//! those predictions through the way they interact with their students.
//!
//! The market algebra, predictor, strategies and engine are generic over the
//! scalar type (see [`Scalar`]); the aliases below fix it to `f64`, which is
//! what the analysis layer and the CLI use.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod market;
pub mod mechanisms;
pub mod prediction;
pub mod report;
pub mod rng;
pub mod scalar;
pub mod strategies;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type AttributeVector = market::AttributeVector<f64>;
pub type Student = market::Student<f64>;
pub type School = market::School<f64>;
pub type WeightedPreference = market::WeightedPreference<f64>;
pub type InteractionRecord = market::InteractionRecord<f64>;
pub type History = market::History<f64>;
pub type StrategyKind = strategies::StrategyKind<f64>;
pub type PredictorConfig = prediction::PredictorConfig<f64>;
pub type TrainingSet = prediction::TrainingSet<f64>;
pub type SimulationConfig = engine::SimulationConfig<f64>;
pub type SimulationResult = engine::SimulationResult<f64>;
pub type RoundResult = engine::RoundResult<f64>;
pub type Stats = engine::Stats<f64>;
