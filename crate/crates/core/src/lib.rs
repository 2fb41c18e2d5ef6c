pub mod duels;
pub mod event;
pub mod forecast;
pub mod glicko;
pub mod learn;
pub mod pipeline;
pub mod pv;
pub mod reward;
pub mod roster;
pub mod scalar;
pub mod season;
pub mod testkit;
pub mod xg;

pub use scalar::Scalar;

pub type Model64 = learn::Model<f64>;
pub type TrainingRow64 = learn::TrainingRow<f64>;
pub type GbtConfig64 = learn::GbtConfig<f64>;
pub type LogisticConfig64 = learn::LogisticConfig<f64>;
pub type PvConfig64 = pv::PvConfig<f64>;
pub type LabeledAction64 = pv::LabeledAction<f64>;
pub type GlickoParams64 = glicko::GlickoParams<f64>;
pub type GlickoState64 = glicko::GlickoState<f64>;
pub type Matchup64 = glicko::Matchup<f64>;
