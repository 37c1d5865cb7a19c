//! Robust co-optimization of a behind-the-meter battery for primary frequency
//! reserve and self-consumption.

pub mod artifact;
pub mod conic;
pub mod freq;
pub mod model;
pub mod optimizer;
pub mod policy;
pub mod scenarios;
pub mod simulator;
pub mod stats;
pub mod uncertainty;

pub use model::{BatteryConfig, EnergySeries, PowerSeries, PriceSet, TimeGrid};
pub use policy::{RechargePolicy, ScEnvelope, StateFeedbackController};
pub use uncertainty::UncertaintyModel;
