//! Multi-target tracking on hypothesis space.
//!
//! The multi-target posterior is carried as a weighted list of [`Hypothesis`]
//! values. Each hypothesis is a set of labeled Gaussian tracks; between scans
//! every hypothesis spawns children that encode births, deaths and the
//! assignment of each sensor return to an object, a newborn or clutter.
//! Children are drawn by a Metropolis random walk over the data-association
//! matrix instead of being enumerated, which keeps spawn events (many
//! simultaneous births and deaths) tractable.
//!
//! Module map:
//!
//! - [`filter`]: two-body dynamics, EKF prediction and update, sensor FOV.
//! - [`hypothesis`]: hypotheses, association events, priors, Bayes update, pruning.
//! - [`combinatorics`]: exact big-integer hypothesis counts.
//! - [`likelihood`]: data-association matrix and event likelihoods.
//! - [`sampler`]: the Metropolis walk over association events.
//! - [`oracle`]: brute-force enumeration used to verify everything above.
//! - [`simulator`]: ground truth, spawn events and measurement frames.
//! - [`tracker`]: the per-scan recursion and reporting.

pub mod combinatorics;
mod error;
pub mod filter;
pub mod hypothesis;
pub mod likelihood;
pub mod oracle;
pub mod rng;
pub mod sampler;
mod serde_helpers;
pub mod simulator;
pub mod tracker;

pub use error::{Error, Result};
pub use filter::{
    DynamicsConfig, GaussianTrack, SensorModel, StateVector, TrackLabel, EARTH_MU,
};
pub use hypothesis::{
    Assignment, AssociationEvent, BirthDeathConfig, Hypothesis, HypothesisId, PriorMode,
    PruneStrategy,
};
pub use likelihood::{ClutterModel, DataAssociationMatrix};
pub use sampler::SamplerConfig;
pub use simulator::{MeasurementFrame, ScenarioConfig, SpawnEvent, Truth};
pub use tracker::{Tracker, TrackerConfig, TrackerMode, TrackerReport};
