//! Job-shop scheduling with interval models, dispatching environments and learned policies.

pub mod dispatch;
pub mod env;
pub mod error;
pub mod expert;
pub mod instance;
pub mod model;
pub mod policy;
pub mod training;

pub use dispatch::{Policy, Rule};
pub use env::{Action, Env, EnvConfig, Observation, Slot, TimeRule};
pub use error::*;
pub use instance::{Format, Instance, OpId, Operation, Solution, Time};
pub use policy::{Adam, PolicyNet};
pub use model::{compress, validate, ModelState};
