mod engine;
mod export;
mod plan;
mod tangle;
mod types;

pub use engine::*;
pub use export::{derivation_dot, derivation_json};
pub use plan::{extract_plan, find_cycle, schedule, ImplementationPlan, PlanError, PlannedStep};
pub use tangle::{tangles, TanglePair, TangleReport};
pub use types::*;
