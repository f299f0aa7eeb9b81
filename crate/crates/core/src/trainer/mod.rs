//! Analytic gradients, plain SGD and the three-phase sequential training
//! protocol: semantic head first, then utility coefficients, then the
//! residual term, each phase freezing everything it does not train.

mod check;
mod config;
mod gradient;
mod phases;

pub use check::{
    check_gradient, gradient_audit, random_case, relative_error, AuditCase, AuditReport,
    GradientCheck, FD_STEP, RELATIVE_FLOOR,
};
pub use config::{PhaseConfig, TrainConfig};
pub use gradient::{gradient, sgd_step, Gradient, StepConfig};
pub use phases::{
    train_phase, train_phase1, train_phase2, train_phase3, train_sequential,
    train_sequential_with, Phase, PhaseResult, SequentialOutcome, StopReason, TrainingData,
    TrainingInput,
};
