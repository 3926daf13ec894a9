//! Disappearance and creation attacks: masked perturbations, their losses,
//! TV and non-printability regularisers, and a projected SGD optimiser that
//! averages over sampled placements.

mod config;
mod io;
mod losses;
mod optimize;
mod perturbation;

pub use config::{AttackConfig, CreationOptions, InitMode};
pub use io::{delta_dump_bytes, parse_delta_dump, read_delta_dump, trace_csv, write_delta_dump, write_trace_csv};
pub use losses::{
    candidate_cells, loss_creation, loss_disappearance, nps, nps_graph, tv_norm, tv_norm_graph, CreationPhase,
};
pub use optimize::{
    creation_carrier, initial_perturbation, objective, optimize_creation, optimize_disappearance, AttackOutcome,
    ObjectiveTerms, SceneLoss, TraceRow, ATTACK_STREAM, INIT_STREAM,
};
pub use perturbation::{MaskShape, PerturbationSpec, PrintableSet};
