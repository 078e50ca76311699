//! Deterministic 2D multigroup thermal radiative transfer on rectangular
//! meshes, solved with a multilevel quasidiffusion hierarchy: a high-order
//! transport sweep supplies Eddington-tensor closures to coupled multigroup
//! and grey low-order moment systems, and an iteration cycle over coarse
//! time blocks drives the whole stack to a self-consistent solution.

pub mod error;
pub mod grid;
pub mod physics;

pub use error::{ConfigError, Error, IoError, Result, SolverError};
pub use grid::{
    build_quadrature, build_time_blocks, AngularQuadrature, FrequencyGroups, QuadratureLayout,
    SpatialMesh, TimeBlockPartition,
};
pub use physics::{MaterialModel, MaterialTables, OpacityLaw};

pub mod transport;
pub use transport::{
    eddington_tensor, moments, sweep_step, AngularIntensity, BoundaryCondition,
    BoundaryIntensities, BoundarySet, EddingtonClosure, SweepResult,
};

pub mod loqd;
pub use loqd::{
    grey_coefficients, grey_meb_solve, mg_loqd_step, BandedMatrix, GreyCoefficients, GreyResult,
    MgStepResult, MomentFields,
};

pub mod driver;
pub use driver::{
    run_block, run_per_step_reference, run_problem, BlockLog, BlockState, ClosureStore,
    ConvergenceCriteria, Problem, RunRecord, StepSolution, XiEntry,
};

pub mod config;
pub mod diagnostics;
pub use config::{parse_config, RunConfig};
pub use diagnostics::{
    average_convergence_rate, error_vs_reference, geometric_rate, ErrorVsReference,
    DEFAULT_RATE_FLOOR,
};

pub mod output;
pub use output::{
    read_fields_csv, read_run, saved_step_numbers, write_fields_csv, write_rates_csv, write_run,
    RunMeta,
};
