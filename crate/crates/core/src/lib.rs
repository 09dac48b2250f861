//! Branching random walk in a time-random environment, killed below a
//! moving barrier: model laws and environments, critical constants,
//! Brownian tube functionals, associated-walk identities, survival and
//! extinction-rate simulation, and the small-deviation rate solvers.

#![forbid(unsafe_code)]
pub mod env;
pub mod error;
pub mod exact;
pub mod gamma;
pub mod law;
pub mod rates;
pub mod sim;
pub mod stats;
pub mod streams;
pub mod tilt;
pub mod walk;
pub use env::{draw_environment, EnvironmentModel, GaussianFamilySpec, RealizedEnvironment};
pub use error::{Error, Result};
pub use exact::exact_survival;
pub use gamma::{
    estimate_gamma, gamma_sigma, quenched_tube_mass, GammaEstimate, GammaParams, GammaSigma,
};
pub use law::{Atom, BroodLaw, CountLaw, FiniteLaw, GaussianLaw};
pub use rates::{
    b2_root, barrier_shift_response, critical_a, homogeneous_critical_a, rate_2b,
    solve_q_shooting, x_b_root, RateSolution, XbRoot,
};
pub use sim::{
    estimate_extinction_rate, estimate_survival, estimate_survival_staged, run_generations,
    step_generation, BarrierMode, BarrierSpec, PopulationSnapshot, RatePoint, ReplicaOutcome,
    StagedSurvival, SurvivalEstimate,
};
pub use stats::{
    annealed_kappa, check_conditions, solve_theta_star, ConditionsReport, LambdaConfig,
    ModelConstants,
};
pub use tilt::{tilt_law, TiltedStepLaw};
pub use walk::{
    builtin_many_to_one_checks, many_to_one_check, sample_associated_walk, tube_probability,
    AssociatedWalkPath, FixtureCheck, ManyToOneCheck, PiecewisePath, TubeEstimate, TubeSpec,
};
