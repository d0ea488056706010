//! Generalization laboratory for stochastic convex optimization over ℓ_p
//! balls: problem instances, ERM and worst near-ERM search, Bregman-type
//! divergences, Rademacher complexity, and reproducible Monte-Carlo sweeps.

pub mod divergence;
pub mod error;
pub mod instance;
pub mod net;
pub mod norm;
pub mod rademacher;
pub mod report;
pub mod seed;
pub mod solver;
pub mod sweep;
pub mod vector;
pub mod verify;

pub use divergence::{
    build_certificate, check_conditional_claims, divergence_report, ClaimTally,
    DivergenceReport, OptimalityCertificate, RepEstimate, CERTIFICATE_TOL,
};
pub use error::{Error, Result};
pub use instance::{
    invariant_battery, make_appendix_pair, make_coin_instance, make_hard_instance,
    make_quadratic_instance, InstanceDescriptor, Outcome, Sample, ScoInstance,
};
pub use net::{build_net, Net};
pub use norm::{NormBall, NormFamily};
pub use rademacher::{check_monotonicity, rad_exact, rad_inverse, rad_mc, rad_upper_bound, RadEstimate, RadMethod};
pub use report::{emit_report, ReportFiles};
pub use solver::{minimize_empirical, population_minimizer, worst_near_erm, Premise, SolveReport};
pub use sweep::{run_sweep, SweepConfig, SweepResult};
pub use verify::{verify_concentration, VerificationReport, VerifyMode};
