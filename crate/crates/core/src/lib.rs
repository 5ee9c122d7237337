//! Minimum-risk portfolio selection with a cardinality constraint and an
//! optional return floor, compiled to QUBO/Ising form and solved with
//! simulated annealing, tabu search, a genetic algorithm or exact
//! enumeration.
//!
//! ```
//! use portqubo::{build_qubo, solve_qubo_bruteforce, decode, AssetUniverse, PenaltyParams,
//!     PortfolioInstance, ReturnMode, SlackEncoding, SquareMatrix};
//!
//! let sigma = SquareMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
//! let u = AssetUniverse::new(vec!["a".into(), "b".into()], vec![1.0, 1.0], sigma).unwrap();
//! let inst = PortfolioInstance::new(u, 1, 0.0, ReturnMode::None).unwrap();
//! let params = PenaltyParams::new(1.0, 10.0, 0.0).unwrap();
//! let (q, layout) = build_qubo(&inst, &params, SlackEncoding::default()).unwrap();
//! let (bits, _) = solve_qubo_bruteforce(&q).unwrap();
//! assert_eq!(decode(&inst, &layout, &bits).unwrap().x, vec![true, false]);
//! ```

pub mod bench;
pub mod error;
pub mod ingest;
pub mod model;
pub mod numfmt;
pub mod penalty;
pub mod qubo;
pub mod solvers;

pub use error::{Error, Result};
pub use model::{
    check_feasible, portfolio_return, portfolio_risk, AssetUniverse, Feasibility,
    PortfolioInstance, Provenance, ReturnMode, Solution, SquareMatrix,
};
pub use penalty::{
    estimate_lambda1, estimate_lambda2, estimate_lambdas, grid_search, lambda_sweep, LambdaEstimate,
};
pub use qubo::{
    build_qubo, build_qubo_equality, build_qubo_inequality, chain_strength_bound, decode,
    ising_energy, qubo_energy, slack_count, to_ising, IsingModel, PenaltyParams, QuboMatrix,
    SlackEncoding, VariableLayout,
};
pub use solvers::{
    run_restarts, solve_exhaustive_subsets, solve_ga, solve_qubo_bruteforce, solve_sa, solve_tabu,
    AnnealConfig, GaConfig, QuboSolver, SolveResult, SolverConfig, TabuConfig,
};
