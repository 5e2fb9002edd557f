//! Diamond-distance measurement incompatibility: conic solver, quantifiers,
//! structure bounds and Bell/steering analogs.

pub mod assemblage;
pub mod bell;
pub mod conic;
pub mod error;
pub mod incompat;
pub mod linalg;
pub mod mub;
pub mod random;
pub mod strategy;
pub mod structures;

pub use assemblage::{parent_povm_simulation, Povm, SimulationMap, WeightedAssemblage};
pub use bell::{BehaviorTable, ChshOptimum, ChshValues, SettingResource, SteeringAssemblage};
pub use conic::{SolverStatus, SolverTolerances};
pub use error::{Error, Result};
pub use incompat::{incompatibility, incompatibility_with, DualCertificate, IncompatOptions, IncompatReport};
pub use linalg::{ComplexMatrix, Hermitian};
pub use mub::{build_mub, MubFamily, RobustnessData};
pub use strategy::DeterministicStrategySet;
pub use structures::{DecompositionReport, GainReport, SplitSandwich, SubsetBound, SubsetBounds};
