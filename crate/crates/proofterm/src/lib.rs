//! Proof terms for infinitary first-order left-linear term rewriting.
//!
//! The library models reductions — finite and strongly convergent infinite
//! ones — as proof terms over a signature extended with rule symbols,
//! and provides:
//!
//! - rational (regular) infinite terms with bisimulation equality;
//! - sources, targets, minimal activity depth, and convergence analysis,
//!   including limits of omega-indexed compositions;
//! - permutation equivalence: the basic equations, derivation checking
//!   with omega-indexed bundles and depth-certified limit closures, a
//!   finitary decision procedure, and a sound depth-bounded check;
//! - the projection of one reduction over another through ordered clauses
//!   with fixed-prefix forms, fuel, and recurrence diagnostics;
//! - easily extractable steps and the partial confluence verifier;
//! - an independent brute-force residual oracle for the finitary fragment.

pub mod extract;
pub mod gen;
pub mod oracle;
pub mod parse;
pub mod peq;
pub mod project;
pub mod pterm;
pub mod term;
pub mod trs;
pub mod workspace;

pub use pterm::{ProofTerm, SchemaTerm};
pub use term::{Position, Term};
pub use trs::{Rule, Trs};
