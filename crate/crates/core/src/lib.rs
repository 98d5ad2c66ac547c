//! Proving and refuting differential privacy of small probabilistic programs by relational
//! symbolic execution with approximate couplings.

pub mod concrete;
pub mod corpus;
pub mod engine;
pub mod constraints;
pub mod lang;
pub mod oracle;
pub mod solver;
pub mod symexec;
