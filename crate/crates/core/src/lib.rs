pub mod error;
pub mod fock;
pub mod linalg;
pub mod liouvillian;
pub mod meanfield;
pub mod fluctuations;
pub mod observables;
