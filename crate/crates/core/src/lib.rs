//! Classical spin dynamics with counter-diabatic driving, and its use as a
//! combinatorial optimizer on random-field Ising instances with an exact
//! max-flow ground-state oracle.

pub mod anneal;
pub mod cd;
pub mod io;
pub mod models;
pub mod oracle;
pub mod rng;
pub mod spin;
