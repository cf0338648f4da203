pub mod bench;
pub mod engine;
pub mod error;
pub mod gaussian;
pub mod gp;
pub mod nystrom;
pub mod optim;
pub mod points;
pub mod proposal;
pub mod quadrature;
pub mod recombination;
