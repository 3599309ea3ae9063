pub mod equilibria;
pub mod explore;
pub mod simulate;
pub mod tire;
