pub mod cli;
pub mod coordinator;
pub mod grid;
pub mod prosumer;
pub mod qp;
pub mod sim;
