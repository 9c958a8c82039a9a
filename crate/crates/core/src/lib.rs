//! Coverage-guided greybox fuzzing for stateful stack-machine contracts.
//!
//! The pipeline: [`frontend`] compiles CLite source to a
//! [`package::ContractPackage`]; [`depgraph`] orders and duplicates calls
//! into transaction sequences; [`vm`] executes them with tracing;
//! [`corpus`], [`maskmut`] and [`energy`] drive selection, masked mutation
//! and budget allocation; [`oracles`] classify traces; [`campaign`] ties it
//! all together.

pub mod cfg;
pub mod contracts;
pub mod frontend;
pub mod opcode;
pub mod package;
pub mod word;
pub mod vm;
pub mod depgraph;
pub mod corpus;
pub mod energy;
pub mod maskmut;
pub mod oracles;
pub mod campaign;
