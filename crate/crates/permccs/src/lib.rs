//! Permission-confined value-passing CCS: interpreter, confined semantics,
//! separation-logic satisfaction and a sequent proof checker.

pub mod confined;
pub mod corpus;
pub mod logic;
pub mod oracles;
pub mod parser;
pub mod process;
pub mod proof;
pub mod syntax;
