pub mod tensor;
pub mod corpus;
pub mod lexicon;
pub mod model;
pub mod eval;
pub mod train;
pub mod report;
pub mod cli;
pub mod synthetic;
