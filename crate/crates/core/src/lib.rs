pub mod corpusgen;
pub mod bagdata;
pub mod bagloss;
pub mod encoders;
pub mod evaluator;
pub mod runner;
