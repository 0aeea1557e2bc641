pub mod agreement;
pub mod cli;
pub mod corpus;
pub mod exec;
pub mod gateway;
pub mod prompting;
pub mod report;
pub mod runner;
