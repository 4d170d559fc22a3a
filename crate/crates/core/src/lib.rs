pub mod backend;
pub mod chat;
pub mod cli;
pub mod config;
pub mod engine;
pub mod exec;
pub mod graph;
pub mod imports;
pub mod pool;
pub mod review;
pub mod roles;
pub mod tokens;
pub mod workspace;
