pub mod bank;
pub mod config;
pub mod ids;
pub mod lifecycle;
pub mod llm;
pub mod retrieval;
pub mod serving;
pub mod skill;
