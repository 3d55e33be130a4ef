pub mod bench;
pub mod eval;
pub mod ingest;
pub mod plan;
pub mod run;
