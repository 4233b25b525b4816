pub mod artifacts;
pub mod composition;
pub mod forest;
pub mod ingest;
pub mod llm;
pub mod markdown;
pub mod model;
pub mod pipeline;
pub mod prompts;
pub mod state;
pub mod structuring;
pub mod taxonomy;
pub mod view;
