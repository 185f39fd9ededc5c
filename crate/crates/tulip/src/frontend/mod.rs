//! Network ingestion and golden evaluator (placeholder).
