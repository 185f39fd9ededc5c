//! Top-level machine model and cost model (placeholder).
