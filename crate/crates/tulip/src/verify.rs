//! Oracle suites (placeholder).
