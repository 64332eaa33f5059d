//! End-to-end acceptance suite; everything lives in `tests/acceptance.rs`.
//!
//! Kept in its own package so the long learning runs execute after the
//! unit, property and CLI tests of the other crates.
