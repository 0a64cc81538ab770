//! Holds the workspace acceptance suite (`tests/acceptance.rs`). The package
//! sorts after the library and CLI packages, so their tests run first.
