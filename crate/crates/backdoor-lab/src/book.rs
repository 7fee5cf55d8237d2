//! The guide chapters under `book/` double as doctests: each chapter is
//! included as module documentation here so `cargo test --doc` runs every
//! Rust snippet in the book. mdBook renders the same files.
