//! Placeholder while chapters are written.
