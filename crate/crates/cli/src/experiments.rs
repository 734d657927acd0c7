//! Experiment drivers (placeholder, filled in with the harness).
