//! TOML experiment configuration (placeholder, filled in with the harness).
