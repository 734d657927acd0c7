//! Convergence reports (placeholder, filled in with the harness).
