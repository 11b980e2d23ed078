//! Interpreter and test runner for a Go subset, with seeded nondeterminism:
//! goroutine scheduling, `select` choice, map iteration order, and a virtual
//! clock all derive from `MINIGO_SEED` mixed with the run index, so flaky
//! behavior is reproducible run-for-run.
//!
//! A test target is a directory; `.go` files at the workspace root are
//! compiled into every target (shared support code lives there).

use std::fmt;

pub mod ast;
pub mod builtins;
pub mod check;
pub mod interp;
pub mod runner;
pub mod value;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}: {}", self.file, self.line, self.col, self.message)
    }
}

pub use runner::{parse_selector, run_build, run_tests, RunOptions};
