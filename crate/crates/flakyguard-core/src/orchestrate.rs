//! The nested fixing loops: context (M) → thought (P) → fix (N), with
//! reflection memory, compile/test validation, hash-verified reverts,
//! and report generation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub m: u32,
    pub p: u32,
    pub n: u32,
    pub runs: u32,
    pub time_limit_secs: u64,
    pub repair_rounds: u32,
    pub simplify: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            m: 3,
            p: 2,
            n: 3,
            runs: 1000,
            time_limit_secs: 7200,
            repair_rounds: 2,
            simplify: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RootCauseCategory {
    ScheduleRandomness,
    UnorderedCollectionIteration,
    TimestampDiscrepancy,
    StatePollution,
    TimeDependent,
    Other(String),
}

impl RootCauseCategory {
    pub fn label(&self) -> &str {
        match self {
            RootCauseCategory::ScheduleRandomness => "schedule-randomness",
            RootCauseCategory::UnorderedCollectionIteration => "unordered-collection-iteration",
            RootCauseCategory::TimestampDiscrepancy => "timestamp-discrepancy",
            RootCauseCategory::StatePollution => "state-pollution",
            RootCauseCategory::TimeDependent => "time-dependent",
            RootCauseCategory::Other(label) => label,
        }
    }

    /// The fixed taxonomy with one-line descriptions, in prompt order.
    pub fn taxonomy() -> &'static [(&'static str, &'static str)] {
        &[
            (
                "schedule-randomness",
                "nondeterministic goroutine, channel, or select scheduling",
            ),
            (
                "unordered-collection-iteration",
                "iteration order over maps or sets assumed to be stable",
            ),
            (
                "timestamp-discrepancy",
                "timestamps captured at different instants or precisions compared for equality",
            ),
            (
                "state-pollution",
                "shared state (environment variables, globals, files) leaking between tests",
            ),
            (
                "time-dependent",
                "logic sensitive to clock boundaries, durations, or cutoffs",
            ),
            ("other", "anything else — name the category yourself"),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thought {
    pub category: RootCauseCategory,
    pub explanation: String,
    pub plan: String,
}

/// Failed thoughts and one-line summaries of how their fix attempts
/// died, fed back into later prompts (reflection).
#[derive(Debug, Clone, Default)]
pub struct ThoughtHistory {
    pub failed: Vec<(Thought, Vec<String>)>,
}

impl ThoughtHistory {
    pub fn record(&mut self, thought: Thought, attempt_summaries: Vec<String>) {
        self.failed.push((thought, attempt_summaries));
    }

    pub fn is_empty(&self) -> bool {
        self.failed.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationVerdict {
    Accepted,
    CompileFailed,
    TestFailed,
    Timeout,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationResult {
    pub built: bool,
    pub repair_rounds_used: u32,
    pub reruns_passed: u32,
    pub reruns_total: u32,
    pub verdict: ValidationVerdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixStatus {
    Fixed,
    NotReproduced,
    Exhausted,
    TimedOut,
}

/// One row of the attempts ledger, serialized to the JSONL artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub m: u32,
    pub p: u32,
    pub n: u32,
    pub category: String,
    pub verdict: ValidationVerdict,
    pub reruns_passed: u32,
    pub reruns_total: u32,
    pub repair_rounds_used: u32,
    pub revert_verified: bool,
}

#[derive(Debug, Clone)]
pub struct FixOutcome {
    pub status: FixStatus,
    pub diff: Option<String>,
    pub thought: Option<Thought>,
    pub attempts: Vec<AttemptRecord>,
}
