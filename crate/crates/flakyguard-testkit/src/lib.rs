//! Shared test scaffolding: fixture staging, the subject toolchain
//! binary, and scripted gateway backends for deterministic pipeline runs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::Duration;

use flakyguard_core::adapter::SubjectConfig;
use flakyguard_core::gateway::{Backend, GatewayError, PromptBundle, Purpose};

/// Locate the `minigo` binary next to the running test executable,
/// building it on demand when the workspace hasn't compiled it yet.
pub fn minigo_bin() -> PathBuf {
    static BIN: OnceLock<PathBuf> = OnceLock::new();
    BIN.get_or_init(|| {
        let exe = std::env::current_exe().expect("current_exe");
        let suffix = std::env::consts::EXE_SUFFIX;
        for dir in exe.ancestors().skip(1) {
            let candidate = dir.join(format!("minigo{suffix}"));
            if candidate.is_file() {
                return candidate;
            }
        }
        let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
        let root = manifest.parent().unwrap().parent().unwrap();
        let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".to_string());
        let status = std::process::Command::new(cargo)
            .args(["build", "-p", "minigo"])
            .current_dir(root)
            .status()
            .expect("spawn cargo build -p minigo");
        assert!(status.success(), "failed to build minigo");
        let candidate = root.join("target/debug").join(format!("minigo{suffix}"));
        assert!(candidate.is_file(), "minigo missing at {candidate:?}");
        candidate
    })
    .clone()
}

pub fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub struct StagedWorkspace {
    dir: tempfile::TempDir,
}

impl StagedWorkspace {
    pub fn path(&self) -> &Path {
        self.dir.path()
    }
}

/// Copy a named fixture tree into a fresh temporary workspace.
pub fn stage_fixture(name: &str) -> StagedWorkspace {
    let src = fixtures_root().join(name);
    assert!(src.is_dir(), "no fixture named {name} at {src:?}");
    let dir = tempfile::TempDir::new().expect("tempdir");
    for entry in walkdir::WalkDir::new(&src) {
        let entry = entry.expect("walk fixture");
        let rel = entry.path().strip_prefix(&src).unwrap();
        if rel.as_os_str().is_empty() {
            continue;
        }
        let dest = dir.path().join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&dest).unwrap();
        } else {
            std::fs::create_dir_all(dest.parent().unwrap()).unwrap();
            std::fs::copy(entry.path(), &dest).unwrap();
        }
    }
    StagedWorkspace { dir }
}

/// Adapter configuration pointing at the bundled toolchain, with the
/// run seed pinned so repeated invocations see identical schedules.
pub fn subject_config(seed: u64) -> SubjectConfig {
    let bin = minigo_bin().to_string_lossy().to_string();
    SubjectConfig {
        build_cmd: vec![bin.clone(), "build".into(), "{target}".into()],
        test_cmd: vec![
            bin,
            "test".into(),
            "{target}".into(),
            "--count".into(),
            "{runcount}".into(),
            "{raceflag}".into(),
            "--timeout".into(),
            "{timeout}".into(),
        ],
        env: vec![("MINIGO_SEED".into(), seed.to_string())],
        unused_pattern: "declared and not used".into(),
    }
}

struct Rule {
    purpose: Purpose,
    needle: String,
    response: String,
    remaining: u32,
}

/// Deterministic gateway: responses keyed by purpose plus a substring of
/// the user prompt, consumed in declaration order. Every call is logged
/// so tests can assert on what the pipeline actually asked.
#[derive(Default)]
pub struct ScriptedBackend {
    rules: Mutex<Vec<Rule>>,
    defaults: HashMap<Purpose, String>,
    calls: Mutex<Vec<(Purpose, String)>>,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn default_response(mut self, purpose: Purpose, response: &str) -> Self {
        self.defaults.insert(purpose, response.to_string());
        self
    }

    /// Fires every time the user prompt contains `needle`.
    pub fn rule(self, purpose: Purpose, needle: &str, response: &str) -> Self {
        self.push_rule(purpose, needle, response, u32::MAX)
    }

    /// Fires at most once, then falls through to later rules.
    pub fn rule_once(self, purpose: Purpose, needle: &str, response: &str) -> Self {
        self.push_rule(purpose, needle, response, 1)
    }

    fn push_rule(self, purpose: Purpose, needle: &str, response: &str, remaining: u32) -> Self {
        self.rules.lock().unwrap().push(Rule {
            purpose,
            needle: needle.to_string(),
            response: response.to_string(),
            remaining,
        });
        self
    }

    pub fn calls(&self) -> Vec<(Purpose, String)> {
        self.calls.lock().unwrap().clone()
    }
}

impl Backend for ScriptedBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, GatewayError> {
        self.calls
            .lock()
            .unwrap()
            .push((prompt.purpose, prompt.user.clone()));
        let mut rules = self.rules.lock().unwrap();
        for rule in rules.iter_mut() {
            if rule.purpose == prompt.purpose
                && rule.remaining > 0
                && prompt.user.contains(&rule.needle)
            {
                rule.remaining = rule.remaining.saturating_sub(1);
                return Ok(rule.response.clone());
            }
        }
        if let Some(default) = self.defaults.get(&prompt.purpose) {
            return Ok(default.clone());
        }
        Err(GatewayError::ReplayMiss {
            purpose: prompt.purpose.label(),
            hash: prompt.canonical_hash.clone(),
        })
    }
}

/// Wraps a backend with a fixed per-call latency, for exercising the
/// pipeline's wall-clock budget handling.
pub struct DelayBackend<B> {
    inner: B,
    delay: Duration,
}

impl<B> DelayBackend<B> {
    pub fn new(inner: B, delay: Duration) -> Self {
        DelayBackend { inner, delay }
    }
}

impl<B: Backend> Backend for DelayBackend<B> {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, GatewayError> {
        std::thread::sleep(self.delay);
        self.inner.complete(prompt)
    }
}
