//! Shadow-copy instrumentation. Every function entry in scope gains a
//! probe call that appends a call-edge record at runtime; the probe is
//! injected after the opening brace without adding lines, so recorded
//! declaration lines keep matching the pristine parse. Prompts are
//! always built from the original workspace, never the shadow.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

use crate::goparse::{self, parse_functions, probe_body};
use crate::simplify::{apply_edits, Edit, EditTag};

pub const SUPPORT_FILE: &str = "flakyguard_probe.go";
pub const LOG_ENV: &str = "FLAKYGUARD_LOG";
const ENTER_STMT: &str = " flakyguardEnter()";
const ENTER_STMT_INLINE: &str = " flakyguardEnter();";

/// Recorder, in the subject language. Lives at the workspace root so
/// every target links it. One record per new (callee, caller) pair,
/// flushed on append; never fails the test on I/O trouble.
const SUPPORT_SOURCE: &str = r#"package main

import (
	"os"
	"runtime"
	"strconv"
)

var flakyguardSeen = make(map[string]bool)

func flakyguardEnter() {
	path := os.Getenv("FLAKYGUARD_LOG")
	if path == "" {
		return
	}
	run := os.Getenv("MINIGO_RUN")
	if run != "" {
		path = path + "." + run
	}
	file, line, name, ok := runtime.Caller(1)
	if !ok {
		return
	}
	callerFile, callerLine, callerName, callerOk := runtime.Caller(2)
	if !callerOk {
		callerFile = "-"
		callerLine = 0
		callerName = "-"
	}
	record := "MethodEntry: " + file + ", " + strconv.Itoa(line) + ", " + name + " Caller: " + callerFile + ", " + strconv.Itoa(callerLine) + ", " + callerName
	if flakyguardSeen[record] {
		return
	}
	flakyguardSeen[record] = true
	if !os.AppendLine(path, record) {
		os.AppendLine(path, "RECORDER-ERROR")
	}
}
"#;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub decl_line: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentationManifest {
    pub entries: Vec<ManifestEntry>,
    /// Functions with empty bodies: nothing to observe, nothing injected.
    pub skipped: Vec<ManifestEntry>,
    pub support_unit: PathBuf,
    pub log_path: PathBuf,
}

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error(transparent)]
    Parse(#[from] goparse::ParseError),
    #[error("workspace copy failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("no injection point in `{file}` for function at line {line}")]
    InjectionConflict { file: String, line: u32 },
    #[error("workspace already contains `{0}`")]
    SupportCollision(String),
}

fn copy_tree(from: &Path, to: &Path) -> std::io::Result<()> {
    for entry in WalkDir::new(from) {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(from).expect("walk stays inside");
        if rel.as_os_str().is_empty() {
            continue;
        }
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            std::fs::create_dir_all(&dest)?;
        } else {
            if let Some(parent) = dest.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::copy(entry.path(), &dest)?;
        }
    }
    Ok(())
}

fn rel_file(dir: &str, file_name: &str) -> String {
    if dir == "." || dir.is_empty() {
        file_name.to_string()
    } else {
        format!("{}/{}", dir.trim_end_matches('/'), file_name)
    }
}

fn go_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().map(|x| x == "go").unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}

/// Copies `workspace` into `shadow` (an existing empty directory),
/// injects an entry probe into every function of every package in
/// `scope`, and drops the recorder at the shadow root. The manifest
/// pairs with `parse_functions` over the touched files: every parsed
/// function shows up either in `entries` or in `skipped`.
pub fn instrument_workspace(
    workspace: &Path,
    scope: &[String],
    shadow: &Path,
    log_path: &Path,
) -> Result<InstrumentationManifest, InstrumentError> {
    if workspace.join(SUPPORT_FILE).exists() {
        return Err(InstrumentError::SupportCollision(SUPPORT_FILE.to_string()));
    }
    copy_tree(workspace, shadow)?;

    let mut dirs: Vec<&String> = scope.iter().collect();
    dirs.sort();
    dirs.dedup();

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for dir in dirs {
        for path in go_files(&shadow.join(dir))? {
            let file_name = path.file_name().unwrap().to_string_lossy().to_string();
            let rel = rel_file(dir, &file_name);
            let text = std::fs::read_to_string(&path)?;
            let mut edits: Vec<Edit> = Vec::new();
            for f in parse_functions(&text, &rel)? {
                let entry = ManifestEntry {
                    file: rel.clone(),
                    decl_line: f.decl_line,
                    name: f.name.clone(),
                };
                let probe = probe_body(&text, &f.body_span).ok_or_else(|| {
                    InstrumentError::InjectionConflict {
                        file: rel.clone(),
                        line: f.decl_line,
                    }
                })?;
                if probe.empty {
                    skipped.push(entry);
                    continue;
                }
                let stmt = if probe.same_line_content {
                    ENTER_STMT_INLINE
                } else {
                    ENTER_STMT
                };
                edits.push(Edit {
                    span: probe.insert_at..probe.insert_at,
                    replacement: stmt.to_string(),
                    tag: EditTag::Other,
                });
                entries.push(entry);
            }
            let updated =
                apply_edits(&text, &edits).expect("insertions at distinct points cannot overlap");
            std::fs::write(&path, updated)?;
        }
    }

    let support_unit = shadow.join(SUPPORT_FILE);
    std::fs::write(&support_unit, SUPPORT_SOURCE)?;
    let log_path = std::path::absolute(log_path)?;
    Ok(InstrumentationManifest {
        entries,
        skipped,
        support_unit,
        log_path,
    })
}

/// Inverse of the injection for one file's text: dropping the probe
/// calls restores the original bytes.
pub fn strip_instrumentation(text: &str) -> String {
    text.replace(ENTER_STMT_INLINE, "").replace(ENTER_STMT, "")
}

/// Per-run log file for a given repetition index.
pub fn run_log_path(base: &Path, run_index: u32) -> PathBuf {
    let mut name = base.as_os_str().to_os_string();
    name.push(format!(".{run_index}"));
    PathBuf::from(name)
}
