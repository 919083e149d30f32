//! External simulator processes.
//!
//! The command template is run through `sh -c` after substituting `{params}`
//! with the path of a parameter file (one `name=value` line per consumed
//! parameter) and `{output}` with the path the command should write its
//! results to, one value per line in output-grid order. A command that never
//! creates the output file has its standard output read instead.

use std::fs::{self, File};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalCommand {
    pub template: String,
    pub workdir: Option<PathBuf>,
    pub timeout_seconds: f64,
}

impl ExternalCommand {
    pub fn new(template: impl Into<String>, timeout_seconds: f64) -> Self {
        Self {
            template: template.into(),
            workdir: None,
            timeout_seconds,
        }
    }

    pub fn with_workdir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.workdir = Some(dir.into());
        self
    }

    pub(crate) fn run(
        &self,
        names: &[String],
        values: &[f64],
        expected: usize,
    ) -> std::result::Result<Vec<f64>, String> {
        let scratch = tempfile::tempdir().map_err(|e| format!("cannot create scratch dir: {e}"))?;
        let params_path = scratch.path().join("params.txt");
        let output_path = scratch.path().join("output.txt");
        let stdout_path = scratch.path().join("stdout.txt");
        let stderr_path = scratch.path().join("stderr.txt");

        let body: String = names.iter().zip(values).map(|(n, v)| format!("{n}={v:e}\n")).collect();
        fs::write(&params_path, body).map_err(|e| format!("cannot write parameter file: {e}"))?;

        let command = self
            .template
            .replace("{params}", &shell_quote(&params_path.to_string_lossy()))
            .replace("{output}", &shell_quote(&output_path.to_string_lossy()));
        let stdout = File::create(&stdout_path).map_err(|e| e.to_string())?;
        let stderr = File::create(&stderr_path).map_err(|e| e.to_string())?;
        let mut cmd = Command::new("sh");
        cmd.arg("-c")
            .arg(&command)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr);
        if let Some(dir) = &self.workdir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|e| format!("cannot start command: {e}"))?;

        let deadline = Instant::now() + Duration::from_secs_f64(self.timeout_seconds.max(0.0));
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(format!("timed out after {} s", self.timeout_seconds));
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(e) => return Err(format!("cannot wait for command: {e}")),
            }
        };
        if !status.success() {
            let err = fs::read_to_string(&stderr_path).unwrap_or_default();
            let tail: String = err.lines().rev().take(5).collect::<Vec<_>>().join(" | ");
            return Err(format!("command exited with {status}: {tail}"));
        }

        let text = if output_path.exists() {
            fs::read_to_string(&output_path)
        } else {
            fs::read_to_string(&stdout_path)
        }
        .map_err(|e| format!("cannot read command output: {e}"))?;
        let mut out = Vec::with_capacity(expected);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| format!("output line {}: '{line}' is not a number", i + 1))?;
            out.push(v);
        }
        if out.len() != expected {
            return Err(format!(
                "output count mismatch: expected {expected} values, got {}",
                out.len()
            ));
        }
        Ok(out)
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}
