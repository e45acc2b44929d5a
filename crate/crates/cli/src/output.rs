//! Artifact writing. Every file starts with the tool version and the scenario
//! hash so results can be traced back to their inputs.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::scenario::Loaded;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    scenario: &'a str,
    scenario_sha256: &'a str,
    command: &'a str,
    report: &'a T,
}

pub fn json_string<T: Serialize>(loaded: &Loaded, command: &str, report: &T) -> CliResult<String> {
    let env = Envelope {
        tool: "contlab",
        version: VERSION,
        scenario: &loaded.scenario.name,
        scenario_sha256: &loaded.sha256,
        command,
        report,
    };
    let mut s = serde_json::to_string_pretty(&env).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn csv_header(loaded: &Loaded) -> Vec<String> {
    vec![
        format!("contlab {VERSION}"),
        format!("scenario {}", loaded.scenario.name),
        format!("scenario_sha256 {}", loaded.sha256),
    ]
}

pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn new(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn write(&self, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
        let p = self.root.join(name);
        std::fs::write(&p, contents)?;
        Ok(p)
    }

    pub fn json<T: Serialize>(&self, name: &str, loaded: &Loaded, command: &str, report: &T) -> CliResult<PathBuf> {
        self.write(name, json_string(loaded, command, report)?.as_bytes())
    }

    /// CSV with `#`-prefixed header lines followed by `rows` under `columns`.
    pub fn csv(&self, name: &str, loaded: &Loaded, columns: &[&str], rows: &[Vec<String>]) -> CliResult<PathBuf> {
        let mut buf = Vec::new();
        for line in csv_header(loaded) {
            buf.extend_from_slice(format!("# {line}\n").as_bytes());
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(columns).map_err(|e| CliError::Io(e.to_string()))?;
            for r in rows {
                w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
            }
            w.flush()?;
        }
        self.write(name, &buf)
    }
}

/// Shortest round-trip float formatting for CSV cells.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
