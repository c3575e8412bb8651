use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use duality_core::benchmarks::HjbReport;
use duality_core::dual::DegeneracyReport;
use duality_core::search::{GapReport, SearchTrace};
use duality_core::BoundEstimate;

use crate::config::RunConfig;

pub const TOOL: &str = "duality";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    /// A gap fell below minus three combined standard errors plus the allowance.
    Failed,
    Error,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Error => 1,
            Status::Failed => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub code: String,
    pub message: String,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// The resolved config; absent only when it could not be parsed.
    pub config: Option<RunConfig>,
    pub status: Status,
    #[serde(default)]
    pub estimates: Vec<BoundEstimate>,
    #[serde(default)]
    pub gaps: Vec<GapReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hjb: Option<HjbReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<SearchTrace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degeneracy: Option<DegeneracyReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

impl Report {
    pub fn new(subcommand: &str, config: Option<RunConfig>) -> Self {
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            config,
            status: Status::Ok,
            estimates: Vec::new(),
            gaps: Vec::new(),
            hjb: None,
            trace: None,
            degeneracy: None,
            error: None,
        }
    }

    pub fn fail(&mut self, code: &str, message: impl Into<String>) {
        self.status = Status::Error;
        self.error = Some(ErrorInfo {
            code: code.to_string(),
            message: message.into(),
        });
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serialisable");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_json())
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(io::Error::other)
    }
}
