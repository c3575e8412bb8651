use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use duality_core::dual::TerminalHandling;
use duality_core::search::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Primal,
    Dual1,
    Dual2,
    Search,
    HjbCheck,
    Bench,
    DiagnoseDegeneracy,
}

impl Subcommand {
    pub const ALL: [Subcommand; 7] = [
        Subcommand::Primal,
        Subcommand::Dual1,
        Subcommand::Dual2,
        Subcommand::Search,
        Subcommand::HjbCheck,
        Subcommand::Bench,
        Subcommand::DiagnoseDegeneracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Primal => "primal",
            Subcommand::Dual1 => "dual1",
            Subcommand::Dual2 => "dual2",
            Subcommand::Search => "search",
            Subcommand::HjbCheck => "hjb-check",
            Subcommand::Bench => "bench",
            Subcommand::DiagnoseDegeneracy => "diagnose-degeneracy",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subcommand {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| format!("unknown subcommand `{s}`"))
    }
}

/// Which test function `h` to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HKind {
    /// The benchmark's value function.
    #[default]
    Oracle,
    /// A member of a registered family at `params`.
    Family,
    /// One of the seeded random oracle perturbations.
    Perturbed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HConfig {
    pub kind: HKind,
    pub family: Option<String>,
    pub params: Option<Vec<f64>>,
    pub index: usize,
    pub seed: u64,
    /// Constant added to `h`.
    pub shift: f64,
    /// `ε` in `h + ε(T − t)`.
    pub time_shift: f64,
}

impl Default for HConfig {
    fn default() -> Self {
        Self {
            kind: HKind::Oracle,
            family: None,
            params: None,
            index: 0,
            seed: 0,
            shift: 0.0,
            time_shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    /// Constant control; the benchmark's feedback policy when absent.
    pub constant: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxConfig {
    /// Defaults to the benchmark's state box.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub points: usize,
    pub refinement: usize,
}

impl Default for BoxConfig {
    fn default() -> Self {
        Self {
            lower: None,
            upper: None,
            points: 401,
            refinement: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpConfig {
    pub state_points: usize,
    pub control_points: Option<usize>,
    pub use_hook: bool,
    pub terminal: TerminalHandling,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            state_points: 41,
            control_points: Some(11),
            use_hook: true,
            terminal: TerminalHandling::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    /// Defaults to the registry's family for the problem.
    pub family: Option<String>,
    pub objective: Objective,
    pub budget: usize,
    pub initial: Option<Vec<f64>>,
    pub scale: Option<Vec<f64>>,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            family: None,
            objective: Objective::DualV2,
            budget: 200,
            initial: None,
            scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HjbSection {
    /// Defaults to the benchmark's residual tolerance.
    pub tolerance: Option<f64>,
    pub time_points: usize,
}

impl Default for HjbSection {
    fn default() -> Self {
        Self {
            tolerance: None,
            time_points: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    /// Step counts of the convergence study; `[n_steps]` when empty.
    pub n_steps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegeneracySection {
    pub tolerance: f64,
}

impl Default for DegeneracySection {
    fn default() -> Self {
        Self {
            tolerance: duality_core::dual::DEGENERACY_TOLERANCE,
        }
    }
}

/// Full run description. Every field has a default except `problem`, and the
/// resolved config is echoed into `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub subcommand: Option<Subcommand>,
    pub problem: String,
    #[serde(default)]
    pub t: f64,
    #[serde(default = "default_x")]
    pub x: Vec<f64>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub h: HConfig,
    #[serde(default)]
    pub policy: PolicyConfig,
    #[serde(default, rename = "box")]
    pub sbox: BoxConfig,
    #[serde(default)]
    pub dp: DpConfig,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub hjb: HjbSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub degeneracy: DegeneracySection,
}

fn default_x() -> Vec<f64> {
    vec![1.0]
}

fn default_paths() -> usize {
    10_000
}

fn default_steps() -> usize {
    100
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    /// Range checks that do not need the registry.
    pub fn check_ranges(&self) -> Result<(), String> {
        if self.n_paths < 2 {
            return Err("n_paths must be at least 2".into());
        }
        if self.n_steps == 0 || self.bench.n_steps.contains(&0) {
            return Err("n_steps must be positive".into());
        }
        if self.sbox.points < 2 {
            return Err("box.points must be at least 2".into());
        }
        if !self.t.is_finite() || self.x.iter().any(|v| !v.is_finite()) {
            return Err("t and x must be finite".into());
        }
        Ok(())
    }

    pub fn study_steps(&self) -> Vec<usize> {
        if self.bench.n_steps.is_empty() {
            vec![self.n_steps]
        } else {
            self.bench.n_steps.clone()
        }
    }
}
