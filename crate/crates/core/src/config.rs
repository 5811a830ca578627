//! Scenario files (TOML, or JSON when the path ends in `.json`).
//!
//! ```toml
//! kappa = 10
//! tau = 10
//! mode = "finite"
//!
//! [[classes]]
//! count = 10
//! arrival_rate = 0.01
//! tx_prob = 0.05
//!
//! [mpr]
//! kind = "all_or_nothing"
//! q = [0.96, 0.89]
//! ```
//!
//! Optional `[sim]`, `[phy]` and `[design]` tables carry defaults for the
//! corresponding command-line subcommands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    validate_scenario, AllOrNothingMpr, ClassSpec, GeneralSymmetricMpr, Mode, MprModel, Population,
    Scenario, Violation,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    pub arrival_rate: f64,
    pub tx_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    #[default]
    Finite,
    Limiting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MprKind {
    #[default]
    AllOrNothing,
    General,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MprConfig {
    #[serde(default)]
    pub kind: MprKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    /// Row-major lower triangle `q_{1,1}, q_{1,2}, q_{2,2}, ...`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_matrix: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PhySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub antennas: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_radius: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_users: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    /// Total-delay targets in slots, one per class.
    pub delay_targets: Vec<f64>,
}

/// On-disk form of a scenario plus optional run parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub classes: Vec<ClassConfig>,
    pub kappa: u32,
    /// Defaults to `kappa`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<u32>,
    #[serde(default)]
    pub mode: ModeConfig,
    pub mpr: MprConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phy: Option<PhySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignSection>,
}

fn violation(field: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        field: field.into(),
        message: message.into(),
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("TOML: {e}")))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("JSON: {e}")))
    }

    /// Reads a file, choosing the format from the extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes to TOML")
    }

    /// Builds and validates the scenario.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let mut problems = Vec::new();
        let mode = match self.mode {
            ModeConfig::Finite => Mode::Finite,
            ModeConfig::Limiting => Mode::Limiting,
        };
        let mut classes = Vec::new();
        for (v, c) in self.classes.iter().enumerate() {
            let population = match (c.count, c.fraction) {
                (Some(n), None) => Population::Count(n),
                (None, Some(b)) => Population::Fraction(b),
                _ => {
                    problems.push(violation(
                        format!("classes[{v}]"),
                        "exactly one of count or fraction is required",
                    ));
                    continue;
                }
            };
            classes.push(ClassSpec {
                population,
                arrival_rate: c.arrival_rate,
                tx_prob: c.tx_prob,
            });
        }
        let mpr: Option<MprModel> = match (self.mpr.kind, &self.mpr.q, &self.mpr.q_matrix) {
            (MprKind::AllOrNothing, Some(q), None) => Some(AllOrNothingMpr::new(q.clone()).into()),
            (MprKind::General, None, Some(m)) => match GeneralSymmetricMpr::from_lower_triangle(m) {
                Ok(g) => Some(g.into()),
                Err(e) => {
                    problems.push(violation("mpr.q_matrix", e.to_string()));
                    None
                }
            },
            (MprKind::AllOrNothing, _, _) => {
                problems.push(violation("mpr.q", "all_or_nothing requires q (and no q_matrix)"));
                None
            }
            (MprKind::General, _, _) => {
                problems.push(violation("mpr.q_matrix", "general requires q_matrix (and no q)"));
                None
            }
        };
        if !problems.is_empty() {
            return Err(Error::ConfigInvalid(problems));
        }
        let scenario = Scenario {
            classes,
            kappa: self.kappa,
            tau: self.tau.unwrap_or(self.kappa),
            mode,
            mpr: mpr.expect("mpr present when no problems were recorded"),
        };
        let v = validate_scenario(&scenario);
        if v.is_empty() {
            Ok(scenario)
        } else {
            Err(Error::ConfigInvalid(v))
        }
    }

    /// File form of a scenario (no run sections).
    pub fn from_scenario(s: &Scenario) -> Self {
        let classes = s
            .classes
            .iter()
            .map(|c| {
                let (count, fraction) = match c.population {
                    Population::Count(n) => (Some(n), None),
                    Population::Fraction(b) => (None, Some(b)),
                };
                ClassConfig {
                    count,
                    fraction,
                    arrival_rate: c.arrival_rate,
                    tx_prob: c.tx_prob,
                }
            })
            .collect();
        let mpr = match &s.mpr {
            MprModel::AllOrNothing(m) => MprConfig {
                kind: MprKind::AllOrNothing,
                q: Some(m.as_slice().to_vec()),
                q_matrix: None,
            },
            MprModel::General(g) => MprConfig {
                kind: MprKind::General,
                q: None,
                q_matrix: Some(g.to_lower_triangle()),
            },
        };
        Self {
            classes,
            kappa: s.kappa,
            tau: Some(s.tau),
            mode: match s.mode {
                Mode::Finite => ModeConfig::Finite,
                Mode::Limiting => ModeConfig::Limiting,
            },
            mpr,
            sim: None,
            phy: None,
            design: None,
        }
    }
}
