//! JSON configuration files for the three subcommands.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use kwnr::data::{CohortSchema, ReferenceSchema};
use kwnr::sim::SimScenario;
use kwnr::WeightingConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// One column of the simulation tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    pub label: String,
    pub beta_c: [f64; 2],
    #[serde(default)]
    pub beta_y: Option<[f64; 2]>,
    #[serde(default)]
    pub beta_r: Option<[f64; 2]>,
}

impl Cell {
    pub fn apply(&self, base: &SimScenario) -> SimScenario {
        let mut s = base.clone();
        s.beta_c = self.beta_c;
        if let Some(b) = self.beta_y {
            s.beta_y = b;
        }
        if let Some(b) = self.beta_r {
            s.beta_r = b;
        }
        s
    }
}

fn default_cells() -> Vec<Cell> {
    [("cv_0.52", 0.5), ("cv_2.55", 1.5)]
        .into_iter()
        .map(|(label, slope)| Cell {
            label: label.into(),
            beta_c: [-1.0, slope],
            beta_y: None,
            beta_r: None,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub scenario: SimScenario,
    /// Table columns; each overrides the scenario's coefficients.
    #[serde(default = "default_cells")]
    pub cells: Vec<Cell>,
    #[serde(default)]
    pub write_replicates: bool,
}

impl SimulateConfig {
    /// Whether the file fixed the master seed.
    pub fn seed_given(raw: &serde_json::Value) -> bool {
        raw.get("scenario")
            .and_then(|s| s.get("master_seed"))
            .is_some()
    }
}

/// Column mappings and model settings shared by `weight` and `estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub reference: Option<ReferenceSchema>,
    pub cohort: CohortSchema,
    #[serde(default)]
    pub weighting: WeightingConfig,
    /// Column holding KW pseudoweights for `estimate`.
    #[serde(default = "default_kw_column")]
    pub kw_weight_column: String,
}

fn default_kw_column() -> String {
    "kw_weight".into()
}

/// Reads a JSON file, returning both the typed value and the raw document.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<(T, serde_json::Value)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    let typed = serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))?;
    Ok((typed, raw))
}
