//! Strict JSON run configuration: unknown keys are rejected so a typo in a
//! config file fails loudly instead of silently using a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use expwave_core::wavefield::InitialData;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum Preset {
    Ode,
    Tilted { kappa: f64 },
    PerturbedOde { amplitude: f64 },
    Random { modes: usize, amplitude: f64, window: (f64, f64) },
    /// CSV file with header `x,u0,u1`, x strictly increasing.
    Csv { path: PathBuf },
}

impl Preset {
    /// Build the initial data pair. `seed` only affects `Random`.
    pub fn build(&self, seed: u64) -> Result<InitialData> {
        Ok(match self {
            Preset::Ode => InitialData::ode(),
            Preset::Tilted { kappa } => InitialData::tilted(*kappa)?,
            Preset::PerturbedOde { amplitude } => InitialData::perturbed_ode(*amplitude),
            Preset::Random { modes, amplitude, window } => {
                InitialData::random_band_limited(seed, *modes, *amplitude, *window)
            }
            Preset::Csv { path } => load_csv_data(path)?,
        })
    }

    /// Exact blow-up time for the closed-form families, used by `compare`
    /// to turn two resolutions into an observed convergence order.
    pub fn analytic_t(&self, a: f64) -> Option<f64> {
        match self {
            Preset::Ode => Some(1.0),
            Preset::Tilted { kappa } => Some(1.0 + kappa * a),
            _ => None,
        }
    }
}

fn load_csv_data(path: &Path) -> Result<InitialData> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        .clone();
    let expected = ["x", "u0", "u1"];
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(CliError::Config(format!(
            "{}: expected header x,u0,u1, got {}",
            path.display(),
            got.join(",")
        )));
    }
    let (mut xs, mut u0s, mut u1s) = (Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| CliError::Config(format!("{}: bad row {record:?}", path.display())))
        };
        xs.push(field(0)?);
        u0s.push(field(1)?);
        u1s.push(field(2)?);
    }
    Ok(InitialData::from_samples(xs, u0s, u1s)?)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Targets {
    /// The literal string "auto": analyze the argmin of T(x) and the two
    /// flanking quartile abscissas of the estimated curve.
    Keyword(String),
    Explicit(Vec<f64>),
}

impl Default for Targets {
    fn default() -> Self {
        Targets::Keyword("auto".into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    UpperPointwise,
    LowerNoncharacteristic,
    AverageLower,
    EnergyLower,
    ConeEnergy,
    W1infRate,
    ShatahStruwe,
    Nonblowup,
}

impl CheckName {
    pub fn all() -> Vec<CheckName> {
        use CheckName::*;
        vec![
            UpperPointwise,
            LowerNoncharacteristic,
            AverageLower,
            EnergyLower,
            ConeEnergy,
            W1infRate,
            ShatahStruwe,
            Nonblowup,
        ]
    }
}

fn default_u_max() -> f64 {
    25.0
}

fn default_checks() -> Vec<CheckName> {
    CheckName::all()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimilarityConfig {
    pub y_margin: f64,
    pub n_y: usize,
    pub levels_per_unit_s: usize,
    /// Optional explicit s cap; otherwise the frame runs to the
    /// resolution limit.
    pub s_max: Option<f64>,
    pub t_start: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig { y_margin: 0.02, n_y: 101, levels_per_unit_s: 40, s_max: None, t_start: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub preset: Preset,
    /// Grid spacing; time step equals h (unit CFL).
    pub h: f64,
    /// Spatial window radius: the grid covers [-r, r].
    pub r: f64,
    pub t_end: f64,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub targets: Targets,
    #[serde(default = "default_checks")]
    pub checks: Vec<CheckName>,
    /// Curve estimation window; defaults to [-r/4, r/4].
    #[serde(default)]
    pub curve_window: Option<(f64, f64)>,
    /// Emit a field CSV with every n-th time level; 0 disables the dump.
    #[serde(default)]
    pub dump_every: usize,
    #[serde(default)]
    pub similarity: SimilarityConfig,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(CliError::Config(format!("h = {} must be positive", self.h)));
        }
        if !(self.r > 0.0) || !self.r.is_finite() {
            return Err(CliError::Config(format!("r = {} must be positive", self.r)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(CliError::Config(format!("t_end = {} must be positive", self.t_end)));
        }
        if !self.u_max.is_finite() {
            return Err(CliError::Config("u_max must be finite".into()));
        }
        if let Targets::Keyword(word) = &self.targets {
            if word != "auto" {
                return Err(CliError::Config(format!("targets must be \"auto\" or a list, got \"{word}\"")));
            }
        }
        if let Targets::Explicit(list) = &self.targets {
            if list.is_empty() {
                return Err(CliError::Config("targets list must not be empty".into()));
            }
            for &a in list {
                if a.abs() > self.r {
                    return Err(CliError::Config(format!("target {a} outside [-r, r]")));
                }
            }
        }
        if let Some((lo, hi)) = self.curve_window {
            if !(lo < hi) || lo < -self.r || hi > self.r {
                return Err(CliError::Config(format!("curve_window ({lo}, {hi}) invalid")));
            }
        }
        if self.similarity.n_y < 3 || self.similarity.levels_per_unit_s == 0 {
            return Err(CliError::Config("similarity frame needs n_y >= 3 and levels_per_unit_s >= 1".into()));
        }
        Ok(())
    }

    pub fn curve_window_or_default(&self) -> (f64, f64) {
        self.curve_window.unwrap_or((-self.r / 4.0, self.r / 4.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(r#"{{"name":"t","preset":"ode","h":1e-3,"r":1.5,"t_end":1.2{extra}}}"#)
    }

    #[test]
    fn parses_minimal_config_with_defaults() {
        let config: RunConfig = serde_json::from_str(&minimal("")).unwrap();
        config.validate().unwrap();
        assert_eq!(config.u_max, 25.0);
        assert_eq!(config.targets, Targets::Keyword("auto".into()));
        assert_eq!(config.checks.len(), CheckName::all().len());
    }

    #[test]
    fn rejects_unknown_keys() {
        let text = minimal(r#","tEnd":1.0"#);
        assert!(serde_json::from_str::<RunConfig>(&text).is_err());
    }

    #[test]
    fn rejects_nonpositive_h() {
        let text = minimal("").replace("1e-3", "-1e-3");
        let config: RunConfig = serde_json::from_str(&text).unwrap();
        assert!(config.validate().is_err());
    }

    #[test]
    fn parses_tagged_presets_and_targets() {
        let text = r#"{"name":"t","preset":{"tilted":{"kappa":0.5}},"h":1e-3,"r":1.5,"t_end":1.2,
                       "targets":[0.0,0.2],"checks":["upper-pointwise","nonblowup"]}"#;
        let config: RunConfig = serde_json::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.preset, Preset::Tilted { kappa: 0.5 });
        assert_eq!(config.targets, Targets::Explicit(vec![0.0, 0.2]));
    }

    #[test]
    fn rejects_bad_targets_keyword() {
        let text = minimal(r#","targets":"argmin""#);
        let config: RunConfig = serde_json::from_str(&text).unwrap();
        assert!(config.validate().is_err());
    }
}
