//! Run configuration shared by the CLI and the verification suite. Unknown keys are
//! rejected at every level.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::graph_transform::GraphConfig;
use crate::henon_core::{RootOfUnity, SemiParabolicParams, C64};
use crate::solenoid_model::DEFAULT_MARGIN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamConfig {
    /// `λ = e^{2πi p/q}`.
    pub p: i64,
    pub q: u32,
    pub a_re: f64,
    pub a_im: f64,
}

impl Default for ParamConfig {
    fn default() -> Self {
        Self {
            p: 0,
            q: 1,
            a_re: 0.05,
            a_im: 0.0,
        }
    }
}

impl ParamConfig {
    pub fn lambda(&self) -> Result<RootOfUnity> {
        RootOfUnity::new(self.p, self.q)
    }

    pub fn params(&self) -> Result<SemiParabolicParams> {
        Ok(SemiParabolicParams::new(self.lambda()?, C64::new(self.a_re, self.a_im)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteConfig {
    pub petal_samples: usize,
    pub petal_iters: usize,
    pub cone_samples: usize,
    pub estimate_samples: usize,
    pub technical_samples: usize,
    pub expansion_ladder: Vec<f64>,
    pub continuation: Vec<f64>,
    pub asymptotics_ladder: Vec<f64>,
    pub periodic_k_max: usize,
    /// Also run the fixed-point iteration without the parabolic accelerator (slow).
    pub unpinned_diagnostic: bool,
    pub collision_max_gens: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            petal_samples: 200,
            petal_iters: 500,
            cone_samples: 500,
            estimate_samples: 300,
            technical_samples: 100_000,
            expansion_ladder: vec![0.08, 0.04, 0.02],
            continuation: vec![0.04, 0.045, 0.05],
            asymptotics_ladder: vec![0.02, 0.04, 0.08],
            periodic_k_max: 6,
            unpinned_diagnostic: true,
            collision_max_gens: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolenoidConfig {
    pub k_max: usize,
    /// Used by the fast parameter-plane mode.
    pub fast_k_max: usize,
    pub margin: f64,
}

impl Default for SolenoidConfig {
    fn default() -> Self {
        Self {
            k_max: 8,
            fast_k_max: 4,
            margin: DEFAULT_MARGIN,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub center_re: f64,
    pub center_im: f64,
    /// Half-width of the square window.
    pub extent: f64,
    pub max_iter: usize,
    /// Fixed `y` for Julia slices.
    pub slice_y_re: f64,
    pub slice_y_im: f64,
    pub fast: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            center_re: 0.0,
            center_im: 0.0,
            extent: 1.0,
            max_iter: 200,
            slice_y_re: 0.0,
            slice_y_im: 0.0,
            fast: true,
        }
    }
}

pub const MAX_IMAGE_SIDE: usize = 8192;

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.width > MAX_IMAGE_SIDE || self.height > MAX_IMAGE_SIDE {
            return Err(LabError::InvalidInput(format!(
                "image size {}x{} outside 1..={MAX_IMAGE_SIDE}",
                self.width, self.height
            )));
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return Err(LabError::InvalidInput(format!("extent must be positive, got {}", self.extent)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub params: ParamConfig,
    pub graph: GraphConfig,
    pub suite: SuiteConfig,
    pub solenoid: SolenoidConfig,
    pub render: RenderConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| LabError::InvalidInput(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.lambda()?;
        if !(self.params.a_re.is_finite() && self.params.a_im.is_finite()) {
            return Err(LabError::InvalidInput("a must be finite".into()));
        }
        self.render.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_unknown_keys_fail() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(RunConfig::from_json("{}").unwrap(), cfg);
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"graph": {"levle": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"render": {"width": 9000}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"params": {"q": 0}}"#).is_err());
    }

    #[test]
    fn partial_config_keeps_defaults() {
        let cfg = RunConfig::from_json(r#"{"params": {"a_re": 0.02}, "graph": {"level": 6}}"#).unwrap();
        assert_eq!(cfg.params.a_re, 0.02);
        assert_eq!(cfg.params.q, 1);
        assert_eq!(cfg.graph.level, 6);
        assert_eq!(cfg.graph.d_max, 12);
    }
}
