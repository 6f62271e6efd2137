//! Run configuration: every default of every stage in one JSON document.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ablation::AblationConfig;
use crate::deform::DeformConfig;
use crate::embed::DEFAULT_EMBEDDER_SEED;
use crate::error::{Error, Result};
use crate::mage::MageConfig;
use crate::morph::{MorphConfig, MorphParams};
use crate::render::{RenderSettings, RigConfig};
use crate::style::{preset, StyleOp};
use crate::train::{DsTrainConfig, DtTrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExemplarConfig {
    /// Named style; ignored when `ops` is set.
    pub preset: String,
    pub ops: Option<Vec<StyleOp>>,
    /// Identity of the exemplar pair; drawn from the run seed when absent.
    pub phi_ref: Option<MorphParams>,
    /// Multiplies a drawn `ψ_ref`, keeping the exemplar near neutral.
    pub expression_scale: f64,
}

impl Default for ExemplarConfig {
    fn default() -> Self {
        Self {
            preset: "unicorn".into(),
            ops: None,
            phi_ref: None,
            expression_scale: 0.5,
        }
    }
}

impl ExemplarConfig {
    pub fn resolved_ops(&self) -> Result<Vec<StyleOp>> {
        match &self.ops {
            Some(ops) => Ok(ops.clone()),
            None => preset(&self.preset),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub morph: MorphConfig,
    pub deform: DeformConfig,
    pub train_ds: DsTrainConfig,
    pub train_dt: DtTrainConfig,
    pub mage: MageConfig,
    pub render: RenderSettings,
    pub rig: RigConfig,
    pub embedder_seed: u64,
    pub exemplar: ExemplarConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            morph: MorphConfig::default(),
            deform: DeformConfig::default(),
            train_ds: DsTrainConfig::default(),
            train_dt: DtTrainConfig::default(),
            mage: MageConfig::default(),
            render: RenderSettings::default(),
            rig: RigConfig::default(),
            embedder_seed: DEFAULT_EMBEDDER_SEED,
            exemplar: ExemplarConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train_ds.validate()?;
        self.train_dt.schedule.validate()?;
        self.train_dt.weights.validate()?;
        self.mage.validate()?;
        self.render.validate()?;
        self.ablation.schedule.validate()?;
        self.exemplar.resolved_ops()?;
        if self.render.resolution % 16 != 0 {
            return Err(Error::Config(format!(
                "render resolution {} must be a multiple of 16 for the embedder",
                self.render.resolution
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_partial_files_fill_in() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::from_json(&d.to_json_pretty()).unwrap(), d);
        let c = RunConfig::from_json(r#"{"render": {"resolution": 32}}"#).unwrap();
        assert_eq!(c.render.resolution, 32);
        assert_eq!(c.deform, DeformConfig::default());
    }

    #[test]
    fn unknown_fields_and_bad_values_rejected() {
        assert!(RunConfig::from_json(r#"{"rendr": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"render": {"resolution": 20}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"exemplar": {"preset": "nope"}}"#).is_err());
    }
}
