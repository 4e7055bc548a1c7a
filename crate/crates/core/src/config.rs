//! TOML config files: campaign fields at the top level, plus optional
//! `[process]` (simulation) and `[probe]` (live) sections.

use std::path::Path;

use serde::Serialize;

use crate::error::ConfigError;
use crate::model::CampaignConfig;
use crate::prober::ProbeSettings;
use crate::simulator::OutageProcess;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigFile {
    #[serde(flatten)]
    pub campaign: CampaignConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub process: Option<OutageProcess>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSettings>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let process = table
            .remove("process")
            .map(|v| v.try_into::<OutageProcess>().map_err(|e| ConfigError::Parse(format!("[process]: {e}"))))
            .transpose()?;
        let probe = table
            .remove("probe")
            .map(|v| v.try_into::<ProbeSettings>().map_err(|e| ConfigError::Parse(format!("[probe]: {e}"))))
            .transpose()?;
        let campaign: CampaignConfig = toml::Value::Table(table).try_into().map_err(|e| ConfigError::Parse(e.to_string()))?;
        campaign.validate()?;
        if let Some(p) = &process {
            p.validate()?;
        }
        Ok(Self { campaign, process, probe })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn require_process(&self) -> Result<&OutageProcess, ConfigError> {
        self.process.as_ref().ok_or(ConfigError::MissingSection("process"))
    }
}
