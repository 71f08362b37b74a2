//! TOML configuration and backend construction.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Asset, PipelineError, RunOptions};
use crate::agents::{
    AgentBackend, HttpBackend, HttpConfig, Journal, JournalingBackend, ReplayBackend, SyntheticAgentSpec,
    SyntheticBackend,
};
use crate::alignment::{ClassRanges, RiskClass};
use crate::fitting::{default_battery, Battery};
use crate::metrics::ReferenceOrderings;
use crate::persona::read_jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Replay,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SyntheticConfig {
    /// Agent used for personas without an entry in `agents`.
    pub default: Option<SyntheticAgentSpec>,
    /// JSON lines of `{persona_id, params, noise?, seed?}`.
    pub agents: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Transcript journal: written by live backends, read by replay.
    pub journal: Option<PathBuf>,
    pub http: HttpConfig,
    pub synthetic: SyntheticConfig,
}

/// Market statistics sentences for the Study 2 prompt. There are no
/// defaults; a Study 2 run without them is a configuration error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct MarketStats {
    pub sp500: Option<String>,
    pub treasury: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoOptions {
    pub pairs_per_persona: usize,
    pub statements: Option<PathBuf>,
}

impl Default for DpoOptions {
    fn default() -> Self {
        Self {
            pairs_per_persona: 1,
            statements: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub backend: BackendConfig,
    /// Battery file (JSON lines of prospects); the built-in battery if unset.
    pub battery: Option<PathBuf>,
    pub market: MarketStats,
    pub references: ReferenceOrderings,
    pub class_ranges: ClassRanges,
    pub matched_assets: MatchedAssets,
    pub run: RunOptions,
    pub dpo: DpoOptions,
}

/// Asset considered the best fit for each class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatchedAssets(pub BTreeMap<RiskClass, Asset>);

impl Default for MatchedAssets {
    fn default() -> Self {
        Self(
            [
                (RiskClass::C1, Asset::Cryptocurrencies),
                (RiskClass::C2, Asset::GrowthStocks),
                (RiskClass::C3, Asset::DistressedBonds),
                (RiskClass::C4, Asset::GovernmentBonds),
            ]
            .into_iter()
            .collect(),
        )
    }
}

impl MatchedAssets {
    pub fn for_class(&self, class: RiskClass) -> Asset {
        self.0
            .get(&class)
            .copied()
            .unwrap_or_else(|| MatchedAssets::default().0[&class])
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.class_ranges
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&cfg.run.abort_threshold) {
            return Err(PipelineError::Config("run.abort_threshold must lie in [0, 1]".into()));
        }
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        fix(&mut cfg.battery);
        fix(&mut cfg.backend.journal);
        fix(&mut cfg.backend.synthetic.agents);
        fix(&mut cfg.dpo.statements);
        Ok(cfg)
    }

    pub fn battery(&self) -> Result<Battery, PipelineError> {
        match &self.battery {
            Some(p) => Ok(Battery::read_jsonl(BufReader::new(File::open(p)?))?),
            None => Ok(default_battery()),
        }
    }

    pub fn market_sentences(&self) -> Result<(&str, &str), PipelineError> {
        match (&self.market.sp500, &self.market.treasury) {
            (Some(s), Some(t)) => Ok((s, t)),
            _ => Err(PipelineError::Config(
                "Study 2 needs market.sp500 and market.treasury statistics".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct AgentEntry {
    persona_id: String,
    #[serde(flatten)]
    spec: SyntheticAgentSpec,
}

pub fn load_synthetic_backend(cfg: &SyntheticConfig) -> Result<SyntheticBackend, PipelineError> {
    let mut agents = BTreeMap::new();
    if let Some(path) = &cfg.agents {
        let entries: Vec<(usize, AgentEntry)> = read_jsonl(BufReader::new(File::open(path)?))?;
        for (_, e) in entries {
            agents.insert(e.persona_id, e.spec);
        }
    }
    let mut b = SyntheticBackend::from_agents(agents);
    if let Some(d) = cfg.default {
        b = b.with_fallback(d);
    }
    Ok(b)
}

/// Builds the configured backend. Live backends are wrapped in a journal
/// when one is configured.
pub fn build_backend(cfg: &BackendConfig) -> Result<Box<dyn AgentBackend>, PipelineError> {
    let journal = || -> Result<Option<Journal>, PipelineError> {
        Ok(match &cfg.journal {
            Some(p) => Some(Journal::open(p)?),
            None => None,
        })
    };
    Ok(match cfg.kind {
        BackendKind::Replay => {
            let path = cfg
                .journal
                .as_ref()
                .ok_or_else(|| PipelineError::Config("replay backend needs backend.journal".into()))?;
            Box::new(ReplayBackend::from_path(path)?)
        }
        BackendKind::Synthetic => {
            let b = load_synthetic_backend(&cfg.synthetic)?;
            match journal()? {
                Some(j) => Box::new(JournalingBackend::new(b, j)),
                None => Box::new(b),
            }
        }
        BackendKind::Http => {
            let b = HttpBackend::new(cfg.http.clone())?;
            match journal()? {
                Some(j) => Box::new(JournalingBackend::new(b, j)),
                None => Box::new(b),
            }
        }
    })
}
