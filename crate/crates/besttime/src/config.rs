//! Deployment configuration.
//!
//! A TOML file declares the signal providers (one per metric), the tenant use
//! cases (tier, metric weights, default policy), and deployment defaults. The
//! layer wiring is config-driven: signal providers feed the assembly layer,
//! whose output the decision layer turns into plans.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assembler::AssemblerSpec;
use crate::error::{Error, Result};
use crate::policy::{BestTimePolicy, Priority};
use crate::signals::SignalProvider;
use crate::sim::EngagementConfig;
use crate::temporal::{MetricId, UseCaseId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    High,
    Low,
}

impl Tier {
    /// Platform coordination: low-tier use cases always schedule at low
    /// priority, whatever the request says.
    pub fn enforced_priority(self, requested: Priority) -> Priority {
        match self {
            Tier::Low => Priority::Low,
            Tier::High => requested,
        }
    }
}

/// One tenant use case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UseCaseConfig {
    pub id: UseCaseId,
    pub tier: Tier,
    /// Metric weights of the use case's assembler.
    pub weights: BTreeMap<MetricId, f64>,
    /// Default policy when requests do not override it.
    #[serde(default)]
    pub policy: BestTimePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct StoreConfig {
    pub path: Option<PathBuf>,
}

/// Root deployment config document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentConfig {
    #[serde(default)]
    pub store: StoreConfig,
    pub providers: Vec<SignalProvider>,
    pub use_cases: Vec<UseCaseConfig>,
    /// Optional CSV (`user,metric,level`) of per-user channel activity gates;
    /// absent users default to fully active.
    #[serde(default)]
    pub activity_levels: Option<PathBuf>,
    /// Engagement-model defaults handed to simulation runs.
    #[serde(default)]
    pub engagement: EngagementConfig,
}

impl DeploymentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: DeploymentConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    /// Every use case must reference configured metrics only, with weights a
    /// valid assembler accepts.
    pub fn validate(&self) -> Result<()> {
        let provider_metrics: std::collections::BTreeSet<&MetricId> =
            self.providers.iter().map(|p| &p.metric).collect();
        if self.providers.len() != provider_metrics.len() {
            return Err(Error::Configuration(
                "duplicate provider metric ids".into(),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for uc in &self.use_cases {
            if !seen.insert(&uc.id) {
                return Err(Error::Configuration(format!(
                    "duplicate use case id {}",
                    uc.id
                )));
            }
            for metric in uc.weights.keys() {
                if !provider_metrics.contains(metric) {
                    return Err(Error::Configuration(format!(
                        "use case {} references unknown metric {metric}",
                        uc.id
                    )));
                }
            }
            // Surfaces weight problems at load time.
            AssemblerSpec::new(uc.id.clone(), uc.weights.clone())?;
        }
        Ok(())
    }

    pub fn use_case(&self, id: &UseCaseId) -> Result<&UseCaseConfig> {
        self.use_cases
            .iter()
            .find(|uc| &uc.id == id)
            .ok_or_else(|| Error::NotFound(format!("use case {id}")))
    }

    pub fn provider(&self, metric: &MetricId) -> Result<&SignalProvider> {
        self.providers
            .iter()
            .find(|p| &p.metric == metric)
            .ok_or_else(|| Error::NotFound(format!("provider for metric {metric}")))
    }

    pub fn assembler_spec(&self, id: &UseCaseId) -> Result<AssemblerSpec> {
        let uc = self.use_case(id)?;
        AssemblerSpec::new(uc.id.clone(), uc.weights.clone())
    }
}
