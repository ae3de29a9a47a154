use std::path::{Path, PathBuf};

use serde::Serialize;
use vau_core::embed::{EmbeddingProvider, RemoteConfig};
use vau_core::metrics::{MetricConfig, SemanticNormalization};
use vau_core::rewards::RewardConfig;
use vau_core::taxonomy::{DocumentNode, Hierarchy, TaxonomyDocument, TaxonomyError};

use crate::{CliError, ScoringArgs, SemNorm};

pub const REMOTE_TIMEOUT_ENV: &str = "CUE_EVAL_REMOTE_TIMEOUT_MS";
pub const DEFAULT_REMOTE_TIMEOUT_MS: u64 = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProviderSpec {
    Hash,
    File(PathBuf),
    Remote { endpoint: String, timeout_ms: u64 },
}

impl ProviderSpec {
    /// Parses `hash`, `file:PATH` or `remote:URL`. The remote timeout comes
    /// from `timeout_env` when set.
    pub fn parse(s: &str, timeout_env: Option<&str>) -> Result<Self, CliError> {
        if s == "hash" {
            return Ok(Self::Hash);
        }
        if let Some(path) = s.strip_prefix("file:") {
            if path.is_empty() {
                return Err(CliError::Config("file provider needs a path".into()));
            }
            return Ok(Self::File(PathBuf::from(path)));
        }
        if let Some(url) = s.strip_prefix("remote:") {
            if url.is_empty() {
                return Err(CliError::Config("remote provider needs a URL".into()));
            }
            let timeout_ms = match timeout_env {
                None => DEFAULT_REMOTE_TIMEOUT_MS,
                Some(v) => v.trim().parse().map_err(|_| {
                    CliError::Config(format!(
                        "{REMOTE_TIMEOUT_ENV}={v:?} is not a whole number of milliseconds"
                    ))
                })?,
            };
            return Ok(Self::Remote {
                endpoint: url.to_string(),
                timeout_ms,
            });
        }
        Err(CliError::Config(format!(
            "unknown provider {s:?} (expected hash, file:PATH or remote:URL)"
        )))
    }

    pub fn from_env(s: &str) -> Result<Self, CliError> {
        Self::parse(s, std::env::var(REMOTE_TIMEOUT_ENV).ok().as_deref())
    }

    pub fn mode(&self) -> &'static str {
        match self {
            Self::Hash => "hash",
            Self::File(_) => "file",
            Self::Remote { .. } => "remote",
        }
    }

    pub fn build(&self, dims: usize) -> Result<EmbeddingProvider, CliError> {
        let provider = match self {
            Self::Hash => EmbeddingProvider::hash(dims),
            Self::File(path) => {
                if !path.exists() {
                    return Err(CliError::io(
                        path,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "embedding store not found"),
                    ));
                }
                EmbeddingProvider::from_store_file(path)
            }
            Self::Remote { endpoint, timeout_ms } => EmbeddingProvider::remote(
                RemoteConfig {
                    endpoint: endpoint.clone(),
                    timeout_ms: *timeout_ms,
                },
                dims,
            ),
        };
        provider.map_err(|e| CliError::Config(e.to_string()))
    }
}

impl SemNorm {
    pub fn normalization(self) -> SemanticNormalization {
        match self {
            SemNorm::Paper => SemanticNormalization::RowsTimesCols,
            SemNorm::Balanced => SemanticNormalization::Balanced,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SemNorm::Paper => "paper",
            SemNorm::Balanced => "balanced",
        }
    }
}

/// Resolved scoring configuration shared by `eval` and `reward`.
#[derive(Debug)]
pub struct HarnessConfig {
    pub hierarchy: Hierarchy,
    pub provider_spec: ProviderSpec,
    pub provider: EmbeddingProvider,
    pub metric: MetricConfig,
    pub reward: RewardConfig,
    pub sem_norm: SemNorm,
    pub workers: usize,
}

/// The block written at the top of every report.
#[derive(Debug, Clone, Serialize)]
pub struct ConfigHeader {
    pub tool: &'static str,
    pub version: &'static str,
    pub provider: &'static str,
    pub dims: usize,
    pub tau: f64,
    pub lambda: f64,
    pub semantic_normalization: &'static str,
    pub temporal: &'static str,
    pub rendering: &'static str,
}

pub fn load_hierarchy(path: &Path) -> Result<Hierarchy, CliError> {
    Hierarchy::from_path(path).map_err(|e| match e {
        TaxonomyError::Io { path, message } => CliError::Io { path, message },
        other => CliError::Invalid(format!("{}: {other}", path.display())),
    })
}

/// Root plus the two state nodes, nothing below. Enough for tasks that never
/// consult the tree.
pub fn bare_hierarchy() -> Hierarchy {
    let n = |id: &str, label: &str, level, parent: Option<&str>| DocumentNode {
        id: id.into(),
        label: label.into(),
        level,
        parent: parent.map(Into::into),
        triplet: None,
    };
    Hierarchy::from_document(TaxonomyDocument {
        nodes: vec![
            n("root", "root", 0, None),
            n("A", "Anomaly", 1, Some("root")),
            n("N", "Normality", 1, Some("root")),
        ],
    })
    .expect("bare hierarchy is valid")
}

pub fn check_ranges(tau: f64, lambda: f64) -> Result<(), CliError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(CliError::Config(format!("--tau must lie in (0, 1], got {tau}")));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CliError::Config(format!("--lambda must lie in [0, 1], got {lambda}")));
    }
    Ok(())
}

impl HarnessConfig {
    pub fn from_args(a: &ScoringArgs) -> Result<Self, CliError> {
        check_ranges(a.tau, a.lambda)?;
        if a.workers == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        let provider_spec = ProviderSpec::from_env(&a.provider)?;
        let provider = provider_spec.build(a.dims)?;
        let hierarchy = load_hierarchy(&a.taxonomy)?;
        let normalization = a.sem_norm.normalization();
        Ok(Self {
            hierarchy,
            provider_spec,
            provider,
            metric: MetricConfig {
                tau: a.tau,
                normalization,
                ..MetricConfig::default()
            },
            reward: RewardConfig {
                lambda: a.lambda,
                semantic_normalization: normalization,
                ..RewardConfig::default()
            },
            sem_norm: a.sem_norm,
            workers: a.workers,
        })
    }

    pub fn header(&self) -> ConfigHeader {
        ConfigHeader {
            tool: "vau-eval",
            version: vau_core::ARTIFACT_VERSION,
            provider: self.provider_spec.mode(),
            dims: self.provider.dims(),
            tau: self.metric.tau,
            lambda: self.reward.lambda,
            semantic_normalization: self.sem_norm.label(),
            temporal: "merged-union",
            rendering: "record",
        }
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool, CliError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| CliError::Config(format!("worker pool: {e}")))
    }
}
