//! The TOML run configuration. Relative paths resolve against the
//! directory of the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use looprank_core::gateway::{Pricing, Rate, RetryPolicy};
use looprank_core::pipeline::PipelineConfig;
use looprank_core::sparse_index::IndexParams;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub index: IndexConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub backend: BackendConfig,
    /// Per-model rates; replaces the built-in table when present.
    #[serde(default)]
    pub pricing: Option<BTreeMap<String, Rate>>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    #[serde(default)]
    pub qrels: Option<PathBuf>,
    /// Divide recall by min(|relevant|, k).
    #[serde(default)]
    pub capped_recall: bool,
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
}

fn default_metrics() -> Vec<String> {
    vec!["ndcg@10".into(), "recall@100".into()]
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    /// Prebuilt index; when absent the index is built in memory.
    pub path: Option<PathBuf>,
    pub k1: f64,
    pub b: f64,
    pub stemming: bool,
    pub stopwords: bool,
}

impl Default for IndexConfig {
    fn default() -> Self {
        let p = IndexParams::default();
        Self {
            path: None,
            k1: p.k1,
            b: p.b,
            stemming: p.stemming,
            stopwords: p.stopwords,
        }
    }
}

impl IndexConfig {
    pub fn params(&self) -> IndexParams {
        IndexParams {
            k1: self.k1,
            b: self.b,
            stemming: self.stemming,
            stopwords: self.stopwords,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub mock_rules: Option<PathBuf>,
    /// Overrides LOOPRANK_API_BASE.
    #[serde(default)]
    pub api_base: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// JSONL call cache shared across runs.
    #[serde(default)]
    pub cache: Option<PathBuf>,
    /// Queries run concurrently.
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_retries() -> u32 {
    5
}

fn default_backoff_ms() -> u64 {
    1000
}

fn default_timeout_secs() -> u64 {
    120
}

fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_tag")]
    pub tag: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            tag: default_tag(),
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_tag() -> String {
    "looprank".into()
}

impl CliConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: CliConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset.corpus);
        fix(&mut self.dataset.queries);
        for p in [
            &mut self.dataset.qrels,
            &mut self.index.path,
            &mut self.backend.mock_rules,
            &mut self.backend.cache,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output.dir);
    }

    /// Checks everything that can be checked before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.index.params().validate()?;
        for path in [&self.dataset.corpus, &self.dataset.queries]
            .into_iter()
            .chain(self.dataset.qrels.as_ref())
            .chain(self.index.path.as_ref())
        {
            if !path.is_file() {
                bail!("{}: no such file", path.display());
            }
        }
        match (self.backend.kind, &self.backend.mock_rules) {
            (BackendKind::Mock, None) => bail!("backend.kind = \"mock\" needs backend.mock_rules"),
            (BackendKind::Mock, Some(p)) if !p.is_file() => bail!("{}: no such file", p.display()),
            (BackendKind::Http, Some(_)) => bail!("backend.mock_rules is only valid with kind = \"mock\""),
            _ => {}
        }
        if self.backend.parallelism == 0 {
            bail!("backend.parallelism must be at least 1");
        }
        for m in &self.dataset.metrics {
            m.parse::<looprank_core::evaluation::Metric>()?;
        }
        Ok(())
    }

    pub fn pricing(&self) -> Pricing {
        match &self.pricing {
            Some(rates) => rates
                .iter()
                .fold(Pricing::empty(), |p, (model, rate)| p.with_rate(model, *rate)),
            None => Pricing::default(),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        match self.backend.kind {
            BackendKind::Mock => RetryPolicy::immediate(self.backend.max_retries),
            BackendKind::Http => RetryPolicy {
                max_retries: self.backend.max_retries,
                base_delay: Duration::from_millis(self.backend.backoff_base_ms),
                ..RetryPolicy::default()
            },
        }
    }
}
