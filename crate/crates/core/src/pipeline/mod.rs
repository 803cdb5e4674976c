//! Declarative three-stage run: DEA per analysis, a k sweep over each
//! analysis's mean scores, then PLS path models (and log-linear OLS).

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{self, AnovaResult, KSweepReport, SweepConfig};
use crate::dea::{self, DeaError, DeaSpec};
use crate::panel::{self, Direction, Issue, PanelDataset, TransformMethod, ValidationReport, VariableDef};
use crate::pls::{self, Block, InnerScheme, OlsFit, PathEstimates, PathModelSpec};

pub use report::{emit_report, render_text, significance_marker, Format};

pub const TOOL: &str = "tristage";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("validation failed:\n{0}")]
    Invalid(ConfigCheck),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{stage} stage: {message}")]
    Stage { stage: String, message: String },
    #[error("{0}")]
    Usage(String),
}

impl PipelineError {
    /// 1 for anything the user must fix in config or data, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Invalid(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// long-format CSV, relative to the config file
    pub path: PathBuf,
    pub schema: Vec<VariableDef>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeaAnalysis {
    pub name: String,
    #[serde(flatten)]
    pub spec: DeaSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedModel {
    pub name: String,
    pub spec: PathModelSpec,
}

/// Single-indicator models linking every exogenous to every endogenous variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlsGrid {
    pub exogenous: Vec<String>,
    pub endogenous: Vec<String>,
    /// one model with all exogenous variables instead of one model each
    #[serde(default)]
    pub joint: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CobbDouglasTarget {
    /// ln of the per-period score of the named DEA analysis
    Efficiency(String),
    /// ln of a panel variable
    Variable(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CobbDouglasConfig {
    pub ict: String,
    pub health: Vec<String>,
    pub target: CobbDouglasTarget,
}

fn default_bootstrap() -> usize {
    pls::DEFAULT_BOOTSTRAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlsConfig {
    #[serde(default)]
    pub models: Vec<NamedModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<PlsGrid>,
    #[serde(default)]
    pub inner_scheme: InnerScheme,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: usize,
    pub seed: u64,
    #[serde(default)]
    pub cobb_douglas: Vec<CobbDouglasConfig>,
}

impl PlsConfig {
    /// Explicit models followed by the grid expansion.
    pub fn all_models(&self) -> Vec<NamedModel> {
        let mut models = self.models.clone();
        if let Some(grid) = &self.grid {
            let endo: Vec<Block> = grid.endogenous.iter().map(|e| Block::single(e)).collect();
            let groups: Vec<(String, Vec<&String>)> = if grid.joint {
                vec![("joint".to_string(), grid.exogenous.iter().collect())]
            } else {
                grid.exogenous.iter().map(|x| (x.clone(), vec![x])).collect()
            };
            for (name, exo) in groups {
                let mut blocks: Vec<Block> = exo.iter().map(|x| Block::single(x)).collect();
                blocks.extend(endo.iter().cloned());
                let paths: Vec<(&str, &str)> = exo
                    .iter()
                    .flat_map(|x| grid.endogenous.iter().map(move |e| (x.as_str(), e.as_str())))
                    .collect();
                models.push(NamedModel {
                    name,
                    spec: PathModelSpec::new(blocks, &paths, self.inner_scheme),
                });
            }
        }
        models
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("report")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            formats: default_formats(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    /// applied to every undesirable variable used as a DEA output
    #[serde(default)]
    pub undesirable_transform: TransformMethod,
    pub dea: Vec<DeaAnalysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pls: Option<PlsConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl PipelineConfig {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

/// A parsed config plus where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    /// directory relative paths are resolved against
    pub base_dir: PathBuf,
    pub sha256: String,
}

impl LoadedConfig {
    pub fn from_bytes(bytes: &[u8], base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let config: PipelineConfig = serde_json::from_slice(bytes).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Self {
            config,
            base_dir: base_dir.into(),
            sha256: hex::encode(Sha256::digest(bytes)),
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_bytes(&bytes, base)
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.base_dir.join(&self.config.dataset.path)
    }

    /// Output directory: `override_dir` if given, else the config's, relative
    /// to the config file.
    pub fn output_dir(&self, override_dir: Option<&Path>) -> PathBuf {
        match override_dir {
            Some(d) => d.to_path_buf(),
            None => self.base_dir.join(&self.config.output.dir),
        }
    }
}

/// Outcome of checking a config against its dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConfigCheck {
    pub problems: Vec<String>,
    /// per DEA analysis, on the transformed panel
    pub dea: BTreeMap<String, ValidationReport>,
}

impl ConfigCheck {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty() && self.dea.values().all(ValidationReport::is_admissible)
    }
}

impl fmt::Display for ConfigCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.problems {
            writeln!(f, "error: {p}")?;
        }
        for (name, rep) in &self.dea {
            for (level, issues) in [("error", &rep.errors), ("warning", &rep.warnings)] {
                for i in issues {
                    writeln!(f, "{level} [{name}] {}: {}", serde_json::to_value(i.code).unwrap().as_str().unwrap_or(""), i.message)?;
                }
            }
        }
        if self.is_ok() {
            writeln!(f, "ok")?;
        }
        Ok(())
    }
}

fn check_static(cfg: &PipelineConfig, schema: &BTreeSet<&str>) -> Vec<String> {
    let mut problems = Vec::new();
    let mut known = |what: &str, var: &str| {
        if !schema.contains(var) {
            problems.push(format!("unknown variable `{var}` in {what}"));
        }
    };
    let mut names = BTreeSet::new();
    for a in &cfg.dea {
        for v in a.spec.inputs.iter().chain(&a.spec.outputs) {
            known(&format!("dea analysis `{}`", a.name), v);
        }
    }
    if let Some(p) = &cfg.pls {
        for m in p.all_models() {
            for b in &m.spec.blocks {
                for v in &b.indicators {
                    known(&format!("pls model `{}`", m.name), v);
                }
            }
        }
        for cd in &p.cobb_douglas {
            for v in std::iter::once(&cd.ict).chain(&cd.health) {
                known("cobb_douglas", v);
            }
            if let CobbDouglasTarget::Variable(v) = &cd.target {
                known("cobb_douglas target", v);
            }
        }
    }
    if cfg.dea.is_empty() {
        problems.push("at least one dea analysis is required".into());
    }
    for a in &cfg.dea {
        if !names.insert(a.name.as_str()) {
            problems.push(format!("duplicate dea analysis `{}`", a.name));
        }
        if let Err(e) = a.spec.validate() {
            problems.push(format!("dea analysis `{}`: {e}", a.name));
        }
    }
    if let Some(c) = &cfg.cluster {
        if c.k_min < 2 || c.k_max < c.k_min {
            problems.push(format!("cluster: need k_max >= k_min >= 2 (got {} and {})", c.k_max, c.k_min));
        }
        if c.restarts == 0 {
            problems.push("cluster: restarts must be at least 1".into());
        }
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            problems.push(format!("cluster: alpha must lie in (0, 1), got {}", c.alpha));
        }
    }
    if let Some(p) = &cfg.pls {
        let models = p.all_models();
        if models.is_empty() && p.cobb_douglas.is_empty() {
            problems.push("pls: no models configured".into());
        }
        let mut model_names = BTreeSet::new();
        for m in &models {
            if !model_names.insert(m.name.clone()) {
                problems.push(format!("pls: duplicate model `{}`", m.name));
            }
            if let Err(e) = m.spec.validate() {
                problems.push(format!("pls model `{}`: {e}", m.name));
            }
        }
        if p.bootstrap < pls::MIN_BOOTSTRAP {
            problems.push(format!("pls: bootstrap must be at least {}", pls::MIN_BOOTSTRAP));
        }
        for cd in &p.cobb_douglas {
            if let CobbDouglasTarget::Efficiency(a) = &cd.target {
                if !names.contains(a.as_str()) {
                    problems.push(format!("cobb_douglas target refers to unknown dea analysis `{a}`"));
                }
            }
        }
    }
    problems
}

/// Undesirable variables that some analysis uses as a DEA output.
fn undesirable_outputs(cfg: &PipelineConfig, schema: &[VariableDef]) -> Vec<String> {
    let used: BTreeSet<&String> = cfg.dea.iter().flat_map(|a| &a.spec.outputs).collect();
    schema
        .iter()
        .filter(|v| v.direction == Direction::Undesirable && used.contains(&v.name))
        .map(|v| v.name.clone())
        .collect()
}

struct Loaded {
    raw: PanelDataset,
    dea: PanelDataset,
    dataset_sha256: String,
}

fn load_dataset(loaded: &LoadedConfig, problems: &mut Vec<String>) -> Result<Option<Loaded>, PipelineError> {
    let path = loaded.dataset_path();
    let bytes = std::fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
    let raw = match panel::load_panel(bytes.as_slice(), &loaded.config.dataset.schema) {
        Ok(p) => p,
        Err(e) => {
            problems.push(format!("dataset {}: {e}", path.display()));
            return Ok(None);
        }
    };
    let mut dea = raw.clone();
    for v in undesirable_outputs(&loaded.config, &loaded.config.dataset.schema) {
        match panel::transform_undesirable(&dea, &v, loaded.config.undesirable_transform) {
            Ok(t) => dea = t,
            Err(e) => problems.push(format!("transform of `{v}`: {e}")),
        }
    }
    Ok(Some(Loaded {
        raw,
        dea,
        dataset_sha256: hex::encode(Sha256::digest(&bytes)),
    }))
}

/// Checks the config and its dataset without running any stage.
pub fn check_config(loaded: &LoadedConfig) -> Result<ConfigCheck, PipelineError> {
    Ok(prepare(loaded)?.0)
}

fn prepare(loaded: &LoadedConfig) -> Result<(ConfigCheck, Option<Loaded>), PipelineError> {
    let cfg = &loaded.config;
    let mut check = ConfigCheck::default();
    let schema: BTreeSet<&str> = cfg.dataset.schema.iter().map(|v| v.name.as_str()).collect();
    if schema.len() != cfg.dataset.schema.len() {
        check.problems.push("duplicate variable names in schema".into());
    }
    check.problems.extend(check_static(cfg, &schema));
    if !check.problems.is_empty() {
        return Ok((check, None));
    }
    let data = load_dataset(loaded, &mut check.problems)?;
    if let Some(d) = &data {
        for a in &cfg.dea {
            check.dea.insert(a.name.clone(), panel::validate_for_dea(&d.dea, &a.spec));
        }
    }
    Ok((check, data))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_sha256: String,
    pub dataset_sha256: String,
    /// effective seed per stochastic stage
    pub seeds: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_override: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "content", rename_all = "snake_case")]
pub enum Stage<T> {
    Pending,
    Completed(T),
    Skipped(String),
    Failed(String),
}

impl<T> Stage<T> {
    pub fn completed(&self) -> Option<&T> {
        match self {
            Stage::Completed(t) => Some(t),
            _ => None,
        }
    }

    pub fn is_completed(&self) -> bool {
        matches!(self, Stage::Completed(_))
    }

    pub fn is_skipped(&self) -> bool {
        matches!(self, Stage::Skipped(_))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyTable {
    pub analysis: String,
    pub spec: DeaSpec,
    pub dmus: Vec<String>,
    pub periods: Vec<String>,
    /// dmu × period
    pub scores: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub fully_efficient: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<Issue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub dmu: String,
    /// 1 = cluster with the highest mean efficiency
    pub cluster: usize,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterTable {
    pub analysis: String,
    pub sweep: KSweepReport,
    pub selected_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anova: Option<AnovaResult>,
    /// descending, aligned with cluster labels 1..=k
    pub centroids: Vec<f64>,
    pub membership: Vec<Membership>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceRow {
    pub dmu: String,
    /// one label per analysis
    pub clusters: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Contingency {
    pub rows: String,
    pub columns: String,
    /// counts[i][j]: DMUs in cluster i+1 of `rows` and j+1 of `columns`
    pub counts: Vec<Vec<usize>>,
    /// DMUs with the same label in both analyses
    pub agreement: usize,
    pub total: usize,
    pub agreement_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub analyses: Vec<String>,
    pub rows: Vec<CorrespondenceRow>,
    pub tables: Vec<Contingency>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlsModelReport {
    pub name: String,
    pub spec: PathModelSpec,
    pub estimates: PathEstimates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CobbDouglasReport {
    pub name: String,
    pub target: String,
    pub observations: usize,
    pub fit: OlsFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlsReport {
    pub bootstrap: usize,
    pub seed: u64,
    pub models: Vec<PlsModelReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cobb_douglas: Vec<CobbDouglasReport>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage: String,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BundleStatus {
    Complete,
    Incomplete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub provenance: Provenance,
    pub status: BundleStatus,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<Diagnostic>,
    pub dea: Stage<Vec<EfficiencyTable>>,
    pub cluster: Stage<Vec<ClusterTable>>,
    pub correspondence: Stage<Correspondence>,
    pub pls: Stage<PlsReport>,
    pub caveats: Vec<String>,
}

impl ReportBundle {
    pub fn efficiency(&self, analysis: &str) -> Option<&EfficiencyTable> {
        self.dea.completed()?.iter().find(|t| t.analysis == analysis)
    }

    pub fn clusters(&self, analysis: &str) -> Option<&ClusterTable> {
        self.cluster.completed()?.iter().find(|t| t.analysis == analysis)
    }

    /// Complete when every stage either ran or was left out of the config.
    fn refresh_status(&mut self) {
        fn done<T>(s: &Stage<T>) -> bool {
            match s {
                Stage::Completed(_) => true,
                Stage::Skipped(reason) => reason == NOT_CONFIGURED,
                _ => false,
            }
        }
        let correspondence = done(&self.correspondence)
            || matches!(&self.correspondence, Stage::Skipped(r) if r == SINGLE_ANALYSIS);
        self.status = if done(&self.dea) && done(&self.cluster) && correspondence && done(&self.pls) {
            BundleStatus::Complete
        } else {
            BundleStatus::Incomplete
        };
    }

    pub fn has_failure(&self) -> bool {
        !self.diagnostics.is_empty()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("bundle serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Usage(format!("not a report bundle: {e}")))
    }
}

const NOT_CONFIGURED: &str = "not configured";
const SINGLE_ANALYSIS: &str = "correspondence needs at least two analyses";

/// A validated config with its dataset loaded, ready to run stages.
pub struct Session {
    pub config: PipelineConfig,
    pub provenance: Provenance,
    raw: PanelDataset,
    dea_panel: PanelDataset,
}

impl Session {
    /// Validates and loads. Validation problems come back as
    /// [`PipelineError::Invalid`].
    pub fn open(loaded: &LoadedConfig, seed_override: Option<u64>) -> Result<Self, PipelineError> {
        let (check, data) = prepare(loaded)?;
        if !check.is_ok() {
            return Err(PipelineError::Invalid(check));
        }
        let data = data.expect("dataset loads when the check passes");
        let mut config = loaded.config.clone();
        if let Some(s) = seed_override {
            if let Some(c) = config.cluster.as_mut() {
                c.seed = s;
            }
            if let Some(p) = config.pls.as_mut() {
                p.seed = s;
            }
        }
        let mut seeds = BTreeMap::new();
        if let Some(c) = &config.cluster {
            seeds.insert("cluster".to_string(), c.seed);
        }
        if let Some(p) = &config.pls {
            seeds.insert("pls".to_string(), p.seed);
        }
        Ok(Self {
            provenance: Provenance {
                tool: TOOL.into(),
                version: VERSION.into(),
                config_sha256: loaded.sha256.clone(),
                dataset_sha256: data.dataset_sha256,
                seeds,
                seed_override,
            },
            config,
            raw: data.raw,
            dea_panel: data.dea,
        })
    }

    pub fn raw_panel(&self) -> &PanelDataset {
        &self.raw
    }

    pub fn dea_panel(&self) -> &PanelDataset {
        &self.dea_panel
    }

    pub fn new_bundle(&self) -> ReportBundle {
        ReportBundle {
            provenance: self.provenance.clone(),
            status: BundleStatus::Incomplete,
            diagnostics: Vec::new(),
            dea: Stage::Pending,
            cluster: Stage::Pending,
            correspondence: Stage::Pending,
            pls: Stage::Pending,
            caveats: vec![cluster::CIRCULARITY_CAVEAT.to_string()],
        }
    }

    /// Checks that a bundle read from disk was produced from this config and data.
    pub fn adopt(&self, bundle: &ReportBundle) -> Result<(), PipelineError> {
        if bundle.provenance != self.provenance {
            return Err(PipelineError::Usage(
                "input report was produced from a different config, dataset or seed".into(),
            ));
        }
        Ok(())
    }

    fn fail<T>(bundle: &mut ReportBundle, stage: &str, message: String) -> Stage<T> {
        bundle.diagnostics.push(Diagnostic {
            stage: stage.into(),
            message: message.clone(),
        });
        Stage::Failed(message)
    }

    /// Stage 1. `periods` restricts every analysis to those period labels.
    pub fn run_dea(&self, bundle: &mut ReportBundle, periods: Option<&[String]>) {
        let mut tables = Vec::new();
        for a in &self.config.dea {
            let run = match periods {
                Some(p) => dea::run_periods(&self.dea_panel, &a.spec, p),
                None => dea::run_panel_dea(&self.dea_panel, &a.spec),
            };
            match run {
                Ok(eff) => tables.push(EfficiencyTable {
                    analysis: a.name.clone(),
                    spec: a.spec.clone(),
                    fully_efficient: eff.fully_efficient().iter().map(|s| s.to_string()).collect(),
                    warnings: panel::validate_for_dea(&self.dea_panel, &a.spec).warnings,
                    dmus: eff.dmus,
                    periods: eff.periods,
                    scores: eff.scores,
                    means: eff.means,
                }),
                Err(e) => {
                    bundle.dea = Self::fail(bundle, "dea", format!("analysis `{}`: {}", a.name, describe_dea(&e)));
                    bundle.refresh_status();
                    return;
                }
            }
        }
        bundle.dea = Stage::Completed(tables);
        bundle.refresh_status();
    }

    /// Stage 2: k sweep on each analysis's mean scores, then the
    /// correspondence between analyses.
    pub fn run_cluster(&self, bundle: &mut ReportBundle) {
        let Some(cfg) = &self.config.cluster else {
            bundle.cluster = Stage::Skipped(NOT_CONFIGURED.into());
            bundle.correspondence = Stage::Skipped(NOT_CONFIGURED.into());
            bundle.refresh_status();
            return;
        };
        let Some(tables) = bundle.dea.completed().cloned() else {
            bundle.cluster = Stage::Skipped("dea stage did not complete".into());
            bundle.correspondence = Stage::Skipped("dea stage did not complete".into());
            bundle.refresh_status();
            return;
        };
        let mut out = Vec::new();
        for t in &tables {
            match cluster::sweep_k(&cluster::univariate(&t.means), cfg) {
                Ok(sweep) => out.push(cluster_table(t, sweep)),
                Err(e) => {
                    bundle.cluster = Self::fail(bundle, "cluster", format!("analysis `{}`: {e}", t.analysis));
                    bundle.correspondence = Stage::Skipped("cluster stage failed".into());
                    bundle.refresh_status();
                    return;
                }
            }
        }
        bundle.correspondence = correspondence(&out);
        bundle.cluster = Stage::Completed(out);
        bundle.refresh_status();
    }

    /// Stage 3: PLS path models with bootstrap inference, plus the
    /// log-linear OLS fits.
    pub fn run_pls(&self, bundle: &mut ReportBundle) {
        let Some(cfg) = &self.config.pls else {
            bundle.pls = Stage::Skipped(NOT_CONFIGURED.into());
            bundle.refresh_status();
            return;
        };
        if !bundle.cluster.is_completed() {
            bundle.pls = Stage::Skipped("cluster stage did not complete".into());
            bundle.refresh_status();
            return;
        }
        match self.pls_report(cfg, bundle) {
            Ok(r) => bundle.pls = Stage::Completed(r),
            Err(msg) => bundle.pls = Self::fail(bundle, "pls", msg),
        }
        bundle.refresh_status();
    }

    fn pls_report(&self, cfg: &PlsConfig, bundle: &ReportBundle) -> Result<PlsReport, String> {
        let mut models = Vec::new();
        for m in cfg.all_models() {
            let vars: Vec<&str> = m.spec.blocks.iter().flat_map(|b| b.indicators.iter().map(String::as_str)).collect();
            let data = pls::observations_from_panel(&self.raw, &vars).map_err(|e| format!("model `{}`: {e}", m.name))?;
            let mut estimates =
                pls::fit_with_bootstrap(&data, &m.spec, cfg.bootstrap, cfg.seed).map_err(|e| format!("model `{}`: {e}", m.name))?;
            estimates.scores.clear();
            models.push(PlsModelReport {
                name: m.name,
                spec: m.spec,
                estimates,
            });
        }
        let mut cobb_douglas = Vec::new();
        for cd in &cfg.cobb_douglas {
            let health: Vec<&str> = cd.health.iter().map(String::as_str).collect();
            let name = format!("{}: {}", cd.ict, cd.health.join(", "));
            let design = pls::build_cobb_douglas_design(&self.raw, &cd.ict, &health).map_err(|e| format!("cobb_douglas `{name}`: {e}"))?;
            let (label, target) = self.cd_target(&cd.target, bundle).map_err(|e| format!("cobb_douglas `{name}`: {e}"))?;
            let fit = pls::ols(&design.with_intercept(), &target).map_err(|e| format!("cobb_douglas `{name}`: {e}"))?;
            cobb_douglas.push(CobbDouglasReport {
                name,
                target: label,
                observations: design.nrows(),
                fit,
            });
        }
        Ok(PlsReport {
            bootstrap: cfg.bootstrap,
            seed: cfg.seed,
            models,
            cobb_douglas,
        })
    }

    /// ln target in design row order (dmu-major, then period).
    fn cd_target(&self, target: &CobbDouglasTarget, bundle: &ReportBundle) -> Result<(String, Vec<f64>), String> {
        match target {
            CobbDouglasTarget::Efficiency(a) => {
                let t = bundle.efficiency(a).ok_or_else(|| format!("no efficiency table for `{a}`"))?;
                if t.periods != self.raw.periods() {
                    return Err(format!("efficiency table `{a}` does not cover every period"));
                }
                Ok((format!("ln(efficiency:{a})"), t.scores.iter().flatten().map(|s| s.ln()).collect()))
            }
            CobbDouglasTarget::Variable(v) => {
                let design = pls::build_cobb_douglas_design(&self.raw, v, &[v]).map_err(|e| e.to_string())?;
                Ok((format!("ln({v})"), design.rows.iter().map(|r| r[0]).collect()))
            }
        }
    }

    /// All three stages in order.
    pub fn run_all(&self) -> ReportBundle {
        let mut bundle = self.new_bundle();
        self.run_dea(&mut bundle, None);
        self.run_cluster(&mut bundle);
        self.run_pls(&mut bundle);
        bundle
    }
}

fn describe_dea(e: &DeaError) -> String {
    match e {
        DeaError::At { period, dmu, source } => format!("period `{period}`, dmu `{dmu}`: {source}"),
        other => other.to_string(),
    }
}

fn cluster_table(t: &EfficiencyTable, sweep: KSweepReport) -> ClusterTable {
    let selected = sweep.selected().cloned();
    let (anova, centroids, membership) = match selected {
        Some(entry) => {
            let ranked = entry.solution.ranked_descending();
            let membership = t
                .dmus
                .iter()
                .zip(&t.means)
                .zip(&ranked.assignments)
                .map(|((d, &m), &c)| Membership {
                    dmu: d.clone(),
                    cluster: c + 1,
                    mean: m,
                })
                .collect();
            (Some(entry.anova), ranked.centroids.iter().map(|c| c[0]).collect(), membership)
        }
        None => (None, Vec::new(), Vec::new()),
    };
    ClusterTable {
        analysis: t.analysis.clone(),
        selected_k: sweep.selected_k,
        sweep,
        anova,
        centroids,
        membership,
    }
}

fn correspondence(tables: &[ClusterTable]) -> Stage<Correspondence> {
    if tables.len() < 2 {
        return Stage::Skipped(SINGLE_ANALYSIS.into());
    }
    if let Some(t) = tables.iter().find(|t| t.selected_k.is_none()) {
        return Stage::Skipped(format!("no significant clustering for `{}`", t.analysis));
    }
    let dmus: Vec<String> = tables[0].membership.iter().map(|m| m.dmu.clone()).collect();
    let rows = dmus
        .iter()
        .enumerate()
        .map(|(i, d)| CorrespondenceRow {
            dmu: d.clone(),
            clusters: tables.iter().map(|t| t.membership[i].cluster).collect(),
        })
        .collect();
    let mut pairs = Vec::new();
    for a in 0..tables.len() {
        for b in a + 1..tables.len() {
            let (ta, tb) = (&tables[a], &tables[b]);
            let mut counts = vec![vec![0; tb.selected_k.unwrap()]; ta.selected_k.unwrap()];
            let mut agreement = 0;
            for (ma, mb) in ta.membership.iter().zip(&tb.membership) {
                counts[ma.cluster - 1][mb.cluster - 1] += 1;
                agreement += usize::from(ma.cluster == mb.cluster);
            }
            let total = ta.membership.len();
            pairs.push(Contingency {
                rows: ta.analysis.clone(),
                columns: tb.analysis.clone(),
                counts,
                agreement,
                total,
                agreement_rate: agreement as f64 / total as f64,
            });
        }
    }
    Stage::Completed(Correspondence {
        analyses: tables.iter().map(|t| t.analysis.clone()).collect(),
        rows,
        tables: pairs,
    })
}

/// Loads, validates and runs every configured stage.
pub fn run_pipeline(loaded: &LoadedConfig, seed_override: Option<u64>) -> Result<ReportBundle, PipelineError> {
    Ok(Session::open(loaded, seed_override)?.run_all())
}

/// Config for the bundled demo dataset stored at `dataset_file`.
pub fn demo_config(dataset_file: &str) -> PipelineConfig {
    use crate::dea::{Orientation, ReturnsToScale};
    use crate::synthetic::{schema, HEALTH_INPUTS, HEALTH_OUTPUTS, ICT_INPUTS, ICT_OUTPUTS};
    let spec = |i: &[&str], o: &[&str]| DeaSpec::new(i, o, ReturnsToScale::Crs, Orientation::Input);
    let endogenous = ["LEB", "IMR", "HEC", "HGDP"];
    let mut sweep = SweepConfig::new(6, 3, cluster::DEFAULT_RESTARTS, 1);
    sweep.alpha = cluster::DEFAULT_ALPHA;
    PipelineConfig {
        dataset: DatasetConfig {
            path: dataset_file.into(),
            schema: schema(),
        },
        undesirable_transform: TransformMethod::MaxMinus,
        dea: vec![
            DeaAnalysis {
                name: "ict".into(),
                spec: spec(&ICT_INPUTS, &ICT_OUTPUTS),
            },
            DeaAnalysis {
                name: "health".into(),
                spec: spec(&HEALTH_INPUTS, &HEALTH_OUTPUTS),
            },
        ],
        cluster: Some(sweep),
        pls: Some(PlsConfig {
            models: Vec::new(),
            grid: Some(PlsGrid {
                exogenous: vec!["MCS".into(), "IU".into(), "MTL".into()],
                endogenous: endogenous.iter().map(|s| s.to_string()).collect(),
                joint: false,
            }),
            inner_scheme: InnerScheme::PathWeighting,
            bootstrap: pls::DEFAULT_BOOTSTRAP,
            seed: 2,
            cobb_douglas: ["MCS", "IU", "MTL"]
                .iter()
                .map(|ict| CobbDouglasConfig {
                    ict: ict.to_string(),
                    health: endogenous.iter().map(|s| s.to_string()).collect(),
                    target: CobbDouglasTarget::Efficiency("health".into()),
                })
                .collect(),
        }),
        output: OutputConfig {
            dir: "report".into(),
            formats: vec![Format::Json, Format::Csv, Format::Text],
        },
    }
}
