use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use eelab_core::eeladder::{JumpMode, LadderConfig, Schedule};
use eelab_core::statespace::{
    EnergyModel, Ladder, LadderLevel, ModelSpec, DEFAULT_ENUMERATION_CAP,
};
use eelab_core::swcut::{
    AffinityParams, ClusterPick, InitKind, RegionModelConfig, SamplerKind, SegmentConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    Run,
    Spectral,
    Segment,
    Q1,
    Q2,
    Q3,
    Q4,
    SwcutVsGibbs,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Run => "run",
            Experiment::Spectral => "spectral",
            Experiment::Segment => "segment",
            Experiment::Q1 => "q1",
            Experiment::Q2 => "q2",
            Experiment::Q3 => "q3",
            Experiment::Q4 => "q4",
            Experiment::SwcutVsGibbs => "swcut_vs_gibbs",
        }
    }

    fn needs_ladder(self) -> bool {
        matches!(
            self,
            Experiment::Run | Experiment::Q1 | Experiment::Q2 | Experiment::Q3
        )
    }

    fn needs_segmentation(self) -> bool {
        matches!(self, Experiment::Segment | Experiment::SwcutVsGibbs)
    }
}

fn default_replicates() -> usize {
    20
}

fn default_cap() -> usize {
    DEFAULT_ENUMERATION_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_cap")]
    pub enumeration_cap: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ladder: Option<LadderBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectral: Option<SpectralBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ledger: Option<LedgerBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationBlock>,
    #[serde(default)]
    pub output: OutputBlock,
    /// Directory that relative input paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

fn default_burn_in() -> u64 {
    1000
}

fn default_p_jump() -> f64 {
    0.1
}

fn default_jump_mode() -> JumpMode {
    JumpMode::Restricted
}

fn default_schedule() -> Schedule {
    Schedule::Parallel
}

fn default_steps() -> u64 {
    200_000
}

fn default_checkpoint() -> u64 {
    1000
}

/// Ladder settings. `steps` is the number of transitions of every level
/// (macro steps under the parallel schedule, per-level steps under serial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderBlock {
    pub temperatures: Vec<f64>,
    /// `null` entries mean no truncation; an empty list leaves every level
    /// untruncated.
    #[serde(default)]
    pub truncations: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ring_boundaries: Option<Vec<f64>>,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    #[serde(default = "default_p_jump")]
    pub p_jump: f64,
    #[serde(default = "default_jump_mode")]
    pub jump_mode: JumpMode,
    #[serde(default = "default_schedule")]
    pub schedule: Schedule,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_records: Option<usize>,
    #[serde(default)]
    pub initial_state: usize,
    /// Level-0 steps between TV checkpoints in q1/q2.
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: u64,
}

impl LadderBlock {
    pub fn ladder(&self) -> eelab_core::Result<Ladder> {
        let levels = self
            .temperatures
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let h = self
                    .truncations
                    .get(i)
                    .copied()
                    .flatten()
                    .unwrap_or(f64::NEG_INFINITY);
                LadderLevel::new(i, t, h)
            })
            .collect();
        Ladder::new(levels)
    }

    pub fn ladder_config(&self) -> eelab_core::Result<LadderConfig> {
        let mut c = LadderConfig::new(self.ladder()?);
        c.ring_boundaries = self.ring_boundaries.clone();
        c.burn_in = self.burn_in;
        c.p_jump = self.p_jump;
        c.jump_mode = self.jump_mode;
        c.schedule = self.schedule;
        c.steps_per_level = self.steps;
        c.macro_steps = self.steps;
        c.max_records = self.max_records.unwrap_or(usize::MAX);
        c.initial_state = self.initial_state;
        Ok(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Local,
    Mis,
    Mixture,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Local => "local",
            KernelKind::Mis => "mis",
            KernelKind::Mixture => "mixture",
        }
    }
}

/// Independence proposal: a tempered (optionally truncated) copy of the
/// target, or explicit weights over the states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProposalSpec {
    Tempered {
        temperature: f64,
        #[serde(default)]
        truncation: Option<f64>,
    },
    Weights {
        weights: Vec<f64>,
    },
}

fn default_kernel() -> KernelKind {
    KernelKind::Mis
}

fn default_proposal() -> ProposalSpec {
    ProposalSpec::Tempered {
        temperature: 4.0,
        truncation: None,
    }
}

fn default_alpha() -> f64 {
    0.5
}

fn default_cell_size() -> usize {
    2
}

fn default_tolerance() -> f64 {
    1e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralBlock {
    /// Kernel analysed by the `spectral` experiment.
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default = "default_proposal")]
    pub proposal: ProposalSpec,
    /// Local-move weight of the mixture kernel.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Consecutive fine states merged per coarse cell.
    #[serde(default = "default_cell_size")]
    pub cell_size: usize,
    /// Tolerance for matching closed-form bounds and the mixture bound.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for SpectralBlock {
    fn default() -> Self {
        Self {
            kernel: default_kernel(),
            proposal: default_proposal(),
            alpha: default_alpha(),
            cell_size: default_cell_size(),
            tolerance: default_tolerance(),
        }
    }
}

fn default_sizes() -> Vec<usize> {
    vec![100, 1000, 10_000]
}

fn default_thin() -> u64 {
    5
}

/// Frozen-ledger settings for q3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LedgerBlock {
    #[serde(default = "default_sizes")]
    pub sizes: Vec<usize>,
    #[serde(default = "default_burn_in")]
    pub burn_in: u64,
    #[serde(default = "default_thin")]
    pub thin: u64,
}

impl Default for LedgerBlock {
    fn default() -> Self {
        Self {
            sizes: default_sizes(),
            burn_in: default_burn_in(),
            thin: default_thin(),
        }
    }
}

fn default_side() -> usize {
    32
}

fn default_low() -> f64 {
    0.3
}

fn default_high() -> f64 {
    0.7
}

fn default_noise() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageSpec {
    Pgm {
        path: PathBuf,
    },
    /// Disc of intensity `high` on a `low` background plus Gaussian noise.
    Synthetic {
        #[serde(default = "default_side")]
        width: usize,
        #[serde(default = "default_side")]
        height: usize,
        #[serde(default = "default_low")]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
        #[serde(default = "default_noise")]
        noise: f64,
    },
}

fn default_beta() -> f64 {
    1.0
}

fn default_labels() -> usize {
    2
}

fn default_sweeps() -> usize {
    10
}

fn default_threshold() -> f64 {
    0.95
}

fn default_max_sweeps() -> usize {
    2000
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationBlock {
    pub image: ImageSpec,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_labels")]
    pub labels: usize,
    #[serde(default)]
    pub affinity: AffinityParams,
    pub region: RegionModelConfig,
    #[serde(default)]
    pub sampler: SamplerKind,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default)]
    pub cluster_pick: ClusterPick,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    /// Agreement fraction that ends a swcut_vs_gibbs chain.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Sweep budget per swcut_vs_gibbs chain.
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_true")]
    pub overlay: bool,
}

impl SegmentationBlock {
    pub fn segment_config(&self) -> SegmentConfig {
        SegmentConfig {
            beta: self.beta,
            labels: self.labels,
            affinity: self.affinity,
            region: self.region.clone(),
            sampler: self.sampler,
            init: self.init,
            cluster_pick: self.cluster_pick,
        }
    }
}

fn config_err(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid configuration at `{key}`: {msg}"))
}

impl ExperimentConfig {
    pub fn experiment(&self) -> Experiment {
        self.experiment
            .expect("validated config names its experiment")
    }

    pub fn build_model(&self) -> CliResult<EnergyModel> {
        self.model
            .as_ref()
            .ok_or_else(|| config_err("model", "this experiment needs a model block"))?
            .build(self.enumeration_cap)
            .map_err(CliError::from_validation)
    }

    pub fn ladder_block(&self) -> &LadderBlock {
        self.ladder
            .as_ref()
            .expect("validated config has a ladder block")
    }

    pub fn spectral_block(&self) -> &SpectralBlock {
        self.spectral
            .as_ref()
            .expect("validated config has a spectral block")
    }

    pub fn ledger_block(&self) -> &LedgerBlock {
        self.ledger
            .as_ref()
            .expect("validated config has a ledger block")
    }

    pub fn segmentation_block(&self) -> &SegmentationBlock {
        self.segmentation
            .as_ref()
            .expect("validated config has a segmentation block")
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Check the blocks the experiment needs and fill defaults.
    pub fn validate(&mut self) -> CliResult<()> {
        let exp = self
            .experiment
            .ok_or_else(|| config_err("experiment", "no experiment given"))?;
        if self.replicates == 0 {
            return Err(config_err("replicates", "must be at least 1"));
        }
        if exp.needs_ladder() || matches!(exp, Experiment::Spectral | Experiment::Q4) {
            let model = self.build_model()?;
            model
                .require_enumerable()
                .map_err(CliError::from_validation)?;
            if exp.needs_ladder() {
                self.validate_ladder(exp, &model)?;
            } else {
                self.validate_spectral(&model)?;
            }
        }
        if exp == Experiment::Q3 {
            let ledger = self.ledger.get_or_insert_with(LedgerBlock::default);
            if ledger.sizes.is_empty() {
                return Err(config_err("ledger.sizes", "need at least one size"));
            }
            if let Some(i) = ledger.sizes.iter().position(|&s| s == 0) {
                return Err(config_err(
                    &format!("ledger.sizes[{i}]"),
                    "must be positive",
                ));
            }
            if ledger.thin == 0 {
                return Err(config_err("ledger.thin", "must be positive"));
            }
        }
        if exp.needs_segmentation() {
            self.validate_segmentation()?;
        }
        Ok(())
    }

    fn validate_ladder(&mut self, exp: Experiment, model: &EnergyModel) -> CliResult<()> {
        let block = self
            .ladder
            .as_mut()
            .ok_or_else(|| config_err("ladder", "this experiment needs a ladder block"))?;
        let k = block.temperatures.len();
        if block.truncations.is_empty() {
            block.truncations = vec![None; k];
        }
        if block.truncations.len() != k {
            return Err(config_err(
                "ladder.truncations",
                format!("{} entries for {k} temperatures", block.truncations.len()),
            ));
        }
        if let Some(i) = block
            .truncations
            .iter()
            .position(|h| h.is_some_and(|h| !h.is_finite()))
        {
            return Err(config_err(
                &format!("ladder.truncations[{i}]"),
                "must be finite or null",
            ));
        }
        if block.checkpoint_every == 0 {
            return Err(config_err("ladder.checkpoint_every", "must be positive"));
        }
        if block.max_records == Some(0) {
            return Err(config_err("ladder.max_records", "must be positive"));
        }
        let cfg = block.ladder_config().map_err(CliError::from_validation)?;
        cfg.validate(model).map_err(CliError::from_validation)?;
        if exp != Experiment::Run && k < 2 {
            return Err(config_err(
                "ladder.temperatures",
                "this experiment needs at least two levels",
            ));
        }
        Ok(())
    }

    fn validate_spectral(&mut self, model: &EnergyModel) -> CliResult<()> {
        let block = self.spectral.get_or_insert_with(SpectralBlock::default);
        if !(0.0..=1.0).contains(&block.alpha) {
            return Err(config_err("spectral.alpha", "must lie in [0, 1]"));
        }
        if block.cell_size == 0 {
            return Err(config_err("spectral.cell_size", "must be positive"));
        }
        if !(block.tolerance > 0.0) {
            return Err(config_err("spectral.tolerance", "must be positive"));
        }
        match &block.proposal {
            ProposalSpec::Tempered {
                temperature,
                truncation,
            } => {
                if !(*temperature >= 1.0) || !temperature.is_finite() {
                    return Err(config_err(
                        "spectral.proposal.temperature",
                        "must be finite and at least 1",
                    ));
                }
                if truncation.is_some_and(|h| !h.is_finite()) {
                    return Err(config_err(
                        "spectral.proposal.truncation",
                        "must be finite or null",
                    ));
                }
            }
            ProposalSpec::Weights { weights } => {
                if weights.len() != model.state_count() {
                    return Err(config_err(
                        "spectral.proposal.weights",
                        format!(
                            "{} weights for {} states",
                            weights.len(),
                            model.state_count()
                        ),
                    ));
                }
                if let Some(i) = weights.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
                    return Err(config_err(
                        &format!("spectral.proposal.weights[{i}]"),
                        "must be positive",
                    ));
                }
            }
        }
        Ok(())
    }

    fn validate_segmentation(&mut self) -> CliResult<()> {
        let block = self.segmentation.as_ref().ok_or_else(|| {
            config_err("segmentation", "this experiment needs a segmentation block")
        })?;
        block
            .segment_config()
            .validate()
            .map_err(CliError::from_validation)?;
        if !(block.threshold > 0.0 && block.threshold <= 1.0) {
            return Err(config_err("segmentation.threshold", "must lie in (0, 1]"));
        }
        if let ImageSpec::Synthetic {
            width,
            height,
            low,
            high,
            noise,
        } = block.image
        {
            if width == 0 || height == 0 {
                return Err(config_err(
                    "segmentation.image",
                    "synthetic image needs positive size",
                ));
            }
            for (key, v) in [("low", low), ("high", high)] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(config_err(
                        &format!("segmentation.image.{key}"),
                        "must lie in [0, 1]",
                    ));
                }
            }
            if !(noise >= 0.0) {
                return Err(config_err(
                    "segmentation.image.noise",
                    "must be non-negative",
                ));
            }
            if block.labels < 2 {
                return Err(config_err(
                    "segmentation.labels",
                    "the synthetic scene has two regions",
                ));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Deserialize without semantic validation; errors carry the key path.
pub fn parse_config(text: &str) -> CliResult<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Config(format!("invalid configuration at `{path}`: {}", e.inner()))
    })
}

/// Read, parse and validate a config file. `experiment` and `seed` override
/// the file's values when given.
pub fn load_config_with(
    path: &Path,
    experiment: Option<Experiment>,
    seed: Option<u64>,
) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = parse_config(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if let Some(exp) = experiment {
        match cfg.experiment {
            Some(named) if named != exp => {
                return Err(config_err(
                    "experiment",
                    format!(
                        "config is for `{}`, command asked for `{}`",
                        named.name(),
                        exp.name()
                    ),
                ))
            }
            _ => cfg.experiment = Some(exp),
        }
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    load_config_with(path, None, None)
}
