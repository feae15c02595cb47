//! Run configuration: a TOML document with a few flat `key = value`
//! sections. Every key the experiment reads has a default, unknown keys are
//! rejected with the nearest valid key, and the resolved config serializes
//! back with every default written out.

use fastcs_core::{DirectionKind, PerturbTarget};
use std::fmt;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("unknown key `{key}`{}; valid keys: {}", suggestion_text(.suggestion), .valid.join(", "))]
    UnknownKey {
        key: String,
        suggestion: Option<String>,
        valid: Vec<String>,
    },
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("type mismatch for `{key}`: expected {expected}, found {found}")]
    TypeMismatch {
        key: String,
        expected: &'static str,
        found: String,
    },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

fn suggestion_text(s: &Option<String>) -> String {
    match s {
        Some(s) => format!(" (did you mean `{s}`?)"),
        None => String::new(),
    }
}

type Result<T> = std::result::Result<T, ConfigError>;

/// Closest candidate by Jaro-Winkler similarity, if any is reasonably close.
pub fn nearest<'a>(key: &str, candidates: impl IntoIterator<Item = &'a str>) -> Option<String> {
    candidates
        .into_iter()
        .map(|c| (strsim::jaro_winkler(key, c), c))
        .filter(|(s, _)| *s >= 0.75)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Sample,
    Invert,
    Layers,
    JacobianProbe,
    DirectionCompare,
    TrainDenoiser,
    Acceptance,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Sample,
        Experiment::Invert,
        Experiment::Layers,
        Experiment::JacobianProbe,
        Experiment::DirectionCompare,
        Experiment::TrainDenoiser,
        Experiment::Acceptance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Sample => "sample",
            Experiment::Invert => "invert",
            Experiment::Layers => "layers",
            Experiment::JacobianProbe => "jacobian-probe",
            Experiment::DirectionCompare => "direction-compare",
            Experiment::TrainDenoiser => "train-denoiser",
            Experiment::Acceptance => "acceptance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    /// Sections this experiment reads, in serialization order.
    pub fn sections(self) -> &'static [&'static str] {
        match self {
            Experiment::Sample => &["schedule", "denoiser", "sampler"],
            Experiment::Invert => &["schedule", "denoiser", "operator", "sampler"],
            Experiment::Layers => &["schedule", "layers"],
            Experiment::JacobianProbe => &["schedule", "denoiser", "probe"],
            Experiment::DirectionCompare => &["schedule", "denoiser", "compare"],
            Experiment::TrainDenoiser => &["schedule", "train"],
            Experiment::Acceptance => &["acceptance"],
        }
    }

    fn uses_runs(self) -> bool {
        matches!(self, Experiment::Sample | Experiment::Invert)
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleSpec {
    pub t_max: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            t_max: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

pub const BUILTIN_GRID_MLP: &str = "builtin:grid16";

#[derive(Clone, Debug, PartialEq)]
pub enum DenoiserKind {
    Gaussian {
        mean: Vec<f64>,
        /// row-major
        covariance: Vec<f64>,
    },
    Gmm {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<f64>>,
    },
    GmmRandom {
        dim: usize,
        components: usize,
        prior_seed: u64,
    },
    /// A saved MLP file or [`BUILTIN_GRID_MLP`].
    Mlp {
        path: String,
    },
    Linear {
        matrix: Vec<f64>,
    },
}

impl DenoiserKind {
    pub fn name(&self) -> &'static str {
        match self {
            DenoiserKind::Gaussian { .. } => "gaussian",
            DenoiserKind::Gmm { .. } => "gmm",
            DenoiserKind::GmmRandom { .. } => "gmm-random",
            DenoiserKind::Mlp { .. } => "mlp",
            DenoiserKind::Linear { .. } => "linear",
        }
    }

    /// Whether the denoiser comes from an explicit prior we can sample.
    pub fn has_prior(&self) -> bool {
        matches!(
            self,
            DenoiserKind::Gaussian { .. } | DenoiserKind::Gmm { .. } | DenoiserKind::GmmRandom { .. }
        )
    }

    /// Signal length when it is known without loading files.
    fn dim(&self) -> Option<usize> {
        match self {
            DenoiserKind::Gaussian { mean, .. } => Some(mean.len()),
            DenoiserKind::Gmm { means, .. } => means.first().map(|m| m.len()),
            DenoiserKind::GmmRandom { dim, .. } => Some(*dim),
            DenoiserKind::Mlp { path } if path == BUILTIN_GRID_MLP => {
                Some(fastcs_core::fixtures::GRID_MLP_SIDE * fastcs_core::fixtures::GRID_MLP_SIDE)
            }
            DenoiserKind::Mlp { .. } => None,
            DenoiserKind::Linear { matrix } => Some((matrix.len() as f64).sqrt().round() as usize),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    /// Signal shape; its product is the denoiser dimension.
    pub shape: Vec<usize>,
}

impl DenoiserSpec {
    fn default_for(experiment: Experiment) -> Self {
        let kind = match experiment {
            Experiment::DirectionCompare => DenoiserKind::Mlp {
                path: BUILTIN_GRID_MLP.into(),
            },
            Experiment::JacobianProbe => DenoiserKind::GmmRandom {
                dim: 16,
                components: 3,
                prior_seed: 0,
            },
            _ => default_gaussian(),
        };
        let shape = default_shape(&kind);
        Self { kind, shape }
    }
}

fn default_gaussian() -> DenoiserKind {
    DenoiserKind::Gaussian {
        mean: vec![0.0, 0.0],
        covariance: vec![1.0, 0.9, 0.9, 1.0],
    }
}

fn default_shape(kind: &DenoiserKind) -> Vec<usize> {
    match kind {
        DenoiserKind::Mlp { path } if path == BUILTIN_GRID_MLP => {
            vec![
                fastcs_core::fixtures::GRID_MLP_SIDE,
                fastcs_core::fixtures::GRID_MLP_SIDE,
            ]
        }
        k => k.dim().map(|d| vec![d]).unwrap_or_default(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum OperatorKind {
    Identity,
    /// Observe these flat indices.
    Mask {
        indices: Vec<usize>,
    },
    /// Observe everything except these flat indices.
    Inpaint {
        indices: Vec<usize>,
    },
    /// A fresh free-form hole per run.
    Freeform {
        coverage: (f64, f64),
    },
    Downsample {
        factor: usize,
    },
}

impl OperatorKind {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorKind::Identity => "identity",
            OperatorKind::Mask { .. } => "mask",
            OperatorKind::Inpaint { .. } => "inpaint",
            OperatorKind::Freeform { .. } => "freeform",
            OperatorKind::Downsample { .. } => "downsample",
        }
    }
}

/// Where the ground-truth signal behind `y` comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// A fresh draw from the denoiser's prior per run.
    Prior,
    /// A fresh grid-texture image per run.
    Grid,
    /// A PGM/PPM file.
    Image(String),
}

impl Target {
    fn parse(s: &str) -> Self {
        match s {
            "prior" => Target::Prior,
            "grid" => Target::Grid,
            path => Target::Image(path.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Target::Prior => "prior",
            Target::Grid => "grid",
            Target::Image(p) => p,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorSpec {
    pub kind: OperatorKind,
    pub noise_std: f64,
    pub target: Target,
    /// Fixed measurement; when set `y` is not synthesized and `target` is
    /// only used for PSNR.
    pub values: Option<Vec<f64>>,
}

impl OperatorSpec {
    fn default_for(den: &DenoiserSpec) -> Self {
        if den.kind.has_prior() {
            Self {
                kind: OperatorKind::Mask { indices: vec![0] },
                noise_std: 0.0,
                target: Target::Prior,
                values: None,
            }
        } else {
            Self {
                kind: OperatorKind::Freeform {
                    coverage: fastcs_core::operators::DEFAULT_FREEFORM_COVERAGE,
                },
                noise_std: 0.05,
                target: Target::Grid,
                values: None,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerSpec {
    pub steps: usize,
    pub k: usize,
    pub lambda: f64,
    pub direction: DirectionKind,
    pub delta: Option<f64>,
    pub epsilon_scale: f64,
    pub restarts: usize,
    pub restart_t: Option<usize>,
    pub perturb_rho: f64,
    pub perturb_target: PerturbTarget,
    pub eta: f64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        let d = fastcs_core::SamplerConfig::default();
        Self {
            steps: d.steps,
            k: d.k,
            lambda: d.lambda,
            direction: d.guidance.direction_kind,
            delta: d.guidance.delta,
            epsilon_scale: d.guidance.epsilon_scale,
            restarts: d.restarts,
            restart_t: d.restart_t,
            perturb_rho: d.perturb_rho,
            perturb_target: d.perturb_target,
            eta: d.eta,
        }
    }
}

impl SamplerSpec {
    pub fn to_sampler_config(&self) -> fastcs_core::SamplerConfig {
        fastcs_core::SamplerConfig {
            steps: self.steps,
            k: self.k,
            lambda: self.lambda,
            guidance: fastcs_core::GuidanceConfig {
                delta: self.delta,
                epsilon_scale: self.epsilon_scale,
                direction_kind: self.direction,
            },
            restarts: self.restarts,
            restart_t: self.restart_t,
            perturb_rho: self.perturb_rho,
            perturb_target: self.perturb_target,
            eta: self.eta,
            snapshot_ts: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayersSpec {
    pub iterations: usize,
    pub samples_per_layer: usize,
    pub t_probe: Option<usize>,
    pub perturb_sigma: f64,
    pub steps: usize,
    pub k: usize,
    pub lambda: f64,
    pub height: usize,
    pub width: usize,
    pub levels: (f64, f64),
    pub split: f64,
    /// `(offset_std, pixel_std)` of both layer priors.
    pub prior_std: (f64, f64),
    /// `"scene"` for the built-in two-region image, else an image path.
    pub input: String,
}

impl Default for LayersSpec {
    fn default() -> Self {
        let d = fastcs_core::LayerConfig::default();
        Self {
            iterations: d.iterations,
            samples_per_layer: d.samples_per_layer,
            t_probe: d.t_probe,
            perturb_sigma: d.perturb_sigma,
            steps: d.sampler.steps,
            k: d.sampler.k,
            lambda: d.sampler.lambda,
            height: 16,
            width: 16,
            levels: (0.2, 0.8),
            split: 0.5,
            prior_std: (0.02, 0.02),
            input: "scene".into(),
        }
    }
}

impl LayersSpec {
    pub fn to_layer_config(&self) -> fastcs_core::LayerConfig {
        let d = fastcs_core::LayerConfig::default();
        fastcs_core::LayerConfig {
            iterations: self.iterations,
            samples_per_layer: self.samples_per_layer,
            t_probe: self.t_probe,
            perturb_sigma: self.perturb_sigma,
            sampler: fastcs_core::SamplerConfig {
                steps: self.steps,
                k: self.k,
                lambda: self.lambda,
                ..d.sampler
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeSpec {
    pub timesteps: Vec<usize>,
    pub pairs: usize,
    pub target: Target,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareSpec {
    pub t: usize,
    pub updates: usize,
    pub lambda: f64,
    pub patch: usize,
    pub patch_value: f64,
    pub blur: usize,
    /// `"thin"` or `"thick"`.
    pub texture: String,
    pub delta: Option<f64>,
}

impl Default for CompareSpec {
    fn default() -> Self {
        let d = fastcs_core::diagnostics::CompareConfig::default();
        Self {
            t: d.t,
            updates: d.updates,
            lambda: d.lambda,
            patch: d.patch,
            patch_value: d.patch_value,
            blur: d.blur,
            texture: "thin".into(),
            delta: d.delta,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSpec {
    pub height: usize,
    pub width: usize,
    pub dataset: usize,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub held_out_fraction: f64,
    pub loss_threshold: Option<f64>,
    pub log_every: usize,
}

impl Default for TrainSpec {
    fn default() -> Self {
        use fastcs_core::fixtures as fx;
        Self {
            height: fx::GRID_MLP_SIDE,
            width: fx::GRID_MLP_SIDE,
            dataset: fx::GRID_MLP_DATASET,
            hidden: fx::GRID_MLP_HIDDEN.to_vec(),
            steps: fx::GRID_MLP_STEPS,
            batch_size: fx::GRID_MLP_BATCH,
            learning_rate: fx::GRID_MLP_LR,
            held_out_fraction: 0.1,
            loss_threshold: None,
            log_every: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    /// Seeds in the sweep for `sample` and `invert`.
    pub runs: usize,
    pub schedule: ScheduleSpec,
    pub denoiser: DenoiserSpec,
    pub operator: OperatorSpec,
    pub sampler: SamplerSpec,
    pub layers: LayersSpec,
    pub probe: ProbeSpec,
    pub compare: CompareSpec,
    pub train: TrainSpec,
    pub criteria: Vec<u8>,
}

impl RunConfig {
    /// All defaults for `experiment`.
    pub fn defaults(experiment: Experiment) -> Self {
        let denoiser = DenoiserSpec::default_for(experiment);
        let operator = OperatorSpec::default_for(&denoiser);
        let probe_target = if denoiser.kind.has_prior() {
            Target::Prior
        } else {
            Target::Grid
        };
        Self {
            experiment,
            seed: 0,
            runs: 1,
            schedule: ScheduleSpec::default(),
            operator,
            denoiser,
            sampler: SamplerSpec::default(),
            layers: LayersSpec::default(),
            probe: ProbeSpec {
                timesteps: vec![100, 400, 800],
                pairs: 100,
                target: probe_target,
            },
            compare: CompareSpec::default(),
            train: TrainSpec::default(),
            criteria: (1..=10).collect(),
        }
    }
}

/// Typed reads from one table; remembers which keys were asked for so the
/// leftovers can be reported.
struct Section<'a> {
    prefix: String,
    table: &'a Table,
    seen: Vec<&'static str>,
}

fn type_name(v: &Value) -> String {
    match v {
        Value::String(s) => format!("string \"{s}\""),
        Value::Integer(i) => format!("integer {i}"),
        Value::Float(f) => format!("float {f}"),
        Value::Boolean(b) => format!("boolean {b}"),
        Value::Datetime(_) => "datetime".into(),
        Value::Array(_) => "array".into(),
        Value::Table(_) => "table".into(),
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn as_usize(v: &Value) -> Option<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Some(*i as usize),
        _ => None,
    }
}

impl<'a> Section<'a> {
    fn new(prefix: &str, table: &'a Table) -> Self {
        Self {
            prefix: prefix.to_string(),
            table,
            seen: Vec::new(),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        self.table.get(key)
    }

    fn mismatch(&self, key: &str, expected: &'static str, v: &Value) -> ConfigError {
        ConfigError::TypeMismatch {
            key: self.path(key),
            expected,
            found: type_name(v),
        }
    }

    fn invalid(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError::Invalid {
            key: self.path(key),
            message: message.into(),
        }
    }

    fn f64(&mut self, key: &'static str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => as_f64(v).ok_or_else(|| self.mismatch(key, "a number", v)),
        }
    }

    fn usize(&mut self, key: &'static str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => as_usize(v).ok_or_else(|| self.mismatch(key, "a non-negative integer", v)),
        }
    }

    fn u64(&mut self, key: &'static str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(v) => Err(self.mismatch(key, "a non-negative integer", v)),
        }
    }

    fn string(&mut self, key: &'static str, default: &str) -> Result<String> {
        match self.get(key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s.clone()),
            Some(v) => Err(self.mismatch(key, "a string", v)),
        }
    }

    fn f64_list(&mut self, key: &'static str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| as_f64(v).ok_or_else(|| self.mismatch(key, "an array of numbers", v)))
                .collect(),
            Some(v) => Err(self.mismatch(key, "an array of numbers", v)),
        }
    }

    fn usize_list(&mut self, key: &'static str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| as_usize(v).ok_or_else(|| self.mismatch(key, "an array of non-negative integers", v)))
                .collect(),
            Some(v) => Err(self.mismatch(key, "an array of non-negative integers", v)),
        }
    }

    fn f64_matrix(&mut self, key: &'static str, default: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let expected = "an array of arrays of numbers";
        match self.get(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(rows)) => rows
                .iter()
                .map(|row| match row {
                    Value::Array(a) => a
                        .iter()
                        .map(|v| as_f64(v).ok_or_else(|| self.mismatch(key, expected, v)))
                        .collect(),
                    v => Err(self.mismatch(key, expected, v)),
                })
                .collect(),
            Some(v) => Err(self.mismatch(key, expected, v)),
        }
    }

    fn pair(&mut self, key: &'static str, default: (f64, f64)) -> Result<(f64, f64)> {
        let v = self.f64_list(key, &[default.0, default.1])?;
        match v.as_slice() {
            [a, b] => Ok((*a, *b)),
            _ => Err(self.invalid(key, format!("expected two numbers, got {}", v.len()))),
        }
    }

    /// `"auto"` (None) or a number.
    fn auto_f64(&mut self, key: &'static str, default: Option<f64>) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::String(s)) if s == "auto" => Ok(None),
            Some(v) => as_f64(v)
                .map(Some)
                .ok_or_else(|| self.mismatch(key, "a number or \"auto\"", v)),
        }
    }

    fn auto_usize(&mut self, key: &'static str, default: Option<usize>) -> Result<Option<usize>> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::String(s)) if s == "auto" => Ok(None),
            Some(v) => as_usize(v)
                .map(Some)
                .ok_or_else(|| self.mismatch(key, "a non-negative integer or \"auto\"", v)),
        }
    }

    /// `"none"` (None) or a number.
    fn optional_f64(&mut self, key: &'static str, default: Option<f64>) -> Result<Option<f64>> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::String(s)) if s == "none" => Ok(None),
            Some(v) => as_f64(v)
                .map(Some)
                .ok_or_else(|| self.mismatch(key, "a number or \"none\"", v)),
        }
    }

    /// Errors on any key that was never asked for.
    fn finish(self) -> Result<()> {
        let mut extra: Vec<&String> = self.table.keys().filter(|k| !self.seen.contains(&k.as_str())).collect();
        extra.sort();
        if let Some(key) = extra.first() {
            return Err(ConfigError::UnknownKey {
                key: self.path(key),
                suggestion: nearest(key, self.seen.iter().copied()),
                valid: self.seen.iter().map(|s| s.to_string()).collect(),
            });
        }
        Ok(())
    }
}

fn sub_table<'a>(root: &'a Table, name: &str) -> Result<Option<&'a Table>> {
    match root.get(name) {
        None => Ok(None),
        Some(Value::Table(t)) => Ok(Some(t)),
        Some(v) => Err(ConfigError::TypeMismatch {
            key: name.to_string(),
            expected: "a [section] table",
            found: type_name(v),
        }),
    }
}

fn parse_denoiser(s: &mut Section, experiment: Experiment) -> Result<DenoiserSpec> {
    let default = DenoiserSpec::default_for(experiment);
    let kind_name = s.string("kind", default.kind.name())?;
    let same = kind_name == default.kind.name();
    let kind = match kind_name.as_str() {
        "gaussian" => {
            let (m0, c0) = match (&default.kind, same) {
                (DenoiserKind::Gaussian { mean, covariance }, true) => (mean.clone(), covariance.clone()),
                _ => match default_gaussian() {
                    DenoiserKind::Gaussian { mean, covariance } => (mean, covariance),
                    _ => unreachable!(),
                },
            };
            DenoiserKind::Gaussian {
                mean: s.f64_list("mean", &m0)?,
                covariance: s.f64_list("covariance", &c0)?,
            }
        }
        "gmm" => DenoiserKind::Gmm {
            weights: s.f64_list("weights", &[0.3, 0.7])?,
            means: s.f64_matrix("means", &[vec![-1.0], vec![1.0]])?,
            covariances: s.f64_matrix("covariances", &[vec![0.05], vec![0.05]])?,
        },
        "gmm-random" => DenoiserKind::GmmRandom {
            dim: s.usize("dim", 16)?,
            components: s.usize("components", 3)?,
            prior_seed: s.u64("prior_seed", 0)?,
        },
        "mlp" => DenoiserKind::Mlp {
            path: s.string("path", BUILTIN_GRID_MLP)?,
        },
        "linear" => DenoiserKind::Linear {
            matrix: s.f64_list("matrix", &[1.0, 1.0, 0.0, 1.0])?,
        },
        other => {
            return Err(ConfigError::Invalid {
                key: s.path("kind"),
                message: format!(
                    "unknown denoiser kind `{other}`{}; valid kinds: gaussian, gmm, gmm-random, mlp, linear",
                    suggestion_text(&nearest(other, ["gaussian", "gmm", "gmm-random", "mlp", "linear"]))
                ),
            })
        }
    };
    let shape = s.usize_list("shape", &default_shape(&kind))?;
    if shape.is_empty() || shape.contains(&0) {
        return Err(s.invalid("shape", "needs at least one positive extent (set it for MLP files)"));
    }
    if let Some(d) = kind.dim() {
        if shape.iter().product::<usize>() != d {
            return Err(s.invalid("shape", format!("{shape:?} does not hold {d} values")));
        }
    }
    Ok(DenoiserSpec { kind, shape })
}

fn parse_operator(s: &mut Section, den: &DenoiserSpec) -> Result<OperatorSpec> {
    let default = OperatorSpec::default_for(den);
    let kind_name = s.string("kind", default.kind.name())?;
    let kind = match kind_name.as_str() {
        "identity" => OperatorKind::Identity,
        "mask" => OperatorKind::Mask {
            indices: s.usize_list("indices", &[0])?,
        },
        "inpaint" => OperatorKind::Inpaint {
            indices: s.usize_list("indices", &[0])?,
        },
        "freeform" => OperatorKind::Freeform {
            coverage: s.pair("coverage", fastcs_core::operators::DEFAULT_FREEFORM_COVERAGE)?,
        },
        "downsample" => OperatorKind::Downsample {
            factor: s.usize("factor", 2)?,
        },
        other => {
            return Err(ConfigError::Invalid {
                key: s.path("kind"),
                message: format!(
                    "unknown operator kind `{other}`{}; valid kinds: identity, mask, inpaint, freeform, downsample",
                    suggestion_text(&nearest(
                        other,
                        ["identity", "mask", "inpaint", "freeform", "downsample"]
                    ))
                ),
            })
        }
    };
    let default_noise = if kind_name == default.kind.name() {
        default.noise_std
    } else {
        0.05
    };
    let noise_std = s.f64("noise_std", default_noise)?;
    if !(noise_std >= 0.0) {
        return Err(s.invalid("noise_std", "must be >= 0"));
    }
    let target = Target::parse(&s.string("target", default.target.as_str())?);
    if target == Target::Prior && !den.kind.has_prior() {
        return Err(s.invalid(
            "target",
            format!("denoiser kind `{}` has no prior to sample", den.kind.name()),
        ));
    }
    let values = match s.get("values") {
        None => None,
        Some(Value::String(v)) if v == "none" => None,
        Some(_) => Some(s.f64_list("values", &[])?),
    };
    Ok(OperatorSpec {
        kind,
        noise_std,
        target,
        values,
    })
}

fn parse_direction(s: &mut Section, key: &'static str, default: DirectionKind) -> Result<DirectionKind> {
    let name = s.string(key, default.name())?;
    DirectionKind::parse(&name).ok_or_else(|| {
        s.invalid(
            key,
            format!("unknown direction `{name}`; valid: newton-fd, newton-exact, backprop-exact"),
        )
    })
}

fn parse_sampler(s: &mut Section, experiment: Experiment) -> Result<SamplerSpec> {
    let d = SamplerSpec::default();
    let mut spec = SamplerSpec {
        steps: s.usize("steps", d.steps)?,
        eta: s.f64("eta", d.eta)?,
        ..d.clone()
    };
    if experiment == Experiment::Invert {
        spec.k = s.usize("k", d.k)?;
        spec.lambda = s.f64("lambda", d.lambda)?;
        spec.direction = parse_direction(s, "direction", d.direction)?;
        spec.delta = s.auto_f64("delta", d.delta)?;
        spec.epsilon_scale = s.f64("epsilon_scale", d.epsilon_scale)?;
        spec.restarts = s.usize("restarts", d.restarts)?;
        spec.restart_t = s.auto_usize("restart_t", d.restart_t)?;
        spec.perturb_rho = s.f64("perturb_rho", d.perturb_rho)?;
        let target = s.string("perturb_target", d.perturb_target.name())?;
        spec.perturb_target = PerturbTarget::parse(&target).ok_or_else(|| {
            s.invalid(
                "perturb_target",
                format!("unknown target `{target}`; valid: error, x0, xt"),
            )
        })?;
    }
    Ok(spec)
}

fn parse_layers(s: &mut Section) -> Result<LayersSpec> {
    let d = LayersSpec::default();
    Ok(LayersSpec {
        iterations: s.usize("iterations", d.iterations)?,
        samples_per_layer: s.usize("samples_per_layer", d.samples_per_layer)?,
        t_probe: s.auto_usize("t_probe", d.t_probe)?,
        perturb_sigma: s.f64("perturb_sigma", d.perturb_sigma)?,
        steps: s.usize("steps", d.steps)?,
        k: s.usize("k", d.k)?,
        lambda: s.f64("lambda", d.lambda)?,
        height: s.usize("height", d.height)?,
        width: s.usize("width", d.width)?,
        levels: s.pair("levels", d.levels)?,
        split: s.f64("split", d.split)?,
        prior_std: s.pair("prior_std", d.prior_std)?,
        input: s.string("input", &d.input)?,
    })
}

fn parse_probe(s: &mut Section, default: &ProbeSpec, den: &DenoiserSpec) -> Result<ProbeSpec> {
    let target = Target::parse(&s.string("target", default.target.as_str())?);
    if target == Target::Prior && !den.kind.has_prior() {
        return Err(s.invalid(
            "target",
            format!("denoiser kind `{}` has no prior to sample", den.kind.name()),
        ));
    }
    Ok(ProbeSpec {
        timesteps: s.usize_list("timesteps", &default.timesteps)?,
        pairs: s.usize("pairs", default.pairs)?,
        target,
    })
}

fn parse_compare(s: &mut Section) -> Result<CompareSpec> {
    let d = CompareSpec::default();
    let texture = s.string("texture", &d.texture)?;
    if texture != "thin" && texture != "thick" {
        return Err(s.invalid("texture", format!("`{texture}` is not one of thin, thick")));
    }
    Ok(CompareSpec {
        t: s.usize("t", d.t)?,
        updates: s.usize("updates", d.updates)?,
        lambda: s.f64("lambda", d.lambda)?,
        patch: s.usize("patch", d.patch)?,
        patch_value: s.f64("patch_value", d.patch_value)?,
        blur: s.usize("blur", d.blur)?,
        texture,
        delta: s.auto_f64("delta", d.delta)?,
    })
}

fn parse_train(s: &mut Section) -> Result<TrainSpec> {
    let d = TrainSpec::default();
    Ok(TrainSpec {
        height: s.usize("height", d.height)?,
        width: s.usize("width", d.width)?,
        dataset: s.usize("dataset", d.dataset)?,
        hidden: s.usize_list("hidden", &d.hidden)?,
        steps: s.usize("steps", d.steps)?,
        batch_size: s.usize("batch_size", d.batch_size)?,
        learning_rate: s.f64("learning_rate", d.learning_rate)?,
        held_out_fraction: s.f64("held_out_fraction", d.held_out_fraction)?,
        loss_threshold: s.optional_f64("loss_threshold", d.loss_threshold)?,
        log_every: s.usize("log_every", d.log_every)?,
    })
}

/// Parses a config document. A run manifest is also accepted; its
/// `[config]` table is used. `default_experiment` fills a missing
/// `experiment` key (the CLI passes the subcommand).
pub fn parse_config(text: &str, default_experiment: Option<Experiment>) -> Result<RunConfig> {
    let doc: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
    let root = match (doc.get("manifest"), doc.get("config")) {
        (Some(Value::Table(_)), Some(Value::Table(cfg))) => cfg,
        _ => &doc,
    };
    parse_table(root, default_experiment)
}

fn parse_table(root: &Table, default_experiment: Option<Experiment>) -> Result<RunConfig> {
    let mut top = Section::new("", root);
    let experiment = match top.get("experiment") {
        Some(Value::String(name)) => Experiment::parse(name).ok_or_else(|| ConfigError::Invalid {
            key: "experiment".into(),
            message: format!(
                "unknown experiment `{name}`{}; valid: {}",
                suggestion_text(&nearest(name, Experiment::ALL.iter().map(|e| e.name()))),
                Experiment::ALL.map(|e| e.name()).join(", ")
            ),
        })?,
        Some(v) => return Err(top.mismatch("experiment", "a string", v)),
        None => default_experiment.ok_or_else(|| ConfigError::MissingKey("experiment".into()))?,
    };
    if let Some(want) = default_experiment {
        if want != experiment {
            return Err(ConfigError::Invalid {
                key: "experiment".into(),
                message: format!("config is for `{experiment}` but the command runs `{want}`"),
            });
        }
    }
    let mut cfg = RunConfig::defaults(experiment);
    cfg.seed = top.u64("seed", cfg.seed)?;
    if experiment.uses_runs() {
        cfg.runs = top.usize("runs", cfg.runs)?;
        if cfg.runs == 0 {
            return Err(top.invalid("runs", "must be >= 1"));
        }
    }

    let empty = Table::new();
    for &name in experiment.sections() {
        top.seen.push(name);
    }
    let section = |name: &str| -> Result<&Table> { Ok(sub_table(root, name)?.unwrap_or(&empty)) };
    for &name in experiment.sections() {
        let mut s = Section::new(name, section(name)?);
        match name {
            "schedule" => {
                let d = ScheduleSpec::default();
                cfg.schedule = ScheduleSpec {
                    t_max: s.usize("t_max", d.t_max)?,
                    beta_min: s.f64("beta_min", d.beta_min)?,
                    beta_max: s.f64("beta_max", d.beta_max)?,
                };
            }
            "denoiser" => {
                cfg.denoiser = parse_denoiser(&mut s, experiment)?;
                cfg.operator = OperatorSpec::default_for(&cfg.denoiser);
                cfg.probe.target = if cfg.denoiser.kind.has_prior() {
                    Target::Prior
                } else {
                    Target::Grid
                };
            }
            "operator" => cfg.operator = parse_operator(&mut s, &cfg.denoiser)?,
            "sampler" => cfg.sampler = parse_sampler(&mut s, experiment)?,
            "layers" => cfg.layers = parse_layers(&mut s)?,
            "probe" => cfg.probe = parse_probe(&mut s, &cfg.probe, &cfg.denoiser)?,
            "compare" => cfg.compare = parse_compare(&mut s)?,
            "train" => cfg.train = parse_train(&mut s)?,
            "acceptance" => {
                let ids = s.usize_list(
                    "criteria",
                    &cfg.criteria.iter().map(|&c| c as usize).collect::<Vec<_>>(),
                )?;
                if let Some(bad) = ids.iter().find(|&&i| !(1..=10).contains(&i)) {
                    return Err(s.invalid("criteria", format!("no criterion {bad}; valid ids are 1 to 10")));
                }
                cfg.criteria = ids.into_iter().map(|i| i as u8).collect();
            }
            _ => unreachable!("section list and parser out of sync"),
        }
        s.finish()?;
    }
    top.finish()?;
    Ok(cfg)
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Float(x)).collect())
}

fn ints(v: &[usize]) -> Value {
    Value::Array(v.iter().map(|&x| Value::Integer(x as i64)).collect())
}

fn auto_float(v: Option<f64>) -> Value {
    v.map_or(Value::String("auto".into()), Value::Float)
}

fn auto_int(v: Option<usize>) -> Value {
    v.map_or(Value::String("auto".into()), |x| Value::Integer(x as i64))
}

fn s(v: &str) -> Value {
    Value::String(v.to_string())
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

impl RunConfig {
    /// The resolved config as a table holding every key the experiment
    /// reads.
    pub fn to_table(&self) -> Table {
        let mut root = Table::new();
        root.insert("experiment".into(), s(self.experiment.name()));
        root.insert("seed".into(), Value::Integer(self.seed as i64));
        if self.experiment.uses_runs() {
            root.insert("runs".into(), int(self.runs));
        }
        for &name in self.experiment.sections() {
            let mut t = Table::new();
            match name {
                "schedule" => {
                    t.insert("t_max".into(), int(self.schedule.t_max));
                    t.insert("beta_min".into(), Value::Float(self.schedule.beta_min));
                    t.insert("beta_max".into(), Value::Float(self.schedule.beta_max));
                }
                "denoiser" => {
                    t.insert("kind".into(), s(self.denoiser.kind.name()));
                    match &self.denoiser.kind {
                        DenoiserKind::Gaussian { mean, covariance } => {
                            t.insert("mean".into(), floats(mean));
                            t.insert("covariance".into(), floats(covariance));
                        }
                        DenoiserKind::Gmm {
                            weights,
                            means,
                            covariances,
                        } => {
                            t.insert("weights".into(), floats(weights));
                            t.insert("means".into(), Value::Array(means.iter().map(|m| floats(m)).collect()));
                            t.insert(
                                "covariances".into(),
                                Value::Array(covariances.iter().map(|c| floats(c)).collect()),
                            );
                        }
                        DenoiserKind::GmmRandom {
                            dim,
                            components,
                            prior_seed,
                        } => {
                            t.insert("dim".into(), int(*dim));
                            t.insert("components".into(), int(*components));
                            t.insert("prior_seed".into(), Value::Integer(*prior_seed as i64));
                        }
                        DenoiserKind::Mlp { path } => {
                            t.insert("path".into(), s(path));
                        }
                        DenoiserKind::Linear { matrix } => {
                            t.insert("matrix".into(), floats(matrix));
                        }
                    }
                    t.insert("shape".into(), ints(&self.denoiser.shape));
                }
                "operator" => {
                    let o = &self.operator;
                    t.insert("kind".into(), s(o.kind.name()));
                    match &o.kind {
                        OperatorKind::Identity => {}
                        OperatorKind::Mask { indices } | OperatorKind::Inpaint { indices } => {
                            t.insert("indices".into(), ints(indices));
                        }
                        OperatorKind::Freeform { coverage } => {
                            t.insert("coverage".into(), floats(&[coverage.0, coverage.1]));
                        }
                        OperatorKind::Downsample { factor } => {
                            t.insert("factor".into(), int(*factor));
                        }
                    }
                    t.insert("noise_std".into(), Value::Float(o.noise_std));
                    t.insert("target".into(), s(o.target.as_str()));
                    t.insert("values".into(), o.values.as_ref().map_or(s("none"), |v| floats(v)));
                }
                "sampler" => {
                    let p = &self.sampler;
                    t.insert("steps".into(), int(p.steps));
                    t.insert("eta".into(), Value::Float(p.eta));
                    if self.experiment == Experiment::Invert {
                        t.insert("k".into(), int(p.k));
                        t.insert("lambda".into(), Value::Float(p.lambda));
                        t.insert("direction".into(), s(p.direction.name()));
                        t.insert("delta".into(), auto_float(p.delta));
                        t.insert("epsilon_scale".into(), Value::Float(p.epsilon_scale));
                        t.insert("restarts".into(), int(p.restarts));
                        t.insert("restart_t".into(), auto_int(p.restart_t));
                        t.insert("perturb_rho".into(), Value::Float(p.perturb_rho));
                        t.insert("perturb_target".into(), s(p.perturb_target.name()));
                    }
                }
                "layers" => {
                    let l = &self.layers;
                    t.insert("iterations".into(), int(l.iterations));
                    t.insert("samples_per_layer".into(), int(l.samples_per_layer));
                    t.insert("t_probe".into(), auto_int(l.t_probe));
                    t.insert("perturb_sigma".into(), Value::Float(l.perturb_sigma));
                    t.insert("steps".into(), int(l.steps));
                    t.insert("k".into(), int(l.k));
                    t.insert("lambda".into(), Value::Float(l.lambda));
                    t.insert("height".into(), int(l.height));
                    t.insert("width".into(), int(l.width));
                    t.insert("levels".into(), floats(&[l.levels.0, l.levels.1]));
                    t.insert("split".into(), Value::Float(l.split));
                    t.insert("prior_std".into(), floats(&[l.prior_std.0, l.prior_std.1]));
                    t.insert("input".into(), s(&l.input));
                }
                "probe" => {
                    t.insert("timesteps".into(), ints(&self.probe.timesteps));
                    t.insert("pairs".into(), int(self.probe.pairs));
                    t.insert("target".into(), s(self.probe.target.as_str()));
                }
                "compare" => {
                    let c = &self.compare;
                    t.insert("t".into(), int(c.t));
                    t.insert("updates".into(), int(c.updates));
                    t.insert("lambda".into(), Value::Float(c.lambda));
                    t.insert("patch".into(), int(c.patch));
                    t.insert("patch_value".into(), Value::Float(c.patch_value));
                    t.insert("blur".into(), int(c.blur));
                    t.insert("texture".into(), s(&c.texture));
                    t.insert("delta".into(), auto_float(c.delta));
                }
                "train" => {
                    let r = &self.train;
                    t.insert("height".into(), int(r.height));
                    t.insert("width".into(), int(r.width));
                    t.insert("dataset".into(), int(r.dataset));
                    t.insert("hidden".into(), ints(&r.hidden));
                    t.insert("steps".into(), int(r.steps));
                    t.insert("batch_size".into(), int(r.batch_size));
                    t.insert("learning_rate".into(), Value::Float(r.learning_rate));
                    t.insert("held_out_fraction".into(), Value::Float(r.held_out_fraction));
                    t.insert(
                        "loss_threshold".into(),
                        r.loss_threshold.map_or(s("none"), Value::Float),
                    );
                    t.insert("log_every".into(), int(r.log_every));
                }
                "acceptance" => {
                    t.insert(
                        "criteria".into(),
                        ints(&self.criteria.iter().map(|&c| c as usize).collect::<Vec<_>>()),
                    );
                }
                _ => unreachable!("section list and serializer out of sync"),
            }
            root.insert(name.into(), Value::Table(t));
        }
        root
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_table()).expect("config tables always serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sample_stanza_resolves_defaults() {
        let cfg = parse_config("experiment = \"sample\"\n", None).unwrap();
        assert_eq!(cfg, RunConfig::defaults(Experiment::Sample));
        let echo = cfg.to_toml();
        for key in [
            "t_max = 1000",
            "kind = \"gaussian\"",
            "steps = 50",
            "eta = 1.0",
            "seed = 0",
            "runs = 1",
        ] {
            assert!(echo.contains(key), "{key} missing from\n{echo}");
        }
        assert!(!echo.contains("lambda"), "sample does not read lambda:\n{echo}");
    }

    #[test]
    fn misspelled_key_names_nearest() {
        let err = parse_config("experiment = \"invert\"\n[sampler]\nlamda = 0.5\n", None).unwrap_err();
        match &err {
            ConfigError::UnknownKey { key, suggestion, valid } => {
                assert_eq!(key, "sampler.lamda");
                assert_eq!(suggestion.as_deref(), Some("lambda"));
                assert!(valid.iter().any(|v| v == "restart_t"));
            }
            e => panic!("wrong error {e:?}"),
        }
        assert!(err.to_string().contains("did you mean `lambda`"));
    }

    #[test]
    fn keys_outside_the_experiment_are_rejected() {
        let err = parse_config("experiment = \"sample\"\n[sampler]\nlambda = 0.5\n", None).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { .. }));
        let err = parse_config("experiment = \"sample\"\n[layers]\niterations = 2\n", None).unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { ref key, .. } if key == "layers"));
        let err = parse_config(
            "experiment = \"invert\"\n[denoiser]\nkind = \"gmm\"\npath = \"x\"\n",
            None,
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::UnknownKey { ref key, .. } if key == "denoiser.path"));
    }

    #[test]
    fn missing_and_mistyped() {
        assert_eq!(
            parse_config("seed = 3\n", None).unwrap_err(),
            ConfigError::MissingKey("experiment".into())
        );
        assert_eq!(parse_config("seed = 3\n", Some(Experiment::Sample)).unwrap().seed, 3);
        let err = parse_config("experiment = \"invert\"\n[sampler]\nk = \"three\"\n", None).unwrap_err();
        assert!(matches!(err, ConfigError::TypeMismatch { ref key, .. } if key == "sampler.k"));
        assert!(matches!(
            parse_config("experiment = \"invert\n", None),
            Err(ConfigError::Syntax(_))
        ));
        assert!(parse_config("experiment = \"sample\"\n", Some(Experiment::Invert)).is_err());
        assert!(
            parse_config("experiment = \"invert\"\n[operator]\nkind = \"downsampel\"\n", None)
                .unwrap_err()
                .to_string()
                .contains("downsample")
        );
    }

    const FULL_INVERT: &str = r#"
experiment = "invert"
seed = 7
runs = 4

[schedule]
t_max = 1000
beta_min = 0.0001
beta_max = 0.02

[denoiser]
kind = "mlp"
path = "builtin:grid16"
shape = [16, 16]

[operator]
kind = "downsample"
factor = 2
noise_std = 0.05
target = "grid"

[sampler]
steps = 40
k = 5
lambda = 0.8
direction = "newton-fd"
delta = 0.001
epsilon_scale = 1.0
restarts = 1
restart_t = 500
perturb_rho = 0.05
perturb_target = "error"
eta = 1.0
"#;

    #[test]
    fn full_invert_round_trips() {
        let cfg = parse_config(FULL_INVERT, None).unwrap();
        assert_eq!(cfg.sampler.k, 5);
        assert_eq!(cfg.sampler.delta, Some(1e-3));
        assert_eq!(cfg.operator.kind, OperatorKind::Downsample { factor: 2 });
        let again = parse_config(&cfg.to_toml(), None).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.to_toml(), cfg.to_toml());
    }

    #[test]
    fn every_experiment_round_trips_its_defaults() {
        for e in Experiment::ALL {
            let cfg = RunConfig::defaults(e);
            let text = cfg.to_toml();
            assert_eq!(parse_config(&text, None).unwrap(), cfg, "{e}:\n{text}");
        }
    }

    #[test]
    fn auto_values_and_manifest_wrapping() {
        let cfg = parse_config(
            "experiment = \"invert\"\n[sampler]\ndelta = \"auto\"\nrestart_t = \"auto\"\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.sampler.delta, None);
        assert_eq!(cfg.sampler.restart_t, None);
        let wrapped = format!("[manifest]\nseed = 0\n\n[config]\n{}", "experiment = \"layers\"\n");
        assert_eq!(parse_config(&wrapped, None).unwrap().experiment, Experiment::Layers);
    }

    #[test]
    fn shape_must_hold_the_signal() {
        let err = parse_config("experiment = \"sample\"\n[denoiser]\nshape = [3]\n", None).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { ref key, .. } if key == "denoiser.shape"));
        let cfg = parse_config(
            "experiment = \"sample\"\n[denoiser]\nkind = \"gmm-random\"\ndim = 12\nshape = [3, 4]\n",
            None,
        )
        .unwrap();
        assert_eq!(cfg.denoiser.shape, vec![3, 4]);
    }

    #[test]
    fn nearest_key() {
        assert_eq!(nearest("lamda", ["steps", "lambda", "k"]).as_deref(), Some("lambda"));
        assert_eq!(nearest("zzzz", ["steps", "lambda"]), None);
    }
}
