//! Run file (TOML) plus command-line overrides.
//!
//! Every key is optional. Relative paths are resolved against the directory
//! holding the run file.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//! timing = true
//! modes = ["baseline", "knn_only", "icl_only", "m2r"]
//!
//! [synthetic]
//! n_train = 2000
//! n_test = 500
//!
//! [model]
//! confusion_mass = 0.15
//! del_rate = 0.03
//! ins_rate = 0.03
//!
//! [decode]
//! mode = "m2r"
//! lambda = 0.3
//! tau = 1.0
//! k = 16
//! n_max = 10
//! budget_s = 30.0
//!
//! [stores]
//! sentence = "sentence.m2rd"
//! token = "token.m2rd"
//!
//! [scoring]
//! unit = "characters"
//! tables = ["t2s.tsv"]
//!
//! [sweep]
//! axis = "n_max"
//! values = [0, 2, 4, 6, 8, 10]
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;

use m2r_core::knn::KnnParams;
use m2r_core::synth::{benchmark_model_config, CorpusSpec};
use m2r_core::{DecodeConfig, FailurePolicy, Mode, ToyModelConfig};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Record wall time. When off, timing columns hold `NA` and outputs are
    /// byte-identical across runs.
    pub timing: bool,
    pub parallel: bool,
    pub on_error: ErrorPolicy,
    /// Modes evaluated by `eval`.
    pub modes: Vec<Mode>,
    pub synthetic: SyntheticSection,
    pub model: ModelSection,
    pub decode: DecodeSection,
    pub stores: StoresSection,
    pub scoring: ScoringSection,
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("m2r-out"),
            timing: true,
            parallel: false,
            on_error: ErrorPolicy::Abort,
            modes: Mode::ALL.to_vec(),
            synthetic: SyntheticSection::default(),
            model: ModelSection::default(),
            decode: DecodeSection::default(),
            stores: StoresSection::default(),
            scoring: ScoringSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    Abort,
    Skip,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSection {
    pub n_train: usize,
    pub n_test: usize,
    pub n_topics: usize,
    pub topic_size: usize,
    pub successors: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub acoustic_sigma: f64,
}

impl Default for SyntheticSection {
    fn default() -> Self {
        let d = CorpusSpec::default();
        Self {
            n_train: d.n_train,
            n_test: d.n_test,
            n_topics: d.n_topics,
            topic_size: d.topic_size,
            successors: d.successors,
            min_len: d.min_len,
            max_len: d.max_len,
            acoustic_sigma: d.acoustic_sigma,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub confusion_mass: f64,
    pub del_rate: f64,
    pub ins_rate: f64,
    pub noise_sigma: f64,
    pub prefix_bias_beta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = benchmark_model_config(0);
        Self {
            confusion_mass: 0.15,
            del_rate: d.del_rate,
            ins_rate: d.ins_rate,
            noise_sigma: d.noise_sigma,
            prefix_bias_beta: d.prefix_bias_beta,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    pub mode: Mode,
    pub lambda: f64,
    pub tau: f64,
    pub k: usize,
    pub k_sentence: usize,
    pub n_max: usize,
    pub budget_s: f64,
    /// Defaults to twice the longest test transcript.
    pub max_decode_len: Option<usize>,
    pub exclude_self: bool,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = DecodeConfig::default();
        Self {
            mode: d.mode,
            lambda: d.knn.lambda,
            tau: d.knn.tau,
            k: d.knn.k,
            k_sentence: d.k_sentence,
            n_max: d.n_max,
            budget_s: d.audio_budget_s,
            max_decode_len: None,
            exclude_self: d.exclude_self,
        }
    }
}

/// Prebuilt datastore files; anything left out is built from the synthetic
/// training split.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoresSection {
    pub sentence: Option<PathBuf>,
    pub token: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringUnit {
    #[default]
    Tokens,
    Characters,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringSection {
    pub unit: ScoringUnit,
    /// One piece per line; defaults to the toy vocabulary's rendering.
    pub vocab: Option<PathBuf>,
    /// Tab-separated mapping tables applied in order.
    pub tables: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    NMax,
    Lambda,
    Tau,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::NMax => "n_max",
            Axis::Lambda => "lambda",
            Axis::Tau => "tau",
        })
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n_max" | "n-max" => Ok(Axis::NMax),
            "lambda" => Ok(Axis::Lambda),
            "tau" => Ok(Axis::Tau),
            other => Err(format!("unknown sweep axis `{other}` (expected n_max, lambda or tau)")),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: Option<Axis>,
    pub values: Vec<f64>,
}

/// Values given on the command line; each replaces its run-file key.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub lambda: Option<f64>,
    pub tau: Option<f64>,
    pub k: Option<usize>,
    pub n_max: Option<usize>,
    pub budget_s: Option<f64>,
    pub output_dir: Option<PathBuf>,
    pub no_timing: bool,
    pub parallel: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        self.stores.sentence.iter_mut().for_each(fix);
        self.stores.token.iter_mut().for_each(fix);
        self.scoring.vocab.iter_mut().for_each(fix);
        self.scoring.tables.iter_mut().for_each(fix);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.mode {
            self.decode.mode = v;
        }
        if let Some(v) = o.lambda {
            self.decode.lambda = v;
        }
        if let Some(v) = o.tau {
            self.decode.tau = v;
        }
        if let Some(v) = o.k {
            self.decode.k = v;
        }
        if let Some(v) = o.n_max {
            self.decode.n_max = v;
        }
        if let Some(v) = o.budget_s {
            self.decode.budget_s = v;
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if o.no_timing {
            self.timing = false;
        }
        if o.parallel {
            self.parallel = true;
        }
    }

    /// Checks everything that can be checked without running anything.
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.modes.is_empty(), "`modes` must name at least one mode");
        for path in [&self.stores.sentence, &self.stores.token, &self.scoring.vocab]
            .into_iter()
            .flatten()
            .chain(&self.scoring.tables)
        {
            ensure!(path.exists(), "referenced path {} does not exist", path.display());
        }
        self.corpus_spec().validate(64).context("invalid [synthetic] section")?;
        m2r_core::ToyModel::new(self.model_config()).context("invalid [model] section")?;
        self.decode_config(self.decode.mode).validate()?;
        if let Some(axis) = self.sweep.axis {
            check_sweep_values(axis, &self.sweep.values)?;
        }
        Ok(())
    }

    pub fn corpus_spec(&self) -> CorpusSpec {
        let s = &self.synthetic;
        CorpusSpec {
            seed: self.seed,
            n_train: s.n_train,
            n_test: s.n_test,
            n_topics: s.n_topics,
            topic_size: s.topic_size,
            successors: s.successors,
            min_len: s.min_len,
            max_len: s.max_len,
            acoustic_sigma: s.acoustic_sigma,
        }
    }

    pub fn model_config(&self) -> ToyModelConfig {
        let m = &self.model;
        ToyModelConfig::new(64, 32, self.seed)
            .with_confusable_pairs(m.confusion_mass)
            .with_rates(m.del_rate, m.ins_rate)
            .with_noise(m.noise_sigma)
            .with_prefix_bias(m.prefix_bias_beta)
    }

    /// Decode settings for `mode`; `max_decode_len` is filled in later from
    /// the test set when not given.
    pub fn decode_config(&self, mode: Mode) -> DecodeConfig {
        let d = &self.decode;
        DecodeConfig {
            mode,
            knn: KnnParams {
                k: d.k,
                tau: d.tau,
                lambda: d.lambda,
            },
            n_max: d.n_max,
            audio_budget_s: d.budget_s,
            k_sentence: d.k_sentence,
            max_decode_len: d.max_decode_len.unwrap_or(DecodeConfig::default().max_decode_len),
            exclude_self: d.exclude_self,
            on_error: match self.on_error {
                ErrorPolicy::Abort => FailurePolicy::Abort,
                ErrorPolicy::Skip => FailurePolicy::Skip,
            },
            parallel: self.parallel,
        }
    }
}

/// Rejects sweep values that are not valid for `axis`.
pub fn check_sweep_values(axis: Axis, values: &[f64]) -> Result<()> {
    ensure!(!values.is_empty(), "sweep over {axis} needs at least one value");
    for &v in values {
        let ok = match axis {
            Axis::NMax => v >= 0.0 && v.fract() == 0.0 && v <= 1e6,
            Axis::Lambda => (0.0..=1.0).contains(&v),
            Axis::Tau => v > 0.0 && v.is_finite(),
        };
        if !ok {
            bail!("invalid {axis} value {v}");
        }
    }
    Ok(())
}
