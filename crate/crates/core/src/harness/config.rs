//! Flat `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid configuration; [`ExperimentConfig::to_text`] writes
//! every key back in a fixed order and parses to an identical config.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::assignment::EnsembleMethod;
use crate::episodes::EpisodeSpec;
use crate::error::{Error, Result};
use crate::maml::TrainMode;
use crate::proto::PrototypeMemory;
use crate::semantic::{MixLabelMode, SemanticConfig};
use crate::synth::SynthSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Maml,
    Protonet,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Maml => "maml",
            Self::Protonet => "protonet",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maml" => Ok(Self::Maml),
            "protonet" => Ok(Self::Protonet),
            other => Err(Error::Config(format!("unknown backend {other:?} (expected maml or protonet)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestDomain {
    In,
    Shifted,
}

impl fmt::Display for TestDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::In => "in",
            Self::Shifted => "shifted",
        })
    }
}

impl FromStr for TestDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in" => Ok(Self::In),
            "shifted" => Ok(Self::Shifted),
            other => Err(Error::Config(format!("unknown test domain {other:?} (expected in or shifted)"))),
        }
    }
}

/// Where the mother dataset comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synth,
    File(PathBuf),
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Synth => f.write_str("synth"),
            Self::File(p) => write!(f, "{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub backend: Backend,
    pub mode: TrainMode,
    /// Any-way head width `O`. Fixed-way heads are sized by `fixed_n` instead.
    pub width: usize,
    pub cardinality_pool: Vec<usize>,
    pub fixed_n: Option<usize>,
    pub shots: usize,
    pub queries: usize,
    pub hidden: Vec<usize>,
    pub final_activation: bool,

    pub inner_lr: f64,
    pub inner_steps: usize,
    pub outer_lr: f64,
    pub episodes: usize,
    pub meta_batch: usize,

    pub semantic: bool,
    /// `None` picks the backend's shot-dependent default.
    pub lambda: Option<f64>,
    pub mixup: bool,
    pub mix_labels: MixLabelMode,
    pub beta_alpha: f64,
    pub semantic_encoder_gradient: bool,
    pub ema_rate: Option<f64>,

    pub dataset: DataSource,
    pub data_classes: usize,
    pub train_classes: usize,
    pub val_classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub mean_scale: f64,
    pub noise_sigma: f64,
    pub signal_dims: Option<usize>,
    pub nuisance_sigma: f64,
    pub data_seed: u64,
    pub test_domain: TestDomain,
    pub shift_seed: u64,
    pub shift_sigma: f64,

    pub eval_ns: Vec<usize>,
    pub eval_episodes: usize,
    pub j_repeats: Vec<usize>,
    pub ensemble: Vec<EnsembleMethod>,
    pub eval_interval: usize,
    pub val_episodes: usize,
    pub stall_window: usize,
    pub stall_eps: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Maml,
            mode: TrainMode::AnyWay,
            width: 10,
            cardinality_pool: vec![3, 5, 7, 9],
            fixed_n: None,
            shots: 5,
            queries: 15,
            hidden: vec![32, 32],
            final_activation: true,
            inner_lr: 0.5,
            inner_steps: 5,
            outer_lr: 0.001,
            episodes: 2000,
            meta_batch: 4,
            semantic: false,
            lambda: None,
            mixup: false,
            mix_labels: MixLabelMode::Shared,
            beta_alpha: 0.5,
            semantic_encoder_gradient: true,
            ema_rate: None,
            dataset: DataSource::Synth,
            data_classes: 40,
            train_classes: 20,
            val_classes: 10,
            dim: 16,
            per_class: 40,
            mean_scale: 3.0,
            noise_sigma: 0.5,
            signal_dims: None,
            nuisance_sigma: 3.0,
            data_seed: 0,
            test_domain: TestDomain::In,
            shift_seed: 1,
            shift_sigma: 1.0,
            eval_ns: vec![3, 5, 7, 9],
            eval_episodes: 600,
            j_repeats: vec![1],
            ensemble: vec![EnsembleMethod::Original],
            eval_interval: 100,
            val_episodes: 100,
            stall_window: 5,
            stall_eps: 0.02,
            seed: 0,
        }
    }
}

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), T::to_string)
}

fn parse_value<T: FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("key `{key}`: invalid {what} {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str, what: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(key, s, what))
        .collect()
}

fn parse_opt<T: FromStr>(key: &str, value: &str, none: &str, what: &str) -> Result<Option<T>> {
    if value == none {
        Ok(None)
    } else {
        parse_value(key, value, what).map(Some)
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("key `{key}`: invalid boolean {value:?}"))),
    }
}

fn parse_methods(key: &str, value: &str) -> Result<Vec<EnsembleMethod>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: Error| Error::Config(format!("key `{key}`: {e}"))))
        .collect()
}

fn named<T: FromStr<Err = Error>>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e: Error| Error::Config(format!("key `{key}`: {e}")))
}

impl ExperimentConfig {
    /// Assigns one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "backend" => self.backend = named(key, v)?,
            "mode" => self.mode = named(key, v)?,
            "width" => self.width = parse_value(key, v, "integer")?,
            "cardinality_pool" => self.cardinality_pool = parse_list(key, v, "integer")?,
            "fixed_n" => self.fixed_n = parse_opt(key, v, "none", "integer")?,
            "shots" => self.shots = parse_value(key, v, "integer")?,
            "queries" => self.queries = parse_value(key, v, "integer")?,
            "hidden" => self.hidden = parse_list(key, v, "integer")?,
            "final_activation" => self.final_activation = parse_bool(key, v)?,
            "inner_lr" => self.inner_lr = parse_value(key, v, "number")?,
            "inner_steps" => self.inner_steps = parse_value(key, v, "integer")?,
            "outer_lr" => self.outer_lr = parse_value(key, v, "number")?,
            "episodes" => self.episodes = parse_value(key, v, "integer")?,
            "meta_batch" => self.meta_batch = parse_value(key, v, "integer")?,
            "semantic" => self.semantic = parse_bool(key, v)?,
            "lambda" => self.lambda = parse_opt(key, v, "auto", "number")?,
            "mixup" => self.mixup = parse_bool(key, v)?,
            "mix_labels" => self.mix_labels = named(key, v)?,
            "beta_alpha" => self.beta_alpha = parse_value(key, v, "number")?,
            "semantic_encoder_gradient" => self.semantic_encoder_gradient = parse_bool(key, v)?,
            "ema_rate" => self.ema_rate = parse_opt(key, v, "auto", "number")?,
            "dataset" => {
                self.dataset = match v {
                    "synth" => DataSource::Synth,
                    "" => return Err(Error::Config("key `dataset`: empty value".into())),
                    path => DataSource::File(PathBuf::from(path)),
                }
            }
            "data_classes" => self.data_classes = parse_value(key, v, "integer")?,
            "train_classes" => self.train_classes = parse_value(key, v, "integer")?,
            "val_classes" => self.val_classes = parse_value(key, v, "integer")?,
            "dim" => self.dim = parse_value(key, v, "integer")?,
            "per_class" => self.per_class = parse_value(key, v, "integer")?,
            "mean_scale" => self.mean_scale = parse_value(key, v, "number")?,
            "noise_sigma" => self.noise_sigma = parse_value(key, v, "number")?,
            "signal_dims" => self.signal_dims = parse_opt(key, v, "all", "integer")?,
            "nuisance_sigma" => self.nuisance_sigma = parse_value(key, v, "number")?,
            "data_seed" => self.data_seed = parse_value(key, v, "integer")?,
            "test_domain" => self.test_domain = named(key, v)?,
            "shift_seed" => self.shift_seed = parse_value(key, v, "integer")?,
            "shift_sigma" => self.shift_sigma = parse_value(key, v, "number")?,
            "eval_ns" => self.eval_ns = parse_list(key, v, "integer")?,
            "eval_episodes" => self.eval_episodes = parse_value(key, v, "integer")?,
            "j_repeats" => self.j_repeats = parse_list(key, v, "integer")?,
            "ensemble" => self.ensemble = parse_methods(key, v)?,
            "eval_interval" => self.eval_interval = parse_value(key, v, "integer")?,
            "val_episodes" => self.val_episodes = parse_value(key, v, "integer")?,
            "stall_window" => self.stall_window = parse_value(key, v, "integer")?,
            "stall_eps" => self.stall_eps = parse_value(key, v, "number")?,
            "seed" => self.seed = parse_value(key, v, "integer")?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Parses a config file body on top of the defaults. Does not validate.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            cfg.set(k, v).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("backend", self.backend.to_string()),
            ("mode", self.mode.to_string()),
            ("width", self.width.to_string()),
            ("cardinality_pool", list(&self.cardinality_pool)),
            ("fixed_n", opt(&self.fixed_n, "none")),
            ("shots", self.shots.to_string()),
            ("queries", self.queries.to_string()),
            ("hidden", list(&self.hidden)),
            ("final_activation", self.final_activation.to_string()),
            ("inner_lr", self.inner_lr.to_string()),
            ("inner_steps", self.inner_steps.to_string()),
            ("outer_lr", self.outer_lr.to_string()),
            ("episodes", self.episodes.to_string()),
            ("meta_batch", self.meta_batch.to_string()),
            ("semantic", self.semantic.to_string()),
            ("lambda", opt(&self.lambda, "auto")),
            ("mixup", self.mixup.to_string()),
            ("mix_labels", self.mix_labels.to_string()),
            ("beta_alpha", self.beta_alpha.to_string()),
            ("semantic_encoder_gradient", self.semantic_encoder_gradient.to_string()),
            ("ema_rate", opt(&self.ema_rate, "auto")),
            ("dataset", self.dataset.to_string()),
            ("data_classes", self.data_classes.to_string()),
            ("train_classes", self.train_classes.to_string()),
            ("val_classes", self.val_classes.to_string()),
            ("dim", self.dim.to_string()),
            ("per_class", self.per_class.to_string()),
            ("mean_scale", self.mean_scale.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("signal_dims", opt(&self.signal_dims, "all")),
            ("nuisance_sigma", self.nuisance_sigma.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("test_domain", self.test_domain.to_string()),
            ("shift_seed", self.shift_seed.to_string()),
            ("shift_sigma", self.shift_sigma.to_string()),
            ("eval_ns", list(&self.eval_ns)),
            ("eval_episodes", self.eval_episodes.to_string()),
            ("j_repeats", list(&self.j_repeats)),
            ("ensemble", list(&self.ensemble)),
            ("eval_interval", self.eval_interval.to_string()),
            ("val_episodes", self.val_episodes.to_string()),
            ("stall_window", self.stall_window.to_string()),
            ("stall_eps", self.stall_eps.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Width of the output head the model is built with.
    pub fn head_width(&self) -> usize {
        match self.mode {
            TrainMode::AnyWay => self.width,
            TrainMode::Fixed => {
                let n = self.fixed_n.unwrap_or(0);
                if self.semantic && self.mixup {
                    n + 1
                } else {
                    n
                }
            }
        }
    }

    pub fn episode_spec(&self) -> EpisodeSpec {
        match (self.mode, self.fixed_n) {
            (TrainMode::Fixed, Some(n)) => EpisodeSpec::fixed(n, self.shots, self.queries),
            _ => EpisodeSpec {
                cardinality_pool: self.cardinality_pool.clone(),
                shots: self.shots,
                queries: self.queries,
                fixed_n: None,
            },
        }
    }

    pub fn lambda_value(&self) -> f64 {
        self.lambda.unwrap_or_else(|| match self.backend {
            Backend::Maml => SemanticConfig::maml_lambda(self.shots),
            Backend::Protonet => SemanticConfig::proto_lambda(self.shots),
        })
    }

    pub fn ema_rate_value(&self) -> f64 {
        self.ema_rate.unwrap_or_else(|| PrototypeMemory::default_rate(self.shots))
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            classes: self.data_classes,
            dim: self.dim,
            per_class: self.per_class,
            mean_scale: self.mean_scale,
            noise_sigma: self.noise_sigma,
            seed: self.data_seed,
            signal_dims: self.signal_dims,
            nuisance_sigma: self.nuisance_sigma,
        }
    }

    /// Checks cross-field invariants; messages name the offending key.
    /// Checks that each split of a `classes`-class dataset can host its largest task.
    pub fn check_split_sizes(&self, classes: usize) -> Result<()> {
        let largest = |ns: &[usize]| ns.iter().max().copied().unwrap_or(0);
        let train_max = largest(&self.episode_spec().cardinalities());
        let test = classes.saturating_sub(self.train_classes + self.val_classes);
        for (key, have, need) in [
            ("train_classes", self.train_classes, train_max),
            ("val_classes", self.val_classes, train_max),
            ("eval_ns", test, largest(&self.eval_ns)),
        ] {
            if have < need {
                return Err(Error::Config(format!(
                    "key `{key}`: split has {have} classes but tasks need {need}"
                )));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| Err(Error::Config(format!("key `{key}`: {msg}")));
        for (key, v) in [
            ("inner_lr", self.inner_lr),
            ("outer_lr", self.outer_lr),
            ("beta_alpha", self.beta_alpha),
            ("stall_eps", self.stall_eps),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(key, format!("must be a finite value >= 0, got {v}"));
            }
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) || !l.is_finite() {
                return bad("lambda", format!("must be >= 0, got {l}"));
            }
        }
        if let Some(r) = self.ema_rate {
            if !(r > 0.0 && r <= 1.0) {
                return bad("ema_rate", format!("must lie in (0, 1], got {r}"));
            }
        }
        if self.shots == 0 || self.queries == 0 {
            return bad("shots", "shots and queries must be >= 1".into());
        }
        if self.meta_batch == 0 {
            return bad("meta_batch", "must be >= 1".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden", "needs at least one positive layer width".into());
        }
        if self.eval_ns.is_empty() || self.eval_ns.contains(&0) {
            return bad("eval_ns", "needs at least one positive cardinality".into());
        }
        if self.j_repeats.is_empty() || self.j_repeats.contains(&0) {
            return bad("j_repeats", "needs at least one positive repeat count".into());
        }
        if self.ensemble.is_empty() {
            return bad("ensemble", "needs at least one method".into());
        }
        if self.mixup && !self.semantic {
            return bad("mixup", "requires semantic = true".into());
        }
        if self.backend == Backend::Protonet && self.mixup {
            return bad("mixup", "is only defined for the maml backend".into());
        }
        match self.mode {
            TrainMode::Fixed => {
                let Some(n) = self.fixed_n else {
                    return bad("fixed_n", "required when mode = fixed".into());
                };
                if n < 2 {
                    return bad("fixed_n", format!("must be >= 2, got {n}"));
                }
                if self.mixup && self.mix_labels == MixLabelMode::PerPair {
                    return bad("mix_labels", "per-pair labels need mode = anyway".into());
                }
            }
            TrainMode::AnyWay => {
                if self.cardinality_pool.is_empty() || self.cardinality_pool.iter().any(|&n| n < 2) {
                    return bad("cardinality_pool", "needs cardinalities >= 2".into());
                }
                if self.backend == Backend::Maml {
                    let pool_max = self.cardinality_pool.iter().max().copied().unwrap_or(0);
                    let extra = usize::from(self.semantic && self.mixup);
                    if pool_max + extra > self.width {
                        return bad(
                            "width",
                            format!("{} is smaller than the largest training cardinality {}", self.width, pool_max + extra),
                        );
                    }
                }
            }
        }
        if self.backend == Backend::Maml {
            let w = self.head_width();
            if let Some(&n) = self.eval_ns.iter().find(|&&n| n > w) {
                return bad("eval_ns", format!("N = {n} exceeds the head width {w}"));
            }
        }
        if let DataSource::Synth = self.dataset {
            self.synth_spec().validate().map_err(|e| Error::Config(format!("synthetic data: {e}")))?;
            self.synth_spec()
                .check_episode_size(self.shots, self.queries)
                .map_err(|e| Error::Config(format!("key `per_class`: {e}")))?;
            if self.train_classes + self.val_classes >= self.data_classes {
                return bad(
                    "train_classes",
                    format!(
                        "train ({}) + validation ({}) classes leave no test classes out of {}",
                        self.train_classes, self.val_classes, self.data_classes
                    ),
                );
            }
        }
        if let DataSource::Synth = self.dataset {
            self.check_split_sizes(self.data_classes)?;
        }
        if self.test_domain == TestDomain::Shifted && !(self.shift_sigma > 0.0) {
            return bad("shift_sigma", format!("must be > 0, got {}", self.shift_sigma));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_default() {
        assert_eq!(ExperimentConfig::parse("# nothing\n\n").unwrap(), ExperimentConfig::default());
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_overrides(&[
            "mode=fixed",
            "fixed_n=5",
            "lambda=0.25",
            "signal_dims=4",
            "ensemble=original,max",
            "j_repeats=1,6",
            "dataset=/tmp/x.awm",
            "outer_lr=0.05",
        ])
        .unwrap();
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_whitespace() {
        let cfg = ExperimentConfig::parse("shots = 1  # one-shot\n  width=30\n").unwrap();
        assert_eq!(cfg.shots, 1);
        assert_eq!(cfg.width, 30);
    }

    #[test]
    fn errors_name_line_and_key() {
        let e = ExperimentConfig::parse("seed = 1\nshots = many\n").unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("shots"), "{e}");
        let e = ExperimentConfig::parse("colour = blue\n").unwrap_err().to_string();
        assert!(e.contains("colour"), "{e}");
        assert!(ExperimentConfig::parse("just words\n").is_err());
    }

    #[test]
    fn validation_rules() {
        let check = |o: &[&str], key: &str| {
            let mut c = ExperimentConfig::default();
            c.apply_overrides(o).unwrap();
            let e = c.validate().unwrap_err().to_string();
            assert!(e.contains(key), "{o:?}: {e}");
        };
        check(&["mode=fixed"], "fixed_n");
        check(&["width=8"], "width");
        check(&["eval_ns=3,12"], "eval_ns");
        check(&["outer_lr=-1"], "outer_lr");
        check(&["mixup=true"], "mixup");
        check(&["ema_rate=0"], "ema_rate");
        check(&["train_classes=30"], "train_classes");
        check(&["mode=fixed", "fixed_n=5", "eval_ns=3,10"], "eval_ns");
    }

    #[test]
    fn fixed_heads_follow_fixed_n() {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(&["mode=fixed", "fixed_n=5", "eval_ns=3,5"]).unwrap();
        c.validate().unwrap();
        assert_eq!(c.head_width(), 5);
        assert_eq!(c.episode_spec().cardinality_pool, vec![5]);
        c.apply_overrides(&["semantic=true", "mixup=true"]).unwrap();
        assert_eq!(c.head_width(), 6);
    }

    #[test]
    fn shot_dependent_defaults() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.lambda_value(), 0.5);
        c.shots = 1;
        assert_eq!(c.lambda_value(), 0.1);
        c.backend = Backend::Protonet;
        assert_eq!(c.lambda_value(), 0.01);
        assert_eq!(c.ema_rate_value(), 0.01);
    }
}
