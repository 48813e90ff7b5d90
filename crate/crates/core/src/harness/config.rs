//! Flat `key = value` configuration. Every key has a matching CLI flag; the
//! CLI feeds its flags through the same parser after the file, so flags win.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::features;
use super::pipeline::{Hyperparams, MethodName, MethodPipeline};
use super::run::{RunConfig, Sweep, DEFAULT_EPISODES};
use crate::episodes::{self, EpisodeSpec, FeatureStore, Mode, MogSpec, NoiseParams};
use crate::error::{Error, Result};

pub const DEFAULT_SEED: u64 = 0;

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
        out.push((k.trim().replace('-', "_"), v.trim().to_string()));
    }
    Ok(out)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_mode(v: &str) -> Result<Mode> {
    match v {
        "transductive" => Ok(Mode::Transductive),
        "semi" => Ok(Mode::Semi),
        other => Err(Error::Config(format!("mode: expected transductive|semi, got '{other}'"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// Fully resolved settings for one CLI invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub spec: EpisodeSpec,
    pub methods: Option<Vec<MethodName>>,
    pub hyper: Hyperparams,
    pub episodes: usize,
    pub seed: u64,
    pub workers: usize,
    pub features: Option<PathBuf>,
    pub synthetic: Option<PathBuf>,
    pub sweep: Option<Sweep>,
    pub sweep_values: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
    pub export_features: Option<PathBuf>,
    pub mi_bins: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            spec: EpisodeSpec::default(),
            methods: None,
            hyper: Hyperparams::default(),
            episodes: DEFAULT_EPISODES,
            seed: DEFAULT_SEED,
            workers: 1,
            features: None,
            synthetic: None,
            sweep: None,
            sweep_values: None,
            out: None,
            export_features: None,
            mi_bins: None,
        }
    }
}

impl Settings {
    pub fn apply(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "mode" => self.spec.mode = parse_mode(v)?,
            "method" | "methods" => self.methods = Some(parse_list(key, v)?),
            "ways" => self.spec.n_way = parse(key, v)?,
            "shots" => self.spec.k_shot = parse(key, v)?,
            "queries" => self.spec.queries_per_class = parse(key, v)?,
            "unlabeled" => self.spec.unlabeled_per_class = parse(key, v)?,
            "distractors" => self.spec.distractor_classes = parse(key, v)?,
            "unbalance" => self.spec.unbalance = parse(key, v)?,
            "episodes" => self.episodes = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "dim" => {
                let d: usize = parse(key, v)?;
                self.hyper.pca_dim = d;
                self.hyper.ica_dim = d;
            }
            "pca_dim" => self.hyper.pca_dim = parse(key, v)?,
            "ica_dim" => self.hyper.ica_dim = parse(key, v)?,
            "tau" => self.hyper.temperature = parse(key, v)?,
            "msp_threshold" => self.hyper.msp_threshold = parse(key, v)?,
            "msp_iterations" => self.hyper.msp_iterations = parse(key, v)?,
            "clusters" => self.hyper.clusters = parse(key, v)?,
            "normalize" => {
                self.hyper.normalize_before_averaging = match v {
                    "before" => true,
                    "after" => false,
                    other => return Err(Error::Config(format!("normalize: expected before|after, got '{other}'"))),
                }
            }
            "features" => self.features = Some(PathBuf::from(v)),
            "synthetic" => self.synthetic = Some(PathBuf::from(v)),
            "sweep" => self.sweep = Some(v.parse()?),
            "sweep_values" => self.sweep_values = Some(parse_list(key, v)?),
            "out" => self.out = Some(PathBuf::from(v)),
            "export_features" => self.export_features = Some(PathBuf::from(v)),
            "mi_bins" => self.mi_bins = Some(parse(key, v)?),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn apply_all<I, K, V>(&mut self, pairs: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in pairs {
            self.apply(k.as_ref(), v.as_ref())?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut s = Self::default();
        s.apply_all(parse_kv(&fs::read_to_string(path)?)?)?;
        Ok(s)
    }

    /// Methods to run: the explicit list, or every method valid in this mode.
    pub fn method_names(&self) -> Vec<MethodName> {
        self.methods.clone().unwrap_or_else(|| {
            MethodName::ALL
                .into_iter()
                .filter(|&m| {
                    MethodPipeline::new(m, self.hyper.clone())
                        .validate(self.spec.mode, self.spec.unlabeled_per_class)
                        .is_ok()
                })
                .collect()
        })
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            spec: self.spec.clone(),
            methods: self
                .method_names()
                .into_iter()
                .map(|m| MethodPipeline::new(m, self.hyper.clone()))
                .collect(),
            episodes: self.episodes,
            seed: self.seed,
            workers: self.workers,
        }
    }

    /// Feature file if given, else a synthetic store, else the reference store.
    pub fn load_store(&self) -> Result<FeatureStore> {
        if let Some(p) = &self.features {
            return features::load_features(p);
        }
        if let Some(p) = &self.synthetic {
            let syn = SyntheticConfig::from_file(p)?;
            return syn.generate();
        }
        Ok(episodes::reference_store())
    }
}

/// Parameters for a generated store, read from its own `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub spec: MogSpec,
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            spec: MogSpec::reference(),
            classes: episodes::REFERENCE_CLASSES,
            per_class: episodes::REFERENCE_PER_CLASS,
            seed: episodes::REFERENCE_SEED,
        }
    }
}

impl SyntheticConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut noise = NoiseParams { mean: 0.0, std: 1.0 };
        for (k, v) in parse_kv(text)? {
            match k.as_str() {
                "dim" => cfg.spec.dim = parse(&k, &v)?,
                "signal_dims" => cfg.spec.signal_dims = parse(&k, &v)?,
                "noise_mean" => noise.mean = parse(&k, &v)?,
                "noise_std" => noise.std = parse(&k, &v)?,
                "between_std" => cfg.spec.between_std = parse(&k, &v)?,
                "signal_std" => cfg.spec.signal_std = parse(&k, &v)?,
                "signal_prior" => cfg.spec.signal_prior = parse(&k, &v)?,
                "classes" => cfg.classes = parse(&k, &v)?,
                "per_class" => cfg.per_class = parse(&k, &v)?,
                "seed" => cfg.seed = parse(&k, &v)?,
                other => return Err(Error::Config(format!("synthetic: unknown key '{other}'"))),
            }
        }
        cfg.spec.noise = vec![noise; cfg.spec.dim];
        cfg.spec.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn generate(&self) -> Result<FeatureStore> {
        episodes::generate_mog_store(&self.spec, self.classes, self.per_class, self.seed)
    }
}
