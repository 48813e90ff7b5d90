//! Episode loop, aggregation and report formatting.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;

use super::pipeline::{score, Diagnostics, MethodName, MethodPipeline, ProjectedTask, Projection};
use crate::episodes::{self, EpisodeSpec, FeatureStore, Mode};
use crate::error::{Error, Result};

pub const DEFAULT_EPISODES: usize = 10_000;

/// z-value for a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub spec: EpisodeSpec,
    pub methods: Vec<MethodPipeline>,
    pub episodes: usize,
    pub seed: u64,
    /// 0 or 1 runs on the calling thread.
    pub workers: usize,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.spec
            .validate()
            .map_err(|e| Error::InvalidPipeline(e.to_string()))?;
        if self.methods.is_empty() {
            return Err(Error::InvalidPipeline("no methods selected".into()));
        }
        if self.episodes == 0 {
            return Err(Error::InvalidPipeline("episodes must be >= 1".into()));
        }
        for m in &self.methods {
            m.validate(self.spec.mode, self.spec.unlabeled_per_class)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodReport {
    pub method: MethodName,
    /// Projection dimension used, if any.
    pub dim: Option<usize>,
    /// Mean per-episode accuracy, in percent.
    pub accuracy: f64,
    /// Half-width of the 95% normal interval, in percent.
    pub ci95: f64,
    pub episodes: usize,
    pub seconds_per_episode: f64,
    pub diagnostics: Diagnostics,
    /// Per-episode accuracies (fractions) in episode order.
    pub per_episode: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub spec: EpisodeSpec,
    pub seed: u64,
    pub episodes: usize,
    pub methods: Vec<MethodReport>,
}

impl RunReport {
    pub fn method(&self, name: MethodName) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }
}

/// Mean and 95% half-width (both in percent) of per-episode accuracies.
///
/// The spread is the population standard deviation, so a single episode
/// yields a zero-width interval.
pub fn accuracy_stats(per_episode: &[f64]) -> (f64, f64) {
    let n = per_episode.len() as f64;
    if per_episode.is_empty() {
        return (0.0, 0.0);
    }
    let mean = per_episode.iter().sum::<f64>() / n;
    let var = per_episode.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (100.0 * mean, 100.0 * Z_95 * var.sqrt() / n.sqrt())
}

struct EpisodeResult {
    accuracy: Vec<f64>,
    seconds: Vec<f64>,
    diagnostics: Vec<Diagnostics>,
}

fn run_one(store: &FeatureStore, cfg: &RunConfig, index: u64) -> Result<EpisodeResult> {
    let mut rng = episodes::episode_rng(cfg.seed, index);
    let ep = episodes::sample_episode(store, &cfg.spec, &mut rng)?;
    let method_seed: u64 = rng.random();
    let mut out = EpisodeResult {
        accuracy: Vec::with_capacity(cfg.methods.len()),
        seconds: Vec::with_capacity(cfg.methods.len()),
        diagnostics: Vec::with_capacity(cfg.methods.len()),
    };
    // Methods sharing a projection stage reuse one fit per episode.
    let mut fitted: Vec<((Projection, Option<usize>), ProjectedTask, f64)> = Vec::new();
    for m in &cfg.methods {
        let key = m.projection_key();
        let (task, fit_seconds) = match fitted.iter().find(|(k, _, _)| *k == key) {
            Some((_, task, secs)) => (task.clone(), *secs),
            None => {
                let t0 = Instant::now();
                let task = m.project(&ep, cfg.spec.mode, method_seed)?;
                let secs = t0.elapsed().as_secs_f64();
                fitted.push((key, task.clone(), secs));
                (task, secs)
            }
        };
        let t0 = Instant::now();
        let pred = m.infer(&ep, task)?;
        out.seconds.push(fit_seconds + t0.elapsed().as_secs_f64());
        out.accuracy.push(score(&pred.labels, &ep));
        out.diagnostics.push(pred.diagnostics);
    }
    Ok(out)
}

/// Maps `f` over `0..n`, in parallel when `workers > 1`. Results come back
/// in index order either way.
pub fn map_episodes<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        return pool.install(|| (0..n as u64).into_par_iter().map(&f).collect());
    }
    let _ = workers;
    (0..n as u64).map(f).collect()
}

pub fn run_benchmark(cfg: &RunConfig, store: &FeatureStore) -> Result<RunReport> {
    cfg.validate()?;
    let results = map_episodes(cfg.episodes, cfg.workers, |i| run_one(store, cfg, i))?;
    let methods = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let per_episode: Vec<f64> = results.iter().map(|r| r.accuracy[k]).collect();
            let seconds: f64 = results.iter().map(|r| r.seconds[k]).sum();
            let mut diagnostics = Diagnostics::default();
            for r in &results {
                diagnostics += r.diagnostics[k];
            }
            let (accuracy, ci95) = accuracy_stats(&per_episode);
            MethodReport {
                method: m.name,
                dim: m.projection_dim(),
                accuracy,
                ci95,
                episodes: cfg.episodes,
                seconds_per_episode: seconds / cfg.episodes as f64,
                diagnostics,
                per_episode,
            }
        })
        .collect();
    Ok(RunReport {
        spec: cfg.spec.clone(),
        seed: cfg.seed,
        episodes: cfg.episodes,
        methods,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Queries,
    Noise,
    Dim,
    Unbalance,
}

impl Sweep {
    pub fn as_str(self) -> &'static str {
        match self {
            Sweep::Queries => "queries",
            Sweep::Noise => "noise",
            Sweep::Dim => "dim",
            Sweep::Unbalance => "unbalance",
        }
    }

    pub fn default_values(self) -> Vec<usize> {
        match self {
            Sweep::Queries => vec![2, 5, 10, 15, 20, 30, 50],
            Sweep::Noise => (0..=7).collect(),
            Sweep::Dim => vec![2, 4, 6, 8, 10, 12, 16, 20, 24, 32],
            Sweep::Unbalance => vec![0, 10, 20, 30, 40, 50],
        }
    }
}

impl FromStr for Sweep {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "queries" => Ok(Sweep::Queries),
            "noise" => Ok(Sweep::Noise),
            "dim" => Ok(Sweep::Dim),
            "unbalance" => Ok(Sweep::Unbalance),
            other => Err(Error::Config(format!("unknown sweep '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationTable {
    pub sweep: Sweep,
    pub rows: Vec<(usize, RunReport)>,
}

impl AblationTable {
    /// Sweep value with the highest accuracy for `method` (first on ties).
    pub fn argmax(&self, method: MethodName) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (v, r) in &self.rows {
            if let Some(m) = r.method(method) {
                if best.is_none_or(|(_, a)| m.accuracy > a) {
                    best = Some((*v, m.accuracy));
                }
            }
        }
        best.map(|(v, _)| v)
    }
}

/// Seed for the `i`-th value of a sweep (splitmix64 finaliser).
pub fn sweep_seed(seed: u64, i: usize) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(i as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn run_ablation(
    cfg: &RunConfig,
    store: &FeatureStore,
    sweep: Sweep,
    values: Option<&[usize]>,
) -> Result<AblationTable> {
    let values = values.map_or_else(|| sweep.default_values(), <[usize]>::to_vec);
    if values.is_empty() {
        return Err(Error::InvalidPipeline("empty sweep value list".into()));
    }
    if sweep == Sweep::Noise && cfg.spec.mode != Mode::Semi {
        return Err(Error::InvalidPipeline("noise sweep requires semi mode".into()));
    }
    let configs: Vec<RunConfig> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut c = cfg.clone();
            c.seed = sweep_seed(cfg.seed, i);
            match sweep {
                Sweep::Queries => c.spec.queries_per_class = v,
                Sweep::Noise => c.spec.distractor_classes = v,
                Sweep::Unbalance => c.spec.unbalance = v,
                Sweep::Dim => {
                    for m in &mut c.methods {
                        m.hyper.pca_dim = v;
                        m.hyper.ica_dim = v;
                    }
                }
            }
            c
        })
        .collect();
    // Fail fast on any invalid sweep point before running the first one.
    for c in &configs {
        c.validate()?;
    }
    let rows = values
        .iter()
        .zip(&configs)
        .map(|(&v, c)| run_benchmark(c, store).map(|r| (v, r)))
        .collect::<Result<_>>()?;
    Ok(AblationTable { sweep, rows })
}

fn mode_str(m: Mode) -> &'static str {
    match m {
        Mode::Transductive => "transductive",
        Mode::Semi => "semi",
    }
}

pub const CSV_HEADER: &str =
    "sweep,value,method,mode,ways,shots,queries,unlabeled,distractors,unbalance,dim,episodes,seed,accuracy,ci95";

fn csv_rows(out: &mut String, sweep: &str, value: &str, r: &RunReport) {
    let s = &r.spec;
    for m in &r.methods {
        let dim = m.dim.map_or_else(String::new, |d| d.to_string());
        let _ = writeln!(
            out,
            "{sweep},{value},{},{},{},{},{},{},{},{},{dim},{},{},{:.4},{:.4}",
            m.method,
            mode_str(s.mode),
            s.n_way,
            s.k_shot,
            s.queries_per_class,
            s.unlabeled_per_class,
            s.distractor_classes,
            s.unbalance,
            m.episodes,
            r.seed,
            m.accuracy,
            m.ci95,
        );
    }
}

/// Machine-readable report. Timings are left out so the output depends only
/// on the configuration and seed.
pub fn report_csv(r: &RunReport) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    csv_rows(&mut out, "", "", r);
    out
}

pub fn ablation_csv(t: &AblationTable) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for (v, r) in &t.rows {
        csv_rows(&mut out, t.sweep.as_str(), &v.to_string(), r);
    }
    out
}

fn table_lines(out: &mut String, prefix: Option<usize>, r: &RunReport) {
    for m in &r.methods {
        if let Some(v) = prefix {
            let _ = write!(out, "{v:>7}  ");
        }
        let dim = m.dim.map_or_else(|| "-".to_string(), |d| d.to_string());
        let _ = write!(
            out,
            "{:<10} {:>4} {:>8.2} {:>7.2} {:>9} {:>10.3}",
            m.method.as_str(),
            dim,
            m.accuracy,
            m.ci95,
            m.episodes,
            1e3 * m.seconds_per_episode
        );
        let warn = m.diagnostics.summary();
        if !warn.is_empty() {
            let _ = write!(out, "  {}", warn.join(" "));
        }
        out.push('\n');
    }
}

const TABLE_HEAD: &str = "method      dim   acc(%)   ±95ci  episodes   ms/ep";

pub fn report_table(r: &RunReport) -> String {
    let s = &r.spec;
    let mut out = format!(
        "{}-way {}-shot, {} queries/class (+0..{}), {} mode, {} episodes, seed {}\n{TABLE_HEAD}\n",
        s.n_way,
        s.k_shot,
        s.queries_per_class,
        s.unbalance,
        mode_str(s.mode),
        r.episodes,
        r.seed
    );
    table_lines(&mut out, None, r);
    out
}

pub fn ablation_table(t: &AblationTable) -> String {
    let mut out = format!("sweep: {}\n{:>7}  {TABLE_HEAD}\n", t.sweep.as_str(), "value");
    for (v, r) in &t.rows {
        table_lines(&mut out, Some(*v), r);
    }
    if t.sweep == Sweep::Dim {
        if let Some((_, first)) = t.rows.first() {
            for m in &first.methods {
                if m.dim.is_some() {
                    if let Some(best) = t.argmax(m.method) {
                        let _ = writeln!(out, "best dim for {}: {best}", m.method);
                    }
                }
            }
        }
    }
    out
}
