use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use tafssl::episodes;
use tafssl::harness::{features, run, Settings};
use tafssl::Error;

/// Few-shot benchmark harness for task-adaptive feature subspaces.
///
/// Settings can come from a `key = value` file (`--config`); flags override it.
/// Without `--features` or `--synthetic` the built-in reference synthetic
/// store is used.
#[derive(Debug, Parser)]
#[command(name = "tafssl", version)]
struct Cli {
    /// key = value settings file; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// transductive | semi
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated: nn, sub, sub-star, pca-nn, ica-nn, pca-bkm, ica-bkm, pca-msp, ica-msp, bkm, msp
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    ways: Option<usize>,
    #[arg(long)]
    shots: Option<usize>,
    /// Queries per class
    #[arg(long)]
    queries: Option<usize>,
    /// Unlabeled samples per class (semi mode)
    #[arg(long)]
    unlabeled: Option<usize>,
    /// Distractor classes in the unlabeled set (semi mode)
    #[arg(long)]
    distractors: Option<usize>,
    /// Unbalance factor R: each class gets queries + uniform{0..=R}
    #[arg(long)]
    unbalance: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Projection dimension for both PCA and ICA
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long)]
    ica_dim: Option<usize>,
    /// Feature file (TAFS binary or CSV)
    #[arg(long)]
    features: Option<PathBuf>,
    /// key = value file describing a synthetic mixture-of-Gaussians store
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// queries | noise | dim | unbalance
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated sweep values (defaults depend on the sweep)
    #[arg(long)]
    sweep_values: Option<String>,
    /// Write the CSV report here
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for the episode loop
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    msp_threshold: Option<f64>,
    #[arg(long)]
    msp_iterations: Option<usize>,
    /// k-means clusters for BKM
    #[arg(long)]
    clusters: Option<usize>,
    /// before | after: when baselines L2-normalise relative to prototype averaging
    #[arg(long)]
    normalize: Option<String>,
    /// Write the resolved feature store to this path (.csv for CSV) and exit
    #[arg(long)]
    export_features: Option<PathBuf>,
    /// Print per-dimension normalised mutual information with this many bins and exit
    #[arg(long)]
    mi_bins: Option<usize>,
}

impl Cli {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($field:ident => $key:literal),* $(,)?) => {
                $(if let Some(v) = &self.$field {
                    out.push(($key, v.to_string()));
                })*
            };
        }
        push!(
            mode => "mode", method => "method", ways => "ways", shots => "shots",
            queries => "queries", unlabeled => "unlabeled", distractors => "distractors",
            unbalance => "unbalance", episodes => "episodes", seed => "seed", dim => "dim",
            pca_dim => "pca_dim", ica_dim => "ica_dim", sweep => "sweep",
            sweep_values => "sweep_values", workers => "workers", tau => "tau",
            msp_threshold => "msp_threshold", msp_iterations => "msp_iterations",
            clusters => "clusters", normalize => "normalize", mi_bins => "mi_bins",
        );
        for (key, path) in [
            ("features", &self.features),
            ("synthetic", &self.synthetic),
            ("out", &self.out),
            ("export_features", &self.export_features),
        ] {
            if let Some(p) = path {
                out.push((key, p.display().to_string()));
            }
        }
        out
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut settings = match &cli.config {
        Some(p) => Settings::from_file(p)?,
        None => Settings::default(),
    };
    settings.apply_all(cli.overrides())?;

    let store = settings.load_store()?;
    if let Some(path) = &settings.export_features {
        features::save_features(&store, path)?;
        return Ok(());
    }
    if let Some(bins) = settings.mi_bins {
        let mi = episodes::store_mutual_information(&store, bins)?;
        println!("dim,normalized_mi");
        for (j, v) in mi.iter().enumerate() {
            println!("{j},{v:.6}");
        }
        return Ok(());
    }

    let cfg = settings.run_config();
    let csv = match settings.sweep {
        Some(sweep) => {
            let table = run::run_ablation(&cfg, &store, sweep, settings.sweep_values.as_deref())?;
            print!("{}", run::ablation_table(&table));
            run::ablation_csv(&table)
        }
        None => {
            let report = run::run_benchmark(&cfg, &store)?;
            print!("{}", run::report_table(&report));
            run::report_csv(&report)
        }
    };
    if let Some(path) = &settings.out {
        fs::write(path, csv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.kind(), e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
