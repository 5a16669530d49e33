//! Command-line surface. Every command stages its outputs in a temporary
//! directory next to the destination and moves them into place only once all
//! of them were written, so a failed run leaves nothing behind.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::{self, Cell, ExperimentConfig, ExperimentResults, Strategy};
use crate::mechanism::{Mechanism, MechanismKind};
use crate::plot;
use crate::prior_net::NetworkWeights;
use crate::seed::{self, Stream};

pub const THREADS_ENV: &str = "MECHPRIOR_THREADS";

#[derive(Debug, Parser)]
#[command(name = "mechprior", version, about = "Learned priors for GP-UCB on articulated mechanisms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect training data, fit the network and evaluate every checkpoint.
    Train {
        config: PathBuf,
        /// Output directory (created if missing).
        out: PathBuf,
    },
    /// Evaluate fixed weights against the baselines on the evaluation set.
    Eval {
        config: PathBuf,
        weights: PathBuf,
        out: PathBuf,
    },
    /// Plot an aggregated curve CSV as SVG.
    Curve { results: PathBuf, out: PathBuf },
    /// Plot the motion histogram of a JSON-lines dataset as SVG.
    Hist {
        dataset: PathBuf,
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Heatmap of the network prediction for one mechanism.
    PriorMap {
        weights: PathBuf,
        kind: MechanismKind,
        seed: u64,
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        resolution: usize,
        /// Fixed pitch slice for doors, in radians.
        #[arg(long, allow_hyphen_values = true)]
        pitch: Option<f64>,
    },
    /// Render a mechanism as a binary PGM image.
    ShowMech { kind: MechanismKind, seed: u64, out: PathBuf },
}

/// Builds the global worker pool, honoring `MECHPRIOR_THREADS`.
pub fn init_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

/// Files written to a staging directory and committed together.
struct Staging {
    dir: tempfile::TempDir,
    files: Vec<(PathBuf, PathBuf)>,
}

impl Staging {
    fn new(dest_dir: &Path) -> Result<Self> {
        let parent = if dest_dir.as_os_str().is_empty() { Path::new(".") } else { dest_dir };
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let dir = tempfile::Builder::new()
            .prefix(".mechprior-")
            .tempdir_in(parent)
            .map_err(|e| Error::io(parent, e))?;
        Ok(Staging { dir, files: Vec::new() })
    }

    /// Staging path for a file that will end up at `dest`.
    fn path(&mut self, dest: PathBuf) -> PathBuf {
        let staged = self.dir.path().join(self.files.len().to_string());
        self.files.push((staged.clone(), dest));
        staged
    }

    fn write(&mut self, dest: PathBuf, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(dest);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    fn commit(self) -> Result<()> {
        for (staged, dest) in &self.files {
            fs::rename(staged, dest).map_err(|e| Error::io(dest, e))?;
        }
        Ok(())
    }
}

fn parent_of(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out } => train(&config, &out),
        Command::Eval { config, weights, out } => eval(&config, &weights, &out),
        Command::Curve { results, out } => {
            let curves = harness::read_curves_csv(&results)?;
            let svg = plot::learning_curve_svg(&curves)?;
            let mut s = Staging::new(&parent_of(&out))?;
            s.write(out, svg)?;
            s.commit()
        }
        Command::Hist { dataset, out, bins } => {
            let data = harness::load_dataset(&dataset)?;
            let h = harness::dataset_histogram(&data, bins)?;
            let title = format!("{} interactions, {:.1}% without motion", h.total(), 100.0 * h.zero_fraction());
            let svg = plot::histogram_svg(&h, &title)?;
            let mut s = Staging::new(&parent_of(&out))?;
            s.write(out, svg)?;
            s.commit()
        }
        Command::PriorMap {
            weights,
            kind,
            seed,
            out,
            resolution,
            pitch,
        } => {
            let w = NetworkWeights::load(&weights)?;
            let m = Mechanism::generate(kind, seed);
            let features = w.image_features(&m.render());
            let svg = plot::prior_map(|a| w.predict_with_features(&features, a), &m, resolution, pitch)?;
            let mut s = Staging::new(&parent_of(&out))?;
            s.write(out, svg)?;
            s.commit()
        }
        Command::ShowMech { kind, seed, out } => {
            let pgm = Mechanism::generate(kind, seed).render().to_pgm();
            let mut s = Staging::new(&parent_of(&out))?;
            s.write(out, pgm)?;
            s.commit()
        }
    }
}

fn write_results(s: &mut Staging, out: &Path, results: &ExperimentResults) -> Result<()> {
    let p = s.path(out.join("results.json"));
    harness::save_results(results, &p)?;
    let p = s.path(out.join("results.csv"));
    harness::write_cells_csv(&results.cells, &p)?;
    let p = s.path(out.join("curve.csv"));
    harness::write_curves_csv(&results.curves, &p)?;
    s.write(out.join("curve.svg"), plot::learning_curve_svg(&results.curves)?)
}

fn train(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let output = harness::run_experiment(&cfg)?;
    let mut s = Staging::new(out)?;
    write_results(&mut s, out, &output.results)?;
    for run in &output.training {
        let tag = format!("{}_seed{}", run.strategy, run.model_seed);
        for (l, w) in &run.snapshots {
            let p = s.path(out.join(format!("weights_{tag}_L{l}.json")));
            w.save(&p)?;
        }
        let p = s.path(out.join(format!("weights_{tag}.json")));
        run.weights.save(&p)?;
        let p = s.path(out.join(format!("dataset_{tag}.jsonl")));
        harness::save_dataset(&run.dataset, &p)?;
        let h = harness::dataset_histogram(&run.dataset, 20)?;
        let title = format!("{tag}: {:.1}% without motion", 100.0 * h.zero_fraction());
        s.write(out.join(format!("hist_{tag}.svg")), plot::histogram_svg(&h, &title)?)?;
    }
    s.commit()
}

/// Evaluates the configured strategies with one fixed set of weights. Cells
/// are labeled with checkpoint `L` from the config.
pub fn evaluate_weights(cfg: &ExperimentConfig, weights: &NetworkWeights) -> Result<ExperimentResults> {
    cfg.validate()?;
    let eval_set = cfg.eval_set();
    let mut cells = Vec::new();
    for &strategy in &cfg.strategies {
        let w = strategy.is_cpp().then_some(weights);
        for &model_seed in &cfg.model_seeds {
            let recs = eval_set
                .par_iter()
                .map(|m| {
                    let rng_seed = seed::derive(model_seed, Stream::BaselineRandom, m.seed);
                    harness::evaluate_one(strategy, w, m, cfg, rng_seed)
                })
                .collect::<Result<Vec<_>>>()?;
            cells.extend(recs.iter().map(|r| Cell {
                strategy,
                checkpoint: cfg.train_mechanisms,
                seed: model_seed,
                mech_seed: r.mech_seed,
                attempts: r.attempts_to_success,
                final_regret: r.final_regret(),
                regrets: std::iter::once(r.initial_regret)
                    .chain(r.attempts.iter().map(|a| a.regret))
                    .collect(),
            }));
        }
    }
    let checkpoints = [cfg.train_mechanisms];
    let strategies: Vec<Strategy> = cfg.strategies.clone();
    let curves = harness::aggregate(&cells, &strategies, &checkpoints, cfg.max_attempts);
    Ok(ExperimentResults {
        version: harness::RESULTS_VERSION.to_string(),
        config: cfg.clone(),
        cells,
        curves,
    })
}

fn eval(config: &Path, weights: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let w = NetworkWeights::load(weights)?;
    let results = evaluate_weights(&cfg, &w)?;
    let mut s = Staging::new(out)?;
    write_results(&mut s, out, &results)?;
    s.commit()
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_subcommands() {
        let c = Cli::try_parse_from(["mechprior", "show-mech", "slider", "7", "m.pgm"]).unwrap();
        assert!(matches!(c.command, Command::ShowMech { kind: MechanismKind::Slider, seed: 7, .. }));
        let c = Cli::try_parse_from(["mechprior", "prior-map", "w.json", "door", "1", "o.svg", "--pitch", "-0.2"]).unwrap();
        assert!(matches!(c.command, Command::PriorMap { pitch: Some(p), .. } if p == -0.2));
        assert!(Cli::try_parse_from(["mechprior", "show-mech", "drawer", "1", "x"]).is_err());
        assert!(Cli::try_parse_from(["mechprior"]).is_err());
    }

    #[test]
    fn staging_discards_on_drop() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut s = Staging::new(dir.path()).unwrap();
            s.write(dir.path().join("a.txt"), "x").unwrap();
        }
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        let mut s = Staging::new(dir.path()).unwrap();
        s.write(dir.path().join("a.txt"), "x").unwrap();
        s.commit().unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("a.txt")).unwrap(), "x");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
