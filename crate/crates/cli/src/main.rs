use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mobfair::error::{Error, IoError};
use mobfair::io::{self, WorldPaths};
use mobfair::metrics::audit;
use mobfair::report::{summarize, write_summary_csv};
use mobfair::sakm::{calibration_points, calibration_slope, ProxyLabels, ProxyMode};
use mobfair::{generate_world, pipeline, RunConfig, World};

#[derive(Parser)]
#[command(name = "mobfair", version, about = "Fairness-aware training-set selection for next-location prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and its answer key.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (overrides `output_dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derive proxy group labels with size-aware k-means.
    Cluster {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<ProxyMode>,
        /// World directory; defaults to `<output_dir>/world`.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Region and group accuracy audit of per-user hits.
    Audit {
        #[arg(long)]
        world: PathBuf,
        /// CSV with `user_id,hit[,group]`.
        #[arg(long)]
        hits: PathBuf,
        #[arg(long, default_value = "audit")]
        out: PathBuf,
    },
    /// Run the sampling loop for every (beta, seed) cell.
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
        /// Number of replicate seeds.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate results files into a per-(beta, step) summary.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Summary CSV path; defaults to `<results>/summary.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: Option<&Path>, out: Option<PathBuf>) -> Result<RunConfig, Error> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = out {
        config.output_dir = out;
    }
    Ok(config)
}

fn load(dir: &Path) -> Result<World, Error> {
    let loaded = io::load_world(&WorldPaths::in_dir(dir))?;
    if !loaded.renormalized.is_empty() {
        log::warn!("renormalised proportions of {} regions", loaded.renormalized.len());
    }
    Ok(loaded.world)
}

/// The world under `dir`, generated from the config first if absent.
fn world_or_generate(config: &RunConfig, dir: &Path) -> Result<World, Error> {
    if WorldPaths::in_dir(dir).meta.exists() {
        return load(dir);
    }
    log::info!("generating world in {}", dir.display());
    let generated = generate_world(&config.synth, config.synth.seed)?;
    io::write_world(&generated.world, dir)?;
    io::write_answer_key(&generated.answer_key, dir)?;
    Ok(generated.world)
}

fn cluster(config: &RunConfig, world: &World, world_dir: &Path, dir: &Path) -> Result<ProxyLabels, Error> {
    let (features, labels) = pipeline::cluster(world, config)?;
    io::write_proxy_labels(&labels, config.sakm.mode, world, dir)?;
    io::write_features(&features, dir.join("features.csv"))?;
    if let Some(slope) = calibration_slope(&calibration_points(&labels.fits, 10)) {
        println!("calibration slope: {slope:.4}");
    }
    if let Ok(key) = io::read_answer_key(world_dir) {
        let agree = labels.user_ids.iter().zip(&labels.labels).filter(|(u, l)| key.group_of(**u) == Some(**l)).count();
        println!("answer-key agreement: {:.4}", agree as f64 / labels.len().max(1) as f64);
    }
    Ok(labels)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Generate { config, out } => {
            let config = load_config(config.as_deref(), out)?;
            let dir = config.output_dir.join("world");
            let generated = generate_world(&config.synth, config.synth.seed)?;
            io::write_world(&generated.world, &dir)?;
            io::write_answer_key(&generated.answer_key, &dir)?;
            println!(
                "wrote {} users, {} pois, {} regions to {}",
                generated.world.trajectories().len(),
                generated.world.pois().len(),
                generated.world.regions().len(),
                dir.display()
            );
        }
        Command::Cluster { config, mode, world, out } => {
            let mut config = load_config(config.as_deref(), out)?;
            if let Some(mode) = mode {
                config.sakm.mode = mode;
            }
            let world_dir = world.unwrap_or_else(|| config.output_dir.join("world"));
            let world = load(&world_dir)?;
            let dir = config.output_dir.join("clusters");
            let labels = cluster(&config, &world, &world_dir, &dir)?;
            println!("labelled {} users; wrote {}", labels.len(), dir.display());
        }
        Command::Audit { world, hits, out } => {
            let world = load(&world)?;
            let (hits, labels) = io::read_hits(&hits, &world)?;
            let label_of = labels.map(|m| move |u| m.get(&u).copied());
            let report = match &label_of {
                Some(f) => audit(&hits, world.regions(), Some(f as &dyn Fn(_) -> _))?,
                None => audit(&hits, world.regions(), None)?,
            };
            io::write_audit(&report, &world, &out)?;
            for (group, z) in world.groups().iter().zip(&report.groups.z) {
                match z {
                    Some(z) => println!("z[{}] = {z:.4}", group.name),
                    None => println!("z[{}] = undefined", group.name),
                }
            }
            match report.groups.tdpv {
                Some(t) => println!("TDPV = {t:.6}"),
                None => println!("TDPV = undefined"),
            }
        }
        Command::Experiment { config, betas, seeds, world, out } => {
            let mut config = load_config(config.as_deref(), out)?;
            if let Some(b) = betas {
                config.experiment.betas = b;
            }
            if let Some(s) = seeds {
                config.experiment.seeds = s;
            }
            config.validate()?;
            let world_dir = world.unwrap_or_else(|| config.output_dir.join("world"));
            let world = world_or_generate(&config, &world_dir)?;
            let cluster_dir = config.output_dir.join("clusters");
            let labels_path = cluster_dir.join("labels.csv");
            let labels = if labels_path.exists() {
                io::read_proxy_labels(&labels_path, &world)?
            } else {
                cluster(&config, &world, &world_dir, &cluster_dir)?
            };
            let seeds: Vec<u64> = (0..config.experiment.seeds as u64).map(|i| config.fgis.seed + i).collect();
            let results_dir = config.output_dir.join("results");
            let cells = pipeline::run_experiment(
                &world,
                |u| labels.label_of(u),
                &config,
                &config.experiment.betas,
                &seeds,
                &results_dir,
            )?;
            let records: Vec<_> = cells.iter().flat_map(|c| c.records.iter().cloned()).collect();
            let rows = summarize(&records, config.experiment.bootstrap_resamples, config.experiment.bootstrap_seed);
            write_summary_csv(&rows, results_dir.join("summary.csv"))?;
            let resumed = cells.iter().filter(|c| c.resumed).count();
            println!("{} cells ({resumed} resumed); wrote {}", cells.len(), results_dir.display());
        }
        Command::Report { results, out, resamples, seed } => {
            let records = pipeline::load_results(&results)?;
            if records.is_empty() {
                return Err(
                    IoError::Malformed { path: results.clone(), line: 0, message: "no results files".into() }.into()
                );
            }
            let rows = summarize(&records, resamples, seed);
            let path = out.unwrap_or_else(|| results.join("summary.csv"));
            write_summary_csv(&rows, &path)?;
            println!("beta,t,n_seeds,tdpv_median,acc_median");
            for r in &rows {
                let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
                println!("{},{},{},{},{}", r.beta, r.t, r.n_seeds, f(r.tdpv_median), f(r.acc_median));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
