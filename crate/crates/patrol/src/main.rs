use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use patrol::agent::train_with;
use patrol::harness::config::load_config;
use patrol::harness::{
    resolve_policy, run_benchmark, run_episode, series_csv, summary_csv, Policy,
};
use patrol::info_field::{condition, entropy, information, SampleSet};
use patrol::nav_map::NavMap;
use patrol::neural::save_checkpoint;

#[derive(Parser)]
#[command(name = "patrol", about = "Informative patrolling simulator and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the DQN agent and write the log plus checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate one policy over seeded episodes.
    Eval {
        /// Planner name (random|lawnmower|nrrc|igreedy) or checkpoint path.
        #[arg(long)]
        policy: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        episodes: usize,
        /// Seed list file (one u64 per line) or a base seed.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full policy comparison from the config's policy list.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print map dimensions, water-cell count, and prior information/entropy.
    MapInfo {
        #[arg(long)]
        map: PathBuf,
    },
}

/// Policy names may be checkpoint paths; keep series filenames flat.
fn file_stem(policy: &str) -> String {
    std::path::Path::new(policy)
        .file_stem()
        .map_or_else(|| policy.to_string(), |s| s.to_string_lossy().into_owned())
}

fn parse_seeds(spec: &str, episodes: usize) -> anyhow::Result<Vec<u64>> {
    let path = PathBuf::from(spec);
    let seeds: Vec<u64> = if path.is_file() {
        fs::read_to_string(&path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| l.parse().with_context(|| format!("bad seed `{l}`")))
            .collect::<anyhow::Result<_>>()?
    } else {
        let base: u64 = spec
            .parse()
            .with_context(|| format!("`{spec}` is neither a seed file nor a base seed"))?;
        (0..episodes as u64).map(|i| base + i).collect()
    };
    if seeds.len() < episodes {
        bail!("need {episodes} seeds, got {}", seeds.len());
    }
    Ok(seeds[..episodes].to_vec())
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Train { config, seed, out } => {
            let cfg = load_config(&config)?;
            fs::create_dir_all(&out)?;
            let every = cfg.checkpoint_every;
            let out_ref = out.clone();
            let (params, log) = train_with(&cfg.env, &cfg.agent, seed, |episode, p| {
                if every > 0 && (episode + 1) % every == 0 {
                    let path = out_ref.join(format!("checkpoint_{:06}.txt", episode + 1));
                    if let Err(e) = save_checkpoint(p, &path) {
                        eprintln!("warning: checkpoint at episode {episode} failed: {e}");
                    }
                }
            })?;
            save_checkpoint(&params, &out.join("checkpoint_final.txt"))?;
            fs::write(out.join("training_log.csv"), log.to_csv())?;
            let last = log.episodes.last();
            println!(
                "trained {} episodes; final I_T {:.4}; total collisions {}",
                log.episodes.len(),
                last.map_or(f64::NAN, |e| e.i_t),
                log.total_collisions()
            );
        }
        Command::Eval {
            policy,
            config,
            episodes,
            seeds,
            out,
        } => {
            let cfg = load_config(&config)?;
            let resolved = resolve_policy(&policy)?;
            let name = match resolved {
                Policy::Classical(_) => policy.clone(),
                Policy::Drl { .. } => "drl".to_string(),
            };
            let seed_list = parse_seeds(&seeds, episodes)?;
            fs::create_dir_all(&out)?;
            let mut records = Vec::with_capacity(episodes);
            for &s in &seed_list {
                let r = run_episode(&resolved, &cfg.env, &name, s)?;
                fs::write(
                    out.join(format!("series_{}_{}.csv", name, s)),
                    series_csv(&r),
                )?;
                records.push(r);
            }
            let info: Vec<f64> = records
                .iter()
                .map(|r| patrol::harness::metric_information(r, cfg.env.dynamic))
                .collect::<patrol::Result<_>>()?;
            let (mean, std) = patrol::harness::mean_std(&info);
            println!("{name}: I over {episodes} episodes = {mean:.4} ± {std:.4}");
        }
        Command::Benchmark { config, out, seed } => {
            let cfg = load_config(&config)?;
            let policies = cfg
                .policies
                .iter()
                .map(|p| Ok((p.clone(), resolve_policy(p)?)))
                .collect::<patrol::Result<Vec<_>>>()?;
            let result = run_benchmark(&policies, &cfg.env, cfg.eval_episodes, seed)?;
            fs::create_dir_all(&out)?;
            fs::write(out.join("summary.csv"), summary_csv(&result.rows))?;
            for r in &result.records {
                fs::write(
                    out.join(format!("series_{}_{}.csv", file_stem(&r.policy), r.seed)),
                    series_csv(r),
                )?;
            }
            for row in &result.rows {
                println!(
                    "{:<12} I {:.4} ± {:.4}  A {:.4} km²  xi {:.3}  MSE {:.5}",
                    row.algorithm, row.i_mean, row.i_std, row.coverage_mean, row.xi_mean,
                    row.mse_mean
                );
            }
        }
        Command::MapInfo { map } => {
            let map = std::sync::Arc::new(NavMap::load(&map)?);
            let kernel = patrol::info_field::KernelConfig::new(1.125, 0.0);
            let state = condition(&map, &kernel, &SampleSet::new(), 0)?;
            println!("dimensions: {} x {} cells", map.width, map.height);
            println!("cell size: {} km", map.cell_size);
            println!("water cells: {}", map.num_water_cells());
            println!("prior information I_0: {}", information(&state));
            println!("prior entropy H_0: {:.4} nats", entropy(&state)?);
        }
    }
    Ok(())
}
