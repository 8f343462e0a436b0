//! Flat key=value run configuration mirroring the environment and agent
//! field names. Unknown keys are errors; `#` starts a comment.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::agent::{AgentConfig, Exploration};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::nav_map::NavMap;
use crate::neural::NetworkConfig;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub agent: AgentConfig,
    /// Policies compared by `benchmark` (names or checkpoint paths).
    pub policies: Vec<String>,
    /// Episodes per policy in `benchmark`.
    pub eval_episodes: usize,
    /// Checkpoint cadence during training (episodes); 0 disables.
    pub checkpoint_every: usize,
}

fn bad<T>(key: &str, value: &str) -> Result<T> {
    Err(Error::Config(format!("invalid value `{value}` for key `{key}`")))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().or_else(|_| bad(key, value))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bad(key, value),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|v| parse_num(key, v.trim()))
        .collect()
}

/// Parses a config document. Relative `map` paths resolve against
/// `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<RunConfig> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key=value, got `{line}`",
                lineno + 1
            )));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }

    let map_value = pairs
        .iter()
        .find(|(k, _)| k == "map")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Config("missing required key `map`".into()))?;
    let mut map_path = PathBuf::from(&map_value);
    if map_path.is_relative() {
        map_path = base_dir.join(map_path);
    }
    let map = Arc::new(NavMap::load(&map_path)?);

    let dynamic = match pairs.iter().find(|(k, _)| k == "dynamic") {
        Some((k, v)) => parse_bool(k, v)?,
        None => false,
    };
    let mut env = if dynamic {
        EnvConfig::dynamic_default(Arc::clone(&map), 0)
    } else {
        EnvConfig::static_default(Arc::clone(&map), 0)
    };

    let mut network = NetworkConfig::desk_scale(map.height, map.width, true);
    let mut agent = AgentConfig::defaults(network.clone(), 1000);
    let mut policies = vec![
        "random".to_string(),
        "lawnmower".to_string(),
        "nrrc".to_string(),
        "igreedy".to_string(),
    ];
    let mut eval_episodes = 30;
    let mut checkpoint_every = 0;

    for (key, value) in &pairs {
        match key.as_str() {
            "map" | "dynamic" => {}
            "lengthscale" => env.kernel.lengthscale = parse_num(key, value)?,
            "tau" => env.kernel.tau = parse_num(key, value)?,
            "d_meas" => env.d_meas = parse_num(key, value)?,
            "step_budget" => env.step_budget = parse_num(key, value)?,
            "delta_i_min" => env.delta_i_min = parse_num(key, value)?,
            "kappa" => env.kappa = parse_num(key, value)?,
            "collision_penalty" => env.collision_penalty = parse_num(key, value)?,
            "v_max_cells" => env.v_max_cells = parse_num(key, value)?,
            "n_peaks" => env.n_peaks = parse_num(key, value)?,
            "start_cell" => env.start_cell = Some(parse_num(key, value)?),
            "gamma" => agent.gamma = parse_num(key, value)?,
            "learning_rate" => agent.learning_rate = parse_num(key, value)?,
            "batch_size" => agent.batch_size = parse_num(key, value)?,
            "varpi" => agent.varpi = parse_num(key, value)?,
            "exploration" => {
                agent.exploration = match value.as_str() {
                    "noisy" => Exploration::Noisy,
                    "epsilon-greedy" => Exploration::EpsilonGreedy,
                    _ => return bad(key, value),
                }
            }
            "censoring" => agent.censoring = parse_bool(key, value)?,
            "episodes" => agent.episodes = parse_num(key, value)?,
            "buffer_capacity" => agent.buffer_capacity = parse_num(key, value)?,
            "conv_filters" => network.conv_filters = parse_list(key, value)?,
            "fc_widths" => network.fc_widths = parse_list(key, value)?,
            "head_width" => network.head_width = parse_num(key, value)?,
            "noisy" => network.noisy = parse_bool(key, value)?,
            "policies" => {
                policies = value
                    .split(',')
                    .map(|p| p.trim().to_string())
                    .filter(|p| !p.is_empty())
                    .collect()
            }
            "eval_episodes" => eval_episodes = parse_num(key, value)?,
            "checkpoint_every" => checkpoint_every = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
    }

    // ε-greedy exploration needs zeroed parameter noise.
    if agent.exploration == Exploration::EpsilonGreedy {
        network.noisy = false;
    }
    agent.network = network;

    Ok(RunConfig {
        env,
        agent,
        policies,
        eval_episodes,
        checkpoint_every,
    })
}

/// Reads and parses a config file; relative map paths resolve against the
/// config file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_map(dir: &Path) -> PathBuf {
        let path = dir.join("map.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "cellsize 0.225").unwrap();
        for _ in 0..6 {
            writeln!(f, "11111111").unwrap();
        }
        path
    }

    #[test]
    fn parses_defaults_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        write_map(dir.path());
        let text = "map = map.txt\n\
                    # a comment\n\
                    gamma = 0.95\n\
                    step_budget = 30\n\
                    exploration = epsilon-greedy\n\
                    conv_filters = 4,4\n\
                    policies = random, igreedy\n";
        let cfg = parse_config(text, dir.path()).unwrap();
        assert_eq!(cfg.env.step_budget, 30);
        assert_eq!(cfg.agent.gamma, 0.95);
        assert_eq!(cfg.agent.exploration, Exploration::EpsilonGreedy);
        assert!(!cfg.agent.network.noisy);
        assert_eq!(cfg.agent.network.conv_filters, vec![4, 4]);
        assert_eq!(cfg.policies, vec!["random", "igreedy"]);
        assert!(!cfg.env.dynamic);
        assert_eq!(cfg.env.step_budget, 30);
    }

    #[test]
    fn dynamic_flag_switches_defaults() {
        let dir = tempfile::tempdir().unwrap();
        write_map(dir.path());
        let cfg = parse_config("map=map.txt\ndynamic=true\n", dir.path()).unwrap();
        assert!(cfg.env.dynamic);
        assert_eq!(cfg.env.step_budget, 168);
        assert!(cfg.env.kernel.tau > 0.0);
    }

    #[test]
    fn unknown_key_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_map(dir.path());
        let err = parse_config("map=map.txt\nbogus=1\n", dir.path()).unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn missing_map_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(parse_config("gamma=0.9\n", dir.path()).is_err());
    }

    #[test]
    fn malformed_line_errors() {
        let dir = tempfile::tempdir().unwrap();
        write_map(dir.path());
        assert!(parse_config("map=map.txt\nnot a pair\n", dir.path()).is_err());
    }
}
