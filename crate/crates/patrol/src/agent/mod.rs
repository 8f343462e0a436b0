//! Noisy Censoring-DQL: Q-censoring, action selection, target computation,
//! and the training loop, with ε-greedy and uncensored variants.

pub mod replay;

use std::sync::Arc;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::env::{EnvConfig, PatrolEnv, StateImage};
use crate::error::{Error, Result};
use crate::nav_map::{ActionMask, NUM_ACTIONS};
use crate::neural::{
    adam_step, forward, forward_batch, loss_and_gradients, soft_update, NetworkConfig, NoiseDraw,
    QNetworkParams,
};
use replay::{Experience, ReplayBuffer};

/// Large-but-finite sentinel for invalid actions; avoids NaN propagation
/// that IEEE -inf can cause in max/argmax edge cases.
pub const CENSOR_SENTINEL: f64 = -1e18;

pub const EPSILON_START: f64 = 1.0;
pub const EPSILON_END: f64 = 0.05;
pub const EPSILON_EPISODES: usize = 3000;
pub const BETA_START: f64 = 0.5;
pub const PRIORITY_ALPHA: f64 = 0.5;
/// Minimum stored experiences before the first gradient step.
pub const WARMUP_FLOOR: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exploration {
    /// Parameter-space noise; greedy over the noisy Q estimate.
    Noisy,
    /// Linear ε decay from 1 to 0.05 over the first 3000 episodes.
    EpsilonGreedy,
}

#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Soft-update rate ϖ for the target network.
    pub varpi: f64,
    pub exploration: Exploration,
    pub censoring: bool,
    pub episodes: usize,
    pub buffer_capacity: usize,
    pub network: NetworkConfig,
}

impl AgentConfig {
    pub fn defaults(network: NetworkConfig, episodes: usize) -> Self {
        Self {
            gamma: 0.99,
            learning_rate: 1e-4,
            batch_size: 64,
            varpi: 1e-4,
            exploration: Exploration::Noisy,
            censoring: true,
            episodes,
            buffer_capacity: 20_000,
            network,
        }
    }
}

/// ε(0) = 1, ε(episode ≥ 3000) = 0.05, linear between.
pub fn epsilon_schedule(episode: usize) -> f64 {
    if episode >= EPSILON_EPISODES {
        return EPSILON_END;
    }
    EPSILON_START - (EPSILON_START - EPSILON_END) * episode as f64 / EPSILON_EPISODES as f64
}

/// Importance-sampling exponent, annealed linearly from 0.5 to 1 over the
/// episode budget.
pub fn beta_schedule(episode: usize, episodes: usize) -> f64 {
    if episodes <= 1 {
        return 1.0;
    }
    let frac = (episode as f64 / (episodes - 1) as f64).min(1.0);
    BETA_START + (1.0 - BETA_START) * frac
}

/// Replaces Q-values of invalid actions with the censoring sentinel.
pub fn censor(q: &[f64; NUM_ACTIONS], mask: &ActionMask) -> Result<[f64; NUM_ACTIONS]> {
    if !mask.any_valid() {
        return Err(Error::AllActionsInvalid);
    }
    let mut out = *q;
    for (v, valid) in out.iter_mut().zip(mask.valid.iter()) {
        if !valid {
            *v = CENSOR_SENTINEL;
        }
    }
    Ok(out)
}

/// Argmax with ties broken toward the lowest index.
pub fn greedy_argmax(q: &[f64; NUM_ACTIONS]) -> usize {
    let mut best = 0;
    for a in 1..NUM_ACTIONS {
        if q[a] > q[best] {
            best = a;
        }
    }
    best
}

/// ε-greedy selection over an already-censored Q row. With probability ε a
/// uniform valid action is taken; otherwise the argmax. Noisy mode passes
/// ε = 0.
pub fn select_action(
    q_censored: &[f64; NUM_ACTIONS],
    epsilon: f64,
    mask: &ActionMask,
    rng: &mut ChaCha12Rng,
) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        let valid: Vec<usize> = (0..NUM_ACTIONS).filter(|&a| mask.valid[a]).collect();
        return valid[rng.random_range(0..valid.len())];
    }
    greedy_argmax(q_censored)
}

/// y_i = r_i + γ·max_{a'} Q_target(s_next, a'), maxing over valid actions
/// only when censoring is enabled; y_i = r_i at terminal transitions.
pub fn compute_targets(
    batch: &[&Experience],
    target_params: &QNetworkParams,
    gamma: f64,
    censoring: bool,
    noise: &NoiseDraw,
) -> Result<Vec<f64>> {
    let states: Vec<&StateImage> = batch.iter().map(|e| e.s_next.as_ref()).collect();
    let q_next = forward_batch(target_params, &states, noise);
    let mut y = Vec::with_capacity(batch.len());
    for (i, exp) in batch.iter().enumerate() {
        if exp.done {
            y.push(exp.r);
            continue;
        }
        let mut row = [0.0; NUM_ACTIONS];
        for a in 0..NUM_ACTIONS {
            row[a] = q_next[[a, i]];
        }
        let row = if censoring {
            censor(&row, &exp.mask_next)?
        } else {
            row
        };
        let max = row.iter().cloned().fold(f64::MIN, f64::max);
        y.push(exp.r + gamma * max);
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeStats {
    pub episode: usize,
    pub cumulative_reward: f64,
    /// Remaining information I_T at the end of the episode.
    pub i_t: f64,
    pub collisions: usize,
    /// Moves whose information gain fell below the redundancy threshold.
    pub kappa_moves: usize,
    pub epsilon: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeStats>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode,cumulative_reward,I_T,collisions,epsilon,wall_ms\n");
        for e in &self.episodes {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.episode, e.cumulative_reward, e.i_t, e.collisions, e.epsilon, e.wall_ms
            ));
        }
        out
    }

    pub fn total_collisions(&self) -> usize {
        self.episodes.iter().map(|e| e.collisions).sum()
    }

    pub fn mean_kappa_moves(&self) -> f64 {
        if self.episodes.is_empty() {
            return 0.0;
        }
        self.episodes.iter().map(|e| e.kappa_moves as f64).sum::<f64>()
            / self.episodes.len() as f64
    }
}

/// Runs the full training loop: per step — draw noise, censor, select, step
/// the environment, store the transition, then (past warm-up) sample a
/// prioritized batch, compute censored targets with a fresh noise draw, take
/// a weighted Adam step, update priorities, and soft-update the target net.
pub fn train(
    env_cfg: &EnvConfig,
    agent_cfg: &AgentConfig,
    seed: u64,
) -> Result<(QNetworkParams, TrainingLog)> {
    train_with(env_cfg, agent_cfg, seed, |_, _| {})
}

/// `train` with a per-episode callback (episode index, online params), used
/// for periodic checkpointing.
pub fn train_with(
    env_cfg: &EnvConfig,
    agent_cfg: &AgentConfig,
    seed: u64,
    mut on_episode: impl FnMut(usize, &QNetworkParams),
) -> Result<(QNetworkParams, TrainingLog)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut online = QNetworkParams::init(agent_cfg.network.clone(), rng.random::<u64>());
    let mut target = online.clone();
    let mut buffer = ReplayBuffer::new(agent_cfg.buffer_capacity, PRIORITY_ALPHA);
    let warmup = agent_cfg.batch_size.max(WARMUP_FLOOR);
    let mut log = TrainingLog::default();

    for episode in 0..agent_cfg.episodes {
        let clock = Instant::now();
        let epsilon = match agent_cfg.exploration {
            Exploration::Noisy => 0.0,
            Exploration::EpsilonGreedy => epsilon_schedule(episode),
        };
        let beta = beta_schedule(episode, agent_cfg.episodes);

        let mut cfg = env_cfg.clone();
        cfg.seed = rng.random::<u64>();
        let (mut env, state0) = PatrolEnv::reset(cfg)?;
        let mut s = Arc::new(state0);

        let mut cumulative_reward = 0.0;
        let mut collisions = 0;
        let mut kappa_moves = 0;

        loop {
            let mask = env.action_mask();
            let selection_noise = match agent_cfg.exploration {
                Exploration::Noisy => NoiseDraw::sample(&online.layout, &mut rng),
                Exploration::EpsilonGreedy => NoiseDraw::zeros(&online.layout),
            };
            let q = forward(&online, &s, &selection_noise);
            let q_cens = if agent_cfg.censoring {
                censor(&q, &mask)?
            } else {
                q
            };
            let action = select_action(&q_cens, epsilon, &full_or(&mask, agent_cfg.censoring), &mut rng);

            let result = env.step(action)?;
            let s_next = Arc::new(result.state);
            if result.info.collided {
                collisions += 1;
            } else if result.info.delta_i < env.cfg.delta_i_min {
                kappa_moves += 1;
            }
            cumulative_reward += result.reward;

            buffer.push(Experience {
                s: Arc::clone(&s),
                a: action,
                r: result.reward,
                s_next: Arc::clone(&s_next),
                done: result.done,
                mask_next: env.action_mask(),
            });

            if buffer.len() >= warmup {
                let (indices, batch, weights) =
                    buffer.sample(agent_cfg.batch_size, beta, &mut rng)?;
                let train_noise = match agent_cfg.exploration {
                    Exploration::Noisy => NoiseDraw::sample(&online.layout, &mut rng),
                    Exploration::EpsilonGreedy => NoiseDraw::zeros(&online.layout),
                };
                let targets = compute_targets(
                    &batch,
                    &target,
                    agent_cfg.gamma,
                    agent_cfg.censoring,
                    &train_noise,
                )?;
                let states: Vec<&StateImage> = batch.iter().map(|e| e.s.as_ref()).collect();
                let actions: Vec<usize> = batch.iter().map(|e| e.a).collect();
                let (_loss, grads, td) = loss_and_gradients(
                    &online,
                    &states,
                    &actions,
                    &targets,
                    &weights,
                    &train_noise,
                );
                buffer.update_priorities(&indices, &td);
                adam_step(&mut online, &grads, agent_cfg.learning_rate);
                soft_update(&mut target, &online, agent_cfg.varpi);
            }

            let done = result.done;
            s = s_next;
            if done {
                break;
            }
        }

        log.episodes.push(EpisodeStats {
            episode,
            cumulative_reward,
            i_t: env.information_remaining(),
            collisions,
            kappa_moves,
            epsilon,
            wall_ms: clock.elapsed().as_millis() as u64,
        });
        on_episode(episode, &online);
    }

    Ok((online, log))
}

/// Exploration draws are uniform over valid actions when censoring is on;
/// the uncensored ablation explores all eight actions (collisions included).
fn full_or(mask: &ActionMask, censoring: bool) -> ActionMask {
    if censoring {
        mask.clone()
    } else {
        ActionMask { valid: [true; NUM_ACTIONS] }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav_map::NavMap;

    fn mask(valid: [bool; 8]) -> ActionMask {
        ActionMask { valid }
    }

    #[test]
    fn censor_all_valid_is_identity() {
        let q = [1.0, -2.0, 3.0, 0.0, 0.5, -0.5, 9.0, 4.0];
        let out = censor(&q, &mask([true; 8])).unwrap();
        assert_eq!(out, q);
    }

    #[test]
    fn censor_moves_argmax_off_invalid_action() {
        let mut q = [0.0; 8];
        q[0] = 5.0;
        q[1] = 9.0;
        let mut m = [true; 8];
        m[1] = false;
        let out = censor(&q, &mask(m)).unwrap();
        assert_eq!(greedy_argmax(&out), 0);
        assert_eq!(out[1], CENSOR_SENTINEL);
    }

    #[test]
    fn censor_single_valid_action_wins_regardless_of_q() {
        let q = [100.0, 50.0, 25.0, 10.0, -1.0, 5.0, 3.0, 2.0];
        let mut m = [false; 8];
        m[4] = true;
        let out = censor(&q, &mask(m)).unwrap();
        assert_eq!(greedy_argmax(&out), 4);
    }

    #[test]
    fn censor_all_invalid_errors() {
        let q = [0.0; 8];
        assert!(matches!(
            censor(&q, &mask([false; 8])),
            Err(Error::AllActionsInvalid)
        ));
    }

    #[test]
    fn select_action_greedy_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let q = [0.0, 1.0, 7.0, 3.0, 7.0, 2.0, 0.0, 0.0];
        for _ in 0..20 {
            // Tie between 2 and 4 resolves to the lowest index.
            assert_eq!(select_action(&q, 0.0, &mask([true; 8]), &mut rng), 2);
        }
    }

    #[test]
    fn select_action_epsilon_one_uniform_over_valid() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let q = [9.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let m = mask([true, false, true, false, true, false, true, false]);
        let mut counts = [0usize; 8];
        let draws = 100_000;
        for _ in 0..draws {
            counts[select_action(&q, 1.0, &m, &mut rng)] += 1;
        }
        for a in 0..8 {
            let f = counts[a] as f64 / draws as f64;
            if m.valid[a] {
                assert!((f - 0.25).abs() < 0.02, "action {a}: freq {f}");
            } else {
                assert_eq!(counts[a], 0);
            }
        }
    }

    #[test]
    fn epsilon_schedule_endpoints_and_linearity() {
        assert_eq!(epsilon_schedule(0), 1.0);
        assert!((epsilon_schedule(1500) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon_schedule(3000), 0.05);
        assert_eq!(epsilon_schedule(10_000), 0.05);
    }

    #[test]
    fn beta_schedule_endpoints() {
        assert_eq!(beta_schedule(0, 100), 0.5);
        assert_eq!(beta_schedule(99, 100), 1.0);
        let mid = beta_schedule(50, 101);
        assert!((mid - 0.75).abs() < 1e-12);
    }

    fn tiny_params(seed: u64) -> QNetworkParams {
        let cfg = NetworkConfig {
            in_channels: 3,
            in_height: 8,
            in_width: 8,
            conv_filters: vec![2],
            fc_widths: vec![6],
            head_width: 4,
            noisy: false,
        };
        QNetworkParams::init(cfg, seed)
    }

    fn state(h: usize, w: usize, fill: f64) -> StateImage {
        StateImage {
            height: h,
            width: w,
            channels: [
                vec![fill; h * w],
                vec![fill * 0.5; h * w],
                vec![fill * 0.25; h * w],
            ],
        }
    }

    fn exp_with(done: bool, r: f64, mask_next: ActionMask) -> Experience {
        let s = Arc::new(state(8, 8, 0.3));
        Experience {
            s: Arc::clone(&s),
            a: 0,
            r,
            s_next: Arc::new(state(8, 8, 0.7)),
            done,
            mask_next,
        }
    }

    #[test]
    fn targets_gamma_zero_equal_rewards() {
        let params = tiny_params(3);
        let noise = NoiseDraw::zeros(&params.layout);
        let e0 = exp_with(false, 1.5, mask([true; 8]));
        let e1 = exp_with(false, -0.5, mask([true; 8]));
        let y = compute_targets(&[&e0, &e1], &params, 0.0, true, &noise).unwrap();
        assert_eq!(y, vec![1.5, -0.5]);
    }

    #[test]
    fn targets_done_ignores_next_state() {
        let params = tiny_params(4);
        let noise = NoiseDraw::zeros(&params.layout);
        let e = exp_with(true, 0.25, mask([true; 8]));
        let y = compute_targets(&[&e], &params, 0.99, true, &noise).unwrap();
        assert_eq!(y, vec![0.25]);
    }

    #[test]
    fn targets_censoring_excludes_invalid_max() {
        let params = tiny_params(5);
        let noise = NoiseDraw::zeros(&params.layout);
        let e_open = exp_with(false, 0.0, mask([true; 8]));
        let q = forward(&params, e_open.s_next.as_ref(), &noise);
        let best = greedy_argmax(&q);
        // Invalidate the raw argmax; the censored target must use the
        // best valid Q instead.
        let mut m = [true; 8];
        m[best] = false;
        let e_cens = exp_with(false, 0.0, mask(m));

        let y_raw = compute_targets(&[&e_open], &params, 1.0, false, &noise).unwrap()[0];
        let y_cens = compute_targets(&[&e_cens], &params, 1.0, true, &noise).unwrap()[0];
        let best_valid = q
            .iter()
            .enumerate()
            .filter(|(a, _)| *a != best)
            .map(|(_, v)| *v)
            .fold(f64::MIN, f64::max);
        assert!((y_raw - q[best]).abs() < 1e-12);
        assert!((y_cens - best_valid).abs() < 1e-12);
        assert!(y_cens <= y_raw);
    }

    fn open_map(w: usize, h: usize) -> Arc<NavMap> {
        let mut text = String::from("cellsize 0.225\n");
        for _ in 0..h {
            text.push_str(&"1".repeat(w));
            text.push('\n');
        }
        Arc::new(NavMap::parse(&text).unwrap())
    }

    fn smoke_agent_cfg(map: &NavMap, episodes: usize) -> AgentConfig {
        let network = NetworkConfig {
            in_channels: 3,
            in_height: map.height,
            in_width: map.width,
            conv_filters: vec![4],
            fc_widths: vec![16],
            head_width: 8,
            noisy: true,
        };
        AgentConfig {
            buffer_capacity: 5_000,
            learning_rate: 1e-3,
            episodes,
            ..AgentConfig::defaults(network, episodes)
        }
    }

    #[test]
    fn censored_training_has_zero_collisions_and_deterministic_log() {
        let map = open_map(12, 10);
        let mut env_cfg = EnvConfig::static_default(Arc::clone(&map), 0);
        env_cfg.step_budget = 20;
        let agent_cfg = smoke_agent_cfg(&map, 12);
        let (p1, log1) = train(&env_cfg, &agent_cfg, 99).unwrap();
        let (p2, log2) = train(&env_cfg, &agent_cfg, 99).unwrap();
        assert_eq!(log1.total_collisions(), 0);
        assert_eq!(p1.data, p2.data);
        for (a, b) in log1.episodes.iter().zip(&log2.episodes) {
            // wall_ms is the only non-deterministic field.
            assert_eq!(a.episode, b.episode);
            assert_eq!(a.cumulative_reward, b.cumulative_reward);
            assert_eq!(a.i_t, b.i_t);
            assert_eq!(a.collisions, b.collisions);
            assert_eq!(a.epsilon, b.epsilon);
        }
    }

    #[test]
    fn training_log_csv_shape() {
        let log = TrainingLog {
            episodes: vec![EpisodeStats {
                episode: 0,
                cumulative_reward: 1.25,
                i_t: 3.5,
                collisions: 2,
                kappa_moves: 4,
                epsilon: 0.5,
                wall_ms: 12,
            }],
        };
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "episode,cumulative_reward,I_T,collisions,epsilon,wall_ms"
        );
        assert_eq!(lines.next().unwrap(), "0,1.25,3.5,2,0.5,12");
    }

    #[test]
    fn reward_improves_on_open_water() {
        let map = open_map(12, 10);
        let mut env_cfg = EnvConfig::static_default(Arc::clone(&map), 0);
        env_cfg.step_budget = 25;
        let agent_cfg = smoke_agent_cfg(&map, 300);
        let (_, log) = train(&env_cfg, &agent_cfg, 7).unwrap();
        let first: f64 = log.episodes[..50]
            .iter()
            .map(|e| e.cumulative_reward)
            .sum::<f64>()
            / 50.0;
        let last: f64 = log.episodes[250..]
            .iter()
            .map(|e| e.cumulative_reward)
            .sum::<f64>()
            / 50.0;
        assert!(
            last > first,
            "no learning progress: first-50 mean {first}, last-50 mean {last}"
        );
    }
}
