//! Classical comparison planners, all constrained to valid actions only:
//! Safe Random, Lawn Mower, Non-Reactive Random Coverage (NRRC), and
//! uncertainty-greedy (I-greedy).

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

use crate::nav_map::{
    move_endpoint, shortest_path, valid_action_mask, ActionMask, NavMap, Position, NUM_ACTIONS,
};

/// Axial action indices: S, E, N, W.
const AXIAL: [usize; 4] = [0, 2, 4, 6];

/// σ threshold below which a cell counts as covered; I-greedy retargets
/// when its goal drops below this.
pub const COVERAGE_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Planner {
    Random,
    LawnMower,
    Nrrc,
    IGreedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LmPhase {
    Sweep,
    Shifted,
}

/// Per-episode planner memory.
pub struct PlannerState {
    pub kind: Planner,
    d_meas: f64,
    rng: ChaCha12Rng,
    /// Current travel direction (lawn mower sweep axis / NRRC heading).
    last_dir: Option<usize>,
    /// Lawn mower: fixed perpendicular advance direction, chosen at reset.
    advance: usize,
    phase: LmPhase,
    /// I-greedy: current goal cell.
    goal: Option<usize>,
    /// I-greedy: goals abandoned after stalling, excluded from retargeting.
    banned: std::collections::HashSet<usize>,
    /// Steps without sigma progress at the current goal.
    stall: usize,
    last_goal_sigma: f64,
}

impl PlannerState {
    pub fn new(kind: Planner, d_meas: f64, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let sweep = AXIAL[rng.random_range(0..4)];
        // Perpendicular to the sweep axis, side chosen at random.
        let advance = if rng.random::<bool>() {
            (sweep + 2) % NUM_ACTIONS
        } else {
            (sweep + 6) % NUM_ACTIONS
        };
        Self {
            kind,
            d_meas,
            rng,
            last_dir: Some(sweep),
            advance,
            phase: LmPhase::Sweep,
            goal: None,
            banned: std::collections::HashSet::new(),
            stall: 0,
            last_goal_sigma: f64::INFINITY,
        }
    }

    pub fn step(&mut self, map: &NavMap, pos: &Position, uncertainty: &[f64]) -> usize {
        match self.kind {
            Planner::Random => random_step(map, pos, self.d_meas, &mut self.rng),
            Planner::LawnMower => lawnmower_step(map, pos, self),
            Planner::Nrrc => nrrc_step(map, pos, self),
            Planner::IGreedy => igreedy_step(map, pos, self, uncertainty),
        }
    }
}

fn valid_actions(mask: &ActionMask) -> Vec<usize> {
    (0..NUM_ACTIONS).filter(|&a| mask.valid[a]).collect()
}

fn reverse(a: usize) -> usize {
    (a + 4) % NUM_ACTIONS
}

/// Uniform over valid actions.
pub fn random_step(map: &NavMap, pos: &Position, d_meas: f64, rng: &mut ChaCha12Rng) -> usize {
    let mask = valid_action_mask(map, pos, d_meas);
    let valid = valid_actions(&mask);
    assert!(!valid.is_empty(), "planner invoked with no valid action");
    valid[rng.random_range(0..valid.len())]
}

/// Boustrophedon sweep: go straight until blocked, then one step in the
/// advance direction and reverse the sweep. Falls back to a random valid
/// action when both sweep and advance are blocked.
pub fn lawnmower_step(map: &NavMap, pos: &Position, state: &mut PlannerState) -> usize {
    let mask = valid_action_mask(map, pos, state.d_meas);
    if state.phase == LmPhase::Shifted {
        let rev = reverse(state.last_dir.expect("lawn mower always has a sweep dir"));
        state.last_dir = Some(rev);
        state.phase = LmPhase::Sweep;
    }
    let sweep = state.last_dir.unwrap();
    if mask.valid[sweep] {
        return sweep;
    }
    if mask.valid[state.advance] {
        state.phase = LmPhase::Shifted;
        return state.advance;
    }
    // Degenerate pocket: take any valid action; adopt it as the new sweep
    // axis if it is axial.
    let valid = valid_actions(&mask);
    assert!(!valid.is_empty(), "planner invoked with no valid action");
    let pick = valid[state.rng.random_range(0..valid.len())];
    if AXIAL.contains(&pick) {
        state.last_dir = Some(pick);
    }
    pick
}

/// Keep the current heading while valid; when blocked, sample a new valid
/// direction excluding both the blocked heading and its immediate reverse
/// (relaxed progressively if that leaves no option).
pub fn nrrc_step(map: &NavMap, pos: &Position, state: &mut PlannerState) -> usize {
    let mask = valid_action_mask(map, pos, state.d_meas);
    if let Some(dir) = state.last_dir {
        if mask.valid[dir] {
            return dir;
        }
    }
    let valid = valid_actions(&mask);
    assert!(!valid.is_empty(), "planner invoked with no valid action");
    let prev = state.last_dir;
    let forbidden = |a: usize| prev == Some(a) || prev.map(reverse) == Some(a);
    let mut pool: Vec<usize> = valid.iter().cloned().filter(|&a| !forbidden(a)).collect();
    if pool.is_empty() {
        pool = valid.iter().cloned().filter(|&a| prev != Some(a)).collect();
    }
    if pool.is_empty() {
        pool = valid;
    }
    let pick = pool[state.rng.random_range(0..pool.len())];
    state.last_dir = Some(pick);
    pick
}

/// Picks the highest-σ water cell as goal (retargeting once its σ falls
/// below the coverage threshold) and takes the valid action whose endpoint
/// minimizes the remaining shortest-path distance to it.
pub fn igreedy_step(
    map: &NavMap,
    pos: &Position,
    state: &mut PlannerState,
    uncertainty: &[f64],
) -> usize {
    let cur = map.cell_at(pos).expect("I-greedy position off-map");

    // A goal is spent once covered or once the agent has arrived next to
    // it: the fixed move length cannot place a sample arbitrarily close to
    // the goal center, so waiting for sigma to cross the threshold there
    // can deadlock the planner.
    let arrived = |g: usize| {
        let (gr, gc) = map.cell_rc(g);
        let (cr, cc) = map.cell_rc(cur);
        gr.abs_diff(cr).max(gc.abs_diff(cc)) <= 1
    };
    // Stagnation escape: move-length parity can make some goals impossible
    // to approach closer than two cells, freezing sigma there. Ban a goal
    // after several steps without progress and move on.
    if let Some(g) = state.goal {
        if uncertainty[g] < state.last_goal_sigma - 1e-3 {
            state.stall = 0;
        } else {
            state.stall += 1;
        }
        state.last_goal_sigma = uncertainty[g];
        if state.stall >= 5 {
            state.banned.insert(g);
            state.goal = None;
        }
    }

    let need_retarget = match state.goal {
        None => true,
        Some(g) => uncertainty[g] < COVERAGE_THRESHOLD || arrived(g),
    };
    if need_retarget {
        state.goal = pick_goal(map, cur, uncertainty, &state.banned);
        if state.goal.is_none() && !state.banned.is_empty() {
            state.banned.clear();
            state.goal = pick_goal(map, cur, uncertainty, &state.banned);
        }
        state.stall = 0;
        state.last_goal_sigma = state.goal.map_or(f64::INFINITY, |g| uncertainty[g]);
    }

    let mask = valid_action_mask(map, pos, state.d_meas);
    let valid = valid_actions(&mask);
    assert!(!valid.is_empty(), "planner invoked with no valid action");

    let goal = match state.goal {
        Some(g) => g,
        // Everything covered or unreachable: wander safely.
        None => return valid[state.rng.random_range(0..valid.len())],
    };

    let mut best: Option<(usize, usize)> = None; // (hops, action)
    for &a in &valid {
        let end = move_endpoint(pos, a, state.d_meas);
        let Some(cell) = map.cell_at(&end) else {
            continue;
        };
        let path = shortest_path(map, cell, goal).unwrap_or_default();
        if path.is_empty() {
            continue;
        }
        let hops = path.len();
        if best.map_or(true, |(bh, ba)| hops < bh || (hops == bh && a < ba)) {
            best = Some((hops, a));
        }
    }
    match best {
        Some((_, a)) => a,
        None => valid[state.rng.random_range(0..valid.len())],
    }
}

/// Highest-σ water cell reachable from `from`, ties toward the lowest cell
/// index; falls down the σ ranking past unreachable cells.
fn pick_goal(
    map: &NavMap,
    from: usize,
    uncertainty: &[f64],
    banned: &std::collections::HashSet<usize>,
) -> Option<usize> {
    let mut cells: Vec<usize> = map
        .water_cells()
        .iter()
        .cloned()
        .filter(|c| !banned.contains(c))
        .collect();
    cells.sort_by(|&a, &b| {
        uncertainty[b]
            .partial_cmp(&uncertainty[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    for cell in cells {
        if uncertainty[cell] < COVERAGE_THRESHOLD {
            return None; // everything below threshold
        }
        match shortest_path(map, from, cell) {
            Ok(path) if !path.is_empty() => return Some(cell),
            _ => continue,
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nav_map::NavMap;

    fn open_map(w: usize, h: usize) -> NavMap {
        let mut text = String::from("cellsize 0.225\n");
        for _ in 0..h {
            text.push_str(&"1".repeat(w));
            text.push('\n');
        }
        NavMap::parse(&text).unwrap()
    }

    const D: f64 = 0.675;

    #[test]
    fn random_uniform_in_open_water() {
        let map = open_map(20, 20);
        let pos = map.cell_center(10 * 20 + 10);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut counts = [0usize; 8];
        let draws = 100_000;
        for _ in 0..draws {
            counts[random_step(&map, &pos, D, &mut rng)] += 1;
        }
        for (a, &c) in counts.iter().enumerate() {
            let f = c as f64 / draws as f64;
            assert!((f - 0.125).abs() < 0.02, "action {a}: freq {f}");
        }
    }

    #[test]
    fn random_single_valid_action() {
        // 5x1 channel: from the west end, with d_meas spanning 3 cells,
        // only due-east stays in water.
        let map = NavMap::parse("cellsize 0.225\n11111\n").unwrap();
        let pos = map.cell_center(0);
        let mask = valid_action_mask(&map, &pos, D);
        assert_eq!(mask.count_valid(), 1);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(random_step(&map, &pos, D, &mut rng), 2);
        }
    }

    #[test]
    fn random_never_invalid_long_rollout() {
        for planner in [
            Planner::Random,
            Planner::LawnMower,
            Planner::Nrrc,
            Planner::IGreedy,
        ] {
            let map = open_map(10, 8);
            let mut pos = map.cell_center(4 * 10 + 4);
            let mut state = PlannerState::new(planner, D, 5);
            let sigma = vec![1.0; map.num_cells()];
            for step in 0..10_000 {
                let mask = valid_action_mask(&map, &pos, D);
                let a = state.step(&map, &pos, &sigma);
                assert!(mask.valid[a], "{planner:?} step {step}: invalid action {a}");
                pos = move_endpoint(&pos, a, D);
            }
        }
    }

    #[test]
    fn lawnmower_shift_and_reverse_at_wall() {
        let map = open_map(12, 12);
        // Start mid-map sweeping east with advance north.
        let mut state = PlannerState::new(Planner::LawnMower, D, 0);
        state.last_dir = Some(2); // E
        state.advance = 4; // N
        state.phase = LmPhase::Sweep;
        let mut pos = map.cell_center(6 * 12 + 4);
        // Sweep east until the east wall blocks; expect N then W.
        let mut actions = Vec::new();
        for _ in 0..12 {
            let a = lawnmower_step(&map, &pos, &mut state);
            actions.push(a);
            pos = move_endpoint(&pos, a, D);
            if actions.ends_with(&[4, 6]) {
                break;
            }
        }
        assert!(
            actions.windows(2).any(|w| w == [4, 6]),
            "no N->W maneuver in {actions:?}"
        );
        // Everything before the shift was due east.
        let shift_at = actions.iter().position(|&a| a == 4).unwrap();
        assert!(actions[..shift_at].iter().all(|&a| a == 2));
    }

    #[test]
    fn lawnmower_continues_mid_sweep() {
        let map = open_map(12, 12);
        let mut state = PlannerState::new(Planner::LawnMower, D, 1);
        state.last_dir = Some(6); // W
        state.phase = LmPhase::Sweep;
        let pos = map.cell_center(6 * 12 + 6);
        assert_eq!(lawnmower_step(&map, &pos, &mut state), 6);
    }

    #[test]
    fn nrrc_keeps_heading_until_blocked() {
        let map = open_map(12, 12);
        let mut state = PlannerState::new(Planner::Nrrc, D, 2);
        state.last_dir = Some(0); // S
        let pos = map.cell_center(3 * 12 + 6);
        assert_eq!(nrrc_step(&map, &pos, &mut state), 0);
    }

    #[test]
    fn nrrc_never_repeats_blocked_direction_or_reverse() {
        let map = open_map(12, 12);
        // Position at the south wall, heading south: blocked.
        let pos = map.cell_center(11 * 12 + 6);
        let mut freq = [0usize; 8];
        let draws = 100_000;
        let mut state = PlannerState::new(Planner::Nrrc, D, 9);
        for _ in 0..draws {
            state.last_dir = Some(0);
            freq[nrrc_step(&map, &pos, &mut state)] += 1;
        }
        assert_eq!(freq[0], 0, "repeated the blocked direction");
        assert_eq!(freq[4], 0, "took the immediate reverse");
        // Remaining valid alternatives at the south wall away from corners:
        // E, NE, NW, W (SE/SW leave the map). Uniform within 2%.
        let allowed = [2usize, 3, 5, 6];
        for &a in &allowed {
            let f = freq[a] as f64 / draws as f64;
            assert!((f - 0.25).abs() < 0.02, "action {a}: freq {f}");
        }
    }

    #[test]
    fn igreedy_heads_straight_to_goal() {
        let map = open_map(12, 12);
        let mut state = PlannerState::new(Planner::IGreedy, D, 4);
        let pos = map.cell_center(8 * 12 + 6);
        // Unique uncertainty peak due north of the agent.
        let mut sigma = vec![0.01; map.num_cells()];
        sigma[2 * 12 + 6] = 1.0;
        let a = igreedy_step(&map, &pos, &mut state, &sigma);
        assert_eq!(a, 4, "expected due-north move");
        assert_eq!(state.goal, Some(2 * 12 + 6));
    }

    #[test]
    fn igreedy_fresh_map_targets_lowest_index() {
        let map = open_map(6, 6);
        let mut state = PlannerState::new(Planner::IGreedy, D, 5);
        let pos = map.cell_center(3 * 6 + 3);
        let sigma = vec![1.0; map.num_cells()];
        igreedy_step(&map, &pos, &mut state, &sigma);
        assert_eq!(state.goal, Some(0));
    }

    #[test]
    fn igreedy_matches_exhaustive_per_action_oracle() {
        let map = {
            // Non-convex map with a land block in the middle.
            let text = "cellsize 0.225\n\
                        111111111\n\
                        111111111\n\
                        111000111\n\
                        111000111\n\
                        111000111\n\
                        111111111\n\
                        111111111\n";
            NavMap::parse(text).unwrap()
        };
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..30 {
            let start = map.water_cells()[rng.random_range(0..map.num_water_cells())];
            let pos = map.cell_center(start);
            let mut sigma = vec![0.0; map.num_cells()];
            for &c in map.water_cells() {
                sigma[c] = rng.random::<f64>();
            }
            let mut state = PlannerState::new(Planner::IGreedy, D, rng.random());
            let a = igreedy_step(&map, &pos, &mut state, &sigma);
            let goal = state.goal.unwrap();

            // Oracle: brute-force evaluate every valid action's endpoint.
            let mask = valid_action_mask(&map, &pos, D);
            let mut best: Option<(usize, usize)> = None;
            for cand in 0..NUM_ACTIONS {
                if !mask.valid[cand] {
                    continue;
                }
                let end = move_endpoint(&pos, cand, D);
                let cell = map.cell_at(&end).unwrap();
                let path = shortest_path(&map, cell, goal).unwrap();
                if path.is_empty() {
                    continue;
                }
                if best.map_or(true, |(bh, _)| path.len() < bh) {
                    best = Some((path.len(), cand));
                }
            }
            assert_eq!(a, best.unwrap().1);
        }
    }

    #[test]
    fn igreedy_retargets_when_goal_covered() {
        let map = open_map(6, 6);
        let mut state = PlannerState::new(Planner::IGreedy, D, 8);
        let pos = map.cell_center(3 * 6 + 3);
        let mut sigma = vec![1.0; map.num_cells()];
        igreedy_step(&map, &pos, &mut state, &sigma);
        let g0 = state.goal.unwrap();
        sigma[g0] = 0.01; // goal now covered
        igreedy_step(&map, &pos, &mut state, &sigma);
        let g1 = state.goal.unwrap();
        assert_ne!(g0, g1);
        assert!(sigma[g1] >= COVERAGE_THRESHOLD);
    }

    #[test]
    fn igreedy_skips_unreachable_peak() {
        // Two basins separated by land; the higher-σ cell is in the far
        // basin and must be skipped for the best reachable one.
        let map = NavMap::parse("cellsize 0.225\n11011\n11011\n").unwrap();
        let mut state = PlannerState::new(Planner::IGreedy, 0.225, 9);
        let pos = map.cell_center(0);
        let mut sigma = vec![0.0; map.num_cells()];
        sigma[4] = 1.0; // unreachable right basin
        sigma[6] = 0.8; // reachable (row 1, col 1)
        igreedy_step(&map, &pos, &mut state, &sigma);
        assert_eq!(state.goal, Some(6));
    }
}
