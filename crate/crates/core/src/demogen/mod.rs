//! Demonstration corpus: scripted controllers, episode rollout, 4-step
//! chunking into training records, stop augmentation and the on-disk
//! dataset.

mod chunk;
mod corpus;
mod dataset;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gridsim::{
    bfs_field, distance_field, neighbours, observe, sample_spawn, step, Action, Cell, DistanceField, Heading,
    Observation, Pose, SensorConfig, World, UNREACHABLE,
};
use crate::mapper::{SemanticMap, FREE};
use crate::{rng, Error, Result};

pub use chunk::{augment_stops, chunk_steps, frame_dim, frame_features, StepRecord, HISTORY, HORIZON, STOP_SHARE_CAP};
pub use corpus::{collect_corpus, plan_episodes, split_mix, CollectConfig, EpisodeSpec};
pub use dataset::{label_dataset, Dataset, DatasetMeta, DatasetWriter, RecordHeader, BLOB_FILE, INDEX_FILE, META_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoKind {
    Expert,
    Frontier,
    Noisy,
}

impl DemoKind {
    pub const ALL: [DemoKind; 3] = [DemoKind::Expert, DemoKind::Frontier, DemoKind::Noisy];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub budget: usize,
    pub sensor: SensorConfig,
    /// Random-action probability for the noisy demonstrator.
    pub epsilon: f64,
    pub min_spawn_distance: u32,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig { budget: 200, sensor: SensorConfig::default(), epsilon: 0.3, min_spawn_distance: 3 }
    }
}

/// State handed to a controller before each decision.
pub struct AgentView<'a> {
    pub world: &'a World,
    pub goal: u8,
    pub t: usize,
    pub pose: Pose,
    /// Allocentric map including the current observation.
    pub map: &'a SemanticMap,
    /// Every observation so far, the current one last.
    pub observations: &'a [Observation],
    pub actions: &'a [Action],
}

/// Something that picks actions. A controller may return a chunk of several
/// actions; the episode loop executes them in order, observing after each,
/// and re-plans once the chunk is used up or a Stop is executed.
pub trait Controller {
    fn plan(&mut self, view: &AgentView<'_>) -> Result<Vec<Action>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub pose: Pose,
    pub observation: Observation,
    pub action: Action,
    pub collided: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub world_seed: u64,
    pub goal: u8,
    pub kind: Option<DemoKind>,
    pub seed: u64,
    pub steps: Vec<Step>,
    /// Allocentric map after integrating the observation at step `t`.
    pub maps: Vec<SemanticMap>,
    pub final_pose: Pose,
    pub outcome: Outcome,
    /// Geodesic distance to the goal before each action plus after the last
    /// (`steps.len() + 1` entries).
    pub distances: Vec<f64>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn shortest_path(&self) -> f64 {
        self.distances[0]
    }

    /// Forward attempts, collisions included.
    pub fn path_length(&self) -> usize {
        self.steps.iter().filter(|s| s.action == Action::Forward).count()
    }

    pub fn stop_issued(&self) -> bool {
        self.steps.last().is_some_and(|s| s.action == Action::Stop)
    }

    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action).collect()
    }
}

/// Success radius in cells.
pub const SUCCESS_RADIUS: u32 = 1;

/// Runs `controller` from `spawn` until it stops or the budget runs out.
pub fn run_episode(
    world: &World,
    goal: u8,
    spawn: Pose,
    cfg: &EpisodeConfig,
    controller: &mut dyn Controller,
) -> Result<Episode> {
    let goal_cells = world.goal_cells(goal);
    if goal_cells.is_empty() {
        return Err(Error::Precondition(format!("category {goal} has no instance in this world")));
    }
    if !world.is_free(spawn.cell) {
        return Err(Error::Precondition(format!("spawn {:?} is not a free cell", spawn.cell)));
    }
    let field = distance_field(world, &goal_cells);
    let dist = |p: Pose| match field.get(p.cell) {
        UNREACHABLE => f64::INFINITY,
        d => d as f64,
    };
    let mut map = SemanticMap::for_world(world);
    let mut pose = spawn;
    let mut steps: Vec<Step> = Vec::new();
    let mut maps = Vec::new();
    let mut observations = Vec::new();
    let mut actions = Vec::new();
    let mut distances = Vec::new();
    let mut outcome = Outcome::Timeout;
    let mut pending: std::collections::VecDeque<Action> = Default::default();

    'outer: while steps.len() < cfg.budget {
        let obs = observe(world, pose, &cfg.sensor);
        map.integrate(&obs)?;
        observations.push(obs.clone());
        if pending.is_empty() {
            let view = AgentView {
                world,
                goal,
                t: steps.len(),
                pose,
                map: &map,
                observations: &observations,
                actions: &actions,
            };
            pending.extend(controller.plan(&view)?);
            if pending.is_empty() {
                return Err(Error::Precondition("controller returned no actions".into()));
            }
        }
        let action = pending.pop_front().expect("non-empty plan");
        let out = step(world, pose, action);
        distances.push(dist(pose));
        maps.push(map.clone());
        steps.push(Step { pose, observation: obs, action, collided: out.collided });
        actions.push(action);
        pose = out.pose;
        if out.stopped {
            outcome = if field.get(pose.cell) <= SUCCESS_RADIUS { Outcome::Success } else { Outcome::Failure };
            break 'outer;
        }
    }
    distances.push(dist(pose));
    Ok(Episode {
        world_seed: world.seed,
        goal,
        kind: None,
        seed: 0,
        steps,
        maps,
        final_pose: pose,
        outcome,
        distances,
    })
}

/// Rolls out one scripted demonstrator. Spawn and any action noise are drawn
/// from `seed`.
pub fn run_policy_episode(world: &World, goal: u8, kind: DemoKind, seed: u64, cfg: &EpisodeConfig) -> Result<Episode> {
    let spawn = spawn_for(world, goal, seed, cfg)?;
    let mut ep = match kind {
        DemoKind::Expert => run_episode(world, goal, spawn, cfg, &mut ExpertController::default())?,
        DemoKind::Frontier => run_episode(world, goal, spawn, cfg, &mut FrontierController)?,
        DemoKind::Noisy => {
            let mut c = NoisyController { inner: FrontierController, epsilon: cfg.epsilon, rng: rng::rng(rng::substream(seed, "noise")) };
            run_episode(world, goal, spawn, cfg, &mut c)?
        }
    };
    ep.kind = Some(kind);
    ep.seed = seed;
    Ok(ep)
}

/// Spawn pose for an episode seed: a free cell at least
/// `min_spawn_distance` from the goal, falling back to any reachable
/// non-goal cell in cramped worlds.
pub fn spawn_for(world: &World, goal: u8, seed: u64, cfg: &EpisodeConfig) -> Result<Pose> {
    let goal_cells = world.goal_cells(goal);
    if goal_cells.is_empty() {
        return Err(Error::Precondition(format!("category {goal} has no instance in this world")));
    }
    let field = distance_field(world, &goal_cells);
    let mut r = rng::rng(rng::substream(seed, "spawn"));
    sample_spawn(world, &field, &mut r, cfg.min_spawn_distance)
        .or_else(|| sample_spawn(world, &field, &mut r, 1))
        .ok_or_else(|| Error::Precondition(format!("no spawn cell can reach category {goal}")))
}

fn heading_to(from: Cell, to: Cell) -> Heading {
    match (to.0 - from.0, to.1 - from.1) {
        (0, -1) => Heading::N,
        (1, 0) => Heading::E,
        (0, 1) => Heading::S,
        _ => Heading::W,
    }
}

/// First action toward facing `want`; the reverse direction turns right.
pub fn turn_toward(current: Heading, want: Heading) -> Action {
    if want == current {
        Action::Forward
    } else if want == current.left() {
        Action::TurnLeft
    } else {
        Action::TurnRight
    }
}

/// Descends `field` from `pose`, preferring the direction needing the fewest
/// turns (ahead, right, left, behind). `None` at a local minimum.
fn descend(field: &DistanceField, pose: Pose) -> Option<Action> {
    let here = field.get(pose.cell);
    if here == UNREACHABLE || here == 0 {
        return None;
    }
    let h = pose.heading;
    for want in [h, h.right(), h.left(), h.right().right()] {
        let (dx, dy) = want.vector();
        let next = (pose.cell.0 + dx, pose.cell.1 + dy);
        if field.get(next) == here - 1 {
            return Some(turn_toward(h, want));
        }
    }
    None
}

/// Follows the true shortest path and stops on a goal cell.
#[derive(Default)]
pub struct ExpertController {
    field: Option<(u8, DistanceField)>,
}

impl Controller for ExpertController {
    fn plan(&mut self, view: &AgentView<'_>) -> Result<Vec<Action>> {
        if self.field.as_ref().is_none_or(|(g, _)| *g != view.goal) {
            self.field = Some((view.goal, distance_field(view.world, &view.world.goal_cells(view.goal))));
        }
        let field = &self.field.as_ref().expect("field set").1;
        Ok(vec![descend(field, view.pose).unwrap_or(Action::Stop)])
    }
}

/// Explores toward the nearest frontier of its own map until the goal
/// category appears in it, then walks there over known free cells.
pub struct FrontierController;

impl FrontierController {
    fn known_field(view: &AgentView<'_>, sources: &[Cell]) -> DistanceField {
        let map = view.map;
        bfs_field(view.world.width, view.world.height, sources, |c| map.get_world(FREE, c))
    }

    fn unknown(view: &AgentView<'_>, c: Cell) -> bool {
        view.world.in_bounds(c) && !view.map.is_known(c)
    }

    pub fn next_action(view: &AgentView<'_>) -> Action {
        let map = view.map;
        let pose = view.pose;
        if map.has_category(view.goal) {
            let targets: Vec<Cell> = map.category_cells(view.goal);
            let field = Self::known_field(view, &targets);
            match field.get(pose.cell) {
                0 => return Action::Stop,
                UNREACHABLE => {}
                _ => {
                    if let Some(a) = descend(&field, pose) {
                        return a;
                    }
                }
            }
        }
        let from_agent = Self::known_field(view, &[pose.cell]);
        let mut best: Option<(u32, Cell)> = None;
        for y in 0..view.world.height as i32 {
            for x in 0..view.world.width as i32 {
                let c = (x, y);
                let d = from_agent.get(c);
                if d == UNREACHABLE || !neighbours(c).iter().any(|&n| Self::unknown(view, n)) {
                    continue;
                }
                // row-major scan keeps the first (smallest y, then x) among equals
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, c));
                }
            }
        }
        let Some((d, target)) = best else {
            // nothing left to explore and the goal was never seen
            return Action::Stop;
        };
        if d == 0 {
            let h = pose.heading;
            for want in [h, h.left(), h.right(), h.right().right()] {
                let (dx, dy) = want.vector();
                if Self::unknown(view, (pose.cell.0 + dx, pose.cell.1 + dy)) {
                    return turn_toward(h, want);
                }
            }
        }
        let field = Self::known_field(view, &[target]);
        descend(&field, pose).unwrap_or_else(|| {
            let next = neighbours(pose.cell).into_iter().find(|&n| field.get(n) == d - 1).unwrap_or(target);
            turn_toward(pose.heading, heading_to(pose.cell, next))
        })
    }
}

impl Controller for FrontierController {
    fn plan(&mut self, view: &AgentView<'_>) -> Result<Vec<Action>> {
        Ok(vec![Self::next_action(view)])
    }
}

/// Frontier explorer that takes a uniformly random movement action (never
/// Stop) with probability `epsilon`.
pub struct NoisyController<R> {
    pub inner: FrontierController,
    pub epsilon: f64,
    pub rng: R,
}

impl<R: Rng> Controller for NoisyController<R> {
    fn plan(&mut self, view: &AgentView<'_>) -> Result<Vec<Action>> {
        if self.rng.gen_bool(self.epsilon) {
            let a = [Action::Forward, Action::TurnLeft, Action::TurnRight][self.rng.gen_range(0..3)];
            return Ok(vec![a]);
        }
        self.inner.plan(view)
    }
}

/// Uniformly random actions over the full vocabulary, Stop included.
pub struct RandomController<R> {
    pub rng: R,
}

impl<R: Rng> Controller for RandomController<R> {
    fn plan(&mut self, _view: &AgentView<'_>) -> Result<Vec<Action>> {
        Ok(vec![Action::ALL[self.rng.gen_range(0..Action::ALL.len())]])
    }
}

/// Replays a fixed action list, then stops.
pub struct ScriptedController {
    pub actions: Vec<Action>,
    pub cursor: usize,
}

impl Controller for ScriptedController {
    fn plan(&mut self, _view: &AgentView<'_>) -> Result<Vec<Action>> {
        let a = self.actions.get(self.cursor).copied().unwrap_or(Action::Stop);
        self.cursor += 1;
        Ok(vec![a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridsim::{generate_world, WorldConfig};

    fn room(w: usize, h: usize, goal: Cell) -> World {
        let mut sem = vec![0; w * h];
        sem[goal.1 as usize * w + goal.0 as usize] = 1;
        World::from_parts(w, h, 2, vec![false; w * h], sem, 0)
    }

    #[test]
    fn expert_on_empty_world_walks_geodesic() {
        let w = room(12, 12, (9, 2));
        let ep = run_episode(&w, 1, Pose::new(2, 8, Heading::S), &EpisodeConfig::default(), &mut ExpertController::default())
            .unwrap();
        assert_eq!(ep.outcome, Outcome::Success);
        assert_eq!(ep.path_length() as f64, ep.shortest_path());
        assert_eq!(ep.shortest_path(), 13.0);
        assert_eq!(ep.distances.len(), ep.len() + 1);
        assert_eq!(*ep.distances.last().unwrap(), 0.0);
    }

    #[test]
    fn frontier_finds_goal_in_generated_worlds() {
        let cfg = EpisodeConfig::default();
        let mut successes = 0;
        for seed in 0..10 {
            let w = generate_world(seed, &WorldConfig::default()).unwrap();
            let goal = w.present_categories()[0];
            let ep = run_policy_episode(&w, goal, DemoKind::Frontier, seed, &cfg).unwrap();
            successes += (ep.outcome == Outcome::Success) as usize;
            for pair in ep.maps.windows(2) {
                assert!(pair[0].is_subset_of(&pair[1]));
            }
        }
        assert!(successes >= 8, "frontier succeeded {successes}/10");
    }

    #[test]
    fn noisy_never_shorter_than_expert_and_deterministic() {
        let cfg = EpisodeConfig::default();
        for seed in 0..8 {
            let w = generate_world(100 + seed, &WorldConfig::default()).unwrap();
            let goal = *w.present_categories().last().unwrap();
            let e = run_policy_episode(&w, goal, DemoKind::Expert, seed, &cfg).unwrap();
            let n = run_policy_episode(&w, goal, DemoKind::Noisy, seed, &cfg).unwrap();
            assert!(n.len() >= e.len());
            assert_eq!(n, run_policy_episode(&w, goal, DemoKind::Noisy, seed, &cfg).unwrap());
        }
    }

    #[test]
    fn always_forward_into_wall_times_out() {
        let mut w = room(6, 6, (1, 1));
        let i = w.index((3, 2));
        w.occupancy[i] = true;
        let w = World::from_parts(6, 6, 2, w.occupancy.clone(), w.semantic.clone(), 0);
        let cfg = EpisodeConfig { budget: 20, ..Default::default() };
        let mut c = ScriptedController { actions: vec![Action::Forward; 100], cursor: 0 };
        let ep = run_episode(&w, 1, Pose::new(3, 4, Heading::N), &cfg, &mut c).unwrap();
        assert_eq!(ep.outcome, Outcome::Timeout);
        assert_eq!(ep.len(), 20);
        assert_eq!(ep.path_length(), 20);
    }
}
