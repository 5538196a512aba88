//! Seeded procedural scenes, stack-and-place tasks with templated
//! instructions, expert trajectories and ground-truth goal directions.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::angle::{bearing_deg, normalize_deg};
use crate::panocam::true_direction_angles;
use crate::rng::seeded2;
use crate::world::{
    apply_action, check_goal_conditions, goal_region, in_goal_region, object_center, step_pose,
    Action, AgentPose, Cell, ClassVocab, GoalCondition, Heading, ObjectState, Scene, SceneObject,
    Subgoal, SubgoalKind, Task, Verb, Vocabulary, WorldError, WorldState,
};

const SCENE_ATTEMPTS: u64 = 32;
const TASK_ATTEMPTS: u64 = 16;
/// Fewest navigable cells a scene may have.
const MIN_NAVIGABLE: usize = 2;
/// Horizontal offsets of the two item slots on top of a receptacle.
const SLOT_OFFSETS: [f64; 2] = [-0.06, 0.06];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenError {
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error("scene generation failed after {0} attempts")]
    GenerationFailed(u64),
    #[error("infeasible task: {0}")]
    InfeasibleTask(String),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct GenParams {
    pub grid_width: u32,
    pub grid_height: u32,
    pub obstacle_density: f64,
    pub object_count: usize,
    pub class_vocab_size: usize,
    pub receptacle_fraction: f64,
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        Self {
            grid_width: 10,
            grid_height: 10,
            obstacle_density: 0.1,
            object_count: 6,
            class_vocab_size: ClassVocab::DEFAULT_SIZE,
            receptacle_fraction: 0.4,
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidParams(m.into()));
        if self.grid_width == 0 || self.grid_height == 0 {
            return bad("grid must be non-empty");
        }
        if !(0.0..1.0).contains(&self.obstacle_density) {
            return bad("obstacleDensity must lie in [0, 1)");
        }
        if self.object_count < 3 {
            return bad("objectCount must be at least 3");
        }
        if self.class_vocab_size < 2 {
            return bad("classVocabSize must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.receptacle_fraction) {
            return bad("receptacleFraction must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubgoalBoundary {
    pub subgoal_index: usize,
    pub start_timestep: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Trajectory {
    pub actions: Vec<Action>,
    /// `actions.len() + 1` poses.
    pub poses: Vec<AgentPose>,
    /// Sorted by `(subgoal_index, start_timestep)`; an empty navigation
    /// segment shares its start with the next subgoal.
    pub subgoal_boundaries: Vec<SubgoalBoundary>,
    pub scene_seed: u64,
    pub task_seed: u64,
}

impl Trajectory {
    /// Index of the subgoal active at timestep `t`, or `None` once every
    /// subgoal is done (the closing `Stop`).
    pub fn subgoal_at(&self, t: usize) -> Option<usize> {
        if t + 1 >= self.actions.len() && matches!(self.actions.last(), Some(Action::Stop)) {
            return None;
        }
        self.subgoal_boundaries
            .iter()
            .filter(|b| b.start_timestep <= t)
            .map(|b| b.subgoal_index)
            .next_back()
    }

    /// Start timestep of a subgoal.
    pub fn subgoal_start(&self, index: usize) -> Option<usize> {
        self.subgoal_boundaries
            .iter()
            .find(|b| b.subgoal_index == index)
            .map(|b| b.start_timestep)
    }
}

/// 4-connectivity of a cell set. The empty set counts as disconnected.
pub fn is_connected(cells: &BTreeSet<Cell>) -> bool {
    let Some(&first) = cells.iter().next() else {
        return false;
    };
    let mut seen = BTreeSet::new();
    seen.insert(first);
    let mut queue = VecDeque::from([first]);
    while let Some(c) = queue.pop_front() {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let n = c.offset(dx, dy);
            if cells.contains(&n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.len() == cells.len()
}

pub fn navigable_cells(scene: &Scene) -> BTreeSet<Cell> {
    let occupied = scene.occupied_cells();
    let mut out = BTreeSet::new();
    for cy in 0..scene.grid_height as i32 {
        for cx in 0..scene.grid_width as i32 {
            let c = Cell::new(cx, cy);
            if !occupied.contains(&c) {
                out.insert(c);
            }
        }
    }
    out
}

/// Procedurally generates a scene. Deterministic in `params.seed`; retries a
/// bounded number of times until the navigable region is connected and every
/// object can be reached.
pub fn generate_scene(params: &GenParams) -> Result<Scene, GenError> {
    params.validate()?;
    let vocab = ClassVocab::standard(params.class_vocab_size);
    for attempt in 0..SCENE_ATTEMPTS {
        if let Some(scene) = try_scene(params, &vocab, attempt) {
            return Ok(scene);
        }
    }
    Err(GenError::GenerationFailed(SCENE_ATTEMPTS))
}

fn try_scene(params: &GenParams, vocab: &ClassVocab, attempt: u64) -> Option<Scene> {
    let mut rng = seeded2(params.seed, attempt);
    let mut cells: Vec<Cell> = (0..params.grid_height as i32)
        .flat_map(|cy| (0..params.grid_width as i32).map(move |cx| Cell::new(cx, cy)))
        .collect();
    cells.shuffle(&mut rng);
    let n_obstacles = libm::round(params.obstacle_density * cells.len() as f64) as usize;
    let free = cells.split_off(n_obstacles);
    let obstacles: BTreeSet<Cell> = cells.into_iter().collect();
    let count = params.object_count;
    let n_rec = (libm::round(count as f64 * params.receptacle_fraction) as usize).clamp(1, count - 2);
    let mut floor: Vec<Cell> = free;
    let take_cell = |rng: &mut rand_chacha::ChaCha8Rng, floor: &mut Vec<Cell>| {
        if floor.is_empty() {
            None
        } else {
            let i = rng.random_range(0..floor.len());
            Some(floor.swap_remove(i))
        }
    };
    let cs = 0.25;
    let center_of = |c: Cell| ((f64::from(c.cx) + 0.5) * cs, (f64::from(c.cy) + 0.5) * cs);

    let mut objects: Vec<SceneObject> = Vec::with_capacity(count);
    let rec_classes = vocab.receptacle_ids();
    let pick_classes = vocab.pickable_ids();
    for _ in 0..n_rec {
        let cell = take_cell(&mut rng, &mut floor)?;
        let class_id = rng.random_range(rec_classes.clone());
        let extent = vocab.extent(class_id);
        let (x, y) = center_of(cell);
        objects.push(SceneObject {
            object_id: objects.len() as u32,
            class: vocab.class(class_id),
            center: [x, y, extent[2]],
            extent,
            is_receptacle: true,
            state: ObjectState::default(),
        });
    }
    let mut slots_used = vec![0usize; n_rec];
    for _ in n_rec..count {
        let class_id = rng.random_range(pick_classes.clone());
        let extent = vocab.extent(class_id);
        let open: Vec<usize> = (0..n_rec).filter(|&r| slots_used[r] < SLOT_OFFSETS.len()).collect();
        let on_receptacle = !open.is_empty() && rng.random_bool(0.6);
        let (center, placed_on) = if on_receptacle {
            let r = open[rng.random_range(0..open.len())];
            let base = &objects[r];
            let top = base.center[2] + base.extent[2];
            let c = [base.center[0] + SLOT_OFFSETS[slots_used[r]], base.center[1], top + extent[2]];
            slots_used[r] += 1;
            (c, Some(r as u32))
        } else {
            let cell = take_cell(&mut rng, &mut floor)?;
            let (x, y) = center_of(cell);
            ([x, y, extent[2]], None)
        };
        objects.push(SceneObject {
            object_id: objects.len() as u32,
            class: vocab.class(class_id),
            center,
            extent,
            is_receptacle: false,
            state: ObjectState { placed_on, ..ObjectState::default() },
        });
    }
    let scene = Scene {
        grid_width: params.grid_width,
        grid_height: params.grid_height,
        cell_size: cs,
        obstacles,
        objects,
        scene_seed: params.seed,
    };
    let nav = navigable_cells(&scene);
    if nav.len() < MIN_NAVIGABLE || !is_connected(&nav) {
        return None;
    }
    let reachable = scene.objects.iter().all(|o| !goal_region(&scene, scene.cell_of(o.center)).is_empty());
    reachable.then_some(scene)
}

/// Shortest action sequence from `start` into the goal region: breadth-first
/// search over `(cell, heading)` with unit cost per move and per rotation.
/// Ties resolve to the lexicographically smallest sequence under
/// `MoveAhead < RotateLeft45 < RotateRight45`. Pitch is left unchanged.
pub fn nav_plan(scene: &Scene, start: &AgentPose, goal_poses: &[AgentPose]) -> Option<Vec<Action>> {
    if in_goal_region(start, goal_poses) {
        return Some(Vec::new());
    }
    let w = scene.grid_width as usize;
    let h = scene.grid_height as usize;
    let node = |p: &AgentPose| (p.cell.cy as usize * w + p.cell.cx as usize) * 8 + p.heading.index() as usize;
    let mut parent: Vec<Option<(usize, u8)>> = vec![None; w * h * 8];
    let mut poses: Vec<Option<AgentPose>> = vec![None; w * h * 8];
    let start_node = node(start);
    poses[start_node] = Some(*start);
    let mut seen = vec![false; w * h * 8];
    seen[start_node] = true;
    let mut queue = VecDeque::from([start_node]);
    while let Some(n) = queue.pop_front() {
        let pose = poses[n].expect("queued nodes carry a pose");
        for (ai, action) in Action::NAVIGATION.iter().enumerate() {
            let Ok(next) = step_pose(scene, &pose, action) else { continue };
            let m = node(&next);
            if seen[m] {
                continue;
            }
            seen[m] = true;
            parent[m] = Some((n, ai as u8));
            poses[m] = Some(next);
            if in_goal_region(&next, goal_poses) {
                let mut actions = Vec::new();
                let mut cur = m;
                while let Some((p, a)) = parent[cur] {
                    actions.push(Action::NAVIGATION[a as usize]);
                    cur = p;
                }
                actions.reverse();
                return Some(actions);
            }
            queue.push_back(m);
        }
    }
    None
}

/// Expert demonstration: the shortest navigation for each navigation
/// subgoal, one interaction per manipulation subgoal and a closing `Stop`.
pub fn plan_expert(scene: &Scene, task: &Task) -> Result<Trajectory, GenError> {
    let infeasible = |m: String| GenError::InfeasibleTask(m);
    let mut state = WorldState::initial(scene, task.start_pose);
    let mut actions = Vec::new();
    let mut poses = vec![state.pose];
    let mut boundaries = Vec::with_capacity(task.subgoals.len());
    for sg in &task.subgoals {
        boundaries.push(SubgoalBoundary { subgoal_index: sg.index, start_timestep: actions.len() });
        let start = state.clone();
        let segment = match &sg.kind {
            SubgoalKind::Nav { goal_poses, .. } => nav_plan(scene, &state.pose, goal_poses)
                .ok_or_else(|| infeasible(format!("no path for subgoal {}", sg.index)))?,
            SubgoalKind::Manip { verb, target_object_id } => {
                vec![Action::Interact { verb: *verb, object_id: *target_object_id }]
            }
        };
        for a in segment {
            let (next, result) = apply_action(scene, &state, &a)?;
            if !result.is_success() {
                return Err(infeasible(format!("subgoal {}: {a:?} failed with {result:?}", sg.index)));
            }
            state = next;
            actions.push(a);
            poses.push(state.pose);
        }
        if !sg.is_satisfied(scene, &start, &state) {
            return Err(infeasible(format!("subgoal {} not satisfied by its expert segment", sg.index)));
        }
    }
    let (next, _) = apply_action(scene, &state, &Action::Stop)?;
    actions.push(Action::Stop);
    poses.push(next.pose);
    let (done, total) = check_goal_conditions(scene, &next, task);
    if done != total {
        return Err(infeasible(format!("expert satisfies {done} of {total} goal conditions")));
    }
    Ok(Trajectory {
        actions,
        poses,
        subgoal_boundaries: boundaries,
        scene_seed: task.scene_seed,
        task_seed: task.task_seed,
    })
}

/// World states along a trajectory, `states[t]` being the state before
/// `actions[t]`.
pub fn replay_states(scene: &Scene, task: &Task, actions: &[Action]) -> Result<Vec<WorldState>, WorldError> {
    let mut state = WorldState::initial(scene, task.start_pose);
    let mut out = Vec::with_capacity(actions.len() + 1);
    out.push(state.clone());
    for a in actions {
        state = apply_action(scene, &state, a)?.0;
        out.push(state.clone());
    }
    Ok(out)
}

/// Signed angle ψ in degrees, `(-180, 180]`, from the agent's heading to the
/// nearest goal cell (Euclidean on cell centers, ties to the lowest
/// `(cy, cx)`). Standing on a goal cell, ψ is the smallest rotation onto a
/// goal heading there, so it is 0 exactly when the pose is in the goal region.
pub fn goal_direction(pose: &AgentPose, goal_poses: &[AgentPose]) -> f64 {
    let here: Vec<Heading> =
        goal_poses.iter().filter(|g| g.cell == pose.cell).map(|g| g.heading).collect();
    if !here.is_empty() {
        for k in [0i32, 1, -1, 2, -2, 3, -3, 4] {
            let h = Heading::new((i32::from(pose.heading.index()) + k).rem_euclid(8) as u8);
            if here.contains(&h) {
                return normalize_deg(45.0 * f64::from(k));
            }
        }
    }
    let mut best: Option<(i64, (i32, i32), Cell)> = None;
    for g in goal_poses {
        let dx = i64::from(g.cell.cx - pose.cell.cx);
        let dy = i64::from(g.cell.cy - pose.cell.cy);
        let key = (dx * dx + dy * dy, (g.cell.cy, g.cell.cx), g.cell);
        if best.is_none_or(|b| (key.0, key.1) < (b.0, b.1)) {
            best = Some(key);
        }
    }
    let Some((_, _, goal)) = best else {
        return 0.0;
    };
    let bearing = bearing_deg(f64::from(goal.cx - pose.cell.cx), f64::from(goal.cy - pose.cell.cy));
    normalize_deg(bearing - pose.heading.degrees())
}

/// Generates a stack-and-place task: pick `A`, put it on receptacle `R`, pick
/// `B`, stack it on `A`. Each manipulation is preceded by a navigation
/// subgoal whose goal region is every pose from which the target is
/// reachable.
pub fn generate_task(scene: &Scene, classes: &ClassVocab, seed: u64) -> Result<Task, GenError> {
    let pickables: Vec<&SceneObject> = scene.objects.iter().filter(|o| !o.is_receptacle).collect();
    let receptacles: Vec<&SceneObject> = scene.objects.iter().filter(|o| o.is_receptacle).collect();
    if pickables.len() < 2 || receptacles.is_empty() {
        return Err(GenError::InfeasibleTask("scene needs two pickable objects and a receptacle".into()));
    }
    let navigable: Vec<Cell> = navigable_cells(scene).into_iter().collect();
    let vocab = Vocabulary::new(classes);
    let mut last_err = GenError::InfeasibleTask("no candidate task".into());
    for attempt in 0..TASK_ATTEMPTS {
        let mut rng = seeded2(seed ^ 0x7A5C_0000_0000_0000, attempt);
        let a = pickables[rng.random_range(0..pickables.len())];
        let targets: Vec<&&SceneObject> =
            receptacles.iter().filter(|r| a.state.placed_on != Some(r.object_id)).collect();
        if targets.is_empty() {
            continue;
        }
        let r = *targets[rng.random_range(0..targets.len())];
        let others: Vec<&&SceneObject> = pickables.iter().filter(|o| o.object_id != a.object_id).collect();
        let b = *others[rng.random_range(0..others.len())];
        let start_cell = navigable[rng.random_range(0..navigable.len())];
        let start_pose = AgentPose::new(start_cell, rng.random_range(0..8));

        let holder = |o: &SceneObject| o.state.placed_on.unwrap_or(o.object_id);
        let region = |o: &SceneObject| goal_region(scene, scene.cell_of(o.center));
        let nav = |index, target: u32, goal_poses| Subgoal {
            index,
            kind: SubgoalKind::Nav { target_object_id: target, goal_poses },
        };
        let manip = |index, verb, target: u32| Subgoal {
            index,
            kind: SubgoalKind::Manip { verb, target_object_id: target },
        };
        let subgoals = vec![
            nav(0, holder(a), region(a)),
            manip(1, Verb::PickUp, a.object_id),
            nav(2, r.object_id, region(r)),
            manip(3, Verb::PutDown, r.object_id),
            nav(4, holder(b), region(b)),
            manip(5, Verb::PickUp, b.object_id),
            nav(6, r.object_id, region(r)),
            manip(7, Verb::PutDown, r.object_id),
        ];
        let mut task = Task {
            start_pose,
            goal_conditions: vec![
                GoalCondition::PlacedOn { object_id: a.object_id, receptacle_id: r.object_id },
                GoalCondition::PlacedOn { object_id: b.object_id, receptacle_id: a.object_id },
            ],
            subgoals,
            goal_instruction: vocab.instruction("walk")?,
            step_instructions: Vec::new(),
            scene_seed: scene.scene_seed,
            task_seed: seed,
        };
        let initial = WorldState::initial(scene, start_pose);
        if check_goal_conditions(scene, &initial, &task).0 != 0 {
            continue;
        }
        let expert = match plan_expert(scene, &task) {
            Ok(t) => t,
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        let states = replay_states(scene, &task, &expert.actions)?;
        let name = |o: &SceneObject| classes.name(o.class.id);
        let at = |i: usize| &states[expert.subgoal_start(i).expect("every subgoal has a boundary")];
        let rec_of = |id: u32| scene.object(id).expect("holder exists");
        let np = |obj: &SceneObject, i: usize| format!("the {}{}", name(obj), side_phrase(scene, at(i), obj));
        let surfaces = [
            format!("walk to {}", np(rec_of(holder(a)), 0)),
            format!("pick up {}", np(a, 1)),
            format!("walk to {}", np(r, 2)),
            format!("put the {} on {}", name(a), np(r, 3)),
            format!("walk to {}", np(rec_of(holder(b)), 4)),
            format!("pick up {}", np(b, 5)),
            format!("walk to {}", np(r, 6)),
            format!("stack the {} on the {}", name(b), name(a)),
        ];
        task.step_instructions =
            surfaces.iter().map(|s| vocab.instruction(s)).collect::<Result<_, _>>()?;
        task.goal_instruction = vocab.instruction(&format!(
            "put the {} on the {} then stack the {} on it",
            name(a),
            name(r),
            name(b)
        ))?;
        return Ok(task);
    }
    Err(last_err)
}

/// `" on the left"` / `" on the right"` when another visible object shares
/// the class of `obj` and `obj` is the left-most / right-most of them as seen
/// from the agent.
fn side_phrase(scene: &Scene, state: &WorldState, obj: &SceneObject) -> &'static str {
    let theta = |i: usize| {
        object_center(scene, state, i).map(|c| true_direction_angles(scene, &state.pose, c).theta)
    };
    let Some(own_index) = scene.index_of(obj.object_id) else { return "" };
    let Some(own) = theta(own_index) else { return "" };
    let others: Vec<f64> = scene
        .objects
        .iter()
        .enumerate()
        .filter(|(i, o)| *i != own_index && o.class.id == obj.class.id)
        .filter_map(|(i, _)| theta(i))
        .collect();
    if others.is_empty() {
        ""
    } else if others.iter().all(|&t| own < t) {
        " on the left"
    } else if others.iter().all(|&t| own > t) {
        " on the right"
    } else {
        ""
    }
}
