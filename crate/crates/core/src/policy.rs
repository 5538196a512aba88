//! Episode and subgoal execution with a granular, one-subgoal-at-a-time
//! controller.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detector::{detect, draw_key, Detection, NoiseModel};
use crate::localizer::{
    build_input, heuristic_direction, oracle_direction, predict, target_class, GoalDirection, LocalizerModel,
    LocalizerSample,
};
use crate::panocam::{panoramic_sweep_state, CameraIntrinsics, ProjectionMode};
use crate::rng::{combine, seeded2};
use crate::scenegen::{goal_direction, nav_plan, SubgoalBoundary, Trajectory};
use crate::world::{
    apply_action, blocked_ahead, check_goal_conditions, in_goal_region, Action, ActionResult, AgentPose, Instruction,
    Scene, Subgoal, SubgoalKind, Task, Verb, Vocabulary, WorldState,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EpisodeLimits {
    pub max_timesteps: usize,
    pub max_api_errors: u32,
    pub max_subgoal_timesteps: usize,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        Self { max_timesteps: 200, max_api_errors: 10, max_subgoal_timesteps: 50 }
    }
}

impl EpisodeLimits {
    pub fn is_valid(&self) -> bool {
        self.max_timesteps > 0 && self.max_api_errors > 0 && self.max_subgoal_timesteps > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    PredictedStop,
    TimestepLimit,
    ApiErrorLimit,
    SubgoalLimit,
}

/// Source of `d_t` during navigation.
#[derive(Debug, Clone, Copy)]
pub enum Guidance<'a> {
    /// Always the zero vector.
    Zero,
    Oracle,
    Heuristic,
    Localizer(&'a LocalizerModel),
}

impl Guidance<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Guidance::Zero => "zero",
            Guidance::Oracle => "oracle",
            Guidance::Heuristic => "heuristic",
            Guidance::Localizer(_) => "localizer",
        }
    }

    fn needs_detections(&self) -> bool {
        matches!(self, Guidance::Heuristic | Guidance::Localizer(_))
    }
}

/// Everything between the world and `d_t`: camera, detector and guidance.
#[derive(Debug, Clone, Copy)]
pub struct Sensing<'a> {
    pub camera: CameraIntrinsics,
    pub mode: ProjectionMode,
    pub noise: NoiseModel,
    pub class_count: u32,
    pub vocab: &'a Vocabulary,
    pub guidance: Guidance<'a>,
}

impl<'a> Sensing<'a> {
    /// Noisy detections of one panoramic sweep.
    pub fn sweep(&self, scene: &Scene, state: &WorldState, episode_id: u64, timestep: usize) -> Vec<Detection> {
        let gt = panoramic_sweep_state(scene, state, &self.camera, self.mode);
        detect(&gt, &self.noise, draw_key(episode_id, timestep as u32), self.class_count)
    }

    /// `d_t` for a navigation timestep.
    #[allow(clippy::too_many_arguments)]
    pub fn direction(
        &self,
        scene: &Scene,
        state: &WorldState,
        goal_poses: &[AgentPose],
        instr: &Instruction,
        next: Option<&Instruction>,
        episode_id: u64,
        timestep: usize,
    ) -> GoalDirection {
        let detections =
            if self.guidance.needs_detections() { self.sweep(scene, state, episode_id, timestep) } else { Vec::new() };
        let pitch = f64::from(state.pose.pitch);
        match self.guidance {
            Guidance::Zero => GoalDirection::ZERO,
            Guidance::Oracle => oracle_direction(&state.pose, goal_poses),
            Guidance::Heuristic => target_class(instr, self.vocab)
                .and_then(|c| heuristic_direction(&detections, &self.camera, pitch, c, instr))
                .unwrap_or(GoalDirection::ZERO),
            Guidance::Localizer(model) => {
                let empty: &[u32] = &[];
                let input =
                    build_input(&detections, &self.camera, pitch, &instr.tokens, next.map_or(empty, |i| &i.tokens));
                predict(model, &input).unwrap_or(GoalDirection::AHEAD)
            }
        }
    }
}

/// What a policy sees at one timestep.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub scene: &'a Scene,
    pub state: &'a WorldState,
    /// Active subgoal; `None` once all subgoals are done.
    pub subgoal: Option<&'a Subgoal>,
    pub instruction: Option<&'a Instruction>,
    pub next_instruction: Option<&'a Instruction>,
    /// Zero outside navigation.
    pub direction: GoalDirection,
    pub blocked_ahead: bool,
    pub in_goal_region: bool,
}

pub trait Policy {
    fn name(&self) -> &str;
    fn act(&mut self, obs: &Observation<'_>) -> Action;
    /// Called before each episode or subgoal attempt.
    fn reset(&mut self, _seed: u64) {}
}

/// Plans from the current state: shortest path while navigating, the
/// subgoal's interaction otherwise.
#[derive(Debug, Clone, Default)]
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn name(&self) -> &str {
        "expert"
    }

    fn act(&mut self, obs: &Observation<'_>) -> Action {
        match obs.subgoal.map(|s| &s.kind) {
            None => Action::Stop,
            Some(SubgoalKind::Nav { goal_poses, .. }) => nav_plan(obs.scene, &obs.state.pose, goal_poses)
                .and_then(|plan| plan.first().copied())
                .unwrap_or(Action::Stop),
            Some(SubgoalKind::Manip { verb, target_object_id }) => {
                Action::Interact { verb: *verb, object_id: *target_object_id }
            }
        }
    }
}

/// Uniform over navigation actions and `Stop` while navigating; a random
/// verb on a random object otherwise.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
    seed: u64,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        Self { rng: seeded2(seed, 0x5A4D), seed }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn reset(&mut self, seed: u64) {
        self.rng = seeded2(self.seed, seed);
    }

    fn act(&mut self, obs: &Observation<'_>) -> Action {
        match obs.subgoal.map(|s| &s.kind) {
            None => Action::Stop,
            Some(SubgoalKind::Nav { .. }) => {
                let choices = [Action::MoveAhead, Action::RotateLeft45, Action::RotateRight45, Action::Stop];
                choices[self.rng.random_range(0..choices.len())]
            }
            Some(SubgoalKind::Manip { .. }) => {
                let verb = Verb::ALL[self.rng.random_range(0..Verb::ALL.len())];
                let object_id = self.rng.random_range(0..obs.scene.objects.len().max(1)) as u32;
                Action::Interact { verb, object_id }
            }
        }
    }
}

/// One step of the greedy angle follower.
///
/// In the goal region it stops; otherwise it turns toward `d_t` in 45°
/// buckets and moves when the goal is within ±22.5° of ahead. A blocked
/// move becomes `RotateRight45`. The zero vector counts as "ahead".
pub fn angle_follower_step(d: GoalDirection, blocked: bool, in_region: bool) -> Action {
    if in_region {
        return Action::Stop;
    }
    let psi = d.angle().unwrap_or(0.0);
    if psi < -22.5 {
        Action::RotateLeft45
    } else if psi > 22.5 || blocked {
        Action::RotateRight45
    } else {
        Action::MoveAhead
    }
}

/// Navigates with [`angle_follower_step`] and performs the interaction
/// named by each manipulation subgoal.
///
/// After a wall fallback the follower takes one step along the new heading
/// when it can, so it does not turn straight back into the wall.
#[derive(Debug, Clone, Default)]
pub struct AngleFollower {
    name: &'static str,
    sidestep: bool,
    pending: bool,
}

impl AngleFollower {
    pub fn new(name: &'static str) -> Self {
        Self { name, sidestep: true, pending: false }
    }

    /// The plain stateless rule, without the sidestep.
    pub fn stateless(name: &'static str) -> Self {
        Self { name, sidestep: false, pending: false }
    }
}

impl Policy for AngleFollower {
    fn name(&self) -> &str {
        self.name
    }

    fn reset(&mut self, _seed: u64) {
        self.pending = false;
    }

    fn act(&mut self, obs: &Observation<'_>) -> Action {
        match obs.subgoal.map(|s| &s.kind) {
            None => Action::Stop,
            Some(SubgoalKind::Manip { verb, target_object_id }) => {
                self.pending = false;
                Action::Interact { verb: *verb, object_id: *target_object_id }
            }
            Some(SubgoalKind::Nav { .. }) => {
                if self.sidestep && self.pending && !obs.blocked_ahead && !obs.in_goal_region {
                    self.pending = false;
                    return Action::MoveAhead;
                }
                let a = angle_follower_step(obs.direction, obs.blocked_ahead, obs.in_goal_region);
                let psi = obs.direction.angle().unwrap_or(0.0);
                self.pending = obs.blocked_ahead && psi.abs() <= 22.5 && a == Action::RotateRight45;
                a
            }
        }
    }
}

/// Adapts a closure into a [`Policy`].
pub struct FnPolicy<F> {
    pub name: &'static str,
    pub f: F,
}

impl<F: FnMut(&Observation<'_>) -> Action> Policy for FnPolicy<F> {
    fn name(&self) -> &str {
        self.name
    }

    fn act(&mut self, obs: &Observation<'_>) -> Action {
        (self.f)(obs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct StepLog {
    pub timestep: usize,
    pub subgoal_index: Option<usize>,
    pub pose: AgentPose,
    pub action: Action,
    pub direction_source: &'static str,
    pub direction: [f64; 2],
    pub result: ActionResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpisodeOutcome {
    pub trajectory: Trajectory,
    pub stop_reason: StopReason,
    /// `(satisfied, total)`.
    pub goal_conditions_satisfied: (usize, usize),
    pub per_subgoal_success: Vec<bool>,
    pub api_errors: u32,
    #[serde(skip)]
    pub log: Vec<StepLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubgoalGroup {
    Nav,
    Manip(Verb),
}

impl SubgoalGroup {
    pub fn of(subgoal: &Subgoal) -> Self {
        match subgoal.kind {
            SubgoalKind::Nav { .. } => SubgoalGroup::Nav,
            SubgoalKind::Manip { verb, .. } => SubgoalGroup::Manip(verb),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            SubgoalGroup::Nav => "Nav",
            SubgoalGroup::Manip(v) => match v {
                Verb::PickUp => "Manip:PickUp",
                Verb::PutDown => "Manip:PutDown",
                Verb::Slice => "Manip:Slice",
                Verb::Toggle => "Manip:Toggle",
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SubgoalOutcome {
    pub subgoal_index: usize,
    pub group: SubgoalGroup,
    pub success: bool,
    pub timesteps: usize,
}

/// Execution options beyond the limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct RunOptions {
    pub limits: EpisodeLimits,
    /// Charge each navigation sweep as eight `RotateRight45` actions.
    pub sweep_counts_as_actions: bool,
}

struct Runner<'a, 's> {
    scene: &'a Scene,
    task: &'a Task,
    sensing: &'a Sensing<'s>,
    opts: RunOptions,
    episode_id: u64,
    state: WorldState,
    actions: Vec<Action>,
    poses: Vec<AgentPose>,
    log: Vec<StepLog>,
}

enum SubgoalEnd {
    Done,
    Halt(StopReason),
}

impl Runner<'_, '_> {
    fn observe(&self, index: Option<usize>) -> (GoalDirection, bool, &'static str) {
        let Some(k) = index else {
            return (GoalDirection::ZERO, false, "none");
        };
        let sg = &self.task.subgoals[k];
        match sg.goal_poses() {
            Some(goals) => {
                let d = self.sensing.direction(
                    self.scene,
                    &self.state,
                    goals,
                    &self.task.step_instructions[k],
                    self.task.step_instructions.get(k + 1),
                    self.episode_id,
                    self.actions.len(),
                );
                (d, in_goal_region(&self.state.pose, goals), self.sensing.guidance.name())
            }
            None => (GoalDirection::ZERO, false, "zero"),
        }
    }

    fn step(&mut self, index: Option<usize>, action: Action, d: GoalDirection, source: &'static str) {
        let (next, result) = match apply_action(self.scene, &self.state, &action) {
            Ok(r) => r,
            // unknown object ids count as failed API calls
            Err(_) => {
                let mut s = self.state.clone();
                s.api_error_count += 1;
                s.timestep += 1;
                (s, ActionResult::Failed(crate::world::Failure::NotInView))
            }
        };
        self.log.push(StepLog {
            timestep: self.actions.len(),
            subgoal_index: index,
            pose: self.state.pose,
            action,
            direction_source: source,
            direction: d.d,
            result,
        });
        self.state = next;
        self.actions.push(action);
        self.poses.push(self.state.pose);
    }

    fn limit(&self) -> Option<StopReason> {
        if self.state.api_error_count >= self.opts.limits.max_api_errors {
            Some(StopReason::ApiErrorLimit)
        } else if self.actions.len() >= self.opts.limits.max_timesteps {
            Some(StopReason::TimestepLimit)
        } else {
            None
        }
    }

    fn sweep_cost(&mut self, index: usize) {
        for _ in 0..8 {
            if self.limit().is_some() {
                return;
            }
            self.step(Some(index), Action::RotateRight45, GoalDirection::ZERO, "sweep");
        }
    }

    /// Runs subgoal `k` until it is satisfied, the policy stops, or a limit
    /// is hit. Returns whether it succeeded.
    fn run_subgoal(&mut self, k: usize, policy: &mut dyn Policy) -> (bool, SubgoalEnd) {
        let sg = &self.task.subgoals[k];
        let start = self.state.clone();
        let mut taken = 0usize;
        loop {
            if sg.is_nav() && sg.is_satisfied(self.scene, &start, &self.state) {
                return (true, SubgoalEnd::Done);
            }
            if let Some(r) = self.limit() {
                return (sg.is_satisfied(self.scene, &start, &self.state), SubgoalEnd::Halt(r));
            }
            if taken >= self.opts.limits.max_subgoal_timesteps {
                return (false, SubgoalEnd::Halt(StopReason::SubgoalLimit));
            }
            if sg.is_nav() && self.opts.sweep_counts_as_actions {
                self.sweep_cost(k);
                if let Some(r) = self.limit() {
                    return (false, SubgoalEnd::Halt(r));
                }
            }
            let (d, in_region, source) = self.observe(Some(k));
            let obs = Observation {
                scene: self.scene,
                state: &self.state,
                subgoal: Some(sg),
                instruction: self.task.step_instructions.get(k),
                next_instruction: self.task.step_instructions.get(k + 1),
                direction: d,
                blocked_ahead: blocked_ahead(self.scene, &self.state.pose),
                in_goal_region: in_region,
            };
            let action = policy.act(&obs);
            if action == Action::Stop {
                return (sg.is_satisfied(self.scene, &start, &self.state), SubgoalEnd::Done);
            }
            self.step(Some(k), action, d, source);
            taken += 1;
            if matches!(action, Action::Interact { .. }) && !sg.is_nav() {
                return (sg.is_satisfied(self.scene, &start, &self.state), SubgoalEnd::Done);
            }
        }
    }

    fn trajectory(&self, boundaries: Vec<SubgoalBoundary>) -> Trajectory {
        Trajectory {
            actions: self.actions.clone(),
            poses: self.poses.clone(),
            subgoal_boundaries: boundaries,
            scene_seed: self.task.scene_seed,
            task_seed: self.task.task_seed,
        }
    }
}

/// Episode id used for detector draws: fixed by the task and the run seed.
pub fn episode_id(task: &Task, seed: u64) -> u64 {
    combine(combine(task.scene_seed, task.task_seed), seed)
}

/// Runs a whole task one subgoal at a time. Every subgoal is attempted in
/// order whether or not the previous one succeeded; the episode closes with
/// `Stop` once all subgoals have been attempted, or halts at a limit.
pub fn run_episode(
    scene: &Scene,
    task: &Task,
    policy: &mut dyn Policy,
    sensing: &Sensing<'_>,
    opts: &RunOptions,
    seed: u64,
) -> EpisodeOutcome {
    policy.reset(seed);
    let mut run = Runner {
        scene,
        task,
        sensing,
        opts: *opts,
        episode_id: episode_id(task, seed),
        state: WorldState::initial(scene, task.start_pose),
        actions: Vec::new(),
        poses: vec![task.start_pose],
        log: Vec::new(),
    };
    let mut boundaries = Vec::new();
    let mut success = Vec::with_capacity(task.subgoals.len());
    let mut stop = None;
    for k in 0..task.subgoals.len() {
        boundaries.push(SubgoalBoundary { subgoal_index: k, start_timestep: run.actions.len() });
        let (ok, end) = run.run_subgoal(k, policy);
        success.push(ok);
        if let SubgoalEnd::Halt(r) = end {
            stop = Some(r);
            break;
        }
    }
    let stop_reason = match stop {
        Some(r) => r,
        None => match run.limit() {
            Some(r) => r,
            None => {
                run.step(None, Action::Stop, GoalDirection::ZERO, "none");
                StopReason::PredictedStop
            }
        },
    };
    success.resize(task.subgoals.len(), false);
    EpisodeOutcome {
        goal_conditions_satisfied: check_goal_conditions(scene, &run.state, task),
        per_subgoal_success: success,
        api_errors: run.state.api_error_count,
        trajectory: run.trajectory(boundaries),
        stop_reason,
        log: run.log,
    }
}

/// Replays the expert through subgoal `index − 1`, then lets the policy
/// attempt subgoal `index` alone.
#[allow(clippy::too_many_arguments)]
pub fn run_subgoal(
    scene: &Scene,
    task: &Task,
    expert: &Trajectory,
    index: usize,
    policy: &mut dyn Policy,
    sensing: &Sensing<'_>,
    opts: &RunOptions,
    seed: u64,
) -> SubgoalOutcome {
    policy.reset(combine(seed, index as u64));
    let mut run = Runner {
        scene,
        task,
        sensing,
        opts: *opts,
        episode_id: episode_id(task, seed),
        state: WorldState::initial(scene, task.start_pose),
        actions: Vec::new(),
        poses: vec![task.start_pose],
        log: Vec::new(),
    };
    let start = expert.subgoal_start(index).unwrap_or(0);
    for a in &expert.actions[..start] {
        run.state = apply_action(scene, &run.state, a).map(|r| r.0).unwrap_or_else(|_| run.state.clone());
        run.actions.push(*a);
        run.poses.push(run.state.pose);
    }
    // limits apply to the attempt, not to the replayed prefix
    run.state.api_error_count = 0;
    run.opts.limits.max_timesteps = start + opts.limits.max_subgoal_timesteps;
    let (success, _) = run.run_subgoal(index, policy);
    SubgoalOutcome {
        subgoal_index: index,
        group: SubgoalGroup::of(&task.subgoals[index]),
        success,
        timesteps: run.actions.len() - start,
    }
}

/// Every subgoal of a task attempted on its own.
pub fn run_all_subgoals(
    scene: &Scene,
    task: &Task,
    expert: &Trajectory,
    policy: &mut dyn Policy,
    sensing: &Sensing<'_>,
    opts: &RunOptions,
    seed: u64,
) -> Vec<SubgoalOutcome> {
    (0..task.subgoals.len()).map(|k| run_subgoal(scene, task, expert, k, policy, sensing, opts, seed)).collect()
}

/// The policy's action at each expert timestep, with the world held at the
/// expert's state (teacher forcing).
pub fn teacher_forced_actions(
    scene: &Scene,
    task: &Task,
    expert: &Trajectory,
    policy: &mut dyn Policy,
    sensing: &Sensing<'_>,
    seed: u64,
) -> Vec<Action> {
    policy.reset(seed);
    let eid = episode_id(task, seed);
    let mut state = WorldState::initial(scene, task.start_pose);
    let mut out = Vec::with_capacity(expert.actions.len());
    for (t, expert_action) in expert.actions.iter().enumerate() {
        let index = expert.subgoal_at(t);
        let sg = index.map(|k| &task.subgoals[k]);
        let (d, in_region) = match sg.and_then(|s| s.goal_poses()) {
            Some(goals) => {
                let k = index.unwrap_or(0);
                let d = sensing.direction(
                    scene,
                    &state,
                    goals,
                    &task.step_instructions[k],
                    task.step_instructions.get(k + 1),
                    eid,
                    t,
                );
                (d, in_goal_region(&state.pose, goals))
            }
            None => (GoalDirection::ZERO, false),
        };
        let obs = Observation {
            scene,
            state: &state,
            subgoal: sg,
            instruction: index.and_then(|k| task.step_instructions.get(k)),
            next_instruction: index.and_then(|k| task.step_instructions.get(k + 1)),
            direction: d,
            blocked_ahead: blocked_ahead(scene, &state.pose),
            in_goal_region: in_region,
        };
        out.push(policy.act(&obs));
        state = apply_action(scene, &state, expert_action).map(|r| r.0).unwrap_or(state);
    }
    out
}

/// Localizer training records for every navigation timestep of an expert
/// trajectory: detections of the sweep at that state and the true ψ.
pub fn localizer_samples(
    scene: &Scene,
    task: &Task,
    expert: &Trajectory,
    sensing: &Sensing<'_>,
    seed: u64,
) -> Vec<LocalizerSample> {
    let eid = episode_id(task, seed);
    let mut state = WorldState::initial(scene, task.start_pose);
    let mut out = Vec::new();
    for (t, action) in expert.actions.iter().enumerate() {
        if let Some(k) = expert.subgoal_at(t) {
            if let Some(goals) = task.subgoals[k].goal_poses() {
                let next: &[u32] = task.step_instructions.get(k + 1).map_or(&[], |i| &i.tokens);
                out.push(LocalizerSample {
                    detections: sensing.sweep(scene, &state, eid, t),
                    pitch: f64::from(state.pose.pitch),
                    instr_k: task.step_instructions[k].tokens.clone(),
                    instr_k1: next.to_vec(),
                    psi_true: goal_direction(&state.pose, goals),
                });
            }
        }
        state = apply_action(scene, &state, action).map(|r| r.0).unwrap_or(state);
    }
    out
}
