//! Discrete world model: scenes, agent pose, primitive actions, tasks and
//! goal-condition checking.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::angle::{bearing_deg, normalize_deg};

pub const DEFAULT_CELL_SIZE: f64 = 0.25;
pub const EYE_HEIGHT: f64 = 1.5;
pub const PITCH_STEP: i32 = 15;
pub const PITCH_LIMIT: i32 = 30;
/// Half-angle of the horizontal sector in which an adjacent object can be
/// interacted with.
pub const INTERACT_HALF_ANGLE: f64 = 45.0;

const RECEPTACLE_NAMES: [&str; 8] = [
    "counter", "table", "shelf", "sink", "cabinet", "desk", "stove", "fridge",
];
const PICKABLE_NAMES: [&str; 24] = [
    "knife", "apple", "cup", "mug", "bowl", "plate", "spoon", "fork", "bread", "tomato", "potato",
    "egg", "lettuce", "pan", "pot", "book", "pencil", "key", "phone", "remote", "vase", "box",
    "bottle", "sponge",
];

/// Fixed words used by the instruction templates. Class names follow them in
/// the token vocabulary.
pub const TEMPLATE_WORDS: [&str; 13] = [
    "walk", "to", "the", "pick", "up", "put", "on", "stack", "left", "right", "and", "it", "then",
];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorldError {
    #[error("unknown object id {0}")]
    UnknownObjectId(u32),
    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ObjectClass {
    pub id: u32,
    pub name: String,
}

/// The class-label vocabulary: dense ids `0..C`, receptacle classes first.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassVocab {
    names: Vec<String>,
    receptacles: usize,
}

impl ClassVocab {
    pub const DEFAULT_SIZE: usize = 32;

    /// Builds a vocabulary of `size` classes (at least 2). A quarter of the
    /// classes (at least one) are receptacles.
    pub fn standard(size: usize) -> Self {
        let size = size.max(2);
        let receptacles = (size / 4).max(1);
        let mut names = Vec::with_capacity(size);
        for i in 0..receptacles {
            names.push(match RECEPTACLE_NAMES.get(i) {
                Some(n) => n.to_string(),
                None => format!("receptacle{i}"),
            });
        }
        for i in 0..size - receptacles {
            names.push(match PICKABLE_NAMES.get(i) {
                Some(n) => n.to_string(),
                None => format!("item{i}"),
            });
        }
        Self { names, receptacles }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn class(&self, id: u32) -> ObjectClass {
        ObjectClass { id, name: self.names[id as usize].clone() }
    }

    pub fn name(&self, id: u32) -> &str {
        &self.names[id as usize]
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.names.iter().position(|n| n == name).map(|i| i as u32)
    }

    pub fn is_receptacle_class(&self, id: u32) -> bool {
        (id as usize) < self.receptacles
    }

    pub fn receptacle_ids(&self) -> core::ops::Range<u32> {
        0..self.receptacles as u32
    }

    pub fn pickable_ids(&self) -> core::ops::Range<u32> {
        self.receptacles as u32..self.names.len() as u32
    }

    /// Canonical half-extents in meters for objects of a class.
    pub fn extent(&self, id: u32) -> [f64; 3] {
        if self.is_receptacle_class(id) {
            [0.11, 0.11, 0.35 + 0.05 * f64::from(id % 4)]
        } else {
            let r = 0.03 + 0.01 * f64::from(id % 4);
            [r, r, 0.03 + 0.02 * f64::from(id % 3)]
        }
    }
}

/// Word-token vocabulary for templated instructions: the template words
/// followed by every class name.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
}

impl Vocabulary {
    pub fn new(classes: &ClassVocab) -> Self {
        let mut words: Vec<String> = TEMPLATE_WORDS.iter().map(|w| w.to_string()).collect();
        words.extend(classes.names.iter().cloned());
        Self { words }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.words.iter().position(|w| w == word).map(|i| i as u32)
    }

    /// Token id of a class name.
    pub fn class_token(&self, class_id: u32) -> u32 {
        TEMPLATE_WORDS.len() as u32 + class_id
    }

    /// Class id named by a token, if the token is a class name.
    pub fn token_class(&self, token: u32) -> Option<u32> {
        let first = TEMPLATE_WORDS.len() as u32;
        (token >= first && (token as usize) < self.words.len()).then(|| token - first)
    }

    pub fn tokenize(&self, surface: &str) -> Result<Vec<u32>, WorldError> {
        surface
            .split_whitespace()
            .map(|w| self.id(w).ok_or_else(|| WorldError::UnknownWord(w.to_string())))
            .collect()
    }

    pub fn render(&self, tokens: &[u32]) -> Option<String> {
        let mut out = String::new();
        for (i, &t) in tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.word(t)?);
        }
        Some(out)
    }

    pub fn instruction(&self, surface: &str) -> Result<Instruction, WorldError> {
        Ok(Instruction { tokens: self.tokenize(surface)?, surface: surface.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub tokens: Vec<u32>,
    pub surface: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub cx: i32,
    pub cy: i32,
}

impl Cell {
    pub const fn new(cx: i32, cy: i32) -> Self {
        Self { cx, cy }
    }

    pub fn offset(self, dx: i32, dy: i32) -> Self {
        Self { cx: self.cx + dx, cy: self.cy + dy }
    }

    pub fn chebyshev(self, other: Cell) -> i32 {
        (self.cx - other.cx).abs().max((self.cy - other.cy).abs())
    }

    pub fn manhattan(self, other: Cell) -> i32 {
        (self.cx - other.cx).abs() + (self.cy - other.cy).abs()
    }
}

/// Discrete heading: `heading × 45°` clockwise from `+y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Heading(u8);

impl Heading {
    pub const fn new(h: u8) -> Self {
        Self(h % 8)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn degrees(self) -> f64 {
        45.0 * f64::from(self.0)
    }

    pub fn left(self) -> Self {
        Self((self.0 + 7) % 8)
    }

    pub fn right(self) -> Self {
        Self((self.0 + 1) % 8)
    }

    /// Grid step taken by a forward move.
    pub fn step(self) -> (i32, i32) {
        const STEPS: [(i32, i32); 8] =
            [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)];
        STEPS[self.0 as usize]
    }

    pub fn all() -> impl Iterator<Item = Heading> {
        (0..8).map(Heading)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentPose {
    pub cell: Cell,
    pub heading: Heading,
    /// Head pitch in degrees, positive looking up.
    pub pitch: i32,
}

impl AgentPose {
    pub fn new(cell: Cell, heading: u8) -> Self {
        Self { cell, heading: Heading::new(heading), pitch: 0 }
    }

    pub fn is_valid(&self) -> bool {
        self.pitch % PITCH_STEP == 0 && self.pitch.abs() <= PITCH_LIMIT
    }

    /// Same cell and heading; pitch is not part of the goal region.
    pub fn same_place(&self, other: &AgentPose) -> bool {
        self.cell == other.cell && self.heading == other.heading
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Verb {
    PickUp,
    PutDown,
    Slice,
    Toggle,
}

impl Verb {
    pub const ALL: [Verb; 4] = [Verb::PickUp, Verb::PutDown, Verb::Slice, Verb::Toggle];

    pub fn name(self) -> &'static str {
        match self {
            Verb::PickUp => "PickUp",
            Verb::PutDown => "PutDown",
            Verb::Slice => "Slice",
            Verb::Toggle => "Toggle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateLeft45,
    RotateRight45,
    LookUp15,
    LookDown15,
    Interact {
        verb: Verb,
        #[serde(rename = "objectId")]
        object_id: u32,
    },
    Stop,
}

impl Action {
    pub const NAVIGATION: [Action; 3] = [Action::MoveAhead, Action::RotateLeft45, Action::RotateRight45];

    /// The action class used for metrics: interactions are grouped by verb,
    /// the target id is ignored.
    pub fn class(&self) -> ActionClass {
        match *self {
            Action::MoveAhead => ActionClass::MoveAhead,
            Action::RotateLeft45 => ActionClass::RotateLeft45,
            Action::RotateRight45 => ActionClass::RotateRight45,
            Action::LookUp15 => ActionClass::LookUp15,
            Action::LookDown15 => ActionClass::LookDown15,
            Action::Interact { verb, .. } => ActionClass::Interact(verb),
            Action::Stop => ActionClass::Stop,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ActionClass {
    MoveAhead,
    RotateLeft45,
    RotateRight45,
    LookUp15,
    LookDown15,
    Interact(Verb),
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Failure {
    Blocked,
    PitchLimit,
    OutOfReach,
    NotInView,
    HandFull,
    HandEmpty,
    NotReceptacle,
    NotPickable,
    NoKnife,
    TargetHeld,
    Covered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionResult {
    Succeeded,
    Failed(Failure),
}

impl ActionResult {
    pub fn is_success(self) -> bool {
        matches!(self, ActionResult::Succeeded)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ObjectState {
    pub held: bool,
    pub placed_on: Option<u32>,
    pub sliced: bool,
    pub toggled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneObject {
    pub object_id: u32,
    pub class: ObjectClass,
    /// Meters; `x`, `y` horizontal, `z` height of the center.
    pub center: [f64; 3],
    /// Axis-aligned half sizes in meters.
    pub extent: [f64; 3],
    pub is_receptacle: bool,
    /// Initial state.
    pub state: ObjectState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Scene {
    pub grid_width: u32,
    pub grid_height: u32,
    pub cell_size: f64,
    pub obstacles: BTreeSet<Cell>,
    pub objects: Vec<SceneObject>,
    pub scene_seed: u64,
}

impl Scene {
    pub fn in_bounds(&self, cell: Cell) -> bool {
        cell.cx >= 0
            && cell.cy >= 0
            && (cell.cx as u32) < self.grid_width
            && (cell.cy as u32) < self.grid_height
    }

    pub fn cell_of(&self, p: [f64; 3]) -> Cell {
        Cell::new(libm::floor(p[0] / self.cell_size) as i32, libm::floor(p[1] / self.cell_size) as i32)
    }

    pub fn cell_center(&self, cell: Cell) -> (f64, f64) {
        (
            (f64::from(cell.cx) + 0.5) * self.cell_size,
            (f64::from(cell.cy) + 0.5) * self.cell_size,
        )
    }

    /// Cells that the agent can never enter: obstacles plus the footprint of
    /// every receptacle and every floor-standing object.
    pub fn occupied_cells(&self) -> BTreeSet<Cell> {
        let mut out = self.obstacles.clone();
        for o in &self.objects {
            if o.is_receptacle || o.state.placed_on.is_none() {
                out.insert(self.cell_of(o.center));
            }
        }
        out
    }

    pub fn is_navigable(&self, cell: Cell) -> bool {
        self.in_bounds(cell)
            && !self.obstacles.contains(&cell)
            && !self
                .objects
                .iter()
                .any(|o| (o.is_receptacle || o.state.placed_on.is_none()) && self.cell_of(o.center) == cell)
    }

    pub fn index_of(&self, object_id: u32) -> Option<usize> {
        self.objects.iter().position(|o| o.object_id == object_id)
    }

    pub fn object(&self, object_id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct WorldState {
    pub pose: AgentPose,
    /// Parallel to `Scene::objects`.
    pub object_states: Vec<ObjectState>,
    pub held_object: Option<u32>,
    pub api_error_count: u32,
    pub timestep: u32,
}

impl WorldState {
    pub fn initial(scene: &Scene, pose: AgentPose) -> Self {
        Self {
            pose,
            object_states: scene.objects.iter().map(|o| o.state).collect(),
            held_object: None,
            api_error_count: 0,
            timestep: 0,
        }
    }

    pub fn object_state(&self, scene: &Scene, object_id: u32) -> Option<&ObjectState> {
        scene.index_of(object_id).map(|i| &self.object_states[i])
    }
}

/// Current center of an object, or `None` while it is held.
///
/// Objects that never moved keep their scene position; moved objects sit on
/// top of whatever they were put on.
pub fn object_center(scene: &Scene, state: &WorldState, index: usize) -> Option<[f64; 3]> {
    let mut chain: Vec<usize> = Vec::new();
    let mut i = index;
    loop {
        let st = &state.object_states[i];
        if st.held {
            return None;
        }
        let obj = &scene.objects[i];
        if st.placed_on == obj.state.placed_on || chain.len() > scene.objects.len() {
            let mut c = obj.center;
            // unwind: each object in the chain rests on the one after it
            let mut below = i;
            for &above in chain.iter().rev() {
                let lower = &scene.objects[below];
                let upper = &scene.objects[above];
                c = [c[0], c[1], c[2] + lower.extent[2] + upper.extent[2]];
                below = above;
            }
            return Some(c);
        }
        match st.placed_on.and_then(|p| scene.index_of(p)) {
            Some(p) => {
                chain.push(i);
                i = p;
            }
            None => return Some(obj.center),
        }
    }
}

/// Whether an object is "moved", i.e. no longer where the scene put it.
fn is_moved(scene: &Scene, state: &WorldState, index: usize) -> bool {
    state.object_states[index].placed_on != scene.objects[index].state.placed_on
}

/// Topmost object stacked on `target` by the agent, or `target` itself.
fn stack_top(scene: &Scene, state: &WorldState, target: usize) -> usize {
    let mut top = target;
    for _ in 0..scene.objects.len() {
        let top_id = scene.objects[top].object_id;
        let next = (0..scene.objects.len()).find(|&j| {
            j != top
                && !state.object_states[j].held
                && state.object_states[j].placed_on == Some(top_id)
                && is_moved(scene, state, j)
        });
        match next {
            Some(j) => top = j,
            None => break,
        }
    }
    top
}

/// Whether an object resting at `target_cell` is within arm's reach and in
/// the forward interaction sector of `pose`.
pub fn can_reach(scene: &Scene, pose: &AgentPose, target_cell: Cell) -> bool {
    if pose.cell == target_cell || pose.cell.chebyshev(target_cell) > 1 {
        return false;
    }
    let (ax, ay) = scene.cell_center(pose.cell);
    let (tx, ty) = scene.cell_center(target_cell);
    let rel = normalize_deg(bearing_deg(tx - ax, ty - ay) - pose.heading.degrees());
    libm::fabs(rel) <= INTERACT_HALF_ANGLE + 1e-9
}

/// All poses (pitch 0) from which an object at `target_cell` can be reached,
/// ordered by `(cy, cx, heading)`.
pub fn goal_region(scene: &Scene, target_cell: Cell) -> Vec<AgentPose> {
    let mut out = Vec::new();
    for dy in -1..=1 {
        for dx in -1..=1 {
            let cell = target_cell.offset(dx, dy);
            if (dx, dy) == (0, 0) || !scene.is_navigable(cell) {
                continue;
            }
            for h in Heading::all() {
                let pose = AgentPose { cell, heading: h, pitch: 0 };
                if can_reach(scene, &pose, target_cell) {
                    out.push(pose);
                }
            }
        }
    }
    out.sort_by_key(|p| (p.cell.cy, p.cell.cx, p.heading));
    out
}

pub fn in_goal_region(pose: &AgentPose, goal_poses: &[AgentPose]) -> bool {
    goal_poses.iter().any(|g| g.same_place(pose))
}

/// Pose after a navigation or look action, or the failure it produces.
/// Diagonal moves are blocked when the destination is blocked or when both
/// cells flanking the diagonal are blocked.
pub fn step_pose(scene: &Scene, pose: &AgentPose, action: &Action) -> Result<AgentPose, Failure> {
    let mut next = *pose;
    match action {
        Action::MoveAhead => {
            let (dx, dy) = pose.heading.step();
            let target = pose.cell.offset(dx, dy);
            if !scene.is_navigable(target) {
                return Err(Failure::Blocked);
            }
            if dx != 0
                && dy != 0
                && !scene.is_navigable(pose.cell.offset(dx, 0))
                && !scene.is_navigable(pose.cell.offset(0, dy))
            {
                return Err(Failure::Blocked);
            }
            next.cell = target;
        }
        Action::RotateLeft45 => next.heading = pose.heading.left(),
        Action::RotateRight45 => next.heading = pose.heading.right(),
        Action::LookUp15 => {
            if pose.pitch + PITCH_STEP > PITCH_LIMIT {
                return Err(Failure::PitchLimit);
            }
            next.pitch += PITCH_STEP;
        }
        Action::LookDown15 => {
            if pose.pitch - PITCH_STEP < -PITCH_LIMIT {
                return Err(Failure::PitchLimit);
            }
            next.pitch -= PITCH_STEP;
        }
        Action::Interact { .. } | Action::Stop => {}
    }
    Ok(next)
}

pub fn blocked_ahead(scene: &Scene, pose: &AgentPose) -> bool {
    step_pose(scene, pose, &Action::MoveAhead).is_err()
}

fn interact(
    scene: &Scene,
    state: &mut WorldState,
    verb: Verb,
    object_id: u32,
) -> Result<ActionResult, WorldError> {
    let target = scene.index_of(object_id).ok_or(WorldError::UnknownObjectId(object_id))?;
    if state.object_states[target].held {
        return Ok(ActionResult::Failed(Failure::TargetHeld));
    }
    let center = object_center(scene, state, target).expect("target is not held");
    let target_cell = scene.cell_of(center);
    if state.pose.cell.chebyshev(target_cell) > 1 || state.pose.cell == target_cell {
        return Ok(ActionResult::Failed(Failure::OutOfReach));
    }
    if !can_reach(scene, &state.pose, target_cell) {
        return Ok(ActionResult::Failed(Failure::NotInView));
    }
    let fail = |f| Ok(ActionResult::Failed(f));
    match verb {
        Verb::PickUp => {
            if state.held_object.is_some() {
                return fail(Failure::HandFull);
            }
            if scene.objects[target].is_receptacle {
                return fail(Failure::NotPickable);
            }
            let covered = state
                .object_states
                .iter()
                .any(|s| !s.held && s.placed_on == Some(object_id));
            if covered {
                return fail(Failure::Covered);
            }
            let st = &mut state.object_states[target];
            st.held = true;
            st.placed_on = None;
            state.held_object = Some(object_id);
        }
        Verb::PutDown => {
            let Some(held) = state.held_object else {
                return fail(Failure::HandEmpty);
            };
            if !scene.objects[target].is_receptacle {
                return fail(Failure::NotReceptacle);
            }
            let top = stack_top(scene, state, target);
            let top_id = scene.objects[top].object_id;
            let held_index = scene.index_of(held).ok_or(WorldError::UnknownObjectId(held))?;
            let st = &mut state.object_states[held_index];
            st.held = false;
            st.placed_on = Some(top_id);
            state.held_object = None;
        }
        Verb::Slice => {
            let has_knife = state
                .held_object
                .and_then(|h| scene.object(h))
                .is_some_and(|o| o.class.name == "knife");
            if !has_knife {
                return fail(Failure::NoKnife);
            }
            state.object_states[target].sliced = true;
        }
        Verb::Toggle => {
            let st = &mut state.object_states[target];
            st.toggled = !st.toggled;
        }
    }
    Ok(ActionResult::Succeeded)
}

/// Applies one primitive action. In-world failures are reported through
/// [`ActionResult::Failed`] and counted as API errors; a target id that does
/// not exist in the scene is a malformed input and returns an error.
pub fn apply_action(
    scene: &Scene,
    state: &WorldState,
    action: &Action,
) -> Result<(WorldState, ActionResult), WorldError> {
    let mut next = state.clone();
    let result = match action {
        Action::Interact { verb, object_id } => interact(scene, &mut next, *verb, *object_id)?,
        Action::Stop => ActionResult::Succeeded,
        _ => match step_pose(scene, &state.pose, action) {
            Ok(pose) => {
                next.pose = pose;
                ActionResult::Succeeded
            }
            Err(f) => ActionResult::Failed(f),
        },
    };
    if !result.is_success() {
        // a failed interaction leaves objects untouched
        next.object_states.clone_from(&state.object_states);
        next.held_object = state.held_object;
        next.api_error_count += 1;
    }
    next.timestep += 1;
    Ok((next, result))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum GoalCondition {
    #[serde(rename_all = "camelCase")]
    PlacedOn { object_id: u32, receptacle_id: u32 },
    #[serde(rename_all = "camelCase")]
    Holding { object_id: u32 },
    #[serde(rename_all = "camelCase")]
    Sliced { object_id: u32 },
    #[serde(rename_all = "camelCase")]
    Toggled { object_id: u32 },
}

impl GoalCondition {
    pub fn objects(&self) -> impl Iterator<Item = u32> {
        let (a, b) = match *self {
            GoalCondition::PlacedOn { object_id, receptacle_id } => (object_id, Some(receptacle_id)),
            GoalCondition::Holding { object_id }
            | GoalCondition::Sliced { object_id }
            | GoalCondition::Toggled { object_id } => (object_id, None),
        };
        core::iter::once(a).chain(b)
    }

    pub fn is_satisfied(&self, scene: &Scene, state: &WorldState) -> bool {
        let st = |id| state.object_state(scene, id);
        match *self {
            GoalCondition::PlacedOn { object_id, receptacle_id } => {
                st(object_id).is_some_and(|s| !s.held && s.placed_on == Some(receptacle_id))
            }
            GoalCondition::Holding { object_id } => state.held_object == Some(object_id),
            GoalCondition::Sliced { object_id } => st(object_id).is_some_and(|s| s.sliced),
            GoalCondition::Toggled { object_id } => st(object_id).is_some_and(|s| s.toggled),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum SubgoalKind {
    #[serde(rename_all = "camelCase")]
    Nav { target_object_id: u32, goal_poses: Vec<AgentPose> },
    #[serde(rename_all = "camelCase")]
    Manip { verb: Verb, target_object_id: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgoal {
    pub index: usize,
    pub kind: SubgoalKind,
}

impl Subgoal {
    pub fn is_nav(&self) -> bool {
        matches!(self.kind, SubgoalKind::Nav { .. })
    }

    pub fn goal_poses(&self) -> Option<&[AgentPose]> {
        match &self.kind {
            SubgoalKind::Nav { goal_poses, .. } => Some(goal_poses),
            SubgoalKind::Manip { .. } => None,
        }
    }

    /// Whether this subgoal's conditions hold in `state`, given the state in
    /// which the subgoal began.
    pub fn is_satisfied(&self, scene: &Scene, start: &WorldState, state: &WorldState) -> bool {
        match &self.kind {
            SubgoalKind::Nav { goal_poses, .. } => in_goal_region(&state.pose, goal_poses),
            SubgoalKind::Manip { verb, target_object_id } => {
                let target = *target_object_id;
                match verb {
                    Verb::PickUp => state.held_object == Some(target),
                    Verb::PutDown => match start.held_object {
                        Some(h) if state.held_object.is_none() => {
                            placed_on_chain(scene, state, h, target)
                        }
                        _ => false,
                    },
                    Verb::Slice => state.object_state(scene, target).is_some_and(|s| s.sliced),
                    Verb::Toggle => {
                        let before = start.object_state(scene, target).map(|s| s.toggled);
                        let after = state.object_state(scene, target).map(|s| s.toggled);
                        before.is_some() && before != after
                    }
                }
            }
        }
    }
}

/// Whether `object_id` rests, directly or through a stack, on `base_id`.
fn placed_on_chain(scene: &Scene, state: &WorldState, object_id: u32, base_id: u32) -> bool {
    let mut cur = object_id;
    for _ in 0..=scene.objects.len() {
        match state.object_state(scene, cur).and_then(|s| s.placed_on) {
            Some(p) if p == base_id => return true,
            Some(p) => cur = p,
            None => return false,
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Task {
    pub start_pose: AgentPose,
    pub goal_conditions: Vec<GoalCondition>,
    pub subgoals: Vec<Subgoal>,
    pub goal_instruction: Instruction,
    pub step_instructions: Vec<Instruction>,
    pub scene_seed: u64,
    pub task_seed: u64,
}

/// Counts satisfied goal conditions: `(satisfied, total)`.
pub fn check_goal_conditions(scene: &Scene, state: &WorldState, task: &Task) -> (usize, usize) {
    let satisfied = task.goal_conditions.iter().filter(|g| g.is_satisfied(scene, state)).count();
    (satisfied, task.goal_conditions.len())
}

/// Fraction of satisfied goal conditions; an empty list counts as fully
/// satisfied.
pub fn goal_fraction(counts: (usize, usize)) -> f64 {
    if counts.1 == 0 {
        1.0
    } else {
        counts.0 as f64 / counts.1 as f64
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use alloc::vec;

    pub fn object(vocab: &ClassVocab, id: u32, class: &str, cell: Cell, on: Option<u32>, z: f64) -> SceneObject {
        let class_id = vocab.id_of(class).unwrap();
        let extent = vocab.extent(class_id);
        SceneObject {
            object_id: id,
            class: vocab.class(class_id),
            center: [(f64::from(cell.cx) + 0.5) * 0.25, (f64::from(cell.cy) + 0.5) * 0.25, z + extent[2]],
            extent,
            is_receptacle: vocab.is_receptacle_class(class_id),
            state: ObjectState { placed_on: on, ..Default::default() },
        }
    }

    /// 5×5 room: counter (id 0) at (2,3) with a knife (1) and an apple (2)
    /// on it, a table (3) at (4,0), a wall cell at (1,1).
    pub fn kitchen() -> Scene {
        let v = ClassVocab::standard(32);
        let counter = object(&v, 0, "counter", Cell::new(2, 3), None, 0.0);
        let top = counter.center[2] + counter.extent[2];
        let mut knife = object(&v, 1, "knife", Cell::new(2, 3), Some(0), top);
        knife.center[0] -= 0.06;
        let mut apple = object(&v, 2, "apple", Cell::new(2, 3), Some(0), top);
        apple.center[0] += 0.06;
        let table = object(&v, 3, "table", Cell::new(4, 0), None, 0.0);
        Scene {
            grid_width: 5,
            grid_height: 5,
            cell_size: 0.25,
            obstacles: [Cell::new(1, 1)].into_iter().collect(),
            objects: vec![counter, knife, apple, table],
            scene_seed: 0,
        }
    }
}
