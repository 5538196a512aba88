//! Projection of scene objects into the eight panoramic views and the
//! inverse mapping from a view's bounding box to panoramic angles.
//!
//! View `p` looks along `heading + 45p` degrees with the agent's head pitch.
//! Angles are degrees everywhere. `θ` is the horizontal angle relative to the
//! body heading, clockwise positive, in `(-180, 180]`; `φ` is the elevation,
//! up positive.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::angle::{atan_deg, bearing_deg, normalize_deg, sin_cos_deg, tan_deg};
use crate::world::{object_center, AgentPose, Scene, SceneObject, WorldState, EYE_HEIGHT};

pub const VIEW_COUNT: u8 = 8;
pub const VIEW_SPACING_DEG: f64 = 45.0;
/// Smallest normalized box width/height a projection may report.
pub const MIN_EXTENT: f64 = 1e-4;
const NEAR: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraIntrinsics {
    /// Horizontal field of view, degrees.
    #[serde(rename = "F_x")]
    pub f_x: f64,
    /// Vertical field of view, degrees.
    #[serde(rename = "F_y")]
    pub f_y: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self { f_x: 90.0, f_y: 90.0 }
    }
}

impl CameraIntrinsics {
    pub fn is_valid(&self) -> bool {
        self.f_x > 0.0 && self.f_x < 180.0 && self.f_y > 0.0 && self.f_y < 180.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ProjectionMode {
    /// Centroid placed so that inverting it recovers the true direction
    /// exactly; size from the extents at the center distance.
    CentroidExact,
    /// Perspective hull of the eight box corners, clipped to the image.
    #[default]
    Corners,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox2D {
    /// View index `0..8`.
    pub p: u8,
    pub c_x: f64,
    pub c_y: f64,
    pub w: f64,
    pub h: f64,
    #[serde(rename = "objectId")]
    pub object_id: Option<u32>,
    /// Class id.
    pub class: u32,
}

impl BoundingBox2D {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Inside the unit square with positive size. A box whose centroid sits
    /// exactly on the border keeps the minimum extent, so it may overhang by
    /// half of [`MIN_EXTENT`].
    pub fn is_valid(&self) -> bool {
        let slack = MIN_EXTENT / 2.0 + 1e-12;
        let inside = |c: f64, s: f64| {
            s > 0.0 && s <= 1.0 && (0.0..=1.0).contains(&c) && c - s / 2.0 >= -slack && c + s / 2.0 <= 1.0 + slack
        };
        self.p < VIEW_COUNT && inside(self.c_x, self.w) && inside(self.c_y, self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanoramicAngles {
    pub theta: f64,
    pub phi: f64,
}

/// Eye position of the agent in world coordinates.
pub fn eye_position(scene: &Scene, pose: &AgentPose) -> [f64; 3] {
    let (x, y) = scene.cell_center(pose.cell);
    [x, y, EYE_HEIGHT]
}

/// Analytic direction of a world point relative to the agent body frame.
pub fn true_direction_angles(scene: &Scene, pose: &AgentPose, point: [f64; 3]) -> PanoramicAngles {
    let eye = eye_position(scene, pose);
    let (dx, dy, dz) = (point[0] - eye[0], point[1] - eye[1], point[2] - eye[2]);
    let theta = normalize_deg(bearing_deg(dx, dy) - pose.heading.degrees());
    let phi = libm::atan2(dz, libm::hypot(dx, dy)).to_degrees();
    PanoramicAngles { theta, phi }
}

/// Inverts a bounding box to panoramic angles:
/// `θ = atan(2(c_x − 0.5)·tan(F_x/2)) + 45p`, `φ = atan(2(0.5 − c_y)·tan(F_y/2)) + δ`.
pub fn to_panoramic(bbox: &BoundingBox2D, camera: &CameraIntrinsics, pitch_deg: f64) -> PanoramicAngles {
    let theta = atan_deg(2.0 * (bbox.c_x - 0.5) * tan_deg(camera.f_x / 2.0))
        + VIEW_SPACING_DEG * f64::from(bbox.p);
    let phi = atan_deg(2.0 * (0.5 - bbox.c_y) * tan_deg(camera.f_y / 2.0)) + pitch_deg;
    PanoramicAngles { theta: normalize_deg(theta), phi }
}

fn fit_extent(c: f64, s: f64) -> f64 {
    s.clamp(MIN_EXTENT, 1.0).min((2.0 * c.min(1.0 - c)).max(MIN_EXTENT))
}

/// Box geometry `(c_x, c_y, w, h)` of an axis-aligned 3D box in view `p`.
pub fn project_box(
    scene: &Scene,
    pose: &AgentPose,
    camera: &CameraIntrinsics,
    center: [f64; 3],
    extent: [f64; 3],
    p: u8,
    mode: ProjectionMode,
) -> Option<[f64; 4]> {
    match mode {
        ProjectionMode::CentroidExact => project_exact(scene, pose, camera, center, extent, p),
        ProjectionMode::Corners => project_corners(scene, pose, camera, center, extent, p),
    }
}

fn project_exact(
    scene: &Scene,
    pose: &AgentPose,
    camera: &CameraIntrinsics,
    center: [f64; 3],
    extent: [f64; 3],
    p: u8,
) -> Option<[f64; 4]> {
    let angles = true_direction_angles(scene, pose, center);
    let rel_theta = normalize_deg(angles.theta - VIEW_SPACING_DEG * f64::from(p));
    let rel_phi = angles.phi - f64::from(pose.pitch);
    if libm::fabs(rel_theta) >= 90.0 || libm::fabs(rel_phi) >= 90.0 {
        return None;
    }
    let tx = tan_deg(camera.f_x / 2.0);
    let ty = tan_deg(camera.f_y / 2.0);
    let c_x = 0.5 + tan_deg(rel_theta) / (2.0 * tx);
    let c_y = 0.5 - tan_deg(rel_phi) / (2.0 * ty);
    const EDGE: f64 = 1e-12;
    if !(-EDGE..=1.0 + EDGE).contains(&c_x) || !(-EDGE..=1.0 + EDGE).contains(&c_y) {
        return None;
    }
    let (c_x, c_y) = (c_x.clamp(0.0, 1.0), c_y.clamp(0.0, 1.0));
    let eye = eye_position(scene, pose);
    let d = [center[0] - eye[0], center[1] - eye[1], center[2] - eye[2]];
    let dist = libm::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
    let dh = libm::hypot(d[0], d[1]).max(1e-12);
    let across = extent[0] * libm::fabs(d[1] / dh) + extent[1] * libm::fabs(d[0] / dh);
    let w = across / (dist * tx);
    let h = extent[2] / (dist * ty);
    Some([c_x, c_y, fit_extent(c_x, w), fit_extent(c_y, h)])
}

fn project_corners(
    scene: &Scene,
    pose: &AgentPose,
    camera: &CameraIntrinsics,
    center: [f64; 3],
    extent: [f64; 3],
    p: u8,
) -> Option<[f64; 4]> {
    let yaw = pose.heading.degrees() + VIEW_SPACING_DEG * f64::from(p);
    let (sy, cy) = sin_cos_deg(yaw);
    let (sp, cp) = sin_cos_deg(f64::from(pose.pitch));
    let forward = [sy * cp, cy * cp, sp];
    let right = [cy, -sy, 0.0];
    let up = [-sy * sp, -cy * sp, cp];
    let eye = eye_position(scene, pose);
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let rel = |q: [f64; 3]| [q[0] - eye[0], q[1] - eye[1], q[2] - eye[2]];
    if dot(rel(center), forward) <= NEAR {
        return None;
    }
    let tx = tan_deg(camera.f_x / 2.0);
    let ty = tan_deg(camera.f_y / 2.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..8 {
        let s = |bit: u32| if k & (1 << bit) == 0 { -1.0 } else { 1.0 };
        let corner = [
            center[0] + s(0) * extent[0],
            center[1] + s(1) * extent[1],
            center[2] + s(2) * extent[2],
        ];
        let v = rel(corner);
        let depth = dot(v, forward).max(NEAR);
        let px = 0.5 + dot(v, right) / depth / (2.0 * tx);
        let py = 0.5 - dot(v, up) / depth / (2.0 * ty);
        x0 = x0.min(px);
        x1 = x1.max(px);
        y0 = y0.min(py);
        y1 = y1.max(py);
    }
    let (x0, x1, y0, y1) = (x0.max(0.0), x1.min(1.0), y0.max(0.0), y1.min(1.0));
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let (c_x, c_y) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    Some([c_x, c_y, fit_extent(c_x, x1 - x0), fit_extent(c_y, y1 - y0)])
}

/// Bounding box of one object in view `p`; `None` when it is behind the view
/// plane or outside the image. Occlusion is not modelled.
pub fn project_object(
    scene: &Scene,
    pose: &AgentPose,
    camera: &CameraIntrinsics,
    object: &SceneObject,
    p: u8,
    mode: ProjectionMode,
) -> Option<BoundingBox2D> {
    project_at(scene, pose, camera, object, object.center, p, mode)
}

fn project_at(
    scene: &Scene,
    pose: &AgentPose,
    camera: &CameraIntrinsics,
    object: &SceneObject,
    center: [f64; 3],
    p: u8,
    mode: ProjectionMode,
) -> Option<BoundingBox2D> {
    let [c_x, c_y, w, h] = project_box(scene, pose, camera, center, object.extent, p, mode)?;
    Some(BoundingBox2D { p, c_x, c_y, w, h, object_id: Some(object.object_id), class: object.class.id })
}

/// Ground-truth boxes over all eight views at the objects' scene positions,
/// ordered by `(p, objectId)`.
pub fn panoramic_sweep(
    scene: &Scene,
    pose: &AgentPose,
    camera: &CameraIntrinsics,
    mode: ProjectionMode,
) -> Vec<BoundingBox2D> {
    sweep_with(scene, pose, camera, mode, |i| Some(scene.objects[i].center))
}

/// Like [`panoramic_sweep`], using the objects' current positions in `state`;
/// held objects are not seen.
pub fn panoramic_sweep_state(
    scene: &Scene,
    state: &WorldState,
    camera: &CameraIntrinsics,
    mode: ProjectionMode,
) -> Vec<BoundingBox2D> {
    sweep_with(scene, &state.pose, camera, mode, |i| object_center(scene, state, i))
}

fn sweep_with(
    scene: &Scene,
    pose: &AgentPose,
    camera: &CameraIntrinsics,
    mode: ProjectionMode,
    center: impl Fn(usize) -> Option<[f64; 3]>,
) -> Vec<BoundingBox2D> {
    let centers: Vec<Option<[f64; 3]>> = (0..scene.objects.len()).map(center).collect();
    let mut out = Vec::new();
    for p in 0..VIEW_COUNT {
        for (i, obj) in scene.objects.iter().enumerate() {
            if let Some(c) = centers[i] {
                out.extend(project_at(scene, pose, camera, obj, c, p, mode));
            }
        }
    }
    out.sort_by_key(|b| (b.p, b.object_id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{fixtures::kitchen, Cell, ClassVocab, ObjectState};
    use alloc::collections::BTreeSet;
    use alloc::vec;
    use proptest::prelude::*;

    fn lone(center: [f64; 3]) -> (Scene, SceneObject) {
        let v = ClassVocab::standard(32);
        let obj = SceneObject {
            object_id: 0,
            class: v.class(8),
            center,
            extent: [0.05, 0.05, 0.05],
            is_receptacle: false,
            state: ObjectState::default(),
        };
        let scene = Scene {
            grid_width: 40,
            grid_height: 40,
            cell_size: 0.25,
            obstacles: BTreeSet::new(),
            objects: vec![obj.clone()],
            scene_seed: 0,
        };
        (scene, obj)
    }

    const AGENT: Cell = Cell::new(20, 20);
    const EYE: (f64, f64) = (5.125, 5.125);

    #[test]
    fn on_axis_object_projects_to_center() {
        let (scene, obj) = lone([EYE.0, EYE.1 + 1.0, EYE_HEIGHT]);
        let pose = AgentPose::new(AGENT, 0);
        for mode in [ProjectionMode::CentroidExact, ProjectionMode::Corners] {
            let b = project_object(&scene, &pose, &CameraIntrinsics::default(), &obj, 0, mode).unwrap();
            assert!((b.c_x - 0.5).abs() < 1e-12 && (b.c_y - 0.5).abs() < 1e-12, "{mode:?} {b:?}");
        }
    }

    #[test]
    fn frustum_edge_maps_to_image_border() {
        // 45 degrees right of the axis with F_x = 90
        let (scene, obj) = lone([EYE.0 + 1.0, EYE.1 + 1.0, EYE_HEIGHT]);
        let pose = AgentPose::new(AGENT, 0);
        let b = project_object(&scene, &pose, &CameraIntrinsics::default(), &obj, 0, ProjectionMode::CentroidExact)
            .unwrap();
        assert!((b.c_x - 1.0).abs() < 1e-12, "{b:?}");
        assert!(b.is_valid());
    }

    #[test]
    fn behind_is_absent() {
        let (scene, obj) = lone([EYE.0, EYE.1 - 1.0, EYE_HEIGHT]);
        let pose = AgentPose::new(AGENT, 0);
        for mode in [ProjectionMode::CentroidExact, ProjectionMode::Corners] {
            assert!(project_object(&scene, &pose, &CameraIntrinsics::default(), &obj, 0, mode).is_none());
            assert!(project_object(&scene, &pose, &CameraIntrinsics::default(), &obj, 4, mode).is_some());
        }
    }

    #[test]
    fn inverse_projection_examples() {
        let cam = CameraIntrinsics::default();
        let b = |p, c_x, c_y| BoundingBox2D { p, c_x, c_y, w: 0.1, h: 0.1, object_id: None, class: 0 };
        assert_eq!(to_panoramic(&b(0, 0.5, 0.5), &cam, 0.0), PanoramicAngles { theta: 0.0, phi: 0.0 });
        assert_eq!(to_panoramic(&b(2, 0.5, 0.5), &cam, 0.0).theta, 90.0);
        assert!((to_panoramic(&b(0, 1.0, 0.5), &cam, 0.0).theta - 45.0).abs() < 1e-12);
        assert!((to_panoramic(&b(0, 0.5, 0.0), &cam, -15.0).phi - 30.0).abs() < 1e-12);
        // view 4 centered is straight behind
        assert_eq!(to_panoramic(&b(4, 0.5, 0.5), &cam, 0.0).theta, 180.0);
        assert_eq!(to_panoramic(&b(7, 0.5, 0.5), &cam, 0.0).theta, -45.0);
    }

    #[test]
    fn analytic_directions() {
        let (scene, _) = lone([0.0; 3]);
        let pose = AgentPose::new(AGENT, 0);
        let a = true_direction_angles(&scene, &pose, [EYE.0, EYE.1 + 0.25, EYE_HEIGHT]);
        assert_eq!(a, PanoramicAngles { theta: 0.0, phi: 0.0 });
        let a = true_direction_angles(&scene, &pose, [EYE.0 - 1.0, EYE.1, EYE_HEIGHT]);
        assert_eq!(a.theta, -90.0);
        let a = true_direction_angles(&scene, &pose, [EYE.0, EYE.1 + 1.0, EYE_HEIGHT + 1.0]);
        assert!((a.phi - 45.0).abs() < 1e-12);
        // heading is subtracted
        let a = true_direction_angles(&scene, &AgentPose::new(AGENT, 2), [EYE.0 - 1.0, EYE.1, EYE_HEIGHT]);
        assert_eq!(a.theta, 180.0);
    }

    #[test]
    fn empty_scene_empty_sweep() {
        let (mut scene, _) = lone([0.0; 3]);
        scene.objects.clear();
        let pose = AgentPose::new(AGENT, 0);
        assert!(panoramic_sweep(&scene, &pose, &CameraIntrinsics::default(), ProjectionMode::Corners).is_empty());
    }

    /// Oracle for the view count: the number of `p` with `|θ − 45p| ≤ 45`,
    /// enumerated over the 8 view axes directly.
    fn expected_views(theta: f64) -> usize {
        (0..8).filter(|&p| (normalize_deg(theta - 45.0 * f64::from(p))).abs() <= 45.0 + 1e-9).count()
    }

    #[test]
    fn single_object_seen_in_two_or_three_views() {
        let pose = AgentPose::new(AGENT, 0);
        for k in 0..72 {
            let bearing = 5.0 * f64::from(k);
            let (s, c) = sin_cos_deg(bearing);
            let (scene, _) = lone([EYE.0 + 2.0 * s, EYE.1 + 2.0 * c, 0.9]);
            let boxes = panoramic_sweep(&scene, &pose, &CameraIntrinsics::default(), ProjectionMode::CentroidExact);
            let n = boxes.len();
            assert!(n == 2 || n == 3, "bearing {bearing}: {n}");
            assert_eq!(n, expected_views(bearing), "bearing {bearing}");
            assert!(boxes.windows(2).all(|w| (w[0].p, w[0].object_id) < (w[1].p, w[1].object_id)));
        }
    }

    #[test]
    fn sweep_is_rotation_equivariant() {
        let scene = kitchen();
        let cam = CameraIntrinsics::default();
        let world_thetas = |h: u8| {
            let pose = AgentPose::new(Cell::new(0, 2), h);
            let mut v: Vec<(u32, i64)> = panoramic_sweep(&scene, &pose, &cam, ProjectionMode::CentroidExact)
                .iter()
                .map(|b| {
                    let t = normalize_deg(to_panoramic(b, &cam, 0.0).theta + pose.heading.degrees());
                    (b.object_id.unwrap(), libm::round(t * 1e6) as i64)
                })
                .collect();
            v.sort();
            v
        };
        let base = world_thetas(0);
        assert!(!base.is_empty());
        assert_eq!(base, world_thetas(2));
        assert_eq!(base, world_thetas(5));
    }

    proptest! {
        #[test]
        fn normalization_ignores_full_turns(k in -2000i64..2000, turns in -3i64..3) {
            // dyadic angles keep `a + 360 * turns` exact
            let a = k as f64 / 8.0;
            prop_assert_eq!(normalize_deg(a), normalize_deg(a + 360.0 * turns as f64));
            let n = normalize_deg(a);
            prop_assert!(n > -180.0 && n <= 180.0);
        }

        #[test]
        fn theta_increases_with_cx(p in 0u8..8, f_x in 10.0f64..170.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            prop_assume!(a < b);
            let cam = CameraIntrinsics { f_x, f_y: 90.0 };
            let bx = |c_x| BoundingBox2D { p, c_x, c_y: 0.5, w: 0.1, h: 0.1, object_id: None, class: 0 };
            let ta = atan_deg(2.0 * (a - 0.5) * tan_deg(f_x / 2.0));
            let tb = atan_deg(2.0 * (b - 0.5) * tan_deg(f_x / 2.0));
            prop_assert!(ta < tb);
            // unwrapped relative to the view axis, the inverse is monotone too
            let ra = normalize_deg(to_panoramic(&bx(a), &cam, 0.0).theta - 45.0 * f64::from(p));
            let rb = normalize_deg(to_panoramic(&bx(b), &cam, 0.0).theta - 45.0 * f64::from(p));
            prop_assert!(ra < rb);
        }

        #[test]
        fn corner_boxes_stay_inside(dx in -3.0f64..3.0, dy in -3.0f64..3.0, z in 0.0f64..2.5, h in 0u8..8, pitch in -2i32..=2) {
            let (scene, obj) = lone([EYE.0 + dx, EYE.1 + dy, z]);
            let mut pose = AgentPose::new(AGENT, h);
            pose.pitch = pitch * 15;
            for b in panoramic_sweep(&scene, &pose, &CameraIntrinsics::default(), ProjectionMode::Corners) {
                prop_assert!(b.is_valid(), "{:?}", b);
            }
            let _ = obj;
        }
    }
}
