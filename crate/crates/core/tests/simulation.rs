use pano_nav_core::angle::normalize_deg;
use pano_nav_core::eval::{goal_metrics, subgoal_success_rates};
use pano_nav_core::localizer::{build_input, predict, train, TokenSequence, TrainConfig, MAX_LEN};
use pano_nav_core::policy::{
    localizer_samples, run_all_subgoals, run_episode, AngleFollower, Guidance, RandomPolicy, RunOptions, Sensing,
    SubgoalGroup,
};
use pano_nav_core::scenegen::navigable_cells;
use pano_nav_core::*;
use proptest::prelude::*;

fn world(seed: u64, density: f64) -> Option<(Scene, Task, Trajectory)> {
    let params = GenParams { obstacle_density: density, seed, ..GenParams::default() };
    let scene = generate_scene(&params).ok()?;
    let task = generate_task(&scene, &ClassVocab::standard(params.class_vocab_size), seed).ok()?;
    let expert = plan_expert(&scene, &task).ok()?;
    Some((scene, task, expert))
}

fn sensing<'a>(vocab: &'a Vocabulary, noise: NoiseModel, guidance: Guidance<'a>) -> Sensing<'a> {
    Sensing {
        camera: CameraIntrinsics::default(),
        mode: ProjectionMode::Corners,
        noise,
        class_count: ClassVocab::DEFAULT_SIZE as u32,
        vocab,
        guidance,
    }
}

#[test]
fn oracle_follower_solves_open_scenes() {
    let vocab = Vocabulary::new(&ClassVocab::standard(ClassVocab::DEFAULT_SIZE));
    let s = sensing(&vocab, NoiseModel::zero(), Guidance::Oracle);
    let worlds: Vec<_> = (0..30).filter_map(|i| world(1000 + i, 0.0)).collect();
    assert!(worlds.len() >= 25);
    let mut subgoals = Vec::new();
    let mut episodes = Vec::new();
    for (scene, task, expert) in &worlds {
        let mut p = AngleFollower::new("oracle");
        subgoals.extend(run_all_subgoals(scene, task, expert, &mut p, &s, &RunOptions::default(), 0));
        episodes.push(run_episode(scene, task, &mut p, &s, &RunOptions::default(), 0));
    }
    let nav = subgoal_success_rates(&subgoals)[&SubgoalGroup::Nav].rate;
    assert!(nav >= 0.95, "{nav}");
    let (success, condition) = goal_metrics(&episodes);
    assert!(condition >= success && success > 0.5, "{success} {condition}");
}

#[test]
fn trained_localizer_beats_chance_on_unseen_scenes() {
    let classes = ClassVocab::standard(ClassVocab::DEFAULT_SIZE);
    let vocab = Vocabulary::new(&classes);
    let s = sensing(&vocab, NoiseModel::default(), Guidance::Zero);
    let camera = CameraIntrinsics::default();
    let collect = |range: std::ops::Range<u64>| -> Vec<(TokenSequence, f64)> {
        range
            .filter_map(|i| world(i, 0.1))
            .flat_map(|(scene, task, expert)| localizer_samples(&scene, &task, &expert, &s, 0))
            .map(|x| (x.to_input(&camera), x.psi_true))
            .collect()
    };
    let train_set = collect(0..60);
    let test_set = collect(500..530);
    let dims = ModelDims::new(classes.len(), vocab.len(), 16);
    let cfg = TrainConfig { epochs: 8, ..TrainConfig::default() };
    let (model, curve) = train(LocalizerModel::init(dims, 3, 0.1), &train_set, &cfg).unwrap();
    assert!(curve.last().unwrap() < curve.first().unwrap());
    let mae = test_set
        .iter()
        .map(|(seq, psi)| normalize_deg(predict(&model, seq).unwrap().angle().unwrap_or(0.0) - psi).abs())
        .sum::<f64>()
        / test_set.len() as f64;
    assert!(mae < 75.0, "held-out MAE {mae}");
}

#[test]
fn inputs_respect_length_limit_with_many_detections() {
    let gt: Vec<BoundingBox2D> = (0..200)
        .map(|i| BoundingBox2D {
            p: (i % 8) as u8,
            c_x: 0.5,
            c_y: 0.5,
            w: 0.1,
            h: 0.1,
            object_id: Some(i),
            class: i % 32,
        })
        .collect();
    let dets = detect(&gt, &NoiseModel::default(), 5, 32);
    let seq = build_input(&dets, &CameraIntrinsics::default(), 0.0, &[1, 2, 3, 4], &[5, 6]);
    assert_eq!(seq.len(), MAX_LEN);
    assert!(seq.is_well_formed());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exact_projection_inverts(seed in 0u64..5000, h in 0u8..8, pitch in -2i32..=2, pick in 0usize..1000) {
        let Ok(scene) = generate_scene(&GenParams { seed, ..GenParams::default() }) else { return Ok(()) };
        let cells: Vec<_> = navigable_cells(&scene).into_iter().collect();
        let pose = AgentPose { cell: cells[pick % cells.len()], heading: Heading::new(h), pitch: 15 * pitch };
        let camera = CameraIntrinsics::default();
        for obj in &scene.objects {
            let truth = true_direction_angles(&scene, &pose, obj.center);
            for p in 0..8 {
                if let Some(b) = project_object(&scene, &pose, &camera, obj, p, ProjectionMode::CentroidExact) {
                    let a = to_panoramic(&b, &camera, f64::from(pose.pitch));
                    prop_assert!(normalize_deg(a.theta - truth.theta).abs() < 1e-9);
                    prop_assert!((a.phi - truth.phi).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn random_episodes_are_reproducible(seed in 0u64..300, run_seed in 0u64..1000) {
        let Some((scene, task, _)) = world(seed, 0.1) else { return Ok(()) };
        let vocab = Vocabulary::new(&ClassVocab::standard(ClassVocab::DEFAULT_SIZE));
        let s = sensing(&vocab, NoiseModel::default(), Guidance::Heuristic);
        let a = run_episode(&scene, &task, &mut RandomPolicy::new(run_seed), &s, &RunOptions::default(), run_seed);
        let b = run_episode(&scene, &task, &mut RandomPolicy::new(run_seed), &s, &RunOptions::default(), run_seed);
        prop_assert_eq!(&a, &b);
        prop_assert!(a.trajectory.actions.len() <= RunOptions::default().limits.max_timesteps);
        prop_assert!(a.goal_conditions_satisfied.0 <= a.goal_conditions_satisfied.1);
    }
}
