//! Goal-direction localizer: token sequences built from panoramic detections
//! and instructions, plus three ways of producing `d_t` (oracle, geometric
//! heuristic, trained attention model).

mod model;
mod train;

use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::angle::{normalize_deg, sin_cos_deg};
use crate::detector::Detection;
use crate::panocam::{to_panoramic, CameraIntrinsics, PanoramicAngles};
use crate::scenegen::goal_direction;
use crate::world::{AgentPose, Instruction, ObjectClass, Vocabulary};

pub use model::{tile, LocalizerModel, ModelDims, ParamView, SPECIAL_CLS, SPECIAL_PAD, SPECIAL_SEP};
pub use train::{grad_check, gradient, sample_loss, train, TrainConfig};

pub const MAX_LEN: usize = 64;
/// Raw outputs shorter than this are treated as having no direction.
pub const MIN_NORM: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LocalizerError {
    #[error("non-finite localizer output")]
    NonFiniteOutput,
    #[error("training diverged in epoch {epoch}")]
    DivergedTraining { epoch: usize },
    #[error("empty training dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
}

/// `(sin θ, cos θ, sin φ, w, h)`.
pub fn spatial_encoding(angles: PanoramicAngles, w: f64, h: f64) -> [f64; 5] {
    let (st, ct) = sin_cos_deg(angles.theta);
    let (sp, _) = sin_cos_deg(angles.phi);
    [st, ct, sp, w, h]
}

/// Embedding vector of one spatial token.
pub fn encode_spatial_token(angles: PanoramicAngles, w: f64, h: f64, label: ObjectClass, model: &LocalizerModel) -> Vec<f64> {
    let raw = spatial_encoding(angles, w, h);
    let d = model.dims.dim;
    tile(&raw, d).zip(model.class_embedding(label.id)).map(|(t, c)| t + c).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SpatialInput {
    pub raw: [f64; 5],
    pub class: u32,
    pub p: u8,
    pub theta: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum Token {
    Cls,
    Sep,
    Spatial(SpatialInput),
    /// Instruction word at `position` within the text span.
    Word { id: u32, position: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    /// 0 for the `[CLS]`/spatial span and its `[SEP]`, 1 for the text span.
    pub segments: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.tokens.iter().filter_map(|t| match t {
            Token::Word { id, .. } => Some(*id),
            _ => None,
        })
    }

    pub fn spatial_count(&self) -> usize {
        self.tokens.iter().filter(|t| matches!(t, Token::Spatial(_))).count()
    }

    pub fn is_well_formed(&self) -> bool {
        let seps = self.tokens.iter().filter(|t| matches!(t, Token::Sep)).count();
        let clss = self.tokens.iter().filter(|t| matches!(t, Token::Cls)).count();
        matches!(self.tokens.first(), Some(Token::Cls))
            && clss == 1
            && seps == 2
            && matches!(self.tokens.last(), Some(Token::Sep))
            && self.segments.len() == self.tokens.len()
    }

    /// True if every id is inside the model's tables.
    pub fn fits(&self, dims: &ModelDims) -> bool {
        self.tokens.iter().all(|t| match t {
            Token::Spatial(s) => (s.class as usize) < dims.classes,
            Token::Word { id, .. } => (*id as usize) < dims.vocab,
            _ => true,
        })
    }
}

fn total(a: f64, b: f64) -> Ordering {
    a.total_cmp(&b)
}

fn canonical(a: &SpatialInput, b: &SpatialInput) -> Ordering {
    a.p.cmp(&b.p)
        .then(total(a.theta, b.theta))
        .then(a.class.cmp(&b.class))
        .then_with(|| a.raw.iter().zip(&b.raw).map(|(x, y)| total(*x, *y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal))
        .then(total(a.confidence, b.confidence))
}

/// Token sequence `[CLS] spatial… [SEP] L_k L_{k+1} [SEP]`.
///
/// Spatial tokens are ordered by `(p, θ)`. If the sequence would exceed
/// [`MAX_LEN`], the lowest-confidence detections are dropped first.
pub fn build_input(
    detections: &[Detection],
    camera: &CameraIntrinsics,
    pitch_deg: f64,
    instr_k: &[u32],
    instr_k1: &[u32],
) -> TokenSequence {
    let mut spatial: Vec<SpatialInput> = detections
        .iter()
        .map(|d| {
            let angles = to_panoramic(&d.bbox, camera, pitch_deg);
            SpatialInput {
                raw: spatial_encoding(angles, d.bbox.w, d.bbox.h),
                class: d.label,
                p: d.bbox.p,
                theta: angles.theta,
                confidence: d.confidence,
            }
        })
        .collect();
    let text_len = instr_k.len() + instr_k1.len();
    let budget = MAX_LEN.saturating_sub(3 + text_len);
    if spatial.len() > budget {
        spatial.sort_by(|a, b| total(b.confidence, a.confidence).then_with(|| canonical(a, b)));
        spatial.truncate(budget);
    }
    spatial.sort_by(canonical);

    let mut tokens = Vec::with_capacity(spatial.len() + text_len + 3);
    let mut segments = Vec::with_capacity(tokens.capacity());
    tokens.push(Token::Cls);
    segments.push(0);
    for s in spatial {
        tokens.push(Token::Spatial(s));
        segments.push(0);
    }
    tokens.push(Token::Sep);
    segments.push(0);
    for (i, &id) in instr_k.iter().chain(instr_k1).enumerate() {
        tokens.push(Token::Word { id, position: i as u32 });
        segments.push(1);
    }
    tokens.push(Token::Sep);
    segments.push(1);
    TokenSequence { tokens, segments }
}

/// `d_t`: zero outside navigation, otherwise a unit vector `(sin ψ, cos ψ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalDirection {
    pub d: [f64; 2],
}

impl GoalDirection {
    pub const ZERO: GoalDirection = GoalDirection { d: [0.0, 0.0] };
    pub const AHEAD: GoalDirection = GoalDirection { d: [0.0, 1.0] };

    pub fn from_angle(psi_deg: f64) -> Self {
        let (s, c) = sin_cos_deg(psi_deg);
        Self { d: [s, c] }
    }

    /// Unit-normalizes a raw output, falling back to "ahead".
    pub fn from_raw(raw: [f64; 2]) -> Self {
        let n = libm::hypot(raw[0], raw[1]);
        if n < MIN_NORM {
            Self::AHEAD
        } else {
            Self { d: [raw[0] / n, raw[1] / n] }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.d == [0.0, 0.0]
    }

    /// Angle in degrees, `None` for the zero vector.
    pub fn angle(&self) -> Option<f64> {
        if self.is_zero() {
            None
        } else {
            Some(normalize_deg(libm::atan2(self.d[0], self.d[1]).to_degrees()))
        }
    }
}

pub fn predict(model: &LocalizerModel, input: &TokenSequence) -> Result<GoalDirection, LocalizerError> {
    let raw = model.raw_output(input);
    if !raw.iter().all(|v| v.is_finite()) {
        return Err(LocalizerError::NonFiniteOutput);
    }
    Ok(GoalDirection::from_raw(raw))
}

pub fn oracle_direction(pose: &AgentPose, goal_poses: &[AgentPose]) -> GoalDirection {
    GoalDirection::from_angle(goal_direction(pose, goal_poses))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Left/right disambiguator in an instruction, if any.
pub fn side_of(instruction: &Instruction) -> Option<Side> {
    instruction.surface.split_whitespace().find_map(|w| match w {
        "left" => Some(Side::Left),
        "right" => Some(Side::Right),
        _ => None,
    })
}

/// First object class named in an instruction.
pub fn target_class(instruction: &Instruction, vocab: &Vocabulary) -> Option<u32> {
    instruction.tokens.iter().find_map(|&t| vocab.token_class(t))
}

/// Points at the best-matching detection of `target_class`.
pub fn heuristic_direction(
    detections: &[Detection],
    camera: &CameraIntrinsics,
    pitch_deg: f64,
    target_class: u32,
    instruction: &Instruction,
) -> Option<GoalDirection> {
    let side = side_of(instruction);
    let candidates = detections.iter().filter(|d| d.label == target_class).map(|d| {
        let theta = to_panoramic(&d.bbox, camera, pitch_deg).theta;
        (theta, d.bbox.area())
    });
    let best = match side {
        Some(Side::Left) => candidates.min_by(|a, b| total(a.0, b.0)),
        Some(Side::Right) => candidates.max_by(|a, b| total(a.0, b.0)),
        None => candidates.min_by(|a, b| total(b.1, a.1).then(total(a.0.abs(), b.0.abs()))),
    }?;
    Some(GoalDirection::from_angle(best.0))
}

/// `(raw₀ − sin ψ)² + (raw₁ − cos ψ)²`.
pub fn loss(raw: [f64; 2], psi_deg: f64) -> f64 {
    let (s, c) = sin_cos_deg(psi_deg);
    (raw[0] - s) * (raw[0] - s) + (raw[1] - c) * (raw[1] - c)
}

/// One localizer training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LocalizerSample {
    pub detections: Vec<Detection>,
    /// Camera pitch `δ` at the sweep.
    pub pitch: f64,
    pub instr_k: Vec<u32>,
    pub instr_k1: Vec<u32>,
    pub psi_true: f64,
}

impl LocalizerSample {
    pub fn to_input(&self, camera: &CameraIntrinsics) -> TokenSequence {
        build_input(&self.detections, camera, self.pitch, &self.instr_k, &self.instr_k1)
    }
}

/// Absolute angular difference in degrees, in `[0, 180]`.
pub fn angular_error(a_deg: f64, b_deg: f64) -> f64 {
    normalize_deg(a_deg - b_deg).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panocam::BoundingBox2D;
    use crate::world::{Cell, ClassVocab};
    use alloc::vec;
    use proptest::prelude::*;

    fn dims() -> ModelDims {
        ModelDims::new(32, 64, 32)
    }

    fn det(p: u8, c_x: f64, label: u32, confidence: f64) -> Detection {
        Detection {
            bbox: BoundingBox2D { p, c_x, c_y: 0.5, w: 0.1, h: 0.1, object_id: None, class: label },
            label,
            confidence,
            source_object_id: None,
        }
    }

    fn angles(theta: f64, phi: f64) -> PanoramicAngles {
        PanoramicAngles { theta, phi }
    }

    #[test]
    fn spatial_token_tiles_raw_encoding() {
        let model = LocalizerModel::zeros(dims());
        let v = encode_spatial_token(angles(0.0, 0.0), 0.1, 0.2, ObjectClass { id: 3, name: "x".into() }, &model);
        assert_eq!(v.len(), 32);
        assert_eq!(&v[..8], &[0.0, 1.0, 0.0, 0.1, 0.2, 0.0, 1.0, 0.0]);
        assert_eq!(v[30..], [0.0, 1.0]);
    }

    #[test]
    fn spatial_token_adds_class_embedding() {
        let model = LocalizerModel::init(dims(), 4, 0.1);
        let class = ObjectClass { id: 7, name: "x".into() };
        let v = encode_spatial_token(angles(10.0, 5.0), 0.3, 0.4, class, &model);
        let raw = spatial_encoding(angles(10.0, 5.0), 0.3, 0.4);
        for (j, x) in v.iter().enumerate() {
            assert_eq!(*x, raw[j % 5] + model.class_embedding(7)[j]);
        }
    }

    #[test]
    fn spatial_token_half_turn() {
        let raw = spatial_encoding(angles(180.0, 0.0), 0.1, 0.1);
        assert_eq!(raw[0], 0.0);
        assert_eq!(raw[1], -1.0);
    }

    #[test]
    fn empty_detections_give_text_only() {
        let seq = build_input(&[], &CameraIntrinsics::default(), 0.0, &[1, 2], &[3]);
        assert!(seq.is_well_formed());
        assert_eq!(
            seq.tokens,
            vec![
                Token::Cls,
                Token::Sep,
                Token::Word { id: 1, position: 0 },
                Token::Word { id: 2, position: 1 },
                Token::Word { id: 3, position: 2 },
                Token::Sep
            ]
        );
        assert_eq!(seq.segments, vec![0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn cap_drops_lowest_confidence() {
        let dets: Vec<Detection> =
            (0..100).map(|i| det((i % 8) as u8, 0.1 + 0.008 * i as f64, (i % 32) as u32, (i * 37 % 100) as f64 / 100.0 + 0.001)).collect();
        let instr_k = [1u32, 2, 3, 4];
        let instr_k1 = [5u32, 6, 7];
        let seq = build_input(&dets, &CameraIntrinsics::default(), 0.0, &instr_k, &instr_k1);
        assert_eq!(seq.len(), MAX_LEN);
        assert!(seq.is_well_formed());
        let kept: Vec<f64> = seq
            .tokens
            .iter()
            .filter_map(|t| match t {
                Token::Spatial(s) => Some(s.confidence),
                _ => None,
            })
            .collect();
        // independent oracle: the k largest confidences
        let mut all: Vec<f64> = dets.iter().map(|d| d.confidence).collect();
        all.sort_by(|a, b| b.total_cmp(a));
        let k = MAX_LEN - 3 - 7;
        assert_eq!(kept.len(), k);
        let threshold = all[k - 1];
        assert!(kept.iter().all(|c| *c >= threshold));
        let mut kept_sorted = kept.clone();
        kept_sorted.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(kept_sorted, all[..k].to_vec());
    }

    #[test]
    fn spatial_tokens_ordered_by_view_then_theta() {
        let dets = vec![det(2, 0.9, 1, 0.5), det(0, 0.7, 1, 0.5), det(2, 0.1, 1, 0.5), det(0, 0.2, 1, 0.5)];
        let seq = build_input(&dets, &CameraIntrinsics::default(), 0.0, &[], &[]);
        let keys: Vec<(u8, f64)> = seq
            .tokens
            .iter()
            .filter_map(|t| match t {
                Token::Spatial(s) => Some((s.p, s.theta)),
                _ => None,
            })
            .collect();
        assert_eq!(keys.len(), 4);
        assert!(keys.windows(2).all(|w| w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].1 <= w[1].1)));
    }

    #[test]
    fn zero_head_predicts_ahead() {
        let mut model = LocalizerModel::init(dims(), 1, 0.1);
        model.zero_output_head();
        let seq = build_input(&[det(0, 0.5, 3, 1.0)], &CameraIntrinsics::default(), 0.0, &[1], &[2]);
        assert_eq!(model.raw_output(&seq), [0.0, 0.0]);
        assert_eq!(predict(&model, &seq).unwrap(), GoalDirection::AHEAD);
    }

    #[test]
    fn non_finite_parameters_are_reported() {
        let mut model = LocalizerModel::init(dims(), 1, 0.1);
        let n = model.params.len();
        model.params[n - 1] = f64::NAN;
        let seq = build_input(&[], &CameraIntrinsics::default(), 0.0, &[1], &[2]);
        assert_eq!(predict(&model, &seq), Err(LocalizerError::NonFiniteOutput));
    }

    #[test]
    fn oracle_examples() {
        let goal = |cell: Cell| vec![AgentPose::new(cell, 0)];
        let pose = AgentPose::new(Cell::new(2, 2), 0);
        let ahead = oracle_direction(&pose, &goal(Cell::new(2, 5)));
        assert_eq!(ahead.d, [0.0, 1.0]);
        let right = oracle_direction(&pose, &goal(Cell::new(6, 2)));
        assert_eq!(right.d, [1.0, 0.0]);
        let diag = oracle_direction(&pose, &goal(Cell::new(4, 4)));
        let h = libm::sqrt(0.5);
        assert!((diag.d[0] - h).abs() < 1e-15 && (diag.d[1] - h).abs() < 1e-15);
    }

    #[test]
    fn heuristic_examples() {
        let camera = CameraIntrinsics::default();
        let vocab = Vocabulary::new(&ClassVocab::standard(32));
        let plain = vocab.instruction("walk to the knife").unwrap();
        let left = vocab.instruction("walk to the knife on the left").unwrap();
        let knife = ClassVocab::standard(32).id_of("knife").unwrap();
        assert_eq!(target_class(&left, &vocab), Some(knife));

        // c_x giving θ = 30 in view 0: 0.5 + tan 30 / 2
        let c_x = 0.5 + crate::angle::tan_deg(30.0) / 2.0;
        let one = [det(0, c_x, knife, 0.9)];
        let d = heuristic_direction(&one, &camera, 0.0, knife, &plain).unwrap();
        assert!((d.d[0] - 0.5).abs() < 1e-12 && (d.d[1] - libm::sqrt(3.0) / 2.0).abs() < 1e-12);

        assert!(heuristic_direction(&[det(0, 0.5, knife + 1, 0.9)], &camera, 0.0, knife, &plain).is_none());

        let two = [det(1, 0.5, knife, 0.9), det(7, 0.5, knife, 0.9)];
        let d = heuristic_direction(&two, &camera, 0.0, knife, &left).unwrap();
        assert!((d.angle().unwrap() + 45.0).abs() < 1e-9);
        let right = vocab.instruction("walk to the knife on the right").unwrap();
        let d = heuristic_direction(&two, &camera, 0.0, knife, &right).unwrap();
        assert!((d.angle().unwrap() - 45.0).abs() < 1e-9);
    }

    #[test]
    fn heuristic_prefers_larger_box() {
        let camera = CameraIntrinsics::default();
        let vocab = Vocabulary::new(&ClassVocab::standard(32));
        let plain = vocab.instruction("walk to the apple").unwrap();
        let mut big = det(2, 0.5, 9, 0.5);
        big.bbox.w = 0.3;
        let dets = [det(0, 0.5, 9, 0.9), big];
        let d = heuristic_direction(&dets, &camera, 0.0, 9, &plain).unwrap();
        assert!((d.angle().unwrap() - 90.0).abs() < 1e-9);
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss([0.0, 1.0], 0.0), 0.0);
        for psi in [0.0, 17.0, 90.0, -135.0] {
            assert!((loss([0.0, 0.0], psi) - 1.0).abs() < 1e-15);
        }
        assert_eq!(loss([0.0, 1.0], 180.0), 4.0);
        let (s, c) = sin_cos_deg(33.0);
        assert_eq!(loss([s, c], 33.0), 0.0);
    }

    proptest! {
        #[test]
        fn encoding_is_circular(theta in -720.0f64..720.0, phi in -60.0f64..60.0, k in -3i32..3) {
            let model = LocalizerModel::init(dims(), 2, 0.1);
            let class = ObjectClass { id: 5, name: "x".into() };
            // dyadic angles keep θ + 360k exact
            let theta = (theta * 64.0).round() / 64.0;
            let a = encode_spatial_token(angles(theta, phi), 0.2, 0.3, class.clone(), &model);
            let b = encode_spatial_token(angles(theta + 360.0 * f64::from(k), phi), 0.2, 0.3, class, &model);
            prop_assert_eq!(a, b);
        }

        #[test]
        fn predict_is_unit_norm(seed in 0u64..500, n in 0usize..20) {
            let model = LocalizerModel::init(dims(), seed, 0.3);
            let dets: Vec<Detection> = (0..n).map(|i| det((i % 8) as u8, 0.05 + 0.045 * i as f64, (i * 7 % 32) as u32, 0.5)).collect();
            let seq = build_input(&dets, &CameraIntrinsics::default(), 15.0, &[3, 4], &[5]);
            let d = predict(&model, &seq).unwrap();
            prop_assert!((libm::hypot(d.d[0], d.d[1]) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn permutation_invariant(seed in 0u64..1000, n in 0usize..80) {
            use rand::seq::SliceRandom;
            let mut rng = crate::rng::seeded(seed);
            let dets: Vec<Detection> = (0..n)
                .map(|i| det((i * 3 % 8) as u8, ((i * 13) % 17) as f64 / 17.0 + 0.01, (i % 5) as u32, ((i * 7) % 4) as f64 / 4.0))
                .collect();
            let mut shuffled = dets.clone();
            shuffled.shuffle(&mut rng);
            let camera = CameraIntrinsics::default();
            let a = build_input(&dets, &camera, 0.0, &[1, 2, 3], &[4, 5]);
            let b = build_input(&shuffled, &camera, 0.0, &[1, 2, 3], &[4, 5]);
            prop_assert!(a.len() <= MAX_LEN);
            let model = LocalizerModel::init(dims(), seed, 0.2);
            prop_assert_eq!(predict(&model, &a).unwrap(), predict(&model, &b).unwrap());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn oracle_rotation_covariance(cx in 0i32..8, cy in 0i32..8, gx in 0i32..8, gy in 0i32..8, h in 0u8..8) {
            prop_assume!((cx, cy) != (gx, gy));
            let goals = vec![AgentPose::new(Cell::new(gx, gy), 0)];
            let pose = AgentPose::new(Cell::new(cx, cy), h);
            let turned = AgentPose { heading: pose.heading.right(), ..pose };
            let a = oracle_direction(&pose, &goals).angle().unwrap();
            let b = oracle_direction(&turned, &goals).angle().unwrap();
            prop_assert!(angular_error(b, a - 45.0) < 1e-9);
        }
    }
}
