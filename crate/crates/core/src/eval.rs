//! Action-by-action, subgoal-by-subgoal and goal-by-goal metrics, and the
//! per-policy, per-split report.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::policy::{EpisodeOutcome, SubgoalGroup, SubgoalOutcome};
use crate::world::{goal_fraction, Action};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("no result for policy {policy:?}, split {split:?}, episode {episode}")]
    MissingResult { policy: String, split: String, episode: u64 },
    #[error("manifest lists no episodes")]
    EmptyManifest,
}

/// Macro-averaged F1 over position-aligned sequences: per class
/// `2TP / (2TP + FP + FN)`, averaged over every class present in either
/// sequence. Two empty sequences score 1.
pub fn macro_f1<T: Ord>(expected: &[T], predicted: &[T]) -> f64 {
    let classes: BTreeSet<&T> = expected.iter().chain(predicted).collect();
    if classes.is_empty() {
        return 1.0;
    }
    let mut counts: BTreeMap<&T, (u64, u64, u64)> = classes.iter().map(|c| (*c, (0, 0, 0))).collect();
    for (e, p) in expected.iter().zip(predicted) {
        if e == p {
            counts.get_mut(e).expect("class present").0 += 1;
        } else {
            counts.get_mut(p).expect("class present").1 += 1;
            counts.get_mut(e).expect("class present").2 += 1;
        }
    }
    // unmatched tails count as misses or spurious predictions
    for e in expected.iter().skip(predicted.len()) {
        counts.get_mut(e).expect("class present").2 += 1;
    }
    for p in predicted.iter().skip(expected.len()) {
        counts.get_mut(p).expect("class present").1 += 1;
    }
    let total: f64 = counts
        .values()
        .map(|&(tp, fp, fn_)| {
            let denom = 2 * tp + fp + fn_;
            if denom == 0 {
                0.0
            } else {
                (2 * tp) as f64 / denom as f64
            }
        })
        .sum();
    total / counts.len() as f64
}

/// Action F1 of teacher-forced predictions against the expert actions.
/// Interactions are compared by verb; the object id is ignored.
pub fn action_f1(expert: &[Action], predicted: &[Action]) -> f64 {
    let e: Vec<_> = expert.iter().map(Action::class).collect();
    let p: Vec<_> = predicted.iter().map(Action::class).collect();
    macro_f1(&e, &p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupRate {
    pub successes: usize,
    pub attempts: usize,
    pub rate: f64,
}

/// Success rate per subgoal group. Groups without attempts are absent.
pub fn subgoal_success_rates(outcomes: &[SubgoalOutcome]) -> BTreeMap<SubgoalGroup, GroupRate> {
    let mut out: BTreeMap<SubgoalGroup, GroupRate> = BTreeMap::new();
    for o in outcomes {
        let g = out.entry(o.group).or_insert(GroupRate { successes: 0, attempts: 0, rate: 0.0 });
        g.attempts += 1;
        g.successes += usize::from(o.success);
    }
    for g in out.values_mut() {
        g.rate = g.successes as f64 / g.attempts as f64;
    }
    out
}

/// `(goalSuccessRate, goalConditionRate)` from `(satisfied, total)` counts.
/// No episodes give `(0, 0)`.
pub fn goal_metrics_from_counts(counts: &[(usize, usize)]) -> (f64, f64) {
    if counts.is_empty() {
        return (0.0, 0.0);
    }
    let n = counts.len() as f64;
    let success = counts.iter().filter(|c| c.0 == c.1).count() as f64 / n;
    let condition = counts.iter().map(|&c| goal_fraction(c)).sum::<f64>() / n;
    (success, condition)
}

pub fn goal_metrics(outcomes: &[EpisodeOutcome]) -> (f64, f64) {
    let counts: Vec<_> = outcomes.iter().map(|o| o.goal_conditions_satisfied).collect();
    goal_metrics_from_counts(&counts)
}

/// Everything measured for one policy on one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EpisodeResult {
    pub policy: String,
    pub split: String,
    pub episode: u64,
    pub action_f1: f64,
    pub subgoals: Vec<SubgoalOutcome>,
    /// `(satisfied, total)` goal conditions after the full episode.
    pub goal_conditions: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SplitManifest {
    pub name: String,
    pub episodes: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportRow {
    pub policy: String,
    pub split: String,
    pub episodes: usize,
    pub action_f1: f64,
    pub nav_success: Option<f64>,
    /// Keyed by verb name.
    pub manip_success: BTreeMap<String, f64>,
    pub goal_success: f64,
    pub goal_condition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MetricsReport {
    pub config_digest: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ReportRow>,
}

impl MetricsReport {
    pub fn row(&self, policy: &str, split: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.policy == policy && r.split == split)
    }
}

/// Aggregates per-episode results into one row per `(policy, split)`,
/// sorted by policy then split. Every manifest episode must have a result
/// for every policy.
pub fn build_report(
    splits: &[SplitManifest],
    policies: &[String],
    results: &[EpisodeResult],
    config_digest: &str,
    seeds: &[u64],
) -> Result<MetricsReport, EvalError> {
    if splits.iter().all(|s| s.episodes.is_empty()) || policies.is_empty() {
        return Err(EvalError::EmptyManifest);
    }
    let index: BTreeMap<(&str, &str, u64), &EpisodeResult> =
        results.iter().map(|r| ((r.policy.as_str(), r.split.as_str(), r.episode), r)).collect();
    let mut policies: Vec<&String> = policies.iter().collect();
    policies.sort();
    policies.dedup();
    let mut split_order: Vec<&SplitManifest> = splits.iter().collect();
    split_order.sort_by(|a, b| a.name.cmp(&b.name));
    let mut rows = Vec::new();
    for policy in policies {
        for split in &split_order {
            let mut chosen = Vec::with_capacity(split.episodes.len());
            for &e in &split.episodes {
                let r = index.get(&(policy.as_str(), split.name.as_str(), e)).ok_or_else(|| EvalError::MissingResult {
                    policy: policy.clone(),
                    split: split.name.clone(),
                    episode: e,
                })?;
                chosen.push(*r);
            }
            rows.push(aggregate(policy, &split.name, &chosen));
        }
    }
    Ok(MetricsReport { config_digest: config_digest.into(), seeds: seeds.to_vec(), rows })
}

fn aggregate(policy: &str, split: &str, results: &[&EpisodeResult]) -> ReportRow {
    let n = results.len();
    let action_f1 = if n == 0 { 0.0 } else { results.iter().map(|r| r.action_f1).sum::<f64>() / n as f64 };
    let subgoals: Vec<SubgoalOutcome> = results.iter().flat_map(|r| r.subgoals.iter().copied()).collect();
    let rates = subgoal_success_rates(&subgoals);
    let nav_success = rates.get(&SubgoalGroup::Nav).map(|g| g.rate);
    let manip_success = rates
        .iter()
        .filter_map(|(g, r)| match g {
            SubgoalGroup::Manip(v) => Some((String::from(v.name()), r.rate)),
            SubgoalGroup::Nav => None,
        })
        .collect();
    let counts: Vec<_> = results.iter().map(|r| r.goal_conditions).collect();
    let (goal_success, goal_condition) = goal_metrics_from_counts(&counts);
    ReportRow {
        policy: policy.into(),
        split: split.into(),
        episodes: n,
        action_f1,
        nav_success,
        manip_success,
        goal_success,
        goal_condition,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Verb;
    use alloc::vec;
    use alloc::vec::Vec;
    use proptest::prelude::*;

    use Action::{MoveAhead as M, RotateRight45 as R, Stop as S};

    #[test]
    fn identical_sequences_score_one() {
        let a = [M, M, R, M, S];
        assert_eq!(action_f1(&a, &a), 1.0);
    }

    #[test]
    fn always_stop_scores_one_ninth() {
        let expert = [M, M, R, M, S];
        let stops = [S; 5];
        // M: 2·0/(0+0+3) = 0; R: 0; Stop: 2/(2+4+0) = 1/3
        assert!((action_f1(&expert, &stops) - 1.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn swapped_predictions_confusion_oracle() {
        let l = Action::RotateLeft45;
        let expert = [M, M, M, M, l, l, R, R, M, S];
        let mut pred = expert;
        pred.swap(0, 4); // predicts l at 0, M at 4
        pred[6] = l; // R predicted as l
        // confusion counts by hand
        // M: TP 4 (1,2,3,8) + M at 4 is FP, M at 0 is FN -> TP4 FP1 FN1 -> 8/10
        // l: TP 1 (5), FP 2 (0,6), FN 1 (4) -> 2/5
        // R: TP 1 (7), FN 1 (6) -> 2/3
        // Stop: 1
        let oracle = (0.8 + 0.4 + 2.0 / 3.0 + 1.0) / 4.0;
        assert!((action_f1(&expert, &pred) - oracle).abs() < 1e-15);
    }

    #[test]
    fn interaction_object_is_ignored() {
        let a = [Action::Interact { verb: Verb::PickUp, object_id: 1 }];
        let b = [Action::Interact { verb: Verb::PickUp, object_id: 2 }];
        assert_eq!(action_f1(&a, &b), 1.0);
    }

    fn sub(group: SubgoalGroup, success: bool) -> SubgoalOutcome {
        SubgoalOutcome { subgoal_index: 0, group, success, timesteps: 1 }
    }

    #[test]
    fn subgoal_rates() {
        let mut v: Vec<_> = (0..10).map(|i| sub(SubgoalGroup::Nav, i < 3)).collect();
        v.push(sub(SubgoalGroup::Manip(Verb::PickUp), true));
        let r = subgoal_success_rates(&v);
        assert_eq!(r[&SubgoalGroup::Nav].rate, 0.3);
        assert_eq!(r[&SubgoalGroup::Manip(Verb::PickUp)].rate, 1.0);
        assert!(!r.contains_key(&SubgoalGroup::Manip(Verb::Slice)));
    }

    #[test]
    fn goal_metric_examples() {
        assert_eq!(goal_metrics_from_counts(&[(2, 2), (3, 3)]), (1.0, 1.0));
        assert_eq!(goal_metrics_from_counts(&[(1, 2)]), (0.0, 0.5));
        assert_eq!(goal_metrics_from_counts(&[(2, 2), (1, 2), (0, 2), (2, 2)]), (0.5, 0.625));
    }

    fn result(policy: &str, split: &str, episode: u64, f1: f64, goal: (usize, usize)) -> EpisodeResult {
        EpisodeResult {
            policy: policy.into(),
            split: split.into(),
            episode,
            action_f1: f1,
            subgoals: vec![sub(SubgoalGroup::Nav, episode.is_multiple_of(2)), sub(SubgoalGroup::Manip(Verb::PutDown), true)],
            goal_conditions: goal,
        }
    }

    #[test]
    fn report_rows_and_errors() {
        let splits = vec![
            SplitManifest { name: "valid_unseen".into(), episodes: vec![0, 1] },
            SplitManifest { name: "valid_seen".into(), episodes: vec![0, 1] },
        ];
        let policies = vec!["oracle".into(), "expert".into()];
        let mut results = Vec::new();
        for p in ["expert", "oracle"] {
            for s in ["valid_seen", "valid_unseen"] {
                results.push(result(p, s, 0, 1.0, (2, 2)));
                results.push(result(p, s, 1, 0.5, (1, 2)));
            }
        }
        let report = build_report(&splits, &policies, &results, "abc", &[1, 2]).unwrap();
        let keys: Vec<_> = report.rows.iter().map(|r| (r.policy.as_str(), r.split.as_str())).collect();
        assert_eq!(
            keys,
            vec![("expert", "valid_seen"), ("expert", "valid_unseen"), ("oracle", "valid_seen"), ("oracle", "valid_unseen")]
        );
        let row = report.row("oracle", "valid_seen").unwrap();
        assert_eq!((row.action_f1, row.nav_success, row.goal_success, row.goal_condition), (0.75, Some(0.5), 0.5, 0.75));
        assert_eq!(row.manip_success["PutDown"], 1.0);

        results.pop();
        assert!(matches!(build_report(&splits, &policies, &results, "abc", &[]), Err(EvalError::MissingResult { .. })));
        assert_eq!(build_report(&[], &policies, &results, "abc", &[]), Err(EvalError::EmptyManifest));
    }

    proptest! {
        #[test]
        fn f1_is_label_agnostic(pairs in proptest::collection::vec((0u8..5, 0u8..5), 1..60), shift in 1u8..5) {
            let e: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let p: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let relabel = |v: &[u8]| v.iter().map(|x| (x + shift) % 5).collect::<Vec<_>>();
            let a = macro_f1(&e, &p);
            let b = macro_f1(&relabel(&e), &relabel(&p));
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn condition_rate_dominates_success(counts in proptest::collection::vec((0usize..4, 1usize..4), 0..30)) {
            let counts: Vec<_> = counts.into_iter().map(|(a, t)| (a.min(t), t)).collect();
            let (s, c) = goal_metrics_from_counts(&counts);
            prop_assert!(c >= s);
        }
    }
}
