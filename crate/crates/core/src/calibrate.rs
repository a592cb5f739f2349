//! Per-type confidence thresholds and the final decision rule.

use std::fmt::Write as _;

use thiserror::Error;

use crate::registry::{Registry, TXT, UNKNOWN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrateError {
    #[error("no scored samples")]
    EmptyInput,
    #[error("no validation sample of type {0:?}")]
    MissingType(String),
    #[error("type id {id} out of range for {k} types")]
    BadTypeId { id: usize, k: usize },
    #[error("sample has {found} probabilities, expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("target precision {0} is outside [0, 1]")]
    BadTarget(f64),
}

/// A model output paired with the true type.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSample {
    pub gold_id: usize,
    pub probabilities: Vec<f32>,
}

impl ScoredSample {
    pub fn top(&self) -> (usize, f32) {
        argmax(&self.probabilities)
    }
}

/// Index and value of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f32]) -> (usize, f32) {
    let mut best = (0, f32::NEG_INFINITY);
    for (i, &v) in p.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub theta: f32,
    pub precision: f64,
    pub recall: f64,
}

fn check_samples(samples: &[ScoredSample], k: usize) -> Result<(), CalibrateError> {
    if samples.is_empty() {
        return Err(CalibrateError::EmptyInput);
    }
    for s in samples {
        if s.probabilities.len() != k {
            return Err(CalibrateError::ShapeMismatch {
                expected: k,
                found: s.probabilities.len(),
            });
        }
        if s.gold_id >= k {
            return Err(CalibrateError::BadTypeId { id: s.gold_id, k });
        }
    }
    Ok(())
}

/// Precision/recall for `type_id` at every candidate threshold, ascending.
///
/// A sample counts as predicted `type_id` when it is the argmax and its
/// score is at least θ. Precision with no predictions is 1.
pub fn pr_curve(samples: &[ScoredSample], type_id: usize) -> Result<Vec<PrPoint>, CalibrateError> {
    let k = samples.first().ok_or(CalibrateError::EmptyInput)?.probabilities.len();
    check_samples(samples, k)?;
    if type_id >= k {
        return Err(CalibrateError::BadTypeId { id: type_id, k });
    }
    Ok(curve(samples, type_id))
}

fn curve(samples: &[ScoredSample], t: usize) -> Vec<PrPoint> {
    let gold = samples.iter().filter(|s| s.gold_id == t).count();
    // (score, is_true_positive) for samples argmaxed to t, descending
    let mut hits: Vec<(f32, bool)> = samples
        .iter()
        .filter_map(|s| {
            let (top, score) = s.top();
            (top == t).then_some((score, s.gold_id == t))
        })
        .collect();
    hits.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut candidates: Vec<f32> = hits.iter().map(|h| h.0).collect();
    candidates.push(0.0);
    candidates.push(1.0);
    candidates.sort_by(f32::total_cmp);
    candidates.dedup();

    // prefix true-positive counts over the descending list
    let mut tp_prefix = Vec::with_capacity(hits.len() + 1);
    tp_prefix.push(0usize);
    for h in &hits {
        tp_prefix.push(tp_prefix.last().unwrap() + h.1 as usize);
    }
    candidates
        .into_iter()
        .map(|theta| {
            let predicted = hits.partition_point(|h| h.0 >= theta);
            let tp = tp_prefix[predicted];
            PrPoint {
                theta,
                precision: if predicted == 0 { 1.0 } else { tp as f64 / predicted as f64 },
                recall: if gold == 0 { 0.0 } else { tp as f64 / gold as f64 },
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TypeCalibration {
    pub precision: f64,
    pub recall: f64,
    pub achievable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub theta: Vec<f32>,
    pub target_precision: f64,
    pub achieved: Vec<TypeCalibration>,
}

pub const DEFAULT_TARGET_PRECISION: f64 = 0.99;

/// Picks, per type, the threshold with the best recall among those meeting
/// `target_precision` (smallest θ on ties). When none qualifies, the most
/// precise threshold wins (highest recall, then smallest θ on ties). The
/// fallback sinks `txt` and `unknown` always get θ = 0.
pub fn calibrate_thresholds(
    samples: &[ScoredSample],
    target_precision: f64,
    reg: &Registry,
) -> Result<ThresholdTable, CalibrateError> {
    if !(0.0..=1.0).contains(&target_precision) {
        return Err(CalibrateError::BadTarget(target_precision));
    }
    let k = reg.len();
    check_samples(samples, k)?;
    let mut seen = vec![false; k];
    for s in samples {
        seen[s.gold_id] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(CalibrateError::MissingType(reg.types()[missing].label.clone()));
    }

    let mut theta = Vec::with_capacity(k);
    let mut achieved = Vec::with_capacity(k);
    for ty in reg.types() {
        let points = curve(samples, ty.id);
        let sink = ty.label == TXT || ty.label == UNKNOWN;
        let chosen = if sink {
            points[0]
        } else {
            select(&points, target_precision)
        };
        debug_assert!(!sink || chosen.theta == 0.0);
        theta.push(chosen.theta);
        achieved.push(TypeCalibration {
            precision: chosen.precision,
            recall: chosen.recall,
            // the zero-prediction point meets any target vacuously
            achievable: chosen.precision >= target_precision && chosen.recall > 0.0,
        });
    }
    Ok(ThresholdTable {
        theta,
        target_precision,
        achieved,
    })
}

fn select(points: &[PrPoint], target: f64) -> PrPoint {
    // points are ascending in θ, so strict improvement keeps the smallest θ
    let mut best: Option<PrPoint> = None;
    for p in points.iter().filter(|p| p.precision >= target) {
        if best.is_none_or(|b| p.recall > b.recall) {
            best = Some(*p);
        }
    }
    if let Some(b) = best {
        return b;
    }
    let mut best = points[0];
    for p in &points[1..] {
        if p.precision > best.precision || (p.precision == best.precision && p.recall > best.recall) {
            best = *p;
        }
    }
    best
}

impl ThresholdTable {
    /// CSV with columns label, theta, precision, recall, achievable.
    pub fn to_csv(&self, reg: &Registry) -> String {
        let mut out = String::from("label,theta,precision,recall,achievable\n");
        for ((ty, theta), a) in reg.types().iter().zip(&self.theta).zip(&self.achieved) {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{}",
                ty.label, theta, a.precision, a.recall, a.achievable
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub id: usize,
    pub label: String,
    pub fell_back: bool,
}

/// Argmax, then accept it if its score clears its threshold; otherwise fall
/// back to `txt` or `unknown` by the argmax type's kind.
pub fn decide(p: &[f32], theta: &[f32], reg: &Registry) -> Decision {
    let (id, score) = argmax(p);
    let ty = &reg.types()[id];
    if score >= theta[id] {
        Decision {
            id,
            label: ty.label.clone(),
            fell_back: false,
        }
    } else {
        Decision {
            id,
            label: ty.fallback_label().to_owned(),
            fell_back: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reg(labels: &[&str]) -> Registry {
        Registry::builtin().subset(labels).unwrap()
    }

    /// Sample of type `gold` whose argmax is `top` with the given score.
    fn sample(gold: usize, top: usize, score: f32, k: usize) -> ScoredSample {
        let rest = (1.0 - score) / (k - 1) as f32;
        let mut p = vec![rest; k];
        p[top] = score;
        ScoredSample { gold_id: gold, probabilities: p }
    }

    fn point_at(points: &[PrPoint], theta: f32) -> PrPoint {
        *points.iter().find(|p| p.theta == theta).unwrap()
    }

    #[test]
    fn curve_on_a_hand_counted_case() {
        let s = vec![
            sample(0, 0, 0.9, 2),
            sample(0, 0, 0.8, 2),
            sample(0, 0, 0.6, 2),
            sample(1, 0, 0.7, 2),
        ];
        let c = pr_curve(&s, 0).unwrap();
        let p = point_at(&c, 0.8);
        assert_eq!(p.precision, 1.0);
        assert!((p.recall - 2.0 / 3.0).abs() < 1e-12);
        let p = point_at(&c, 0.6);
        assert_eq!(p.precision, 0.75);
        assert_eq!(p.recall, 1.0);
        // no predictions at θ = 1: precision 1 by convention, recall 0
        let p = point_at(&c, 1.0);
        assert_eq!((p.precision, p.recall), (1.0, 0.0));
    }

    #[test]
    fn precision_can_fall_as_theta_rises() {
        let s = vec![sample(1, 0, 0.9, 2), sample(0, 0, 0.5, 2)];
        let c = pr_curve(&s, 0).unwrap();
        assert_eq!(point_at(&c, 0.5).precision, 0.5);
        assert_eq!(point_at(&c, 0.9).precision, 0.0);
    }

    #[test]
    fn separable_scores_reach_perfect_point() {
        let s = vec![sample(0, 0, 0.95, 2), sample(0, 0, 0.9, 2), sample(1, 1, 0.9, 2)];
        let c = pr_curve(&s, 0).unwrap();
        assert!(c.iter().any(|p| p.precision == 1.0 && p.recall == 1.0));
    }

    #[test]
    fn empty_input_is_rejected() {
        assert_eq!(pr_curve(&[], 0), Err(CalibrateError::EmptyInput));
    }

    #[test]
    fn thresholds_differ_per_type() {
        let r = reg(&["html", "pdf", "txt", "unknown"]);
        // html is clean above 0.8; pdf has a confusable negative at 0.85
        let s = vec![
            sample(0, 0, 0.85, 4),
            sample(0, 0, 0.9, 4),
            sample(1, 1, 0.95, 4),
            sample(1, 1, 0.9, 4),
            sample(2, 1, 0.85, 4),
            sample(2, 2, 0.6, 4),
            sample(3, 3, 0.6, 4),
        ];
        let t = calibrate_thresholds(&s, 0.99, &r).unwrap();
        assert_eq!(t.theta[0], 0.0);
        assert_eq!(t.theta[1], 0.9);
        assert_eq!(t.theta[2], 0.0);
        assert!(t.achieved.iter().all(|a| a.achievable));
        assert_eq!(t.achieved[1].recall, 1.0);
    }

    #[test]
    fn unattainable_target_takes_max_precision() {
        let r = reg(&["html", "txt", "unknown"]);
        // the html-argmaxed negative outscores every positive
        let s = vec![
            sample(0, 0, 0.7, 3),
            sample(0, 0, 0.6, 3),
            sample(1, 0, 0.9, 3),
            sample(1, 1, 0.9, 3),
            sample(2, 2, 0.9, 3),
        ];
        let t = calibrate_thresholds(&s, 0.99, &r).unwrap();
        // θ = 1 predicts nothing, precision 1 by convention
        assert_eq!(t.theta[0], 1.0);
        assert!(!t.achieved[0].achievable);
        assert_eq!(t.achieved[0].recall, 0.0);
    }

    #[test]
    fn missing_type_is_reported() {
        let r = reg(&["html", "pdf", "txt", "unknown"]);
        let s = vec![sample(0, 0, 0.9, 4)];
        assert_eq!(
            calibrate_thresholds(&s, 0.99, &r),
            Err(CalibrateError::MissingType("pdf".into()))
        );
    }

    #[test]
    fn fallback_sinks_get_zero() {
        let r = reg(&["txt", "unknown", "zip"]);
        let s = vec![sample(0, 0, 0.5, 3), sample(1, 0, 0.9, 3), sample(2, 1, 0.6, 3)];
        let t = calibrate_thresholds(&s, 0.99, &r).unwrap();
        assert_eq!(&t.theta[..2], &[0.0, 0.0]);
    }

    /// Exhaustive reference: every θ in the candidate set is scored by
    /// direct counting, then the selection rule is applied literally.
    fn brute_force(samples: &[ScoredSample], k: usize, target: f64, sinks: &[usize]) -> Vec<f32> {
        (0..k)
            .map(|t| {
                if sinks.contains(&t) {
                    return 0.0;
                }
                let mut cands: Vec<f32> = samples
                    .iter()
                    .filter(|s| s.top().0 == t)
                    .map(|s| s.top().1)
                    .chain([0.0, 1.0])
                    .collect();
                cands.sort_by(f32::total_cmp);
                cands.dedup();
                let gold = samples.iter().filter(|s| s.gold_id == t).count() as f64;
                let scored: Vec<(f32, f64, f64)> = cands
                    .iter()
                    .map(|&th| {
                        let pred: Vec<_> = samples
                            .iter()
                            .filter(|s| s.top().0 == t && s.top().1 >= th)
                            .collect();
                        let tp = pred.iter().filter(|s| s.gold_id == t).count() as f64;
                        let prec = if pred.is_empty() { 1.0 } else { tp / pred.len() as f64 };
                        (th, prec, tp / gold)
                    })
                    .collect();
                let ok: Vec<_> = scored.iter().filter(|x| x.1 >= target).collect();
                if !ok.is_empty() {
                    let best_r = ok.iter().map(|x| x.2).fold(f64::MIN, f64::max);
                    ok.iter().filter(|x| x.2 == best_r).map(|x| x.0).fold(f32::MAX, f32::min)
                } else {
                    let best_p = scored.iter().map(|x| x.1).fold(f64::MIN, f64::max);
                    let at_p: Vec<_> = scored.iter().filter(|x| x.1 == best_p).collect();
                    let best_r = at_p.iter().map(|x| x.2).fold(f64::MIN, f64::max);
                    at_p.iter().filter(|x| x.2 == best_r).map(|x| x.0).fold(f32::MAX, f32::min)
                }
            })
            .collect()
    }

    fn random_samples(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<ScoredSample> {
        (0..n)
            .map(|i| {
                let gold = i % k;
                let mut p: Vec<f32> = (0..k).map(|_| rng.random::<f32>()).collect();
                // bias toward the gold type so curves are interesting
                p[gold] += rng.random::<f32>() * 2.0;
                // coarse scores create ties
                let sum: f32 = p.iter().sum();
                let p = p.iter().map(|v| (v / sum * 50.0).round() / 50.0).collect();
                ScoredSample { gold_id: gold, probabilities: p }
            })
            .collect()
    }

    #[test]
    fn matches_exhaustive_search_on_1000_samples() {
        let labels = ["html", "pdf", "zip", "python", "json", "txt", "unknown"];
        let r = reg(&labels);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for target in [0.99, 0.9, 0.6] {
            let s = random_samples(&mut rng, 1000, labels.len());
            let t = calibrate_thresholds(&s, target, &r).unwrap();
            assert_eq!(t.theta, brute_force(&s, labels.len(), target, &[5, 6]), "target {target}");
        }
    }

    #[test]
    fn self_consistent_on_the_calibration_set() {
        let r = reg(&["html", "pdf", "zip", "python", "txt", "unknown"]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_samples(&mut rng, 600, 6);
        let t = calibrate_thresholds(&s, 0.95, &r).unwrap();
        for (i, a) in t.achieved.iter().enumerate() {
            let pred: Vec<_> = s
                .iter()
                .filter(|x| decide(&x.probabilities, &t.theta, &r) == Decision {
                    id: i,
                    label: r.types()[i].label.clone(),
                    fell_back: false,
                })
                .collect();
            let tp = pred.iter().filter(|x| x.gold_id == i).count();
            let prec = if pred.is_empty() { 1.0 } else { tp as f64 / pred.len() as f64 };
            assert_eq!(prec, a.precision);
            if a.achievable {
                assert!(prec >= 0.95);
            }
        }
    }

    #[test]
    fn decide_examples() {
        let r = reg(&["html", "python", "pebin", "txt", "unknown"]);
        let theta = [0.8, 0.9, 0.9, 0.0, 0.0];
        let d = decide(&[0.85, 0.05, 0.05, 0.03, 0.02], &theta, &r);
        assert_eq!((d.label.as_str(), d.fell_back), ("html", false));
        let d = decide(&[0.2, 0.5, 0.1, 0.1, 0.1], &theta, &r);
        assert_eq!((d.label.as_str(), d.fell_back), ("txt", true));
        let d = decide(&[0.2, 0.1, 0.4, 0.2, 0.1], &theta, &r);
        assert_eq!((d.label.as_str(), d.fell_back), ("unknown", true));
    }

    #[test]
    fn argmax_ties_go_to_lowest_id() {
        assert_eq!(argmax(&[0.25, 0.25, 0.5, 0.5]), (2, 0.5));
    }

    #[test]
    fn csv_report_has_one_row_per_type() {
        let r = reg(&["html", "txt", "unknown"]);
        let s = vec![sample(0, 0, 0.9, 3), sample(1, 1, 0.9, 3), sample(2, 2, 0.8, 3)];
        let csv = calibrate_thresholds(&s, 0.99, &r).unwrap().to_csv(&r);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "label,theta,precision,recall,achievable");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("html,0,"));
    }

    proptest! {
        #[test]
        fn raising_theta_is_monotone(seed in any::<u64>(), n in 1usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = random_samples(&mut rng, n, 3);
            let c = pr_curve(&s, 0).unwrap();
            for w in c.windows(2) {
                prop_assert!(w[1].recall <= w[0].recall);
            }
            for p in &c {
                let pred: Vec<_> = s.iter().filter(|x| x.top().0 == 0 && x.top().1 >= p.theta).collect();
                let tp = pred.iter().filter(|x| x.gold_id == 0).count();
                let prec = if pred.is_empty() { 1.0 } else { tp as f64 / pred.len() as f64 };
                prop_assert_eq!(prec, p.precision);
            }
        }

        #[test]
        fn decide_ignores_non_argmax_permutations(seed in any::<u64>()) {
            let r = reg(&["html", "python", "pebin", "txt", "unknown"]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p: Vec<f32> = (0..5).map(|_| rng.random::<f32>()).collect();
            let theta: Vec<f32> = (0..5).map(|_| rng.random::<f32>()).collect();
            let before = decide(&p, &theta, &r);
            let top = before.id;
            let mut others: Vec<usize> = (0..5).filter(|&i| i != top).collect();
            let vals: Vec<f32> = others.iter().map(|&i| p[i]).collect();
            others.rotate_left(1);
            for (&i, v) in others.iter().zip(vals) {
                p[i] = v;
            }
            // the rotation may create a lower-id tie with the top score
            prop_assume!(argmax(&p).0 == top);
            prop_assert_eq!(decide(&p, &theta, &r), before);
        }
    }
}
