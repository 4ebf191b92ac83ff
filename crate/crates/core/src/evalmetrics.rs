//! Center-distance average precision and orientation error.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{wrap, BBox3D};

pub const DIST_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Recall samples of the interpolated PR curve.
pub const RECALL_POINTS: usize = 101;
pub const MIN_RECALL: f64 = 0.1;
pub const MIN_PRECISION: f64 = 0.1;
/// Match radius for the orientation error.
pub const AOE_THRESHOLD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox3D,
    pub score: f64,
}

/// Detections and ground truth of one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameResult {
    pub dets: Vec<Detection>,
    pub gts: Vec<BBox3D>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// One flag per detection, in input order.
    pub tp: Vec<bool>,
    /// `(det index, gt index)`
    pub pairs: Vec<(usize, usize)>,
}

fn bev_dist(a: &BBox3D, b: &BBox3D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Greedy matching of score-sorted detections to the nearest free gt.
pub fn match_detections(dets: &[Detection], gts: &[BBox3D], threshold: f64) -> Result<MatchResult> {
    if dets.windows(2).any(|w| w[0].score < w[1].score) {
        return Err(Error::InvalidArgument("detections must be sorted by descending score".into()));
    }
    let mut taken = vec![false; gts.len()];
    let mut tp = vec![false; dets.len()];
    let mut pairs = Vec::new();
    for (i, d) in dets.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (j, g) in gts.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let dist = bev_dist(&d.bbox, g);
            if dist <= threshold && best.is_none_or(|(b, _)| dist < b) {
                best = Some((dist, j));
            }
        }
        if let Some((_, j)) = best {
            taken[j] = true;
            tp[i] = true;
            pairs.push((i, j));
        }
    }
    Ok(MatchResult { tp, pairs })
}

fn sorted(dets: &[Detection]) -> Vec<Detection> {
    let mut d = dets.to_vec();
    d.sort_by(|a, b| b.score.total_cmp(&a.score));
    d
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub threshold: f64,
    /// Raw cumulative `(recall, precision)` per detection in score order.
    pub points: Vec<(f64, f64)>,
}

/// AP from raw cumulative points: the precision envelope is sampled on the
/// recall grid, the low-recall part is dropped, the precision floor is
/// subtracted and the result rescaled so a perfect curve scores 1.
pub fn ap_from_curve(points: &[(f64, f64)]) -> f64 {
    let start = (MIN_RECALL * (RECALL_POINTS - 1) as f64).round() as usize + 1;
    // accumulate the shortfall from a perfect curve so that 1.0 comes out exact
    let mut short = 0.0;
    for k in start..RECALL_POINTS {
        let r = k as f64 / (RECALL_POINTS - 1) as f64;
        let p = points
            .iter()
            .filter(|(rec, _)| *rec >= r - 1e-12)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        short += (1.0 - p).min(1.0 - MIN_PRECISION);
    }
    (1.0 - short / ((RECALL_POINTS - start) as f64 * (1.0 - MIN_PRECISION))).max(0.0)
}

/// Pooled PR curve over frames at one distance threshold.
pub fn pr_curve(frames: &[FrameResult], threshold: f64) -> Result<PrCurve> {
    let n_gt: usize = frames.iter().map(|f| f.gts.len()).sum();
    if n_gt == 0 {
        return Err(Error::InvalidArgument("average precision needs at least one ground-truth box".into()));
    }
    // (score, frame, rank-in-frame, tp)
    let mut flat: Vec<(f64, usize, usize, bool)> = Vec::new();
    for (fi, f) in frames.iter().enumerate() {
        let d = sorted(&f.dets);
        let m = match_detections(&d, &f.gts, threshold)?;
        for (k, (det, tp)) in d.iter().zip(m.tp).enumerate() {
            flat.push((det.score, fi, k, tp));
        }
    }
    flat.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut tps = 0usize;
    let points = flat
        .iter()
        .enumerate()
        .map(|(i, (_, _, _, tp))| {
            tps += usize::from(*tp);
            (tps as f64 / n_gt as f64, tps as f64 / (i + 1) as f64)
        })
        .collect();
    Ok(PrCurve { threshold, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// `(distance threshold, AP)`
    pub ap_per_threshold: Vec<(f64, f64)>,
    pub mean_ap: f64,
    /// NaN when there were no true positives.
    pub aoe: f64,
    pub aoe_count: usize,
    pub pr_curves: Vec<PrCurve>,
}

pub fn average_precision(frames: &[FrameResult], thresholds: &[f64]) -> Result<(Vec<(f64, f64)>, Vec<PrCurve>)> {
    let mut aps = Vec::new();
    let mut curves = Vec::new();
    for &t in thresholds {
        let c = pr_curve(frames, t)?;
        aps.push((t, ap_from_curve(&c.points)));
        curves.push(c);
    }
    Ok((aps, curves))
}

/// Mean absolute wrapped heading error over true positives; `(NaN, 0)` if none.
pub fn average_orientation_error(frames: &[FrameResult], threshold: f64) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for f in frames {
        let d = sorted(&f.dets);
        for (i, j) in match_detections(&d, &f.gts, threshold)?.pairs {
            sum += wrap(d[i].bbox.yaw - f.gts[j].yaw).abs();
            n += 1;
        }
    }
    Ok(if n == 0 { (f64::NAN, 0) } else { (sum / n as f64, n) })
}

pub fn evaluate(frames: &[FrameResult]) -> Result<EvalResult> {
    let (ap_per_threshold, pr_curves) = average_precision(frames, &DIST_THRESHOLDS)?;
    let mean_ap = ap_per_threshold.iter().map(|(_, a)| a).sum::<f64>() / ap_per_threshold.len() as f64;
    let (aoe, aoe_count) = average_orientation_error(frames, AOE_THRESHOLD)?;
    Ok(EvalResult { ap_per_threshold, mean_ap, aoe, aoe_count, pr_curves })
}

/// `metric,value` rows.
pub fn write_metrics_csv<W: Write>(mut w: W, r: &EvalResult) -> Result<()> {
    writeln!(w, "metric,value")?;
    for (t, ap) in &r.ap_per_threshold {
        writeln!(w, "ap@{t},{ap:.9}")?;
    }
    writeln!(w, "mean_ap,{:.9}", r.mean_ap)?;
    writeln!(w, "aoe,{:.9}", r.aoe)?;
    writeln!(w, "aoe_count,{}", r.aoe_count)?;
    writeln!(w, "recall_points,{RECALL_POINTS}")?;
    Ok(())
}

/// `threshold,recall,precision` rows of the raw curves.
pub fn write_pr_csv<W: Write>(mut w: W, r: &EvalResult) -> Result<()> {
    writeln!(w, "threshold,recall,precision")?;
    for c in &r.pr_curves {
        for (rec, p) in &c.points {
            writeln!(w, "{},{rec:.9},{p:.9}", c.threshold)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn gt(x: f64, y: f64, yaw: f64) -> BBox3D {
        BBox3D { x, y, z: 0.0, w: 1.9, l: 4.6, h: 1.7, yaw }
    }

    fn det(x: f64, y: f64, yaw: f64, score: f64) -> Detection {
        Detection { bbox: gt(x, y, yaw), score }
    }

    #[test]
    fn matching_examples() {
        let g = [gt(0.0, 0.0, 0.0)];
        assert_eq!(match_detections(&[det(0.0, 0.0, 0.0, 0.9)], &g, 0.5).unwrap().tp, vec![true]);
        let two = [det(0.0, 0.0, 0.0, 0.9), det(0.1, 0.0, 0.0, 0.8)];
        assert_eq!(match_detections(&two, &g, 0.5).unwrap().tp, vec![true, false]);
        assert_eq!(match_detections(&[det(3.0, 0.0, 0.0, 0.9)], &g, 2.0).unwrap().tp, vec![false]);
        assert!(match_detections(&[det(0.0, 0.0, 0.0, 0.1), det(0.0, 0.0, 0.0, 0.5)], &g, 1.0).is_err());
        // the higher-scored det takes the nearest gt first
        let gs = [gt(0.0, 0.0, 0.0), gt(1.0, 0.0, 0.0)];
        let m = match_detections(&[det(0.9, 0.0, 0.0, 0.9), det(0.4, 0.0, 0.0, 0.5)], &gs, 2.0).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (1, 0)]);
    }

    /// Step-envelope AP evaluated directly from the definition.
    fn manual_ap(recall: f64, precision: f64) -> f64 {
        // a single flat operating point: p on [0, recall], zero after
        let mut s = 0.0;
        for k in 11..=100 {
            let r = k as f64 / 100.0;
            let p = if r <= recall { precision } else { 0.0 };
            s += (p - 0.1f64).max(0.0);
        }
        s / 90.0 / 0.9
    }

    #[test]
    fn two_gts_one_tp_hand_value() {
        let f = FrameResult { dets: vec![det(0.0, 0.0, 0.0, 0.7)], gts: vec![gt(0.0, 0.0, 0.0), gt(20.0, 0.0, 0.0)] };
        let (aps, _) = average_precision(&[f], &DIST_THRESHOLDS).unwrap();
        // recall samples 0.11..=0.50 carry precision 1: 40 * 0.9 / 90 / 0.9
        for (_, ap) in aps {
            assert_abs_diff_eq!(ap, 4.0 / 9.0, epsilon = 1e-12);
            assert_abs_diff_eq!(ap, manual_ap(0.5, 1.0), epsilon = 1e-12);
        }
    }

    #[test]
    fn perfect_and_empty() {
        let gts: Vec<BBox3D> = (0..5).map(|k| gt(5.0 * k as f64, 0.0, 0.0)).collect();
        let dets: Vec<Detection> = gts.iter().enumerate().map(|(k, g)| Detection { bbox: *g, score: 1.0 - 0.1 * k as f64 }).collect();
        let r = evaluate(&[FrameResult { dets, gts: gts.clone() }]).unwrap();
        assert_eq!(r.mean_ap, 1.0);
        assert!(r.ap_per_threshold.iter().all(|(_, a)| *a == 1.0));
        assert_eq!(r.aoe, 0.0);
        let r = evaluate(&[FrameResult { dets: vec![], gts }]).unwrap();
        assert_eq!(r.mean_ap, 0.0);
        assert!(r.aoe.is_nan());
        assert_eq!(r.aoe_count, 0);
        assert!(evaluate(&[FrameResult::default()]).is_err());
    }

    #[test]
    fn aoe_examples() {
        let f = |dets: Vec<Detection>, gts: Vec<BBox3D>| average_orientation_error(&[FrameResult { dets, gts }], 2.0).unwrap();
        assert_eq!(f(vec![det(0.0, 0.0, 1.0, 0.5)], vec![gt(0.0, 0.0, 1.0)]).0, 0.0);
        assert_abs_diff_eq!(f(vec![det(0.0, 0.0, PI, 0.5)], vec![gt(0.0, 0.0, 0.0)]).0, PI, epsilon = 1e-15);
        let (a, n) = f(
            vec![det(0.0, 0.0, PI / 6.0, 0.5), det(10.0, 0.0, -PI / 6.0, 0.4)],
            vec![gt(0.0, 0.0, 0.0), gt(10.0, 0.0, 0.0)],
        );
        assert_abs_diff_eq!(a, PI / 6.0, epsilon = 1e-15);
        assert_eq!(n, 2);
    }

    #[test]
    fn duplicates_yield_single_tp() {
        let g = vec![gt(0.0, 0.0, 0.0)];
        let dets: Vec<Detection> = (0..6).map(|k| det(0.0, 0.0, 0.0, 0.9 - 0.1 * k as f64)).collect();
        let c = pr_curve(&[FrameResult { dets, gts: g }], 1.0).unwrap();
        assert_eq!(c.points.iter().filter(|(r, _)| *r == 1.0).count(), 6);
        assert_eq!(c.points[0], (1.0, 1.0));
        assert_abs_diff_eq!(c.points[5].1, 1.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn csv_is_stable() {
        let f = FrameResult { dets: vec![det(0.0, 0.0, 0.0, 0.7)], gts: vec![gt(0.0, 0.0, 0.0), gt(20.0, 0.0, 0.0)] };
        let r = evaluate(&[f]).unwrap();
        let mut a = Vec::new();
        write_metrics_csv(&mut a, &r).unwrap();
        let s = String::from_utf8(a).unwrap();
        assert!(s.starts_with("metric,value\nap@0.5,0.444444444\n"));
        assert!(s.contains("mean_ap,0.444444444\n"));
    }

    fn arb_frame() -> impl Strategy<Value = FrameResult> {
        let g = prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64), 1..6);
        let d = prop::collection::vec((-20.0..20.0f64, -20.0..20.0f64, 0.0..1.0f64, -3.0..3.0f64), 0..8);
        (g, d).prop_map(|(g, d)| FrameResult {
            gts: g.into_iter().map(|(x, y)| gt(x, y, 0.0)).collect(),
            dets: d.into_iter().map(|(x, y, s, yaw)| det(x, y, yaw, s)).collect(),
        })
    }

    proptest! {
        #[test]
        fn ap_bounds_and_monotonicity(f in arb_frame(), tx in -50.0..50.0f64, ty in -50.0..50.0f64, rot in -3.0..3.0f64) {
            let base = average_precision(std::slice::from_ref(&f), &DIST_THRESHOLDS).unwrap().0;
            for (_, a) in &base {
                prop_assert!((0.0..=1.0).contains(a));
            }
            // a new object, found by a detection scored above everything; a
            // duplicate of an existing gt would not do, since it can steal a match
            let mut better = f.clone();
            let extra = gt(500.0, 500.0, 0.0);
            better.gts.push(extra);
            better.dets.push(Detection { bbox: extra, score: 2.0 });
            let up = average_precision(&[better], &DIST_THRESHOLDS).unwrap().0;
            // a far-off detection scored below everything
            let mut worse = f.clone();
            worse.dets.push(det(1000.0, 1000.0, 0.0, -1.0));
            let down = average_precision(&[worse], &DIST_THRESHOLDS).unwrap().0;
            for k in 0..4 {
                prop_assert!(up[k].1 >= base[k].1 - 1e-12);
                prop_assert!(down[k].1 <= base[k].1 + 1e-12);
            }
            // rigid motion of the whole frame
            let pose = crate::geom::Pose::new(tx, ty, 0.0, rot);
            let moved = FrameResult {
                gts: f.gts.iter().map(|g| pose.apply_box(g)).collect(),
                dets: f.dets.iter().map(|d| Detection { bbox: pose.apply_box(&d.bbox), score: d.score }).collect(),
            };
            let m = average_precision(&[moved], &DIST_THRESHOLDS).unwrap().0;
            for k in 0..4 {
                prop_assert!((m[k].1 - base[k].1).abs() < 1e-9);
            }
        }

        #[test]
        fn aoe_is_periodic(f in arb_frame(), k in -3i32..3) {
            let (a, n) = average_orientation_error(std::slice::from_ref(&f), 2.0).unwrap();
            let shifted = FrameResult {
                gts: f.gts.clone(),
                dets: f.dets.iter().map(|d| Detection { bbox: BBox3D { yaw: d.bbox.yaw + 2.0 * PI * k as f64, ..d.bbox }, score: d.score }).collect(),
            };
            let (b, m) = average_orientation_error(&[shifted], 2.0).unwrap();
            prop_assert_eq!(n, m);
            if n > 0 {
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!(a >= 0.0);
            }
        }
    }
}
