//! Displacement metrics for multimodal forecasts.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::map_model::Point2;
use crate::predictor::PredictionSet;

/// Best-endpoint distance above which an agent counts as a miss (strict).
pub const MISS_THRESHOLD: f64 = 2.0;

fn check_lengths(modes: &[Vec<Point2>], gt: &[Point2]) -> Result<()> {
    if modes.is_empty() {
        return Err(Error::Empty("prediction has no modes".into()));
    }
    if gt.is_empty() {
        return Err(Error::Empty("ground truth trajectory".into()));
    }
    for m in modes {
        if m.len() != gt.len() {
            return Err(Error::LengthMismatch {
                expected: gt.len(),
                actual: m.len(),
            });
        }
    }
    Ok(())
}

pub fn ade(mode: &[Point2], gt: &[Point2]) -> f64 {
    mode.iter().zip(gt).map(|(p, g)| p.distance(*g)).sum::<f64>() / gt.len() as f64
}

pub fn fde(mode: &[Point2], gt: &[Point2]) -> f64 {
    mode[mode.len() - 1].distance(gt[gt.len() - 1])
}

pub fn min_ade_modes(modes: &[Vec<Point2>], gt: &[Point2]) -> Result<f64> {
    check_lengths(modes, gt)?;
    Ok(modes.iter().map(|m| ade(m, gt)).fold(f64::INFINITY, f64::min))
}

pub fn min_fde_modes(modes: &[Vec<Point2>], gt: &[Point2]) -> Result<f64> {
    check_lengths(modes, gt)?;
    Ok(modes.iter().map(|m| fde(m, gt)).fold(f64::INFINITY, f64::min))
}

pub fn min_ade(pred: &PredictionSet, gt: &[Point2]) -> Result<f64> {
    min_ade_modes(&pred.modes, gt)
}

pub fn min_fde(pred: &PredictionSet, gt: &[Point2]) -> Result<f64> {
    min_fde_modes(&pred.modes, gt)
}

pub fn is_miss(pred: &PredictionSet, gt: &[Point2]) -> Result<bool> {
    Ok(min_fde(pred, gt)? > MISS_THRESHOLD)
}

pub fn miss_rate(preds: &[PredictionSet], gts: &[Vec<Point2>]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::LengthMismatch {
            expected: preds.len(),
            actual: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("miss rate over zero agents".into()));
    }
    let mut misses = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        misses += is_miss(p, g)? as usize;
    }
    Ok(misses as f64 / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub n_agents: usize,
}

impl MetricReport {
    pub const CSV_HEADER: &'static str = "min_ade,min_fde,miss_rate,n_agents";

    pub fn csv_row(&self) -> String {
        format!("{:.6},{:.6},{:.6},{}", self.min_ade, self.min_fde, self.miss_rate, self.n_agents)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", Self::CSV_HEADER).unwrap();
        writeln!(out, "{}", self.csv_row()).unwrap();
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Agent-averaged metrics over aligned predictions and ground truths.
pub fn evaluate(preds: &[PredictionSet], gts: &[Vec<Point2>]) -> Result<MetricReport> {
    let mr = miss_rate(preds, gts)?;
    let n = preds.len() as f64;
    let mut ade_sum = 0.0;
    let mut fde_sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        ade_sum += min_ade(p, g)?;
        fde_sum += min_fde(p, g)?;
    }
    Ok(MetricReport {
        min_ade: ade_sum / n,
        min_fde: fde_sum / n,
        miss_rate: mr,
        n_agents: preds.len(),
    })
}

/// Agent-weighted mean of several reports.
pub fn aggregate(reports: &[MetricReport]) -> Result<MetricReport> {
    let n: usize = reports.iter().map(|r| r.n_agents).sum();
    if reports.is_empty() || n == 0 {
        return Err(Error::Empty("no agents to aggregate".into()));
    }
    let w = |f: fn(&MetricReport) -> f64| reports.iter().map(|r| f(r) * r.n_agents as f64).sum::<f64>() / n as f64;
    Ok(MetricReport {
        min_ade: w(|r| r.min_ade),
        min_fde: w(|r| r.min_fde),
        miss_rate: w(|r| r.miss_rate),
        n_agents: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_model::FUTURE_LEN;
    use crate::predictor::NUM_MODES;
    use proptest::prelude::*;

    fn line(offset: Point2) -> Vec<Point2> {
        (1..=FUTURE_LEN).map(|t| Point2::new(t as f64, 0.0) + offset).collect()
    }

    fn set(modes: Vec<Vec<Point2>>) -> PredictionSet {
        let n = modes.len();
        PredictionSet {
            modes,
            scores: vec![1.0 / n as f64; n],
        }
    }

    #[test]
    fn exact_mode_gives_zero() {
        let gt = line(Point2::ZERO);
        let mut modes = vec![line(Point2::new(5.0, 5.0)); NUM_MODES];
        modes[3] = gt.clone();
        let p = set(modes);
        assert_eq!(min_ade(&p, &gt).unwrap(), 0.0);
        assert_eq!(min_fde(&p, &gt).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_unit_ade() {
        let gt = line(Point2::ZERO);
        let p = set(vec![line(Point2::new(0.0, 1.0)); NUM_MODES]);
        assert_eq!(min_ade(&p, &gt).unwrap(), 1.0);
    }

    #[test]
    fn three_four_five_endpoint() {
        let gt = line(Point2::ZERO);
        let p = set(vec![line(Point2::new(3.0, 4.0)); NUM_MODES]);
        assert_eq!(min_fde(&p, &gt).unwrap(), 5.0);
    }

    #[test]
    fn hand_built_ade_pair() {
        let gt = vec![Point2::ZERO; 2];
        // A: distances 1.4 and 2.0 → 1.7; B: 0.8 and 1.0 → 0.9.
        let a = vec![Point2::new(1.4, 0.0), Point2::new(0.0, 2.0)];
        let b = vec![Point2::new(0.0, 0.8), Point2::new(-1.0, 0.0)];
        assert!((ade(&a, &gt) - 1.7).abs() < 1e-15);
        assert!((min_ade_modes(&[a, b], &gt).unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn fde_comes_from_endpoint_best_mode() {
        let gt = vec![Point2::ZERO; 3];
        // Mode A tracks closely but ends far; mode B starts far but ends on target.
        let a = vec![Point2::ZERO, Point2::ZERO, Point2::new(3.0, 0.0)];
        let b = vec![Point2::new(4.0, 0.0), Point2::new(4.0, 0.0), Point2::new(0.5, 0.0)];
        let modes = vec![a.clone(), b.clone()];
        assert!(ade(&a, &gt) < ade(&b, &gt));
        let brute = modes.iter().map(|m| fde(m, &gt)).fold(f64::INFINITY, f64::min);
        assert_eq!(min_fde_modes(&modes, &gt).unwrap(), brute);
        assert_eq!(brute, 0.5);
    }

    #[test]
    fn miss_threshold_is_strict() {
        let gt = line(Point2::ZERO);
        let near = set(vec![line(Point2::new(0.0, 1.0)); NUM_MODES]);
        let exact = set(vec![line(Point2::new(0.0, 2.0)); NUM_MODES]);
        let gts = vec![gt.clone(); 4];
        assert_eq!(miss_rate(&vec![near; 4], &gts).unwrap(), 0.0);
        assert_eq!(miss_rate(&vec![exact; 4], &gts).unwrap(), 0.0);

        let far = set(vec![line(Point2::new(1.5, 2.0)); NUM_MODES]);
        let mut preds = vec![set(vec![gt.clone(); NUM_MODES]); 7];
        preds.extend(vec![far; 3]);
        assert_eq!(miss_rate(&preds, &vec![gt; 10]).unwrap(), 0.3);
        assert!(miss_rate(&[], &[]).is_err());
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let p = set(vec![line(Point2::ZERO); NUM_MODES]);
        assert!(matches!(min_ade(&p, &line(Point2::ZERO)[..10]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn aggregate_examples() {
        let r = |ade, n| MetricReport {
            min_ade: ade,
            min_fde: 2.0 * ade,
            miss_rate: 0.1,
            n_agents: n,
        };
        assert_eq!(aggregate(&[r(1.5, 4)]).unwrap(), r(1.5, 4));
        assert_eq!(aggregate(&[r(1.0, 5), r(3.0, 5)]).unwrap().min_ade, 2.0);
        let u = aggregate(&[r(1.0, 10), r(2.0, 30)]).unwrap();
        assert_eq!(u.min_ade, 1.75);
        assert_eq!(u.n_agents, 40);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn report_serialization() {
        let r = MetricReport {
            min_ade: 1.25,
            min_fde: 2.5,
            miss_rate: 0.5,
            n_agents: 8,
        };
        assert_eq!(r.to_csv(), "min_ade,min_fde,miss_rate,n_agents\n1.250000,2.500000,0.500000,8\n");
        let back: MetricReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }

    fn traj(len: usize) -> impl Strategy<Value = Vec<Point2>> {
        prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| Point2::new(x, y)), len)
    }

    proptest! {
        #[test]
        fn min_metrics_bound_every_mode(
            modes in prop::collection::vec(traj(8), 1..8),
            gt in traj(8),
            extra in traj(8),
            shift in (-100.0..100.0f64, -100.0..100.0f64),
        ) {
            let a = min_ade_modes(&modes, &gt).unwrap();
            let f = min_fde_modes(&modes, &gt).unwrap();
            for m in &modes {
                prop_assert!(a <= ade(m, &gt));
                prop_assert!(f <= fde(m, &gt));
            }
            let mut more = modes.clone();
            more.push(extra);
            prop_assert!(min_ade_modes(&more, &gt).unwrap() <= a);
            prop_assert!(min_fde_modes(&more, &gt).unwrap() <= f);
            let s = Point2::new(shift.0, shift.1);
            let moved: Vec<Vec<Point2>> = modes.iter().map(|m| m.iter().map(|p| *p + s).collect()).collect();
            let gt_moved: Vec<Point2> = gt.iter().map(|p| *p + s).collect();
            prop_assert!((min_ade_modes(&moved, &gt_moved).unwrap() - a).abs() < 1e-9);
            prop_assert!((min_fde_modes(&moved, &gt_moved).unwrap() - f).abs() < 1e-9);
        }

        #[test]
        fn integer_translation_is_exact(
            modes in prop::collection::vec(prop::collection::vec((-64i32..64, -64i32..64), 6), 1..7),
            gt in prop::collection::vec((-64i32..64, -64i32..64), 6),
            shift in (-1000i32..1000, -1000i32..1000),
        ) {
            let pt = |(x, y): (i32, i32)| Point2::new(x as f64, y as f64);
            let modes: Vec<Vec<Point2>> = modes.into_iter().map(|m| m.into_iter().map(pt).collect()).collect();
            let gt: Vec<Point2> = gt.into_iter().map(pt).collect();
            let s = pt(shift);
            let moved: Vec<Vec<Point2>> = modes.iter().map(|m| m.iter().map(|p| *p + s).collect()).collect();
            let gt_moved: Vec<Point2> = gt.iter().map(|p| *p + s).collect();
            prop_assert_eq!(min_ade_modes(&modes, &gt).unwrap(), min_ade_modes(&moved, &gt_moved).unwrap());
            prop_assert_eq!(min_fde_modes(&modes, &gt).unwrap(), min_fde_modes(&moved, &gt_moved).unwrap());
        }
    }
}
