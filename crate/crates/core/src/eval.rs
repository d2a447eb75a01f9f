//! Average precision and robustness of tracker output against ground truth,
//! with reinitialization after sustained failures.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::convert::{AdaptiveConverter, FrameCutter};
use crate::error::{Error, Result};
use crate::event::{Event, GroundTruthTrack, Timestamp};
use crate::surface::AtslTdFrame;
use crate::track::{iou, PipelineConfig, TrackState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_rep: usize,
    /// Per-frame IoU below this is a failure; per-object AP at or above it is
    /// a success.
    pub failure_ap_threshold: f64,
    pub reinit_on_failure: bool,
    /// Consecutive failing frames before the tracker is reset from ground
    /// truth at the following frame.
    pub reinit_after: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_rep: 1,
            failure_ap_threshold: 0.5,
            reinit_on_failure: true,
            reinit_after: 3,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rep == 0 {
            return Err(Error::Config("n_rep must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.failure_ap_threshold) {
            return Err(Error::Config(format!(
                "failure threshold {} outside [0, 1]",
                self.failure_ap_threshold
            )));
        }
        if self.reinit_after == 0 {
            return Err(Error::Config("reinit_after must be at least 1".into()));
        }
        Ok(())
    }
}

/// IoU of each estimate against ground truth interpolated to the estimate's
/// time. Estimates outside the labelled span are skipped.
pub fn per_frame_iou(
    estimates: &[(Timestamp, BoundingBox)],
    ground_truth: &GroundTruthTrack,
) -> Vec<(Timestamp, f64)> {
    estimates
        .iter()
        .filter_map(|(t, b)| ground_truth.box_at(*t).map(|g| (*t, iou(b, &g))))
        .collect()
}

/// Mean per-frame IoU. `estimates` carry frame end times.
pub fn average_precision(
    estimates: &[(Timestamp, BoundingBox)],
    ground_truth: &GroundTruthTrack,
) -> Result<f64> {
    let ious = per_frame_iou(estimates, ground_truth);
    if ious.is_empty() {
        return Err(Error::Evaluation(format!(
            "object {}: no estimate falls inside the labelled time span",
            ground_truth.id
        )));
    }
    Ok(ious.iter().map(|(_, o)| o).sum::<f64>() / ious.len() as f64)
}

/// Fraction of successful runs.
pub fn average_robustness(success: &[bool]) -> f64 {
    if success.is_empty() {
        return 0.0;
    }
    success.iter().filter(|&&s| s).count() as f64 / success.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectResult {
    pub rep: usize,
    pub id: u32,
    pub ap: f64,
    pub success: bool,
    pub frames: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReinitRecord {
    pub rep: usize,
    pub object_id: u32,
    /// Last frame of the failing run.
    pub failed_at_frame: usize,
    /// Frame the tracker was restarted on.
    pub frame_index: usize,
    /// Seconds.
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub rep: usize,
    pub object_id: u32,
    pub frame_index: usize,
    pub t_end: f64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_object: Vec<ObjectResult>,
    pub ap: f64,
    pub ar: f64,
    pub reinits: Vec<ReinitRecord>,
    #[serde(skip)]
    pub frame_scores: Vec<FrameScore>,
}

impl EvalReport {
    pub fn write_frame_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "rep,object_id,frame_index,t_end,iou")?;
        for s in &self.frame_scores {
            writeln!(
                out,
                "{},{},{},{:.6},{:.6}",
                s.rep, s.object_id, s.frame_index, s.t_end, s.iou
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

struct ObjectRun<'a> {
    gt: &'a GroundTruthTrack,
    state: Option<TrackState>,
    failing: usize,
    reinit_pending: Option<usize>,
    ious: Vec<f64>,
}

impl ObjectRun<'_> {
    fn on_frame(
        &mut self,
        rep: usize,
        index: usize,
        frame: &AtslTdFrame,
        pipeline: &PipelineConfig,
        cfg: &EvalConfig,
        report: &mut EvalReport,
    ) {
        let Some(gt_end) = self.gt.box_at(frame.end_time) else {
            return;
        };
        let start_box = || {
            let t = frame
                .start_time
                .max(self.gt.first_time().unwrap_or(frame.start_time));
            self.gt.box_at(t).unwrap_or(gt_end)
        };
        match (&mut self.state, self.reinit_pending.take()) {
            (None, _) => self.state = Some(TrackState::new(self.gt.id, start_box())),
            (Some(state), Some(failed_at)) => {
                state.reinitialize(start_box());
                report.reinits.push(ReinitRecord {
                    rep,
                    object_id: self.gt.id,
                    failed_at_frame: failed_at,
                    frame_index: index,
                    time: frame.start_time.as_secs_f64(),
                });
            }
            _ => {}
        }
        let state = self.state.as_mut().expect("state initialised above");
        state.advance(index, frame, &pipeline.tracker);
        let o = iou(&state.current, &gt_end);
        self.ious.push(o);
        report.frame_scores.push(FrameScore {
            rep,
            object_id: self.gt.id,
            frame_index: index,
            t_end: frame.end_time.as_secs_f64(),
            iou: o,
        });
        if o < cfg.failure_ap_threshold {
            self.failing += 1;
            if cfg.reinit_on_failure && self.failing >= cfg.reinit_after {
                self.reinit_pending = Some(index);
                self.failing = 0;
            }
        } else {
            self.failing = 0;
        }
    }
}

/// Track every ground-truth object through `events` `n_rep` times and score
/// the result. Each object starts from its ground-truth box on the first
/// frame ending inside its labelled span.
pub fn run_protocol(
    events: &[Event],
    ground_truth: &[GroundTruthTrack],
    pipeline: &PipelineConfig,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    pipeline.tracker.validate()?;
    if ground_truth.is_empty() {
        return Err(Error::Evaluation("no ground-truth objects".into()));
    }
    let mut report = EvalReport {
        per_object: Vec::new(),
        ap: 0.0,
        ar: 0.0,
        reinits: Vec::new(),
        frame_scores: Vec::new(),
    };
    for rep in 0..cfg.n_rep {
        let mut runs: Vec<ObjectRun> = ground_truth
            .iter()
            .map(|gt| ObjectRun {
                gt,
                state: None,
                failing: 0,
                reinit_pending: None,
                ious: Vec::new(),
            })
            .collect();
        let mut converter = AdaptiveConverter::new(pipeline.converter)?;
        let mut index = 0;
        let mut handle = |frame: AtslTdFrame, report: &mut EvalReport| {
            for run in runs.iter_mut() {
                run.on_frame(rep, index, &frame, pipeline, cfg, report);
            }
            index += 1;
        };
        for e in events {
            if let Some(frame) = converter.push(e)? {
                handle(frame, &mut report);
            }
        }
        if pipeline.include_trailing {
            if let Some(frame) = converter.finish()? {
                handle(frame, &mut report);
            }
        }
        for run in &runs {
            if run.ious.is_empty() {
                return Err(Error::Evaluation(format!(
                    "object {}: no frame ends inside the labelled time span",
                    run.gt.id
                )));
            }
            let ap = run.ious.iter().sum::<f64>() / run.ious.len() as f64;
            report.per_object.push(ObjectResult {
                rep,
                id: run.gt.id,
                ap,
                success: ap >= cfg.failure_ap_threshold,
                frames: run.ious.len(),
            });
        }
    }
    let n = report.per_object.len() as f64;
    report.ap = report.per_object.iter().map(|r| r.ap).sum::<f64>() / n;
    let flags: Vec<bool> = report.per_object.iter().map(|r| r.success).collect();
    report.ar = average_robustness(&flags);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::AdaptiveConfig;
    use crate::event::SensorGeometry;
    use crate::nzge::{calibrate_interval, CalibrationSet, GridSpec};
    use crate::synth::{generate, translating_square};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn moving_gt(n: i64) -> GroundTruthTrack {
        GroundTruthTrack {
            id: 1,
            entries: (0..n)
                .map(|k| (Timestamp(k * 1000), bx(k as f64, 5.0, 10.0, 10.0)))
                .collect(),
        }
    }

    // Raster overlap of two integer-aligned boxes.
    fn raster_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let cell = |bb: &BoundingBox, x: i64, y: i64| {
            (x as f64) >= bb.x
                && (x as f64) < bb.right()
                && (y as f64) >= bb.y
                && (y as f64) < bb.bottom()
        };
        let (mut inter, mut union) = (0, 0);
        for y in -5..60 {
            for x in -5..60 {
                let (ia, ib) = (cell(a, x, y), cell(b, x, y));
                inter += (ia && ib) as u32;
                union += (ia || ib) as u32;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn identical_estimates_score_one() {
        let gt = moving_gt(10);
        assert_eq!(average_precision(&gt.entries, &gt).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_estimates_score_zero() {
        let gt = moving_gt(10);
        let est: Vec<_> = gt
            .entries
            .iter()
            .map(|(t, _)| (*t, bx(40.0, 40.0, 5.0, 5.0)))
            .collect();
        assert_eq!(average_precision(&est, &gt).unwrap(), 0.0);
    }

    #[test]
    fn half_matching_scores_half() {
        let gt = moving_gt(10);
        let est: Vec<_> = gt
            .entries
            .iter()
            .enumerate()
            .map(|(k, (t, b))| {
                (
                    *t,
                    if k % 2 == 0 {
                        *b
                    } else {
                        bx(40.0, 40.0, 5.0, 5.0)
                    },
                )
            })
            .collect();
        let oracle: f64 = est
            .iter()
            .zip(&gt.entries)
            .map(|((_, e), (_, g))| raster_iou(e, g))
            .sum::<f64>()
            / est.len() as f64;
        assert_abs_diff_eq!(oracle, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            average_precision(&est, &gt).unwrap(),
            oracle,
            epsilon = 1e-12
        );
    }

    #[test]
    fn estimates_are_compared_with_interpolated_truth() {
        let gt = moving_gt(3);
        let est = [(Timestamp(500), bx(0.5, 5.0, 10.0, 10.0))];
        assert_abs_diff_eq!(average_precision(&est, &gt).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn no_overlapping_support_is_an_error() {
        let gt = moving_gt(3);
        let est = [(Timestamp(10_000), bx(0.0, 5.0, 10.0, 10.0))];
        assert!(matches!(
            average_precision(&est, &gt),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn robustness_examples() {
        assert_eq!(average_robustness(&[true, true]), 1.0);
        assert_eq!(average_robustness(&[true, false]), 0.5);
        let cfg = EvalConfig::default();
        assert!(0.5 >= cfg.failure_ap_threshold);
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig {
            n_rep: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EvalConfig {
            reinit_after: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(EvalConfig::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn ap_ignores_time_shift(
            shift in -1_000_000i64..1_000_000,
            offsets in prop::collection::vec((-8.0f64..8.0, -8.0f64..8.0), 1..20),
        ) {
            let gt = moving_gt(offsets.len() as i64);
            let est: Vec<_> = gt.entries.iter().zip(&offsets)
                .map(|((t, b), (dx, dy))| (*t, bx(b.x + dx, b.y + dy, b.w, b.h)))
                .collect();
            let shifted_gt = GroundTruthTrack {
                id: 1,
                entries: gt.entries.iter().map(|(t, b)| (Timestamp(t.0 + shift), *b)).collect(),
            };
            let shifted_est: Vec<_> = est.iter().map(|(t, b)| (Timestamp(t.0 + shift), *b)).collect();
            let a = average_precision(&est, &gt).unwrap();
            let b = average_precision(&shifted_est, &shifted_gt).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn robustness_is_monotone(aps in prop::collection::vec(0.0f64..1.0, 1..10), bump in 0.0f64..1.0, k in 0usize..10) {
            let k = k % aps.len();
            let flags = |v: &[f64]| v.iter().map(|&a| a >= 0.5).collect::<Vec<_>>();
            let mut raised = aps.clone();
            raised[k] = (raised[k] + bump).min(1.0);
            prop_assert!(average_robustness(&flags(&raised)) >= average_robustness(&flags(&aps)));
        }
    }

    struct Scene {
        events: Vec<Event>,
        gt: Vec<GroundTruthTrack>,
        pipeline: PipelineConfig,
    }

    fn occluded_scene() -> Scene {
        let g = SensorGeometry::DAVIS240;
        let mut cal_script = translating_square(g, 30.0, 60.0, 2.0, 11);
        cal_script.shapes[0].density = 4.0;
        let cal = generate(&cal_script).unwrap();
        let frames = crate::convert::convert_fixed_time_window(&cal.events, g, 50_000).unwrap();
        let set = CalibrationSet::from_frames(&frames, GridSpec::DAVIS240).unwrap();
        let interval = calibrate_interval(&set.summary().unwrap(), 0.05).unwrap();

        let mut script = translating_square(g, 30.0, 60.0, 2.5, 3);
        script.shapes[0].density = 4.0;
        script.shapes[0].occlusions = vec![[1.0, 1.5]];
        let out = generate(&script).unwrap();
        let mut pipeline = PipelineConfig {
            converter: AdaptiveConfig {
                interval,
                ..AdaptiveConfig::default()
            },
            ..PipelineConfig::default()
        };
        // The tracker never leaves recovery on its own.
        pipeline.tracker.resume_score = 1.01;
        Scene {
            events: out.events,
            gt: out.ground_truth,
            pipeline,
        }
    }

    #[test]
    fn occlusion_triggers_exactly_one_reinit_and_reinit_dominates() {
        let s = occluded_scene();
        let with = run_protocol(&s.events, &s.gt, &s.pipeline, &EvalConfig::default()).unwrap();
        assert_eq!(with.reinits.len(), 1, "{:?}", with.reinits);
        let r = with.reinits[0];
        assert!(r.time >= 1.5, "reinit at {}", r.time);
        assert_eq!(r.frame_index, r.failed_at_frame + 1);

        let without = run_protocol(
            &s.events,
            &s.gt,
            &s.pipeline,
            &EvalConfig {
                reinit_on_failure: false,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(without.reinits.is_empty());
        assert!(without.ap <= with.ap, "{} > {}", without.ap, with.ap);
        assert!((0.0..=1.0).contains(&with.ap));
        assert!((0.0..=1.0).contains(&with.ar));
    }

    #[test]
    fn repetitions_are_identical() {
        let s = occluded_scene();
        let rep = run_protocol(
            &s.events,
            &s.gt,
            &s.pipeline,
            &EvalConfig {
                n_rep: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(rep.per_object.len(), 5);
        let aps: Vec<f64> = rep.per_object.iter().map(|r| r.ap).collect();
        let mean = aps.iter().sum::<f64>() / 5.0;
        let var = aps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 5.0;
        assert_eq!(var, 0.0);
        assert_eq!(rep.reinits.len(), 5);
    }
}
