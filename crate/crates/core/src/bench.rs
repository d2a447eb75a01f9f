//! Event-loop throughput measurement.

use std::time::Instant;

use serde::Serialize;

use crate::convert::{AdaptiveConfig, AdaptiveConverter, FrameCutter};
use crate::error::Result;
use crate::event::{Event, SensorGeometry};
use crate::synth::{translating_square, SceneScript, Shape, Waypoint};

/// Three dense shapes crossing the sensor along different paths, plus
/// background noise.
pub fn bench_scene(geometry: SensorGeometry, duration: f64, seed: u64) -> SceneScript {
    let w = geometry.width as f64;
    let h = geometry.height as f64;
    let mut script = translating_square(geometry, 30.0, 0.0, duration, seed);
    let base = &mut script.shapes[0];
    base.density = 40.0;
    base.trajectory = vec![
        Waypoint {
            t: 0.0,
            x: 0.08 * w,
            y: 0.4 * h,
        },
        Waypoint {
            t: duration,
            x: 0.8 * w,
            y: 0.4 * h,
        },
    ];
    let mut diagonal = base.clone();
    diagonal.id = 2;
    diagonal.trajectory = vec![
        Waypoint {
            t: 0.0,
            x: 0.83 * w,
            y: 0.05 * h,
        },
        Waypoint {
            t: duration,
            x: 0.08 * w,
            y: 0.78 * h,
        },
    ];
    let mut bar = base.clone();
    bar.id = 3;
    bar.shape = Shape::Rectangle { w: 50.0, h: 20.0 };
    bar.trajectory = vec![
        Waypoint {
            t: 0.0,
            x: 0.4 * w,
            y: 0.83 * h,
        },
        Waypoint {
            t: duration,
            x: 0.6 * w,
            y: 0.03 * h,
        },
    ];
    script.shapes.push(diagonal);
    script.shapes.push(bar);
    script.noise_rate = 20_000.0;
    script
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchReport {
    pub events: usize,
    pub frames: usize,
    pub seconds: f64,
    pub events_per_second: f64,
}

/// Time ingest, surface updates and cut checks over `events`. The best of
/// `rounds` passes is reported.
pub fn measure_event_loop(
    events: &[Event],
    cfg: AdaptiveConfig,
    rounds: usize,
) -> Result<BenchReport> {
    let mut best: Option<BenchReport> = None;
    for _ in 0..rounds.max(1) {
        let mut converter = AdaptiveConverter::new(cfg)?;
        let mut frames = 0;
        let start = Instant::now();
        for e in events {
            if converter.push(e)?.is_some() {
                frames += 1;
            }
        }
        let seconds = start.elapsed().as_secs_f64().max(1e-9);
        let report = BenchReport {
            events: events.len(),
            frames,
            seconds,
            events_per_second: events.len() as f64 / seconds,
        };
        if best.is_none_or(|b| report.seconds < b.seconds) {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one round"))
}
