//! Acceptance suite: one PASS/FAIL line per criterion.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use atsltd::convert::{convert_all, convert_fixed_time_window, AdaptiveConfig, AdaptiveConverter};
use atsltd::detect::{phi, refine_score};
use atsltd::eval::{average_precision, average_robustness};
use atsltd::nzge::{
    calibrate_interval, entropy_map, frame_entropy_map, patch_entropy, SampleSummary,
};
use atsltd::surface::EPOCH_OFFSET_US;
use atsltd::synth::{generate, translating_square, SynthOutput};
use atsltd::track::{iou, track_stream, PipelineConfig};
use atsltd::{
    AtslTdFrame, BoundingBox, CalibrationSet, ConfidenceInterval, Event, GridSpec, Polarity,
    SensorGeometry, Surface, Timestamp,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

struct Suite {
    failed: usize,
}

impl Suite {
    fn run(&mut self, id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let late = limit.is_some_and(|l| elapsed > l);
        let (pass, detail) = match outcome {
            Ok(d) if late => (false, format!("{d}; over time limit")),
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        let limit = limit.map_or(String::new(), |l| {
            format!(", limit {:.3} s", l.as_secs_f64())
        });
        println!(
            "{} [{id}] {name}: {detail} ({:.3} s{limit})",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
        self.failed += usize::from(!pass);
    }
}

const G: SensorGeometry = SensorGeometry::DAVIS240;

fn interval_reproduction() -> Outcome {
    let summary = SampleSummary {
        n: 100,
        mean: 0.08795,
        std: 0.02394,
    };
    let start = Instant::now();
    let iv = calibrate_interval(&summary, 0.05).map_err(|e| e.to_string())?;
    let took = start.elapsed();
    let round4 = |x: f64| (x * 1e4).round() / 1e4;
    ensure(
        round4(iv.alpha) == 0.0832 && round4(iv.beta) == 0.0927 && took < Duration::from_millis(1),
        format!(
            "[{:.4}, {:.4}] in {} us",
            iv.alpha,
            iv.beta,
            took.as_micros()
        ),
    )
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    if a == 0 || b == 0 {
        return a | b;
    }
    let shift = (a | b).trailing_zeros();
    a >>= a.trailing_zeros();
    loop {
        b >>= b.trailing_zeros();
        if a > b {
            std::mem::swap(&mut a, &mut b);
        }
        b -= a;
        if b == 0 {
            return a << shift;
        }
    }
}

/// One frame of the decay rule applied literally: each event scales every
/// pixel by `t'_{k-1} / t'_k` in reduced fractions, then writes 255.
fn literal_frame(events: &[Event], geometry: SensorGeometry, start: i64) -> [Vec<u8>; 2] {
    let n = geometry.pixels();
    let mut num = vec![0u64; 2 * n];
    let mut den = vec![1u64; 2 * n];
    let mut prev: Option<u64> = None;
    for e in events {
        let now = (e.t.0 - start + EPOCH_OFFSET_US) as u64;
        // A factor of exactly one leaves the matrix unchanged.
        if let Some(p) = prev.filter(|&p| p != now) {
            let g = gcd(p, now);
            let (p, now) = (p / g, now / g);
            for i in 0..2 * n {
                if num[i] != 0 {
                    let (a, b) = (num[i] * p, den[i] * now);
                    let g = gcd(a, b);
                    num[i] = a / g;
                    den[i] = b / g;
                }
            }
        }
        let i = e.p.channel() * n + e.v as usize * geometry.width as usize + e.u as usize;
        num[i] = 1;
        den[i] = 1;
        prev = Some(now);
    }
    let level = |i: usize| ((510 * num[i] + den[i]) / (2 * den[i])) as u8;
    [(0..n).map(level).collect(), (n..2 * n).map(level).collect()]
}

fn decay_oracle() -> Outcome {
    let g = SensorGeometry::new(32, 32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut frames, mut events_total, mut worst) = (0, 0, 0i32);
    for stream in 0..10 {
        let len = if stream == 0 {
            10_000
        } else {
            rng.random_range(1_000..=10_000)
        };
        let mut t = rng.random_range(0..1_000i64);
        let events: Vec<Event> = (0..len)
            .map(|_| {
                // A quarter of events share their predecessor's timestamp.
                if rng.random_bool(0.75) {
                    t += rng.random_range(1..1_000);
                }
                let p = if rng.random_bool(0.5) {
                    Polarity::On
                } else {
                    Polarity::Off
                };
                Event::new(
                    rng.random_range(0..32),
                    rng.random_range(0..32),
                    p,
                    Timestamp(t),
                )
            })
            .collect();
        events_total += len;
        // The first stream is one long frame; the others are cut at random.
        let mut cuts: Vec<usize> = if stream == 0 {
            Vec::new()
        } else {
            (0..rng.random_range(0..=2))
                .map(|_| rng.random_range(1..len))
                .collect()
        };
        cuts.push(len);
        cuts.sort_unstable();
        cuts.dedup();
        let mut surface = Surface::starting_at(g, events[0].t);
        let mut from = 0;
        for &to in &cuts {
            let start = surface.frame_start().0;
            for e in &events[from..to] {
                surface.apply_event(e).map_err(|e| e.to_string())?;
            }
            let frame = surface.finalize().map_err(|e| e.to_string())?;
            let exact = literal_frame(&events[from..to], g, start);
            for (lazy, exact) in [(&frame.on, &exact[0]), (&frame.off, &exact[1])] {
                for (a, b) in lazy.iter().zip(exact) {
                    worst = worst.max((*a as i32 - *b as i32).abs());
                }
            }
            frames += 1;
            from = to;
        }
    }
    ensure(
        worst <= 1,
        format!("{events_total} events in {frames} frames, largest level difference {worst}"),
    )
}

fn square(speed: f64, duration: f64, seed: u64, occlusion: Option<[f64; 2]>) -> SynthOutput {
    let mut script = translating_square(G, 30.0, speed, duration, seed);
    script.shapes[0].density = 4.0;
    script.shapes[0].occlusions.extend(occlusion);
    generate(&script).expect("scene is valid")
}

/// Interval calibrated on fixed-window frames in which the square moves 3 px.
fn calibrated_interval() -> ConfidenceInterval {
    let cal = square(60.0, 2.0, 11, None);
    let frames = convert_fixed_time_window(&cal.events, G, 50_000).unwrap();
    let set = CalibrationSet::from_frames(&frames, GridSpec::DAVIS240).unwrap();
    calibrate_interval(&set.summary().unwrap(), 0.05).unwrap()
}

fn adaptivity() -> Outcome {
    let interval = calibrated_interval();
    let count = |speed: f64| {
        let scene = square(speed, 2.0, 1, None);
        let mut c = AdaptiveConverter::new(AdaptiveConfig {
            interval,
            ..AdaptiveConfig::default()
        })
        .unwrap();
        convert_all(&mut c, scene.events.iter().copied().map(Ok), false)
            .unwrap()
            .len()
    };
    let (slow, fast) = (count(30.0), count(60.0));
    let ratio = fast as f64 / slow as f64;
    ensure(
        (ratio - 2.0).abs() <= 0.25 * 2.0,
        format!(
            "{fast} frames at 60 px/s vs {slow} at 30 px/s, ratio {ratio:.3} (interval [{:.4}, {:.4}])",
            interval.alpha, interval.beta
        ),
    )
}

fn tracking() -> Outcome {
    let cfg = PipelineConfig {
        converter: AdaptiveConfig {
            interval: calibrated_interval(),
            ..AdaptiveConfig::default()
        },
        ..PipelineConfig::default()
    };
    let mean_iou = |scene: &SynthOutput, after: f64| {
        let initial = [(1, scene.ground_truth[0].entries[0].1)];
        let out = track_stream(
            scene.events.iter().copied().map(Ok),
            &initial,
            &cfg,
            |_, _| Ok(()),
        )
        .unwrap();
        let est: Vec<_> = out.tracks[0]
            .history
            .iter()
            .filter(|h| h.end_time.as_secs_f64() >= after)
            .map(|h| (h.end_time, h.bbox))
            .collect();
        average_precision(&est, &scene.ground_truth[0]).unwrap()
    };
    let (mut clear, mut success, mut post) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 1..=5 {
        let ap = mean_iou(&square(60.0, 2.5, seed, None), 0.0);
        clear.push(ap);
        success.push(ap >= 0.5);
        post.push(mean_iou(&square(60.0, 2.5, seed, Some([1.0, 1.5])), 1.5));
    }
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let ar = average_robustness(&success);
    ensure(
        min(&clear) >= 0.7 && ar == 1.0 && min(&post) >= 0.6,
        format!(
            "5 seeds at 60 px/s: min mean IoU {:.3}, AR {ar:.2}; occluded 1.0-1.5 s of 2.5 s: min post-occlusion IoU {:.3}",
            min(&clear),
            min(&post)
        ),
    )
}

fn raster_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let covers = |bb: &BoundingBox, x: usize, y: usize| {
        let (x, y) = (x as f64, y as f64);
        x >= bb.x && x + 1.0 <= bb.right() && y >= bb.y && y + 1.0 <= bb.bottom()
    };
    let (mut inter, mut union) = (0u32, 0u32);
    for y in 0..30 {
        for x in 0..30 {
            let (ia, ib) = (covers(a, x, y), covers(b, x, y));
            inter += u32::from(ia && ib);
            union += u32::from(ia || ib);
        }
    }
    f64::from(inter) / f64::from(union)
}

fn algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    if phi(1.0).map_err(|e| e.to_string())? != 1.0 {
        return Err("phi(1) != 1".into());
    }
    let mut worst_phi: f64 = 0.0;
    let mut worst_refine: f64 = 0.0;
    let mut worst_iou: f64 = 0.0;
    for _ in 0..1000 {
        let x: f64 = rng.random_range(-12.0f64..12.0).exp();
        let (a, b) = (phi(x).unwrap(), phi(1.0 / x).unwrap());
        worst_phi = worst_phi.max((a - b).abs());

        let mut rand_box = |span: f64| {
            BoundingBox::new(
                rng.random_range(-span..span),
                rng.random_range(-span..span),
                rng.random_range(1.0..span),
                rng.random_range(1.0..span),
            )
            .unwrap()
        };
        let (p, q) = (rand_box(100.0), rand_box(100.0));
        let k = rng.random_range(0.05..20.0);
        let scale = |b: &BoundingBox| BoundingBox::new(b.x * k, b.y * k, b.w * k, b.h * k).unwrap();
        let s = refine_score(&p, &q);
        worst_refine = worst_refine
            .max((s - refine_score(&q, &p)).abs())
            .max((s - refine_score(&scale(&p), &scale(&q))).abs());

        let mut raster_box = || {
            let (x, y) = (rng.random_range(0..29u32), rng.random_range(0..29u32));
            let (w, h) = (rng.random_range(1..=30 - x), rng.random_range(1..=30 - y));
            BoundingBox::new(x as f64, y as f64, w as f64, h as f64).unwrap()
        };
        let (a, b) = (raster_box(), raster_box());
        worst_iou = worst_iou.max((iou(&a, &b) - raster_iou(&a, &b)).abs());
    }
    ensure(
        worst_phi < 1e-12 && worst_refine < 1e-9 && worst_iou < 1e-9,
        format!(
            "1000 draws each: phi asymmetry {worst_phi:.1e}, refine asymmetry/scale drift {worst_refine:.1e}, IoU vs raster {worst_iou:.1e}"
        ),
    )
}

fn shannon(patch: &[u8]) -> f64 {
    let mut counts = [0usize; 256];
    patch.iter().for_each(|&z| counts[z as usize] += 1);
    let n = patch.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| -(c as f64 / n) * (c as f64 / n).log2())
        .sum()
}

fn entropy() -> Outcome {
    let constant = patch_entropy(&[77u8; 16]);
    let mut two = [0u8; 16];
    two[8..].fill(255);
    let one_bit = patch_entropy(&two);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_perm: f64 = 0.0;
    for _ in 0..100 {
        let levels = rng.random_range(1..=16u8);
        let mut patch: Vec<u8> = (0..16).map(|_| rng.random_range(0..levels) * 16).collect();
        let h = patch_entropy(&patch);
        patch.shuffle(&mut rng);
        worst_perm = worst_perm
            .max((patch_entropy(&patch) - h).abs())
            .max((h - shannon(&patch)).abs());
    }
    // Same random contours placed at cell-aligned offsets.
    let place = |ox: usize, oy: usize, seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut planes = [vec![0u8; G.pixels()], vec![0u8; G.pixels()]];
        for _ in 0..300 {
            let (x, y, c) = (
                rng.random_range(0..40),
                rng.random_range(0..40),
                rng.random_range(0..2),
            );
            planes[c][(oy + y) * G.width as usize + ox + x] = rng.random_range(1..=255);
        }
        let [on, off] = planes;
        AtslTdFrame {
            geometry: G,
            on,
            off,
            start_time: Timestamp(0),
            end_time: Timestamp(1),
            event_count: 1,
            nzge_at_cut: None,
        }
    };
    let mut shifts = 0;
    for seed in 0..10 {
        let base = frame_entropy_map(&place(8, 8, seed), GridSpec::DAVIS240)
            .unwrap()
            .nzge();
        for (dx, dy) in [(4, 0), (0, 4), (40, 12), (180, 120)] {
            let moved = frame_entropy_map(&place(8 + dx, 8 + dy, seed), GridSpec::DAVIS240)
                .unwrap()
                .nzge();
            if moved != base {
                return Err(format!(
                    "seed {seed}: shift ({dx}, {dy}) changed NZGE {base:?} -> {moved:?}"
                ));
            }
            shifts += 1;
        }
    }
    let blank = vec![0u8; G.pixels()];
    let empty = entropy_map([&blank, &blank], G, GridSpec::DAVIS240)
        .unwrap()
        .nzge();
    ensure(
        constant == 0.0 && one_bit == 1.0 && worst_perm < 1e-12 && empty.is_none(),
        format!(
            "constant {constant}, two levels {one_bit} bit, 100 permutations max drift {worst_perm:.1e}, {shifts} grid shifts invariant"
        ),
    )
}

fn atsltd(args: &[&str], dir: &Path) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_atsltd"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "atsltd {}: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let name = path.strip_prefix(dir).unwrap().display().to_string();
                files.push((name, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    atsltd(
        &[
            "synth",
            "--preset",
            "square",
            "--duration",
            "1.5",
            "--seed",
            "9",
            "--occlude",
            "0.6,0.8",
            "--out",
            "scene",
        ],
        dir,
    )?;
    for out in ["run1", "run2"] {
        atsltd(
            &[
                "track",
                "--events",
                "scene/events.txt",
                "--gt",
                "scene/gt.csv",
                "--out",
                out,
                "--dump-frames",
                "--set",
                "interval.source=calibrate",
            ],
            dir,
        )?;
    }
    let (a, b) = (tree(&dir.join("run1")), tree(&dir.join("run2")));
    let frames = a.iter().filter(|(n, _)| n.ends_with("_on.png")).count();
    let bytes: usize = a.iter().map(|(_, d)| d.len()).sum();
    ensure(
        a == b && frames > 0 && a.iter().any(|(n, _)| n == "results.csv"),
        format!(
            "{} files ({frames} frame pairs, {bytes} bytes) identical across two runs",
            a.len()
        ),
    )
}

fn throughput() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let text = atsltd(&["bench", "--json", "--rounds", "3"], tmp.path())?;
    let report: serde_json::Value = serde_json::from_str(text.trim()).map_err(|e| e.to_string())?;
    let rate = report["events_per_second"].as_f64().ok_or("missing rate")?;
    ensure(
        rate >= 5e6,
        format!(
            "{:.2} Mev/s over {} events, {} frames",
            rate / 1e6,
            report["events"],
            report["frames"]
        ),
    )
}

fn main() -> ExitCode {
    let mut suite = Suite { failed: 0 };
    let s = Duration::from_secs;
    suite.run(
        1,
        "confidence interval reproduction",
        None,
        interval_reproduction,
    );
    suite.run(2, "decay oracle equivalence", Some(s(5)), decay_oracle);
    suite.run(3, "adaptivity", Some(s(10)), adaptivity);
    suite.run(
        4,
        "end-to-end tracking on synthetic ground truth",
        Some(s(30)),
        tracking,
    );
    suite.run(5, "score and IoU algebra", Some(s(2)), algebra);
    suite.run(6, "entropy suite", Some(s(2)), entropy);
    suite.run(7, "determinism", None, determinism);
    suite.run(8, "throughput", None, throughput);
    if suite.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
