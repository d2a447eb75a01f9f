use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use atsltd::bench::{bench_scene, measure_event_loop};
use atsltd::convert::{convert_all, AdaptiveConverter, FixedWindowConverter, FrameCutter};
use atsltd::eval::{
    average_precision, average_robustness, per_frame_iou, run_protocol, FrameScore, ObjectResult,
};
use atsltd::event::{parse_event_stream, parse_ground_truth, write_events, write_ground_truth};
use atsltd::files::{
    list_frame_dumps, read_frame_dump, read_results, result_rows, write_frame_dump,
    write_proposal_line, write_results, CalibrationFile,
};
use atsltd::nzge::{calibrate_interval, SampleSummary};
use atsltd::synth::{generate, translating_square, SceneScript};
use atsltd::track::{FrameInfo, MultiTracker, TrackOutput};
use atsltd::{
    AtslTdFrame, BoundingBox, CalibrationSet, EvalReport, Event, GroundTruthTrack, SensorGeometry,
    Timestamp,
};
use log::info;

use crate::config::RunConfig;
use crate::{
    BenchArgs, CalibrateArgs, ConvertArgs, ConvertMode, EvalArgs, Preset, SynthArgs, TrackArgs,
};

/// Outputs are written to a hidden sibling directory and moved into place
/// only once everything succeeded.
pub struct Staging {
    dir: tempfile::TempDir,
    out: PathBuf,
}

impl Staging {
    pub fn new(out: &Path) -> Result<Self> {
        let parent = match out.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let dir = tempfile::Builder::new()
            .prefix(".atsltd-")
            .tempdir_in(&parent)
            .with_context(|| format!("creating staging directory in {}", parent.display()))?;
        Ok(Self {
            dir,
            out: out.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn commit(self) -> Result<()> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        for entry in fs::read_dir(self.dir.path())? {
            let entry = entry?;
            let target = self.out.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target)?;
            } else if target.exists() {
                fs::remove_file(&target)?;
            }
            fs::rename(entry.path(), &target)
                .with_context(|| format!("moving output to {}", target.display()))?;
        }
        Ok(())
    }
}

pub fn read_events(path: &Path, geometry: SensorGeometry) -> Result<Vec<Event>> {
    let file = File::open(path).with_context(|| format!("opening events {}", path.display()))?;
    let events = parse_event_stream(BufReader::new(file), geometry)
        .collect::<atsltd::Result<Vec<_>>>()
        .with_context(|| format!("reading events {}", path.display()))?;
    info!("read {} events from {}", events.len(), path.display());
    Ok(events)
}

fn read_gt(path: &Path) -> Result<Vec<GroundTruthTrack>> {
    let file =
        File::open(path).with_context(|| format!("opening ground truth {}", path.display()))?;
    let gt = parse_ground_truth(BufReader::new(file))
        .with_context(|| format!("reading ground truth {}", path.display()))?;
    if gt.resorted {
        log::warn!(
            "{}: rows were out of time order and have been sorted",
            path.display()
        );
    }
    Ok(gt.tracks)
}

fn read_input(spec: &str) -> Result<String> {
    let mut text = String::new();
    if spec == "-" {
        io::stdin().read_to_string(&mut text)?;
    } else {
        text = fs::read_to_string(spec).with_context(|| format!("reading {spec}"))?;
    }
    Ok(text)
}

fn numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| anyhow!("not a number: {s:?}")))
        .collect()
}

fn parse_box(text: &str) -> Result<BoundingBox> {
    let v = numbers(text)?;
    if v.len() != 4 {
        bail!("box needs X,Y,W,H, got {text:?}");
    }
    Ok(BoundingBox::new(v[0], v[1], v[2], v[3])?)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn calibrate(a: CalibrateArgs) -> Result<()> {
    let cfg = a.common.load(&[])?;
    let grid = cfg.grid()?;
    let (set, summary) = if let Some(stats) = &a.stats {
        let text = if stats == "-" {
            read_input("-")?
        } else {
            stats.clone()
        };
        let v = numbers(&text)?;
        if v.len() != 3 || v[0] < 0.0 || v[0].fract() != 0.0 {
            bail!("--stats expects N,MEAN,STD with integer N, got {text:?}");
        }
        let summary = SampleSummary {
            n: v[0] as usize,
            mean: v[1],
            std: v[2],
        };
        (CalibrationSet::default(), summary)
    } else {
        let set = if let Some(spec) = &a.samples {
            CalibrationSet::new(numbers(&read_input(spec)?)?)
        } else if let Some(dir) = &a.frames {
            let frames = list_frame_dumps(dir)?
                .into_iter()
                .map(|i| read_frame_dump(dir, i))
                .collect::<atsltd::Result<Vec<_>>>()?;
            CalibrationSet::from_frames(&frames, grid)?
        } else if let Some(path) = &a.events {
            let events = read_events(path, cfg.geometry)?;
            let window = (a.window_ms * 1000.0).round() as i64;
            let frames = atsltd::convert::convert_fixed_time_window(&events, cfg.geometry, window)?;
            CalibrationSet::from_frames(&frames, grid)?
        } else {
            unreachable!("clap requires one source")
        };
        let summary = set.summary()?;
        (set, summary)
    };
    let interval = calibrate_interval(&summary, a.omega)?;
    CalibrationFile::new(&set, &interval, grid).save(&a.out)?;
    println!(
        "alpha {:.6} beta {:.6} (n {}, mean {:.6}, std {:.6}, omega {})",
        interval.alpha, interval.beta, summary.n, summary.mean, summary.std, a.omega
    );
    Ok(())
}

pub fn track(a: TrackArgs) -> Result<()> {
    let mut extra = Vec::new();
    if a.dump_frames {
        extra.push(("run.dump_frames", "true".to_owned()));
    }
    if a.dump_proposals {
        extra.push(("run.dump_proposals", "true".to_owned()));
    }
    let cfg = a.common.load(&extra)?;
    let events = read_events(&a.events, cfg.geometry)?;
    let initial: Vec<(u32, BoundingBox)> = if let Some(gt) = &a.gt {
        read_gt(gt)?
            .iter()
            .filter_map(|t| t.entries.first().map(|e| (t.id, e.1)))
            .collect()
    } else {
        a.boxes
            .iter()
            .enumerate()
            .map(|(k, b)| Ok((k as u32 + 1, parse_box(b)?)))
            .collect::<Result<_>>()?
    };
    if initial.is_empty() {
        bail!("no objects to track");
    }
    let pipeline = cfg.pipeline(cfg.resolve_interval(Some(&events))?)?;

    let stage = Staging::new(&a.out)?;
    let frames_dir = stage.path().join("frames");
    if cfg.dump_frames {
        fs::create_dir(&frames_dir)?;
    }
    let mut proposals = if cfg.dump_proposals {
        Some(BufWriter::new(File::create(
            stage.path().join("proposals.jsonl"),
        )?))
    } else {
        None
    };

    let mut converter = AdaptiveConverter::new(pipeline.converter)?;
    let mut tracker = MultiTracker::new(pipeline.tracker.clone(), &initial, pipeline.workers)?;
    if proposals.is_some() {
        for t in &mut tracker.tracks {
            t.proposals = Some(Vec::new());
        }
    }
    let mut frames = Vec::new();
    let mut handle = |frame: AtslTdFrame| -> Result<()> {
        let index = frames.len();
        if cfg.dump_frames {
            write_frame_dump(&frames_dir, index, &frame)?;
        }
        tracker.process(index, &frame);
        if let Some(out) = proposals.as_mut() {
            for t in &tracker.tracks {
                write_proposal_line(
                    &mut *out,
                    index,
                    t.id,
                    t.proposals.as_deref().unwrap_or(&[]),
                )?;
            }
        }
        frames.push(FrameInfo::of(index, &frame));
        Ok(())
    };
    for e in &events {
        if let Some(frame) = converter.push(e)? {
            handle(frame)?;
        }
    }
    if pipeline.include_trailing {
        if let Some(frame) = converter.finish()? {
            handle(frame)?;
        }
    }
    if let Some(mut out) = proposals {
        out.flush()?;
    }
    let output = TrackOutput {
        frames,
        tracks: tracker.tracks,
    };
    let results = File::create(stage.path().join("results.csv"))?;
    write_results(BufWriter::new(results), &result_rows(&output))?;
    stage.commit()?;
    println!(
        "{} frames, {} objects -> {}",
        output.frames.len(),
        output.tracks.len(),
        a.out.display()
    );
    Ok(())
}

fn score_results(results: &Path, gt: &[GroundTruthTrack], cfg: &RunConfig) -> Result<EvalReport> {
    let file =
        File::open(results).with_context(|| format!("opening results {}", results.display()))?;
    let rows = read_results(BufReader::new(file))?;
    let mut by_object: BTreeMap<u32, Vec<(Timestamp, BoundingBox, usize)>> = BTreeMap::new();
    for r in &rows {
        by_object
            .entry(r.object_id)
            .or_default()
            .push((r.t_end, r.bbox, r.frame_index));
    }
    let mut report = EvalReport {
        per_object: Vec::new(),
        ap: 0.0,
        ar: 0.0,
        reinits: Vec::new(),
        frame_scores: Vec::new(),
    };
    for track in gt {
        let rows = by_object
            .get(&track.id)
            .ok_or_else(|| anyhow!("object {} has no rows in {}", track.id, results.display()))?;
        let estimates: Vec<_> = rows.iter().map(|(t, b, _)| (*t, *b)).collect();
        let ap = average_precision(&estimates, track)?;
        let ious = per_frame_iou(&estimates, track);
        for ((t, o), idx) in ious.iter().zip(
            rows.iter()
                .filter(|(t, _, _)| track.box_at(*t).is_some())
                .map(|r| r.2),
        ) {
            report.frame_scores.push(FrameScore {
                rep: 0,
                object_id: track.id,
                frame_index: idx,
                t_end: t.as_secs_f64(),
                iou: *o,
            });
        }
        report.per_object.push(ObjectResult {
            rep: 0,
            id: track.id,
            ap,
            success: ap >= cfg.eval.failure_ap_threshold,
            frames: ious.len(),
        });
    }
    let n = report.per_object.len() as f64;
    report.ap = report.per_object.iter().map(|r| r.ap).sum::<f64>() / n;
    report.ar = average_robustness(
        &report
            .per_object
            .iter()
            .map(|r| r.success)
            .collect::<Vec<_>>(),
    );
    Ok(report)
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let cfg = a.common.load(&[])?;
    let gt = read_gt(&a.gt)?;
    if gt.is_empty() {
        bail!("{} has no objects", a.gt.display());
    }
    let report = if let Some(results) = &a.results {
        score_results(results, &gt, &cfg)?
    } else if let Some(path) = &a.events {
        let events = read_events(path, cfg.geometry)?;
        let pipeline = cfg.pipeline(cfg.resolve_interval(Some(&events))?)?;
        run_protocol(&events, &gt, &pipeline, &cfg.eval)?
    } else {
        unreachable!("clap requires one input")
    };
    if let Some(path) = &a.frame_csv {
        let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        report.write_frame_csv(BufWriter::new(file))?;
    }
    match &a.out {
        Some(path) => {
            write_json(path, &report)?;
            println!(
                "ap {:.4} ar {:.4} reinits {}",
                report.ap,
                report.ar,
                report.reinits.len()
            );
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = a.common.load(&[])?;
    let script = match (&a.script, a.preset) {
        (Some(path), _) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let mut s = SceneScript::from_json(&text)?;
            if let Some(seed) = a.seed {
                s.seed = seed;
            }
            s
        }
        (None, Some(Preset::Square)) => {
            let seed = a.seed.unwrap_or(cfg.seed);
            let mut s = translating_square(cfg.geometry, a.side, a.speed, a.duration, seed);
            s.noise_rate = a.noise;
            let shape = &mut s.shapes[0];
            shape.density = a.density;
            for w in &a.occlude {
                let v = numbers(w)?;
                if v.len() != 2 {
                    bail!("--occlude expects START,END, got {w:?}");
                }
                shape.occlusions.push([v[0], v[1]]);
            }
            s
        }
        (None, Some(Preset::Bench)) => {
            bench_scene(cfg.geometry, a.duration, a.seed.unwrap_or(cfg.seed))
        }
        (None, None) => unreachable!("clap requires a scene"),
    };
    script.validate()?;
    let out = generate(&script)?;
    let stage = Staging::new(&a.out)?;
    let mut ev = BufWriter::new(File::create(stage.path().join("events.txt"))?);
    write_events(&mut ev, &out.events)?;
    ev.flush()?;
    drop(ev);
    write_ground_truth(
        BufWriter::new(File::create(stage.path().join("gt.csv"))?),
        &out.ground_truth,
    )?;
    write_json(&stage.path().join("scene.json"), &script)?;
    stage.commit()?;
    println!(
        "{} events, {} objects -> {}",
        out.events.len(),
        out.ground_truth.len(),
        a.out.display()
    );
    Ok(())
}

pub fn convert(a: ConvertArgs) -> Result<()> {
    let cfg = a.common.load(&[])?;
    let events = read_events(&a.events, cfg.geometry)?;
    let stream = events.iter().copied().map(Ok);
    let frames = match a.mode {
        ConvertMode::Atsltd => {
            let pipeline = cfg.pipeline(cfg.resolve_interval(Some(&events))?)?;
            let mut c = AdaptiveConverter::new(pipeline.converter)?;
            convert_all(&mut c, stream, cfg.include_trailing)?
        }
        ConvertMode::Ftw => {
            if !(a.window_ms > 0.0) {
                bail!("--window-ms must be positive");
            }
            let window = (a.window_ms * 1000.0).round() as i64;
            let mut c = FixedWindowConverter::new(cfg.geometry, window, Some(cfg.grid()?))?;
            convert_all(&mut c, stream, true)?
        }
    };
    let stage = Staging::new(&a.out)?;
    for (i, f) in frames.iter().enumerate() {
        write_frame_dump(stage.path(), i, f)?;
    }
    stage.commit()?;
    println!("{} frames -> {}", frames.len(), a.out.display());
    Ok(())
}

pub fn bench(a: BenchArgs) -> Result<()> {
    let cfg = a.common.load(&[])?;
    let events = match &a.events {
        Some(path) => read_events(path, cfg.geometry)?,
        None => generate(&bench_scene(cfg.geometry, a.duration, a.seed))?.events,
    };
    let pipeline = cfg.pipeline(cfg.resolve_interval(Some(&events))?)?;
    let report = measure_event_loop(&events, pipeline.converter, a.rounds)?;
    if a.json {
        println!("{}", serde_json::to_string(&report)?);
    } else {
        println!(
            "{} events, {} frames in {:.3} s: {:.2} Mev/s",
            report.events,
            report.frames,
            report.seconds,
            report.events_per_second / 1e6
        );
    }
    Ok(())
}
