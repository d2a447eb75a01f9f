use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn atsltd(dir: &Path, args: &[&str], stdin: Option<&str>) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_atsltd"))
        .args(args)
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut pipe = child.stdin.take().unwrap();
    pipe.write_all(stdin.unwrap_or("").as_bytes()).unwrap();
    drop(pipe);
    child.wait_with_output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = atsltd(dir, args, None);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn count(dir: &Path, suffix: &str) -> usize {
    std::fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .ends_with(suffix)
        })
        .count()
}

#[test]
fn calibrate_from_piped_statistics() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = atsltd(
        d,
        &["calibrate", "--stats", "-", "--out", "cal.json"],
        Some("100 0.08795 0.02394\n"),
    );
    assert!(out.status.success());
    let cal = json(&d.join("cal.json"));
    let (a, b) = (
        cal["alpha"].as_f64().unwrap(),
        cal["beta"].as_f64().unwrap(),
    );
    assert_eq!(((a * 1e4).round(), (b * 1e4).round()), (832.0, 927.0));
    assert_eq!(cal["grid"], serde_json::json!({"p": 45, "q": 60, "r": 4}));

    ok(
        d,
        &[
            "calibrate",
            "--stats",
            "100,0.08795,0.02394",
            "--omega",
            "0.01",
            "--out",
            "wide.json",
        ],
    );
    let wide = json(&d.join("wide.json"));
    assert!(wide["alpha"].as_f64().unwrap() < a && wide["beta"].as_f64().unwrap() > b);
}

#[test]
fn calibrate_samples_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = atsltd(
        d,
        &["calibrate", "--samples", "-", "--out", "one.json"],
        Some("0.1\n"),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least two samples"));
    assert!(!d.join("one.json").exists());

    let out = atsltd(
        d,
        &["calibrate", "--samples", "-", "--out", "s.json"],
        Some("0.1 0.11\n0.12\n"),
    );
    assert!(out.status.success());
    assert_eq!(
        json(&d.join("s.json"))["samples"],
        serde_json::json!([0.1, 0.11, 0.12])
    );

    let out = atsltd(
        d,
        &[
            "calibrate",
            "--stats",
            "100,0.1,0.01",
            "--omega",
            "0.1",
            "--out",
            "x.json",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn synth_track_eval_render_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth",
            "--preset",
            "square",
            "--duration",
            "2",
            "--seed",
            "4",
            "--out",
            "scene",
        ],
    );
    ok(
        d,
        &[
            "calibrate",
            "--events",
            "scene/events.txt",
            "--out",
            "cal.json",
        ],
    );
    ok(
        d,
        &[
            "track",
            "--events",
            "scene/events.txt",
            "--gt",
            "scene/gt.csv",
            "--out",
            "run",
            "--dump-frames",
            "--dump-proposals",
            "--set",
            "interval.source=cal.json",
        ],
    );
    let csv = std::fs::read_to_string(d.join("run/results.csv")).unwrap();
    let frames = csv.lines().count() - 1;
    assert!(frames > 10);
    assert_eq!(count(&d.join("run/frames"), "_on.png"), frames);
    assert_eq!(count(&d.join("run/frames"), "_off.png"), frames);
    assert_eq!(count(&d.join("run/frames"), ".json"), frames);
    let proposals = std::fs::read_to_string(d.join("run/proposals.jsonl")).unwrap();
    assert_eq!(proposals.lines().count(), frames);

    ok(
        d,
        &[
            "eval",
            "--gt",
            "scene/gt.csv",
            "--results",
            "run/results.csv",
            "--out",
            "report.json",
            "--frame-csv",
            "ious.csv",
        ],
    );
    let report = json(&d.join("report.json"));
    assert!(report["ap"].as_f64().unwrap() >= 0.7, "{report}");
    assert_eq!(report["ar"].as_f64(), Some(1.0));
    assert_eq!(report["per_object"][0]["id"], 1);
    assert!(report["reinits"].as_array().unwrap().is_empty());
    assert!(d.join("ious.csv").exists());

    ok(
        d,
        &[
            "render",
            "--results",
            "run/results.csv",
            "--frames",
            "run/frames",
            "--out",
            "overlay",
            "--workers",
            "2",
        ],
    );
    assert_eq!(count(&d.join("overlay"), "_boxes.png"), frames);
}

#[test]
fn eval_of_ground_truth_against_itself_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("gt.csv"),
        "object_id,t,x,y,w,h\n1,0.0,10,10,20,20\n1,1.0,30,10,20,20\n",
    )
    .unwrap();
    let header = "frame_index,t_start,t_end,object_id,x,y,w,h,iou_prev,mode\n";
    std::fs::write(
        d.join("same.csv"),
        format!("{header}0,0.0,0.5,1,20,10,20,20,1,tracking\n1,0.5,1.0,1,30,10,20,20,1,tracking\n"),
    )
    .unwrap();
    std::fs::write(
        d.join("half.csv"),
        format!(
            "{header}0,0.0,0.5,1,20,10,20,20,1,tracking\n1,0.5,1.0,1,100,100,20,20,0,recovering\n"
        ),
    )
    .unwrap();
    let ap = |file: &str| {
        let text = ok(d, &["eval", "--gt", "gt.csv", "--results", file]);
        serde_json::from_str::<Value>(&text).unwrap()["ap"]
            .as_f64()
            .unwrap()
    };
    assert_eq!(ap("same.csv"), 1.0);
    assert_eq!(ap("half.csv"), 0.5);
}

#[test]
fn missing_events_leave_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = atsltd(
        d,
        &[
            "track",
            "--events",
            "nope.txt",
            "--box",
            "1,1,20,20",
            "--out",
            "run",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(!d.join("run").exists());
    assert_eq!(std::fs::read_dir(d).unwrap().count(), 0);
}

#[test]
fn render_with_no_rows_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("empty.csv"),
        "frame_index,t_start,t_end,object_id,x,y,w,h,iou_prev,mode\n",
    )
    .unwrap();
    std::fs::create_dir(d.join("frames")).unwrap();
    ok(
        d,
        &[
            "render",
            "--results",
            "empty.csv",
            "--frames",
            "frames",
            "--out",
            "overlay",
        ],
    );
    assert_eq!(count(&d.join("overlay"), ".png"), 0);
}

#[test]
fn fixed_windows_split_a_short_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let events: String = (0..270)
        .map(|k| format!("{:.6} {} {} {}\n", k as f64 * 1e-4, k % 200, k % 150, k % 2))
        .collect();
    std::fs::write(d.join("e.txt"), events).unwrap();
    ok(
        d,
        &[
            "convert",
            "--events",
            "e.txt",
            "--mode",
            "ftw",
            "--window-ms",
            "9",
            "--out",
            "ftw",
        ],
    );
    assert_eq!(count(&d.join("ftw"), "_on.png"), 3);
    let out = atsltd(
        d,
        &[
            "convert", "--events", "e.txt", "--mode", "nope", "--out", "x",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn adaptive_conversion_follows_speed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(
        d,
        &[
            "synth", "--preset", "square", "--speed", "60", "--seed", "11", "--out", "cal",
        ],
    );
    ok(
        d,
        &[
            "calibrate",
            "--events",
            "cal/events.txt",
            "--out",
            "cal.json",
        ],
    );
    let mut frames = Vec::new();
    for speed in ["30", "60"] {
        ok(
            d,
            &[
                "synth", "--preset", "square", "--speed", speed, "--seed", "1", "--out", speed,
            ],
        );
        let out = format!("{speed}-frames");
        ok(
            d,
            &[
                "convert",
                "--events",
                &format!("{speed}/events.txt"),
                "--out",
                &out,
                "--set",
                "interval.source=cal.json",
            ],
        );
        frames.push(count(&d.join(out), "_on.png"));
    }
    assert!(frames[1] > frames[0], "{frames:?}");
}

#[test]
fn help_documents_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    for sub in [
        "calibrate",
        "track",
        "eval",
        "render",
        "synth",
        "convert",
        "bench",
    ] {
        let help = ok(tmp.path(), &[sub, "--help"]);
        for needle in [
            "tracker.tau",
            "1.5",
            "tracker.lambda",
            "0.7",
            "tracker.mu",
            "0.3",
            "detector.max_boxes",
            "1000",
        ] {
            assert!(help.contains(needle), "{sub}: {needle}");
        }
    }
}

#[test]
fn bench_reports_json() {
    let tmp = tempfile::tempdir().unwrap();
    let text = ok(
        tmp.path(),
        &["bench", "--duration", "0.2", "--rounds", "1", "--json"],
    );
    let v: Value = serde_json::from_str(text.trim()).unwrap();
    assert!(v["events"].as_u64().unwrap() > 0);
    assert!(v["events_per_second"].as_f64().unwrap() > 0.0);
}
