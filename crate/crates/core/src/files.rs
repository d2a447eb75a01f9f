//! On-disk formats: frame dumps, tracking results, calibration files and
//! proposal logs.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox;
use crate::detect::Proposal;
use crate::error::{Error, Result};
use crate::event::{SensorGeometry, Timestamp};
use crate::nzge::{CalibrationSet, ConfidenceInterval, GridSpec};
use crate::surface::AtslTdFrame;
use crate::track::{Mode, TrackOutput};

/// Sidecar written next to each dumped frame pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub index: usize,
    /// Seconds.
    pub start_time: f64,
    pub end_time: f64,
    pub event_count: u64,
    pub nzge: Option<f64>,
    pub width: u32,
    pub height: u32,
}

pub fn frame_stem(index: usize) -> String {
    format!("frame_{index:06}")
}

fn plane_image(frame: &AtslTdFrame, plane: &[u8]) -> GrayImage {
    GrayImage::from_raw(frame.geometry.width, frame.geometry.height, plane.to_vec())
        .expect("plane size matches geometry")
}

/// Write `frame_{index}_on.png`, `frame_{index}_off.png` and
/// `frame_{index}.json` into `dir`.
pub fn write_frame_dump(dir: &Path, index: usize, frame: &AtslTdFrame) -> Result<()> {
    let stem = frame_stem(index);
    for (suffix, plane) in [("on", &frame.on), ("off", &frame.off)] {
        let path = dir.join(format!("{stem}_{suffix}.png"));
        plane_image(frame, plane).save(&path)?;
    }
    let sidecar = FrameSidecar {
        index,
        start_time: frame.start_time.as_secs_f64(),
        end_time: frame.end_time.as_secs_f64(),
        event_count: frame.event_count,
        nzge: frame.nzge_at_cut,
        width: frame.geometry.width,
        height: frame.geometry.height,
    };
    let path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&sidecar)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Load one dumped frame.
pub fn read_frame_dump(dir: &Path, index: usize) -> Result<AtslTdFrame> {
    let stem = frame_stem(index);
    let path = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: FrameSidecar = serde_json::from_str(&text)?;
    let geometry = SensorGeometry::new(meta.width, meta.height)?;
    let mut planes = Vec::with_capacity(2);
    for suffix in ["on", "off"] {
        let path = dir.join(format!("{stem}_{suffix}.png"));
        let img = image::open(&path)?.into_luma8();
        if img.dimensions() != (meta.width, meta.height) {
            return Err(Error::Format(format!(
                "{} is {:?}, sidecar says {}x{}",
                path.display(),
                img.dimensions(),
                meta.width,
                meta.height
            )));
        }
        planes.push(img.into_raw());
    }
    let off = planes.pop().unwrap_or_default();
    let on = planes.pop().unwrap_or_default();
    Ok(AtslTdFrame {
        geometry,
        on,
        off,
        start_time: Timestamp::from_secs_f64(meta.start_time),
        end_time: Timestamp::from_secs_f64(meta.end_time),
        event_count: meta.event_count,
        nzge_at_cut: meta.nzge,
    })
}

/// Indices of all frames dumped in `dir`, ascending.
pub fn list_frame_dumps(dir: &Path) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
        let name = name.to_string_lossy();
        if let Some(idx) = name
            .strip_prefix("frame_")
            .and_then(|s| s.strip_suffix(".json"))
            .and_then(|s| s.parse().ok())
        {
            out.push(idx);
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// One line of a tracking result file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResultRow {
    pub frame_index: usize,
    pub t_start: Timestamp,
    pub t_end: Timestamp,
    pub object_id: u32,
    pub bbox: BoundingBox,
    pub iou_prev: f64,
    pub mode: Mode,
}

pub const RESULTS_HEADER: &str = "frame_index,t_start,t_end,object_id,x,y,w,h,iou_prev,mode";

/// Rows ordered by frame, then object id.
pub fn result_rows(output: &TrackOutput) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = output
        .tracks
        .iter()
        .flat_map(|t| {
            t.history.iter().map(move |h| ResultRow {
                frame_index: h.frame_index,
                t_start: h.start_time,
                t_end: h.end_time,
                object_id: t.id,
                bbox: h.bbox,
                iou_prev: h.iou_prev,
                mode: h.mode,
            })
        })
        .collect();
    rows.sort_by_key(|r| (r.frame_index, r.object_id));
    rows
}

pub fn write_results<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.6},{}",
            r.frame_index,
            r.t_start,
            r.t_end,
            r.object_id,
            r.bbox.x,
            r.bbox.y,
            r.bbox.w,
            r.bbox.h,
            r.iou_prev,
            r.mode.as_str()
        )?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct RawRow {
    frame_index: usize,
    t_start: String,
    t_end: String,
    object_id: u32,
    x: f64,
    y: f64,
    w: f64,
    h: f64,
    iou_prev: f64,
    mode: String,
}

pub fn read_results<R: Read>(source: R) -> Result<Vec<ResultRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != RESULTS_HEADER {
        return Err(Error::Format(format!(
            "expected header `{RESULTS_HEADER}`, got `{}`",
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for raw in reader.deserialize() {
        let raw: RawRow = raw?;
        rows.push(ResultRow {
            frame_index: raw.frame_index,
            t_start: raw.t_start.parse()?,
            t_end: raw.t_end.parse()?,
            object_id: raw.object_id,
            bbox: BoundingBox::new(raw.x, raw.y, raw.w, raw.h)?,
            iou_prev: raw.iou_prev,
            mode: raw.mode.parse()?,
        });
    }
    Ok(rows)
}

/// Calibration as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub samples: Vec<f64>,
    pub omega: f64,
    pub alpha: f64,
    pub beta: f64,
    pub log_base: f64,
    pub grid: GridSpec,
}

impl CalibrationFile {
    pub fn new(samples: &CalibrationSet, interval: &ConfidenceInterval, grid: GridSpec) -> Self {
        Self {
            samples: samples.samples().to_vec(),
            omega: interval.omega,
            alpha: interval.alpha,
            beta: interval.beta,
            log_base: interval.log_base,
            grid,
        }
    }

    pub fn interval(&self) -> Result<ConfidenceInterval> {
        ConfidenceInterval::new(self.alpha, self.beta, self.omega, self.log_base)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// One JSON line `{frame_index, object_id, boxes: [[x, y, w, h, score], ...]}`.
pub fn write_proposal_line<W: Write>(
    mut out: W,
    frame_index: usize,
    object_id: u32,
    proposals: &[Proposal],
) -> Result<()> {
    #[derive(Serialize)]
    struct Line {
        frame_index: usize,
        object_id: u32,
        boxes: Vec<[f64; 5]>,
    }
    let line = Line {
        frame_index,
        object_id,
        boxes: proposals
            .iter()
            .map(|p| [p.bbox.x, p.bbox.y, p.bbox.w, p.bbox.h, p.detector_score])
            .collect(),
    };
    serde_json::to_writer(&mut out, &line)?;
    writeln!(out)?;
    Ok(())
}

/// Create `dir` (and parents) if needed.
pub fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}
