//! Result boxes drawn over dumped frames.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;

use anyhow::{Context, Result};
use atsltd::files::{frame_stem, read_frame_dump, read_results, ResultRow};
use atsltd::track::Mode;
use atsltd::{AtslTdFrame, BoundingBox};
use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::commands::Staging;
use crate::RenderArgs;

pub const TRACKING: Rgb<u8> = Rgb([0, 255, 0]);
pub const RECOVERING: Rgb<u8> = Rgb([255, 0, 255]);
const DASH: u32 = 3;

/// Both polarity planes as a dimmed grey background.
pub fn background(frame: &AtslTdFrame) -> RgbImage {
    let g = frame.geometry;
    RgbImage::from_fn(g.width, g.height, |u, v| {
        let i = (v * g.width + u) as usize;
        let l = frame.on[i].max(frame.off[i]) / 2;
        Rgb([l, l, l])
    })
}

/// One-pixel outline covering the pixels the box touches; recovery boxes are
/// dashed.
pub fn draw_box(img: &mut RgbImage, b: &BoundingBox, mode: Mode) {
    let (w, h) = img.dimensions();
    let x0 = b.x.floor().max(0.0) as i64;
    let y0 = b.y.floor().max(0.0) as i64;
    let x1 = ((b.right().ceil() as i64) - 1).min(w as i64 - 1);
    let y1 = ((b.bottom().ceil() as i64) - 1).min(h as i64 - 1);
    if x0 > x1 || y0 > y1 {
        return;
    }
    let (color, dashed) = match mode {
        Mode::Tracking => (TRACKING, false),
        Mode::Recovering => (RECOVERING, true),
    };
    let mut put = |x: i64, y: i64, k: i64| {
        if !dashed || (k as u32 / DASH).is_multiple_of(2) {
            img.put_pixel(x as u32, y as u32, color);
        }
    };
    let left_in = b.x >= 0.0;
    let top_in = b.y >= 0.0;
    let right_in = b.right() <= w as f64;
    let bottom_in = b.bottom() <= h as f64;
    for x in x0..=x1 {
        if top_in {
            put(x, y0, x - x0);
        }
        if bottom_in {
            put(x, y1, x - x0);
        }
    }
    for y in y0..=y1 {
        if left_in {
            put(x0, y, y - y0);
        }
        if right_in {
            put(x1, y, y - y0);
        }
    }
}

pub fn run(a: RenderArgs) -> Result<()> {
    let cfg = a.common.load(&[])?;
    let file = File::open(&a.results)
        .with_context(|| format!("opening results {}", a.results.display()))?;
    let rows = read_results(BufReader::new(file))?;
    let mut by_frame: BTreeMap<usize, Vec<ResultRow>> = BTreeMap::new();
    for r in rows {
        by_frame.entry(r.frame_index).or_default().push(r);
    }
    let stage = Staging::new(&a.out)?;
    let render_one = |(index, rows): (&usize, &Vec<ResultRow>)| -> Result<()> {
        let frame = read_frame_dump(&a.frames, *index)
            .with_context(|| format!("loading frame {index} from {}", a.frames.display()))?;
        let mut img = background(&frame);
        for r in rows {
            draw_box(&mut img, &r.bbox, r.mode);
        }
        let path = stage
            .path()
            .join(format!("{}_boxes.png", frame_stem(*index)));
        img.save(&path)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    };
    if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()?;
        pool.install(|| by_frame.par_iter().try_for_each(render_one))?;
    } else {
        by_frame.iter().try_for_each(render_one)?;
    }
    stage.commit()?;
    println!("{} images -> {}", by_frame.len(), a.out.display());
    Ok(())
}
