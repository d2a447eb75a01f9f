//! Grid entropy, the non-zero grid entropy (NZGE) measure, and the
//! t-distribution interval that decides when a frame is complete.
//!
//! Entropies are computed in bits. A [`ConfidenceInterval`] records the
//! logarithm base its bounds were calibrated in, and comparisons convert the
//! measured bits into that base.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::SensorGeometry;
use crate::surface::{AtslTdFrame, Decay, Surface, EMPTY};
use crate::ttable;

/// `p × q` cells of `r × r` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub p: usize,
    pub q: usize,
    pub r: usize,
}

impl GridSpec {
    /// 45 × 60 cells of 4 px, covering a 240 × 180 sensor.
    pub const DAVIS240: GridSpec = GridSpec { p: 45, q: 60, r: 4 };

    /// Largest grid of `r`-pixel cells that fits; trailing partial cells are
    /// dropped.
    pub fn for_geometry(geometry: SensorGeometry, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(Error::Config("grid cell size must be positive".into()));
        }
        let spec = GridSpec {
            p: geometry.height as usize / r,
            q: geometry.width as usize / r,
            r,
        };
        spec.validate(geometry)?;
        Ok(spec)
    }

    pub fn validate(&self, geometry: SensorGeometry) -> Result<()> {
        if self.p == 0
            || self.q == 0
            || self.r == 0
            || self.p * self.r > geometry.height as usize
            || self.q * self.r > geometry.width as usize
        {
            return Err(Error::GridSpec {
                p: self.p,
                q: self.q,
                r: self.r,
                width: geometry.width,
                height: geometry.height,
            });
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.p * self.q
    }

    /// Cell index for a pixel, `None` when the pixel lies in a dropped margin.
    #[inline]
    pub fn cell_of(&self, u: u32, v: u32) -> Option<usize> {
        let (row, col) = (v as usize / self.r, u as usize / self.r);
        (row < self.p && col < self.q).then(|| row * self.q + col)
    }
}

impl Default for GridSpec {
    fn default() -> Self {
        Self::DAVIS240
    }
}

/// Shannon entropy (bits) of the gray-level histogram of a patch.
pub fn patch_entropy(patch: &[u8]) -> f64 {
    if patch.is_empty() {
        return 0.0;
    }
    let mut hist = [0u32; 256];
    for &z in patch {
        hist[z as usize] += 1;
    }
    entropy_from_counts(hist.iter().copied().filter(|&c| c > 0), patch.len())
}

fn entropy_from_counts(counts: impl Iterator<Item = u32>, n: usize) -> f64 {
    let n = n as f64;
    let mut acc = 0.0;
    let mut levels = 0;
    for c in counts {
        let c = c as f64;
        acc += c * c.log2();
        levels += 1;
    }
    if levels <= 1 {
        return 0.0;
    }
    (n.log2() - acc / n).max(0.0)
}

/// Reusable level histogram for many patches of at most `max_n` pixels.
///
/// Levels are accumulated in the order they are fed, so two callers visiting
/// the same pixels in the same order get bit-identical entropies.
#[derive(Debug, Clone)]
pub(crate) struct PatchHistogram {
    counts: Vec<u32>,
    distinct: Vec<u8>,
    /// `c · log2(c)` for `c` up to `max_n`.
    clogc: Vec<f64>,
}

impl PatchHistogram {
    pub(crate) fn new(max_n: usize) -> Self {
        Self {
            counts: vec![0; 256],
            distinct: Vec::with_capacity(256),
            clogc: (0..=max_n)
                .map(|c| {
                    if c == 0 {
                        0.0
                    } else {
                        c as f64 * (c as f64).log2()
                    }
                })
                .collect(),
        }
    }

    #[inline]
    pub(crate) fn add(&mut self, level: u8) {
        let c = &mut self.counts[level as usize];
        if *c == 0 {
            self.distinct.push(level);
        }
        *c += 1;
    }

    /// Entropy of everything added since the last call, in bits; clears.
    pub(crate) fn take_entropy(&mut self, n: usize) -> f64 {
        let h = if self.distinct.len() <= 1 {
            0.0
        } else {
            let mut acc = 0.0;
            for &z in &self.distinct {
                let c = self.counts[z as usize] as usize;
                acc += self
                    .clogc
                    .get(c)
                    .copied()
                    .unwrap_or_else(|| c as f64 * (c as f64).log2());
            }
            let n = n as f64;
            (n.log2() - acc / n).max(0.0)
        };
        for &z in &self.distinct {
            self.counts[z as usize] = 0;
        }
        self.distinct.clear();
        h
    }
}

/// Per-cell entropy over a frame, averaged across the two channels.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    pub grid: GridSpec,
    /// Row-major `p × q` cell entropies in bits.
    pub cells: Vec<f64>,
    pub n_grid: usize,
}

impl EntropyMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * self.grid.q + col]
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }

    /// NZGE in bits, `None` when no cell carries information yet.
    pub fn nzge(&self) -> Option<f64> {
        (self.n_grid > 0).then(|| self.total() / self.n_grid as f64)
    }
}

/// Entropy map of a two-plane image (`width × height`, row-major planes).
pub fn entropy_map(
    planes: [&[u8]; 2],
    geometry: SensorGeometry,
    grid: GridSpec,
) -> Result<EntropyMap> {
    grid.validate(geometry)?;
    let width = geometry.width as usize;
    let r = grid.r;
    let mut hist = PatchHistogram::new(r * r);
    let mut cells = Vec::with_capacity(grid.cells());
    for row in 0..grid.p {
        for col in 0..grid.q {
            let mut sum = 0.0;
            for plane in planes {
                for dy in 0..r {
                    let start = (row * r + dy) * width + col * r;
                    plane[start..start + r].iter().for_each(|&z| hist.add(z));
                }
                sum += hist.take_entropy(r * r);
            }
            cells.push(sum / 2.0);
        }
    }
    let n_grid = cells.iter().filter(|&&h| h > 0.0).count();
    Ok(EntropyMap {
        grid,
        cells,
        n_grid,
    })
}

pub fn frame_entropy_map(frame: &AtslTdFrame, grid: GridSpec) -> Result<EntropyMap> {
    entropy_map([&frame.on, &frame.off], frame.geometry, grid)
}

/// NZGE of a map in bits; `None` is the "no information yet" signal.
pub fn nzge(map: &EntropyMap) -> Option<f64> {
    map.nzge()
}

/// `n`, mean and sample standard deviation of a set of NZGE values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

/// NZGE values measured on frames with sharp contours.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationSet {
    samples: Vec<f64>,
}

impl CalibrationSet {
    pub fn new(samples: Vec<f64>) -> Self {
        Self { samples }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn push(&mut self, sample: f64) {
        self.samples.push(sample);
    }

    /// NZGE in bits of every frame with at least one non-zero cell.
    pub fn from_frames<'a>(
        frames: impl IntoIterator<Item = &'a AtslTdFrame>,
        grid: GridSpec,
    ) -> Result<Self> {
        let mut set = Self::default();
        for f in frames {
            if let Some(h) = frame_entropy_map(f, grid)?.nzge() {
                set.push(h);
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn summary(&self) -> Result<SampleSummary> {
        let n = self.samples.len();
        if n < 2 {
            return Err(Error::TooFewSamples(n));
        }
        let mean = self.samples.iter().sum::<f64>() / n as f64;
        let ss: f64 = self.samples.iter().map(|c| (c - mean).powi(2)).sum();
        Ok(SampleSummary {
            n,
            mean,
            std: (ss / (n - 1) as f64).sqrt(),
        })
    }
}

/// Bounds `[alpha, beta]` on NZGE, in units of `log_base`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub alpha: f64,
    pub beta: f64,
    pub omega: f64,
    pub log_base: f64,
}

impl ConfidenceInterval {
    /// Interval from 100 samples with mean 0.08795 and standard deviation
    /// 0.02394 at 95% confidence, roughly `[0.0832, 0.0927]`.
    pub fn published_default() -> Self {
        calibrate_interval(
            &SampleSummary {
                n: 100,
                mean: 0.08795,
                std: 0.02394,
            },
            0.05,
        )
        .expect("published statistics are valid")
    }

    pub fn new(alpha: f64, beta: f64, omega: f64, log_base: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > alpha && beta.is_finite()) {
            return Err(Error::Config(format!(
                "interval needs 0 < alpha < beta, got [{alpha}, {beta}]"
            )));
        }
        if !(log_base > 0.0 && log_base != 1.0 && log_base.is_finite()) {
            return Err(Error::Config(format!("invalid logarithm base {log_base}")));
        }
        Ok(Self {
            alpha,
            beta,
            omega,
            log_base,
        })
    }

    /// Same interval with the bounds expressed in another logarithm base.
    pub fn with_base(mut self, log_base: f64) -> Self {
        let k = self.log_base.log2() / log_base.log2();
        self.alpha *= k;
        self.beta *= k;
        self.log_base = log_base;
        self
    }

    /// Convert an entropy in bits into this interval's units.
    #[inline]
    pub fn from_bits(&self, bits: f64) -> f64 {
        bits / self.log_base.log2()
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.alpha && value <= self.beta
    }

    /// The cut rule: a frame is complete once NZGE has reached `alpha`,
    /// including when a batched check overshoots `beta`.
    pub fn reached(&self, nzge_bits: f64) -> bool {
        self.from_bits(nzge_bits) >= self.alpha
    }
}

/// `|g_{omega/2}|` for `df` degrees of freedom.
pub fn t_critical(df: usize, omega: f64) -> Result<f64> {
    if df == 0 {
        return Err(Error::TooFewSamples(1));
    }
    let (table, z) = if (omega - 0.05).abs() < 1e-12 {
        (&ttable::T_CRIT_05, ttable::Z_CRIT_05)
    } else if (omega - 0.01).abs() < 1e-12 {
        (&ttable::T_CRIT_01, ttable::Z_CRIT_01)
    } else {
        return Err(Error::UnsupportedSignificance(omega));
    };
    Ok(if df <= ttable::MAX_TABLE_DF {
        table[df - 1]
    } else {
        z
    })
}

/// Two-sided t interval for the mean NZGE of well-formed frames, in bits.
pub fn calibrate_interval(summary: &SampleSummary, omega: f64) -> Result<ConfidenceInterval> {
    if summary.n < 2 {
        return Err(Error::TooFewSamples(summary.n));
    }
    if !(omega > 0.0 && omega < 1.0) {
        return Err(Error::Config(format!(
            "omega must be in (0, 1), got {omega}"
        )));
    }
    if !summary.std.is_finite() || summary.std < 1e-12 {
        return Err(Error::DegenerateInterval);
    }
    let g = t_critical(summary.n - 1, omega)?;
    let half = g * summary.std / (summary.n as f64).sqrt();
    let (alpha, beta) = (summary.mean - half, summary.mean + half);
    if alpha <= 0.0 {
        return Err(Error::Config(format!(
            "calibrated lower bound {alpha} is not positive"
        )));
    }
    Ok(ConfidenceInterval {
        alpha,
        beta,
        omega,
        log_base: 2.0,
    })
}

/// Whether a rendered two-plane image has reached the interval.
pub fn should_finalize(
    planes: [&[u8]; 2],
    geometry: SensorGeometry,
    grid: GridSpec,
    interval: &ConfidenceInterval,
) -> Result<bool> {
    let map = entropy_map(planes, geometry, grid)?;
    Ok(map.nzge().is_some_and(|h| interval.reached(h)))
}

/// Per-cell entropy cache over a live [`Surface`].
///
/// Events mark their cell dirty; [`refresh`](Self::refresh) recomputes only
/// dirty cells. Untouched cells keep the entropy they had when last
/// recomputed, so the running NZGE is an estimate between exact passes.
#[derive(Debug, Clone)]
pub struct IncrementalNzge {
    grid: GridSpec,
    cell_entropy: Vec<f64>,
    /// Surface time each cell entropy was computed at.
    computed_at: Vec<i64>,
    dirty: Vec<bool>,
    dirty_list: Vec<u32>,
    active: Vec<bool>,
    active_list: Vec<u32>,
    sum: f64,
    nonzero: usize,
    hist: PatchHistogram,
}

impl IncrementalNzge {
    pub fn new(grid: GridSpec, geometry: SensorGeometry) -> Result<Self> {
        grid.validate(geometry)?;
        let cells = grid.cells();
        Ok(Self {
            grid,
            cell_entropy: vec![0.0; cells],
            computed_at: vec![EMPTY; cells],
            dirty: vec![false; cells],
            dirty_list: Vec::new(),
            active: vec![false; cells],
            active_list: Vec::new(),
            sum: 0.0,
            nonzero: 0,
            hist: PatchHistogram::new(grid.r * grid.r),
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn observe(&mut self, u: u32, v: u32) {
        if let Some(cell) = self.grid.cell_of(u, v) {
            if !self.dirty[cell] {
                self.dirty[cell] = true;
                self.dirty_list.push(cell as u32);
                if !self.active[cell] {
                    self.active[cell] = true;
                    self.active_list.push(cell as u32);
                }
            }
        }
    }

    fn set_cell(&mut self, cell: usize, h: f64) {
        let old = self.cell_entropy[cell];
        if old > 0.0 {
            self.nonzero -= 1;
        }
        if h > 0.0 {
            self.nonzero += 1;
        }
        self.sum += h - old;
        self.cell_entropy[cell] = h;
    }

    fn cell_entropy_now(&mut self, surface: &Surface, decay: &Decay, cell: usize) -> f64 {
        let r = self.grid.r;
        let width = surface.geometry().width as usize;
        let pixels = surface.geometry().pixels();
        let (row, col) = (cell / self.grid.q, cell % self.grid.q);
        let times = surface.raw_set_times();
        let mut total = 0.0;
        for channel in 0..2 {
            let base = channel * pixels + row * r * width + col * r;
            let mut any = false;
            for dy in 0..r {
                let line = &times[base + dy * width..base + dy * width + r];
                for &s in line {
                    let level = if s == EMPTY {
                        0
                    } else {
                        any = true;
                        decay.level(s)
                    };
                    self.hist.add(level);
                }
            }
            let h = self.hist.take_entropy(r * r);
            if any {
                total += h;
            }
        }
        total / 2.0
    }

    /// Recompute dirty cells and return the running NZGE estimate (bits).
    pub fn refresh(&mut self, surface: &Surface) -> Option<f64> {
        let decay = surface.decay();
        let dirty = std::mem::take(&mut self.dirty_list);
        for &cell in &dirty {
            let cell = cell as usize;
            self.dirty[cell] = false;
            let h = self.cell_entropy_now(surface, &decay, cell);
            self.set_cell(cell, h);
            self.computed_at[cell] = surface.last_event_time().0;
        }
        self.dirty_list = dirty;
        self.dirty_list.clear();
        self.estimate()
    }

    /// Recompute every cell touched this frame; the result is the exact
    /// NZGE of the current render.
    pub fn exact(&mut self, surface: &Surface) -> Option<f64> {
        let decay = surface.decay();
        let active = std::mem::take(&mut self.active_list);
        self.sum = 0.0;
        self.nonzero = 0;
        let now = surface.last_event_time().0;
        for &cell in &active {
            let cell = cell as usize;
            let h = if self.computed_at[cell] == now && !self.dirty[cell] {
                self.cell_entropy[cell]
            } else {
                self.computed_at[cell] = now;
                self.cell_entropy_now(surface, &decay, cell)
            };
            self.cell_entropy[cell] = h;
            if h > 0.0 {
                self.sum += h;
                self.nonzero += 1;
            }
        }
        self.active_list = active;
        for &cell in &self.dirty_list {
            self.dirty[cell as usize] = false;
        }
        self.dirty_list.clear();
        self.estimate()
    }

    pub fn estimate(&self) -> Option<f64> {
        (self.nonzero > 0).then(|| self.sum / self.nonzero as f64)
    }

    /// Forget all cells; call together with a surface reset.
    pub fn reset(&mut self) {
        for &cell in &self.active_list {
            let cell = cell as usize;
            self.cell_entropy[cell] = 0.0;
            self.computed_at[cell] = EMPTY;
            self.active[cell] = false;
            self.dirty[cell] = false;
        }
        self.active_list.clear();
        self.dirty_list.clear();
        self.sum = 0.0;
        self.nonzero = 0;
    }
}
