//! Image-quality metrics and per-category aggregation.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::Image;

pub fn mse(x: &Image, y: &Image) -> Result<f64> {
    x.same_shape(y)?;
    let mut total = 0.0f64;
    for (px, py) in x.data().chunks_exact(3).zip(y.data().chunks_exact(3)) {
        let mut s = 0.0;
        for c in 0..3 {
            let d = px[c] as f64 - py[c] as f64;
            s += d * d;
        }
        total += s / 3.0;
    }
    Ok(total / (x.width() * x.height()) as f64)
}

/// PSNR in dB for a given MSE. Zero error maps to `f64::INFINITY`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimMode {
    Global,
    Windowed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SsimConfig {
    pub c1: f64,
    pub c2: f64,
    pub mode: SsimMode,
    pub window_size: usize,
    pub window_sigma: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            c1: 0.01f64.powi(2),
            c2: 0.03f64.powi(2),
            mode: SsimMode::Global,
            window_size: 11,
            window_sigma: 1.5,
        }
    }
}

impl SsimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("ssim: {m}")));
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return bad("c1 and c2 must be positive");
        }
        if self.window_size == 0 || !(self.window_sigma > 0.0) {
            return bad("window size and sigma must be positive");
        }
        Ok(())
    }
}

pub fn luma(img: &Image) -> Vec<f64> {
    img.data()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cov: f64, c1: f64, c2: f64) -> f64 {
    ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Structural similarity on luma. Global mode uses whole-image population
/// statistics; windowed mode averages over every fully contained Gaussian
/// window (the window shrinks to the image if the image is smaller).
pub fn ssim(x: &Image, y: &Image, cfg: &SsimConfig) -> Result<f64> {
    x.same_shape(y)?;
    cfg.validate()?;
    let (lx, ly) = (luma(x), luma(y));
    match cfg.mode {
        SsimMode::Global => {
            let n = lx.len() as f64;
            let mx = lx.iter().sum::<f64>() / n;
            let my = ly.iter().sum::<f64>() / n;
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for (a, b) in lx.iter().zip(&ly) {
                vx += (a - mx) * (a - mx);
                vy += (b - my) * (b - my);
                cov += (a - mx) * (b - my);
            }
            Ok(ssim_formula(mx, my, vx / n, vy / n, cov / n, cfg.c1, cfg.c2))
        }
        SsimMode::Windowed => Ok(windowed_ssim(&lx, &ly, x.width(), x.height(), cfg)),
    }
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let centre = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - centre).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

fn windowed_ssim(lx: &[f64], ly: &[f64], width: usize, height: usize, cfg: &SsimConfig) -> f64 {
    let kw = cfg.window_size.min(width);
    let kh = cfg.window_size.min(height);
    let gx = gaussian_window(kw, cfg.window_sigma);
    let gy = gaussian_window(kh, cfg.window_sigma);
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=height - kh {
        for ox in 0..=width - kw {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (j, wy) in gy.iter().enumerate() {
                let row = (oy + j) * width + ox;
                for (i, wx) in gx.iter().enumerate() {
                    let w = wx * wy;
                    let (a, b) = (lx[row + i], ly[row + i]);
                    mx += w * a;
                    my += w * b;
                    sxx += w * a * a;
                    syy += w * b * b;
                    sxy += w * a * b;
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ssim_formula(mx, my, vx, vy, cov, cfg.c1, cfg.c2);
            count += 1;
        }
    }
    total / count as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub scene_id: String,
    pub n_views: usize,
    pub psnr: f64,
    pub ssim: f64,
}

impl SceneRow {
    pub fn failed(&self) -> bool {
        self.psnr.is_nan() || self.ssim.is_nan()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub variance: f64,
}

impl Stats {
    /// Population statistics.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = if mean.is_finite() {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        } else {
            f64::NAN
        };
        Self {
            mean,
            std: variance.sqrt(),
            variance,
        }
    }
}

pub const QUARTILES: [u32; 4] = [25, 50, 75, 100];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Quartile {
    pub percent: u32,
    pub count: usize,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub count: usize,
    pub failed: Vec<String>,
    pub psnr: Stats,
    pub ssim: Stats,
    pub quartiles: Vec<Quartile>,
}

/// Identifies which experiment arm a report belongs to.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportLabel {
    pub arm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer_iteration: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl ReportLabel {
    pub fn display(&self) -> String {
        let mut s = self.arm.clone();
        if let Some(a) = &self.algorithm {
            let _ = write!(s, "/{a}");
        }
        if let Some(i) = self.outer_iteration {
            let _ = write!(s, "@{i}");
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub label: ReportLabel,
    pub rows: Vec<SceneRow>,
    pub summary: Summary,
}

/// Sort order used for quartiles: PSNR descending, ties by scene id.
fn ranking(a: &SceneRow, b: &SceneRow) -> Ordering {
    b.psnr.total_cmp(&a.psnr).then_with(|| a.scene_id.cmp(&b.scene_id))
}

/// Summary statistics over the successful rows. The top-k% group holds
/// `ceil(k·n/100)` scenes.
pub fn summarize(rows: &[SceneRow]) -> Result<Summary> {
    let mut ok: Vec<&SceneRow> = rows.iter().filter(|r| !r.failed()).collect();
    if ok.is_empty() {
        return Err(Error::EmptyInput("no successful scene rows to aggregate"));
    }
    ok.sort_by(|a, b| ranking(a, b));
    let psnrs: Vec<f64> = ok.iter().map(|r| r.psnr).collect();
    let ssims: Vec<f64> = ok.iter().map(|r| r.ssim).collect();
    let n = ok.len();
    let quartiles = QUARTILES
        .iter()
        .map(|&percent| {
            let count = (percent as usize * n).div_ceil(100).max(1);
            Quartile {
                percent,
                count,
                psnr_mean: psnrs[..count].iter().sum::<f64>() / count as f64,
                ssim_mean: ssims[..count].iter().sum::<f64>() / count as f64,
            }
        })
        .collect();
    Ok(Summary {
        count: n,
        failed: rows.iter().filter(|r| r.failed()).map(|r| r.scene_id.clone()).collect(),
        psnr: Stats::of(&psnrs),
        ssim: Stats::of(&ssims),
        quartiles,
    })
}

pub fn aggregate(label: ReportLabel, rows: Vec<SceneRow>) -> Result<EvalReport> {
    let summary = summarize(&rows)?;
    Ok(EvalReport { label, rows, summary })
}

pub const REPORT_HEADER: &str = "scene_id,n_views,psnr,ssim";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportTail {
    run: ReportLabel,
    summary: Summary,
}

impl EvalReport {
    /// CSV rows, one blank line, then a TOML block with `[run]` and
    /// `[summary]` tables.
    pub fn to_text(&self) -> Result<String> {
        let mut out = String::new();
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            if r.scene_id.contains([',', '\n']) {
                return Err(Error::InvalidConfig(format!("scene id {:?} cannot be written to CSV", r.scene_id)));
            }
            let _ = writeln!(out, "{},{},{},{}", r.scene_id, r.n_views, r.psnr, r.ssim);
        }
        out.push('\n');
        let tail = ReportTail {
            run: self.label.clone(),
            summary: self.summary.clone(),
        };
        out.push_str(&toml::to_string(&tail).map_err(|e| Error::InvalidConfig(e.to_string()))?);
        Ok(out)
    }

    pub fn from_text(text: &str) -> std::result::Result<EvalReport, String> {
        let (table, tail) = text.split_once("\n\n").ok_or("missing blank line before summary block")?;
        let mut lines = table.lines();
        let header = lines.next().ok_or("empty report")?;
        if header != REPORT_HEADER {
            return Err(format!("unexpected header {header:?}, expected {REPORT_HEADER:?}"));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(format!("line {lineno}: expected 4 fields, found {}", f.len()));
            }
            let num = |s: &str, what: &str| s.parse::<f64>().map_err(|_| format!("line {lineno}: bad {what} {s:?}"));
            rows.push(SceneRow {
                scene_id: f[0].to_string(),
                n_views: f[1].parse().map_err(|_| format!("line {lineno}: bad n_views {:?}", f[1]))?,
                psnr: num(f[2], "psnr")?,
                ssim: num(f[3], "ssim")?,
            });
        }
        let tail: ReportTail = toml::from_str(tail).map_err(|e| format!("summary block: {e}"))?;
        Ok(EvalReport {
            label: tail.run,
            rows,
            summary: tail.summary,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_text()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        EvalReport::from_text(&text).map_err(|msg| Error::Report {
            path: path.to_path_buf(),
            msg,
        })
    }

    /// The view count shared by all rows, if uniform.
    pub fn n_views(&self) -> Option<usize> {
        let first = self.rows.first()?.n_views;
        self.rows.iter().all(|r| r.n_views == first).then_some(first)
    }
}
