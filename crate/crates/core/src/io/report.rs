//! CSV tables, plots and preview strips for fits and training runs.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{write_bytes, write_json};
use crate::error::Result;
use crate::fitter::{FitResult, Stage, TrainLogEntry};
use crate::gradients::ParamVector;
use crate::model::MultiLevelModel;
use crate::render::{
    rasterize_preview, render_state, sh_basis, CameraIntrinsics, Canvas, Illumination, Image, Level,
    PREVIEW_BACKGROUND,
};

const PLOT_BACKGROUND: [f64; 3] = [1.0, 1.0, 1.0];
const AXIS_COLOR: [f64; 3] = [0.0, 0.0, 0.0];
/// Line/bar colors: base level, final level, then further series.
pub const SERIES_COLORS: [[f64; 3]; 4] = [[0.05, 0.25, 0.8], [0.9, 0.35, 0.0], [0.1, 0.6, 0.1], [0.6, 0.1, 0.6]];

/// One row per trajectory entry (iterations + 1 rows after the header).
pub fn trajectory_csv(result: &FitResult) -> String {
    let mut s = String::from("iteration,stage");
    let names: Vec<&str> = result
        .trajectory
        .first()
        .map(|r| r.terms().iter().map(|(n, _)| *n).collect())
        .unwrap_or_default();
    for n in &names {
        let _ = write!(s, ",{n}");
    }
    s.push_str(",sliding_vertices\n");
    for (i, (report, stage)) in result.trajectory.iter().zip(&result.stages).enumerate() {
        let stage = match stage {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        };
        let _ = write!(s, "{i},{stage}");
        for (_, v) in report.terms() {
            let _ = write!(s, ",{v:e}");
        }
        let sliding: Vec<String> = result
            .sliding_history
            .get(i)
            .map(|v| v.iter().map(|x| x.to_string()).collect())
            .unwrap_or_default();
        let _ = writeln!(s, ",{}", sliding.join(" "));
    }
    s
}

pub fn train_log_csv(log: &[TrainLogEntry]) -> String {
    let mut s = String::from("epoch,mean_total,mean_photo_final\n");
    for e in log {
        let _ = writeln!(s, "{},{:e},{:e}", e.epoch, e.mean_total, e.mean_photo_final);
    }
    s
}

/// Per-image photometric errors; skipped images have empty cells.
pub fn errors_csv(base: &[Option<f64>], final_: &[Option<f64>]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    let mut s = String::from("image,photometric_error_base,photometric_error_final\n");
    for (i, (b, f)) in base.iter().zip(final_).enumerate() {
        let _ = writeln!(s, "{i},{},{}", cell(*b), cell(*f));
    }
    s
}

/// Shared-bin histograms of base and final errors over `[0, max]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub base: Vec<usize>,
    pub final_: Vec<usize>,
}

pub fn histogram(base: &[f64], final_: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let top = base.iter().chain(final_).copied().fold(0.0_f64, f64::max);
    let top = if top > 0.0 { top } else { 1.0 };
    let edges: Vec<f64> = (0..=bins).map(|i| top * i as f64 / bins as f64).collect();
    let count = |values: &[f64]| {
        let mut c = vec![0usize; bins];
        for &v in values {
            // the last bin is closed on the right
            let b = ((v.max(0.0) / top) * bins as f64).floor() as usize;
            c[b.min(bins - 1)] += 1;
        }
        c
    };
    Histogram {
        edges,
        base: count(base),
        final_: count(final_),
    }
}

fn put(img: &mut Image, x: f64, y: f64, c: [f64; 3]) {
    if x >= 0.0 && y >= 0.0 {
        let (x, y) = (x.round() as usize, y.round() as usize);
        if x < img.width() && y < img.height() {
            img.set(x, y, Vector3::from(c));
        }
    }
}

fn line(img: &mut Image, a: (f64, f64), b: (f64, f64), c: [f64; 3]) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()) * 2.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        put(img, a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1), c);
    }
}

fn frame(width: usize, height: usize) -> (Image, f64, f64, f64, f64) {
    let mut img = Image::new(width, height, Vector3::from(PLOT_BACKGROUND));
    let (x0, y0) = (4.0, 4.0);
    let (x1, y1) = (width as f64 - 5.0, height as f64 - 5.0);
    line(&mut img, (x0, y1), (x1, y1), AXIS_COLOR);
    line(&mut img, (x0, y0), (x0, y1), AXIS_COLOR);
    (img, x0, y0, x1, y1)
}

/// Polylines over a shared index axis; with `log_y` non-positive values are
/// left out.
pub fn plot_curves(series: &[(&[f64], [f64; 3])], width: usize, height: usize, log_y: bool) -> Image {
    let (mut img, x0, y0, x1, y1) = frame(width, height);
    let tf = |v: f64| if log_y { (v > 0.0).then(|| v.log10()) } else { v.is_finite().then_some(v) };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut len = 1;
    for (values, _) in series {
        len = len.max(values.len());
        for v in values.iter().filter_map(|&v| tf(v)) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        return img;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let px = |i: usize| x0 + 1.0 + (x1 - x0 - 2.0) * i as f64 / (len - 1).max(1) as f64;
    let py = |v: f64| y1 - 1.0 - (y1 - y0 - 2.0) * (v - lo) / (hi - lo);
    for (values, color) in series {
        let mut prev: Option<(f64, f64)> = None;
        for (i, &v) in values.iter().enumerate() {
            match tf(v) {
                Some(v) => {
                    let p = (px(i), py(v));
                    if let Some(q) = prev {
                        line(&mut img, q, p, *color);
                    } else {
                        put(&mut img, p.0, p.1, *color);
                    }
                    prev = Some(p);
                }
                None => prev = None,
            }
        }
    }
    img
}

/// Side-by-side bars per bin: base (blue) and final (orange).
pub fn plot_histogram(h: &Histogram, width: usize, height: usize) -> Image {
    let (mut img, x0, y0, x1, y1) = frame(width, height);
    let bins = h.base.len().max(1);
    let top = h.base.iter().chain(&h.final_).copied().max().unwrap_or(0).max(1) as f64;
    let bin_w = (x1 - x0 - 2.0) / bins as f64;
    for (b, counts) in h.base.iter().zip(&h.final_).enumerate() {
        for (k, (count, color)) in [*counts.0, *counts.1].into_iter().zip(SERIES_COLORS).enumerate() {
            let left = x0 + 1.0 + b as f64 * bin_w + k as f64 * bin_w / 2.0;
            let bar_top = y1 - 1.0 - (y1 - y0 - 2.0) * count as f64 / top;
            let mut x = left;
            while x < left + bin_w / 2.0 - 0.5 {
                if count > 0 {
                    line(&mut img, (x, y1 - 1.0), (x, bar_top), color);
                }
                x += 1.0;
            }
        }
    }
    img
}

/// A unit-reflectance sphere lit by `light`, viewed by the camera.
pub fn sh_sphere(light: &Illumination, width: usize, height: usize) -> Result<Image> {
    let r = 0.45 * width.min(height) as f64;
    let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let mut img = Image::new(width, height, Vector3::repeat(PREVIEW_BACKGROUND));
    for y in 0..height {
        for x in 0..width {
            let (nx, ny) = ((x as f64 - cx) / r, (y as f64 - cy) / r);
            let d2 = nx * nx + ny * ny;
            if d2 <= 1.0 {
                // the camera looks down +z, so visible normals point to -z
                let n = Vector3::new(nx, ny, -(1.0 - d2).sqrt());
                img.set(x, y, light.irradiance(&sh_basis(&n)?));
            }
        }
    }
    Ok(img)
}

/// Unshaded reflectance of a level rendered over gray.
pub fn reflectance_preview(
    model: &MultiLevelModel,
    params: &ParamVector,
    k: &CameraIntrinsics,
    level: Level,
) -> Result<Image> {
    let state = render_state(model, params, k, level)?;
    let mut canvas = Canvas::new(Image::new(k.width, k.height, Vector3::repeat(PREVIEW_BACKGROUND)));
    canvas.draw(&state.cam_vertices, &state.reflectance, model.topology.triangles(), k);
    Ok(canvas.image)
}

/// `input | base overlay | final overlay | final reflectance | final light`.
pub fn preview_strip(model: &MultiLevelModel, params: &ParamVector, image: &Image, k: &CameraIntrinsics) -> Result<Image> {
    let panels = [
        image.clone(),
        rasterize_preview(model, params, k, Level::Base, Some(image))?,
        rasterize_preview(model, params, k, Level::Final, Some(image))?,
        reflectance_preview(model, params, k, Level::Final)?,
        sh_sphere(&params.gamma_f, k.width, k.height)?,
    ];
    let (w, h) = (k.width, k.height);
    Ok(Image::from_fn(w * panels.len(), h, |x, y| panels[x / w].get(x % w, y)))
}

/// Writes `trajectory.csv`, `energy.png` and `summary.json`, plus
/// `strip.png` when the model, image and camera are given.
pub fn write_fit_report(
    dir: &Path,
    result: &FitResult,
    preview: Option<(&MultiLevelModel, &Image, &CameraIntrinsics)>,
) -> Result<()> {
    write_bytes(&dir.join("trajectory.csv"), trajectory_csv(result).as_bytes())?;
    let total: Vec<f64> = result.trajectory.iter().map(|r| r.total).collect();
    let data: Vec<f64> = result.trajectory.iter().map(|r| r.data).collect();
    let reg: Vec<f64> = result.trajectory.iter().map(|r| r.w_reg * r.reg).collect();
    let best = result.best_so_far();
    plot_curves(
        &[
            (&data, SERIES_COLORS[0]),
            (&reg, SERIES_COLORS[2]),
            (&total, SERIES_COLORS[1]),
            (&best, SERIES_COLORS[3]),
        ],
        480,
        320,
        true,
    )
    .save(&dir.join("energy.png"))?;
    write_json(
        &dir.join("summary.json"),
        &serde_json::json!({
            "iterations": result.trajectory.len().saturating_sub(1),
            "initial_total": total.first(),
            "final_total": total.last(),
            "photometric_error_base": result.photometric_error_base,
            "photometric_error_final": result.photometric_error_final,
        }),
    )?;
    if let Some((model, image, k)) = preview {
        preview_strip(model, &result.params, image, k)?.save(&dir.join("strip.png"))?;
    }
    Ok(())
}

/// Writes `train_log.csv`, `errors.csv`, `histogram.json`, `histogram.png`
/// and `loss.png`.
pub fn write_train_report(
    dir: &Path,
    log: &[TrainLogEntry],
    errors_base: &[Option<f64>],
    errors_final: &[Option<f64>],
    bins: usize,
) -> Result<()> {
    write_bytes(&dir.join("train_log.csv"), train_log_csv(log).as_bytes())?;
    write_bytes(&dir.join("errors.csv"), errors_csv(errors_base, errors_final).as_bytes())?;
    let b: Vec<f64> = errors_base.iter().flatten().copied().collect();
    let f: Vec<f64> = errors_final.iter().flatten().copied().collect();
    let h = histogram(&b, &f, bins);
    write_json(&dir.join("histogram.json"), &h)?;
    plot_histogram(&h, 480, 320).save(&dir.join("histogram.png"))?;
    let total: Vec<f64> = log.iter().map(|e| e.mean_total).collect();
    let photo: Vec<f64> = log.iter().map(|e| e.mean_photo_final).collect();
    plot_curves(&[(&total, SERIES_COLORS[1]), (&photo, SERIES_COLORS[0])], 480, 320, true).save(&dir.join("loss.png"))
}
