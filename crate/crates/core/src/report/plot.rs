//! PNG figures drawn directly into an RGB buffer: per-class weight norms
//! (old classes blue, new classes red, dashed group means) and confusion
//! matrices shaded by `log(1 + count)`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::StepMetrics;
use crate::align::NormReport;
use crate::{Error, Result};

const OLD: Rgb<u8> = Rgb([40, 90, 200]);
const NEW: Rgb<u8> = Rgb([210, 50, 40]);
const AXIS: Rgb<u8> = Rgb([0, 0, 0]);

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, w: i64, h: i64, c: Rgb<u8>) {
    for y in y0.max(0)..(y0 + h).min(img.height() as i64) {
        for x in x0.max(0)..(x0 + w).min(img.width() as i64) {
            img.put_pixel(x as u32, y as u32, c);
        }
    }
}

pub fn norm_plot(report: &NormReport, path: &Path) -> Result<()> {
    let (width, height, margin) = (640i64, 360i64, 40i64);
    let mut img = RgbImage::from_pixel(width as u32, height as u32, Rgb([255, 255, 255]));
    let norms: Vec<(f64, Rgb<u8>)> = report
        .old_norms
        .iter()
        .map(|&n| (n, OLD))
        .chain(report.new_norms.iter().map(|&n| (n, NEW)))
        .collect();
    let top = norms.iter().map(|p| p.0).fold(0.0, f64::max);
    let top = if top > 0.0 { top * 1.1 } else { 1.0 };
    let plot_w = width - 2 * margin;
    let plot_h = height - 2 * margin;
    let y_of = |v: f64| height - margin - ((v / top) * plot_h as f64).round() as i64;
    fill_rect(&mut img, margin, margin, 2, plot_h, AXIS);
    fill_rect(&mut img, margin, height - margin, plot_w, 2, AXIS);
    let n = norms.len().max(1) as i64;
    for (mean, color) in [(report.mean_old, OLD), (Some(report.mean_new), NEW)] {
        if let Some(m) = mean {
            let y = y_of(m);
            let mut x = margin;
            while x < width - margin {
                fill_rect(&mut img, x, y, 6, 1, color);
                x += 10;
            }
        }
    }
    for (i, (v, color)) in norms.iter().enumerate() {
        let x = margin + ((i as i64 * 2 + 1) * plot_w) / (2 * n);
        fill_rect(&mut img, x - 2, y_of(*v) - 2, 5, 5, *color);
    }
    img.save(path)?;
    Ok(())
}

pub fn confusion_plot(matrix: &[Vec<u64>], path: &Path) -> Result<()> {
    let n = matrix.len().max(1);
    let cell = (480 / n).max(1) as u32;
    let side = cell * n as u32;
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    let max = matrix.iter().flatten().copied().max().unwrap_or(0);
    let scale = (1.0 + max as f64).ln().max(f64::MIN_POSITIVE);
    for (i, row) in matrix.iter().enumerate() {
        for (j, &count) in row.iter().enumerate() {
            let t = (1.0 + count as f64).ln() / scale;
            let shade = |full: f64| (255.0 - t * (255.0 - full)).round() as u8;
            let c = Rgb([shade(8.0), shade(48.0), shade(107.0)]);
            for y in 0..cell {
                for x in 0..cell {
                    img.put_pixel(j as u32 * cell + x, i as u32 * cell + y, c);
                }
            }
        }
    }
    img.save(path)?;
    Ok(())
}

/// Writes `norms_step<b>.png` and `confusion_step<b>.png` for every step
/// into `dir`; returns the written paths.
pub fn render_figures(steps: &[StepMetrics], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut written = Vec::new();
    for m in steps {
        let p = dir.join(format!("norms_step{}.png", m.step));
        norm_plot(&m.norms, &p)?;
        written.push(p);
        let p = dir.join(format!("confusion_step{}.png", m.step));
        confusion_plot(&m.confusion, &p)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::NormKind;

    #[test]
    fn flat_norms_render() {
        let r = NormReport {
            kind: NormKind::TwoNorm,
            old_norms: vec![1.0; 4],
            new_norms: vec![1.0; 2],
            mean_old: Some(1.0),
            mean_new: 1.0,
            gamma: Some(1.0),
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("norms_step2.png");
        norm_plot(&r, &p).unwrap();
        assert!(fs::metadata(&p).unwrap().len() > 0);
        let img = image::open(&p).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (640, 360));
    }

    #[test]
    fn confusion_renders_log_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        confusion_plot(&[vec![100, 0], vec![1, 9]], &p).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        assert_eq!(*img.get_pixel(0, 0), Rgb([8, 48, 107]));
        assert_eq!(*img.get_pixel(479, 0), Rgb([255, 255, 255]));
    }
}
