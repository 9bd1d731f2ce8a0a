//! Static PNG charts from metrics CSV files: loss per step and, when
//! validation columns are present, eval score per step. Axes are drawn
//! as plain lines with light gridlines; no text is rendered.

use crate::error::{Error, Result};
use image::{Rgb, RgbImage};
use std::path::Path;

const WIDTH: u32 = 800;
const HEIGHT: u32 = 500;
const MARGIN: u32 = 50;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([30, 30, 30]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const LINE: Rgb<u8> = Rgb([38, 90, 180]);

/// One parsed metrics file: steps with losses, plus sparse eval scores.
pub struct Metrics {
    pub loss: Vec<(f64, f64)>,
    pub eval: Vec<(f64, f64)>,
}

pub fn read_metrics(path: &Path) -> Result<Metrics> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty metrics file", path.display())))?;
    if header != "schema,step,loss,eval_mean_score" {
        return Err(Error::Data(format!("{}: unrecognized metrics header", path.display())));
    }
    let mut loss = Vec::new();
    let mut eval = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Data(format!("{}: row {i} malformed", path.display())));
        }
        let step: f64 = cols[1]
            .parse()
            .map_err(|_| Error::Data(format!("{}: row {i}: bad step", path.display())))?;
        let l: f64 = cols[2]
            .parse()
            .map_err(|_| Error::Data(format!("{}: row {i}: bad loss", path.display())))?;
        loss.push((step, l));
        if !cols[3].is_empty() {
            let s: f64 = cols[3]
                .parse()
                .map_err(|_| Error::Data(format!("{}: row {i}: bad score", path.display())))?;
            eval.push((step, s));
        }
    }
    if loss.is_empty() {
        return Err(Error::Data(format!("{}: no data rows", path.display())));
    }
    Ok(Metrics { loss, eval })
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a.0 + t * (b.0 - a.0);
        let y = a.1 + t * (b.1 - a.1);
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Render a polyline chart of `series` (x ascending) to a PNG file.
pub fn render_chart(series: &[(f64, f64)], out: &Path) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Data("nothing to plot".into()));
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in series {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| MARGIN as f64 + (x - x0) / (x1 - x0) * (WIDTH - 2 * MARGIN) as f64;
    let py = |y: f64| (HEIGHT - MARGIN) as f64 - (y - y0) / (y1 - y0) * (HEIGHT - 2 * MARGIN) as f64;

    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, BG);
    for g in 1..5 {
        let gy = MARGIN as f64 + g as f64 / 5.0 * (HEIGHT - 2 * MARGIN) as f64;
        draw_line(&mut img, (MARGIN as f64, gy), ((WIDTH - MARGIN) as f64, gy), GRID);
        let gx = MARGIN as f64 + g as f64 / 5.0 * (WIDTH - 2 * MARGIN) as f64;
        draw_line(&mut img, (gx, MARGIN as f64), (gx, (HEIGHT - MARGIN) as f64), GRID);
    }
    let bl = (MARGIN as f64, (HEIGHT - MARGIN) as f64);
    draw_line(&mut img, (MARGIN as f64, MARGIN as f64), bl, AXIS);
    draw_line(&mut img, bl, ((WIDTH - MARGIN) as f64, (HEIGHT - MARGIN) as f64), AXIS);
    for pair in series.windows(2) {
        draw_line(&mut img, (px(pair[0].0), py(pair[0].1)), (px(pair[1].0), py(pair[1].1)), LINE);
    }
    if series.len() == 1 {
        draw_line(&mut img, (px(series[0].0), py(series[0].1)), (px(series[0].0), py(series[0].1)), LINE);
    }
    img.save(out).map_err(|e| Error::Data(format!("{}: {e}", out.display())))?;
    Ok(())
}

/// Emit `<prefix>_loss.png` and, when eval rows exist, `<prefix>_score.png`.
pub fn plot_metrics(csv: &Path, out_prefix: &Path) -> Result<Vec<std::path::PathBuf>> {
    let metrics = read_metrics(csv)?;
    if let Some(dir) = out_prefix.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let stem = out_prefix.to_string_lossy().into_owned();
    let mut written = Vec::new();
    let loss_path = std::path::PathBuf::from(format!("{stem}_loss.png"));
    render_chart(&metrics.loss, &loss_path)?;
    written.push(loss_path);
    if !metrics.eval.is_empty() {
        let score_path = std::path::PathBuf::from(format!("{stem}_score.png"));
        render_chart(&metrics.eval, &score_path)?;
        written.push(score_path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_loss_and_optional_score() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("metrics.csv");
        std::fs::write(
            &csv,
            "schema,step,loss,eval_mean_score\n1,0,12.5,\n1,1,10.0,0.25\n1,2,8.0,\n",
        )
        .unwrap();
        let out = plot_metrics(&csv, &dir.path().join("chart")).unwrap();
        assert_eq!(out.len(), 2);
        for p in &out {
            let img = image::open(p).unwrap();
            assert_eq!(img.width(), WIDTH);
        }
        // loss-only file yields a single chart
        std::fs::write(&csv, "schema,step,loss,eval_mean_score\n1,0,1.0,\n").unwrap();
        let out = plot_metrics(&csv, &dir.path().join("only")).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn malformed_metrics_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        let csv = dir.path().join("m.csv");
        std::fs::write(&csv, "wrong,header\n").unwrap();
        assert!(matches!(read_metrics(&csv), Err(Error::Data(_))));
        std::fs::write(&csv, "schema,step,loss,eval_mean_score\n1,zero,1.0,\n").unwrap();
        assert!(matches!(read_metrics(&csv), Err(Error::Data(_))));
        std::fs::write(&csv, "schema,step,loss,eval_mean_score\n").unwrap();
        assert!(matches!(read_metrics(&csv), Err(Error::Data(_))));
    }
}
