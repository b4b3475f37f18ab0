//! Small deterministic plot writers: SVG line charts for metric-vs-z
//! comparisons and PNG grids of reconstructed images. Hand-rolled so that
//! report output is a pure function of the records (byte-identical on
//! rerun).

use crate::errors::{Error, Result};
use crate::nn::Scalar;
use ndarray::Array3;
use std::fmt::Write as _;
use std::path::Path;

pub struct Series {
    pub label: String,
    /// `(x, y)` points; x positions are caller-defined (e.g. z-size index).
    pub points: Vec<(f64, f64)>,
}

const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// Renders a line chart. `x_ticks` labels the tick positions `0..n`.
pub fn line_chart_svg(title: &str, y_label: &str, x_ticks: &[String], series: &[Series]) -> String {
    let w = 640.0;
    let h = 420.0;
    let ml = 64.0;
    let mr = 140.0;
    let mt = 40.0;
    let mb = 48.0;
    let plot_w = w - ml - mr;
    let plot_h = h - mt - mb;

    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(_, y) in &s.points {
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = (y_max - y_min) * 0.08;
    y_min -= pad;
    y_max += pad;
    let x_max = (x_ticks.len().max(2) - 1) as f64;
    let sx = |x: f64| ml + x / x_max * plot_w;
    let sy = |y: f64| mt + (1.0 - (y - y_min) / (y_max - y_min)) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        ml + plot_w / 2.0
    );
    // axes
    let _ = write!(
        svg,
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n",
        mt + plot_h,
        ml + plot_w
    );
    // y ticks
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let y = sy(v);
        let _ = write!(
            svg,
            "<line x1=\"{}\" y1=\"{y}\" x2=\"{ml}\" y2=\"{y}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v:.3}</text>\n",
            ml - 4.0,
            ml - 7.0,
            y + 4.0
        );
    }
    // x ticks
    for (i, label) in x_ticks.iter().enumerate() {
        let x = sx(i as f64);
        let _ = write!(
            svg,
            "<line x1=\"{x}\" y1=\"{0}\" x2=\"{x}\" y2=\"{1}\" stroke=\"black\"/>\n\
             <text x=\"{x}\" y=\"{2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            mt + plot_h,
            mt + plot_h + 4.0,
            mt + plot_h + 18.0
        );
    }
    let _ = write!(
        svg,
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 16 {0})\" text-anchor=\"middle\">{y_label}</text>\n",
        mt + plot_h / 2.0
    );
    // series
    for (si, s) in series.iter().enumerate() {
        let color = COLORS[si % COLORS.len()];
        let mut path = String::new();
        for (i, &(x, y)) in s.points.iter().enumerate() {
            let _ = write!(path, "{}{:.2},{:.2} ", if i == 0 { "M" } else { "L" }, sx(x), sy(y));
        }
        let _ = write!(
            svg,
            "<path d=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
            path.trim_end()
        );
        for &(x, y) in &s.points {
            let _ = write!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n",
                sx(x),
                sy(y)
            );
        }
        let ly = mt + 16.0 * si as f64;
        let _ = write!(
            svg,
            "<line x1=\"{0}\" y1=\"{ly}\" x2=\"{1}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{2}\" y=\"{3}\" font-family=\"sans-serif\" font-size=\"11\">{4}</text>\n",
            ml + plot_w + 8.0,
            ml + plot_w + 28.0,
            ml + plot_w + 34.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Writes a grid of images (rows of `[3, h, w]` tensors in [0,1]) as a
/// lossless PNG with 2-pixel separators.
pub fn write_image_grid<F: Scalar>(path: &Path, rows: &[Vec<Array3<F>>]) -> Result<()> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::EmptyInput("no images".into()));
    }
    let (c, h, w) = rows[0][0].dim();
    if c != 3 {
        return Err(Error::Invalid("grid expects 3-channel images".into()));
    }
    let cols = rows.iter().map(|r| r.len()).max().unwrap();
    let gap = 2u32;
    let out_w = cols as u32 * (w as u32 + gap) + gap;
    let out_h = rows.len() as u32 * (h as u32 + gap) + gap;
    let mut img = image::RgbImage::from_pixel(out_w, out_h, image::Rgb([24, 24, 24]));
    for (ri, row) in rows.iter().enumerate() {
        for (ci, tensor) in row.iter().enumerate() {
            debug_assert_eq!(tensor.dim(), (3, h, w));
            let x0 = gap + ci as u32 * (w as u32 + gap);
            let y0 = gap + ri as u32 * (h as u32 + gap);
            for r in 0..h {
                for col in 0..w {
                    let px = image::Rgb([
                        (tensor[[0, r, col]].tof64().clamp(0.0, 1.0) * 255.0).round() as u8,
                        (tensor[[1, r, col]].tof64().clamp(0.0, 1.0) * 255.0).round() as u8,
                        (tensor[[2, r, col]].tof64().clamp(0.0, 1.0) * 255.0).round() as u8,
                    ]);
                    img.put_pixel(x0 + col as u32, y0 + r as u32, px);
                }
            }
        }
    }
    img.save(path)
        .map_err(|e| Error::Invalid(format!("png write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_deterministic_and_has_all_series() {
        let series = vec![
            Series {
                label: "AE".into(),
                points: vec![(0.0, 13.4), (1.0, 13.3)],
            },
            Series {
                label: "P.AE".into(),
                points: vec![(0.0, 2.1), (1.0, 1.6)],
            },
        ];
        let ticks = vec!["32".to_string(), "64".to_string()];
        let a = line_chart_svg("lander / mlp", "px", &ticks, &series);
        let b = line_chart_svg("lander / mlp", "px", &ticks, &series);
        assert_eq!(a, b);
        assert!(a.contains(">AE<") && a.contains(">P.AE<"));
        assert!(a.starts_with("<svg"));
    }

    #[test]
    fn image_grid_writes_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.png");
        let img = Array3::<f32>::from_elem((3, 8, 8), 0.5);
        write_image_grid(&path, &[vec![img.clone(), img.clone()], vec![img]]).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (2 + 2 * 10, 2 + 2 * 10));
        assert_eq!(back.get_pixel(3, 3), &image::Rgb([128, 128, 128]));
    }
}
