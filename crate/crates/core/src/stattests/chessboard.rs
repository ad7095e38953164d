//! Chessboard heatmap of pairwise p-values as a standalone SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::PValueMatrix;
use crate::{EpfError, Result};

/// p-values at or above this are drawn black (no significant difference).
pub const CHESSBOARD_LIMIT: f64 = 0.10;

const DARK_GREEN: (f64, f64, f64) = (0.0, 100.0, 0.0);
const YELLOW: (f64, f64, f64) = (255.0, 255.0, 0.0);
const RED: (f64, f64, f64) = (255.0, 0.0, 0.0);

fn lerp(a: (f64, f64, f64), b: (f64, f64, f64), t: f64) -> (u8, u8, u8) {
    let f = |x: f64, y: f64| (x + (y - x) * t).round().clamp(0.0, 255.0) as u8;
    (f(a.0, b.0), f(a.1, b.1), f(a.2, b.2))
}

/// Fill color of a cell: dark green at p = 0 through yellow to red just
/// below the limit, black from the limit on; `None` for blank cells.
pub fn cell_color(p: Option<f64>) -> Option<String> {
    let p = p?;
    let (r, g, b) = if p >= CHESSBOARD_LIMIT {
        (0, 0, 0)
    } else {
        let t = (p / CHESSBOARD_LIMIT).clamp(0.0, 1.0);
        if t < 0.5 {
            lerp(DARK_GREEN, YELLOW, t * 2.0)
        } else {
            lerp(YELLOW, RED, (t - 0.5) * 2.0)
        }
    };
    Some(format!("#{r:02x}{g:02x}{b:02x}"))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG text of the chessboard. Rows (Y-axis) are the models being beaten,
/// columns (X-axis) the models that beat them, in the matrix order.
pub fn render_chessboard(matrix: &PValueMatrix, title: &str) -> String {
    const CELL: usize = 32;
    let k = matrix.names.len();
    let label_w = 12 + 7 * matrix.names.iter().map(|n| n.chars().count()).max().unwrap_or(0);
    let top = 40 + label_w;
    let legend_w = 60;
    let width = label_w + k * CELL + legend_w + 20;
    let height = top + k * CELL + 20;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" font-size="14">{}</text>"#, label_w, escape(title));
    for (i, name) in matrix.names.iter().enumerate() {
        let y = top + i * CELL + CELL / 2 + 4;
        let _ = writeln!(svg, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, label_w - 6, escape(name));
        let x = label_w + i * CELL + CELL / 2 + 4;
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" transform="rotate(-90 {x} {})">{}</text>"#,
            top - 6,
            top - 6,
            escape(name)
        );
    }
    for i in 0..k {
        for j in 0..k {
            let (x, y) = (label_w + j * CELL, top + i * CELL);
            let p = matrix.values[i][j];
            match cell_color(p) {
                Some(color) => {
                    let _ = writeln!(
                        svg,
                        r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{color}" stroke="white"><title>{} vs {}: p = {}</title></rect>"#,
                        escape(&matrix.names[i]),
                        escape(&matrix.names[j]),
                        p.unwrap_or(f64::NAN)
                    );
                }
                None => {
                    let _ = writeln!(
                        svg,
                        r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="white" stroke="#cccccc"/>"##
                    );
                }
            }
        }
    }
    // Legend: the colour scale from 0 to the limit, then black.
    let lx = label_w + k * CELL + 20;
    let steps = 10;
    let step_h = (k * CELL).max(steps * 6) / (steps + 1);
    for s in 0..=steps {
        let p = if s == steps { CHESSBOARD_LIMIT } else { CHESSBOARD_LIMIT * s as f64 / steps as f64 };
        let color = cell_color(Some(p)).expect("finite p");
        let y = top + s * step_h;
        let _ = writeln!(svg, r#"<rect x="{lx}" y="{y}" width="14" height="{step_h}" fill="{color}"/>"#);
        if s % 5 == 0 {
            let _ = writeln!(svg, r#"<text x="{}" y="{}" font-size="10">{p:.2}</text>"#, lx + 18, y + step_h / 2 + 3);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes the SVG to `svg_path` and the raw p-values next to it as CSV.
pub fn write_chessboard_svg(matrix: &PValueMatrix, title: &str, svg_path: impl AsRef<Path>) -> Result<()> {
    let svg_path = svg_path.as_ref();
    fs::write(svg_path, render_chessboard(matrix, title)).map_err(|e| EpfError::io(svg_path, e))?;
    matrix.write_csv(svg_path.with_extension("csv"))
}
