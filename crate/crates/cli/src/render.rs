//! Standalone SVG heatmap of a grid: one rect per cell, linear color scale.

use std::fmt::Write;

use crate::grid::CpfGrid;

const CELL: f64 = 16.0;
const MARGIN: f64 = 56.0;
const BAR: f64 = 14.0;
const MISSING: &str = "#9e9e9e";

/// Dark blue through teal to yellow.
const RAMP: [(f64, [u8; 3]); 5] = [
    (0.0, [68, 1, 84]),
    (0.25, [59, 82, 139]),
    (0.5, [33, 145, 140]),
    (0.75, [94, 201, 98]),
    (1.0, [253, 231, 37]),
];

fn ramp(u: f64) -> String {
    let u = u.clamp(0.0, 1.0);
    let k = RAMP.iter().position(|(s, _)| *s >= u).unwrap_or(RAMP.len() - 1).max(1);
    let ((s0, c0), (s1, c1)) = (RAMP[k - 1], RAMP[k]);
    let w = (u - s0) / (s1 - s0);
    let mix = |i: usize| (c0[i] as f64 + w * (c1[i] as f64 - c0[i] as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(0), mix(1), mix(2))
}

/// `(min, max)` over finite cells, `None` if there are none.
pub fn value_range(grid: &CpfGrid) -> Option<(f64, f64)> {
    grid.cells.iter().map(|c| c.cpf).filter(|v| v.is_finite()).fold(None, |acc, v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// `τ` runs left to right, `t` bottom to top. A constant grid maps to the
/// middle of the ramp; cells without a value are gray.
pub fn render_svg(grid: &CpfGrid) -> String {
    let (nt, ntau) = (grid.t.len(), grid.tau.len());
    let (w, h) = (ntau as f64 * CELL, nt as f64 * CELL);
    let width = MARGIN * 2.0 + w + BAR + 48.0;
    let height = MARGIN * 2.0 + h;
    let range = value_range(grid);
    let color = |v: f64| match range {
        Some((lo, hi)) if v.is_finite() => ramp(if hi > lo { (v - lo) / (hi - lo) } else { 0.5 }),
        _ => MISSING.to_string(),
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    for i in 0..nt {
        for j in 0..ntau {
            let x = MARGIN + j as f64 * CELL;
            let y = MARGIN + (nt - 1 - i) as f64 * CELL;
            let cell = grid.at(i, j);
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}"><title>t={} tau={} cpf={}</title></rect>"#,
                color(cell.cpf),
                grid.t[i],
                grid.tau[j],
                cell.cpf
            );
        }
    }

    let bar_x = MARGIN + w + 12.0;
    let steps = 32;
    for k in 0..steps {
        let y = MARGIN + h * (k as f64 / steps as f64);
        let u = 1.0 - (k as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{bar_x}" y="{y}" width="{BAR}" height="{}" fill="{}"/>"#,
            h / steps as f64 + 0.5,
            ramp(u)
        );
    }
    let (lo, hi) = match range {
        Some((lo, hi)) => (format!("{lo:.4}"), format!("{hi:.4}")),
        None => ("n/a".into(), "n/a".into()),
    };
    let label_x = bar_x + BAR + 4.0;
    let _ = writeln!(s, r#"<text x="{label_x}" y="{}">max {hi}</text>"#, MARGIN + 10.0);
    let _ = writeln!(s, r#"<text x="{label_x}" y="{}">min {lo}</text>"#, MARGIN + h);

    let first = |v: &[f64]| v.first().copied().unwrap_or(0.0);
    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    let axis_y = MARGIN + h + 16.0;
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{axis_y}">{}</text>"#, first(&grid.tau));
    let _ = writeln!(s, r#"<text x="{}" y="{axis_y}" text-anchor="end">{}</text>"#, MARGIN + w, last(&grid.tau));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">gτ</text>"#, MARGIN + w / 2.0, axis_y + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, MARGIN - 4.0, MARGIN + h, first(&grid.t));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, MARGIN - 4.0, MARGIN + 10.0, last(&grid.t));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">gt</text>"#, MARGIN - 30.0, MARGIN + h / 2.0);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="{}">C_pf(t, τ), y = {}</text>"#, MARGIN - 12.0, grid.y);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Cell, Metadata};

    fn grid(t: Vec<f64>, tau: Vec<f64>, cells: Vec<Cell>) -> CpfGrid {
        let meta = Metadata {
            config_sha256: String::new(),
            model: "test".into(),
            seed: None,
            n_traj: None,
            code_version: "0".into(),
        };
        CpfGrid::new(t, tau, 1, cells, meta).unwrap()
    }

    fn cell_fills(svg: &str) -> Vec<&str> {
        svg.lines()
            .filter(|l| l.contains("<title>"))
            .map(|l| l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap())
            .collect()
    }

    #[test]
    fn constant_grid_is_one_color() {
        let g = grid(vec![0.0, 1.0, 2.0], vec![0.0, 1.0], vec![Cell::exact(0.0); 6]);
        let svg = render_svg(&g);
        let fills = cell_fills(&svg);
        assert_eq!(fills.len(), 6);
        assert!(fills.iter().all(|f| *f == fills[0]));
    }

    #[test]
    fn single_cell() {
        let svg = render_svg(&grid(vec![0.0], vec![0.0], vec![Cell::exact(0.25)]));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(cell_fills(&svg).len(), 1);
        assert!(svg.contains("max 0.2500") && svg.contains("min 0.2500"));
    }

    #[test]
    fn missing_cells_are_gray_and_extremes_annotated() {
        let cells = vec![Cell::exact(-0.5), Cell::failed("x".into()), Cell::exact(0.0), Cell::exact(1.5)];
        let svg = render_svg(&grid(vec![0.0, 1.0], vec![0.0, 1.0], cells));
        let fills = cell_fills(&svg);
        assert_eq!(fills[1], MISSING);
        assert_eq!(fills[0], ramp(0.0));
        assert_eq!(fills[3], ramp(1.0));
        assert!(svg.contains("min -0.5000") && svg.contains("max 1.5000"));
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(ramp(0.0), "#440154");
        assert_eq!(ramp(1.0), "#fde725");
    }
}
