//! SVG snapshots and CSV histograms.

use std::fmt::Write;

use crate::error::Result;
use crate::numeric::Matrix;

use super::realize::GradientHistogram;
use super::{m2_from, m2_sub, op_norm2, PiecewiseAffineMap, M2};

#[derive(Clone, Debug)]
pub enum SvgColoring {
    /// Colour by the nearest reference matrix; cells farther than `delta`
    /// from all of them are grey.
    NearestAtom { atoms: Vec<Matrix>, delta: f64 },
    /// Colour ramp on `|Df|`.
    GradientNorm,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const SIZE: f64 = 800.0;

fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t).round() as u8;
    let b = (255.0 * (1.0 - t)).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

pub fn map_svg(f: &PiecewiseAffineMap, coloring: &SvgColoring) -> Result<String> {
    f.domain.require_planar()?;
    let (lo, hi) = ([f.domain.lower[0], f.domain.lower[1]], [f.domain.upper[0], f.domain.upper[1]]);
    let scale = SIZE / (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let (w, h) = ((hi[0] - lo[0]) * scale, (hi[1] - lo[1]) * scale);
    let atoms: Vec<M2> = match coloring {
        SvgColoring::NearestAtom { atoms, .. } => atoms.iter().map(m2_from).collect::<Result<_>>()?,
        SvgColoring::GradientNorm => Vec::new(),
    };
    let norms: Vec<f64> = f.cells.iter().map(|c| op_norm2(&c.matrix)).collect();
    let (nmin, nmax) = norms.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.3} {h:.3}">"#);
    for (c, norm) in f.cells.iter().zip(&norms) {
        let fill = match coloring {
            SvgColoring::NearestAtom { delta, .. } => {
                let best = atoms
                    .iter()
                    .enumerate()
                    .map(|(i, a)| (i, op_norm2(&m2_sub(&c.matrix, a))))
                    .min_by(|x, y| x.1.total_cmp(&y.1));
                match best {
                    Some((i, d)) if d < *delta => PALETTE[i % PALETTE.len()].to_string(),
                    _ => "#bbbbbb".to_string(),
                }
            }
            SvgColoring::GradientNorm => ramp(if nmax > nmin { (norm - nmin) / (nmax - nmin) } else { 0.5 }),
        };
        let pts: Vec<String> = c
            .vertices
            .iter()
            .map(|p| format!("{:.3},{:.3}", (p[0] - lo[0]) * scale, (hi[1] - p[1]) * scale))
            .collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="{fill}"/>"#, pts.join(" "));
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn matrix_cell(m: &Matrix) -> String {
    let n = m.n();
    let rows: Vec<String> = (0..n)
        .map(|i| (0..n).map(|j| format!("{}", m.get(i, j))).collect::<Vec<_>>().join(" "))
        .collect();
    rows.join("; ")
}

pub fn histogram_csv(h: &GradientHistogram) -> String {
    let mut s = String::from("index,matrix,delta,fraction\n");
    for (i, (m, d, fr)) in h.entries.iter().enumerate() {
        let _ = writeln!(s, "{i},\"{}\",{d},{fr}", matrix_cell(m));
    }
    let _ = writeln!(s, "residual,,,{}", h.residual);
    s
}
