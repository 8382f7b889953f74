//! Comparison tables and the MAE-versus-M plot.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::planner::PlanResult;

/// Mean score of one method at one light count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    pub m: usize,
    pub runs: usize,
    pub mean_mae_deg: f64,
    pub median_mae_deg: f64,
    /// 1 for the lowest mean MAE among methods at the same `m`.
    pub rank: usize,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Groups rows by (m, method), averages, and ranks methods within each m.
/// Output is sorted by m, then rank, then method name.
pub fn summarize(rows: &[PlanResult]) -> Vec<MethodSummary> {
    let mut groups: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.m, r.method.clone())).or_default().push(r.mae_deg);
    }
    let mut out: Vec<MethodSummary> = groups
        .into_iter()
        .map(|((m, method), maes)| MethodSummary {
            method,
            m,
            runs: maes.len(),
            mean_mae_deg: maes.iter().sum::<f64>() / maes.len() as f64,
            median_mae_deg: median(&maes),
            rank: 0,
        })
        .collect();
    out.sort_by(|a, b| {
        a.m.cmp(&b.m)
            .then(a.mean_mae_deg.total_cmp(&b.mean_mae_deg))
            .then(a.method.cmp(&b.method))
    });
    let mut rank = 0;
    let mut last_m = None;
    for s in &mut out {
        if last_m != Some(s.m) {
            rank = 0;
            last_m = Some(s.m);
        }
        rank += 1;
        s.rank = rank;
    }
    out
}

fn join_indices(idx: &[usize]) -> String {
    idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

/// `method,m,seed,mae_deg,bin_indices` with indices separated by `;`.
pub fn rows_csv(rows: &[PlanResult]) -> String {
    let mut out = String::from("method,m,seed,mae_deg,bin_indices\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.method,
            r.m,
            r.seed,
            r.mae_deg,
            join_indices(&r.bin_indices)
        );
    }
    out
}

pub fn summary_csv(summary: &[MethodSummary]) -> String {
    let mut out = String::from("method,m,runs,mean_mae_deg,median_mae_deg,rank\n");
    for s in summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.method, s.m, s.runs, s.mean_mae_deg, s.median_mae_deg, s.rank
        );
    }
    out
}

pub fn timings_csv(rows: &[PlanResult]) -> String {
    let mut out = String::from("method,m,seed,wall_time_ms\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:.3}", r.method, r.m, r.seed, r.wall_time_ms);
    }
    out
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    step * mag
}

/// Line plot of mean MAE against the number of lights, one polyline per
/// method.
pub fn mae_vs_m_svg(summary: &[MethodSummary]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (64.0, 140.0, 24.0, 48.0);
    let mut by_method: BTreeMap<&str, Vec<(usize, f64)>> = BTreeMap::new();
    for s in summary {
        by_method.entry(&s.method).or_default().push((s.m, s.mean_mae_deg));
    }
    for pts in by_method.values_mut() {
        pts.sort_by_key(|p| p.0);
    }
    let ms: Vec<usize> = summary.iter().map(|s| s.m).collect();
    let (m_lo, m_hi) = match (ms.iter().min(), ms.iter().max()) {
        (Some(&a), Some(&b)) => (a as f64, b as f64),
        _ => (0.0, 1.0),
    };
    let (m_lo, m_hi) = if m_lo == m_hi { (m_lo - 1.0, m_hi + 1.0) } else { (m_lo, m_hi) };
    let ys: Vec<f64> = summary.iter().map(|s| s.mean_mae_deg).filter(|v| v.is_finite()).collect();
    let y_max = ys.iter().cloned().fold(0.0, f64::max);
    let step = nice_step(if y_max > 0.0 { y_max } else { 1.0 });
    let y_hi = (y_max / step).ceil().max(1.0) * step;

    let px = |m: f64| left + (m - m_lo) / (m_hi - m_lo) * (w - left - right);
    let py = |v: f64| top + (1.0 - v / y_hi) * (h - top - bottom);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (left, w - right, top, h - bottom);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0},{y0} L{x0},{y1} L{x1},{y1}" fill="none" stroke="black"/>"#
    );
    let mut v = 0.0;
    while v <= y_hi + 1e-9 {
        let y = py(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            x0 - 6.0,
            y + 4.0,
            trim_float(v)
        );
        v += step;
    }
    let mut distinct_m = ms.clone();
    distinct_m.sort_unstable();
    distinct_m.dedup();
    for m in &distinct_m {
        let x = px(*m as f64);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{m}</text>"#,
            y1 + 4.0,
            y1 + 18.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">number of lights M</text>"#,
        (x0 + x1) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">mean angular error (deg)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (i, (method, pts)) in by_method.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let finite: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(m, v)| (px(m as f64), py(v)))
            .collect();
        if finite.len() > 1 {
            let d: Vec<String> = finite
                .iter()
                .enumerate()
                .map(|(j, (x, y))| format!("{}{x:.2},{y:.2}", if j == 0 { "M" } else { "L" }))
                .collect();
            let _ = writeln!(
                svg,
                r#"<path d="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                d.join(" ")
            );
        }
        for (x, y) in &finite {
            let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{color}"/>"#);
        }
        let ly = top + 16.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            x1 + 16.0,
            x1 + 36.0,
            x1 + 42.0,
            ly + 4.0,
            escape(method)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, m: usize, seed: u64, mae: f64) -> PlanResult {
        PlanResult {
            method: method.into(),
            m,
            seed,
            bin_indices: (0..m).collect(),
            mae_deg: mae,
            wall_time_ms: 1.0,
        }
    }

    #[test]
    fn single_method_single_row() {
        let s = summarize(&[row("exhaustive", 3, 0, 2.5)]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].rank, 1);
        assert_eq!(s[0].mean_mae_deg, 2.5);
    }

    #[test]
    fn ranking_within_each_m() {
        let rows = vec![
            row("random", 3, 0, 9.0),
            row("random", 3, 1, 11.0),
            row("kmeans", 3, 0, 8.0),
            row("random", 4, 0, 5.0),
            row("kmeans", 4, 0, 6.0),
        ];
        let s = summarize(&rows);
        let get = |m: usize, name: &str| s.iter().find(|x| x.m == m && x.method == name).unwrap();
        assert_eq!(get(3, "kmeans").rank, 1);
        assert_eq!(get(3, "random").rank, 2);
        assert_eq!(get(3, "random").mean_mae_deg, 10.0);
        assert_eq!(get(4, "random").rank, 1);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn csv_layout() {
        let csv = rows_csv(&[row("kmeans", 2, 7, 1.5)]);
        assert_eq!(csv, "method,m,seed,mae_deg,bin_indices\nkmeans,2,7,1.5,0;1\n");
    }

    #[test]
    fn svg_has_one_line_per_method() {
        let rows = vec![
            row("random", 3, 0, 9.0),
            row("random", 4, 0, 7.0),
            row("exhaustive", 3, 0, 4.0),
            row("exhaustive", 4, 0, 3.0),
        ];
        let svg = mae_vs_m_svg(&summarize(&rows));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("stroke-width=\"2\"/>").count(), 4);
        assert!(svg.contains(">random<") && svg.contains(">exhaustive<"));
    }
}
