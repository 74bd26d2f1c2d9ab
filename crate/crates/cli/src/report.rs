//! Human-readable run summary and an SVG chart of accuracy against MAC ratio.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Context;

use crate::output::{cost_totals, parse_frontier, COSTS_FILE, FRONTIER_FILE, SVG_FILE};
use crate::pipeline::FrontierRow;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One polyline per method over (macs_ratio, top1_accuracy).
pub fn frontier_svg(rows: &[FrontierRow]) -> String {
    let mut by_method: BTreeMap<&str, Vec<&FrontierRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(&r.method).or_default().push(r);
    }
    let x = |v: f64| PAD + v.clamp(0.0, 1.0) * (W - 2.0 * PAD);
    let y = |v: f64| H - PAD - v.clamp(0.0, 1.0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    );
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{v:.2}</text>"#, x(v), H - PAD + 18.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.2}</text>"#, PAD - 6.0, y(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">MACs ratio</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">top-1 accuracy</text>"#, H / 2.0, H / 2.0);
    for (i, (method, mut pts)) in by_method.into_iter().enumerate() {
        pts.sort_by(|a, b| a.macs_ratio.total_cmp(&b.macs_ratio));
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = pts.iter().map(|r| format!("{:.1},{:.1}", x(r.macs_ratio), y(r.top1_accuracy))).collect();
        let _ = writeln!(s, r#"<polyline data-method="{method}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, points.join(" "));
        let _ = writeln!(s, r#"<text x="{}" y="{}" fill="{color}">{method}</text>"#, W - PAD - 110.0, PAD + 16.0 * i as f64);
    }
    s.push_str("</svg>\n");
    s
}

/// Prints the frontier table and cost totals of a run directory and writes
/// frontier.svg next to them.
pub fn report(dir: &Path, out: &mut impl std::io::Write) -> anyhow::Result<()> {
    let frontier_path = dir.join(FRONTIER_FILE);
    let costs_path = dir.join(COSTS_FILE);
    let frontier = fs::read_to_string(&frontier_path).with_context(|| format!("missing {}", frontier_path.display()))?;
    let costs = fs::read_to_string(&costs_path).with_context(|| format!("missing {}", costs_path.display()))?;
    let rows = parse_frontier(&frontier)?;
    let (up, down, macs) = cost_totals(&costs)?;
    if rows.is_empty() {
        writeln!(out, "no rows")?;
    } else {
        writeln!(out, "{:<18} {:>9} {:>12} {:>10} {:>10}", "method", "iteration", "macs", "macs_ratio", "top1")?;
        for r in &rows {
            writeln!(
                out,
                "{:<18} {:>9} {:>12} {:>10.4} {:>10.4}",
                r.method, r.iteration, r.macs, r.macs_ratio, r.top1_accuracy
            )?;
        }
    }
    writeln!(out, "uplink bytes:   {up}")?;
    writeln!(out, "downlink bytes: {down}")?;
    writeln!(out, "compute MACs:   {macs}")?;
    fs::write(dir.join(SVG_FILE), frontier_svg(&rows))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, ratio: f64) -> FrontierRow {
        FrontierRow {
            method: method.into(),
            iteration: 0,
            macs: 10,
            macs_ratio: ratio,
            top1_accuracy: 0.5,
        }
    }

    #[test]
    fn one_polyline_per_method() {
        let svg = frontier_svg(&[row("decnas", 1.0), row("decnas", 0.5), row("oracle", 0.5), row("width_multiplier", 0.4)]);
        assert_eq!(svg.matches("<polyline").count(), 3);
    }
}
