//! CSV tables and static SVG charts for an [`EvaluationReport`].
//!
//! Output is a pure function of the report: numbers use fixed-precision
//! formatting and rows follow canonical group and joint order.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::{EvaluationReport, FrameLengthStats, GroupReport};
use crate::skeleton::{BoneGroup, Skeleton};

const CSV_DIGITS: usize = 12;

pub const REPORT_STEMS: [&str; 6] = [
    "bone_length",
    "variance_global",
    "variance_local",
    "velocity_global",
    "velocity_local",
    "frame_length",
];

fn num(x: f64) -> String {
    format!("{x:.CSV_DIGITS$}")
}

/// Rows: each group with a value, `overall`, then every joint with a value.
pub fn group_csv(report: &GroupReport, skeleton: &Skeleton) -> String {
    let mut out = String::from("label,deviation_pct,members,excluded\n");
    let excluded_in = |g: BoneGroup| -> usize {
        (0..skeleton.num_joints())
            .filter(|&j| skeleton.group_of(j) == Some(g))
            .map(|j| report.excluded[j])
            .sum()
    };
    for g in BoneGroup::ALL {
        if let Some(v) = report.group(g) {
            let _ = writeln!(out, "{},{},{},{}", g, num(v), report.members[g.index()], excluded_in(g));
        }
    }
    if let Some(v) = report.overall {
        let members: usize = report.members.iter().sum();
        let _ = writeln!(out, "overall,{},{},{}", num(v), members, report.total_excluded());
    }
    for (j, v) in report.per_joint.iter().enumerate() {
        if let Some(v) = v {
            let _ = writeln!(out, "{},{},1,{}", skeleton.joint_name(j), num(*v), report.excluded[j]);
        }
    }
    out
}

/// Summary rows fill `value`; histogram rows fill the bin bounds and counts.
pub fn frame_length_csv(stats: &FrameLengthStats) -> String {
    let mut out = String::from("label,value,lo,hi,pred_count,ref_count\n");
    for (label, v) in [
        ("mean_signed_rel_diff_pct", stats.mean_signed_rel_diff),
        ("mean_abs_rel_diff_pct", stats.mean_abs_rel_diff),
        ("mean_pred_frames", stats.mean_pred_len),
        ("mean_ref_frames", stats.mean_ref_len),
    ] {
        if let Some(v) = v {
            let _ = writeln!(out, "{label},{},,,,", num(v));
        }
    }
    let h = &stats.histogram;
    for k in 0..h.pred_counts.len() {
        let _ = writeln!(
            out,
            "bin_{k:02},,{},{},{},{}",
            num(h.edges[k]),
            num(h.edges[k + 1]),
            h.pred_counts[k],
            h.ref_counts[k]
        );
    }
    out
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    s
}

/// Axes with `ticks + 1` horizontal gridlines from 0 to `ymax`.
fn axes(s: &mut String, ymax: f64, ylabel: &str) {
    let (x0, y0, y1) = (LEFT, H - BOTTOM, TOP);
    let ticks = 5;
    for k in 0..=ticks {
        let v = ymax * k as f64 / ticks as f64;
        let y = y0 - (y0 - y1) * k as f64 / ticks as f64;
        let _ = writeln!(
            s,
            r##"<line x1="{x0:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##,
            W - RIGHT
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            x0 - 4.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{:.1}" y2="{y0:.1}" stroke="black"/>"#,
        W - RIGHT
    );
    let _ = writeln!(s, r#"<line x1="{x0:.1}" y1="{y0:.1}" x2="{x0:.1}" y2="{y1:.1}" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn nice_max(v: f64) -> f64 {
    if !(v > 0.0) {
        return 1.0;
    }
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if v <= m * mag {
            return m * mag;
        }
    }
    10.0 * mag
}

/// One bar per bone group.
pub fn group_svg(report: &GroupReport, title: &str) -> String {
    let mut s = svg_open(title);
    let values: Vec<(BoneGroup, f64)> = BoneGroup::ALL
        .iter()
        .filter_map(|&g| report.group(g).map(|v| (g, v)))
        .collect();
    let ymax = nice_max(values.iter().map(|v| v.1).fold(0.0, f64::max));
    axes(&mut s, ymax, "deviation (%)");
    let slot = (W - LEFT - RIGHT) / BoneGroup::ALL.len() as f64;
    let plot_h = H - BOTTOM - TOP;
    for (k, g) in BoneGroup::ALL.iter().enumerate() {
        let cx = LEFT + slot * (k as f64 + 0.5);
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            H - BOTTOM + 16.0,
            g
        );
        if let Some(v) = report.group(*g) {
            let h = plot_h * v / ymax;
            let _ = writeln!(
                s,
                r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="#4878a8"/>"##,
                cx - slot * 0.3,
                H - BOTTOM - h,
                slot * 0.6
            );
            let _ = writeln!(
                s,
                r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
                H - BOTTOM - h - 4.0
            );
        }
    }
    if let Some(o) = report.overall {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">overall {o:.2}%</text>"#,
            W - RIGHT,
            H - 12.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Overlaid predicted and reference frame-length histograms.
pub fn frame_length_svg(stats: &FrameLengthStats) -> String {
    let mut s = svg_open("Frame length distribution");
    let h = &stats.histogram;
    let peak = h
        .pred_counts
        .iter()
        .chain(&h.ref_counts)
        .copied()
        .max()
        .unwrap_or(0);
    let ymax = nice_max(peak as f64);
    axes(&mut s, ymax, "sequences");
    let bins = h.pred_counts.len();
    if bins > 0 {
        let slot = (W - LEFT - RIGHT) / bins as f64;
        let plot_h = H - BOTTOM - TOP;
        for k in 0..bins {
            let x = LEFT + slot * k as f64;
            for (count, color, off) in [(h.ref_counts[k], "#e08a3c", 0.1), (h.pred_counts[k], "#4878a8", 0.5)] {
                let bh = plot_h * count as f64 / ymax;
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{bh:.1}" fill="{color}" fill-opacity="0.8"/>"#,
                    x + slot * off,
                    H - BOTTOM - bh,
                    slot * 0.4
                );
            }
        }
        for k in [0, bins / 2, bins] {
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.1}</text>"#,
                LEFT + slot * k as f64,
                H - BOTTOM + 16.0,
                h.edges[k]
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="#e08a3c"/><text x="{:.1}" y="{:.1}">reference</text>"##,
        LEFT,
        H - 22.0,
        LEFT + 14.0,
        H - 13.0
    );
    let _ = writeln!(
        s,
        r##"<rect x="{:.1}" y="{:.1}" width="10" height="10" fill="#4878a8"/><text x="{:.1}" y="{:.1}">prediction</text>"##,
        LEFT + 90.0,
        H - 22.0,
        LEFT + 104.0,
        H - 13.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">frames</text>"#,
        (LEFT + W - RIGHT) / 2.0,
        H - 24.0
    );
    s.push_str("</svg>\n");
    s
}

/// Writes the six CSV tables and their charts into `out_dir`, creating it if
/// needed. Returns the written paths in a fixed order.
pub fn emit_report(report: &EvaluationReport, skeleton: &Skeleton, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let groups: [(&str, &GroupReport, &str); 5] = [
        ("bone_length", &report.bone_length, "Bone length deviation (%)"),
        ("variance_global", &report.variance_global, "Global movement variance deviation (%)"),
        ("variance_local", &report.variance_local, "Local movement variance deviation (%)"),
        ("velocity_global", &report.velocity_global, "Global movement velocity deviation (%)"),
        ("velocity_local", &report.velocity_local, "Local movement velocity deviation (%)"),
    ];
    let mut files: Vec<(String, String)> = Vec::new();
    for (stem, rep, title) in groups {
        files.push((format!("{stem}.csv"), group_csv(rep, skeleton)));
        files.push((format!("{stem}.svg"), group_svg(rep, title)));
    }
    files.push(("frame_length.csv".into(), frame_length_csv(&report.frame_length)));
    files.push(("frame_length.svg".into(), frame_length_svg(&report.frame_length)));
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::evaluate;
    use crate::posedata::{Dataset, Split};
    use crate::skeleton::default_skeleton;

    #[test]
    fn empty_pair_gives_header_only_csvs() {
        let s = default_skeleton();
        let d = Dataset::new(s.clone(), vec![], Split::Test).unwrap();
        let rep = evaluate(&d, &d).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&rep, &s, dir.path()).unwrap();
        assert_eq!(files.len(), 12);
        for stem in REPORT_STEMS {
            let csv = std::fs::read_to_string(dir.path().join(format!("{stem}.csv"))).unwrap();
            assert_eq!(csv.lines().count(), 1, "{stem}");
            let svg = std::fs::read_to_string(dir.path().join(format!("{stem}.svg"))).unwrap();
            assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        }
    }

    #[test]
    fn nice_max_rounds_up() {
        assert_eq!(nice_max(0.0), 1.0);
        assert_eq!(nice_max(7.3), 10.0);
        assert_eq!(nice_max(21.0), 25.0);
        assert_eq!(nice_max(0.15), 0.2);
    }
}
