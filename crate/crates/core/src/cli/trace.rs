//! `trace.csv` writer.
//!
//! Columns, in order:
//! `epoch, tag_id, true_x, true_y, true_z, min_x, min_y, min_z, comp_x,
//! comp_y, comp_z, min_converged, comp_converged`, then for each anchor in
//! configuration order `d_est_a<id>, cond_true_a<id>, cond_det_a<id>`.
//! Fields of a pipeline that did not run, and undetected conditions, are
//! empty. Floats carry 9 significant digits.

use std::fmt::Write as _;

use crate::scenario::EpochEstimate;
use crate::types::{Anchor, Point3};

const FIXED_COLUMNS: [&str; 13] = [
    "epoch",
    "tag_id",
    "true_x",
    "true_y",
    "true_z",
    "min_x",
    "min_y",
    "min_z",
    "comp_x",
    "comp_y",
    "comp_z",
    "min_converged",
    "comp_converged",
];

pub fn header(anchors: &[Anchor]) -> Vec<String> {
    let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for a in anchors {
        cols.push(format!("d_est_a{}", a.id));
        cols.push(format!("cond_true_a{}", a.id));
        cols.push(format!("cond_det_a{}", a.id));
    }
    cols
}

/// Shortest of fixed or exponent notation holding 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci.split_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{x:.decimals$}");
        let trimmed = if fixed.contains('.') { fixed.trim_end_matches('0').trim_end_matches('.') } else { &fixed };
        if trimmed == "-0" {
            "0".into()
        } else {
            trimmed.into()
        }
    } else {
        let (mantissa, e) = sci.split_once('e').unwrap();
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{m}e{e}")
    }
}

fn push_point(row: &mut Vec<String>, p: Option<Point3>) {
    match p {
        Some(p) => row.extend([p.x, p.y, p.z].map(format_sig9)),
        None => row.extend(std::iter::repeat_n(String::new(), 3)),
    }
}

fn flag(b: Option<bool>) -> String {
    b.map_or(String::new(), |b| u8::from(b).to_string())
}

pub fn row(e: &EpochEstimate) -> Vec<String> {
    let mut r = vec![e.epoch.to_string(), e.tag_id.to_string()];
    push_point(&mut r, Some(e.truth));
    push_point(&mut r, e.minimum.as_ref().map(|m| m.position));
    push_point(&mut r, e.complementary.as_ref().map(|c| c.position));
    r.push(flag(e.minimum.as_ref().map(|m| m.converged)));
    r.push(flag(e.complementary.as_ref().map(|c| c.converged)));
    for m in &e.ranges {
        r.push(format_sig9(m.d_est));
        r.push(m.condition_true.as_str().into());
        r.push(m.condition_detected.map_or(String::new(), |c| c.as_str().into()));
    }
    r
}

pub fn render(anchors: &[Anchor], estimates: &[EpochEstimate]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", header(anchors).join(","));
    for e in estimates {
        let _ = writeln!(out, "{}", row(e).join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(-2.5), "-2.5");
        assert_eq!(format_sig9(28.123456789123), "28.1234568");
        assert_eq!(format_sig9(0.000123456789123), "0.000123456789");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456789012.0), "1.23456789e11");
        assert_eq!(format_sig9(1.5e-9), "1.5e-9");
        assert_eq!(format_sig9(-1e-12), "-1e-12");
    }

    #[test]
    fn parses_back_within_precision() {
        for x in [std::f64::consts::PI, -0.00731, 1e-7, 98765.4321, 299792458.0] {
            let y: f64 = format_sig9(x).parse().unwrap();
            assert!(((y - x) / x).abs() < 5e-9, "{x} -> {y}");
        }
    }

    #[test]
    fn header_layout() {
        let anchors = [Anchor::new(0, Point3::ORIGIN), Anchor::new(7, Point3::xy(1.0, 0.0))];
        let h = header(&anchors);
        assert_eq!(h.len(), 13 + 6);
        assert_eq!(&h[13..], ["d_est_a0", "cond_true_a0", "cond_det_a0", "d_est_a7", "cond_true_a7", "cond_det_a7"]);
    }
}
