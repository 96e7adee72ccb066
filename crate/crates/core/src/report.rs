//! Metric reports (JSON) and score histograms (SVG).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{compute_eer, decidability, unlinkability, Eer, PrivacyLeakage};
use crate::protocol::{Scenario, ScoreSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub grayscale: PrivacyLeakage,
    pub binary: PrivacyLeakage,
}

/// Counts plus every metric the score set supports; the rest stay null.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct MetricReport {
    pub scenario: Scenario,
    pub eer: Option<f64>,
    pub tau: Option<f64>,
    pub d_GI: Option<f64>,
    pub d_GP: Option<f64>,
    pub d_IP: Option<f64>,
    pub D_sys: Option<f64>,
    pub leakage: Option<LeakageReport>,
    pub n_genuine: usize,
    pub n_impostor: usize,
    pub n_pseudo_impostor: usize,
    pub n_mated: usize,
    pub n_non_mated: usize,
}

fn d_prime(a: &[f64], b: &[f64]) -> Result<Option<f64>> {
    if a.is_empty() || b.is_empty() {
        return Ok(None);
    }
    decidability(a, b).map(Some)
}

impl MetricReport {
    pub fn from_scores(scenario: Scenario, s: &ScoreSet, bins: usize, clip: bool) -> Result<Self> {
        s.validate()?;
        let eer: Option<Eer> = if s.genuine.is_empty() || s.impostor.is_empty() {
            None
        } else {
            Some(compute_eer(&s.genuine, &s.impostor)?)
        };
        let d_sys = if s.mated.is_empty() || s.non_mated.is_empty() {
            None
        } else {
            Some(unlinkability(&s.mated, &s.non_mated, bins, clip)?.d_sys)
        };
        Ok(Self {
            scenario,
            eer: eer.map(|e| e.eer),
            tau: eer.map(|e| e.threshold),
            d_GI: d_prime(&s.genuine, &s.impostor)?,
            d_GP: d_prime(&s.genuine, &s.pseudo_impostor)?,
            d_IP: d_prime(&s.impostor, &s.pseudo_impostor)?,
            D_sys: d_sys,
            leakage: None,
            n_genuine: s.genuine.len(),
            n_impostor: s.impostor.len(),
            n_pseudo_impostor: s.pseudo_impostor.len(),
            n_mated: s.mated.len(),
            n_non_mated: s.non_mated.len(),
        })
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let p = path.as_ref();
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::format("json", e.to_string()))?;
    std::fs::write(p, text + "\n").map_err(|e| Error::io(p, e))
}

const COLORS: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

/// Overlaid density outlines over `[-1, 1]`, one per named series.
pub fn histogram_svg(title: &str, series: &[(&str, &[f64])], bins: usize) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let bins = bins.max(1);
    let densities: Vec<Vec<f64>> = series
        .iter()
        .map(|(_, xs)| {
            let mut c = vec![0.0; bins];
            for &x in *xs {
                let b = (((x + 1.0) / 2.0 * bins as f64).floor() as isize).clamp(0, bins as isize - 1);
                c[b as usize] += 1.0;
            }
            let n = xs.len().max(1) as f64;
            c.iter_mut().for_each(|v| *v /= n);
            c
        })
        .collect();
    let top = densities.iter().flatten().cloned().fold(0.0, f64::max).max(1e-12);
    let px = |b: usize| pad + (w - 2.0 * pad) * b as f64 / bins as f64;
    let py = |d: f64| h - pad - (h - 2.0 * pad) * d / top;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = h - pad,
        x2 = w - pad
    );
    for (i, tick) in ["-1", "-0.5", "0", "0.5", "1"].iter().enumerate() {
        let x = pad + (w - 2.0 * pad) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{tick}</text>"#,
            h - pad + 15.0
        );
    }
    for (k, ((name, _), d)) in series.iter().zip(&densities).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut path = format!("M{:.2},{:.2}", px(0), py(0.0));
        for (b, &v) in d.iter().enumerate() {
            let _ = write!(path, " L{:.2},{:.2} L{:.2},{:.2}", px(b), py(v), px(b + 1), py(v));
        }
        let _ = write!(path, " L{:.2},{:.2}", px(bins), py(0.0));
        let _ = writeln!(s, r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{} (n={})</text>"#,
            w - pad - 150.0,
            pad + 15.0 * k as f64,
            escape(name),
            series[k].1.len()
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// SVG of every populated list of a score set.
pub fn score_set_svg(title: &str, s: &ScoreSet, bins: usize) -> String {
    let all: [(&str, &[f64]); 5] = [
        ("genuine", &s.genuine),
        ("impostor", &s.impostor),
        ("pseudo-impostor", &s.pseudo_impostor),
        ("mated", &s.mated),
        ("non-mated", &s.non_mated),
    ];
    let present: Vec<(&str, &[f64])> = all.into_iter().filter(|(_, l)| !l.is_empty()).collect();
    histogram_svg(title, &present, bins)
}
