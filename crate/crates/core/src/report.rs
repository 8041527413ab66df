//! Run artifacts: `regret.csv`, `audits.json`, `instance.json`,
//! `manifest.json` and `regret.svg`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{Algorithm, ExperimentConfig};
use crate::error::Result;
use crate::harness::{AlgorithmAudit, CoverageReport, ExperimentResult, LemmaSuite, SeedStatus};

pub const REGRET_CSV: &str = "regret.csv";
pub const AUDITS_JSON: &str = "audits.json";
pub const INSTANCE_JSON: &str = "instance.json";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const REGRET_SVG: &str = "regret.svg";

/// Decimal rendering with 12 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_nan() { "NaN".into() } else if x == 0.0 { "0".into() } else { format!("{x}") };
    }
    let exp = x.abs().log10().floor() as i32;
    let decimals = (11 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub episode: usize,
    pub instant_regret: f64,
    pub cum_regret: f64,
}

pub fn write_regret_csv(path: &Path, result: &ExperimentResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["algorithm", "seed", "episode", "instant_regret", "cum_regret"])?;
    for t in result.traces() {
        for (i, (r, c)) in t.instant.iter().zip(&t.cumulative).enumerate() {
            w.write_record([t.algorithm.name().to_string(), t.seed.to_string(), (i + 1).to_string(), fmt_sig(*r), fmt_sig(*c)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_regret_csv(path: &Path) -> Result<Vec<RegretRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedAudits<'a> {
    pub seed: u64,
    pub status: &'a SeedStatus,
    pub audits: &'a [AlgorithmAudit],
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyCheck {
    pub property: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Default)]
pub struct AuditsFile<'a> {
    pub checks: Vec<PropertyCheck>,
    pub all_passed: bool,
    pub seeds: Vec<SeedAudits<'a>>,
    pub coverage: Option<CoverageReport>,
    pub lemma_suite: Option<LemmaSuite>,
}

impl<'a> AuditsFile<'a> {
    pub fn new(result: Option<&'a ExperimentResult>) -> Self {
        let mut file = Self::default();
        if let Some(res) = result {
            file.seeds = res.seeds.iter().map(|s| SeedAudits { seed: s.seed, status: &s.status, audits: &s.audits }).collect();
            let failed: Vec<String> = res
                .seeds
                .iter()
                .filter_map(|s| match &s.status {
                    SeedStatus::Failed(msg) => Some(format!("seed {}: {msg}", s.seed)),
                    SeedStatus::Ok => None,
                })
                .collect();
            file.push("runs", failed.is_empty(), if failed.is_empty() { "all seeds ok".into() } else { failed.join("; ") });
        }
        file
    }

    pub fn push(&mut self, property: &str, passed: bool, detail: String) {
        self.checks.push(PropertyCheck { property: property.to_string(), passed, detail });
        self.all_passed = self.checks.iter().all(|c| c.passed);
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub status: SeedStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<String>,
    pub wall_clock_seconds: f64,
    pub seeds: Vec<SeedEntry>,
}

impl RunManifest {
    /// Written last; lists itself among the artifacts.
    pub fn write(mut self, dir: &Path) -> Result<PathBuf> {
        self.artifacts.push(MANIFEST_JSON.to_string());
        let path = dir.join(MANIFEST_JSON);
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(path)
    }
}

const COLORS: [(Algorithm, &str); 3] =
    [(Algorithm::Shared, "#1f77b4"), (Algorithm::Independent, "#d62728"), (Algorithm::Oracle, "#2ca02c")];
const MAX_POINTS: usize = 400;

fn band(result: &ExperimentResult, alg: Algorithm) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let traces: Vec<&Vec<f64>> = result.traces().filter(|t| t.algorithm == alg).map(|t| &t.cumulative).collect();
    let n = traces.first()?.len();
    let mean = result.mean_cumulative(alg)?;
    let lo = (0..n).map(|i| traces.iter().map(|t| t[i]).fold(f64::INFINITY, f64::min)).collect();
    let hi = (0..n).map(|i| traces.iter().map(|t| t[i]).fold(f64::NEG_INFINITY, f64::max)).collect();
    Some((mean, lo, hi))
}

/// Mean cumulative regret per algorithm with its min-max band across seeds.
pub fn render_svg(result: &ExperimentResult) -> String {
    let (w, h) = (800.0, 500.0);
    let (ml, mr, mt, mb) = (70.0, 150.0, 30.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let curves: Vec<(Algorithm, &str, (Vec<f64>, Vec<f64>, Vec<f64>))> =
        COLORS.iter().filter_map(|&(a, c)| band(result, a).map(|b| (a, c, b))).collect();
    let n = curves.iter().map(|c| c.2 .0.len()).max().unwrap_or(1).max(1);
    let ymax = curves.iter().flat_map(|c| c.2 .2.iter().copied()).fold(0.0f64, f64::max).max(1e-12);
    let x = |i: usize| ml + if n > 1 { pw * i as f64 / (n - 1) as f64 } else { 0.0 };
    let y = |v: f64| mt + ph * (1.0 - v / ymax);
    let stride = n.div_ceil(MAX_POINTS).max(1);
    let idx: Vec<usize> = (0..n).step_by(stride).chain(std::iter::once(n - 1)).collect::<std::collections::BTreeSet<_>>().into_iter().collect();

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, mt + ph, ml + pw, mt + ph);
    let _ = writeln!(s, r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#, mt + ph);
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ml - 6.0, y(v) + 4.0, fmt_tick(v));
        let e = ((n - 1) as f64 * k as f64 / 4.0).round() as usize;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, x(e), mt + ph + 18.0, e + 1);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">episode</text>"#, ml + pw / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">cumulative regret</text>"#, mt + ph / 2.0, mt + ph / 2.0);
    for (k, (alg, color, (mean, lo, hi))) in curves.iter().enumerate() {
        let mut poly = String::new();
        for &i in &idx {
            let _ = write!(poly, "{:.2},{:.2} ", x(i), y(hi[i]));
        }
        for &i in idx.iter().rev() {
            let _ = write!(poly, "{:.2},{:.2} ", x(i), y(lo[i]));
        }
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, poly.trim_end());
        let line: Vec<String> = idx.iter().map(|&i| format!("{:.2},{:.2}", x(i), y(mean[i]))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let ly = mt + 20.0 * k as f64 + 10.0;
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#, ml + pw + 15.0, ml + pw + 40.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{alg}</text>"#, ml + pw + 46.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{RegretTrace, SeedResult};

    fn result() -> ExperimentResult {
        let trace = |alg, seed, xs: &[f64]| {
            let mut cum = Vec::new();
            let mut acc = 0.0;
            for x in xs {
                acc += x;
                cum.push(acc);
            }
            RegretTrace { algorithm: alg, seed, instant: xs.to_vec(), cumulative: cum }
        };
        let seeds = (0..2)
            .map(|s| SeedResult {
                seed: s,
                status: SeedStatus::Ok,
                traces: vec![
                    trace(Algorithm::Shared, s, &[0.5, 0.25, 1.0 / 3.0]),
                    trace(Algorithm::Independent, s, &[1.0, 0.123456789012345, 0.0]),
                ],
                audits: vec![],
            })
            .collect();
        ExperimentResult { seeds, instance: None }
    }

    #[test]
    fn significant_digits() {
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(1.0), "1.00000000000");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_sig(-1234.5), "-1234.50000000");
        assert_eq!(fmt_sig(2.5e-7), "0.000000250000000000");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(REGRET_CSV);
        let res = result();
        write_regret_csv(&path, &res).unwrap();
        let rows = read_regret_csv(&path).unwrap();
        assert_eq!(rows.len(), 12);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("algorithm,seed,episode,instant_regret,cum_regret\n"));
        for (row, (t, i)) in rows.iter().zip(res.traces().flat_map(|t| (0..3).map(move |i| (t, i)))) {
            assert_eq!(row.algorithm, t.algorithm);
            assert_eq!(row.episode, i + 1);
            assert!((row.instant_regret - t.instant[i]).abs() <= 1e-11 * t.instant[i].abs().max(1e-300));
            assert!((row.cum_regret - t.cumulative[i]).abs() <= 1e-11 * t.cumulative[i].abs());
        }
    }

    #[test]
    fn svg_is_deterministic() {
        let a = render_svg(&result());
        assert_eq!(a, render_svg(&result()));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 2);
        let empty = render_svg(&ExperimentResult { seeds: vec![], instance: None });
        assert!(empty.contains("</svg>"));
    }
}
