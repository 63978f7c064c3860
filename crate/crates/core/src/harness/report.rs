//! Static report files: markdown tables, a JSON dump and SVG line charts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pipeline::{CfgSweepResults, DropoutSweepResults, FewShotResults, LongTailResults, MeanAccuracy};
use crate::datamodel::write_atomic;
use crate::error::{Error, Result};

pub const FEATURE_EXTRACTOR_NOTE: &str =
    "FID uses penultimate features of the internal image encoder; values are comparable only within this workspace.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportInput {
    pub config_name: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub model_seed: u64,
    pub feature_extractor: String,
    pub longtail: Option<LongTailResults>,
    pub cfg_sweep: Option<CfgSweepResults>,
    pub dropout_sweep: Option<DropoutSweepResults>,
    pub fewshot: Option<FewShotResults>,
}

impl ReportInput {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Data(format!("report input: {m}")));
        if self.longtail.is_none() && self.cfg_sweep.is_none() && self.dropout_sweep.is_none() && self.fewshot.is_none()
        {
            return bad("no results to report");
        }
        if self.config_hash.is_empty() || self.seeds.is_empty() {
            return bad("config hash and seeds are required");
        }
        if let Some(lt) = &self.longtail {
            if lt.rows.is_empty() || lt.summary.is_empty() {
                return bad("long-tail results are empty");
            }
            if lt.rows.iter().any(|r| !r.accuracy.overall.is_finite() || r.fid.is_some_and(|f| !f.is_finite())) {
                return bad("long-tail results contain non-finite values");
            }
        }
        if self.cfg_sweep.as_ref().is_some_and(|s| s.rows.is_empty()) {
            return bad("CFG sweep is empty");
        }
        if self.dropout_sweep.as_ref().is_some_and(|s| s.rows.is_empty()) {
            return bad("dropout sweep is empty");
        }
        if let Some(fs) = &self.fewshot {
            if fs.rows.is_empty() || fs.rows.iter().any(|r| r.report.trials.is_empty()) {
                return bad("few-shot results are empty");
            }
        }
        Ok(())
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:.2}", 100.0 * v))
}

fn num(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.digits$}"))
}

fn header(input: &ReportInput, title: &str) -> String {
    let seeds: Vec<String> = input.seeds.iter().map(u64::to_string).collect();
    format!(
        "# {title}\n\n- config: `{}`\n- config hash: `{}`\n- seeds: {}\n- model seed: {}\n- {}\n\n",
        input.config_name,
        input.config_hash,
        seeds.join(", "),
        input.model_seed,
        input.feature_extractor
    )
}

fn accuracy_cells(a: Option<&MeanAccuracy>) -> String {
    match a {
        Some(a) => format!(
            "{} | {} | {} | {}",
            pct(Some(a.overall)),
            pct(a.many),
            pct(a.medium),
            pct(a.few)
        ),
        None => "n/a | n/a | n/a | n/a".into(),
    }
}

pub fn longtail_table(lt: &LongTailResults) -> String {
    let mut s = String::from("| Method | Overall | Many | Median | Few | Few std | FID |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    for m in &lt.summary {
        let few_std = m.accuracy.few_std.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            s,
            "| {} | {} | {few_std} | {} |",
            m.method,
            accuracy_cells(Some(&m.accuracy)),
            num(m.fid, 3)
        );
    }
    s.push_str("\nPer seed:\n\n| Method | Seed | Overall | Many | Median | Few | FID |\n|---|---:|---:|---:|---:|---:|---:|\n");
    for r in &lt.rows {
        let a = &r.accuracy;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.method,
            r.seed,
            pct(Some(a.overall)),
            pct(a.many),
            pct(a.medium),
            pct(a.few),
            num(r.fid, 3)
        );
    }
    s
}

pub fn cfg_sweep_table(sw: &CfgSweepResults) -> String {
    let mut s = format!("Conditioning: {}\n\n", sw.method);
    s.push_str("| CFG scale | Overall | Many | Median | Few | Diversity | Feature variance | Error |\n");
    s.push_str("|---:|---:|---:|---:|---:|---:|---:|---|\n");
    for r in &sw.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            r.cfg_scale,
            accuracy_cells(r.accuracy.as_ref()),
            num(r.diversity, 4),
            num(r.feature_variance, 4),
            r.error.as_deref().unwrap_or("")
        );
    }
    s
}

pub fn dropout_table(sw: &DropoutSweepResults) -> String {
    let mut s = format!(
        "Conditioning: {} at CFG scale {}, {} images per class\n\n",
        sw.method, sw.cfg_scale, sw.images_per_class
    );
    s.push_str("| p | Embedding variance | Diversity | FID to real | Error |\n|---:|---:|---:|---:|---|\n");
    for r in &sw.rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            r.p,
            num(r.embedding_variance, 6),
            num(r.diversity, 4),
            num(r.fid_to_real, 3),
            r.error.as_deref().unwrap_or("")
        );
    }
    s
}

pub fn fewshot_table(fs: &FewShotResults) -> String {
    let mut s = format!(
        "CFG scale {}, {} synthetic images per class\n\n",
        fs.cfg_scale, fs.synthetic_per_class
    );
    s.push_str("| Method | Shots | Mean top-1 | Variance | Trials |\n|---|---:|---:|---:|---|\n");
    for r in &fs.rows {
        let trials: Vec<String> = r
            .report
            .trials
            .iter()
            .map(|t| format!("{:.2}", 100.0 * t.best_val_top1))
            .collect();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.6} | {} |",
            r.method,
            r.shots,
            pct(Some(r.report.mean)),
            r.report.variance,
            trials.join(", ")
        );
    }
    s
}

/// One line of a chart; `band` is a symmetric half-width around each point.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Place x ticks on a log₂ axis.
    pub log2_x: bool,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Chart {
    pub fn to_svg(&self) -> Result<String> {
        let (w, h) = (640.0, 400.0);
        let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
        let tx = |x: f64| if self.log2_x { x.log2() } else { x };
        let mut xs: Vec<f64> = Vec::new();
        let (mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for (i, &(x, y)) in s.points.iter().enumerate() {
                if !x.is_finite() || !y.is_finite() || (self.log2_x && x <= 0.0) {
                    return Err(Error::Data(format!("chart {:?}: point ({x}, {y}) cannot be drawn", self.title)));
                }
                if !xs.contains(&x) {
                    xs.push(x);
                }
                let b = s.band.as_ref().and_then(|b| b.get(i)).copied().unwrap_or(0.0);
                ylo = ylo.min(y - b);
                yhi = yhi.max(y + b);
            }
        }
        if xs.is_empty() {
            return Err(Error::Data(format!("chart {:?} has no points", self.title)));
        }
        xs.sort_by(f64::total_cmp);
        let (xlo, xhi) = (tx(xs[0]), tx(*xs.last().expect("non-empty")));
        let xspan = if xhi > xlo { xhi - xlo } else { 1.0 };
        let pad = if yhi > ylo { 0.05 * (yhi - ylo) } else { 0.5f64.max(yhi.abs() * 0.1) };
        let (ylo, yhi) = (ylo - pad, yhi + pad);
        let pw = w - left - right;
        let ph = h - top - bottom;
        let px = |x: f64| left + if xhi > xlo { (tx(x) - xlo) / xspan * pw } else { pw / 2.0 };
        let py = |y: f64| top + (yhi - y) / (yhi - ylo) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            left + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
        );
        for i in 0..=4 {
            let y = ylo + (yhi - ylo) * i as f64 / 4.0;
            let _ = writeln!(
                s,
                r##"<line x1="{left}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#ddd"/><text x="{2:.1}" y="{3:.1}" text-anchor="end">{4:.3}</text>"##,
                py(y),
                left + pw,
                left - 6.0,
                py(y) + 4.0,
                y
            );
        }
        for &x in &xs {
            let _ = writeln!(
                s,
                r##"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="#444"/><text x="{0:.1}" y="{3:.1}" text-anchor="middle">{4}</text>"##,
                px(x),
                top + ph,
                top + ph + 5.0,
                top + ph + 18.0,
                x
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            left + pw / 2.0,
            h - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0:.1}" text-anchor="middle" transform="rotate(-90 18 {0:.1})">{1}</text>"#,
            top + ph / 2.0,
            escape(&self.y_label)
        );
        for (si, series) in self.series.iter().enumerate() {
            let color = PALETTE[si % PALETTE.len()];
            let mut pts = series.points.clone();
            let mut band = series.band.clone();
            let mut order: Vec<usize> = (0..pts.len()).collect();
            order.sort_by(|&a, &b| pts[a].0.total_cmp(&pts[b].0));
            pts = order.iter().map(|&i| series.points[i]).collect();
            if let Some(b) = band.as_mut() {
                *b = order.iter().map(|&i| b.get(i).copied().unwrap_or(0.0)).collect();
            }
            if let Some(b) = &band {
                let upper = pts.iter().zip(b).map(|(&(x, y), d)| format!("{:.1},{:.1}", px(x), py(y + d)));
                let lower = pts.iter().zip(b).rev().map(|(&(x, y), d)| format!("{:.1},{:.1}", px(x), py(y - d)));
                let poly: Vec<String> = upper.chain(lower).collect();
                let _ = writeln!(
                    s,
                    r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                    poly.join(" ")
                );
            }
            let line: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
            for &(x, y) in &pts {
                let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y));
            }
            let ly = top + 14.0 + 18.0 * si as f64;
            let lx = left + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.1}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="{color}" stroke-width="2"/><text x="{2:.1}" y="{3:.1}">{4}</text>"#,
                ly,
                lx + 18.0,
                lx + 24.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        Ok(s)
    }
}

fn fewshot_chart(fs: &FewShotResults) -> Chart {
    let mut methods: Vec<&str> = Vec::new();
    for r in &fs.rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let series = methods
        .into_iter()
        .map(|m| {
            let rows: Vec<_> = fs.rows.iter().filter(|r| r.method == m).collect();
            Series {
                name: m.to_string(),
                points: rows.iter().map(|r| (r.shots as f64, 100.0 * r.report.mean)).collect(),
                band: Some(rows.iter().map(|r| 100.0 * r.report.variance.sqrt()).collect()),
            }
        })
        .collect();
    Chart {
        title: format!("Few-shot fine-tuning, CFG scale {}", fs.cfg_scale),
        x_label: "examples per class".into(),
        y_label: "top-1 (%)".into(),
        log2_x: true,
        series,
    }
}

fn cfg_chart(sw: &CfgSweepResults) -> Option<Chart> {
    let ok: Vec<_> = sw.rows.iter().filter_map(|r| r.accuracy.as_ref().map(|a| (r.cfg_scale, a))).collect();
    if ok.is_empty() {
        return None;
    }
    let mut series = vec![Series {
        name: "Overall".into(),
        points: ok.iter().map(|(s, a)| (*s, 100.0 * a.overall)).collect(),
        band: None,
    }];
    for (name, get) in [
        ("Many", (|a: &MeanAccuracy| a.many) as fn(&MeanAccuracy) -> Option<f64>),
        ("Median", |a| a.medium),
        ("Few", |a| a.few),
    ] {
        let pts: Vec<(f64, f64)> = ok.iter().filter_map(|(s, a)| get(a).map(|v| (*s, 100.0 * v))).collect();
        if !pts.is_empty() {
            series.push(Series {
                name: name.into(),
                points: pts,
                band: None,
            });
        }
    }
    Some(Chart {
        title: format!("CFG scale sweep ({})", sw.method),
        x_label: "CFG scale".into(),
        y_label: "top-1 (%)".into(),
        log2_x: false,
        series,
    })
}

fn dropout_charts(sw: &DropoutSweepResults) -> Vec<(&'static str, Chart)> {
    let mut out = Vec::new();
    for (file, label, get) in [
        (
            "dropout_diversity.svg",
            "within-class mean pairwise distance",
            (|r: &super::pipeline::DropoutSweepRow| r.diversity) as fn(&super::pipeline::DropoutSweepRow) -> Option<f64>,
        ),
        ("dropout_fid.svg", "FID to real", |r| r.fid_to_real),
    ] {
        let pts: Vec<(f64, f64)> = sw.rows.iter().filter_map(|r| get(r).map(|v| (r.p, v))).collect();
        if pts.is_empty() {
            continue;
        }
        out.push((
            file,
            Chart {
                title: format!("Dropout probability sweep ({})", sw.method),
                x_label: "dropout p".into(),
                y_label: label.into(),
                log2_x: false,
                series: vec![Series {
                    name: sw.method.clone(),
                    points: pts,
                    band: None,
                }],
            },
        ));
    }
    out
}

/// Render every section of `input` and write it under `outdir`.
///
/// Everything is rendered before the first file is written, so invalid
/// input leaves `outdir` untouched. Returns the written paths.
pub fn emit_report(input: &ReportInput, outdir: &Path) -> Result<Vec<PathBuf>> {
    input.validate()?;
    let mut files: Vec<(String, String)> = Vec::new();
    let mut md = header(input, &format!("Report: {}", input.config_name));
    if let Some(lt) = &input.longtail {
        let t = longtail_table(lt);
        let _ = write!(md, "## Long-tail classification\n\n{t}\n");
        files.push(("table1.md".into(), format!("{}{t}", header(input, "Long-tail classification"))));
    }
    if let Some(sw) = &input.cfg_sweep {
        let t = cfg_sweep_table(sw);
        let _ = write!(md, "## CFG scale sweep\n\n{t}\n");
        files.push(("table2.md".into(), format!("{}{t}", header(input, "CFG scale sweep"))));
        if let Some(c) = cfg_chart(sw) {
            files.push(("cfg_sweep.svg".into(), c.to_svg()?));
        }
    }
    if let Some(sw) = &input.dropout_sweep {
        let t = dropout_table(sw);
        let _ = write!(md, "## Dropout probability sweep\n\n{t}\n");
        files.push(("dropout.md".into(), format!("{}{t}", header(input, "Dropout probability sweep"))));
        for (name, c) in dropout_charts(sw) {
            files.push((name.into(), c.to_svg()?));
        }
    }
    if let Some(fs) = &input.fewshot {
        let t = fewshot_table(fs);
        let _ = write!(md, "## Few-shot fine-tuning\n\n{t}\n");
        files.push(("fewshot.md".into(), format!("{}{t}", header(input, "Few-shot fine-tuning"))));
        files.push(("fewshot.svg".into(), fewshot_chart(fs).to_svg()?));
    }
    files.push(("report.md".into(), md));
    let json = serde_json::to_string_pretty(input).map_err(|e| Error::Data(format!("serialising report: {e}")))?;
    files.push(("report.json".into(), json));

    std::fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut written = Vec::with_capacity(files.len());
    for (name, body) in files {
        let path = outdir.join(name);
        write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
