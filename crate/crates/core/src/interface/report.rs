//! Comparison tables and SVG learning curves.
//!
//! Values are shown in percent with two decimals. Deltas are computed on
//! the rounded hundredths, so a cell reading `54.32` against `51.03` is
//! always annotated `+3.29`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::interface::tables::MetricsRow;

/// One strategy's learning curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub name: String,
    pub rows: Vec<MetricsRow>,
}

/// Groups metrics rows by strategy, keeping first-appearance order.
pub fn curves_from_rows(rows: Vec<MetricsRow>) -> Vec<Curve> {
    let mut curves: Vec<Curve> = Vec::new();
    for r in rows {
        match curves.iter_mut().find(|c| c.name == r.strategy) {
            Some(c) => c.rows.push(r),
            None => curves.push(Curve {
                name: r.strategy.clone(),
                rows: vec![r],
            }),
        }
    }
    for c in &mut curves {
        c.rows.sort_by_key(|r| r.round);
    }
    curves
}

/// A published value: `series` is `group/strategy` (or a bare group name
/// for full-data rows); a row at 100 % is drawn as a horizontal asymptote.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRow {
    pub series: String,
    pub labeled_percent: f64,
    pub map_percent: f64,
}

impl ReferenceRow {
    fn group(&self) -> &str {
        self.series.split_once('/').map_or(self.series.as_str(), |(g, _)| g)
    }

    fn strategy(&self) -> &str {
        self.series.split_once('/').map_or("", |(_, s)| s)
    }

    fn is_full_data(&self) -> bool {
        (self.labeled_percent - 100.0).abs() < 1e-9
    }
}

pub fn read_reference(path: &Path) -> Result<Vec<ReferenceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header != ["series", "labeled_percent", "map_percent"] {
        return Err(Error::Record {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header series,labeled_percent,map_percent".into(),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |m: String| Error::Record {
            path: path.to_path_buf(),
            line,
            message: m,
        };
        let num = |i: usize| -> Result<f64> {
            let raw = rec.get(i).unwrap_or("").trim();
            raw.parse().map_err(|_| bad(format!("bad number `{raw}`")))
        };
        rows.push(ReferenceRow {
            series: rec.get(0).unwrap_or("").trim().to_string(),
            labeled_percent: num(1)?,
            map_percent: num(2)?,
        });
    }
    Ok(rows)
}

/// Hundredths of a percentage point.
fn centi(percent: f64) -> i64 {
    (percent * 100.0).round() as i64
}

fn fmt_centi(c: i64) -> String {
    let sign = if c < 0 { "-" } else { "" };
    format!("{sign}{}.{:02}", c.abs() / 100, c.abs() % 100)
}

/// `+3.29` / `-1.61` style annotation of a difference in hundredths.
pub fn format_delta(c: i64) -> String {
    let sign = if c < 0 { '-' } else { '+' };
    format!("{sign}{}.{:02}", c.abs() / 100, c.abs() % 100)
}

fn cell(value: i64, baseline: Option<i64>) -> String {
    match baseline {
        Some(b) => format!("{} ({})", fmt_centi(value), format_delta(value - b)),
        None => fmt_centi(value),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub markdown: String,
    pub svg: String,
    pub warnings: Vec<String>,
}

fn baseline_index(names: &[&str]) -> usize {
    names.iter().position(|n| *n == "random").unwrap_or(0)
}

fn curves_table(curves: &[Curve], out: &mut String, warnings: &mut Vec<String>) {
    let mut rounds: Option<BTreeSet<usize>> = None;
    let mut all = BTreeSet::new();
    for c in curves {
        let r: BTreeSet<usize> = c.rows.iter().map(|r| r.round).collect();
        all.extend(r.iter().copied());
        rounds = Some(match rounds {
            Some(acc) => acc.intersection(&r).copied().collect(),
            None => r,
        });
    }
    let rounds = rounds.unwrap_or_default();
    if rounds != all {
        warnings.push(format!(
            "curves cover different rounds; showing the {} common round(s) of {}",
            rounds.len(),
            all.len()
        ));
    }
    let names: Vec<&str> = curves.iter().map(|c| c.name.as_str()).collect();
    let base = baseline_index(&names);
    let with_delta = curves.len() > 1;

    out.push_str("## Learning curves (mAP %)\n\n| Round | Labeled % |");
    for (i, c) in curves.iter().enumerate() {
        if with_delta && i != base {
            let _ = write!(out, " {} (+/-) |", c.name);
        } else {
            let _ = write!(out, " {} |", c.name);
        }
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(curves.len()));
    out.push('\n');
    let at = |c: &Curve, round: usize| c.rows.iter().find(|r| r.round == round).cloned();
    for &round in &rounds {
        let Some(base_row) = at(&curves[base], round) else { continue };
        let base_c = centi(base_row.map * 100.0);
        let _ = write!(out, "| {round} | {} |", fmt_centi(centi(base_row.labeled_fraction * 100.0)));
        for (i, c) in curves.iter().enumerate() {
            let v = at(c, round).map_or(0, |r| centi(r.map * 100.0));
            let b = (with_delta && i != base).then_some(base_c);
            let _ = write!(out, " {} |", cell(v, b));
        }
        out.push('\n');
    }
    out.push('\n');
}

fn reference_tables(reference: &[ReferenceRow], out: &mut String) {
    let mut groups: Vec<&str> = Vec::new();
    for r in reference {
        if !groups.contains(&r.group()) {
            groups.push(r.group());
        }
    }
    for g in groups {
        let rows: Vec<&ReferenceRow> = reference.iter().filter(|r| r.group() == g).collect();
        let mut strategies: Vec<&str> = Vec::new();
        for r in rows.iter().filter(|r| !r.is_full_data()) {
            if !strategies.contains(&r.strategy()) {
                strategies.push(r.strategy());
            }
        }
        let _ = writeln!(out, "## Reference: {g} (mAP %)\n");
        if !strategies.is_empty() {
            let base = strategies.iter().position(|s| *s == "random");
            out.push_str("| Round | Labeled % |");
            for (i, s) in strategies.iter().enumerate() {
                if base.is_some_and(|b| b != i) {
                    let _ = write!(out, " {s} (+/-) |");
                } else {
                    let _ = write!(out, " {s} |");
                }
            }
            out.push_str("\n|---|---|");
            out.push_str(&"---|".repeat(strategies.len()));
            out.push('\n');
            let mut percents: BTreeMap<i64, BTreeMap<&str, i64>> = BTreeMap::new();
            for r in rows.iter().filter(|r| !r.is_full_data()) {
                percents
                    .entry(centi(r.labeled_percent))
                    .or_default()
                    .insert(r.strategy(), centi(r.map_percent));
            }
            for (k, (pct, values)) in percents.iter().enumerate() {
                let _ = write!(out, "| {} | {} |", k + 1, fmt_centi(*pct));
                let base_v = base.and_then(|b| values.get(strategies[b]).copied());
                for (i, s) in strategies.iter().enumerate() {
                    match values.get(s) {
                        Some(&v) if base.is_some_and(|b| b != i) => {
                            let _ = write!(out, " {} |", cell(v, base_v));
                        }
                        Some(&v) => {
                            let _ = write!(out, " {} |", fmt_centi(v));
                        }
                        None => out.push_str(" - |"),
                    }
                }
                out.push('\n');
            }
            out.push('\n');
        }
        for r in rows.iter().filter(|r| r.is_full_data()) {
            let _ = writeln!(out, "Full data (100 %): {}\n", fmt_centi(centi(r.map_percent)));
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn svg_plot(curves: &[Curve], reference: &[ReferenceRow]) -> String {
    let (w, h) = (760.0, 480.0);
    let (left, right, top, bottom) = (60.0, 200.0, 30.0, 50.0);
    let mut series: Vec<(String, Vec<(f64, f64)>)> = curves
        .iter()
        .map(|c| {
            (
                c.name.clone(),
                c.rows.iter().map(|r| (r.labeled_fraction * 100.0, r.map * 100.0)).collect(),
            )
        })
        .collect();
    let mut ref_names: Vec<String> = Vec::new();
    for r in reference.iter().filter(|r| !r.is_full_data()) {
        if !ref_names.contains(&r.series) {
            ref_names.push(r.series.clone());
        }
    }
    for name in ref_names {
        let mut pts: Vec<(f64, f64)> = reference
            .iter()
            .filter(|r| r.series == name && !r.is_full_data())
            .map(|r| (r.labeled_percent, r.map_percent))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push((format!("ref {name}"), pts));
    }
    let x_max = series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.0))
        .fold(10.0f64, f64::max);
    let x_max = (x_max / 10.0).ceil() * 10.0;
    let px = |x: f64| left + (w - left - right) * x / x_max;
    let py = |y: f64| top + (h - top - bottom) * (1.0 - y / 100.0);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    for k in 0..=10 {
        let y = k as f64 * 10.0;
        let _ = writeln!(
            s,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#e0e0e0"/><text x="{:.1}" y="{:.1}" text-anchor="end">{y:.0}</text>"##,
            px(0.0),
            py(y),
            px(x_max),
            py(y),
            px(0.0) - 6.0,
            py(y) + 4.0
        );
    }
    let ticks = (x_max / 10.0) as usize;
    for k in 0..=ticks {
        let x = k as f64 * 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x:.0}</text>"#,
            px(x),
            py(0.0) + 18.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="black"/><line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{3:.1}" stroke="black"/>"#,
        px(0.0),
        py(0.0),
        px(x_max),
        py(100.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">labeled pool (%)</text>"#,
        px(x_max / 2.0),
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">mAP (%)</text>"#,
        py(50.0),
        py(50.0)
    );

    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let dash = if name.starts_with("ref ") { r#" stroke-dasharray="6 3""# } else { "" };
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="series" data-name="{name}" fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
            coords.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{0:.1}" y1="{1:.1}" x2="{2:.1}" y2="{1:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{3:.1}" y="{4:.1}">{name}</text>"#,
            w - right + 12.0,
            ly,
            w - right + 36.0,
            w - right + 42.0,
            ly + 4.0
        );
    }
    for r in reference.iter().filter(|r| r.is_full_data()) {
        let y = py(r.map_percent);
        let label = format!("{} 100%: {}", r.group(), fmt_centi(centi(r.map_percent)));
        let _ = writeln!(
            s,
            r##"<line class="asymptote" data-value="{}" x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#555" stroke-dasharray="2 4"/><text x="{:.1}" y="{:.1}" text-anchor="end" fill="#555">{label}</text>"##,
            fmt_centi(centi(r.map_percent)),
            px(0.0),
            px(x_max),
            px(x_max),
            y - 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Builds the comparison tables and plot. Needs at least one curve or
/// reference row.
pub fn build_report(curves: &[Curve], reference: &[ReferenceRow]) -> Result<Report> {
    if curves.is_empty() && reference.is_empty() {
        return Err(Error::Data("nothing to report: no curves and no reference".into()));
    }
    let mut markdown = String::from("# Active-learning report\n\n");
    let mut warnings = Vec::new();
    if !curves.is_empty() {
        curves_table(curves, &mut markdown, &mut warnings);
    }
    reference_tables(reference, &mut markdown);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(Report {
        svg: svg_plot(curves, reference),
        markdown,
        warnings,
    })
}
