//! CSV tables and static SVG figures for experiment outputs.
//!
//! CSV is the authoritative data; every SVG is rendered from the same numbers.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::lfc::PolicyClass;
use crate::model::DecPomdp;
use crate::pipeline::{ExperimentResult, KResult};
use crate::policy::PolicyFile;
use crate::training::CurvePoint;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Blue below zero, red above, white at zero; `scale` is the magnitude of full saturation.
pub fn diverging_color(v: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t) + 40.0 * t, 255.0 * (1.0 - t) + 40.0 * t)
    } else {
        let t = -t;
        (255.0 * (1.0 - t) + 40.0 * t, 255.0 * (1.0 - t) + 90.0 * t, 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// One rect per cell with the value printed inside.
pub fn heatmap_svg(values: &[Vec<f64>], labels: &[String], title: &str) -> String {
    let n = values.len();
    let cell = if n <= 12 { 44.0 } else { (528.0 / n as f64).max(6.0) };
    let margin = 70.0;
    let size = margin + cell * n as f64 + 20.0;
    let scale = values.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let annotate = cell >= 24.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{h}" font-family="sans-serif">"#,
        h = size + 20.0
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, size / 2.0, esc(title));
    for (k, row) in values.iter().enumerate() {
        let y = margin + k as f64 * cell;
        if cell >= 12.0 {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{}</text>"#,
                margin - 4.0,
                y + cell / 2.0 + 3.0,
                esc(&labels[k])
            );
        }
        for (l, &v) in row.iter().enumerate() {
            let x = margin + l as f64 * cell;
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}" stroke="#ffffff" stroke-width="0.5"><title>{}</title></rect>"##,
                diverging_color(v, scale),
                format_args!("{} vs {}: {v:.4}", esc(&labels[k]), esc(&labels[l]))
            );
            if annotate {
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{v:.2}</text>"#,
                    x + cell / 2.0,
                    y + cell / 2.0 + 3.0
                );
            }
        }
    }
    if cell >= 12.0 {
        for (l, label) in labels.iter().enumerate() {
            let x = margin + l as f64 * cell + cell / 2.0;
            let _ = writeln!(
                s,
                r#"<text x="{x}" y="{}" font-size="10" text-anchor="start" transform="rotate(-60 {x} {})">{}</text>"#,
                margin - 4.0,
                margin - 4.0,
                esc(label)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Symmetric error bar per point.
    pub errors: Option<Vec<f64>>,
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

/// Polyline chart with optional error bars and a legend.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 60.0, 150.0, 36.0, 46.0);
    let pts = || series.iter().flat_map(|s| s.points.iter().enumerate().map(move |(i, p)| (s, i, *p)));
    let mut x0 = f64::INFINITY;
    let mut x1 = f64::NEG_INFINITY;
    let mut y0 = f64::INFINITY;
    let mut y1 = f64::NEG_INFINITY;
    for (s, i, (x, y)) in pts() {
        let e = s.errors.as_ref().map_or(0.0, |e| e[i]);
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y - e);
        y1 = y1.max(y + e);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| mt + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, ml + pw / 2.0, esc(title));
    let _ = writeln!(s, r##"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444444"/>"##);
    for t in nice_ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(s, r##"<line x1="{ml}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#dddddd"/>"##, ml + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#, ml - 4.0, y + 3.0, fmt_tick(t));
    }
    for t in nice_ticks(x0, x1) {
        let x = px(t);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{}" font-size="10" text-anchor="middle">{}</text>"#, mt + ph + 14.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, ml + pw / 2.0, h - 8.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        esc(y_label)
    );
    for (si, ser) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let path: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        for (i, &(x, y)) in ser.points.iter().enumerate() {
            if let Some(e) = ser.errors.as_ref().map(|e| e[i]).filter(|e| *e > 0.0) {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}"/>"#,
                    px(x),
                    py(y - e),
                    px(x),
                    py(y + e)
                );
            }
            if ser.points.len() <= 40 {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(x), py(y));
            }
        }
        let ly = mt + 14.0 + 16.0 * si as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, ml + pw + 10.0, ml + pw + 28.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10">{}</text>"#, ml + pw + 32.0, ly + 3.0, esc(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(t: f64) -> String {
    let r = (t * 1e6).round() / 1e6;
    if r == r.trunc() && r.abs() < 1e9 {
        format!("{}", r as i64)
    } else {
        format!("{r}")
    }
}

/// Vertical bars, value printed above each.
pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64]) -> String {
    let (w, h, ml, mt, mb) = (80.0 + 60.0 * values.len().max(1) as f64, 320.0, 50.0, 36.0, 40.0);
    let ph = h - mt - mb;
    let top = values.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#, w / 2.0, esc(title));
    let _ = writeln!(s, r##"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="#444444"/>"##, mt + ph, w - 20.0, mt + ph);
    for (i, (&v, label)) in values.iter().zip(labels).enumerate() {
        let bh = v.max(0.0) / top * ph;
        let x = ml + 10.0 + 60.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{:.2}" width="40" height="{bh:.2}" fill="{}"/>"#,
            mt + ph - bh,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="middle">{v:.3}</text>"#, x + 20.0, mt + ph - bh - 4.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{}</text>"#, x + 20.0, mt + ph + 14.0, esc(label));
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_curve_csv<W: Write>(curve: &[CurvePoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["update_index", "mc_op_estimate", "exact_op_value", "entropy"])?;
    for c in curve {
        w.write_record([
            c.update.to_string(),
            c.mc_op_estimate.to_string(),
            c.exact_op_value.map(|v| v.to_string()).unwrap_or_default(),
            c.entropy.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per K: mean and std over hash seeds, then the per-seed values.
pub fn write_k_table_csv<W: Write>(per_k: &[KResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let n = per_k.first().map_or(0, |r| r.avg_offdiag.len());
    let mut header = vec!["k".to_string(), "mean".into(), "std".into()];
    header.extend((0..n).map(|h| format!("hash_seed_{h}")));
    w.write_record(&header)?;
    for r in per_k {
        let mut rec = vec![r.k.to_string(), r.mean.to_string(), r.std.to_string()];
        rec.extend(r.avg_offdiag.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_classes_csv<W: Write>(classes: &[PolicyClass], n_policies: usize, ids: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["class", "size", "share", "representative", "members"])?;
    for (c, class) in classes.iter().enumerate() {
        let members: Vec<&str> = class.members.iter().map(|&m| ids[m].as_str()).collect();
        w.write_record([
            c.to_string(),
            class.members.len().to_string(),
            (class.members.len() as f64 / n_policies as f64).to_string(),
            ids[class.representative].clone(),
            members.join(" "),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes)?;
    written.push(p);
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Writes every table, figure and policy file of an experiment under `dir`
/// and returns the paths written.
pub fn write_experiment(dir: &Path, d: &DecPomdp<f64>, res: &ExperimentResult) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("policies"))?;
    let mut written = Vec::new();
    let spr = res.config.seeds_per_run;
    let ids: Vec<String> = (0..res.policies.len()).map(|p| format!("r{}s{}", p / spr, p % spr)).collect();

    for (p, pi) in res.policies.iter().enumerate() {
        let json = serde_json::to_vec_pretty(&PolicyFile::from_policy(d, pi, None))?;
        write_file(dir, &format!("policies/{}.json", ids[p]), &json, &mut written)?;
    }

    let mut op = csv::Writer::from_writer(Vec::new());
    op.write_record(["policy", "run", "seed", "op_value"])?;
    for (p, v) in res.final_op_values.iter().enumerate() {
        op.write_record([ids[p].clone(), (p / spr).to_string(), (p % spr).to_string(), v.to_string()])?;
    }
    write_file(dir, "op_values.csv", &op.into_inner().map_err(|e| e.into_error())?, &mut written)?;

    let mut chi = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["hash_seed".to_string()];
    header.extend(ids.iter().cloned());
    chi.write_record(&header)?;
    for (h, row) in res.chi.iter().enumerate() {
        let mut rec = vec![res.config.hash_seeds[h].to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        chi.write_record(&rec)?;
    }
    write_file(dir, "chi.csv", &chi.into_inner().map_err(|e| e.into_error())?, &mut written)?;

    write_file(dir, "k_table.csv", &csv_bytes(|b| write_k_table_csv(&res.per_k, b))?, &mut written)?;
    let k_series = Series {
        name: "avg off-diagonal XP".into(),
        points: res.per_k.iter().map(|r| (r.k as f64, r.mean)).collect(),
        errors: Some(res.per_k.iter().map(|r| r.std).collect()),
    };
    write_file(
        dir,
        "k_curve.svg",
        line_chart_svg("Cross-play vs tie-breaking seeds", "K (seeds per run)", "avg off-diagonal XP", &[k_series]).as_bytes(),
        &mut written,
    )?;

    let run_ids: Vec<String> = (0..res.config.runs).map(|r| format!("run{r}")).collect();
    for (r, m) in res.per_k.iter().zip(&res.run_matrices) {
        write_file(dir, &format!("xp_k{}.csv", r.k), &csv_bytes(|b| m.write_csv(&run_ids, b))?, &mut written)?;
        let title = format!("XP between runs, K = {}", r.k);
        write_file(dir, &format!("xp_k{}.svg", r.k), heatmap_svg(&m.values, &run_ids, &title).as_bytes(), &mut written)?;
    }
    write_file(dir, "xp_full.csv", &csv_bytes(|b| res.full_xp.write_csv(&ids, b))?, &mut written)?;
    write_file(dir, "xp_full.svg", heatmap_svg(&res.full_xp.values, &ids, "XP between all policies").as_bytes(), &mut written)?;

    let n = res.policies.len();
    write_file(dir, "classes.csv", &csv_bytes(|b| write_classes_csv(&res.classes, n, &ids, b))?, &mut written)?;
    let labels: Vec<String> = (0..res.classes.len()).map(|c| format!("class {c}")).collect();
    let shares: Vec<f64> = res.classes.iter().map(|c| c.members.len() as f64 / n as f64).collect();
    write_file(dir, "classes.svg", bar_chart_svg("Share of policies per class", &labels, &shares).as_bytes(), &mut written)?;

    let mut tc = csv::Writer::from_writer(Vec::new());
    tc.write_record(["policy", "update_index", "exact_op_value"])?;
    for (p, curve) in res.curves.iter().enumerate() {
        for &(u, v) in curve {
            tc.write_record([ids[p].clone(), u.to_string(), v.to_string()])?;
        }
    }
    write_file(dir, "training_curves.csv", &tc.into_inner().map_err(|e| e.into_error())?, &mut written)?;
    let series: Vec<Series> = res
        .curves
        .iter()
        .enumerate()
        .filter(|(p, _)| p % spr == 0)
        .map(|(p, c)| Series { name: ids[p].clone(), points: c.iter().map(|&(u, v)| (u as f64, v)).collect(), errors: None })
        .collect();
    write_file(
        dir,
        "training_curves.svg",
        line_chart_svg("OP value during training (first seed per run)", "update", "exact OP value", &series).as_bytes(),
        &mut written,
    )?;
    Ok(written)
}
