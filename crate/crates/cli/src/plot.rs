use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use plotters::prelude::*;
use serde_json::Value;

type Series = Vec<(String, Vec<(f64, f64)>)>;

fn num(v: &Value, key: &str) -> Result<f64> {
    v.get(key).and_then(Value::as_f64).ok_or_else(|| anyhow!("missing numeric field `{key}`"))
}

/// Picks a chart from the shape of a result file written by another
/// subcommand.
pub fn render(input: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let v: Value = serde_json::from_str(&text)?;
    if let Some(rows) = v.as_array() {
        let first = rows.first().ok_or_else(|| anyhow!("empty result list"))?;
        if first.get("ler").is_some() {
            let series = by_distance(rows, |r| Ok((num(r, "p")?, num(r, "ler")?)))?;
            return chart(out, "Logical error rate", "p", "LER", &series, true);
        }
        if first.get("stats").is_some() {
            let series = by_distance(rows, |r| Ok((num(r, "p")?, num(&r["stats"], "ratio")?)))?;
            return chart(out, "Residual syndrome ratio", "p", "ratio", &series, false);
        }
        bail!("unrecognised result list");
    }
    if let Some(lat) = v.get("latencies_ns").and_then(Value::as_array) {
        let pts = lat
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.as_f64().map(|l| (i as f64, l / 1e3)))
            .collect();
        return chart(out, "Feedback latency", "tick", "us", &vec![("latency".into(), pts)], false);
    }
    if let Some(rows) = v.get("rows").and_then(Value::as_array) {
        let pts = rows
            .iter()
            .map(|r| Ok((num(r, "threads")?, num(r, "median_shot_ms")?)))
            .collect::<Result<Vec<_>>>()?;
        return chart(out, "Multipatch decode time", "threads", "median ms per shot", &vec![("median".into(), pts)], false);
    }
    bail!("unrecognised result file {}", input.display())
}

fn by_distance(rows: &[Value], point: impl Fn(&Value) -> Result<(f64, f64)>) -> Result<Series> {
    let mut groups: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        let d = r.get("d").and_then(Value::as_u64).ok_or_else(|| anyhow!("missing `d`"))?;
        groups.entry(d).or_default().push(point(r)?);
    }
    Ok(groups
        .into_iter()
        .map(|(d, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            (format!("d={d}"), pts)
        })
        .collect())
}

fn chart(out: &Path, title: &str, xl: &str, yl: &str, series: &Series, log: bool) -> Result<()> {
    let pts = series.iter().flat_map(|(_, p)| p.iter().copied());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in pts {
        if log && (x <= 0.0 || y <= 0.0) {
            continue;
        }
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 > x1 {
        bail!("nothing to plot");
    }
    if x0 == x1 {
        x1 = x0 + 1.0;
    }
    if y0 == y1 {
        y1 = y0 + 1.0;
    }
    let root = SVGBackend::new(out, (800, 600)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut b = ChartBuilder::on(&root);
    b.caption(title, ("sans-serif", 24)).margin(20).x_label_area_size(40).y_label_area_size(70);
    let palette = |i: usize| Palette99::pick(i).stroke_width(2);
    if log {
        let mut c = b.build_cartesian_2d((x0..x1).log_scale(), (y0..y1).log_scale())?;
        c.configure_mesh().x_desc(xl).y_desc(yl).draw()?;
        for (i, (name, p)) in series.iter().enumerate() {
            let p: Vec<_> = p.iter().copied().filter(|&(x, y)| x > 0.0 && y > 0.0).collect();
            c.draw_series(LineSeries::new(p, palette(i)))?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], palette(i)));
        }
        c.configure_series_labels().background_style(WHITE).border_style(BLACK).draw()?;
    } else {
        let mut c = b.build_cartesian_2d(x0..x1, y0.min(0.0)..y1)?;
        c.configure_mesh().x_desc(xl).y_desc(yl).draw()?;
        for (i, (name, p)) in series.iter().enumerate() {
            c.draw_series(LineSeries::new(p.clone(), palette(i)))?
                .label(name.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], palette(i)));
        }
        c.configure_series_labels().background_style(WHITE).border_style(BLACK).draw()?;
    }
    root.present()?;
    Ok(())
}
