//! SVG loss curves and success-rate bars from JSONL files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use plotters::prelude::*;
use serde_json::Value;

const SIZE: (u32, u32) = (800, 480);
const PALETTE: [RGBColor; 4] = [BLUE, RED, GREEN, MAGENTA];

struct Curves {
    name: String,
    series: Vec<(String, Vec<(f64, f64)>)>,
}

fn read_jsonl(path: &Path) -> Result<Vec<Value>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}: not JSON", path.display(), i + 1)))
        .collect()
}

fn stem(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.split('.').next().unwrap_or("metrics").to_string()
}

/// Loss curves keyed by every numeric field other than `step`.
fn curves(name: String, rows: &[Value]) -> Curves {
    let mut series: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for row in rows {
        let Some(obj) = row.as_object() else { continue };
        let Some(step) = obj.get("step").and_then(Value::as_f64) else { continue };
        for (k, v) in obj {
            let Some(y) = v.as_f64().filter(|_| k != "step") else { continue };
            match series.iter_mut().find(|(n, _)| n == k) {
                Some((_, pts)) => pts.push((step, y)),
                None => series.push((k.clone(), vec![(step, y)])),
            }
        }
    }
    Curves { name, series }
}

/// Success rate of an episode log, or of a single evaluation report.
fn success_rate(rows: &[Value]) -> Option<f64> {
    if let [row] = rows {
        if let Some(r) = row.get("success_rate").and_then(Value::as_f64) {
            return Some(r);
        }
    }
    let flags: Vec<bool> = rows.iter().filter_map(|r| r.get("success").and_then(Value::as_bool)).collect();
    (!flags.is_empty()).then(|| flags.iter().filter(|s| **s).count() as f64 / flags.len() as f64)
}

fn draw_curves(c: &Curves, path: &Path) -> Result<()> {
    let pts = c.series.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(_, y)| y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(&c.name, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(60)
        .build_cartesian_2d(x0..x1, y0..y1)?;
    chart.configure_mesh().x_desc("step").y_desc("loss").draw()?;
    for (i, (name, p)) in c.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(p.iter().copied().filter(|(_, y)| y.is_finite()), color))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color));
    }
    chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

fn draw_bars(bars: &[(String, f64)], path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let n = bars.len() as u32;
    let mut chart = ChartBuilder::on(&root)
        .caption("success rate", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d((0u32..n).into_segmented(), 0f64..1.0)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_label_formatter(&|v| match v {
            SegmentValue::CenterOf(i) => bars.get(*i as usize).map(|b| b.0.clone()).unwrap_or_default(),
            _ => String::new(),
        })
        .draw()?;
    chart.draw_series(
        Histogram::vertical(&chart)
            .style(BLUE.filled())
            .margin(20)
            .data(bars.iter().enumerate().map(|(i, b)| (i as u32, b.1))),
    )?;
    root.present()?;
    Ok(())
}

/// Writes one curve plot per metrics file and one bar chart over all
/// episode logs. Returns the written paths.
pub fn render(inputs: &[PathBuf], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    let mut bars = Vec::new();
    for path in inputs {
        let rows = read_jsonl(path)?;
        if let Some(rate) = success_rate(&rows) {
            bars.push((stem(path), rate));
            continue;
        }
        let c = curves(stem(path), &rows);
        if c.series.is_empty() {
            bail!("{}: neither step metrics nor episode results", path.display());
        }
        let target = out.join(format!("{}_loss.svg", c.name));
        draw_curves(&c, &target)?;
        written.push(target);
    }
    if !bars.is_empty() {
        let target = out.join("success.svg");
        draw_bars(&bars, &target)?;
        written.push(target);
    }
    Ok(written)
}
