use std::path::Path;

use anyhow::{anyhow, bail, Result};
use plotters::prelude::*;
use serde_json::Value;

type Series = (String, Vec<(f64, f64)>);

/// Numeric fields of the records whose name satisfies `keep`, against epoch.
fn collect(records: &[Value], keep: impl Fn(&str) -> bool) -> Vec<Series> {
    let mut names: Vec<String> = Vec::new();
    for r in records {
        if let Some(obj) = r.as_object() {
            for (k, v) in obj {
                if keep(k) && v.is_number() && !names.contains(k) {
                    names.push(k.clone());
                }
            }
        }
    }
    names
        .into_iter()
        .map(|name| {
            let points = records
                .iter()
                .filter_map(|r| Some((r.get("epoch")?.as_f64()?, r.get(&name)?.as_f64()?)))
                .collect();
            (name, points)
        })
        .collect()
}

fn draw(path: &Path, title: &str, y_desc: &str, series: &[Series]) -> Result<()> {
    let all = series.iter().flat_map(|(_, p)| p.iter());
    let (mut x_max, mut y_min, mut y_max) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if !y_min.is_finite() {
        bail!("nothing to plot for {title}");
    }
    let pad = ((y_max - y_min) * 0.05).max(1e-3);
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    let err = |e: DrawingAreaErrorKind<_>| anyhow!("drawing {}: {e:?}", path.display());
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(0.0..x_max, (y_min - pad)..(y_max + pad))
        .map_err(err)?;
    chart
        .configure_mesh()
        .x_desc("epoch")
        .y_desc(y_desc)
        .draw()
        .map_err(err)?;
    for (i, (name, points)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(
                points.iter().copied(),
                color.stroke_width(2),
            ))
            .map_err(err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

/// Writes `loss.svg` and, when evaluated, `miou.svg` into `dir`.
pub fn plot_run(dir: &Path, records: &[Value]) -> Result<Vec<std::path::PathBuf>> {
    let mut written = Vec::new();
    let losses = collect(records, |k| k.starts_with("loss"));
    if losses.is_empty() {
        bail!("{} has no loss fields", dir.display());
    }
    let loss_path = dir.join("loss.svg");
    draw(&loss_path, "training losses", "loss", &losses)?;
    written.push(loss_path);
    let miou = collect(records, |k| k == "target_miou");
    if miou.iter().any(|(_, p)| !p.is_empty()) {
        let path = dir.join("miou.svg");
        draw(&path, "target mIoU", "mIoU", &miou)?;
        written.push(path);
    }
    Ok(written)
}
