//! SVG training curves from a metrics log.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::ppo::BatchRecord;

type Series<'a> = (&'a str, Vec<(f64, f64)>);

fn draw(path: &Path, title: &str, series: &[Series]) -> Result<()> {
    let points: Vec<&(f64, f64)> = series.iter().flat_map(|(_, s)| s).collect();
    if points.is_empty() {
        return Ok(());
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &&(x, y) in &points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);
    let plot_err = |e: &dyn std::fmt::Display| Error::format(path, format!("plotting failed: {e}"));

    let root = SVGBackend::new(path, (800, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, (y0 - pad)..(y1 + pad))
        .map_err(|e| plot_err(&e))?;
    chart
        .configure_mesh()
        .x_desc("batch")
        .draw()
        .map_err(|e| plot_err(&e))?;
    for (i, (name, s)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(*name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}

/// Writes `reward.svg`, `components.svg`, `losses.svg` and `val_cosine.svg`
/// into `dir` and returns their paths.
pub fn training_curves(records: &[BatchRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let by = |f: &dyn Fn(&BatchRecord) -> f64| {
        records
            .iter()
            .map(|r| (r.batch as f64, f(r)))
            .collect::<Vec<_>>()
    };
    let val: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.val_cosine.map(|v| (r.batch as f64, v)))
        .collect();
    let plots: Vec<(&str, &str, Vec<Series>)> = vec![
        (
            "reward.svg",
            "mean total reward",
            vec![("total", by(&|r| r.rewards.total.mean))],
        ),
        (
            "components.svg",
            "reward components",
            vec![
                ("pairing", by(&|r| r.rewards.pairing.mean)),
                ("kl", by(&|r| r.rewards.kl.mean)),
                ("entropy", by(&|r| r.rewards.entropy.mean)),
                ("repetition", by(&|r| r.rewards.repetition.mean)),
            ],
        ),
        (
            "losses.svg",
            "losses",
            vec![
                ("policy", by(&|r| r.policy_loss)),
                ("value", by(&|r| r.value_loss)),
            ],
        ),
        (
            "val_cosine.svg",
            "cosine",
            vec![
                ("train sample", by(&|r| r.rewards.cosine.mean)),
                ("validation greedy", val),
            ],
        ),
    ];
    let mut out = Vec::new();
    for (file, title, series) in plots {
        let path = dir.join(file);
        draw(&path, title, &series)?;
        out.push(path);
    }
    Ok(out)
}
