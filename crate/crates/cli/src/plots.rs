//! PNG figures. Text needs a TrueType font; without one the figures are
//! still drawn, only unlabeled.

use acmil::metrics::Roc;
use acmil::training::TrainHistory;
use anyhow::{anyhow, Result};
use plotters::prelude::*;
use std::path::Path;
use std::sync::OnceLock;

const SIZE: (u32, u32) = (640, 480);
const FONT_CANDIDATES: [&str; 3] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
];

fn fonts() -> bool {
    static READY: OnceLock<bool> = OnceLock::new();
    *READY.get_or_init(|| {
        let from_env = std::env::var("ACMIL_FONT").ok();
        let paths = from_env.iter().map(String::as_str).chain(FONT_CANDIDATES);
        for path in paths {
            if let Ok(bytes) = std::fs::read(path) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        false
    })
}

fn err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e:?}")
}

fn palette(i: usize) -> RGBColor {
    const COLORS: [RGBColor; 5] = [
        RGBColor(31, 119, 180),
        RGBColor(255, 127, 14),
        RGBColor(44, 160, 44),
        RGBColor(214, 39, 40),
        RGBColor(148, 103, 189),
    ];
    COLORS[i % COLORS.len()]
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

/// ROC curves of several classifiers with the chance diagonal.
pub fn roc(path: &Path, title: &str, curves: &[(String, &Roc)]) -> Result<()> {
    let text = fonts();
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut builder = ChartBuilder::on(&root);
    builder
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50);
    if text {
        builder.caption(title, ("sans-serif", 20));
    }
    let mut chart = builder
        .build_cartesian_2d(0.0..1.0, 0.0..1.0)
        .map_err(err)?;
    let mut mesh = chart.configure_mesh();
    if text {
        mesh.x_desc("false positive rate")
            .y_desc("true positive rate");
    } else {
        mesh.x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(err)?;
    chart
        .draw_series(LineSeries::new([(0.0, 0.0), (1.0, 1.0)], BLACK.mix(0.4)))
        .map_err(err)?;
    for (i, (name, r)) in curves.iter().enumerate() {
        let color = palette(i);
        let series = chart
            .draw_series(LineSeries::new(
                r.points.iter().map(|p| (p.fpr, p.tpr)),
                color.stroke_width(2),
            ))
            .map_err(err)?;
        if text {
            series
                .label(format!("{name} (AUC {:.3})", r.auc))
                .legend(move |(x, y)| {
                    PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2))
                });
        }
    }
    if text && !curves.is_empty() {
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
    }
    root.present().map_err(err)
}

/// Tick text with enough digits for narrow ranges.
fn tick(range: f64) -> impl Fn(&f64) -> String {
    move |v: &f64| {
        if range >= 0.05 {
            format!("{v:.2}")
        } else {
            format!("{v:.2e}")
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    match sorted.get(i + 1) {
        Some(next) => sorted[i] * (1.0 - frac) + next * frac,
        None => sorted[i],
    }
}

/// Box-and-whisker summary per group; whiskers span the min and max.
pub fn boxplot(
    path: &Path,
    title: &str,
    y_desc: &str,
    groups: &[(String, Vec<f64>)],
) -> Result<()> {
    let text = fonts();
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let (lo, hi) = span(groups.iter().flat_map(|(_, v)| v.iter().copied()));
    let n = groups.len().max(1);
    let mut builder = ChartBuilder::on(&root);
    builder
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60);
    if text {
        builder.caption(title, ("sans-serif", 20));
    }
    let mut chart = builder
        .build_cartesian_2d(-0.5..n as f64 - 0.5, lo..hi)
        .map_err(err)?;
    let names: Vec<String> = groups.iter().map(|(g, _)| g.clone()).collect();
    let ytick = tick(hi - lo);
    let label = |x: &f64| {
        let i = x.round();
        if (x - i).abs() < 1e-6 && i >= 0.0 {
            names.get(i as usize).cloned().unwrap_or_default()
        } else {
            String::new()
        }
    };
    let mut mesh = chart.configure_mesh();
    mesh.disable_x_mesh();
    if text {
        mesh.x_labels(n)
            .x_label_formatter(&label)
            .y_label_formatter(&ytick)
            .y_desc(y_desc);
    } else {
        mesh.x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(err)?;
    for (i, (_, values)) in groups.iter().enumerate() {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let x = i as f64;
        let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let color = palette(i);
        chart
            .draw_series([Rectangle::new(
                [(x - 0.25, q1), (x + 0.25, q3)],
                color.mix(0.35).filled(),
            )])
            .map_err(err)?;
        chart
            .draw_series([Rectangle::new(
                [(x - 0.25, q1), (x + 0.25, q3)],
                color.stroke_width(2),
            )])
            .map_err(err)?;
        let lines = [
            [(x - 0.25, med), (x + 0.25, med)],
            [(x, v[0]), (x, q1)],
            [(x, q3), (x, v[v.len() - 1])],
            [(x - 0.1, v[0]), (x + 0.1, v[0])],
            [(x - 0.1, v[v.len() - 1]), (x + 0.1, v[v.len() - 1])],
        ];
        chart
            .draw_series(
                lines
                    .into_iter()
                    .map(|l| PathElement::new(l, BLACK.stroke_width(2))),
            )
            .map_err(err)?;
    }
    root.present().map_err(err)
}

/// Labelled point clouds, e.g. train and test features after PCA.
pub fn scatter(path: &Path, title: &str, clouds: &[(String, Vec<(f64, f64)>)]) -> Result<()> {
    let text = fonts();
    let root = BitMapBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let (x0, x1) = span(clouds.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y0, y1) = span(clouds.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let mut builder = ChartBuilder::on(&root);
    builder
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50);
    if text {
        builder.caption(title, ("sans-serif", 20));
    }
    let mut chart = builder.build_cartesian_2d(x0..x1, y0..y1).map_err(err)?;
    let mut mesh = chart.configure_mesh();
    if text {
        mesh.x_desc("PC1").y_desc("PC2");
    } else {
        mesh.x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(err)?;
    for (i, (name, points)) in clouds.iter().enumerate() {
        let color = palette(i);
        let series = chart
            .draw_series(
                points
                    .iter()
                    .map(|&p| Circle::new(p, 3, color.mix(0.7).filled())),
            )
            .map_err(err)?;
        if text {
            series
                .label(name.as_str())
                .legend(move |(x, y)| Circle::new((x + 8, y), 4, color.filled()));
        }
    }
    if text && !clouds.is_empty() {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
    }
    root.present().map_err(err)
}

/// Training loss and validation QWK per epoch.
pub fn history(path: &Path, history: &TrainHistory) -> Result<()> {
    let text = fonts();
    let root = BitMapBackend::new(path, (640, 640)).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let (top, bottom) = root.split_vertically(320);
    let epochs = history.records.len().max(2) as f64;
    let x_range = 1.0..epochs;

    let (lo, hi) = span(history.records.iter().flat_map(|r| [r.total, r.task]));
    let mut builder = ChartBuilder::on(&top);
    builder
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50);
    if text {
        builder.caption("training loss", ("sans-serif", 18));
    }
    let mut chart = builder
        .build_cartesian_2d(x_range.clone(), lo..hi)
        .map_err(err)?;
    let mut mesh = chart.configure_mesh();
    if !text {
        mesh.x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(err)?;
    let series: [(&str, fn(&acmil::training::EpochRecord) -> f64); 2] =
        [("total", |r| r.total), ("task", |r| r.task)];
    for (i, (name, get)) in series.into_iter().enumerate() {
        let color = palette(i);
        let s = chart
            .draw_series(LineSeries::new(
                history.records.iter().map(|r| (r.epoch as f64, get(r))),
                color.stroke_width(2),
            ))
            .map_err(err)?;
        if text {
            s.label(name).legend(move |(x, y)| {
                PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2))
            });
        }
    }
    if text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
    }

    let mut builder = ChartBuilder::on(&bottom);
    builder
        .margin(10)
        .x_label_area_size(30)
        .y_label_area_size(50);
    if text {
        builder.caption("validation QWK", ("sans-serif", 18));
    }
    let mut chart = builder
        .build_cartesian_2d(x_range, -1.0..1.0)
        .map_err(err)?;
    let mut mesh = chart.configure_mesh();
    if !text {
        mesh.x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(err)?;
    chart
        .draw_series(LineSeries::new(
            history.records.iter().map(|r| (r.epoch as f64, r.val_qwk)),
            palette(2).stroke_width(2),
        ))
        .map_err(err)?;
    if let Some(best) = history.best() {
        chart
            .draw_series([Circle::new(
                (best.epoch as f64, best.val_qwk),
                5,
                palette(3).filled(),
            )])
            .map_err(err)?;
    }
    root.present().map_err(err)
}
