//! Plot export: renders the metrics suite as self-contained SVG line charts,
//! four files per run, each holding a stacked pair of sub-plots. Multiple
//! runs overlay as one colored series per run; runs with an implicit sampler
//! are drawn dashed, explicit ones solid.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use batchlab_core::metrics::MetricsRow;
use batchlab_core::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 18.0;
const MARGIN_TOP: f64 = 26.0;
const MARGIN_BOTTOM: f64 = 36.0;
const GAP: f64 = 34.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// One run's metrics plus how to draw it.
#[derive(Debug, Clone)]
pub struct RunSeries {
    pub label: String,
    pub dashed: bool,
    pub rows: Vec<MetricsRow>,
}

/// Y-axis shape for a sub-plot.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Scale {
    /// Fixed [0, 1] — ratios and accuracies.
    Unit,
    /// [0, max over data] — losses on a linear axis.
    Linear,
    /// log₁₀ between the data's positive extremes — losses on a log axis.
    Log,
}

struct SubPlot {
    title: &'static str,
    field: fn(&MetricsRow) -> Option<f64>,
    scale: Scale,
}

struct Panel {
    file: &'static str,
    top: SubPlot,
    bottom: SubPlot,
}

fn panels(log_loss: bool) -> [Panel; 4] {
    let loss_scale = if log_loss { Scale::Log } else { Scale::Linear };
    [
        Panel {
            file: "plot_error.svg",
            top: SubPlot {
                title: "train error (labeled)",
                field: |r| r.train_err_labeled,
                scale: Scale::Unit,
            },
            bottom: SubPlot {
                title: "test error",
                field: |r| r.test_err,
                scale: Scale::Unit,
            },
        },
        Panel {
            file: "plot_loss.svg",
            top: SubPlot {
                title: "supervised loss",
                field: |r| r.sup_loss,
                scale: loss_scale,
            },
            bottom: SubPlot {
                title: "unsupervised loss",
                field: |r| r.unsup_loss,
                scale: loss_scale,
            },
        },
        Panel {
            file: "plot_confidence.svg",
            top: SubPlot {
                title: "mean confidence (unlabeled)",
                field: |r| r.mean_confidence_unlabeled,
                scale: Scale::Unit,
            },
            bottom: SubPlot {
                title: "pseudo-label ratio",
                field: |r| r.pseudo_label_ratio,
                scale: Scale::Unit,
            },
        },
        Panel {
            file: "plot_privileged.svg",
            top: SubPlot {
                title: "unlabeled prediction accuracy",
                field: |r| r.unlabeled_pred_acc,
                scale: Scale::Unit,
            },
            bottom: SubPlot {
                title: "pseudo-label accuracy",
                field: |r| r.pseudo_label_acc,
                scale: Scale::Unit,
            },
        },
    ]
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.001 {
        format!("{v:.0e}")
    } else if a >= 10.0 {
        format!("{v:.0}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Map a value into sub-plot pixel space; `None` for values a log axis
/// cannot place.
fn project_y(v: f64, scale: Scale, lo: f64, hi: f64, y0: f64, h: f64) -> Option<f64> {
    let t = match scale {
        Scale::Log => {
            if v <= 0.0 {
                return None;
            }
            (v.log10() - lo) / (hi - lo)
        }
        _ => (v - lo) / (hi - lo),
    };
    Some(y0 + h * (1.0 - t.clamp(0.0, 1.0)))
}

fn sub_plot_svg(
    out: &mut String,
    plot: &SubPlot,
    series: &[RunSeries],
    max_epoch: f64,
    y0: f64,
    h: f64,
) {
    let x0 = MARGIN_LEFT;
    let w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;

    // Y-range from the data (Unit is pinned to [0,1]).
    let values: Vec<f64> = series
        .iter()
        .flat_map(|s| s.rows.iter().filter_map(plot.field))
        .filter(|v| v.is_finite())
        .collect();
    let (lo, hi) = match plot.scale {
        Scale::Unit => (0.0, 1.0),
        Scale::Linear => {
            let max = values.iter().copied().fold(0.0_f64, f64::max);
            (0.0, if max > 0.0 { max * 1.05 } else { 1.0 })
        }
        Scale::Log => {
            let pos: Vec<f64> = values.into_iter().filter(|&v| v > 0.0).collect();
            let max = pos.iter().copied().fold(f64::MIN, f64::max);
            let min = pos.iter().copied().fold(f64::MAX, f64::min);
            if pos.is_empty() {
                (-3.0, 0.0)
            } else {
                (min.log10().floor(), max.log10().ceil().max(min.log10().floor() + 1.0))
            }
        }
    };

    writeln!(
        out,
        r#"<text x="{x0}" y="{}" class="title">{}</text>"#,
        y0 - 6.0,
        plot.title
    )
    .unwrap();
    writeln!(
        out,
        r#"<rect x="{x0}" y="{y0}" width="{w}" height="{h}" class="frame"/>"#
    )
    .unwrap();

    // Gridlines and tick labels: 4 y divisions, 5 x divisions.
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let y = y0 + h * (1.0 - t);
        let v = lo + (hi - lo) * t;
        let label = match plot.scale {
            Scale::Log => fmt_tick(10f64.powf(v)),
            _ => fmt_tick(v),
        };
        writeln!(out, r#"<line x1="{x0}" y1="{y}" x2="{}" y2="{y}" class="grid"/>"#, x0 + w).unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" class="tick" text-anchor="end">{label}</text>"#,
            x0 - 6.0,
            y + 3.5
        )
        .unwrap();
    }
    for k in 0..=5 {
        let t = k as f64 / 5.0;
        let x = x0 + w * t;
        writeln!(
            out,
            r#"<text x="{x}" y="{}" class="tick" text-anchor="middle">{}</text>"#,
            y0 + h + 14.0,
            fmt_tick(max_epoch * t)
        )
        .unwrap();
    }

    // One polyline per contiguous run of defined values per series.
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let mut points = String::new();
        let flush = |points: &mut String, out: &mut String| {
            if points.matches(' ').count() >= 1 {
                writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.6"{dash} points="{}"/>"#,
                    points.trim_end()
                )
                .unwrap();
            }
            points.clear();
        };
        for row in &s.rows {
            let projected = (plot.field)(row)
                .filter(|v| v.is_finite())
                .and_then(|v| project_y(v, plot.scale, lo, hi, y0, h));
            match projected {
                Some(y) => {
                    let x = x0 + w * (row.epoch / max_epoch).clamp(0.0, 1.0);
                    write!(points, "{x:.2},{y:.2} ").unwrap();
                }
                // An undefined value breaks the line rather than drawing 0.
                None => flush(&mut points, out),
            }
        }
        flush(&mut points, out);
    }
}

/// Render one panel (a pair of stacked sub-plots) for the given runs.
fn panel_svg(panel: &Panel, series: &[RunSeries], max_epoch: f64) -> String {
    let h = (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM - GAP) / 2.0;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    )
    .unwrap();
    out.push_str(
        "<style>\
         .frame{fill:none;stroke:#444;stroke-width:1}\
         .grid{stroke:#ddd;stroke-width:0.5}\
         .tick{font-size:10px;fill:#444}\
         .title{font-size:12px;fill:#111}\
         .legend{font-size:11px;fill:#111}\
         </style>\n",
    );
    sub_plot_svg(&mut out, &panel.top, series, max_epoch, MARGIN_TOP, h);
    sub_plot_svg(&mut out, &panel.bottom, series, max_epoch, MARGIN_TOP + h + GAP, h);

    // Legend in the top-right corner of the upper sub-plot.
    let lx = WIDTH - MARGIN_RIGHT - 170.0;
    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let y = MARGIN_TOP + 14.0 + 15.0 * si as f64;
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        writeln!(
            out,
            r#"<line x1="{lx}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="1.6"{dash}/>"#,
            lx + 24.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{}" y="{}" class="legend">{}</text>"#,
            lx + 30.0,
            y + 3.5,
            s.label
        )
        .unwrap();
    }
    writeln!(out, r#"<text x="{}" y="{}" class="tick" text-anchor="middle">epoch</text>"#,
        MARGIN_LEFT + (WIDTH - MARGIN_LEFT - MARGIN_RIGHT) / 2.0, HEIGHT - 6.0).unwrap();
    out.push_str("</svg>\n");
    out
}

/// Render all four panels into `out_dir`; returns the written paths.
pub fn export_plots(series: &[RunSeries], out_dir: &Path, log_loss: bool) -> Result<Vec<PathBuf>> {
    if series.iter().all(|s| s.rows.is_empty()) {
        return Err(Error::format(
            out_dir.display().to_string(),
            "no metrics rows to plot",
        ));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let max_epoch = series
        .iter()
        .flat_map(|s| s.rows.iter().map(|r| r.epoch))
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let mut written = Vec::new();
    for panel in &panels(log_loss) {
        let path = out_dir.join(panel.file);
        std::fs::write(&path, panel_svg(panel, series, max_epoch))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        written.push(path);
    }
    Ok(written)
}
