//! Static SVG bar charts and heatmaps for the report bundle. Templated by
//! hand; no chart dependency, no interactivity.

use std::fmt::Write as _;

use crate::model::SequenceLabel;
use crate::report::ReportBundle;
use crate::stats;

const PALETTE: [&str; 6] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#76b7b2",
];

/// One bar group: a label on the x axis and one value per series.
struct Group {
    label: String,
    values: Vec<Option<f64>>,
}

struct BarChart {
    title: String,
    y_label: String,
    series: Vec<String>,
    groups: Vec<Group>,
    /// Optional horizontal reference line (e.g. uniform expectation).
    reference: Option<f64>,
}

impl BarChart {
    fn render(&self) -> String {
        let width = 760.0;
        let height = 420.0;
        let margin_left = 64.0;
        let margin_right = 16.0;
        let margin_top = 48.0;
        let margin_bottom = 72.0;
        let plot_w = width - margin_left - margin_right;
        let plot_h = height - margin_top - margin_bottom;

        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        for g in &self.groups {
            for v in g.values.iter().flatten() {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        if let Some(r) = self.reference {
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if hi == lo {
            hi = lo + 1.0;
        }
        let span = hi - lo;
        let y_of = |v: f64| margin_top + plot_h * (1.0 - (v - lo) / span);

        let mut s = String::new();
        let _ = write!(
            s,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
             viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n"
        );
        let _ = write!(
            s,
            "<text x=\"{:.2}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
            width / 2.0,
            escape(&self.title)
        );
        let _ = write!(
            s,
            "<text x=\"16\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
             transform=\"rotate(-90 16 {:.2})\">{}</text>\n",
            margin_top + plot_h / 2.0,
            margin_top + plot_h / 2.0,
            escape(&self.y_label)
        );

        // Axes and ticks.
        let _ = write!(
            s,
            "<line x1=\"{margin_left}\" y1=\"{margin_top}\" x2=\"{margin_left}\" \
             y2=\"{:.2}\" stroke=\"#333\"/>\n",
            margin_top + plot_h
        );
        for i in 0..=4 {
            let v = lo + span * i as f64 / 4.0;
            let y = y_of(v);
            let _ = write!(
                s,
                "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"#ddd\"/>\n\
                 <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{v:.2}</text>\n",
                margin_left,
                margin_left + plot_w,
                margin_left - 6.0,
                y + 3.0
            );
        }
        // Zero line when the range crosses zero.
        if lo < 0.0 && hi > 0.0 {
            let y = y_of(0.0);
            let _ = write!(
                s,
                "<line x1=\"{margin_left}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
                 stroke=\"#333\"/>\n",
                margin_left + plot_w
            );
        }

        let n_groups = self.groups.len().max(1);
        let n_series = self.series.len().max(1);
        let group_w = plot_w / n_groups as f64;
        let bar_w = (group_w * 0.8) / n_series as f64;
        let base = y_of(lo.max(0.0).min(hi));

        for (gi, g) in self.groups.iter().enumerate() {
            let gx = margin_left + gi as f64 * group_w;
            for (si, v) in g.values.iter().enumerate() {
                let Some(v) = v else { continue };
                let x = gx + group_w * 0.1 + si as f64 * bar_w;
                let y = y_of(*v);
                let (top, h) = if *v >= 0.0 {
                    (y, base - y)
                } else {
                    (base, y - base)
                };
                let _ = write!(
                    s,
                    "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
                     fill=\"{}\"><title>{}: {v:.2}</title></rect>\n",
                    bar_w * 0.92,
                    h.max(0.0),
                    PALETTE[si % PALETTE.len()],
                    escape(&g.label)
                );
            }
            let _ = write!(
                s,
                "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
                gx + group_w / 2.0,
                margin_top + plot_h + 16.0,
                escape(&g.label)
            );
        }

        if let Some(r) = self.reference {
            let y = y_of(r);
            let _ = write!(
                s,
                "<line x1=\"{margin_left}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
                 stroke=\"#666\" stroke-dasharray=\"6 4\"/>\n",
                margin_left + plot_w
            );
        }

        // Legend.
        for (si, name) in self.series.iter().enumerate() {
            let x = margin_left + si as f64 * 120.0;
            let y = height - 20.0;
            let _ = write!(
                s,
                "<rect x=\"{x:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{}\"/>\n\
                 <text x=\"{:.2}\" y=\"{y:.2}\" font-size=\"11\">{}</text>\n",
                y - 10.0,
                PALETTE[si % PALETTE.len()],
                x + 16.0,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn heatmap(title: &str, vars: &[String], r: &[Vec<Option<f64>>]) -> String {
    let n = vars.len();
    let cell = 84.0;
    let margin = 96.0;
    let width = margin + n as f64 * cell + 24.0;
    let height = margin + n as f64 * cell + 24.0;
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n\
         <text x=\"{:.2}\" y=\"28\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        width / 2.0,
        escape(title)
    );
    for (i, var) in vars.iter().enumerate() {
        let _ = write!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n\
             <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            margin + (i as f64 + 0.5) * cell,
            margin - 10.0,
            escape(var),
            margin - 10.0,
            margin + (i as f64 + 0.5) * cell + 4.0,
            escape(var)
        );
    }
    for (i, row) in r.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let x = margin + j as f64 * cell;
            let y = margin + i as f64 * cell;
            let (fill, label) = match v {
                Some(r) => {
                    // Blue for negative, red for positive, white at zero.
                    let t = (r.abs().min(1.0) * 255.0) as u8;
                    let color = if *r >= 0.0 {
                        format!("rgb(255,{},{})", 255 - t, 255 - t)
                    } else {
                        format!("rgb({},{},255)", 255 - t, 255 - t)
                    };
                    (color, format!("{r:.2}"))
                }
                None => ("#eee".to_string(), String::new()),
            };
            let _ = write!(
                s,
                "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cell}\" height=\"{cell}\" \
                 fill=\"{fill}\" stroke=\"#999\"/>\n\
                 <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{label}</text>\n",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// All chart files for a bundle as (file name, svg text) pairs.
pub fn charts(bundle: &ReportBundle) -> Vec<(String, String)> {
    let mut out = Vec::new();

    let dist = BarChart {
        title: "Sequence distribution".to_string(),
        y_label: "units".to_string(),
        series: vec!["count".to_string()],
        groups: bundle
            .distribution
            .rows
            .iter()
            .map(|r| Group {
                label: r.label.to_string(),
                values: vec![Some(r.count as f64)],
            })
            .collect(),
        reference: None,
    };
    out.push(("distribution.svg".to_string(), dist.render()));

    let lag_means = BarChart {
        title: "Mean lags by sequence".to_string(),
        y_label: "weeks".to_string(),
        series: vec!["lag1".to_string(), "lag2".to_string(), "lag3".to_string()],
        groups: SequenceLabel::SEQUENCES
            .iter()
            .map(|label| {
                let lags: Vec<[f64; 3]> = bundle
                    .assignments
                    .iter()
                    .filter(|a| a.label == *label)
                    .filter_map(|a| a.lags.map(|l| l.as_array()))
                    .collect();
                let mean_of = |k: usize| {
                    let v: Vec<f64> = lags.iter().map(|l| l[k]).collect();
                    stats::mean(&v)
                };
                Group {
                    label: label.to_string(),
                    values: vec![mean_of(0), mean_of(1), mean_of(2)],
                }
            })
            .collect(),
        reference: None,
    };
    out.push(("lags_by_sequence.svg".to_string(), lag_means.render()));

    if let Some(corr) = &bundle.correlations {
        out.push((
            "correlations.svg".to_string(),
            heatmap("Lag / vulnerability correlations", &corr.vars, &corr.r),
        ));
    }

    for panel in &bundle.crosstabs.panels {
        let k = bundle.crosstabs.income_classes;
        let chart = BarChart {
            title: format!(
                "Sequence frequency by income quartile (PDE Q{})",
                panel.pde_quantile
            ),
            y_label: "units".to_string(),
            series: (1..=k).map(|q| format!("income Q{q}")).collect(),
            groups: panel
                .rows
                .iter()
                .map(|row| Group {
                    label: row.label.to_string(),
                    values: row.counts.iter().map(|c| Some(*c as f64)).collect(),
                })
                .collect(),
            reference: None,
        };
        out.push((
            format!("crosstab_pde_q{}.svg", panel.pde_quantile),
            chart.render(),
        ));
    }

    if !bundle.income_summary.is_empty() {
        let income = BarChart {
            title: "Member income by sequence (mean with quartiles)".to_string(),
            y_label: "USD".to_string(),
            series: vec!["q1".to_string(), "mean".to_string(), "q3".to_string()],
            groups: bundle
                .income_summary
                .iter()
                .map(|(label, s)| Group {
                    label: label.to_string(),
                    values: vec![Some(s.q1), Some(s.mean), Some(s.q3)],
                })
                .collect(),
            reference: None,
        };
        out.push(("income_by_sequence.svg".to_string(), income.render()));
    }

    let disparity = BarChart {
        title: "Lag % change vs sequence mean (upper/lower income)".to_string(),
        y_label: "% change".to_string(),
        series: vec![
            "upper lag1".to_string(),
            "lower lag1".to_string(),
            "upper lag2".to_string(),
            "lower lag2".to_string(),
            "upper lag3".to_string(),
            "lower lag3".to_string(),
        ],
        groups: bundle
            .disparity
            .rows
            .iter()
            .map(|(label, lags)| Group {
                label: label.to_string(),
                values: lags.iter().flat_map(|d| [d.upper, d.lower]).collect(),
            })
            .collect(),
        reference: Some(0.0),
    };
    out.push(("disparity.svg".to_string(), disparity.render()));

    out
}
