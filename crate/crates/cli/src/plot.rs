//! Minimal SVG emission for trajectory files: risk on a log axis plus the
//! per-layer alignment ratios on a unit axis, drawn as polylines against
//! the step count. Output bytes depend only on the input rows.

use linalign::experiments::io::TrajectoryTable;

const WIDTH: f64 = 880.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 70.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

const RATIO_COLORS: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];

struct Frame {
    x_min: f64,
    x_max: f64,
    log_risk_min: f64,
    log_risk_max: f64,
}

impl Frame {
    fn x(&self, step: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-12);
        MARGIN_LEFT + (step - self.x_min) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y_log_risk(&self, log_risk: f64) -> f64 {
        let span = (self.log_risk_max - self.log_risk_min).max(1e-12);
        let frac = (log_risk - self.log_risk_min) / span;
        HEIGHT - MARGIN_BOTTOM - frac * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }

    fn y_unit(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - v.clamp(0.0, 1.0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn polyline(points: &[(f64, f64)], color: &str, width: f64) -> String {
    if points.is_empty() {
        return String::new();
    }
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.4},{y:.4}"))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Renders the table to a standalone SVG document.
pub fn render(table: &TrajectoryTable) -> String {
    let steps: Vec<f64> = table.rows.iter().map(|r| r.step as f64).collect();
    let log_risks: Vec<f64> = table
        .rows
        .iter()
        .map(|r| r.risk.max(1e-300).log10())
        .collect();

    let mut x_min = steps.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut x_max = steps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if x_max - x_min < 1.0 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    let mut lr_min = log_risks.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut lr_max = log_risks.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lr_max - lr_min < 1e-9 {
        lr_min -= 0.5;
        lr_max += 0.5;
    }
    let frame = Frame {
        x_min,
        x_max,
        log_risk_min: lr_min,
        log_risk_max: lr_max,
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    // Axes.
    let x0 = MARGIN_LEFT;
    let x1 = WIDTH - MARGIN_RIGHT;
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let y1 = MARGIN_TOP;
    svg.push_str(&format!(
        "<line x1=\"{x0:.4}\" y1=\"{y0:.4}\" x2=\"{x1:.4}\" y2=\"{y0:.4}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0:.4}\" y1=\"{y0:.4}\" x2=\"{x0:.4}\" y2=\"{y1:.4}\" stroke=\"black\"/>\n"
    ));
    svg.push_str(&format!(
        "<line x1=\"{x1:.4}\" y1=\"{y0:.4}\" x2=\"{x1:.4}\" y2=\"{y1:.4}\" stroke=\"gray\"/>\n"
    ));

    // X ticks.
    for i in 0..=4 {
        let s = x_min + (x_max - x_min) * i as f64 / 4.0;
        let x = frame.x(s);
        svg.push_str(&format!(
            "<line x1=\"{x:.4}\" y1=\"{y0:.4}\" x2=\"{x:.4}\" y2=\"{:.4}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.4}\" y=\"{:.4}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            y0 + 20.0,
            s.round() as i64
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.4}\" y=\"{:.4}\" font-size=\"13\" text-anchor=\"middle\">step</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    ));

    // Left ticks: powers of ten for the risk.
    let lo = lr_min.floor() as i64;
    let hi = lr_max.ceil() as i64;
    let tick_step = (((hi - lo) as f64 / 6.0).ceil() as i64).max(1);
    let mut exp = lo;
    while exp <= hi {
        let y = frame.y_log_risk(exp as f64);
        if (MARGIN_TOP..=HEIGHT - MARGIN_BOTTOM).contains(&y) {
            svg.push_str(&format!(
                "<line x1=\"{:.4}\" y1=\"{y:.4}\" x2=\"{x0:.4}\" y2=\"{y:.4}\" stroke=\"black\"/>\n",
                x0 - 5.0
            ));
            svg.push_str(&format!(
                "<text x=\"{:.4}\" y=\"{:.4}\" font-size=\"12\" text-anchor=\"end\">1e{exp}</text>\n",
                x0 - 8.0,
                y + 4.0
            ));
        }
        exp += tick_step;
    }
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.4}\" font-size=\"13\" transform=\"rotate(-90 18 {:.4})\" text-anchor=\"middle\">risk</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));

    // Right ticks: the unit axis for ratios.
    for i in 0..=4 {
        let v = i as f64 / 4.0;
        let y = frame.y_unit(v);
        svg.push_str(&format!(
            "<line x1=\"{x1:.4}\" y1=\"{y:.4}\" x2=\"{:.4}\" y2=\"{y:.4}\" stroke=\"gray\"/>\n",
            x1 + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.4}\" y=\"{:.4}\" font-size=\"12\" text-anchor=\"start\">{v:.2}</text>\n",
            x1 + 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.4}\" y=\"{:.4}\" font-size=\"13\" transform=\"rotate(90 {:.4} {:.4})\" text-anchor=\"middle\">alignment ratio</text>\n",
        WIDTH - 16.0,
        (y0 + y1) / 2.0,
        WIDTH - 16.0,
        (y0 + y1) / 2.0
    ));

    // Risk curve.
    let risk_points: Vec<(f64, f64)> = steps
        .iter()
        .zip(&log_risks)
        .map(|(s, lr)| (frame.x(*s), frame.y_log_risk(*lr)))
        .collect();
    if risk_points.len() == 1 {
        svg.push_str(&format!(
            "<circle cx=\"{:.4}\" cy=\"{:.4}\" r=\"3\" fill=\"black\"/>\n",
            risk_points[0].0, risk_points[0].1
        ));
    } else {
        svg.push_str(&polyline(&risk_points, "black", 1.6));
    }

    // Ratio curves per layer.
    for k in 0..table.depth {
        let color = RATIO_COLORS[k % RATIO_COLORS.len()];
        let points: Vec<(f64, f64)> = table
            .rows
            .iter()
            .filter_map(|r| r.ratio[k].map(|v| (frame.x(r.step as f64), frame.y_unit(v))))
            .collect();
        if points.len() == 1 {
            svg.push_str(&format!(
                "<circle cx=\"{:.4}\" cy=\"{:.4}\" r=\"3\" fill=\"{color}\"/>\n",
                points[0].0, points[0].1
            ));
        } else {
            svg.push_str(&polyline(&points, color, 1.3));
        }
    }

    // Legend.
    let mut ly = MARGIN_TOP + 14.0;
    svg.push_str(&format!(
        "<text x=\"{:.4}\" y=\"{ly:.4}\" font-size=\"12\" fill=\"black\">risk (log scale)</text>\n",
        x0 + 10.0
    ));
    for k in 0..table.depth {
        ly += 16.0;
        let color = RATIO_COLORS[k % RATIO_COLORS.len()];
        svg.push_str(&format!(
            "<text x=\"{:.4}\" y=\"{ly:.4}\" font-size=\"12\" fill=\"{color}\">ratio layer {}</text>\n",
            x0 + 10.0,
            k + 1
        ));
    }

    svg.push_str("</svg>\n");
    svg
}
