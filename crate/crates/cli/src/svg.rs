//! Dependency-free SVG rendering of an EDC curve: a polyline with labeled
//! axes. Figures are derived artifacts; everything drawn here is also in
//! the CSV.

use prefiqs_core::eval::EdcCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

fn fmt(v: f64) -> String {
    format!("{v:.2}")
}

pub fn edc_svg(curve: &EdcCurve) -> String {
    let x_max = curve
        .points
        .last()
        .map(|p| p.discard_fraction)
        .unwrap_or(1.0)
        .max(1e-9);
    let y_max = curve
        .points
        .iter()
        .map(|p| p.fnmr)
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.05;
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_x = |d: f64| MARGIN_LEFT + d / x_max * plot_w;
    let to_y = |f: f64| MARGIN_TOP + (1.0 - f / y_max) * plot_h;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">\
         FNMR vs discard fraction (FMR target {})</text>\n",
        MARGIN_LEFT,
        curve.fmr_target
    ));

    // Axes.
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        MARGIN_LEFT + plot_w
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        MARGIN_TOP
    ));
    // Ticks: five per axis.
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let xt = to_x(frac * x_max);
        svg.push_str(&format!(
            "<line x1=\"{xt}\" y1=\"{y0}\" x2=\"{xt}\" y2=\"{}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{xt}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            y0 + 20.0,
            fmt(frac * x_max)
        ));
        let yt = to_y(frac * y_max);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{yt}\" x2=\"{x0}\" y2=\"{yt}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            x0 - 8.0,
            yt + 4.0,
            format_args!("{:.4}", frac * y_max)
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\">discard fraction</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">FNMR</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    ));

    // The curve itself.
    let points: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{},{}", fmt(to_x(p.discard_fraction)), fmt(to_y(p.fnmr))))
        .collect();
    svg.push_str(&format!(
        "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
        points.join(" ")
    ));
    svg.push_str("</svg>\n");
    svg
}
