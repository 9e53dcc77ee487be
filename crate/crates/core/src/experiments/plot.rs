//! Tiny static line-chart renderer: one polyline over labeled axes, emitted
//! as a standalone SVG string.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

fn fmt(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

/// Renders `series` (sorted by x) as a polyline with min/max ticks.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(f64, f64)]) -> String {
    let (x_min, x_max) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (x, _)| {
            (lo.min(*x), hi.max(*x))
        });
    let (y_min, y_max) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (_, y)| {
            (lo.min(*y), hi.max(*y))
        });
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_span = if y_max > y_min { y_max - y_min } else { 1.0 };
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_min) / x_span * plot_w;
    let sy = |y: f64| HEIGHT - MARGIN_B - (y - y_min) / y_span * plot_h;

    let points: Vec<String> = series
        .iter()
        .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
        .collect();
    let markers: Vec<String> = series
        .iter()
        .map(|(x, y)| {
            format!(
                r##"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="#1f77b4"/>"##,
                sx(*x),
                sy(*y)
            )
        })
        .collect();

    format!(
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{cx}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{title}</text>
<line x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black" stroke-width="1"/>
<line x1="{l}" y1="{t}" x2="{l}" y2="{b}" stroke="black" stroke-width="1"/>
<text x="{cx}" y="{xl_y}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>
<text x="16" y="{cy}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {cy})">{y_label}</text>
<text x="{l}" y="{tick_y}" text-anchor="middle" font-family="sans-serif" font-size="10">{x0}</text>
<text x="{r}" y="{tick_y}" text-anchor="middle" font-family="sans-serif" font-size="10">{x1}</text>
<text x="{ytick_x}" y="{b}" text-anchor="end" font-family="sans-serif" font-size="10">{y0}</text>
<text x="{ytick_x}" y="{t_text}" text-anchor="end" font-family="sans-serif" font-size="10">{y1}</text>
<polyline points="{points}" fill="none" stroke="#1f77b4" stroke-width="2"/>
{markers}
</svg>
"##,
        w = WIDTH,
        h = HEIGHT,
        cx = MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
        cy = MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        l = MARGIN_L,
        r = WIDTH - MARGIN_R,
        t = MARGIN_T,
        b = HEIGHT - MARGIN_B,
        xl_y = HEIGHT - 14.0,
        tick_y = HEIGHT - MARGIN_B + 16.0,
        ytick_x = MARGIN_L - 6.0,
        t_text = MARGIN_T + 4.0,
        x0 = fmt(x_min),
        x1 = fmt(x_max),
        y0 = fmt(y_min),
        y1 = fmt(y_max),
        title = title,
        x_label = x_label,
        y_label = y_label,
        points = points.join(" "),
        markers = markers.join("\n"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_polyline_and_labels() {
        let svg = line_chart("cycles vs n_cr", "n_cr", "cycles", &[(7.0, 10.0), (15.0, 20.0), (30.0, 35.0)]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("cycles vs n_cr"));
        assert!(svg.contains("n_cr"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn degenerate_series_still_renders() {
        let svg = line_chart("t", "x", "y", &[(1.0, 5.0), (1.0, 5.0)]);
        assert!(svg.contains("<polyline"));
    }
}
