//! SVG figure emission: line charts, bar charts, and small-multiple
//! panels. Deliberately dependency-free; the charts carry axes, ticks,
//! legends, and nothing fancier.

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    pub err: f64,
}

#[derive(Debug, Clone)]
pub struct BarGroup {
    pub label: String,
    pub bars: Vec<Bar>,
}

struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xmin) / (self.xmax - self.xmin).max(1e-12) * self.w
    }
    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.ymin) / (self.ymax - self.ymin).max(1e-12) * self.h
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn nice_ticks(min: f64, max: f64, n: usize) -> Vec<f64> {
    if (max - min).abs() < 1e-12 {
        return vec![min];
    }
    let span = max - min;
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let step = if norm < 1.5 {
        mag
    } else if norm < 3.5 {
        2.0 * mag
    } else if norm < 7.5 {
        5.0 * mag
    } else {
        10.0 * mag
    };
    let start = (min / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = start;
    while t <= max + 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.2}")
    }
}

fn axes_svg(f: &Frame, x_label: &str, y_label: &str, x_int: bool) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "<rect x='{:.1}' y='{:.1}' width='{:.1}' height='{:.1}' fill='none' stroke='#333' stroke-width='1'/>\n",
        f.x0, f.y0, f.w, f.h
    ));
    let xticks = if x_int {
        let lo = f.xmin.ceil() as i64;
        let hi = f.xmax.floor() as i64;
        (lo..=hi).map(|v| v as f64).collect()
    } else {
        nice_ticks(f.xmin, f.xmax, 5)
    };
    for t in xticks {
        let px = f.px(t);
        s.push_str(&format!(
            "<line x1='{px:.1}' y1='{:.1}' x2='{px:.1}' y2='{:.1}' stroke='#333'/>\n",
            f.y0 + f.h,
            f.y0 + f.h + 4.0
        ));
        s.push_str(&format!(
            "<text x='{px:.1}' y='{:.1}' font-size='10' text-anchor='middle' fill='#333'>{}</text>\n",
            f.y0 + f.h + 15.0,
            fmt_tick(t)
        ));
    }
    for t in nice_ticks(f.ymin, f.ymax, 5) {
        let py = f.py(t);
        s.push_str(&format!(
            "<line x1='{:.1}' y1='{py:.1}' x2='{:.1}' y2='{py:.1}' stroke='#333'/>\n",
            f.x0 - 4.0,
            f.x0
        ));
        s.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='10' text-anchor='end' fill='#333'>{}</text>\n",
            f.x0 - 7.0,
            py + 3.0,
            fmt_tick(t)
        ));
        s.push_str(&format!(
            "<line x1='{:.1}' y1='{py:.1}' x2='{:.1}' y2='{py:.1}' stroke='#ddd' stroke-dasharray='2,3'/>\n",
            f.x0,
            f.x0 + f.w
        ));
    }
    s.push_str(&format!(
        "<text x='{:.1}' y='{:.1}' font-size='11' text-anchor='middle' fill='#111'>{}</text>\n",
        f.x0 + f.w / 2.0,
        f.y0 + f.h + 32.0,
        esc(x_label)
    ));
    s.push_str(&format!(
        "<text x='{:.1}' y='{:.1}' font-size='11' text-anchor='middle' fill='#111' transform='rotate(-90 {:.1} {:.1})'>{}</text>\n",
        f.x0 - 35.0,
        f.y0 + f.h / 2.0,
        f.x0 - 35.0,
        f.y0 + f.h / 2.0,
        esc(y_label)
    ));
    s
}

fn data_bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for s in series {
        for &(x, y) in &s.points {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if ymin == ymax {
        ymin -= 0.05;
        ymax += 0.05;
    }
    let pad = (ymax - ymin) * 0.08;
    (xmin, xmax, (ymin - pad).max(-1.0), (ymax + pad).min(1.5))
}

fn draw_series(f: &Frame, series: &[Series]) -> String {
    let mut s = String::new();
    for (i, sr) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = sr
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", f.px(x), f.py(y)))
            .collect();
        if pts.len() > 1 {
            s.push_str(&format!(
                "<polyline points='{}' fill='none' stroke='{color}' stroke-width='1.8'/>\n",
                pts.join(" ")
            ));
        }
        for &(x, y) in &sr.points {
            s.push_str(&format!(
                "<circle cx='{:.1}' cy='{:.1}' r='2.6' fill='{color}'/>\n",
                f.px(x),
                f.py(y)
            ));
        }
    }
    s
}

fn legend(series_labels: &[String], x: f64, y: f64) -> String {
    let mut s = String::new();
    for (i, label) in series_labels.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let ly = y + i as f64 * 16.0;
        s.push_str(&format!(
            "<rect x='{x:.1}' y='{:.1}' width='12' height='3' fill='{color}'/>\n",
            ly - 4.0
        ));
        s.push_str(&format!(
            "<text x='{:.1}' y='{ly:.1}' font-size='10' fill='#111'>{}</text>\n",
            x + 17.0,
            esc(label)
        ));
    }
    s
}

/// A single line chart.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    x_int: bool,
) -> String {
    let (w, h) = (560.0, 360.0);
    let f = {
        let (xmin, xmax, ymin, ymax) = data_bounds(series);
        Frame {
            x0: 60.0,
            y0: 40.0,
            w: w - 200.0,
            h: h - 90.0,
            xmin,
            xmax,
            ymin,
            ymax,
        }
    };
    let mut s = format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{w}' height='{h}' viewBox='0 0 {w} {h}'>\n<rect width='{w}' height='{h}' fill='white'/>\n"
    );
    s.push_str(&format!(
        "<text x='{:.1}' y='22' font-size='13' font-weight='bold' text-anchor='middle' fill='#111'>{}</text>\n",
        f.x0 + f.w / 2.0,
        esc(title)
    ));
    s.push_str(&axes_svg(&f, x_label, y_label, x_int));
    s.push_str(&draw_series(&f, series));
    let labels: Vec<String> = series.iter().map(|sr| sr.label.clone()).collect();
    s.push_str(&legend(&labels, f.x0 + f.w + 12.0, f.y0 + 12.0));
    s.push_str("</svg>\n");
    s
}

/// Grouped bar chart with error whiskers.
pub fn bar_chart(title: &str, y_label: &str, groups: &[BarGroup]) -> String {
    let (w, h) = (560.0, 360.0);
    let mut ymax = f64::MIN;
    let mut ymin: f64 = 0.0;
    for g in groups {
        for b in &g.bars {
            ymax = ymax.max(b.value + b.err);
            ymin = ymin.min(b.value - b.err);
        }
    }
    if ymax <= ymin {
        ymax = ymin + 1.0;
    }
    let f = Frame {
        x0: 60.0,
        y0: 40.0,
        w: w - 200.0,
        h: h - 90.0,
        xmin: 0.0,
        xmax: 1.0,
        ymin,
        ymax: ymax * 1.08,
    };
    let mut s = format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{w}' height='{h}' viewBox='0 0 {w} {h}'>\n<rect width='{w}' height='{h}' fill='white'/>\n"
    );
    s.push_str(&format!(
        "<text x='{:.1}' y='22' font-size='13' font-weight='bold' text-anchor='middle' fill='#111'>{}</text>\n",
        f.x0 + f.w / 2.0,
        esc(title)
    ));
    s.push_str(&axes_svg(&f, "", y_label, false));
    let ng = groups.len().max(1);
    let nb = groups.iter().map(|g| g.bars.len()).max().unwrap_or(1);
    let group_w = f.w / ng as f64;
    let bar_w = (group_w * 0.8) / nb as f64;
    for (gi, g) in groups.iter().enumerate() {
        let gx = f.x0 + gi as f64 * group_w + group_w * 0.1;
        for (bi, b) in g.bars.iter().enumerate() {
            let color = PALETTE[bi % PALETTE.len()];
            let x = gx + bi as f64 * bar_w;
            let y_top = f.py(b.value.max(0.0));
            let y_zero = f.py(0.0);
            let height = (y_zero - y_top).abs().max(0.5);
            let y = y_top.min(y_zero);
            s.push_str(&format!(
                "<rect x='{x:.1}' y='{y:.1}' width='{:.1}' height='{height:.1}' fill='{color}'/>\n",
                bar_w * 0.9
            ));
            if b.err > 0.0 {
                let cx = x + bar_w * 0.45;
                s.push_str(&format!(
                    "<line x1='{cx:.1}' y1='{:.1}' x2='{cx:.1}' y2='{:.1}' stroke='#111' stroke-width='1'/>\n",
                    f.py(b.value - b.err),
                    f.py(b.value + b.err)
                ));
            }
        }
        s.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='10' text-anchor='middle' fill='#111'>{}</text>\n",
            gx + group_w * 0.4,
            f.y0 + f.h + 15.0,
            esc(&g.label)
        ));
    }
    if let Some(g0) = groups.first() {
        let labels: Vec<String> = g0.bars.iter().map(|b| b.label.clone()).collect();
        s.push_str(&legend(&labels, f.x0 + f.w + 12.0, f.y0 + 12.0));
    }
    s.push_str("</svg>\n");
    s
}

/// 2x2 grid of small line-chart panels sharing one legend.
pub fn panel_grid(title: &str, panels: &[(String, Vec<Series>)], x_label: &str) -> String {
    let (w, h) = (760.0, 560.0);
    let (pw, ph) = (300.0, 210.0);
    let mut s = format!(
        "<svg xmlns='http://www.w3.org/2000/svg' width='{w}' height='{h}' viewBox='0 0 {w} {h}'>\n<rect width='{w}' height='{h}' fill='white'/>\n"
    );
    s.push_str(&format!(
        "<text x='{:.1}' y='24' font-size='14' font-weight='bold' text-anchor='middle' fill='#111'>{}</text>\n",
        w / 2.0,
        esc(title)
    ));
    for (i, (subtitle, series)) in panels.iter().enumerate().take(4) {
        let col = (i % 2) as f64;
        let row = (i / 2) as f64;
        let ox = 60.0 + col * (pw + 60.0);
        let oy = 50.0 + row * (ph + 50.0);
        let (xmin, xmax, ymin, ymax) = data_bounds(series);
        let f = Frame {
            x0: ox,
            y0: oy,
            w: pw,
            h: ph,
            xmin,
            xmax,
            ymin,
            ymax,
        };
        s.push_str(&format!(
            "<text x='{:.1}' y='{:.1}' font-size='11' font-weight='bold' text-anchor='middle' fill='#111'>{}</text>\n",
            ox + pw / 2.0,
            oy - 6.0,
            esc(subtitle)
        ));
        s.push_str(&axes_svg(&f, x_label, "", false));
        s.push_str(&draw_series(&f, series));
    }
    if let Some((_, series)) = panels.first() {
        let labels: Vec<String> = series.iter().map(|sr| sr.label.clone()).collect();
        s.push_str(&legend(&labels, w - 110.0, 40.0));
    }
    s.push_str("</svg>\n");
    s
}
