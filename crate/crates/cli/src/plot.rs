//! Minimal SVG plotting: line series, shaded bands and histogram bars in a
//! grid of panels.

use std::fmt::Write as _;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

#[derive(Debug, Clone)]
pub struct Line {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub color: &'static str,
    pub dashed: bool,
}

#[derive(Debug, Clone)]
pub struct Band {
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub color: &'static str,
}

/// Bars of equal `width` starting at `left[i]`.
#[derive(Debug, Clone)]
pub struct Bars {
    pub label: String,
    pub left: Vec<f64>,
    pub width: f64,
    pub height: Vec<f64>,
    pub color: &'static str,
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub log_y: bool,
    pub lines: Vec<Line>,
    pub bands: Vec<Band>,
    pub bars: Vec<Bars>,
}

impl Panel {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            ..Self::default()
        }
    }

    pub fn line(
        mut self,
        label: impl Into<String>,
        x: Vec<f64>,
        y: Vec<f64>,
        color: &'static str,
    ) -> Self {
        self.lines.push(Line {
            label: label.into(),
            x,
            y,
            color,
            dashed: false,
        });
        self
    }

    pub fn dashed(
        mut self,
        label: impl Into<String>,
        x: Vec<f64>,
        y: Vec<f64>,
        color: &'static str,
    ) -> Self {
        self.lines.push(Line {
            label: label.into(),
            x,
            y,
            color,
            dashed: true,
        });
        self
    }

    pub fn band(
        mut self,
        x: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
        color: &'static str,
    ) -> Self {
        self.bands.push(Band {
            x,
            lower,
            upper,
            color,
        });
        self
    }

    pub fn bars(
        mut self,
        label: impl Into<String>,
        left: Vec<f64>,
        width: f64,
        height: Vec<f64>,
        color: &'static str,
    ) -> Self {
        self.bars.push(Bars {
            label: label.into(),
            left,
            width,
            height,
            color,
        });
        self
    }

    fn ty(&self, v: f64) -> f64 {
        if self.log_y {
            v.max(1e-300).log10()
        } else {
            v
        }
    }

    fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for l in &self.lines {
            xs.extend(&l.x);
            ys.extend(l.y.iter().map(|&v| self.ty(v)));
        }
        for b in &self.bands {
            xs.extend(&b.x);
            ys.extend(b.lower.iter().chain(&b.upper).map(|&v| self.ty(v)));
        }
        for b in &self.bars {
            xs.extend(&b.left);
            xs.extend(b.left.iter().map(|l| l + b.width));
            ys.extend(b.height.iter().map(|&v| self.ty(v)));
            if !self.log_y {
                ys.push(0.0);
            }
        }
        let finite = |v: &Vec<f64>| {
            v.iter()
                .cloned()
                .filter(|x| x.is_finite())
                .collect::<Vec<_>>()
        };
        let (xs, ys) = (finite(&xs), finite(&ys));
        if xs.is_empty() || ys.is_empty() {
            return None;
        }
        let lo = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut x0, mut x1, mut y0, mut y1) = (lo(&xs), hi(&xs), lo(&ys), hi(&ys));
        if x1 - x0 <= 0.0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 <= 0.0 {
            let pad = y0.abs().max(1.0) * 0.05;
            y0 -= pad;
            y1 += pad;
        }
        let pad = 0.05 * (y1 - y0);
        Some((x0, x1, y0 - pad, y1 + pad))
    }
}

pub struct Figure {
    pub title: String,
    pub columns: usize,
    pub panels: Vec<Panel>,
}

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 260.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 40.0;
const HEADER: f64 = 34.0;

fn num(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        format!("{v:.1e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Figure {
    pub fn new(title: impl Into<String>, columns: usize) -> Self {
        Self {
            title: title.into(),
            columns: columns.max(1),
            panels: Vec::new(),
        }
    }

    pub fn panel(mut self, p: Panel) -> Self {
        self.panels.push(p);
        self
    }

    pub fn to_svg(&self) -> String {
        let cols = self.columns.min(self.panels.len().max(1));
        let rows = self.panels.len().div_ceil(cols).max(1);
        let width = cols as f64 * PANEL_W;
        let height = HEADER + rows as f64 * PANEL_H;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            width / 2.0,
            escape(&self.title)
        );
        for (i, p) in self.panels.iter().enumerate() {
            let ox = (i % cols) as f64 * PANEL_W;
            let oy = HEADER + (i / cols) as f64 * PANEL_H;
            draw_panel(&mut s, p, i, ox, oy);
        }
        s.push_str("</svg>\n");
        s
    }
}

fn draw_panel(s: &mut String, p: &Panel, index: usize, ox: f64, oy: f64) {
    let (l, t) = (ox + MARGIN_L, oy + MARGIN_T);
    let (w, h) = (PANEL_W - MARGIN_L - MARGIN_R, PANEL_H - MARGIN_T - MARGIN_B);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
        l + w / 2.0,
        oy + 18.0,
        escape(&p.title)
    );
    let _ = writeln!(
        s,
        r##"<rect x="{l}" y="{t}" width="{w}" height="{h}" fill="none" stroke="#444"/>"##
    );
    let Some((x0, x1, y0, y1)) = p.bounds() else {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">no data</text>"#,
            l + w / 2.0,
            t + h / 2.0
        );
        return;
    };
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * w;
    let sy = |y: f64| t + h - (p.ty(y) - y0) / (y1 - y0) * h;
    let _ = writeln!(
        s,
        r#"<clipPath id="clip{index}"><rect x="{l}" y="{t}" width="{w}" height="{h}"/></clipPath>"#
    );

    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let px = sx(fx);
        let py = t + h - h * k as f64 / 4.0;
        let ylab = if p.log_y {
            format!("1e{fy:.1}")
        } else {
            num(fy)
        };
        let _ = writeln!(
            s,
            r##"<line x1="{px}" y1="{}" x2="{px}" y2="{}" stroke="#444"/>"##,
            t + h,
            t + h + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{px}" y="{}" text-anchor="middle">{}</text>"#,
            t + h + 15.0,
            num(fx)
        );
        let _ = writeln!(
            s,
            r##"<line x1="{}" y1="{py}" x2="{l}" y2="{py}" stroke="#444"/>"##,
            l - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            l - 6.0,
            py + 4.0,
            ylab
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        l + w / 2.0,
        t + h + 30.0,
        escape(&p.x_label)
    );

    let _ = writeln!(s, r#"<g clip-path="url(#clip{index})">"#);
    for b in &p.bars {
        for (left, height) in b.left.iter().zip(&b.height) {
            if !height.is_finite() || *height <= 0.0 {
                continue;
            }
            let (xa, xb) = (sx(*left), sx(left + b.width));
            let base = if p.log_y { t + h } else { sy(0.0) };
            let top = sy(*height);
            let _ = writeln!(
                s,
                r#"<rect x="{xa:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="0.35" stroke="{}" stroke-width="0.5"/>"#,
                (xb - xa).max(0.5),
                (base - top).max(0.0),
                b.color,
                b.color
            );
        }
    }
    for b in &p.bands {
        let mut pts = Vec::with_capacity(2 * b.x.len());
        for (x, u) in b.x.iter().zip(&b.upper) {
            pts.push(format!("{:.2},{:.2}", sx(*x), sy(*u)));
        }
        for (x, lo) in b.x.iter().zip(&b.lower).rev() {
            pts.push(format!("{:.2},{:.2}", sx(*x), sy(*lo)));
        }
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{}" fill-opacity="0.2" stroke="none"/>"#,
            pts.join(" "),
            b.color
        );
    }
    for line in &p.lines {
        let pts: Vec<String> = line
            .x
            .iter()
            .zip(&line.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        let dash = if line.dashed {
            r#" stroke-dasharray="5,3""#
        } else {
            ""
        };
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.3"{dash}/>"#,
            pts.join(" "),
            line.color
        );
    }
    let _ = writeln!(s, "</g>");

    let labels: Vec<(&str, &str)> = p
        .lines
        .iter()
        .map(|l| (l.label.as_str(), l.color))
        .chain(p.bars.iter().map(|b| (b.label.as_str(), b.color)))
        .filter(|(label, _)| !label.is_empty())
        .collect();
    for (k, (label, c)) in labels.iter().enumerate() {
        let y = t + 12.0 + 13.0 * k as f64;
        let x = l + w - 110.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="3" fill="{c}"/>"#,
            y - 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}">{}</text>"#,
            x + 14.0,
            escape(label)
        );
    }
}
