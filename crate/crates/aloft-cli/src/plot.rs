//! Self-contained SVG renderings of the CSV logs.
//!
//! Both renderers are pure functions of their input — fixed canvas sizes,
//! fixed colors, coordinates rounded to two decimals — so the same CSV always
//! produces the same bytes. The learning curve shows raw episode lengths
//! under a trailing-mean overlay; the attention strip draws one bar per
//! window slot with the weights and their sum printed on the image.

use std::fmt::Write as _;

use crate::csv::TrainLogRow;

/// Trailing-mean window for the learning-curve overlay.
pub const SMOOTH_WINDOW: usize = 20;

/// Mean of the last `window` values ending at each position.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "smoothing window must be positive");
    let mut out = Vec::with_capacity(values.len());
    let mut sum = 0.0;
    for i in 0..values.len() {
        sum += values[i];
        if i >= window {
            sum -= values[i - window];
        }
        let n = (i + 1).min(window);
        out.push(sum / n as f64);
    }
    out
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

const CURVE_W: f64 = 800.0;
const CURVE_H: f64 = 480.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 44.0;
const MARGIN_B: f64 = 52.0;

/// Smoothed steps-until-collision against episode index. An empty log still
/// renders titled axes.
pub fn curve_svg(rows: &[TrainLogRow]) -> String {
    let xs: Vec<f64> = rows.iter().map(|r| r.episode as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.steps as f64).collect();
    let smoothed = smooth(&ys, SMOOTH_WINDOW);

    let (x_min, x_max) = match (xs.first(), xs.last()) {
        (Some(&a), Some(&b)) if a < b => (a, b),
        (Some(&a), _) => (a, a + 1.0),
        _ => (0.0, 1.0),
    };
    let y_max = ys.iter().copied().fold(1.0_f64, f64::max);

    let plot_w = CURVE_W - MARGIN_L - MARGIN_R;
    let plot_h = CURVE_H - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x_min) / (x_max - x_min) * plot_w;
    let sy = |y: f64| MARGIN_T + plot_h - y / y_max * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CURVE_W}\" height=\"{CURVE_H}\" \
         viewBox=\"0 0 {CURVE_W} {CURVE_H}\" font-family=\"sans-serif\">\n\
         <rect width=\"{CURVE_W}\" height=\"{CURVE_H}\" fill=\"#ffffff\"/>\n\
         <text x=\"{}\" y=\"26\" font-size=\"15\" fill=\"#333333\" text-anchor=\"middle\">\
         steps until collision per episode</text>\n",
        px(CURVE_W / 2.0),
    );

    let x0 = px(MARGIN_L);
    let x1 = px(CURVE_W - MARGIN_R);
    let y0 = px(MARGIN_T);
    let y1 = px(MARGIN_T + plot_h);
    let _ = write!(
        svg,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#333333\"/>\n\
         <line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"#333333\"/>\n",
    );

    for t in 0..5 {
        let frac = t as f64 / 4.0;
        let xv = x_min + frac * (x_max - x_min);
        let yv = frac * y_max;
        let xp = px(sx(xv));
        let yp = px(sy(yv));
        let _ = write!(
            svg,
            "<line x1=\"{xp}\" y1=\"{y1}\" x2=\"{xp}\" y2=\"{}\" stroke=\"#333333\"/>\n\
             <text x=\"{xp}\" y=\"{}\" font-size=\"11\" fill=\"#333333\" text-anchor=\"middle\">{:.0}</text>\n\
             <line x1=\"{x0}\" y1=\"{yp}\" x2=\"{}\" y2=\"{yp}\" stroke=\"#333333\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"#333333\" text-anchor=\"end\">{:.0}</text>\n",
            px(MARGIN_T + plot_h + 5.0),
            px(MARGIN_T + plot_h + 20.0),
            xv,
            px(MARGIN_L - 5.0),
            px(MARGIN_L - 9.0),
            px(sy(yv) + 4.0),
            yv,
        );
    }

    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"#333333\" text-anchor=\"middle\">episode</text>\n\
         <text x=\"16\" y=\"{}\" font-size=\"12\" fill=\"#333333\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {})\">steps</text>\n",
        px(MARGIN_L + plot_w / 2.0),
        px(CURVE_H - 12.0),
        px(MARGIN_T + plot_h / 2.0),
        px(MARGIN_T + plot_h / 2.0),
    );

    if !rows.is_empty() {
        for (series, stroke, width) in [(&ys, "#b9c7e2", 1), (&smoothed, "#1f4e8c", 2)] {
            let points: Vec<String> = xs
                .iter()
                .zip(series.iter())
                .map(|(&x, &y)| format!("{},{}", px(sx(x)), px(sy(y))))
                .collect();
            let _ = write!(
                svg,
                "<polyline fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\" points=\"{}\"/>\n",
                points.join(" "),
            );
        }
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"#1f4e8c\" text-anchor=\"end\">\
             mean of last {SMOOTH_WINDOW}</text>\n",
            px(CURVE_W - MARGIN_R),
            px(MARGIN_T - 8.0),
        );
    }

    svg.push_str("</svg>\n");
    svg
}

const BAR_PITCH: f64 = 48.0;
const BAR_WIDTH: f64 = 32.0;
const STRIP_L: f64 = 48.0;
const STRIP_R: f64 = 24.0;
const STRIP_H: f64 = 260.0;
const BASELINE: f64 = 200.0;
const BAR_MAX_H: f64 = 150.0;

/// One bar per window slot, oldest on the left, each annotated with its
/// weight; the printed sum makes the normalization visible on the image
/// itself.
pub fn attention_svg(weights: &[f64]) -> String {
    let n = weights.len();
    let w = (STRIP_L + BAR_PITCH * n as f64 + STRIP_R).max(320.0);
    let peak = weights.iter().copied().fold(0.0_f64, f64::max).max(1e-12);
    let sum: f64 = weights.iter().sum();

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{STRIP_H}\" \
         viewBox=\"0 0 {} {STRIP_H}\" font-family=\"sans-serif\">\n\
         <rect width=\"{}\" height=\"{STRIP_H}\" fill=\"#ffffff\"/>\n\
         <text x=\"{}\" y=\"28\" font-size=\"14\" fill=\"#333333\">attention weights over the window</text>\n\
         <text x=\"{}\" y=\"28\" font-size=\"12\" fill=\"#333333\" text-anchor=\"end\">sum = {:.6}</text>\n\
         <line x1=\"{}\" y1=\"{BASELINE}\" x2=\"{}\" y2=\"{BASELINE}\" stroke=\"#333333\"/>\n",
        px(w),
        px(w),
        px(w),
        px(STRIP_L),
        px(w - STRIP_R),
        sum,
        px(STRIP_L),
        px(w - STRIP_R),
    );

    for (i, &weight) in weights.iter().enumerate() {
        let x = STRIP_L + BAR_PITCH * i as f64 + (BAR_PITCH - BAR_WIDTH) / 2.0;
        let h = (weight / peak * BAR_MAX_H).max(0.0);
        let center = px(x + BAR_WIDTH / 2.0);
        let _ = write!(
            svg,
            "<rect x=\"{}\" y=\"{}\" width=\"{BAR_WIDTH}\" height=\"{}\" fill=\"#1f4e8c\"/>\n\
             <text x=\"{center}\" y=\"{}\" font-size=\"10\" fill=\"#333333\" text-anchor=\"middle\">{:.3}</text>\n\
             <text x=\"{center}\" y=\"{}\" font-size=\"10\" fill=\"#333333\" text-anchor=\"middle\">{i}</text>\n",
            px(x),
            px(BASELINE - h),
            px(h),
            px(BASELINE - h - 6.0),
            weight,
            px(BASELINE + 16.0),
        );
    }

    if n > 1 {
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#777777\" text-anchor=\"middle\">oldest</text>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"#777777\" text-anchor=\"middle\">newest</text>\n",
            px(STRIP_L + BAR_PITCH / 2.0),
            px(BASELINE + 32.0),
            px(STRIP_L + BAR_PITCH * (n as f64 - 0.5)),
            px(BASELINE + 32.0),
        );
    }

    svg.push_str("</svg>\n");
    svg
}
