//! SVG overlay rendering: numbered fixation circles joined by saccade
//! lines, optionally on top of the stimulus image. Output bytes are
//! deterministic for identical inputs.

use std::fmt::Write;

use scanpath_forge::autodiff::Tensor;
use scanpath_forge::gaze::Scanpath;

use crate::png;

/// Circle radii per fixation: proportional to dwell duration when every
/// fixation carries an increasing onset time, constant otherwise. The last
/// fixation inherits the previous duration.
fn radii(sp: &Scanpath, base: f64) -> Vec<f64> {
    let times: Vec<f64> = sp.fixations.iter().filter_map(|f| f.t_ms).collect();
    if times.len() != sp.len() || sp.len() < 2 {
        return vec![base; sp.len()];
    }
    let mut durations: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    if durations.iter().any(|d| *d <= 0.0) {
        return vec![base; sp.len()];
    }
    let last = *durations.last().expect("len >= 2");
    durations.push(last);
    let mean = durations.iter().sum::<f64>() / durations.len() as f64;
    durations
        .iter()
        .map(|d| (base * d / mean).clamp(base * 0.5, base * 2.0))
        .collect()
}

/// Builds the SVG document. `background` is an optional `[3, H, W]` tensor
/// with values in `[0, 1]`, stretched to the screen and embedded as a PNG
/// data URI.
pub fn render(sp: &Scanpath, background: Option<&Tensor>) -> String {
    let (w, h) = (f64::from(sp.screen_w), f64::from(sp.screen_h));
    let base_radius = (w.min(h) / 36.0).max(2.0);
    let stroke = (base_radius / 4.0).max(0.6);

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w:.2} {h:.2}\" width=\"{w:.0}\" height=\"{h:.0}\">"
    );

    match background {
        Some(image) => {
            let shape = image.shape();
            let (ih, iw) = (shape[1], shape[2]);
            let mut rgb = Vec::with_capacity(ih * iw * 3);
            for r in 0..ih {
                for c in 0..iw {
                    for ch in 0..3 {
                        let v = image.data()[ch * ih * iw + r * iw + c];
                        rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
                    }
                }
            }
            let uri = png::base64(&png::encode_rgb8(iw as u32, ih as u32, &rgb));
            let _ = writeln!(
                out,
                "  <image href=\"data:image/png;base64,{uri}\" x=\"0\" y=\"0\" width=\"{w:.2}\" height=\"{h:.2}\" preserveAspectRatio=\"none\"/>"
            );
        }
        None => {
            let _ = writeln!(
                out,
                "  <rect x=\"0\" y=\"0\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"#1c1c1e\"/>"
            );
        }
    }

    for pair in sp.fixations.windows(2) {
        let _ = writeln!(
            out,
            "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#5ac8fa\" stroke-width=\"{stroke:.2}\" stroke-opacity=\"0.85\"/>",
            pair[0].x, pair[0].y, pair[1].x, pair[1].y
        );
    }

    let radii = radii(sp, base_radius);
    for (k, (f, r)) in sp.fixations.iter().zip(&radii).enumerate() {
        // the first fixation gets its own color so the path origin is obvious
        let fill = if k == 0 { "#ff3b30" } else { "#ffcc00" };
        let _ = writeln!(
            out,
            "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r:.2}\" fill=\"{fill}\" fill-opacity=\"0.75\" stroke=\"#ffffff\" stroke-width=\"{:.2}\"/>",
            f.x,
            f.y,
            stroke * 0.75
        );
    }
    for (k, (f, r)) in sp.fixations.iter().zip(&radii).enumerate() {
        let _ = writeln!(
            out,
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"{:.2}\" text-anchor=\"middle\" dominant-baseline=\"central\" fill=\"#000000\">{}</text>",
            f.x,
            f.y,
            r * 1.1,
            k + 1
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use scanpath_forge::gaze::Fixation;

    #[test]
    fn element_counts_match_fixations() {
        let sp = Scanpath::new(
            "img",
            "obs",
            100,
            100,
            (0..5)
                .map(|i| Fixation::new(10.0 + 15.0 * i as f64, 20.0 + 10.0 * i as f64))
                .collect(),
        );
        let svg = render(&sp, None);
        assert_eq!(svg.matches("<circle").count(), 5);
        assert_eq!(svg.matches("<line").count(), 4);
        assert_eq!(svg.matches("<text").count(), 5);
        assert_eq!(svg, render(&sp, None));
    }

    #[test]
    fn durations_scale_radii() {
        let sp = Scanpath::new(
            "img",
            "obs",
            100,
            100,
            vec![
                Fixation::with_time(10.0, 10.0, 0.0),
                Fixation::with_time(50.0, 50.0, 100.0),
                Fixation::with_time(90.0, 20.0, 500.0),
            ],
        );
        let r = radii(&sp, 4.0);
        assert!(r[1] > r[0], "longer dwell should enlarge the circle");
    }
}
