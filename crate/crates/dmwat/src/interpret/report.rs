//! Explanation artifact export: grayscale PPM + color overlay PNG for
//! saliency maps, JSON + self-contained HTML for attribution reports.

use super::ig::AttributionReport;
use super::score_cam::SaliencyMap;
use crate::error::{Error, Result};
use crate::image::ImageSample;
use std::path::Path;

/// Write `<stem>.ppm` (grayscale) and `<stem>_overlay.png` (heat overlay on
/// the input image). Returns the two paths written.
pub fn write_saliency_maps(
    map: &SaliencyMap,
    img: &ImageSample,
    stem: &Path,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let gray_path = stem.with_extension("ppm");
    let overlay_path = {
        let mut name = stem
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_else(|| "saliency".into());
        name.push_str("_overlay.png");
        stem.with_file_name(name)
    };

    let mut gray = ImageSample::filled(map.height, map.width, 0.0);
    for r in 0..map.height {
        for c in 0..map.width {
            let v = map.get(r, c);
            for ch in 0..3 {
                gray.set(r, c, ch, v);
            }
        }
    }
    gray.write_ppm(&gray_path)?;

    // red-to-blue heat blended onto the image
    let mut overlay = img.clone();
    for r in 0..map.height {
        for c in 0..map.width {
            let v = map.get(r, c);
            let heat = [v, 0.1 * v, 1.0 - v];
            for ch in 0..3 {
                let mixed = 0.55 * img.get(r, c, ch) + 0.45 * heat[ch];
                overlay.set(r, c, ch, mixed);
            }
        }
    }
    overlay.write_png(&overlay_path)?;
    Ok((gray_path, overlay_path))
}

/// Self-contained HTML: green tokens support the prediction, red distract.
pub fn attribution_html(report: &AttributionReport) -> String {
    let peak = report
        .scores
        .iter()
        .fold(0.0f64, |acc, s| acc.max(s.abs()))
        .max(1e-12);
    let mut spans = String::new();
    for (tok, &score) in report.tokens.iter().zip(&report.scores) {
        if tok == "[pad]" {
            continue;
        }
        let intensity = (score.abs() / peak * 0.8).min(0.8);
        let color = if score >= 0.0 {
            format!("rgba(0, 160, 60, {intensity:.3})")
        } else {
            format!("rgba(220, 40, 40, {intensity:.3})")
        };
        spans.push_str(&format!(
            "<span class=\"tok\" style=\"background:{color}\" title=\"{score:.5}\">{}</span> ",
            html_escape(tok)
        ));
    }
    format!(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\
         <title>Token attribution (class {})</title>\
         <style>body{{font-family:sans-serif;max-width:46em;margin:2em auto}}\
         .tok{{padding:2px 3px;border-radius:3px}}\
         .meta{{color:#555;font-size:0.9em}}</style></head><body>\
         <h1>Token attribution</h1>\
         <p class=\"meta\">target class {} | {} steps | baseline: {} | \
         &Delta;f = {:.6} | completeness gap = {:.2e}</p>\
         <p>{}</p>\
         <p class=\"meta\">green supports the prediction, red distracts; \
         opacity scales with |score|.</p>\
         </body></html>\n",
        report.target_class + 1,
        report.target_class + 1,
        report.steps,
        html_escape(&report.baseline),
        report.delta_f,
        report.completeness_gap,
        spans.trim_end(),
    )
}

/// Write `<stem>.json` and `<stem>.html`. Returns the two paths written.
pub fn write_attribution_report(
    report: &AttributionReport,
    stem: &Path,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let json_path = stem.with_extension("json");
    let html_path = stem.with_extension("html");
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(&json_path, json).map_err(|e| Error::io(json_path.display().to_string(), e))?;
    std::fs::write(&html_path, attribution_html(report))
        .map_err(|e| Error::io(html_path.display().to_string(), e))?;
    Ok((json_path, html_path))
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn html_colors_positive_green_negative_red() {
        let report = AttributionReport {
            tokens: vec!["[cls]".into(), "odor".into(), "clean".into(), "[pad]".into()],
            scores: vec![0.0, 0.9, -0.4, 0.0],
            target_class: 2,
            steps: 64,
            baseline: "all-PAD embedding sequence".into(),
            delta_f: 0.5,
            completeness_gap: 1e-4,
        };
        let html = attribution_html(&report);
        assert!(html.contains("rgba(0, 160, 60"));
        assert!(html.contains("rgba(220, 40, 40"));
        assert!(!html.contains("[pad]"));
        assert!(html.contains("odor"));
    }
}
