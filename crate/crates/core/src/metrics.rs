//! ROC curves, AUC, and the SVG rendering of a curve.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize)]
#[serde(tag = "code")]
pub enum MetricsError {
    #[error("scores and labels must contain both classes")]
    SingleClass,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at index {index} is not finite")]
    NonFiniteScore { index: usize },
    #[error("label at index {index} is not 0 or 1")]
    InvalidLabel { index: usize },
}

impl MetricsError {
    pub fn code(&self) -> &'static str {
        match self {
            MetricsError::SingleClass => "SingleClass",
            MetricsError::LengthMismatch { .. } => "LengthMismatch",
            MetricsError::NonFiniteScore { .. } => "NonFiniteScore",
            MetricsError::InvalidLabel { .. } => "InvalidLabel",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// ROC curve with thresholds at each distinct score, highest first. Tied
/// scores move the curve in a single diagonal step, so the trapezoidal area
/// counts tied positive/negative pairs as one half.
pub fn roc_curve(scores: &[f64], labels: &[f64]) -> Result<RocResult, MetricsError> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricsError::NonFiniteScore { index });
    }
    if let Some(index) = labels.iter().position(|&y| y != 0.0 && y != 1.0) {
        return Err(MetricsError::InvalidLabel { index });
    }
    let n_pos = labels.iter().filter(|&&y| y == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    // Integer counts keep the area exact up to the final division.
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut twice_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (prev_tp, prev_fp) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == 1.0 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += ((fp - prev_fp) as u128) * ((tp + prev_tp) as u128);
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }
    let auc = twice_area as f64 / (2.0 * n_pos as f64 * n_neg as f64);
    Ok(RocResult {
        points,
        auc,
        n_pos,
        n_neg,
    })
}

/// Trapezoidal area under an arbitrary polyline of ROC points.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0)
        .sum()
}

pub const PLOT_WIDTH: f64 = 640.0;
pub const PLOT_HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 600.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 400.0;

fn px(fpr: f64) -> f64 {
    LEFT + fpr * (RIGHT - LEFT)
}

fn py(tpr: f64) -> f64 {
    BOTTOM - tpr * (BOTTOM - TOP)
}

/// Render a ROC curve as a standalone SVG document (fixed 640x480 viewBox,
/// coordinates printed with 6 decimals).
pub fn plot_series(r: &RocResult) -> String {
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">",
        w = PLOT_WIDTH,
        h = PLOT_HEIGHT
    );
    // frame
    for (x1, y1, x2, y2) in [
        (0.0, 0.0, 1.0, 0.0),
        (1.0, 0.0, 1.0, 1.0),
        (1.0, 1.0, 0.0, 1.0),
        (0.0, 1.0, 0.0, 0.0),
    ] {
        let _ = writeln!(
            s,
            "<line x1=\"{:.6}\" y1=\"{:.6}\" x2=\"{:.6}\" y2=\"{:.6}\" stroke=\"#000000\" stroke-width=\"1\"/>",
            px(x1),
            py(y1),
            px(x2),
            py(y2)
        );
    }
    // tick labels
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.6}\" y=\"{:.6}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{:.2}</text>",
            px(v),
            BOTTOM + 18.0,
            v
        );
        let _ = writeln!(
            s,
            "<text x=\"{:.6}\" y=\"{:.6}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">{:.2}</text>",
            LEFT - 8.0,
            py(v) + 4.0,
            v
        );
    }
    // chance diagonal
    let _ = writeln!(
        s,
        "<line x1=\"{:.6}\" y1=\"{:.6}\" x2=\"{:.6}\" y2=\"{:.6}\" stroke=\"#888888\" stroke-width=\"1\" stroke-dasharray=\"6,4\"/>",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    // curve
    let coords: Vec<String> = r
        .points
        .iter()
        .map(|p| format!("{:.6},{:.6}", px(p.fpr), py(p.tpr)))
        .collect();
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>",
        coords.join(" ")
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.6}\" y=\"{:.6}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">False Positive Rate</text>",
        (LEFT + RIGHT) / 2.0,
        BOTTOM + 45.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.6}\" y=\"{:.6}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 {:.6} {:.6})\">True Positive Rate</text>",
        LEFT - 50.0,
        (TOP + BOTTOM) / 2.0,
        LEFT - 50.0,
        (TOP + BOTTOM) / 2.0
    );
    let _ = writeln!(
        s,
        "<text x=\"{:.6}\" y=\"{:.6}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"end\">AUC = {:.3}</text>",
        RIGHT - 10.0,
        BOTTOM - 12.0,
        r.auc
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_ranking() {
        let r = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.auc, 1.0);
        assert_eq!((r.n_pos, r.n_neg), (2, 2));
        assert_eq!(r.points.first(), Some(&RocPoint { fpr: 0.0, tpr: 0.0 }));
        assert_eq!(r.points.last(), Some(&RocPoint { fpr: 1.0, tpr: 1.0 }));
    }

    #[test]
    fn inverted_ranking() {
        let r = roc_curve(&[0.1, 0.2, 0.8, 0.9], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(r.auc, 0.0);
    }

    #[test]
    fn all_tied_is_diagonal() {
        let r = roc_curve(&[0.4; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(r.auc, 0.5);
        assert_eq!(
            r.points,
            vec![RocPoint { fpr: 0.0, tpr: 0.0 }, RocPoint { fpr: 1.0, tpr: 1.0 }]
        );
    }

    #[test]
    fn errors() {
        assert_eq!(roc_curve(&[0.1, 0.2], &[1.0, 1.0]).unwrap_err(), MetricsError::SingleClass);
        assert_eq!(
            roc_curve(&[0.1], &[1.0, 0.0]).unwrap_err(),
            MetricsError::LengthMismatch { scores: 1, labels: 2 }
        );
        assert_eq!(
            roc_curve(&[0.1, f64::NAN], &[1.0, 0.0]).unwrap_err(),
            MetricsError::NonFiniteScore { index: 1 }
        );
        assert_eq!(
            roc_curve(&[0.1, 0.3], &[1.0, 2.0]).unwrap_err(),
            MetricsError::InvalidLabel { index: 1 }
        );
    }

    #[test]
    fn auc_matches_trapezoid_of_points() {
        let scores = [0.3, 0.3, 0.9, 0.1, 0.5, 0.5, 0.7];
        let labels = [1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let r = roc_curve(&scores, &labels).unwrap();
        assert!((r.auc - trapezoid_area(&r.points)).abs() < 1e-15);
    }

    #[test]
    fn signed_zero_scores_tie() {
        let r = roc_curve(&[0.0, -0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(r.auc, 0.5);
    }

    #[test]
    fn plot_perfect_classifier() {
        let r = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[1.0, 1.0, 0.0, 0.0]).unwrap();
        let svg = plot_series(&r);
        assert!(svg.contains("AUC = 1.000"));
        assert!(svg.contains("points=\"80.000000,400.000000 80.000000,220.000000 80.000000,40.000000 340.000000,40.000000 600.000000,40.000000\""));
        assert!(svg.contains(">False Positive Rate<"));
        assert!(svg.contains(">True Positive Rate<"));
        assert!(svg.contains("viewBox=\"0 0 640 480\""));
        assert_eq!(svg, plot_series(&r));
    }

    #[test]
    fn plot_diagonal() {
        let r = roc_curve(&[0.5; 2], &[1.0, 0.0]).unwrap();
        let svg = plot_series(&r);
        assert!(svg.contains("AUC = 0.500"));
        assert!(svg.contains("points=\"80.000000,400.000000 600.000000,40.000000\""));
    }

    #[test]
    fn plot_uses_only_allowed_elements() {
        let r = roc_curve(&[0.2, 0.6, 0.4], &[0.0, 1.0, 1.0]).unwrap();
        let svg = plot_series(&r);
        for tag in svg.split('<').skip(1) {
            let name: String = tag.chars().take_while(|c| c.is_ascii_alphanumeric() || *c == '?' || *c == '/').collect();
            assert!(
                ["?xml", "svg", "/svg", "line", "polyline", "text", "/text"].contains(&name.as_str()),
                "unexpected element {name}"
            );
        }
    }
}
