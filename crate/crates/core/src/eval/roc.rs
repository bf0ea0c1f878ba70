use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pipeline::VideoScores;

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn class_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("scores contain NaN".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Validation(
            "AUC needs at least one positive and one negative frame".into(),
        ));
    }
    Ok((pos, neg))
}

/// Threshold sweep over the distinct scores, highest first. Tied scores
/// move the curve diagonally, so the area equals the Mann–Whitney
/// statistic with ties counted as one half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        // trapezoid in count units
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 / 2.0;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(RocCurve {
        points,
        auc: auc / (pos as f64 * neg as f64),
    })
}

/// O(n²) count of correctly ordered positive/negative pairs.
pub fn auc_pairwise_oracle(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut total = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            total += if si > sj {
                1.0
            } else if si == sj {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(total / (pos as f64 * neg as f64))
}

/// One entry per annotated frame, videos in label order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedFrame {
    pub score: f64,
    pub alarm: bool,
    pub label: bool,
}

/// Lines up per-video frame scores with frame labels. Frames with no score
/// count as score 0 without an alarm.
pub fn align_frames(scores: &[VideoScores], labels: &BTreeMap<String, Vec<bool>>) -> Vec<AlignedFrame> {
    let by_video: BTreeMap<&str, &VideoScores> =
        scores.iter().map(|v| (v.video_id.as_str(), v)).collect();
    let mut out = Vec::new();
    for (video, lab) in labels {
        let start = out.len();
        out.extend(lab.iter().map(|&label| AlignedFrame {
            score: 0.0,
            alarm: false,
            label,
        }));
        if let Some(v) = by_video.get(video.as_str()) {
            for f in &v.frames {
                if let Some(slot) = out[start..].get_mut(f.frame_index as usize) {
                    slot.score = f.score;
                    slot.alarm = f.alarm;
                }
            }
        }
    }
    out
}

pub fn frame_scores_and_labels(
    scores: &[VideoScores],
    labels: &BTreeMap<String, Vec<bool>>,
) -> (Vec<f64>, Vec<bool>) {
    align_frames(scores, labels).iter().map(|f| (f.score, f.label)).unzip()
}

pub fn frame_auc(scores: &[VideoScores], labels: &BTreeMap<String, Vec<bool>>) -> Result<f64> {
    let (s, l) = frame_scores_and_labels(scores, labels);
    Ok(roc_auc(&s, &l)?.auc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let r = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-12);
        assert_eq!(r.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(r.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn separated_and_tied() {
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.5; 6], &[true, false, true, false, false, true]).unwrap().auc, 0.5);
    }

    #[test]
    fn single_pair_oracle() {
        assert_eq!(auc_pairwise_oracle(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc_pairwise_oracle(&[0.3, 0.3], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_rejected() {
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
        assert!(auc_pairwise_oracle(&[0.1, 0.2], &[false, false]).is_err());
    }
}
