use ndarray::Array2;

use crate::error::{invalid, Result};
use crate::nets::{Mode, Model};

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    /// Mean AP over classes that have at least one positive.
    pub map: f64,
    /// Per-class AP; `None` for classes absent from the split.
    pub per_class_ap: Vec<Option<f64>>,
    pub samples: usize,
}

impl Metrics {
    pub fn absent_classes(&self) -> Vec<usize> {
        self.per_class_ap.iter().enumerate().filter(|(_, a)| a.is_none()).map(|(c, _)| c).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("samples {}\naccuracy {}\nmap {}\n", self.samples, self.accuracy, self.map);
        for (c, ap) in self.per_class_ap.iter().enumerate() {
            match ap {
                Some(v) => s.push_str(&format!("ap.{c} {v}\n")),
                None => s.push_str(&format!("ap.{c} absent\n")),
            }
        }
        s
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Top-1 accuracy of row-wise argmax scores.
pub fn accuracy(scores: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    if scores.nrows() != labels.len() || labels.is_empty() {
        return Err(invalid("scores and labels disagree in length"));
    }
    let hits = scores
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(r, &y)| argmax(&r.to_vec()) == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Non-interpolated AP: mean precision at the rank of every positive, with
/// samples ranked by descending score (ties keep input order).
/// Returns `None` when there are no positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let total_pos = positive.iter().filter(|p| **p).count();
    if total_pos == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total_pos as f64)
}

/// One-vs-rest AP per class column and their mean over present classes.
pub fn mean_average_precision(scores: &Array2<f64>, labels: &[Vec<bool>]) -> Result<(f64, Vec<Option<f64>>)> {
    if scores.nrows() != labels.len() {
        return Err(invalid("scores and labels disagree in length"));
    }
    let per: Vec<Option<f64>> = (0..scores.ncols())
        .map(|c| {
            let col: Vec<f64> = scores.column(c).to_vec();
            let pos: Vec<bool> = labels.iter().map(|l| l.get(c).copied().unwrap_or(false)).collect();
            average_precision(&col, &pos)
        })
        .collect();
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(invalid("no class has a positive sample"));
    }
    Ok((present.iter().sum::<f64>() / present.len() as f64, per))
}

/// Eval-mode accuracy and mAP on one split. Single-label targets are treated
/// as one-hot for mAP.
pub fn evaluate(model: &Model, blocks: &Array2<f64>, gt: &[Array2<f64>], labels: &[usize]) -> Result<Metrics> {
    let gt = if gt.is_empty() { None } else { Some(gt) };
    let pass = model.forward(blocks, gt, Mode::Eval)?;
    let acc = accuracy(&pass.logits, labels)?;
    let multi: Vec<Vec<bool>> = labels
        .iter()
        .map(|&y| (0..model.config.classes).map(|c| c == y).collect())
        .collect();
    let (map, per_class_ap) = mean_average_precision(&pass.logits, &multi)?;
    Ok(Metrics { accuracy: acc, map, per_class_ap, samples: labels.len() })
}
