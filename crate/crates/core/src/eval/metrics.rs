use crate::error::{Error, Result};

/// Per-label AUROC by the rank statistic, ties counted one half.
///
/// `scores` and `truth` are row-major `[n × k]`. Returns `None` for labels
/// whose truth column holds a single class.
pub fn per_label_auroc(scores: &[f64], truth: &[f32], k: usize) -> Result<Vec<Option<f64>>> {
    if k == 0 || scores.len() != truth.len() || scores.len() % k != 0 || scores.is_empty() {
        return Err(Error::InputShape(format!(
            "{} scores and {} truth values for {k} labels",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InputShape("NaN score".into()));
    }
    let n = scores.len() / k;
    let mut out = Vec::with_capacity(k);
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for j in 0..k {
        let col = |i: usize| scores[i * k + j];
        let pos = |i: usize| truth[i * k + j] >= 0.5;
        let n_pos = (0..n).filter(|&i| pos(i)).count() as u64;
        let n_neg = n as u64 - n_pos;
        if n_pos == 0 || n_neg == 0 {
            out.push(None);
            continue;
        }
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| col(a).total_cmp(&col(b)));
        // Twice the positive rank sum, so tied midranks stay integral.
        let mut rank2_pos: u64 = 0;
        let mut start = 0;
        while start < n {
            let mut end = start + 1;
            while end < n && col(order[end]) == col(order[start]) {
                end += 1;
            }
            let mid2 = (start + 1 + end) as u64;
            let p = order[start..end].iter().filter(|&&i| pos(i)).count() as u64;
            rank2_pos += mid2 * p;
            start = end;
        }
        let u2 = rank2_pos - n_pos * (n_pos + 1);
        out.push(Some(u2 as f64 / (2 * n_pos * n_neg) as f64));
    }
    Ok(out)
}

/// Mean AUROC over labels with both classes present.
pub fn macro_auroc(scores: &[f64], truth: &[f32], k: usize) -> Result<f64> {
    let defined: Vec<f64> = per_label_auroc(scores, truth, k)?.into_iter().flatten().collect();
    if defined.is_empty() {
        return Err(Error::AurocUndefined);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}
