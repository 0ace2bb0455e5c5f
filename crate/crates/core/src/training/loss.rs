use crate::{Error, Result};

/// Loss of one scored item and its gradient w.r.t. the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerm {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[target]`; `None` targets are ignored and yield
/// `None`.
pub fn cross_entropy(logits: &[f64], target: Option<usize>) -> Result<Option<LossTerm>> {
    let Some(t) = target else {
        return Ok(None);
    };
    if t >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "target class {t} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    let mut grad = softmax(logits);
    grad[t] -= 1.0;
    Ok(Some(LossTerm {
        loss: log_sum - logits[t],
        grad,
    }))
}

/// Summed loss with the number of items that were not ignored.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    pub sum: f64,
    pub count: usize,
}

impl BatchLoss {
    /// Mean over scored items; 0 when everything was ignored.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn add(&mut self, loss: f64, count: usize) {
        self.sum += loss;
        self.count += count;
    }
}

pub fn mean_cross_entropy(rows: &[Vec<f64>], targets: &[Option<usize>]) -> Result<BatchLoss> {
    if rows.len() != targets.len() {
        return Err(Error::Shape(format!("{} logit rows for {} targets", rows.len(), targets.len())));
    }
    let mut total = BatchLoss::default();
    for (row, &t) in rows.iter().zip(targets) {
        if let Some(term) = cross_entropy(row, t)? {
            total.add(term.loss, 1);
        }
    }
    Ok(total)
}
