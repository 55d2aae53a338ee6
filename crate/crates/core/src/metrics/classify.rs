use super::MetricsError;

/// Fraction of predictions equal to their label.
pub fn top1_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// `accuracy / max(latency_ms / 2, 1)`: below 2 ms only accuracy counts.
pub fn track1_score(accuracy: f64, latency_ms: f64) -> f64 {
    accuracy / (latency_ms / 2.0).max(1.0)
}

/// Index of the first maximal value.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_cases() {
        assert_eq!(top1_accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(top1_accuracy(&[0, 0], &[1, 1]).unwrap(), 0.0);
        let two_thirds = top1_accuracy(&[1, 2, 0], &[1, 2, 3]).unwrap();
        assert!((two_thirds - 0.666667).abs() < 1e-6);
        assert_eq!(top1_accuracy(&[], &[]), Err(MetricsError::EmptySet));
        assert!(matches!(
            top1_accuracy(&[1], &[1, 2]),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn score_floor() {
        assert_eq!(track1_score(0.692, 0.419), 0.692);
        assert_eq!(track1_score(0.9, 2.0), 0.9);
        assert!((track1_score(0.9, 6.0) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn argmax_takes_first_tie() {
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), Some(1));
        assert_eq!(argmax(&[]), None);
    }
}
