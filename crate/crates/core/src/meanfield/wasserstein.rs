use super::MeanFieldError;

/// W2 between the empirical measures of two samples (any order, any sizes).
pub fn w2_distance_1d(a: &[f64], b: &[f64]) -> Result<f64, MeanFieldError> {
    if a.is_empty() || b.is_empty() {
        return Err(MeanFieldError::Precondition("W2 needs non-empty samples".into()));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(w2_sorted(&a, &b))
}

/// W2 between two sorted samples by quantile pairing. For unequal sizes
/// the two quantile step functions are integrated over their merged
/// breakpoints `i / n_a` and `j / n_b`.
pub fn w2_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        return (s / na as f64).sqrt();
    }
    // positions measured in units of 1 / (na * nb)
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0usize;
    let mut acc = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) * nb;
        let next_b = (j + 1) * na;
        let next = next_a.min(next_b);
        let d = a[i] - b[j];
        acc += d * d * (next - pos) as f64;
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    (acc / (na * nb) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(w2_distance_1d(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(w2_distance_1d(&[3.0, 4.0], &[0.0]).unwrap(), 12.5f64.sqrt());
        assert_eq!(w2_distance_1d(&[2.0, 1.0, 5.0], &[5.0, 1.0, 2.0]).unwrap(), 0.0);
        assert!(w2_distance_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn unequal_sizes_match_replication() {
        // {0, 1} against {0, 0, 1, 1, 2, 2}: repeat the first sample 3 times
        let a = [0.0, 1.0];
        let b = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0];
        let rep = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let direct = w2_sorted(&a, &b);
        let via = w2_sorted(&rep, &b);
        assert!((direct - via).abs() < 1e-15);
    }
}
