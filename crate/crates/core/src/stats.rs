//! Shared numeric helpers. Standard deviations are population (ddof 0).

use crate::scalar::Scalar;

pub fn mean<S: Scalar>(xs: &[S]) -> Option<S> {
    if xs.is_empty() {
        return None;
    }
    let sum = xs.iter().fold(S::zero(), |acc, &x| acc + x);
    Some(sum / S::from_count(xs.len()))
}

pub fn pop_std<S: Scalar>(xs: &[S]) -> Option<S> {
    let m = mean(xs)?;
    if is_constant(xs) {
        return Some(S::zero());
    }
    let ss = xs.iter().fold(S::zero(), |acc, &x| acc + (x - m) * (x - m));
    Some((ss / S::from_count(xs.len())).sqrt())
}

pub fn is_constant<S: Scalar>(xs: &[S]) -> bool {
    xs.windows(2).all(|w| w[0] == w[1])
}

/// Pearson correlation; `None` for fewer than two points or a constant side.
pub fn pearson<S: Scalar>(xs: &[S], ys: &[S]) -> Option<S> {
    debug_assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 || is_constant(xs) || is_constant(ys) {
        return None;
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let (mut sxy, mut sxx, mut syy) = (S::zero(), S::zero(), S::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    let denom = (sxx * syy).sqrt();
    if !(denom > S::zero()) || !denom.is_finite() {
        return None;
    }
    let r = sxy / denom;
    if !r.is_finite() {
        return None;
    }
    Some(r.max(-S::one()).min(S::one()))
}

/// 1-based ranks; ties receive the average of the positions they span.
pub fn average_ranks<S: Scalar>(xs: &[S]) -> Vec<S> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("ranked values are finite"));
    let mut ranks = vec![S::zero(); xs.len()];
    let mut k = 0;
    while k < order.len() {
        let mut j = k;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[k]] {
            j += 1;
        }
        // positions k..=j (0-based) share rank ((k+1) + (j+1)) / 2
        let r = S::from_count(k + j + 2) / S::lit(2.0);
        for &idx in &order[k..=j] {
            ranks[idx] = r;
        }
        k = j + 1;
    }
    ranks
}

/// Pairwise-complete Pearson correlation over entries defined on both sides.
pub fn pairwise_pearson<S: Scalar>(a: &[Option<S>], b: &[Option<S>], min_overlap: usize) -> Option<S> {
    let (xs, ys): (Vec<S>, Vec<S>) = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    if xs.len() < min_overlap.max(2) {
        return None;
    }
    pearson(&xs, &ys)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0]), vec![1.5, 1.5, 3.0]);
        assert_eq!(average_ranks(&[5.0, 5.0, 5.0]), vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn pearson_basics() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]), Some(1.0));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]), Some(0.5));
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 3.0, 2.0]), None);
        assert_eq!(pearson::<f64>(&[1.0], &[1.0]), None);
    }

    #[test]
    fn pop_std_is_ddof_zero() {
        assert!((pop_std(&[0.2, 0.0]).unwrap() - 0.1f64).abs() < 1e-15);
        assert_eq!(pop_std(&[1.0f32, 3.0]), Some(1.0));
    }
}
