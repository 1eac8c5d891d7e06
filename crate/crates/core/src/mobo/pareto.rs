use super::Sense;

/// `a` dominates `b` when it is no worse everywhere and better somewhere
/// (all objectives minimized).
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

/// Values in minimization convention: maximized objectives are negated.
pub fn to_minimization(y: &[f64], sense: &[Sense]) -> Vec<f64> {
    y.iter()
        .zip(sense)
        .map(|(v, s)| match s {
            Sense::Minimize => *v,
            Sense::Maximize => -*v,
        })
        .collect()
}

/// Indices of the non-dominated points, in input order. Equal vectors do not
/// dominate each other and are all kept.
pub fn pareto_filter(points: &[Vec<f64>], sense: &[Sense]) -> Vec<usize> {
    let flipped: Vec<Vec<f64>> = points.iter().map(|p| to_minimization(p, sense)).collect();
    pareto_filter_min(&flipped)
}

pub(crate) fn pareto_filter_min(points: &[Vec<f64>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    // After a lexicographic sort a point can only be dominated by an earlier one.
    order.sort_by(|&i, &j| {
        points[i]
            .iter()
            .zip(&points[j])
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        if !kept.iter().any(|&k| dominates(&points[k], &points[i])) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}
