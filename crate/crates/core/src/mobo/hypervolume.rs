//! Hypervolume of a point set in minimization convention.

use super::MoboError;

/// Lebesgue measure of the union of boxes `[p, reference]`.
///
/// Dominated points may be included; they add nothing. Every point must be
/// weakly below the reference point.
pub fn hypervolume(front: &[Vec<f64>], reference: &[f64]) -> Result<f64, MoboError> {
    for (index, p) in front.iter().enumerate() {
        if p.len() != reference.len() {
            return Err(MoboError::DimensionMismatch {
                expected: reference.len(),
                got: p.len(),
            });
        }
        if p.iter().zip(reference).any(|(a, r)| !(a <= r)) {
            return Err(MoboError::PointOutsideRef { index });
        }
    }
    let mut pts: Vec<&[f64]> = front.iter().map(|p| p.as_slice()).collect();
    Ok(hv_rec(&mut pts, reference))
}

fn hv_rec(pts: &mut [&[f64]], r: &[f64]) -> f64 {
    if pts.is_empty() {
        return 0.0;
    }
    match r.len() {
        1 => r[0] - pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
        2 => hv2(pts, r),
        d => {
            // Slice along the last objective; between consecutive levels the
            // cross-section is the (d-1)-dimensional volume of the points below.
            // Only the non-dominated projections matter in each slice.
            let last = d - 1;
            pts.sort_by(|a, b| a[last].total_cmp(&b[last]));
            let mut total = 0.0;
            let mut slice: Vec<&[f64]> = Vec::with_capacity(pts.len());
            for i in 0..pts.len() {
                let p = &pts[i][..last];
                if !slice.iter().any(|q| weakly_dominates(q, p)) {
                    slice.retain(|q| !weakly_dominates(p, q));
                    slice.push(p);
                }
                let upper = if i + 1 < pts.len() { pts[i + 1][last] } else { r[last] };
                let height = upper - pts[i][last];
                if height > 0.0 {
                    let mut work = slice.clone();
                    total += height * hv_rec(&mut work, &r[..last]);
                }
            }
            total
        }
    }
}

fn weakly_dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y)
}

fn hv2(pts: &mut [&[f64]], r: &[f64]) -> f64 {
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut level = r[1];
    let mut area = 0.0;
    for p in pts.iter() {
        if p[1] < level {
            area += (r[0] - p[0]) * (level - p[1]);
            level = p[1];
        }
    }
    area
}

/// Volume added by `y` to the set dominated by `front`, bounded by `reference`.
///
/// `front` must be non-dominated; for two objectives it must also be sorted by
/// the first objective.
pub(crate) fn improvement(front: &[Vec<f64>], y: &[f64], reference: &[f64]) -> f64 {
    if y.iter().zip(reference).any(|(a, r)| a >= r) {
        return 0.0;
    }
    if front.iter().any(|p| p.iter().zip(y).all(|(a, b)| a <= b)) {
        return 0.0;
    }
    if y.len() == 2 {
        return improvement2(front, y, reference);
    }
    let boxed: f64 = y.iter().zip(reference).map(|(a, r)| r - a).product();
    let clipped: Vec<Vec<f64>> = front
        .iter()
        .map(|p| p.iter().zip(y).map(|(a, b)| a.max(*b)).collect())
        .collect();
    let mut pts: Vec<&[f64]> = clipped.iter().map(|p| p.as_slice()).collect();
    (boxed - hv_rec(&mut pts, reference)).max(0.0)
}

/// Two objectives: integrate the uncovered part of `[y, r]` against the
/// staircase of the sorted front.
fn improvement2(front: &[Vec<f64>], y: &[f64], r: &[f64]) -> f64 {
    let mut area = 0.0;
    let mut x = y[0];
    let mut height = r[1];
    for p in front {
        if p[0] <= x {
            height = height.min(p[1]);
            continue;
        }
        if p[0] >= r[0] {
            break;
        }
        area += (p[0] - x) * (height - y[1]).max(0.0);
        x = p[0];
        height = height.min(p[1]);
    }
    area + (r[0] - x) * (height - y[1]).max(0.0)
}
