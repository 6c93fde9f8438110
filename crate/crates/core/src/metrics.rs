//! Trajectory similarity: RMSE, dynamic time warping distance and partial
//! curve matching, plus min-max score normalization.
//!
//! Curves are slices of points; all points of a curve share one dimension.

/// Offset grid resolution used by [`pcm`].
pub const PCM_OFFSETS: usize = 200;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("curves have {0} and {1} points; equal lengths required")]
    LengthMismatch(usize, usize),
    #[error("curve needs at least {needed} points, has {actual}")]
    TooShort { needed: usize, actual: usize },
    #[error("curve has zero arc length")]
    ZeroLength,
    #[error("points have mismatched dimensions")]
    DimensionMismatch,
    #[error("non-finite coordinate")]
    NonFinite,
}

fn check(curve: &[Vec<f64>], needed: usize, dim: usize) -> Result<(), MetricError> {
    if curve.len() < needed {
        return Err(MetricError::TooShort { needed, actual: curve.len() });
    }
    if curve.iter().any(|p| p.len() != dim) {
        return Err(MetricError::DimensionMismatch);
    }
    if curve.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    Ok(())
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Square root of the mean squared Euclidean distance between matched points.
pub fn rmse(pred: &[Vec<f64>], reference: &[Vec<f64>]) -> Result<f64, MetricError> {
    if pred.len() != reference.len() {
        return Err(MetricError::LengthMismatch(pred.len(), reference.len()));
    }
    let dim = reference.first().map_or(0, Vec::len);
    check(pred, 1, dim)?;
    check(reference, 1, dim)?;
    let sum: f64 = pred.iter().zip(reference).map(|(a, b)| dist(a, b).powi(2)).sum();
    Ok((sum / pred.len() as f64).sqrt())
}

/// Unnormalized cumulative dynamic time warping cost with Euclidean cell cost.
pub fn dtwd(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64, MetricError> {
    let dim = p.first().map_or(0, Vec::len);
    check(p, 1, dim)?;
    check(q, 1, dim)?;
    let m = q.len();
    let mut prev = vec![f64::INFINITY; m];
    let mut row = vec![0.0; m];
    for (i, pi) in p.iter().enumerate() {
        for j in 0..m {
            let cost = dist(pi, &q[j]);
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => row[j - 1],
                (_, 0) => prev[0],
                _ => prev[j].min(row[j - 1]).min(prev[j - 1]),
            };
            row[j] = cost + best;
        }
        std::mem::swap(&mut prev, &mut row);
    }
    Ok(prev[m - 1])
}

/// Cumulative arc length at each vertex.
fn arc_lengths(curve: &[Vec<f64>]) -> Vec<f64> {
    let mut s = Vec::with_capacity(curve.len());
    s.push(0.0);
    for w in curve.windows(2) {
        s.push(s.last().unwrap() + dist(&w[0], &w[1]));
    }
    s
}

/// Point at arc length `target` along a curve with cumulative lengths `s`.
fn point_at(curve: &[Vec<f64>], s: &[f64], target: f64, hint: &mut usize) -> Vec<f64> {
    let target = target.clamp(0.0, s[s.len() - 1]);
    while *hint + 2 < s.len() && s[*hint + 1] < target {
        *hint += 1;
    }
    let (a, b) = (s[*hint], s[*hint + 1]);
    let w = if b > a { ((target - a) / (b - a)).clamp(0.0, 1.0) } else { 0.0 };
    curve[*hint].iter().zip(&curve[*hint + 1]).map(|(x, y)| x + w * (y - x)).collect()
}

/// Area of a triangle in any dimension: half the base `|u|` times the
/// component of `v` orthogonal to `u`. Unlike the Gram determinant this does
/// not cancel catastrophically on nearly degenerate triangles.
fn triangle_area(a: &[f64], b: &[f64], c: &[f64]) -> f64 {
    let u: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let v: Vec<f64> = c.iter().zip(a).map(|(x, y)| x - y).collect();
    let uu: f64 = u.iter().map(|x| x * x).sum();
    if uu == 0.0 {
        return 0.0;
    }
    let k = u.iter().zip(&v).map(|(x, y)| x * y).sum::<f64>() / uu;
    let ww: f64 = u.iter().zip(&v).map(|(x, y)| (y - k * x).powi(2)).sum();
    0.5 * (uu * ww).sqrt()
}

/// Partial curve matching with the default offset grid.
pub fn pcm(p: &[Vec<f64>], q: &[Vec<f64>]) -> Result<f64, MetricError> {
    pcm_with_offsets(p, q, PCM_OFFSETS)
}

/// Partial curve matching.
///
/// Arc length is normalized by the longer curve, so the shorter curve spans
/// `[0, r]` with `r ≤ 1`. It is slid over `offsets` evenly spaced positions in
/// `[0, 1 − r]`; each vertex of the shorter curve is matched to the point of
/// the longer curve at the same shifted normalized arc length. The cost at an
/// offset is the summed area of the quadrilaterals between consecutive
/// matched pairs, each split into two triangles. The minimum over offsets is
/// returned.
pub fn pcm_with_offsets(p: &[Vec<f64>], q: &[Vec<f64>], offsets: usize) -> Result<f64, MetricError> {
    let dim = p.first().map_or(0, Vec::len);
    check(p, 3, dim)?;
    check(q, 3, dim)?;
    let (sp, sq) = (arc_lengths(p), arc_lengths(q));
    let (lp, lq) = (sp[sp.len() - 1], sq[sq.len() - 1]);
    if !(lp > 0.0) || !(lq > 0.0) {
        return Err(MetricError::ZeroLength);
    }
    let (short, s_short, long, s_long, l_long) = if lp <= lq { (p, &sp, q, &sq, lq) } else { (q, &sq, p, &sp, lp) };
    let ratio = s_short[s_short.len() - 1] / l_long;
    let slack = (1.0 - ratio).max(0.0);
    let offsets = offsets.max(1);
    let mut best = f64::INFINITY;
    for k in 0..offsets {
        let offset = if offsets == 1 { 0.0 } else { slack * k as f64 / (offsets - 1) as f64 };
        let mut hint = 0;
        let matched: Vec<Vec<f64>> =
            s_short.iter().map(|s| point_at(long, s_long, (offset + s / l_long) * l_long, &mut hint)).collect();
        let mut area = 0.0;
        for i in 0..short.len() - 1 {
            area += triangle_area(&short[i], &short[i + 1], &matched[i + 1]);
            area += triangle_area(&short[i], &matched[i + 1], &matched[i]);
        }
        best = best.min(area);
    }
    Ok(best)
}

/// Min-max normalization to `[0, 1]`; a zero range maps everything to 0.
pub fn normalize_scores(values: &[f64]) -> Result<Vec<f64>, MetricError> {
    if values.len() < 2 {
        return Err(MetricError::TooShort { needed: 2, actual: values.len() });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    Ok(values.iter().map(|v| if range > 0.0 { (v - lo) / range } else { 0.0 }).collect())
}
