use super::OcclusionError;
use crate::geometry::Vec2;

/// Segments shorter than this have no usable normal.
pub const MIN_SEGMENT_LENGTH: f64 = 1e-12;

/// A quadrilateral with corners in a consistent winding order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub corners: [Vec2; 4],
}

/// Unit normal of `a → b`, oriented to match `(cos θ, sin θ)` with
/// `θ = arctan(-1/m)`: non-negative x, and +y for horizontal segments.
pub(crate) fn segment_normal(a: Vec2, b: Vec2) -> Option<Vec2> {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len = dx.hypot(dy);
    if !(len > MIN_SEGMENT_LENGTH) {
        return None;
    }
    let (mut nx, mut ny) = (-dy / len, dx / len);
    if nx < 0.0 || (nx == 0.0 && ny < 0.0) {
        nx = -nx;
        ny = -ny;
    }
    // keep -0.0 out of the corner arithmetic
    Some([nx + 0.0, ny + 0.0])
}

/// Box of half-width `delta` around segment `a → b`, returned as
/// `{A₁, A₂, B₂, B₁}` where `A₁,₂ = a ∓ δ·n` and `B₁,₂ = b ∓ δ·n`.
///
/// Fails with [`OcclusionError::DegenerateSegment`] when `|ab| ≤ 1e-12`.
pub fn build_segment_quad(a: Vec2, b: Vec2, delta: f64) -> Result<Quad, OcclusionError> {
    let n = segment_normal(a, b).ok_or(OcclusionError::DegenerateSegment { segment: None })?;
    let off = [n[0] * delta, n[1] * delta];
    let a1 = [a[0] - off[0], a[1] - off[1]];
    let a2 = [a[0] + off[0], a[1] + off[1]];
    let b1 = [b[0] - off[0], b[1] - off[1]];
    let b2 = [b[0] + off[0], b[1] + off[1]];
    Ok(Quad {
        corners: [a1, a2, b2, b1],
    })
}

impl Quad {
    /// Orders four arbitrary points by angle about their centroid, which
    /// turns a "bowtie" input order into a simple polygon.
    pub fn from_points(points: [Vec2; 4]) -> Self {
        let c = centroid(&points);
        let mut keyed: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p[1] - c[1]).atan2(p[0] - c[0]), i))
            .collect();
        keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut corners = [[0.0; 2]; 4];
        for (slot, (_, i)) in corners.iter_mut().zip(keyed) {
            *slot = points[i];
        }
        Self { corners }
    }

    pub fn centroid(&self) -> Vec2 {
        centroid(&self.corners)
    }

    pub fn is_finite(&self) -> bool {
        self.corners.iter().flatten().all(|v| v.is_finite())
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for p in &self.corners {
            b[0] = b[0].min(p[0]);
            b[1] = b[1].min(p[1]);
            b[2] = b[2].max(p[0]);
            b[3] = b[3].max(p[1]);
        }
        b
    }

    /// Twice the signed area (positive for counter-clockwise winding in a y-up frame).
    pub fn signed_area2(&self) -> f64 {
        (0..4)
            .map(|i| {
                let p = self.corners[i];
                let q = self.corners[(i + 1) % 4];
                p[0] * q[1] - q[0] * p[1]
            })
            .sum()
    }
}

fn centroid(points: &[Vec2; 4]) -> Vec2 {
    let sx: f64 = points.iter().map(|p| p[0]).sum();
    let sy: f64 = points.iter().map(|p| p[1]).sum();
    [sx / 4.0, sy / 4.0]
}

fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (ap[0] - t * ab[0]).hypot(ap[1] - t * ab[1])
}

/// Inside-or-on-boundary test for a simple quadrilateral.
pub fn point_in_quad(p: Vec2, q: &Quad) -> bool {
    let b = q.bounds();
    let scale = 1.0 + (b[2] - b[0]).abs().max((b[3] - b[1]).abs());
    let tol = 1e-12 * scale;
    if p[0] < b[0] - tol || p[0] > b[2] + tol || p[1] < b[1] - tol || p[1] > b[3] + tol {
        return false;
    }
    let edges = (0..4).map(|i| (q.corners[i], q.corners[(i + 1) % 4]));
    if edges.clone().any(|(a, b)| point_segment_distance(p, a, b) <= tol) {
        return true;
    }
    // even-odd crossing count along +x
    let mut inside = false;
    for (a, b) in edges {
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_corners(q: &Quad, expected: [Vec2; 4]) {
        for (c, e) in q.corners.iter().zip(expected) {
            assert!(
                (c[0] - e[0]).abs() < 1e-12 && (c[1] - e[1]).abs() < 1e-12,
                "{:?} != {:?}",
                q.corners,
                expected
            );
        }
    }

    #[test]
    fn vertical_segment() {
        let q = build_segment_quad([0.0, 0.0], [0.0, 2.0], 0.5).unwrap();
        assert_corners(&q, [[-0.5, 0.0], [0.5, 0.0], [0.5, 2.0], [-0.5, 2.0]]);
    }

    #[test]
    fn horizontal_segment() {
        let q = build_segment_quad([0.0, 0.0], [2.0, 0.0], 0.5).unwrap();
        assert_corners(&q, [[0.0, -0.5], [0.0, 0.5], [2.0, 0.5], [2.0, -0.5]]);
    }

    #[test]
    fn diagonal_segment_matches_slope_formula() {
        let d = std::f64::consts::SQRT_2 / 2.0;
        let q = build_segment_quad([0.0, 0.0], [1.0, 1.0], d).unwrap();
        // m = 1, m' = -1: A₁ = A - (cos(-π/4), sin(-π/4))·δ
        assert_corners(&q, [[-0.5, 0.5], [0.5, -0.5], [1.5, 0.5], [0.5, 1.5]]);
        let mut got: Vec<Vec2> = q.corners.to_vec();
        let mut want = vec![[0.5, -0.5], [-0.5, 0.5], [0.5, 1.5], [1.5, 0.5]];
        let key = |p: &Vec2| ((p[0] * 1e6).round() as i64, (p[1] * 1e6).round() as i64);
        got.sort_by_key(key);
        want.sort_by_key(key);
        assert_eq!(
            got.iter().map(key).collect::<Vec<_>>(),
            want.iter().map(key).collect::<Vec<_>>()
        );
    }

    #[test]
    fn degenerate_segment() {
        assert!(matches!(
            build_segment_quad([1.0, 1.0], [1.0, 1.0], 0.5),
            Err(OcclusionError::DegenerateSegment { .. })
        ));
        assert!(build_segment_quad([1.0, 1.0], [1.0, 1.0 + 1e-13], 0.5).is_err());
    }

    #[test]
    fn containment_basics() {
        let q = build_segment_quad([0.0, 0.0], [0.0, 2.0], 0.5).unwrap();
        assert!(point_in_quad(q.centroid(), &q));
        assert!(point_in_quad([0.5, 1.0], &q));
        assert!(point_in_quad([-0.5, 0.0], &q));
        assert!(!point_in_quad([1.0, 1.0], &q));
        assert!(!point_in_quad([0.0, 2.1], &q));
    }

    #[test]
    fn bowtie_order_is_repaired() {
        let q = Quad::from_points([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!((q.signed_area2().abs() - 2.0).abs() < 1e-12);
        assert!(point_in_quad([0.5, 0.9], &q));
        assert!(point_in_quad([0.1, 0.5], &q));
    }
}
