//! Exact 2D Laguerre cell areas on a box, by half-plane clipping.

pub type Pt = [f64; 2];

/// Keeps the part of `poly` where `n · z <= c`.
pub fn clip(poly: &[Pt], n: Pt, c: f64) -> Vec<Pt> {
    let side = |p: &Pt| n[0] * p[0] + n[1] * p[1] - c;
    let mut out = Vec::with_capacity(poly.len() + 1);
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        let (sp, sq) = (side(&p), side(&q));
        if sp <= 0.0 {
            out.push(p);
        }
        if (sp < 0.0 && sq > 0.0) || (sp > 0.0 && sq < 0.0) {
            let t = sp / (sp - sq);
            out.push([p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]);
        }
    }
    out
}

pub fn area(poly: &[Pt]) -> f64 {
    let mut s = 0.0;
    for k in 0..poly.len() {
        let (p, q) = (poly[k], poly[(k + 1) % poly.len()]);
        s += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * s.abs()
}

/// Cell `i` is `{z : <y_j - y_i, z> <= h_i - h_j for all j}`.
pub fn cell_polygon(points: &[Pt], h: &[f64], i: usize, lo: Pt, hi: Pt) -> Vec<Pt> {
    let mut poly = vec![lo, [hi[0], lo[1]], hi, [lo[0], hi[1]]];
    for j in 0..points.len() {
        if j == i || poly.is_empty() {
            continue;
        }
        let n = [points[j][0] - points[i][0], points[j][1] - points[i][1]];
        poly = clip(&poly, n, h[i] - h[j]);
    }
    poly
}

/// Area fraction of every cell within the box.
pub fn cell_fractions(points: &[Pt], h: &[f64], lo: Pt, hi: Pt) -> Vec<f64> {
    let total = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    (0..points.len())
        .map(|i| area(&cell_polygon(points, h, i, lo, hi)) / total)
        .collect()
}
