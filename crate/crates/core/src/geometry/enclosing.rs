//! Minimum-area enclosing ellipse by randomized Welzl recursion.
//!
//! A support set holds at most five boundary points. Bases:
//! one point (tiny circle), two points (segment), three points (Steiner
//! circumellipse), four points (minimum-area member of the conic pencil
//! through them) and five points (the unique conic through them).

use super::{
    conic_to_canonical, contains, CanonicalEllipse, ConicEllipse, GeometryError, Point, EPS_MIN,
};
use nalgebra::{DMatrix, Matrix2, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Relative slack on `(x−c)ᵀM(x−c) ≤ 1` used inside the recursion.
const Q_TOL: f64 = 1e-10;
/// Growth applied to the final ellipse so boundary points survive round-off.
const FINAL_GROWTH: f64 = 1e-10;

/// Ellipse `(x − c)ᵀ M (x − c) ≤ 1` with `M` symmetric positive definite.
#[derive(Debug, Clone, Copy)]
struct Shape {
    center: Point,
    m: [[f64; 2]; 2],
}

impl Shape {
    fn q(&self, p: Point) -> f64 {
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        self.m[0][0] * dx * dx + 2.0 * self.m[0][1] * dx * dy + self.m[1][1] * dy * dy
    }

    fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[0][1]
    }

    fn area(&self) -> f64 {
        PI / self.det().sqrt()
    }

    /// Interprets conic coefficients; `None` unless they describe a real ellipse.
    fn from_coeffs(c: [f64; 6]) -> Option<Shape> {
        let [a, b, cc, d, e, f] = c;
        let disc = b * b - 4.0 * a * cc;
        if !(disc < 0.0) {
            return None;
        }
        let cx = (2.0 * cc * d - b * e) / disc;
        let cy = (2.0 * a * e - b * d) / disc;
        let value_at_center = f + 0.5 * (d * cx + e * cy);
        // The region inside is where the conic has the opposite sign of its
        // value far away, i.e. the sign of A.
        let z = -value_at_center * a.signum();
        if !(z > 0.0) || !z.is_finite() {
            return None;
        }
        let s = a.signum() / z;
        let shape = Shape {
            center: [cx, cy],
            m: [[a * s, 0.5 * b * s], [0.5 * b * s, cc * s]],
        };
        (shape.m[0][0] > 0.0 && shape.det() > 0.0 && shape.center.iter().all(|v| v.is_finite()))
            .then_some(shape)
    }

    fn canonical(&self) -> CanonicalEllipse {
        let eig = SymmetricEigen::new(Matrix2::new(
            self.m[0][0],
            self.m[0][1],
            self.m[0][1],
            self.m[1][1],
        ));
        let (i_small, i_large) = if eig.eigenvalues[0] <= eig.eigenvalues[1] {
            (0, 1)
        } else {
            (1, 0)
        };
        let semi_major = 1.0 / eig.eigenvalues[i_small].sqrt();
        let semi_minor = 1.0 / eig.eigenvalues[i_large].sqrt();
        let axis = eig.eigenvectors.column(i_small);
        CanonicalEllipse {
            center: self.center,
            semi_major,
            semi_minor,
            rotation: super::normalize_axis_angle(axis[1].atan2(axis[0])),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Basis {
    Empty,
    Point(Point),
    Segment(Point, Point),
    Ellipse(Shape),
}

impl Basis {
    fn contains(&self, p: Point, len_tol: f64) -> bool {
        match *self {
            Basis::Empty => false,
            Basis::Point(c) => dist(c, p) <= len_tol,
            Basis::Segment(a, b) => segment_distance(a, b, p) <= len_tol,
            Basis::Ellipse(s) => s.q(p) <= 1.0 + Q_TOL,
        }
    }

    fn area(&self) -> f64 {
        match self {
            Basis::Ellipse(s) => s.area(),
            _ => 0.0,
        }
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn segment_distance(a: Point, b: Point, p: Point) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    if len2 == 0.0 {
        return dist(a, p);
    }
    let t = (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0);
    dist([a[0] + t * ab[0], a[1] + t * ab[1]], p)
}

/// Smallest-area ellipse enclosing `points`.
///
/// A single point yields a circle of radius [`EPS_MIN`]; collinear sets yield
/// the segment ellipse with its minor semi-axis clamped to [`EPS_MIN`].
///
/// Very thin ellipses lose precision in conic form, so the result is grown
/// until its own canonical form still encloses every point.
pub fn min_enclosing_ellipse(points: &[Point]) -> Result<ConicEllipse, GeometryError> {
    let mut e = min_enclosing_canonical(points)?;
    let mut growth = 1e-12;
    loop {
        let conic = ConicEllipse::from_canonical(&e);
        let encloses = conic_to_canonical(&conic)
            .map(|back| points.iter().all(|p| contains(&back, *p).inside))
            .unwrap_or(false);
        if encloses || growth > 1e-2 {
            return Ok(conic);
        }
        e.semi_major *= 1.0 + growth;
        e.semi_minor *= 1.0 + growth;
        growth *= 10.0;
    }
}

pub(crate) fn min_enclosing_canonical(points: &[Point]) -> Result<CanonicalEllipse, GeometryError> {
    if points.is_empty() {
        return Err(GeometryError::EmptyPointSet);
    }
    if let Some(p) = points
        .iter()
        .find(|p| !(p[0].is_finite() && p[1].is_finite()))
    {
        return Err(GeometryError::NonFinitePoint(p[0], p[1]));
    }

    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();

    let extent = pts
        .iter()
        .map(|p| dist(*p, pts[0]))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let len_tol = 1e-12 * extent.max(1.0);

    let canonical = if pts.len() == 1 {
        CanonicalEllipse::circle(pts[0], EPS_MIN)
    } else if let Some((a, b)) = collinear_extremes(&pts, len_tol) {
        segment_ellipse(a, b)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(&pts));
        pts.shuffle(&mut rng);
        let mut boundary = Vec::with_capacity(5);
        match welzl(&pts, pts.len(), &mut boundary, len_tol) {
            Basis::Ellipse(s) => s.canonical(),
            Basis::Segment(a, b) => segment_ellipse(a, b),
            Basis::Point(p) => CanonicalEllipse::circle(p, EPS_MIN),
            Basis::Empty => unreachable!("non-empty input always yields a basis"),
        }
    };
    Ok(grow_to_contain(canonical, &pts))
}

fn seed_for(points: &[Point]) -> u64 {
    // FNV-1a over the coordinate bits.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in points {
        for v in p {
            for byte in v.to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    }
    h
}

fn collinear_extremes(pts: &[Point], len_tol: f64) -> Option<(Point, Point)> {
    let far = |from: Point| {
        *pts.iter()
            .max_by(|a, b| dist(**a, from).total_cmp(&dist(**b, from)))
            .expect("non-empty")
    };
    let a = far(pts[0]);
    let b = far(a);
    let len = dist(a, b);
    let dir = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
    let off_line = pts
        .iter()
        .map(|p| ((p[0] - a[0]) * dir[1] - (p[1] - a[1]) * dir[0]).abs())
        .fold(0.0f64, f64::max);
    (off_line <= len_tol).then_some((a, b))
}

fn segment_ellipse(a: Point, b: Point) -> CanonicalEllipse {
    let half = 0.5 * dist(a, b);
    CanonicalEllipse {
        center: [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])],
        semi_major: half.max(EPS_MIN),
        semi_minor: EPS_MIN,
        rotation: super::normalize_axis_angle((b[1] - a[1]).atan2(b[0] - a[0])),
    }
}

/// Clamps the minor axis and scales up until every point is enclosed.
fn grow_to_contain(mut e: CanonicalEllipse, pts: &[Point]) -> CanonicalEllipse {
    e.semi_minor = e.semi_minor.max(EPS_MIN);
    e.semi_major = e.semi_major.max(e.semi_minor);
    let (s, c) = e.rotation.sin_cos();
    let q_max = pts
        .iter()
        .map(|p| {
            let dx = p[0] - e.center[0];
            let dy = p[1] - e.center[1];
            let xr = (c * dx + s * dy) / e.semi_major;
            let yr = (-s * dx + c * dy) / e.semi_minor;
            xr * xr + yr * yr
        })
        .fold(0.0f64, f64::max);
    let factor = q_max.sqrt().max(1.0) * (1.0 + FINAL_GROWTH);
    e.semi_major *= factor;
    e.semi_minor *= factor;
    e
}

fn welzl(pts: &[Point], n: usize, boundary: &mut Vec<Point>, len_tol: f64) -> Basis {
    if n == 0 || boundary.len() == 5 {
        return basis(boundary, len_tol);
    }
    let p = pts[n - 1];
    let e = welzl(pts, n - 1, boundary, len_tol);
    if e.contains(p, len_tol) {
        return e;
    }
    boundary.push(p);
    let e = welzl(pts, n - 1, boundary, len_tol);
    boundary.pop();
    e
}

fn basis(r: &[Point], len_tol: f64) -> Basis {
    let direct = match r.len() {
        0 => return Basis::Empty,
        1 => Some(Basis::Point(r[0])),
        2 => Some(Basis::Segment(r[0], r[1])),
        3 => steiner(r[0], r[1], r[2]).map(Basis::Ellipse),
        4 => pencil_minimum([r[0], r[1], r[2], r[3]]).map(Basis::Ellipse),
        _ => five_point_conic(r).map(Basis::Ellipse),
    };
    match direct {
        Some(b) if r.iter().all(|p| b.contains(*p, len_tol.max(1e-9))) => b,
        _ => fallback(r, len_tol),
    }
}

/// Steiner circumellipse: the minimum-area ellipse through three points.
fn steiner(a: Point, b: Point, c: Point) -> Option<Shape> {
    let g = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
    let mut s = [[0.0; 2]; 2];
    for p in [a, b, c] {
        let d = [p[0] - g[0], p[1] - g[1]];
        s[0][0] += d[0] * d[0];
        s[0][1] += d[0] * d[1];
        s[1][1] += d[1] * d[1];
    }
    // M = (2/3 · Σ ddᵀ)⁻¹
    let k = 2.0 / 3.0;
    let (sxx, sxy, syy) = (k * s[0][0], k * s[0][1], k * s[1][1]);
    let det = sxx * syy - sxy * sxy;
    if !(det > 0.0) {
        return None;
    }
    Some(Shape {
        center: g,
        m: [[syy / det, -sxy / det], [-sxy / det, sxx / det]],
    })
}

fn line_through(a: Point, b: Point) -> [f64; 3] {
    [a[1] - b[1], b[0] - a[0], a[0] * b[1] - b[0] * a[1]]
}

fn line_pair(l1: [f64; 3], l2: [f64; 3]) -> [f64; 6] {
    let [a1, b1, c1] = l1;
    let [a2, b2, c2] = l2;
    [
        a1 * a2,
        a1 * b2 + a2 * b1,
        b1 * b2,
        a1 * c2 + a2 * c1,
        b1 * c2 + b2 * c1,
        c1 * c2,
    ]
}

fn quad_det(c: &[f64; 6]) -> f64 {
    c[0] * c[2] - 0.25 * c[1] * c[1]
}

/// Area of the conic if it is a real ellipse, `+∞` otherwise.
fn conic_area(c: &[f64; 6]) -> f64 {
    Shape::from_coeffs(*c).map_or(f64::INFINITY, |s| s.area())
}

/// Minimum-area ellipse through four points in convex position.
fn pencil_minimum(r: [Point; 4]) -> Option<Shape> {
    let g = [
        r.iter().map(|p| p[0]).sum::<f64>() / 4.0,
        r.iter().map(|p| p[1]).sum::<f64>() / 4.0,
    ];
    let mut q = r;
    q.sort_by(|a, b| {
        let ta = (a[1] - g[1]).atan2(a[0] - g[0]);
        let tb = (b[1] - g[1]).atan2(b[0] - g[0]);
        ta.total_cmp(&tb)
    });
    let c1 = line_pair(line_through(q[0], q[1]), line_through(q[2], q[3]));
    let c2 = line_pair(line_through(q[1], q[2]), line_through(q[3], q[0]));
    let mix = |phi: f64| -> [f64; 6] {
        let (s, c) = phi.sin_cos();
        std::array::from_fn(|i| c * c1[i] + s * c2[i])
    };

    // det of the quadratic part is a quadratic form in (cos φ, sin φ);
    // ellipses live on the arc where it is positive.
    let p = quad_det(&c1);
    let rr = quad_det(&c2);
    let cross = 0.5 * (c1[0] * c2[2] + c2[0] * c1[2]) - 0.25 * c1[1] * c2[1];
    let det_at = |phi: f64| {
        let (s, c) = phi.sin_cos();
        p * c * c + 2.0 * cross * c * s + rr * s * s
    };
    let disc = cross * cross - p * rr;
    let (lo, hi) = if disc <= 0.0 {
        (0.0, PI)
    } else if rr.abs() > 1e-300 {
        let sq = disc.sqrt();
        let mut t1 = ((-cross - sq) / rr).atan();
        let mut t2 = ((-cross + sq) / rr).atan();
        if t1 > t2 {
            std::mem::swap(&mut t1, &mut t2);
        }
        if det_at(0.5 * (t1 + t2)) > 0.0 {
            (t1, t2)
        } else {
            (t2, t1 + PI)
        }
    } else {
        // rr == 0: one root at φ = π/2, the other from p cos + 2·cross sin = 0.
        let t = (-p / (2.0 * cross)).atan();
        let (a, b) = if t < PI / 2.0 {
            (t, PI / 2.0)
        } else {
            (PI / 2.0, t)
        };
        if det_at(0.5 * (a + b)) > 0.0 {
            (a, b)
        } else {
            (b, a + PI)
        }
    };

    let span = hi - lo;
    let area_at = |u: f64| conic_area(&mix(lo + u * span));
    const SAMPLES: usize = 256;
    let (best_i, best_area) = (1..SAMPLES)
        .map(|i| (i, area_at(i as f64 / SAMPLES as f64)))
        .min_by(|a, b| a.1.total_cmp(&b.1))?;
    if !best_area.is_finite() {
        return None;
    }
    // Golden-section refinement in the bracketing cell pair.
    let mut a = (best_i - 1) as f64 / SAMPLES as f64;
    let mut b = (best_i + 1) as f64 / SAMPLES as f64;
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = area_at(x1);
    let mut f2 = area_at(x2);
    for _ in 0..80 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = area_at(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = area_at(x2);
        }
        if b - a < 1e-15 {
            break;
        }
    }
    Shape::from_coeffs(mix(lo + 0.5 * (a + b) * span))
}

fn five_point_conic(r: &[Point]) -> Option<Shape> {
    // Center and scale for conditioning.
    let g = [
        r.iter().map(|p| p[0]).sum::<f64>() / r.len() as f64,
        r.iter().map(|p| p[1]).sum::<f64>() / r.len() as f64,
    ];
    let scale = r
        .iter()
        .map(|p| dist(*p, g))
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut m = DMatrix::<f64>::zeros(6, 6);
    for (i, p) in r.iter().take(5).enumerate() {
        let x = (p[0] - g[0]) / scale;
        let y = (p[1] - g[1]) / scale;
        m.set_row(
            i,
            &nalgebra::RowDVector::from_row_slice(&[x * x, x * y, y * y, x, y, 1.0]),
        );
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let n: Vec<f64> = v_t.row(k).iter().copied().collect();
    let local = Shape::from_coeffs([n[0], n[1], n[2], n[3], n[4], n[5]])?;
    // Undo the normalization: x_local = (x − g) / scale.
    let inv2 = 1.0 / (scale * scale);
    Some(Shape {
        center: [
            g[0] + scale * local.center[0],
            g[1] + scale * local.center[1],
        ],
        m: [
            [local.m[0][0] * inv2, local.m[0][1] * inv2],
            [local.m[1][0] * inv2, local.m[1][1] * inv2],
        ],
    })
}

/// Smallest basis over subsets of `r` that encloses all of `r`. Only reached
/// when round-off leaves a support set inconsistent.
fn fallback(r: &[Point], len_tol: f64) -> Basis {
    let n = r.len();
    let mut best: Option<Basis> = None;
    for mask in 1u32..(1 << n) - 1 {
        let sub: Vec<Point> = (0..n)
            .filter(|i| mask & (1 << i) != 0)
            .map(|i| r[i])
            .collect();
        let cand = match sub.len() {
            1 => Some(Basis::Point(sub[0])),
            2 => Some(Basis::Segment(sub[0], sub[1])),
            3 => steiner(sub[0], sub[1], sub[2]).map(Basis::Ellipse),
            4 => pencil_minimum([sub[0], sub[1], sub[2], sub[3]]).map(Basis::Ellipse),
            _ => None,
        };
        if let Some(c) = cand {
            if r.iter().all(|p| c.contains(*p, len_tol.max(1e-9)))
                && best.map_or(true, |b| c.area() < b.area())
            {
                best = Some(c);
            }
        }
    }
    best.unwrap_or_else(|| {
        // Scale the largest Steiner ellipse over all triples until it encloses r.
        let mut shape: Option<Shape> = None;
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    if let Some(s) = steiner(r[i], r[j], r[k]) {
                        if shape.map_or(true, |b| s.area() > b.area()) {
                            shape = Some(s);
                        }
                    }
                }
            }
        }
        match shape {
            Some(mut s) => {
                let q = r.iter().map(|p| s.q(*p)).fold(1.0f64, f64::max);
                for row in s.m.iter_mut() {
                    for v in row.iter_mut() {
                        *v /= q;
                    }
                }
                Basis::Ellipse(s)
            }
            None => Basis::Segment(r[0], r[n - 1]),
        }
    })
}
