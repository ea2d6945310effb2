//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

pub type Point = [f64; 2];

/// Minimum-volume enclosing ellipse by Khachiyan's algorithm with
/// Todd–Yildirim away steps. Returns `(center, M, area)` for the region
/// `(x−c)ᵀM(x−c) ≤ 1`, scaled so that every point is enclosed.
pub fn khachiyan_mvee(points: &[Point], eps: f64) -> ([f64; 2], [[f64; 2]; 2], f64) {
    let n = points.len();
    let d = 2.0;
    let mut u = vec![1.0 / n as f64; n];
    let lifted: Vec<[f64; 3]> = points.iter().map(|p| [p[0], p[1], 1.0]).collect();
    for _ in 0..2_000_000 {
        let mut x = [[0.0; 3]; 3];
        for (q, w) in lifted.iter().zip(&u) {
            for i in 0..3 {
                for j in 0..3 {
                    x[i][j] += w * q[i] * q[j];
                }
            }
        }
        let xi = inv3(x);
        let kappa: Vec<f64> = lifted
            .iter()
            .map(|q| {
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        s += q[i] * xi[i][j] * q[j];
                    }
                }
                s
            })
            .collect();
        let (jmax, kmax) = kappa
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let (jmin, kmin) = kappa
            .iter()
            .copied()
            .enumerate()
            .filter(|(i, _)| u[*i] > 0.0)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if kmax <= (1.0 + eps) * (d + 1.0) && kmin >= (1.0 - eps) * (d + 1.0) {
            break;
        }
        if kmax - (d + 1.0) >= (d + 1.0) - kmin {
            let a = (kmax - d - 1.0) / ((d + 1.0) * (kmax - 1.0));
            for w in u.iter_mut() {
                *w *= 1.0 - a;
            }
            u[jmax] += a;
        } else {
            let b = ((d + 1.0 - kmin) / ((d + 1.0) * (kmin - 1.0))).min(u[jmin] / (1.0 - u[jmin]));
            for w in u.iter_mut() {
                *w *= 1.0 + b;
            }
            u[jmin] -= b;
            if u[jmin] < 1e-300 {
                u[jmin] = 0.0;
            }
        }
    }
    let c = [
        points.iter().zip(&u).map(|(p, w)| w * p[0]).sum::<f64>(),
        points.iter().zip(&u).map(|(p, w)| w * p[1]).sum::<f64>(),
    ];
    let mut s = [[0.0; 2]; 2];
    for (p, w) in points.iter().zip(&u) {
        let dx = p[0] - c[0];
        let dy = p[1] - c[1];
        s[0][0] += w * dx * dx;
        s[0][1] += w * dx * dy;
        s[1][1] += w * dy * dy;
    }
    let det = s[0][0] * s[1][1] - s[0][1] * s[0][1];
    let mut m = [
        [s[1][1] / (d * det), -s[0][1] / (d * det)],
        [-s[0][1] / (d * det), s[0][0] / (d * det)],
    ];
    let qmax = points
        .iter()
        .map(|p| {
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            m[0][0] * dx * dx + 2.0 * m[0][1] * dx * dy + m[1][1] * dy * dy
        })
        .fold(0.0f64, f64::max);
    for row in m.iter_mut() {
        for v in row.iter_mut() {
            *v /= qmax;
        }
    }
    let area = PI / (m[0][0] * m[1][1] - m[0][1] * m[0][1]).sqrt();
    (c, m, area)
}

fn inv3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (a, b) = ((j + 1) % 3, (j + 2) % 3);
            let (c, d) = ((i + 1) % 3, (i + 2) % 3);
            r[i][j] = (m[a][c] * m[b][d] - m[a][d] * m[b][c]) / det;
        }
    }
    r
}

/// Minimum enclosing circle radius by exhaustive pair/triple enumeration.
pub fn min_enclosing_circle_radius(points: &[Point]) -> f64 {
    let encloses = |c: Point, r: f64| {
        points
            .iter()
            .all(|p| (p[0] - c[0]).hypot(p[1] - c[1]) <= r * (1.0 + 1e-12) + 1e-15)
    };
    if points.len() == 1 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let (a, b) = (points[i], points[j]);
            let c = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let r = (a[0] - b[0]).hypot(a[1] - b[1]) / 2.0;
            if r < best && encloses(c, r) {
                best = r;
            }
            for k in j + 1..points.len() {
                if let Some((c, r)) = circumcircle(a, b, points[k]) {
                    if r < best && encloses(c, r) {
                        best = r;
                    }
                }
            }
        }
    }
    best
}

fn circumcircle(a: Point, b: Point, c: Point) -> Option<(Point, f64)> {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    if d.abs() < 1e-14 {
        return None;
    }
    let sq = |p: Point| p[0] * p[0] + p[1] * p[1];
    let ux = (sq(a) * (b[1] - c[1]) + sq(b) * (c[1] - a[1]) + sq(c) * (a[1] - b[1])) / d;
    let uy = (sq(a) * (c[0] - b[0]) + sq(b) * (a[0] - c[0]) + sq(c) * (b[0] - a[0])) / d;
    Some(([ux, uy], (a[0] - ux).hypot(a[1] - uy)))
}

/// Sign-normalized conic residual: negative strictly inside.
pub fn conic_residual(c: [f64; 6], p: Point) -> f64 {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let sign = if c[0] + c[2] < 0.0 { -1.0 } else { 1.0 };
    let [a, b, cc, d, e, f] = c.map(|v| sign * v / scale);
    a * p[0] * p[0] + b * p[0] * p[1] + cc * p[1] * p[1] + d * p[0] + e * p[1] + f
}

/// Spearman rank correlation (no tie handling beyond average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}
