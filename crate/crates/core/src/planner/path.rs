use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePath {
    pub points: Vec<[f64; 2]>,
    /// Nominal spacing between consecutive points, m.
    pub step_length: f64,
}

impl ReferencePath {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| dist(w[0], w[1])).sum()
    }

    /// Index of the point nearest to `p`, searching forward from `from`
    /// within `window` points.
    pub fn nearest_index(&self, p: [f64; 2], from: usize, window: usize) -> usize {
        let end = (from + window).min(self.points.len());
        (from.min(end.saturating_sub(1))..end)
            .min_by(|&a, &b| dist(self.points[a], p).total_cmp(&dist(self.points[b], p)))
            .unwrap_or(0)
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

/// Uniform arc-length resampling. Points sit at multiples of `step` along
/// the polyline; the final point is the original endpoint.
pub fn resample(path: &ReferencePath, step: f64, smooth: bool) -> ReferencePath {
    assert!(step > 0.0, "step length must be positive");
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(path.points.len());
    for &p in &path.points {
        if pts.last().map_or(true, |&q| dist(p, q) > 0.0) {
            pts.push(p);
        }
    }
    if smooth && pts.len() > 2 {
        pts = catmull_rom(&pts, 8);
    }
    if pts.len() < 2 {
        return ReferencePath {
            points: pts,
            step_length: step,
        };
    }
    let total: f64 = pts.windows(2).map(|w| dist(w[0], w[1])).sum();
    let mut out = Vec::with_capacity((total / step) as usize + 2);
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut k = 0usize;
    loop {
        let s = k as f64 * step;
        if s >= total - 1e-9 {
            break;
        }
        while seg + 1 < pts.len() - 1 && seg_start + dist(pts[seg], pts[seg + 1]) < s {
            seg_start += dist(pts[seg], pts[seg + 1]);
            seg += 1;
        }
        let len = dist(pts[seg], pts[seg + 1]);
        out.push(lerp(
            pts[seg],
            pts[seg + 1],
            ((s - seg_start) / len).clamp(0.0, 1.0),
        ));
        k += 1;
    }
    out.push(*pts.last().unwrap());
    ReferencePath {
        points: out,
        step_length: step,
    }
}

/// Centripetal-free uniform Catmull-Rom through `pts`, `per_segment`
/// samples per span, endpoints duplicated as phantom controls.
fn catmull_rom(pts: &[[f64; 2]], per_segment: usize) -> Vec<[f64; 2]> {
    let n = pts.len();
    let at = |i: isize| pts[i.clamp(0, n as isize - 1) as usize];
    let mut out = Vec::with_capacity((n - 1) * per_segment + 1);
    for i in 0..n - 1 {
        let (p0, p1, p2, p3) = (
            at(i as isize - 1),
            at(i as isize),
            at(i as isize + 1),
            at(i as isize + 2),
        );
        for j in 0..per_segment {
            let t = j as f64 / per_segment as f64;
            let (t2, t3) = (t * t, t * t * t);
            let c = |k: usize| {
                0.5 * (2.0 * p1[k]
                    + (-p0[k] + p2[k]) * t
                    + (2.0 * p0[k] - 5.0 * p1[k] + 4.0 * p2[k] - p3[k]) * t2
                    + (-p0[k] + 3.0 * p1[k] - 3.0 * p2[k] + p3[k]) * t3)
            };
            out.push([c(0), c(1)]);
        }
    }
    out.push(pts[n - 1]);
    out
}
