//! Risk-aware grid planning and path resampling.

mod grid;
mod path;

pub use grid::{Cell, GridMap, MapError};
pub use path::{resample, ReferencePath};

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Cost of entering an unknown cell; also scales proximity risk.
    pub unknown_cost: f64,
    /// Cost per cell traversed (diagonals cost √2 times this).
    pub distance_cost: f64,
    /// Proximity risk applies within this distance of an occupied cell, m.
    pub risk_radius: f64,
    pub step_length: f64,
    pub smooth: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            unknown_cost: 10.0,
            distance_cost: 1.0,
            risk_radius: 1.0,
            step_length: 0.15,
            smooth: false,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.unknown_cost > 0.0 && self.unknown_cost.is_finite()) {
            return Err("unknown_cost must be positive".into());
        }
        if !(self.distance_cost > 0.0 && self.distance_cost.is_finite()) {
            return Err("distance_cost must be positive".into());
        }
        if !(self.risk_radius >= 0.0 && self.risk_radius.is_finite()) {
            return Err("risk_radius must be non-negative".into());
        }
        if !(self.step_length > 0.0 && self.step_length.is_finite()) {
            return Err("step_length must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("{0} lies outside the map")]
    OutOfBounds(&'static str),
    #[error("start cell is occupied")]
    StartOccupied,
    #[error("goal is unreachable")]
    Unreachable,
}

pub fn risk_cost(d: f64, cfg: &PlannerConfig) -> f64 {
    if d < cfg.risk_radius {
        cfg.unknown_cost / (d + 1.0)
    } else {
        0.0
    }
}

/// Cost of entering `cell` whose center is `d` meters from the nearest
/// occupied cell. `None` means the cell cannot be entered.
pub fn cell_cost(cell: Cell, d: f64, cfg: &PlannerConfig) -> Option<f64> {
    debug_assert!(d >= 0.0);
    match cell {
        Cell::Occupied => None,
        Cell::Free => Some(risk_cost(d, cfg) + cfg.distance_cost),
        Cell::Unknown => Some(cfg.unknown_cost + risk_cost(d, cfg) + cfg.distance_cost),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    /// `(col, row)` from start to goal inclusive.
    pub cells: Vec<(usize, usize)>,
    pub cost: f64,
}

impl GridPath {
    pub fn to_reference(&self, map: &GridMap) -> ReferencePath {
        ReferencePath {
            points: self.cells.iter().map(|&(c, r)| map.center(c, r)).collect(),
            step_length: map.resolution(),
        }
    }
}

const NEIGHBOURS: [(isize, isize); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Traversal cost model over a map: per-cell entry cost with the distance
/// term scaled by move length.
pub struct CostField<'a> {
    map: &'a GridMap,
    /// Entry cost excluding the distance term; `None` if occupied.
    base: Vec<Option<f64>>,
    cfg: PlannerConfig,
}

impl<'a> CostField<'a> {
    pub fn new(map: &'a GridMap, cfg: &PlannerConfig) -> Self {
        let dist = map.distance_field();
        let base = map
            .cells()
            .iter()
            .zip(&dist)
            .map(|(&cell, &d)| cell_cost(cell, d, cfg).map(|c| c - cfg.distance_cost))
            .collect();
        CostField {
            map,
            base,
            cfg: *cfg,
        }
    }

    pub fn map(&self) -> &GridMap {
        self.map
    }

    pub fn passable(&self, col: usize, row: usize) -> bool {
        self.base[self.map.index(col, row)].is_some()
    }

    /// Moves out of `(col, row)` with their cost. Diagonal moves may not
    /// clip an occupied corner.
    pub fn successors(
        &self,
        col: usize,
        row: usize,
    ) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let (w, h) = (self.map.width() as isize, self.map.height() as isize);
        NEIGHBOURS.iter().filter_map(move |&(dc, dr)| {
            let (c, r) = (col as isize + dc, row as isize + dr);
            if c < 0 || r < 0 || c >= w || r >= h {
                return None;
            }
            let (c, r) = (c as usize, r as usize);
            let base = self.base[self.map.index(c, r)]?;
            let diagonal = dc != 0 && dr != 0;
            if diagonal && (!self.passable(c, row) || !self.passable(col, r)) {
                return None;
            }
            let len = if diagonal { SQRT_2 } else { 1.0 };
            Some(((c, r), base + self.cfg.distance_cost * len))
        })
    }

    fn heuristic(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let dx = a.0.abs_diff(b.0) as f64;
        let dy = a.1.abs_diff(b.1) as f64;
        let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
        self.cfg.distance_cost * (hi - lo + SQRT_2 * lo)
    }
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    g: f64,
    index: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap: reverse so the smallest (f, g, index) pops first.
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.g.total_cmp(&self.g))
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost 8-connected path between the cells containing `start`
/// and `goal`.
pub fn plan(
    map: &GridMap,
    start: [f64; 2],
    goal: [f64; 2],
    cfg: &PlannerConfig,
) -> Result<GridPath, PlanError> {
    let s = map.locate(start).ok_or(PlanError::OutOfBounds("start"))?;
    let g = map.locate(goal).ok_or(PlanError::OutOfBounds("goal"))?;
    plan_cells(&CostField::new(map, cfg), s, g)
}

pub fn plan_cells(
    field: &CostField<'_>,
    start: (usize, usize),
    goal: (usize, usize),
) -> Result<GridPath, PlanError> {
    let map = field.map();
    if !field.passable(start.0, start.1) {
        return Err(PlanError::StartOccupied);
    }
    if !field.passable(goal.0, goal.1) {
        return Err(PlanError::Unreachable);
    }
    let n = map.width() * map.height();
    let mut best = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let si = map.index(start.0, start.1);
    let gi = map.index(goal.0, goal.1);
    best[si] = 0.0;
    open.push(Open {
        f: field.heuristic(start, goal),
        g: 0.0,
        index: si,
    });
    while let Some(Open { g, index, .. }) = open.pop() {
        if closed[index] || g > best[index] {
            continue;
        }
        closed[index] = true;
        if index == gi {
            break;
        }
        let here = (index % map.width(), index / map.width());
        for (next, step) in field.successors(here.0, here.1) {
            let ni = map.index(next.0, next.1);
            let cand = g + step;
            if !closed[ni] && cand < best[ni] {
                best[ni] = cand;
                parent[ni] = index;
                open.push(Open {
                    f: cand + field.heuristic(next, goal),
                    g: cand,
                    index: ni,
                });
            }
        }
    }
    if !best[gi].is_finite() {
        return Err(PlanError::Unreachable);
    }
    let mut cells = vec![goal];
    let mut at = gi;
    while at != si {
        at = parent[at];
        cells.push((at % map.width(), at / map.width()));
    }
    cells.reverse();
    Ok(GridPath {
        cells,
        cost: best[gi],
    })
}

/// Plan, convert to global points and resample to the configured step.
pub fn plan_reference(
    map: &GridMap,
    start: [f64; 2],
    goal: [f64; 2],
    cfg: &PlannerConfig,
) -> Result<ReferencePath, PlanError> {
    let grid_path = plan(map, start, goal, cfg)?;
    let mut coarse = grid_path.to_reference(map);
    // Exact endpoints rather than their cell centers.
    coarse.points[0] = start;
    *coarse.points.last_mut().unwrap() = goal;
    Ok(resample(&coarse, cfg.step_length, cfg.smooth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg(unknown_cost: f64, risk_radius: f64) -> PlannerConfig {
        PlannerConfig {
            unknown_cost,
            distance_cost: 1.0,
            risk_radius,
            ..PlannerConfig::default()
        }
    }

    /// Bellman-Ford over the same move set, independent of the search.
    fn oracle_cost(field: &CostField<'_>, start: (usize, usize), goal: (usize, usize)) -> f64 {
        let map = field.map();
        let n = map.width() * map.height();
        let mut d = vec![f64::INFINITY; n];
        d[map.index(start.0, start.1)] = 0.0;
        loop {
            let mut changed = false;
            for row in 0..map.height() {
                for col in 0..map.width() {
                    let here = d[map.index(col, row)];
                    if !here.is_finite() || !field.passable(col, row) {
                        continue;
                    }
                    for ((c, r), w) in field.successors(col, row) {
                        let i = map.index(c, r);
                        if here + w < d[i] - 1e-12 {
                            d[i] = here + w;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        d[map.index(goal.0, goal.1)]
    }

    fn path_cost(field: &CostField<'_>, cells: &[(usize, usize)]) -> f64 {
        cells
            .windows(2)
            .map(|w| {
                field
                    .successors(w[0].0, w[0].1)
                    .find(|(c, _)| *c == w[1])
                    .expect("path uses a legal move")
                    .1
            })
            .sum()
    }

    #[test]
    fn cell_cost_formula() {
        let c = cfg(10.0, 2.0);
        assert_eq!(cell_cost(Cell::Free, 2.0, &c), Some(1.0));
        assert_eq!(cell_cost(Cell::Free, 5.0, &c), Some(1.0));
        assert_eq!(cell_cost(Cell::Free, 0.0, &c), Some(11.0));
        assert_eq!(cell_cost(Cell::Unknown, 1.0, &c), Some(16.0));
        assert_eq!(cell_cost(Cell::Occupied, 3.0, &c), None);
        assert_eq!(risk_cost(1.5, &c), 4.0);
    }

    #[test]
    fn empty_map_diagonal() {
        let map = GridMap::new(10, 10, 1.0, [0.0; 2]);
        let c = cfg(10.0, 0.0);
        let p = plan(&map, [0.0, 0.0], [9.0, 9.0], &c).unwrap();
        assert_abs_diff_eq!(p.cost, 9.0 * SQRT_2, epsilon = 1e-12);
        assert_eq!(p.cells.len(), 10);
        let field = CostField::new(&map, &c);
        assert_abs_diff_eq!(p.cost, oracle_cost(&field, (0, 0), (9, 9)), epsilon = 1e-9);
    }

    #[test]
    fn wall_with_gap() {
        let mut map = GridMap::new(10, 10, 1.0, [0.0; 2]);
        for r in 0..10 {
            if r != 7 {
                map.set(5, r, Cell::Occupied);
            }
        }
        let p = plan(&map, [0.0, 0.0], [9.0, 0.0], &cfg(10.0, 0.0)).unwrap();
        assert!(p.cells.contains(&(5, 7)));
        assert!(p
            .cells
            .iter()
            .all(|&(c, r)| map.get(c, r) != Cell::Occupied));
    }

    #[test]
    fn blocked_goal_and_disconnected() {
        let mut map = GridMap::new(6, 6, 1.0, [0.0; 2]);
        for r in 0..6 {
            map.set(3, r, Cell::Occupied);
        }
        let c = cfg(10.0, 0.0);
        assert_eq!(
            plan(&map, [0.0, 0.0], [5.0, 5.0], &c),
            Err(PlanError::Unreachable)
        );
        assert_eq!(
            plan(&map, [0.0, 0.0], [3.0, 2.0], &c),
            Err(PlanError::Unreachable)
        );
        assert_eq!(
            plan(&map, [3.0, 0.0], [0.0, 2.0], &c),
            Err(PlanError::StartOccupied)
        );
        assert_eq!(
            plan(&map, [0.0, 0.0], [9.0, 2.0], &c),
            Err(PlanError::OutOfBounds("goal"))
        );
    }

    #[test]
    fn no_corner_cutting() {
        let mut map = GridMap::new(3, 3, 1.0, [0.0; 2]);
        map.set(1, 0, Cell::Occupied);
        let p = plan(&map, [0.0, 0.0], [1.0, 1.0], &cfg(10.0, 0.0)).unwrap();
        assert_eq!(p.cells, vec![(0, 0), (0, 1), (1, 1)]);
    }

    /// Two corridors around a central block: a short one that hugs a wall
    /// and a longer one with clearance.
    fn corridor_map() -> GridMap {
        let rows = [
            "...........",
            "...........",
            "...........",
            "...........",
            "..#######..",
            "..#######..",
            "..#######..",
            "...........",
            "###########",
        ];
        let mut text = format!(
            "width 11\nheight {}\nresolution 1\norigin 0 0\n",
            rows.len()
        );
        for r in rows {
            text.push_str(r);
            text.push('\n');
        }
        GridMap::parse(&text).unwrap()
    }

    #[test]
    fn high_risk_prefers_the_wide_detour() {
        let map = corridor_map();
        let (start, goal) = ([0.0, 1.0], [10.0, 1.0]);
        let cheap = plan(&map, start, goal, &cfg(0.01, 3.0)).unwrap();
        let risky = plan(&map, start, goal, &cfg(50.0, 3.0)).unwrap();
        assert!(cheap.cells.iter().all(|&(_, r)| r <= 1));
        assert!(risky.cells.iter().any(|&(_, r)| r >= 7));
        for c in [cfg(0.01, 3.0), cfg(50.0, 3.0)] {
            let field = CostField::new(&map, &c);
            let p = plan_cells(&field, (0, 1), (10, 1)).unwrap();
            assert_abs_diff_eq!(p.cost, oracle_cost(&field, (0, 1), (10, 1)), epsilon = 1e-9);
        }
        // Under the high-risk costs the wall-hugging route is dearer.
        let field = CostField::new(&map, &cfg(50.0, 3.0));
        assert!(path_cost(&field, &cheap.cells) > path_cost(&field, &risky.cells));
    }

    #[test]
    fn reference_is_resampled_with_exact_endpoints() {
        let map = GridMap::new(20, 10, 0.5, [-1.0, -1.0]);
        let c = PlannerConfig::default();
        let r = plan_reference(&map, [-0.9, -0.8], [7.9, 2.6], &c).unwrap();
        assert_eq!(r.points[0], [-0.9, -0.8]);
        assert_eq!(*r.points.last().unwrap(), [7.9, 2.6]);
        for w in r.points.windows(2) {
            let d = (w[0][0] - w[1][0]).hypot(w[0][1] - w[1][1]);
            assert!(d > 0.0 && d <= c.step_length + 1e-9);
        }
    }

    fn random_map() -> impl Strategy<Value = GridMap> {
        (
            1usize..=12,
            1usize..=12,
            proptest::collection::vec(0u8..10, 144),
        )
            .prop_map(|(w, h, v)| {
                let mut m = GridMap::new(w, h, 0.5, [0.0; 2]);
                for r in 0..h {
                    for c in 0..w {
                        let cell = match v[r * 12 + c] {
                            0 | 1 => Cell::Occupied,
                            2 => Cell::Unknown,
                            _ => Cell::Free,
                        };
                        m.set(c, r, cell);
                    }
                }
                m
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]
        #[test]
        fn plan_matches_brute_force(
            map in random_map(), sc in 0usize..12, sr in 0usize..12, gc in 0usize..12, gr in 0usize..12,
            unknown_cost in 0.5..20.0f64, risk_radius in 0.0..2.0f64,
        ) {
            let s = (sc % map.width(), sr % map.height());
            let g = (gc % map.width(), gr % map.height());
            let c = cfg(unknown_cost, risk_radius);
            let field = CostField::new(&map, &c);
            let expected = oracle_cost(&field, s, g);
            match plan_cells(&field, s, g) {
                Ok(p) => {
                    prop_assert!(field.passable(s.0, s.1));
                    prop_assert_eq!(p.cells[0], s);
                    prop_assert_eq!(*p.cells.last().unwrap(), g);
                    prop_assert!((p.cost - expected).abs() < 1e-9, "{} vs {}", p.cost, expected);
                    prop_assert!((path_cost(&field, &p.cells) - p.cost).abs() < 1e-9);
                    prop_assert!(p.cells.iter().all(|&(c, r)| map.get(c, r) != Cell::Occupied));
                }
                Err(PlanError::StartOccupied) => prop_assert!(!field.passable(s.0, s.1)),
                Err(PlanError::Unreachable) => prop_assert!(expected.is_infinite()),
                Err(e) => prop_assert!(false, "unexpected {:?}", e),
            }
        }

        #[test]
        fn risk_exposure_never_grows_with_unknown_cost(
            map in random_map(), sc in 0usize..12, sr in 0usize..12, gc in 0usize..12, gr in 0usize..12,
            lo in 0.5..10.0f64, factor in 1.0..10.0f64, risk_radius in 0.0..2.0f64,
        ) {
            let s = (sc % map.width(), sr % map.height());
            let g = (gc % map.width(), gr % map.height());
            let a = cfg(lo, risk_radius);
            let b = cfg(lo * factor, risk_radius);
            let fa = CostField::new(&map, &a);
            let fb = CostField::new(&map, &b);
            if let (Ok(pa), Ok(pb)) = (plan_cells(&fa, s, g), plan_cells(&fb, s, g)) {
                // Σξ = ξ_d·L + ξ_u·X; exposure X must not increase with ξ_u.
                let length = |p: &GridPath| p.cells.windows(2).map(|w| {
                    if w[0].0 != w[1].0 && w[0].1 != w[1].1 { SQRT_2 } else { 1.0 }
                }).sum::<f64>();
                let xa = (pa.cost - length(&pa)) / a.unknown_cost;
                let xb = (pb.cost - length(&pb)) / b.unknown_cost;
                prop_assert!(xb <= xa + 1e-7, "{} > {}", xb, xa);
            }
        }
    }
}
