//! Groups tracked obstacles that are close now and at the end of the
//! horizon, and wraps each group in an inflated ellipse.

use crate::geometry::{inflate, min_enclosing_canonical, GeometryError, UnsafeSet};
use crate::tracking::{predict_obstacle, Obstacle};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cluster {
    /// Member obstacle ids, ascending.
    pub members: Vec<u64>,
    pub mean_velocity: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    /// Safety margin; members must be closer than twice this.
    pub margin: f64,
    pub horizon: usize,
    pub step: f64,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// True when `a` and `b` are strictly closer than `2·margin` both now and
/// after `horizon` steps of constant-velocity motion.
pub fn related(a: &Obstacle, b: &Obstacle, params: &ClusterParams) -> bool {
    let limit = 2.0 * params.margin;
    dist(a.position, b.position) < limit
        && dist(
            predict_obstacle(a, params.horizon, params.step),
            predict_obstacle(b, params.horizon, params.step),
        ) < limit
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Single-linkage components of [`related`]. Clusters are ordered by their
/// smallest member id.
pub fn cluster(obstacles: &[Obstacle], params: &ClusterParams) -> Vec<Cluster> {
    let n = obstacles.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in (i + 1)..n {
            if related(&obstacles[i], &obstacles[j], params) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(i);
    }
    let mut clusters: Vec<Cluster> = groups
        .into_iter()
        .map(|g| {
            let mut members: Vec<u64> = g.iter().map(|&i| obstacles[i].id).collect();
            members.sort_unstable();
            let k = g.len() as f64;
            let mean_velocity = [
                g.iter().map(|&i| obstacles[i].velocity[0]).sum::<f64>() / k,
                g.iter().map(|&i| obstacles[i].velocity[1]).sum::<f64>() / k,
            ];
            Cluster {
                members,
                mean_velocity,
            }
        })
        .collect();
    clusters.sort_by_key(|c| c.members[0]);
    clusters
}

/// Mean velocity of the members of `c` found in `obstacles`.
pub fn cluster_velocity(c: &Cluster, obstacles: &[Obstacle]) -> [f64; 2] {
    let members: Vec<&Obstacle> = obstacles
        .iter()
        .filter(|o| c.members.contains(&o.id))
        .collect();
    assert!(
        !members.is_empty(),
        "cluster has no members among obstacles"
    );
    let k = members.len() as f64;
    [
        members.iter().map(|o| o.velocity[0]).sum::<f64>() / k,
        members.iter().map(|o| o.velocity[1]).sum::<f64>() / k,
    ]
}

/// One unsafe set per cluster: the minimum enclosing ellipse of the member
/// positions, inflated by `margin`, moving at the mean member velocity.
pub fn build_unsafe_sets(
    clusters: &[Cluster],
    obstacles: &[Obstacle],
    margin: f64,
) -> Result<Vec<UnsafeSet>, GeometryError> {
    clusters
        .iter()
        .enumerate()
        .map(|(index, c)| {
            let points: Vec<[f64; 2]> = obstacles
                .iter()
                .filter(|o| c.members.contains(&o.id))
                .map(|o| o.position)
                .collect();
            let ellipse = inflate(&min_enclosing_canonical(&points)?, margin)?;
            Ok(UnsafeSet {
                index,
                ellipse,
                velocity: cluster_velocity(c, obstacles),
                member_ids: c.members.clone(),
                priority_distance: None,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{contains, EPS_MIN};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ob(id: u64, position: [f64; 2], velocity: [f64; 2]) -> Obstacle {
        Obstacle {
            id,
            position,
            velocity,
            width: 0.5,
            height: 1.7,
            covariance: [[[0.0; 2]; 2]; 2],
            last_seen: 0,
        }
    }

    const PARAMS: ClusterParams = ClusterParams {
        margin: 1.0,
        horizon: 40,
        step: 0.1,
    };

    #[test]
    fn four_cluster_cases() {
        let apart = [ob(1, [0.0, 0.0], [0.0; 2]), ob(2, [2.5, 0.0], [0.0; 2])];
        assert_eq!(cluster(&apart, &PARAMS).len(), 2);
        let close = [ob(1, [0.0, 0.0], [0.0; 2]), ob(2, [1.5, 0.0], [0.0; 2])];
        assert_eq!(cluster(&close, &PARAMS).len(), 1);
        let together = [ob(1, [0.0, 0.0], [1.0, 0.0]), ob(2, [1.5, 0.0], [1.0, 0.0])];
        assert_eq!(cluster(&together, &PARAMS).len(), 1);
        let opposite = [
            ob(1, [0.0, 0.0], [-1.0, 0.0]),
            ob(2, [1.5, 0.0], [1.0, 0.0]),
        ];
        let c = cluster(&opposite, &PARAMS);
        assert_eq!(c.len(), 2);
        let a = predict_obstacle(&opposite[0], 40, 0.1);
        let b = predict_obstacle(&opposite[1], 40, 0.1);
        assert_abs_diff_eq!(dist(a, b), 9.5, epsilon = 1e-12);
    }

    #[test]
    fn exactly_two_margins_does_not_cluster() {
        let pair = [ob(1, [0.0, 0.0], [0.0; 2]), ob(2, [2.0, 0.0], [0.0; 2])];
        assert_eq!(cluster(&pair, &PARAMS).len(), 2);
    }

    #[test]
    fn chains_merge_transitively() {
        let chain = [
            ob(5, [0.0, 0.0], [0.0; 2]),
            ob(3, [1.5, 0.0], [0.0; 2]),
            ob(9, [3.0, 0.0], [0.0; 2]),
            ob(1, [10.0, 0.0], [0.0; 2]),
        ];
        let c = cluster(&chain, &PARAMS);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].members, vec![1]);
        assert_eq!(c[1].members, vec![3, 5, 9]);
    }

    #[test]
    fn velocity_means() {
        let obs = [
            ob(1, [0.0; 2], [1.0, 0.0]),
            ob(2, [0.0; 2], [0.0, 1.0]),
            ob(3, [0.0; 2], [1.4, 0.0]),
            ob(4, [0.0; 2], [1.0, 1.0]),
            ob(5, [0.0; 2], [1.0, -1.0]),
            ob(6, [0.0; 2], [-2.0, 0.0]),
        ];
        let c = |m: Vec<u64>| Cluster {
            members: m,
            mean_velocity: [0.0; 2],
        };
        assert_eq!(cluster_velocity(&c(vec![1, 2]), &obs), [0.5, 0.5]);
        assert_eq!(cluster_velocity(&c(vec![3]), &obs), [1.4, 0.0]);
        let v = cluster_velocity(&c(vec![4, 5, 6]), &obs);
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn unsafe_set_examples() {
        let single = [ob(1, [3.0, 0.0], [0.0; 2])];
        let sets = build_unsafe_sets(&cluster(&single, &PARAMS), &single, 1.0).unwrap();
        assert_eq!(sets[0].ellipse.center, [3.0, 0.0]);
        assert_abs_diff_eq!(sets[0].ellipse.semi_major, 1.0 + EPS_MIN, epsilon = 1e-12);
        assert_abs_diff_eq!(sets[0].ellipse.semi_minor, 1.0 + EPS_MIN, epsilon = 1e-12);

        let pair = [ob(1, [0.0, 0.0], [0.0; 2]), ob(2, [2.0, 0.0], [0.0; 2])];
        let params = ClusterParams {
            margin: 1.01,
            ..PARAMS
        };
        let clusters = cluster(&pair, &params);
        assert_eq!(clusters.len(), 1);
        let sets = build_unsafe_sets(&clusters, &pair, 1.0).unwrap();
        let e = sets[0].ellipse;
        assert_abs_diff_eq!(e.center[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.center[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.semi_major, 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(e.semi_minor, 1.0 + EPS_MIN, epsilon = 1e-9);
        assert_eq!(e.rotation, 0.0);

        let tri = [
            ob(1, [0.0, 0.0], [0.0; 2]),
            ob(2, [2.0, 0.0], [0.0; 2]),
            ob(3, [1.0, 1.0], [0.0; 2]),
        ];
        let sets = build_unsafe_sets(&cluster(&tri, &params), &tri, 1.0).unwrap();
        assert_eq!(sets.len(), 1);
        assert!(sets[0].ellipse.semi_minor >= 1.0 && sets[0].ellipse.semi_major >= 1.0);
        for o in &tri {
            assert!(contains(&sets[0].ellipse, o.position).inside);
        }
    }

    fn obstacles() -> impl Strategy<Value = Vec<Obstacle>> {
        proptest::collection::vec(
            ((-6.0..6.0f64, -6.0..6.0f64), (-1.5..1.5f64, -1.5..1.5f64)),
            0..10,
        )
        .prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, ((x, y), (vx, vy)))| ob(100 + i as u64, [x, y], [vx, vy]))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn clusters_partition_and_are_maximal(obs in obstacles(), margin in 0.2..2.0f64) {
            let params = ClusterParams { margin, ..PARAMS };
            let clusters = cluster(&obs, &params);
            let mut seen: Vec<u64> = clusters.iter().flat_map(|c| c.members.clone()).collect();
            seen.sort_unstable();
            let mut ids: Vec<u64> = obs.iter().map(|o| o.id).collect();
            ids.sort_unstable();
            prop_assert_eq!(seen, ids);
            let by_id = |id: u64| obs.iter().find(|o| o.id == id).unwrap();
            for (i, a) in clusters.iter().enumerate() {
                for b in clusters.iter().skip(i + 1) {
                    for &x in &a.members {
                        for &y in &b.members {
                            prop_assert!(!related(by_id(x), by_id(y), &params));
                        }
                    }
                }
                // Connected under the relation.
                let mut reached = vec![a.members[0]];
                let mut frontier = vec![a.members[0]];
                while let Some(x) = frontier.pop() {
                    for &y in &a.members {
                        if !reached.contains(&y) && related(by_id(x), by_id(y), &params) {
                            reached.push(y);
                            frontier.push(y);
                        }
                    }
                }
                prop_assert_eq!(reached.len(), a.members.len());
            }
        }

        #[test]
        fn shared_velocity_neighbours_stay_together(
            x in -5.0..5.0f64, y in -5.0..5.0f64, gap in 0.0..1.99f64, ang in 0.0..std::f64::consts::TAU,
            vx in -1.5..1.5f64, vy in -1.5..1.5f64,
        ) {
            let a = ob(1, [x, y], [vx, vy]);
            let b = ob(2, [x + gap * ang.cos(), y + gap * ang.sin()], [vx, vy]);
            prop_assert_eq!(cluster(&[a, b], &PARAMS).len(), 1);
        }

        #[test]
        fn smaller_margin_never_grows_clusters(obs in obstacles(), margin in 0.3..2.0f64, shrink in 0.1..1.0f64) {
            let big = cluster(&obs, &ClusterParams { margin, ..PARAMS });
            let small = cluster(&obs, &ClusterParams { margin: margin * shrink, ..PARAMS });
            for c in &small {
                prop_assert!(big.iter().any(|b| c.members.iter().all(|m| b.members.contains(m))));
            }
        }

        #[test]
        fn members_lie_inside_their_set(obs in obstacles(), margin in 0.2..2.0f64) {
            let params = ClusterParams { margin, ..PARAMS };
            let clusters = cluster(&obs, &params);
            let sets = build_unsafe_sets(&clusters, &obs, margin).unwrap();
            prop_assert_eq!(sets.len(), clusters.len());
            for s in &sets {
                prop_assert!(s.ellipse.semi_minor >= margin);
                for id in &s.member_ids {
                    let o = obs.iter().find(|o| o.id == *id).unwrap();
                    prop_assert!(contains(&s.ellipse, o.position).inside);
                }
            }
        }
    }
}
