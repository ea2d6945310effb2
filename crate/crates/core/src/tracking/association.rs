use std::collections::HashMap;

/// Outcome of pairing measurements with existing tracks.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignment {
    /// `(track index, measurement index)` in the order pairs were accepted.
    pub pairs: Vec<(usize, usize)>,
    /// Measurement indices that start new tracks.
    pub births: Vec<usize>,
    /// Track indices that received no measurement this frame.
    pub unmatched_tracks: Vec<usize>,
}

/// Global greedy nearest-neighbour association.
///
/// All `(track, measurement)` pairs within `gate` are consumed in ascending
/// distance, ties broken by lower track id and then lower measurement index.
/// `tracks` holds `(id, predicted position)`.
pub fn greedy_match(
    measurements: &[[f64; 2]],
    tracks: &[(u64, [f64; 2])],
    gate: f64,
) -> Assignment {
    let mut candidates: Vec<(f64, u64, usize, usize)> = Vec::new();
    for (ti, (id, tp)) in tracks.iter().enumerate() {
        for (mi, m) in measurements.iter().enumerate() {
            let d = (m[0] - tp[0]).hypot(m[1] - tp[1]);
            if d <= gate {
                candidates.push((d, *id, mi, ti));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut track_used = vec![false; tracks.len()];
    let mut meas_used = vec![false; measurements.len()];
    let mut pairs = Vec::new();
    for (_, _, mi, ti) in candidates {
        if !track_used[ti] && !meas_used[mi] {
            track_used[ti] = true;
            meas_used[mi] = true;
            pairs.push((ti, mi));
        }
    }
    Assignment {
        pairs,
        births: (0..measurements.len()).filter(|i| !meas_used[*i]).collect(),
        unmatched_tracks: (0..tracks.len()).filter(|i| !track_used[*i]).collect(),
    }
}

/// A detection as seen by identity association.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentifiedDetection {
    pub detector_id: Option<u64>,
    pub box_area: f64,
}

/// Association by stable detector identity.
///
/// Duplicate ids within one frame keep the detection with the largest box;
/// detections without an id are ignored.
pub fn associate_by_id(detections: &[IdentifiedDetection], track_ids: &[u64]) -> Assignment {
    let mut best: HashMap<u64, usize> = HashMap::new();
    for (i, det) in detections.iter().enumerate() {
        let Some(id) = det.detector_id else {
            log::warn!("detection {i} has no detector id; ignored");
            continue;
        };
        match best.get(&id) {
            Some(&j) => {
                log::warn!("duplicate detector id {id} in one frame; keeping the larger box");
                if det.box_area > detections[j].box_area {
                    best.insert(id, i);
                }
            }
            None => {
                best.insert(id, i);
            }
        }
    }
    let mut chosen: Vec<(u64, usize)> = best.into_iter().collect();
    chosen.sort_unstable();

    let index_of: HashMap<u64, usize> = track_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (*id, i))
        .collect();
    let mut track_used = vec![false; track_ids.len()];
    let mut out = Assignment::default();
    for (id, mi) in chosen {
        match index_of.get(&id) {
            Some(&ti) => {
                track_used[ti] = true;
                out.pairs.push((ti, mi));
            }
            None => out.births.push(mi),
        }
    }
    out.unmatched_tracks = (0..track_ids.len()).filter(|i| !track_used[*i]).collect();
    out
}
