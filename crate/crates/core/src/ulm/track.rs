//! Frame-to-frame microbubble linking by optimal assignment.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrackPoint {
    pub frame: usize,
    pub x: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: usize,
    pub points: Vec<TrackPoint>,
    /// Mean velocity `(vx, vz)` in m/s.
    pub mean_velocity: (f64, f64),
    pub mean_position: (f64, f64),
}

impl Track {
    pub fn new(id: usize, points: Vec<TrackPoint>, frame_rate: f64) -> Self {
        let n = points.len().max(1) as f64;
        let mean_position = (
            points.iter().map(|p| p.x).sum::<f64>() / n,
            points.iter().map(|p| p.z).sum::<f64>() / n,
        );
        let mean_velocity = match (points.first(), points.last()) {
            (Some(a), Some(b)) if b.frame > a.frame => {
                let dt = (b.frame - a.frame) as f64 / frame_rate;
                ((b.x - a.x) / dt, (b.z - a.z) / dt)
            }
            _ => (0.0, 0.0),
        };
        Self {
            id,
            points,
            mean_velocity,
            mean_position,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub x: f64,
    pub z: f64,
    pub correlation: f64,
}

impl Detection {
    pub fn at(x: f64, z: f64) -> Self {
        Self { x, z, correlation: 1.0 }
    }
}

/// Minimum-cost assignment of rows to columns; `None` entries are forbidden.
///
/// Maximizes the number of assigned pairs first, then minimizes their summed
/// cost. Returns the column chosen for each row.
pub fn hungarian(cost: &[Vec<Option<f64>>], cols: usize) -> Vec<Option<usize>> {
    let rows = cost.len();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let k = rows.max(cols);
    let max_cost = cost
        .iter()
        .flat_map(|r| r.iter().flatten())
        .fold(0.0f64, |m, &c| m.max(c.abs()));
    // Any solution with one more feasible pair is cheaper than all others.
    let big = (max_cost + 1.0) * (k as f64 + 1.0) * 4.0;
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i][j].unwrap_or(big)
        } else {
            big
        }
    };
    // Shortest augmenting path with potentials, 1-based indices.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut p = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=k {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=k {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols && cost[i - 1][j - 1].is_some() {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Euclidean-distance cost matrix in pixels with pairs beyond `max_link` forbidden.
pub fn link_costs(prev: &[(f64, f64)], next: &[Detection], pixel: f64, max_link: f64) -> Vec<Vec<Option<f64>>> {
    prev.iter()
        .map(|&(x, z)| {
            next.iter()
                .map(|d| {
                    let dist = ((d.x - x).powi(2) + (d.z - z).powi(2)).sqrt() / pixel;
                    (dist <= max_link).then_some(dist)
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LinkConfig {
    /// Maximum linking distance in pixels.
    pub max_link_dist: f64,
    /// Pixel size in meters.
    pub pixel_size: f64,
    pub min_track_len: usize,
    pub frame_rate: f64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            max_link_dist: 2.0,
            pixel_size: 1540.0 / 15.625e6 / 2.0,
            min_track_len: 16,
            frame_rate: 1000.0,
        }
    }
}

/// Links per-frame detections into tracks without gap filling.
pub fn link_tracks(detections: &[Vec<Detection>], cfg: &LinkConfig) -> Result<Vec<Track>> {
    if !(cfg.pixel_size > 0.0 && cfg.max_link_dist >= 0.0 && cfg.frame_rate > 0.0) {
        return Err(Error::Config("invalid linking parameters".into()));
    }
    let mut finished: Vec<Vec<TrackPoint>> = Vec::new();
    let mut active: Vec<Vec<TrackPoint>> = Vec::new();
    for (frame, dets) in detections.iter().enumerate() {
        let prev: Vec<(f64, f64)> = active
            .iter()
            .map(|t| {
                let p = t.last().unwrap();
                (p.x, p.z)
            })
            .collect();
        let costs = link_costs(&prev, dets, cfg.pixel_size, cfg.max_link_dist);
        let assign = hungarian(&costs, dets.len());
        let mut taken = vec![false; dets.len()];
        let mut next_active = Vec::with_capacity(dets.len());
        for (track, a) in active.drain(..).zip(assign) {
            match a {
                Some(j) => {
                    taken[j] = true;
                    let mut t = track;
                    t.push(TrackPoint { frame, x: dets[j].x, z: dets[j].z });
                    next_active.push(t);
                }
                None => finished.push(track),
            }
        }
        for (j, d) in dets.iter().enumerate() {
            if !taken[j] {
                next_active.push(vec![TrackPoint { frame, x: d.x, z: d.z }]);
            }
        }
        active = next_active;
    }
    finished.extend(active);
    finished.retain(|t| t.len() >= cfg.min_track_len);
    finished.sort_by(|a, b| {
        a[0].frame
            .cmp(&b[0].frame)
            .then(a[0].x.total_cmp(&b[0].x))
            .then(a[0].z.total_cmp(&b[0].z))
    });
    Ok(finished
        .into_iter()
        .enumerate()
        .map(|(id, pts)| Track::new(id, pts, cfg.frame_rate))
        .collect())
}

/// CSV with header `track_id,frame,x,z`.
pub fn write_tracks_csv(path: impl AsRef<Path>, tracks: &[Track]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("track_id,frame,x,z\n");
    for t in tracks {
        for p in &t.points {
            out.push_str(&format!("{},{},{:e},{:e}\n", t.id, p.frame, p.x, p.z));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(max_link: f64, min_len: usize) -> LinkConfig {
        LinkConfig {
            max_link_dist: max_link,
            pixel_size: 1.0,
            min_track_len: min_len,
            frame_rate: 100.0,
        }
    }

    /// Best (cardinality, -cost) over all partial injective assignments.
    fn brute_force(cost: &[Vec<Option<f64>>], cols: usize) -> (usize, f64) {
        fn rec(i: usize, cost: &[Vec<Option<f64>>], used: &mut Vec<bool>, n: usize, c: f64, best: &mut (usize, f64)) {
            if i == cost.len() {
                if n > best.0 || (n == best.0 && c < best.1) {
                    *best = (n, c);
                }
                return;
            }
            rec(i + 1, cost, used, n, c, best);
            for j in 0..used.len() {
                if let (false, Some(w)) = (used[j], cost[i][j]) {
                    used[j] = true;
                    rec(i + 1, cost, used, n + 1, c + w, best);
                    used[j] = false;
                }
            }
        }
        let mut best = (0, 0.0);
        rec(0, cost, &mut vec![false; cols], 0, 0.0, &mut best);
        best
    }

    fn score(cost: &[Vec<Option<f64>>], a: &[Option<usize>]) -> (usize, f64) {
        let mut n = 0;
        let mut c = 0.0;
        for (i, j) in a.iter().enumerate() {
            if let Some(j) = j {
                n += 1;
                c += cost[i][*j].unwrap();
            }
        }
        (n, c)
    }

    #[test]
    fn straight_run_is_one_track() {
        let dets: Vec<Vec<Detection>> = (0..20).map(|f| vec![Detection::at(f as f64 * 0.5, 3.0)]).collect();
        let tracks = link_tracks(&dets, &cfg(2.0, 16)).unwrap();
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].len(), 20);
        assert!((tracks[0].mean_velocity.0 - 50.0).abs() < 1e-9);
    }

    #[test]
    fn short_trajectory_is_discarded() {
        let dets: Vec<Vec<Detection>> = (0..10).map(|f| vec![Detection::at(f as f64, 0.0)]).collect();
        assert!(link_tracks(&dets, &cfg(2.0, 16)).unwrap().is_empty());
    }

    #[test]
    fn no_gap_filling() {
        let mut dets: Vec<Vec<Detection>> = (0..10).map(|_| vec![Detection::at(0.0, 0.0)]).collect();
        dets[5].clear();
        let tracks = link_tracks(&dets, &cfg(2.0, 1)).unwrap();
        assert_eq!(tracks.iter().map(|t| t.len()).collect::<Vec<_>>(), vec![5, 4]);
    }

    #[test]
    fn crossing_bubbles_follow_the_optimum() {
        let dets = vec![
            vec![Detection::at(0.0, 0.0), Detection::at(1.6, 0.0)],
            vec![Detection::at(0.9, 0.05), Detection::at(0.7, 0.0)],
        ];
        let prev = [(0.0, 0.0), (1.6, 0.0)];
        let costs = link_costs(&prev, &dets[1], 1.0, 2.0);
        let a = hungarian(&costs, 2);
        let best = brute_force(&costs, 2);
        let got = score(&costs, &a);
        assert_eq!(got.0, best.0);
        assert!((got.1 - best.1).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn hungarian_matches_exhaustive_search(
            pts in prop::collection::vec(prop::collection::vec((0.0f64..4.0, 0.0f64..4.0), 0..=5), 2),
        ) {
            let prev: Vec<(f64, f64)> = pts[0].clone();
            let next: Vec<Detection> = pts[1].iter().map(|&(x, z)| Detection::at(x, z)).collect();
            let costs = link_costs(&prev, &next, 1.0, 2.0);
            let a = hungarian(&costs, next.len());
            let mut seen = std::collections::HashSet::new();
            for j in a.iter().flatten() {
                prop_assert!(seen.insert(*j));
            }
            let best = brute_force(&costs, next.len());
            let got = score(&costs, &a);
            prop_assert_eq!(got.0, best.0);
            prop_assert!((got.1 - best.1).abs() < 1e-9);
        }

        #[test]
        fn linking_ignores_detection_order(
            seed in any::<u64>(),
        ) {
            let mut state = seed;
            let mut next = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            };
            let starts: Vec<(f64, f64)> = (0..4).map(|_| (next() * 20.0, next() * 20.0)).collect();
            let dets: Vec<Vec<Detection>> = (0..12)
                .map(|f| starts.iter().map(|&(x, z)| Detection::at(x + 0.4 * f as f64 + 0.1 * next(), z + 0.1 * next())).collect())
                .collect();
            let mut shuffled = dets.clone();
            for d in shuffled.iter_mut() {
                d.reverse();
                d.rotate_left(1);
            }
            let a = link_tracks(&dets, &cfg(2.0, 2)).unwrap();
            let b = link_tracks(&shuffled, &cfg(2.0, 2)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
