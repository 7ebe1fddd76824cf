//! Edge and planar feature selection from ring-ordered sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Vec3;

/// One LiDAR return.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanPoint {
    /// Sensor frame, meters.
    pub pos: Vec3,
    pub intensity: f32,
    pub ring: u16,
    /// Acquisition time as a fraction of the sweep period, in [0, 1).
    pub time: f32,
}

impl ScanPoint {
    pub fn new(pos: Vec3, ring: u16, time: f32) -> Self {
        ScanPoint {
            pos,
            intensity: 0.0,
            ring,
            time,
        }
    }

    pub fn range(&self) -> f64 {
        self.pos.norm()
    }
}

/// A sweep; points of one ring appear in acquisition order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawScan {
    pub points: Vec<ScanPoint>,
}

impl RawScan {
    pub fn new(points: Vec<ScanPoint>) -> Self {
        RawScan { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Drops non-finite points and points outside `[min_range, max_range]`.
    pub fn retain_ranges(&mut self, min_range: f64, max_range: f64) {
        self.points.retain(|p| {
            let r = p.range();
            p.pos.iter().all(|v| v.is_finite()) && r >= min_range && r <= max_range
        });
    }

    /// Point indices grouped by ring (ascending ring id), each ordered by
    /// time with ties kept in storage order.
    pub fn rings(&self) -> Vec<Vec<usize>> {
        let max_ring = self.points.iter().map(|p| p.ring).max();
        let Some(max_ring) = max_ring else {
            return Vec::new();
        };
        let mut rings = vec![Vec::new(); max_ring as usize + 1];
        for (i, p) in self.points.iter().enumerate() {
            rings[p.ring as usize].push(i);
        }
        for r in &mut rings {
            r.sort_by(|&a, &b| self.points[a].time.total_cmp(&self.points[b].time));
        }
        rings.retain(|r| !r.is_empty());
        rings
    }
}

/// Feature sets of one sweep; the two sets are disjoint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureScan {
    pub edges: Vec<ScanPoint>,
    pub planars: Vec<ScanPoint>,
}

impl FeatureScan {
    pub fn len(&self) -> usize {
        self.edges.len() + self.planars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.planars.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureParams {
    pub half_window: usize,
    pub sigma_threshold: f64,
    pub sectors: usize,
    pub max_edges_per_sector: usize,
    pub max_planars_per_sector: usize,
    /// Index radius suppressed around every selected point.
    pub suppression_radius: usize,
    pub min_range: f64,
    pub max_range: f64,
    /// Consecutive range jump (m) that marks the far side as occluded.
    pub occlusion_jump: f64,
    /// Spacing to both neighbours above `grazing_ratio * range` marks a
    /// point as seen at grazing incidence.
    pub grazing_ratio: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            half_window: 5,
            sigma_threshold: 0.1,
            sectors: 6,
            max_edges_per_sector: 2,
            max_planars_per_sector: 8,
            suppression_radius: 5,
            min_range: 0.1,
            max_range: 100.0,
            occlusion_jump: 0.3,
            grazing_ratio: 0.0141,
        }
    }
}

/// Local smoothness: mean distance to the `2 * half_window` ring neighbours
/// (centre excluded), divided by the centre's range.
pub fn smoothness(ring: &[Vec3], n: usize, half_window: usize) -> Result<f64> {
    if half_window == 0 || n < half_window || n + half_window >= ring.len() {
        return Err(Error::WindowOutOfRing {
            index: n,
            len: ring.len(),
            half_window,
        });
    }
    let p = ring[n];
    let range = p.norm();
    if range == 0.0 {
        return Err(Error::ZeroRange);
    }
    let sum: f64 = (n - half_window..=n + half_window)
        .filter(|&l| l != n)
        .map(|l| (ring[l] - p).norm())
        .sum();
    Ok(sum / ((2 * half_window) as f64 * range))
}

/// Selects edge and planar points per ring and azimuth sector.
pub fn extract(scan: &RawScan, params: &FeatureParams) -> FeatureScan {
    let mut valid = scan.clone();
    valid.retain_ranges(params.min_range, params.max_range);
    let rings = valid.rings();

    let per_ring = |idx: &Vec<usize>| -> (Vec<usize>, Vec<usize>) {
        let pts: Vec<Vec3> = idx.iter().map(|&i| valid.points[i].pos).collect();
        let (e, s) = extract_ring(&pts, params);
        (
            e.into_iter().map(|k| idx[k]).collect(),
            s.into_iter().map(|k| idx[k]).collect(),
        )
    };

    #[cfg(feature = "parallel")]
    let selected: Vec<(Vec<usize>, Vec<usize>)> = {
        use rayon::prelude::*;
        rings.par_iter().map(per_ring).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let selected: Vec<(Vec<usize>, Vec<usize>)> = rings.iter().map(per_ring).collect();

    let mut out = FeatureScan::default();
    for (e, s) in selected {
        out.edges.extend(e.into_iter().map(|i| valid.points[i]));
        out.planars.extend(s.into_iter().map(|i| valid.points[i]));
    }
    out
}

fn extract_ring(pts: &[Vec3], params: &FeatureParams) -> (Vec<usize>, Vec<usize>) {
    let w = params.half_window;
    let len = pts.len();
    if w == 0 || len < 2 * w + 2 || params.sectors == 0 {
        return (Vec::new(), Vec::new());
    }
    let sigma: Vec<f64> = (0..len)
        .map(|n| smoothness(pts, n, w).unwrap_or(f64::NAN))
        .collect();
    let ranges: Vec<f64> = pts.iter().map(|p| p.norm()).collect();

    // Unreliable returns: the hidden side of a depth jump, and returns whose
    // spacing to both neighbours is large compared to their range.
    let mut blocked = vec![false; len];
    for n in w..len - w - 1 {
        let jump = ranges[n] - ranges[n + 1];
        if jump.abs() > params.occlusion_jump {
            if jump > 0.0 {
                for b in &mut blocked[n.saturating_sub(w)..=n] {
                    *b = true;
                }
            } else {
                for b in &mut blocked[n + 1..=(n + 1 + w).min(len - 1)] {
                    *b = true;
                }
            }
        }
    }
    for n in 1..len - 1 {
        let lim = params.grazing_ratio * ranges[n];
        if (pts[n + 1] - pts[n]).norm() > lim && (pts[n] - pts[n - 1]).norm() > lim {
            blocked[n] = true;
        }
    }

    let first = w;
    let last = len - w; // exclusive
    let span = last - first;
    let mut edges = Vec::new();
    let mut planars = Vec::new();
    let mut picked = vec![false; len];
    let r = params.suppression_radius;

    let suppress = |picked: &mut [bool], k: usize| {
        let lo = k.saturating_sub(r);
        let hi = (k + r).min(len - 1);
        for p in &mut picked[lo..=hi] {
            *p = true;
        }
    };

    for s in 0..params.sectors {
        let start = first + span * s / params.sectors;
        let end = first + span * (s + 1) / params.sectors;
        if start >= end {
            continue;
        }
        let mut order: Vec<usize> = (start..end).filter(|&k| sigma[k].is_finite()).collect();

        order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));
        let mut taken = 0;
        for &k in &order {
            if taken >= params.max_edges_per_sector || sigma[k] <= params.sigma_threshold {
                break;
            }
            if picked[k] || blocked[k] {
                continue;
            }
            edges.push(k);
            taken += 1;
            suppress(&mut picked, k);
        }

        order.reverse();
        let mut taken = 0;
        for &k in &order {
            if taken >= params.max_planars_per_sector || sigma[k] >= params.sigma_threshold {
                break;
            }
            if picked[k] || blocked[k] {
                continue;
            }
            planars.push(k);
            taken += 1;
            suppress(&mut picked, k);
        }
    }
    edges.sort_unstable();
    planars.sort_unstable();
    (edges, planars)
}
