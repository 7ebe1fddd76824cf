//! Voxel-downsampled edge and plane maps with exact k-nearest-neighbour
//! search.

use std::collections::{BinaryHeap, HashMap};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::Vec3;

/// A neighbour returned by a query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub point: Vec3,
    /// Insertion order of the point within its cloud.
    pub index: usize,
    pub dist: f64,
}

/// Static 3-d tree over a point list.
#[derive(Clone, Debug, Default)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Point indices arranged so that every subtree occupies a contiguous
    /// range with its splitting point in the middle.
    order: Vec<usize>,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl KdTree {
    pub fn build(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        build_rec(&points, &mut order, 0);
        KdTree { points, order }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Up to `k` points within `max_dist` of `q`, ordered by distance and
    /// then by index.
    pub fn nearest_k(&self, q: &Vec3, k: usize, max_dist: f64) -> Vec<Neighbor> {
        if k == 0 || self.points.is_empty() || !(max_dist >= 0.0) {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(q, k, max_dist * max_dist, 0, self.order.len(), 0, &mut heap);
        let mut out: Vec<HeapItem> = heap.into_vec();
        out.sort();
        out.into_iter()
            .map(|HeapItem(d2, i)| Neighbor {
                point: self.points[i],
                index: i,
                dist: d2.sqrt(),
            })
            .collect()
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        q: &Vec3,
        k: usize,
        max_d2: f64,
        lo: usize,
        hi: usize,
        depth: usize,
        heap: &mut BinaryHeap<HeapItem>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let p = &self.points[idx];
        let d2 = (p - q).norm_squared();
        if d2 <= max_d2 {
            let item = HeapItem(d2, idx);
            if heap.len() < k {
                heap.push(item);
            } else if item < *heap.peek().expect("heap is full") {
                heap.pop();
                heap.push(item);
            }
        }
        let axis = depth % 3;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(q, k, max_d2, near.0, near.1, depth + 1, heap);
        let plane = diff * diff;
        let bound = if heap.len() < k {
            max_d2
        } else {
            heap.peek().expect("heap is full").0.min(max_d2)
        };
        if plane <= bound {
            self.search(q, k, max_d2, far.0, far.1, depth + 1, heap);
        }
    }
}

fn build_rec(points: &[Vec3], order: &mut [usize], depth: usize) {
    if order.len() <= 1 {
        return;
    }
    let axis = depth % 3;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
    });
    let (left, right) = order.split_at_mut(mid);
    build_rec(points, left, depth + 1);
    build_rec(points, &mut right[1..], depth + 1);
}

#[derive(Clone, Debug)]
struct Cell {
    sum: Vec3,
    count: u32,
    created: u64,
}

impl Cell {
    fn centroid(&self) -> Vec3 {
        if self.count == 1 {
            self.sum
        } else {
            self.sum / self.count as f64
        }
    }
}

/// Point cloud keeping one centroid per occupied voxel.
#[derive(Clone, Debug)]
pub struct VoxelCloud {
    voxel: f64,
    cells: HashMap<[i64; 3], Cell>,
    next_id: u64,
    tree: KdTree,
    dirty: bool,
}

impl VoxelCloud {
    pub fn new(voxel: f64) -> Self {
        assert!(voxel > 0.0, "voxel size must be positive");
        VoxelCloud {
            voxel,
            cells: HashMap::new(),
            next_id: 0,
            tree: KdTree::default(),
            dirty: false,
        }
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn key(&self, p: &Vec3) -> [i64; 3] {
        [
            (p.x / self.voxel).floor() as i64,
            (p.y / self.voxel).floor() as i64,
            (p.z / self.voxel).floor() as i64,
        ]
    }

    /// Adds points, merging those that share a voxel into its centroid.
    /// Returns how many non-finite points were rejected.
    pub fn insert(&mut self, points: &[Vec3]) -> usize {
        let mut rejected = 0;
        for p in points {
            if !p.iter().all(|v| v.is_finite()) {
                rejected += 1;
                continue;
            }
            let key = self.key(p);
            let id = self.next_id;
            let cell = self.cells.entry(key).or_insert_with(|| Cell {
                sum: Vec3::zeros(),
                count: 0,
                created: id,
            });
            if cell.count == 0 {
                self.next_id += 1;
            }
            cell.sum += p;
            cell.count += 1;
        }
        self.dirty = true;
        rejected
    }

    /// Drops voxels whose centroid lies farther than `radius` from `center`.
    pub fn retain_within(&mut self, center: &Vec3, radius: f64) {
        let before = self.cells.len();
        self.cells
            .retain(|_, c| (c.centroid() - center).norm() <= radius);
        if self.cells.len() != before {
            self.dirty = true;
        }
    }

    /// Centroids in voxel creation order.
    pub fn points(&self) -> Vec<Vec3> {
        let mut cells: Vec<&Cell> = self.cells.values().collect();
        cells.sort_by_key(|c| c.created);
        cells.iter().map(|c| c.centroid()).collect()
    }

    /// Rebuilds the search index if the cloud changed since the last build.
    pub fn rebuild(&mut self) {
        if self.dirty {
            self.tree = KdTree::build(self.points());
            self.dirty = false;
        }
    }

    /// Exact k-NN over the index as of the last [`rebuild`](Self::rebuild).
    pub fn nearest_k(&self, q: &Vec3, k: usize, max_dist: f64) -> Vec<Neighbor> {
        debug_assert!(!self.dirty, "query on stale index");
        self.tree.nearest_k(q, k, max_dist)
    }
}

/// Centroid-per-voxel downsampling of a point list, in first-seen order.
pub fn downsample(points: &[Vec3], voxel: f64) -> Vec<Vec3> {
    let mut cloud = VoxelCloud::new(voxel);
    cloud.insert(points);
    cloud.points()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    Edge,
    Plane,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapParams {
    pub edge_voxel: f64,
    pub plane_voxel: f64,
    /// Voxels farther than this from the current position are dropped.
    pub window_radius: f64,
    /// Neighbours farther than this are not used as correspondences.
    pub max_dist: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        MapParams {
            edge_voxel: 0.4,
            plane_voxel: 0.8,
            window_radius: 100.0,
            max_dist: 1.0,
        }
    }
}

/// Local edge and plane maps in the world frame.
#[derive(Clone, Debug)]
pub struct FeatureMap {
    pub edges: VoxelCloud,
    pub planes: VoxelCloud,
    pub params: MapParams,
}

impl FeatureMap {
    pub fn new(params: MapParams) -> Self {
        FeatureMap {
            edges: VoxelCloud::new(params.edge_voxel),
            planes: VoxelCloud::new(params.plane_voxel),
            params,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty() && self.planes.is_empty()
    }

    pub fn cloud(&self, which: MapKind) -> &VoxelCloud {
        match which {
            MapKind::Edge => &self.edges,
            MapKind::Plane => &self.planes,
        }
    }

    /// Inserts world-frame points and rebuilds the affected index.
    pub fn insert(&mut self, points: &[Vec3], which: MapKind) -> usize {
        let cloud = match which {
            MapKind::Edge => &mut self.edges,
            MapKind::Plane => &mut self.planes,
        };
        let rejected = cloud.insert(points);
        cloud.rebuild();
        rejected
    }

    /// Applies the local-map window around `center` and rebuilds indices.
    pub fn window(&mut self, center: &Vec3) {
        let r = self.params.window_radius;
        self.edges.retain_within(center, r);
        self.planes.retain_within(center, r);
        self.edges.rebuild();
        self.planes.rebuild();
    }

    pub fn nearest_k(&self, which: MapKind, q: &Vec3, k: usize, max_dist: f64) -> Vec<Neighbor> {
        self.cloud(which).nearest_k(q, k, max_dist)
    }
}

/// Writes points as consecutive little-endian float32 `x y z` triplets.
pub fn export_points(path: &Path, points: &[Vec3]) -> Result<()> {
    let mut buf = Vec::with_capacity(points.len() * 12);
    for p in points {
        for v in p.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`export_points`].
pub fn import_points(path: &Path) -> Result<Vec<Vec3>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 12 != 0 {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            offset: (bytes.len() / 12 * 12) as u64,
            reason: "truncated float32 triplet".into(),
        });
    }
    Ok(bytes
        .chunks_exact(12)
        .map(|c| {
            let f = |i: usize| f32::from_le_bytes(c[i..i + 4].try_into().expect("4 bytes")) as f64;
            Vec3::new(f(0), f(4), f(8))
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &[Vec3], q: &Vec3, k: usize, max_dist: f64) -> Vec<(f64, usize)> {
        let mut all: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| ((p - q).norm_squared(), i))
            .filter(|(d2, _)| *d2 <= max_dist * max_dist)
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> Vec<Vec3> {
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                    rng.random_range(-extent..extent),
                )
            })
            .collect()
    }

    #[test]
    fn insert_then_query_same_point() {
        let mut m = FeatureMap::new(MapParams::default());
        let p = Vec3::new(1.0, 2.0, 3.0);
        m.insert(&[p], MapKind::Edge);
        let n = m.nearest_k(MapKind::Edge, &p, 1, 1.0);
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].dist, 0.0);
    }

    #[test]
    fn two_points_in_one_voxel_merge_to_centroid() {
        let mut c = VoxelCloud::new(0.4);
        c.insert(&[Vec3::new(0.1, 0.1, 0.1), Vec3::new(0.3, 0.1, 0.1)]);
        assert_eq!(c.points(), vec![Vec3::new(0.2, 0.1, 0.1)]);
    }

    #[test]
    fn non_finite_points_rejected() {
        let mut c = VoxelCloud::new(0.4);
        let rej = c.insert(&[Vec3::new(f64::NAN, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)]);
        assert_eq!(rej, 1);
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn empty_map_returns_nothing() {
        let t = KdTree::build(Vec::new());
        assert!(t.nearest_k(&Vec3::zeros(), 3, 10.0).is_empty());
    }

    #[test]
    fn single_point_map() {
        let p = Vec3::new(-4.0, 0.5, 2.0);
        let t = KdTree::build(vec![p]);
        for q in [Vec3::zeros(), Vec3::new(100.0, 3.0, -2.0)] {
            let n = t.nearest_k(&q, 3, f64::INFINITY);
            assert_eq!(n.len(), 1);
            assert_eq!(n[0].point, p);
        }
    }

    #[test]
    fn equidistant_tie_uses_insertion_order() {
        let t = KdTree::build(vec![
            Vec3::new(5.0, 5.0, 5.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
        ]);
        let n = t.nearest_k(&Vec3::zeros(), 2, 10.0);
        assert_eq!(n.iter().map(|x| x.index).collect::<Vec<_>>(), vec![1, 2]);
        let t = KdTree::build(vec![Vec3::new(-1.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)]);
        let n = t.nearest_k(&Vec3::zeros(), 2, 10.0);
        assert_eq!(n.iter().map(|x| x.index).collect::<Vec<_>>(), vec![0, 1]);
    }

    #[test]
    fn matches_brute_force_on_10k_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts = random_points(&mut rng, 10_000, 20.0);
        let t = KdTree::build(pts.clone());
        for _ in 0..1000 {
            let q = random_points(&mut rng, 1, 22.0)[0];
            let got: Vec<(f64, usize)> = t
                .nearest_k(&q, 5, f64::INFINITY)
                .iter()
                .map(|n| ((n.point - q).norm_squared(), n.index))
                .collect();
            assert_eq!(got, brute(&pts, &q, 5, f64::INFINITY));
        }
    }

    #[test]
    fn windowing_drops_far_voxels() {
        let mut m = FeatureMap::new(MapParams::default());
        m.insert(&[Vec3::new(10.0, 0.0, 0.0), Vec3::new(150.0, 0.0, 0.0)], MapKind::Plane);
        m.window(&Vec3::zeros());
        assert_eq!(m.planes.points(), vec![Vec3::new(10.0, 0.0, 0.0)]);
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let pts = vec![Vec3::new(1.5, -2.25, 3.0), Vec3::new(0.0, 0.5, -7.0)];
        export_points(&path, &pts).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 24);
        assert_eq!(import_points(&path).unwrap(), pts);
    }

    proptest! {
        #[test]
        fn knn_exact_and_within_gate(
            seed in any::<u64>(),
            n in 1usize..400,
            k in 1usize..8,
            max_dist in 0.1f64..8.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // coarse grid coordinates force many exact distance ties
            let pts: Vec<Vec3> = (0..n)
                .map(|_| Vec3::new(
                    rng.random_range(-5i32..5) as f64,
                    rng.random_range(-5i32..5) as f64,
                    rng.random_range(-2i32..2) as f64,
                ))
                .collect();
            let t = KdTree::build(pts.clone());
            let q = Vec3::new(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0), 0.0);
            let got = t.nearest_k(&q, k, max_dist);
            for nb in &got {
                prop_assert!(nb.dist <= max_dist);
            }
            let got: Vec<(f64, usize)> =
                got.iter().map(|nb| ((nb.point - q).norm_squared(), nb.index)).collect();
            prop_assert_eq!(got, brute(&pts, &q, k, max_dist));
        }

        #[test]
        fn downsample_is_idempotent(seed in any::<u64>(), n in 0usize..500, voxel in 0.1f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = random_points(&mut rng, n, 5.0);
            let once = downsample(&pts, voxel);
            let twice = downsample(&once, voxel);
            prop_assert_eq!(once, twice);
        }
    }
}
