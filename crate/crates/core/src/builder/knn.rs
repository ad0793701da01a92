//! Static 3D kd-tree for k-nearest-neighbor queries and the statistical
//! outlier test built on it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::Vector3;

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    /// Point indices arranged as an implicit balanced tree.
    order: Vec<usize>,
    /// Split axis of the node at the middle of each subrange.
    axes: Vec<u8>,
}

#[derive(PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl KdTree {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build(&points, &mut order, &mut axes);
        Self { points, order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to `query` as `(squared distance, index)`,
    /// nearest first, skipping index `exclude`.
    pub fn nearest(&self, query: &Vector3<f64>, k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 {
            self.search(0, self.order.len(), query, k, exclude, &mut heap);
        }
        let mut out: Vec<(f64, usize)> = heap.into_iter().map(|Candidate(d, i)| (d, i)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    fn search(
        &self,
        lo: usize,
        hi: usize,
        q: &Vector3<f64>,
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let idx = self.order[mid];
        let axis = self.axes[mid] as usize;
        let p = &self.points[idx];
        if Some(idx) != exclude {
            let d = (p - q).norm_squared();
            if heap.len() < k {
                heap.push(Candidate(d, idx));
            } else if let Some(top) = heap.peek() {
                if Candidate(d, idx) < *top {
                    heap.pop();
                    heap.push(Candidate(d, idx));
                }
            }
        }
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(near.0, near.1, q, k, exclude, heap);
        let worst = heap.peek().map_or(f64::INFINITY, |c| c.0);
        if heap.len() < k || diff * diff <= worst {
            self.search(far.0, far.1, q, k, exclude, heap);
        }
    }
}

fn build(points: &[Vector3<f64>], order: &mut [usize], axes: &mut [u8]) {
    if order.is_empty() {
        return;
    }
    // Split on the axis of largest spread.
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let axis = (hi - lo).imax();
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
    axes[mid] = axis as u8;
    let (left, right) = order.split_at_mut(mid);
    let (laxes, raxes) = axes.split_at_mut(mid);
    build(points, left, laxes);
    build(points, &mut right[1..], &mut raxes[1..]);
}

/// Mean distance from each point to its `k` nearest other points, summed
/// nearest first.
pub fn mean_knn_distances(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
    let tree = KdTree::new(points.to_vec());
    (0..points.len())
        .map(|i| {
            let nn = tree.nearest(&points[i], k, Some(i));
            nn.iter().map(|(d, _)| d.sqrt()).sum::<f64>() / nn.len().max(1) as f64
        })
        .collect()
}

/// Indices whose mean kNN distance exceeds the mean of that statistic by
/// more than `sigma` standard deviations. No-op with `k + 1` or fewer points.
pub fn knn_outliers(points: &[Vector3<f64>], k: usize, sigma: f64) -> Vec<usize> {
    if points.len() <= k {
        return Vec::new();
    }
    threshold_outliers(&mean_knn_distances(points, k), sigma)
}

pub(crate) fn threshold_outliers(stat: &[f64], sigma: f64) -> Vec<usize> {
    let n = stat.len() as f64;
    let mean = stat.iter().sum::<f64>() / n;
    let var = stat.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let limit = mean + sigma * var.sqrt();
    stat.iter().enumerate().filter(|(_, s)| **s > limit).map(|(i, _)| i).collect()
}
