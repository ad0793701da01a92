//! SIFT-like 128-d descriptors and batched nearest-neighbor matching.

use nalgebra::DMatrix;

pub const DESCRIPTOR_LEN: usize = 128;

pub type Descriptor = [f32; DESCRIPTOR_LEN];

pub fn distance_sq(a: &Descriptor, b: &Descriptor) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn distance(a: &Descriptor, b: &Descriptor) -> f32 {
    distance_sq(a, b).sqrt()
}

/// Scale to unit length; zero vectors are left unchanged.
pub fn normalize(d: &mut Descriptor) {
    let n = d.iter().map(|x| x * x).sum::<f32>().sqrt();
    if n > 0.0 {
        d.iter_mut().for_each(|x| *x /= n);
    }
}

/// Descriptors stored as columns, so all pairwise distances between two sets
/// reduce to one matrix product.
#[derive(Debug, Clone)]
pub struct DescriptorMatrix {
    data: DMatrix<f32>,
    norms: Vec<f32>,
}

impl DescriptorMatrix {
    pub fn from_descriptors<'a>(iter: impl IntoIterator<Item = &'a Descriptor>) -> Self {
        let cols: Vec<&Descriptor> = iter.into_iter().collect();
        let mut data = DMatrix::<f32>::zeros(DESCRIPTOR_LEN, cols.len());
        for (j, d) in cols.iter().enumerate() {
            data.column_mut(j).copy_from_slice(&d[..]);
        }
        let norms = cols.iter().map(|d| d.iter().map(|x| x * x).sum()).collect();
        Self { data, norms }
    }

    pub fn len(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    /// Squared distances, `self.len() × other.len()`.
    pub fn distances_sq(&self, other: &DescriptorMatrix) -> DMatrix<f32> {
        let mut d = self.data.tr_mul(&other.data);
        for j in 0..other.len() {
            for i in 0..self.len() {
                d[(i, j)] = (self.norms[i] + other.norms[j] - 2.0 * d[(i, j)]).max(0.0);
            }
        }
        d
    }
}

/// Nearest and second-nearest entry of `db` for one query row of a distance
/// matrix: `(index, d1², d2²)`.
fn two_nearest_in_row(d: &DMatrix<f32>, row: usize) -> Option<(usize, f32, f32)> {
    let mut best = (usize::MAX, f32::INFINITY);
    let mut second = f32::INFINITY;
    for j in 0..d.ncols() {
        let v = d[(row, j)];
        if v < best.1 {
            second = best.1;
            best = (j, v);
        } else if v < second {
            second = v;
        }
    }
    (best.0 != usize::MAX).then_some((best.0, best.1, second))
}

/// Nearest neighbor in `db` for each query, accepted when the distance is
/// below `max_distance` and passes the ratio test against the runner-up.
pub fn match_ratio(
    queries: &DescriptorMatrix,
    db: &DescriptorMatrix,
    max_distance: f32,
    ratio: f32,
) -> Vec<Option<(usize, f32)>> {
    if db.is_empty() {
        return vec![None; queries.len()];
    }
    let d = queries.distances_sq(db);
    (0..queries.len())
        .map(|i| {
            let (j, d1, d2) = two_nearest_in_row(&d, i)?;
            let d1s = d1.sqrt();
            (d1s < max_distance && d1s < ratio * d2.sqrt()).then_some((j, d1s))
        })
        .collect()
}

/// Pairs `(i, j)` that are each other's nearest neighbor and closer than
/// `max_distance`, ordered by `i`.
pub fn mutual_nearest(a: &DescriptorMatrix, b: &DescriptorMatrix, max_distance: f32) -> Vec<(usize, usize, f32)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let d = a.distances_sq(b);
    let mut best_for_b = vec![(usize::MAX, f32::INFINITY); b.len()];
    let mut best_for_a = vec![(usize::MAX, f32::INFINITY); a.len()];
    for j in 0..b.len() {
        for i in 0..a.len() {
            let v = d[(i, j)];
            if v < best_for_a[i].1 {
                best_for_a[i] = (j, v);
            }
            if v < best_for_b[j].1 {
                best_for_b[j] = (i, v);
            }
        }
    }
    let max2 = max_distance * max_distance;
    best_for_a
        .iter()
        .enumerate()
        .filter(|(i, (j, v))| *j != usize::MAX && best_for_b[*j].0 == *i && *v < max2)
        .map(|(i, (j, v))| (i, *j, v.sqrt()))
        .collect()
}

/// Distance from each descriptor to its nearest other descriptor in the set.
pub fn nearest_neighbor_distances(set: &DescriptorMatrix) -> Vec<f32> {
    if set.len() < 2 {
        return Vec::new();
    }
    let d = set.distances_sq(set);
    (0..set.len())
        .map(|i| {
            (0..set.len())
                .filter(|&j| j != i)
                .map(|j| d[(i, j)])
                .fold(f32::INFINITY, f32::min)
                .sqrt()
        })
        .collect()
}

pub(crate) fn median(values: &mut [f32]) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f32::total_cmp);
    Some(values[values.len() / 2])
}
