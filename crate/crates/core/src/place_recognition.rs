//! Vocabulary tree, TF-IDF bag-of-words vectors and an inverted-index
//! database of submaps.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptor::{distance_sq, Descriptor, DESCRIPTOR_LEN};

const VOCAB_MAGIC: &[u8; 8] = b"SMVOCAB\n";
const VOCAB_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PlaceError {
    #[error("no training descriptors")]
    EmptySample,
    #[error("branching factor must be at least 2, got {0}")]
    BranchingTooSmall(usize),
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("submap {0} is already in the database")]
    DuplicateSubmap(u64),
    #[error("vocabulary file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    center: Descriptor,
    children: Vec<u32>,
    word: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabularyTree {
    branching: usize,
    depth: usize,
    seed: u64,
    nodes: Vec<Node>,
    idf: Vec<f64>,
}

/// Sparse word histogram with TF-IDF weights summing to one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BowVector {
    pub weights: BTreeMap<u32, f64>,
}

impl BowVector {
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn l1_norm(&self) -> f64 {
        self.weights.values().map(|w| w.abs()).sum()
    }

    /// `(2 − ‖a − b‖₁) / 2` for normalized vectors; computed here from the
    /// full union of words.
    pub fn similarity(&self, other: &BowVector) -> f64 {
        let mut diff = 0.0;
        for (w, a) in &self.weights {
            diff += (a - other.weights.get(w).copied().unwrap_or(0.0)).abs();
        }
        for (w, b) in &other.weights {
            if !self.weights.contains_key(w) {
                diff += b.abs();
            }
        }
        (self.l1_norm() + other.l1_norm() - diff) / 2.0
    }
}

fn kmeans(data: &[&Descriptor], k: usize, rng: &mut ChaCha8Rng) -> (Vec<Descriptor>, Vec<usize>) {
    // k-means++ seeding over distinct points.
    let mut centers: Vec<Descriptor> = vec![*data[rng.random_range(0..data.len())]];
    let mut d2: Vec<f32> = data.iter().map(|x| distance_sq(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().map(|&v| v as f64).sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = data.len() - 1;
        for (i, &v) in d2.iter().enumerate() {
            target -= v as f64;
            if target < 0.0 && v > 0.0 {
                pick = i;
                break;
            }
        }
        centers.push(*data[pick]);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(distance_sq(x, centers.last().unwrap()));
        }
    }
    let mut assign = vec![usize::MAX; data.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, x) in data.iter().enumerate() {
            let a = nearest(&centers, x);
            if a != assign[i] {
                assign[i] = a;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0f64; DESCRIPTOR_LEN]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (i, x) in data.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(x.iter()) {
                *s += *v as f64;
            }
        }
        for (c, (s, &n)) in centers.iter_mut().zip(sums.iter().zip(&counts)) {
            if n > 0 {
                for (cv, sv) in c.iter_mut().zip(s) {
                    *cv = (sv / n as f64) as f32;
                }
            }
        }
    }
    (centers, assign)
}

/// Index of the nearest center; ties go to the lowest index.
fn nearest(centers: &[Descriptor], x: &Descriptor) -> usize {
    let mut best = (0, f32::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = distance_sq(c, x);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub fn build_vocabulary(
    descriptors: &[Descriptor],
    branching: usize,
    depth: usize,
    seed: u64,
) -> Result<VocabularyTree, PlaceError> {
    if descriptors.is_empty() {
        return Err(PlaceError::EmptySample);
    }
    if branching < 2 {
        return Err(PlaceError::BranchingTooSmall(branching));
    }
    if depth == 0 {
        return Err(PlaceError::ZeroDepth);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = {
        let mut m = [0f64; DESCRIPTOR_LEN];
        for d in descriptors {
            for (a, b) in m.iter_mut().zip(d) {
                *a += *b as f64;
            }
        }
        let mut c = [0f32; DESCRIPTOR_LEN];
        for (a, b) in c.iter_mut().zip(m) {
            *a = (b / descriptors.len() as f64) as f32;
        }
        c
    };
    let mut tree = VocabularyTree {
        branching,
        depth,
        seed,
        nodes: vec![Node {
            center: mean,
            children: Vec::new(),
            word: None,
        }],
        idf: Vec::new(),
    };
    // Breadth-first so node and word numbering is stable.
    let all: Vec<&Descriptor> = descriptors.iter().collect();
    let mut queue = std::collections::VecDeque::from([(0usize, all, 0usize)]);
    let mut word_counts: Vec<usize> = Vec::new();
    while let Some((node, data, level)) = queue.pop_front() {
        let distinct = {
            let first = data[0];
            data.iter().any(|d| *d != first)
        };
        if level == depth || !distinct {
            tree.nodes[node].word = Some(word_counts.len() as u32);
            word_counts.push(data.len());
            continue;
        }
        let (centers, assign) = kmeans(&data, branching, &mut rng);
        let mut groups: Vec<Vec<&Descriptor>> = vec![Vec::new(); centers.len()];
        for (x, a) in data.iter().zip(assign) {
            groups[a].push(x);
        }
        for (center, group) in centers.into_iter().zip(groups) {
            if group.is_empty() {
                continue;
            }
            let id = tree.nodes.len();
            tree.nodes.push(Node {
                center,
                children: Vec::new(),
                word: None,
            });
            tree.nodes[node].children.push(id as u32);
            queue.push_back((id, group, level + 1));
        }
    }
    let n = descriptors.len() as f64;
    tree.idf = word_counts.iter().map(|&c| (n / c as f64).ln()).collect();
    Ok(tree)
}

impl VocabularyTree {
    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn word_count(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self, word: u32) -> f64 {
        self.idf[word as usize]
    }

    /// Center of each leaf, indexed by word id.
    pub fn leaf_centers(&self) -> Vec<Descriptor> {
        let mut out = vec![[0f32; DESCRIPTOR_LEN]; self.word_count()];
        for n in &self.nodes {
            if let Some(w) = n.word {
                out[w as usize] = n.center;
            }
        }
        out
    }

    /// Greedy descent through the nearest child at each level.
    pub fn quantize(&self, d: &Descriptor) -> u32 {
        let mut node = 0usize;
        loop {
            let n = &self.nodes[node];
            if let Some(w) = n.word {
                return w;
            }
            let mut best = (n.children[0] as usize, f32::INFINITY);
            for &c in &n.children {
                let dist = distance_sq(&self.nodes[c as usize].center, d);
                if dist < best.1 {
                    best = (c as usize, dist);
                }
            }
            node = best.0;
        }
    }

    pub fn bow(&self, descriptors: &[Descriptor]) -> BowVector {
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for d in descriptors {
            *counts.entry(self.quantize(d)).or_default() += 1;
        }
        let total = descriptors.len() as f64;
        let mut weights: BTreeMap<u32, f64> = counts
            .into_iter()
            .map(|(w, c)| (w, c as f64 / total * self.idf[w as usize]))
            .filter(|(_, v)| *v > 0.0)
            .collect();
        let sum: f64 = weights.values().sum();
        if sum > 0.0 {
            weights.values_mut().for_each(|v| *v /= sum);
        }
        BowVector { weights }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), PlaceError> {
        w.write_all(VOCAB_MAGIC)?;
        w.write_all(&VOCAB_VERSION.to_le_bytes())?;
        w.write_all(&(self.branching as u32).to_le_bytes())?;
        w.write_all(&(self.depth as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&(self.nodes.len() as u32).to_le_bytes())?;
        for n in &self.nodes {
            for v in n.center {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&n.word.map(|x| x as i64).unwrap_or(-1).to_le_bytes())?;
            w.write_all(&(n.children.len() as u32).to_le_bytes())?;
            for c in &n.children {
                w.write_all(&c.to_le_bytes())?;
            }
        }
        w.write_all(&(self.idf.len() as u32).to_le_bytes())?;
        for v in &self.idf {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, PlaceError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != VOCAB_MAGIC {
            return Err(PlaceError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VOCAB_VERSION {
            return Err(PlaceError::Format(format!("unsupported version {version}")));
        }
        let branching = read_u32(&mut r)? as usize;
        let depth = read_u32(&mut r)? as usize;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let seed = u64::from_le_bytes(b8);
        let n_nodes = read_u32(&mut r)? as usize;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            let mut center = [0f32; DESCRIPTOR_LEN];
            for v in center.iter_mut() {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                *v = f32::from_le_bytes(b);
            }
            r.read_exact(&mut b8)?;
            let word = i64::from_le_bytes(b8);
            let nc = read_u32(&mut r)? as usize;
            let children = (0..nc).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>, _>>()?;
            if children.iter().any(|&c| c as usize >= n_nodes) {
                return Err(PlaceError::Format("child index out of range".into()));
            }
            nodes.push(Node {
                center,
                children,
                word: (word >= 0).then_some(word as u32),
            });
        }
        let n_words = read_u32(&mut r)? as usize;
        let mut idf = Vec::with_capacity(n_words);
        for _ in 0..n_words {
            r.read_exact(&mut b8)?;
            idf.push(f64::from_le_bytes(b8));
        }
        if nodes.is_empty() || nodes.iter().any(|n| n.word.is_some_and(|w| w as usize >= n_words)) {
            return Err(PlaceError::Format("inconsistent word table".into()));
        }
        Ok(Self {
            branching,
            depth,
            seed,
            nodes,
            idf,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PlaceError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PlaceError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, std::io::Error> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Submap BoW vectors with an inverted index from word to postings.
#[derive(Debug, Clone)]
pub struct SubmapDatabase {
    tree: std::sync::Arc<VocabularyTree>,
    postings: BTreeMap<u32, Vec<(u64, f64)>>,
    vectors: BTreeMap<u64, BowVector>,
}

impl SubmapDatabase {
    pub fn new(tree: std::sync::Arc<VocabularyTree>) -> Self {
        Self {
            tree,
            postings: BTreeMap::new(),
            vectors: BTreeMap::new(),
        }
    }

    pub fn tree(&self) -> &VocabularyTree {
        &self.tree
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, id: u64) -> Option<&BowVector> {
        self.vectors.get(&id)
    }

    pub fn posting_count(&self) -> usize {
        self.postings.values().map(Vec::len).sum()
    }

    pub fn postings(&self, word: u32) -> &[(u64, f64)] {
        self.postings.get(&word).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn add_submap(&mut self, id: u64, descriptors: &[Descriptor]) -> Result<BowVector, PlaceError> {
        let v = self.tree.bow(descriptors);
        self.add_vector(id, v.clone())?;
        Ok(v)
    }

    pub fn add_vector(&mut self, id: u64, v: BowVector) -> Result<(), PlaceError> {
        if self.vectors.contains_key(&id) {
            return Err(PlaceError::DuplicateSubmap(id));
        }
        for (&w, &x) in &v.weights {
            self.postings.entry(w).or_default().push((id, x));
        }
        self.vectors.insert(id, v);
        Ok(())
    }

    /// Submaps sharing at least one word with `v`, by descending score
    /// (ties by ascending id). For normalized vectors the score
    /// `(2 − ‖a − b‖₁)/2` equals the sum of per-word minima, so only the
    /// postings of the query's words are visited.
    pub fn query_vector(&self, v: &BowVector, exclude: Option<u64>) -> Vec<(u64, f64)> {
        let mut acc: BTreeMap<u64, f64> = BTreeMap::new();
        for (w, &q) in &v.weights {
            for &(id, x) in self.postings(*w) {
                if Some(id) == exclude {
                    continue;
                }
                *acc.entry(id).or_default() += q.min(x);
            }
        }
        let mut out: Vec<(u64, f64)> = acc.into_iter().collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    pub fn query(&self, descriptors: &[Descriptor], exclude: Option<u64>) -> Vec<(u64, f64)> {
        self.query_vector(&self.tree.bow(descriptors), exclude)
    }
}

/// Top `top_n` results whose score is at least `relative_floor` times the
/// best score.
pub fn select_candidates(ranked: &[(u64, f64)], top_n: usize, relative_floor: f64) -> Vec<(u64, f64)> {
    let Some(&(_, top)) = ranked.first() else {
        return Vec::new();
    };
    ranked
        .iter()
        .take(top_n)
        .filter(|(_, s)| *s > 0.0 && *s >= relative_floor * top)
        .copied()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::normalize;
    use rand_distr::{Distribution, Normal};

    fn random(rng: &mut ChaCha8Rng) -> Descriptor {
        let mut d = [0f32; DESCRIPTOR_LEN];
        d.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
        normalize(&mut d);
        d
    }

    fn noisy(base: &Descriptor, sigma: f32, rng: &mut ChaCha8Rng) -> Descriptor {
        let n = Normal::new(0.0, sigma).unwrap();
        let mut d = *base;
        d.iter_mut().for_each(|x| *x += n.sample(rng));
        normalize(&mut d);
        d
    }

    fn training(seed: u64, n: usize) -> Vec<Descriptor> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| random(&mut rng)).collect()
    }

    #[test]
    fn two_clusters_give_centroid_leaves() {
        let mut a = [0f32; DESCRIPTOR_LEN];
        a[0] = 1.0;
        let mut b = [0f32; DESCRIPTOR_LEN];
        b[1] = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = Vec::new();
        for _ in 0..20 {
            data.push(noisy(&a, 0.01, &mut rng));
            data.push(noisy(&b, 0.01, &mut rng));
        }
        let tree = build_vocabulary(&data, 2, 1, 7).unwrap();
        assert_eq!(tree.word_count(), 2);
        // Direct centroids of the two halves.
        let centroid = |near: &Descriptor| {
            let members: Vec<_> = data.iter().filter(|d| distance_sq(d, near) < 0.5).collect();
            let mut c = [0f64; DESCRIPTOR_LEN];
            for m in &members {
                for (x, y) in c.iter_mut().zip(m.iter()) {
                    *x += *y as f64;
                }
            }
            c.map(|x| (x / members.len() as f64) as f32)
        };
        let (ca, cb) = (centroid(&a), centroid(&b));
        let leaves = tree.leaf_centers();
        let matched = leaves.iter().all(|l| distance_sq(l, &ca) < 1e-10 || distance_sq(l, &cb) < 1e-10);
        assert!(matched);
        assert_ne!(tree.quantize(&a), tree.quantize(&b));
    }

    #[test]
    fn repeated_descriptor_is_single_word() {
        let d = training(4, 1)[0];
        let tree = build_vocabulary(&vec![d; 30], 10, 3, 0).unwrap();
        assert_eq!(tree.word_count(), 1);
        let other = training(5, 5);
        assert!(other.iter().all(|x| tree.quantize(x) == 0));
    }

    #[test]
    fn deterministic_and_round_trips() {
        let data = training(6, 2000);
        let a = build_vocabulary(&data, 10, 3, 42).unwrap();
        let b = build_vocabulary(&data, 10, 3, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.word_count() <= 1000);
        assert!(a.idf.iter().all(|&w| w >= 0.0));
        let mut bytes = Vec::new();
        a.write_to(&mut bytes).unwrap();
        let back = VocabularyTree::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, a);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(bytes, again);
        assert!(VocabularyTree::read_from(&bytes[..10]).is_err());
    }

    #[test]
    fn errors_on_bad_input() {
        assert!(matches!(build_vocabulary(&[], 10, 3, 0), Err(PlaceError::EmptySample)));
        assert!(matches!(
            build_vocabulary(&training(1, 5), 1, 3, 0),
            Err(PlaceError::BranchingTooSmall(1))
        ));
    }

    #[test]
    fn greedy_descent_exact_on_separated_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bases: Vec<_> = (0..9).map(|_| random(&mut rng)).collect();
        let data: Vec<_> = bases
            .iter()
            .flat_map(|b| (0..10).map(|_| noisy(b, 0.005, &mut rng)).collect::<Vec<_>>())
            .collect();
        let tree = build_vocabulary(&data, 3, 2, 1).unwrap();
        let leaves = tree.leaf_centers();
        for d in &data {
            let w = tree.quantize(d);
            let brute = nearest(&leaves, d);
            assert_eq!(w as usize, brute);
        }
        // A leaf center quantizes to itself.
        for (i, l) in leaves.iter().enumerate() {
            assert_eq!(tree.quantize(l) as usize, i);
        }
    }

    #[test]
    fn tie_goes_to_lowest_child() {
        let mut a = [0f32; DESCRIPTOR_LEN];
        a[0] = 1.0;
        let mut b = [0f32; DESCRIPTOR_LEN];
        b[1] = 1.0;
        let tree = build_vocabulary(&[a, b], 2, 1, 0).unwrap();
        let mut mid = [0f32; DESCRIPTOR_LEN];
        mid[0] = 0.5;
        mid[1] = 0.5;
        let first_child = tree.nodes[0].children[0] as usize;
        assert_eq!(tree.quantize(&mid), tree.nodes[first_child].word.unwrap());
    }

    fn database(n: usize, seed: u64) -> (SubmapDatabase, Vec<Vec<Descriptor>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = std::sync::Arc::new(build_vocabulary(&training(seed + 1, 3000), 10, 3, seed).unwrap());
        let mut db = SubmapDatabase::new(tree);
        let pool = training(seed + 2, 600);
        let mut sets = Vec::new();
        for id in 0..n {
            let set: Vec<_> = (0..rng.random_range(20..80))
                .map(|_| noisy(&pool[rng.random_range(0..pool.len())], 0.02, &mut rng))
                .collect();
            db.add_submap(id as u64, &set).unwrap();
            sets.push(set);
        }
        (db, sets)
    }

    #[test]
    fn postings_reconstruct_vectors() {
        let (db, _) = database(10, 10);
        assert_eq!(db.len(), 10);
        let mut rebuilt: BTreeMap<u64, BTreeMap<u32, f64>> = BTreeMap::new();
        for (w, list) in &db.postings {
            for &(id, x) in list {
                rebuilt.entry(id).or_default().insert(*w, x);
            }
        }
        for (id, v) in &db.vectors {
            assert_eq!(rebuilt.get(id).cloned().unwrap_or_default(), v.weights);
            assert!(v.is_empty() || (v.l1_norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_submap_and_duplicates() {
        let (mut db, _) = database(2, 11);
        let before = db.posting_count();
        let v = db.add_submap(50, &[]).unwrap();
        assert!(v.is_empty());
        assert_eq!(db.posting_count(), before);
        assert!(matches!(db.add_submap(50, &[]), Err(PlaceError::DuplicateSubmap(50))));
    }

    #[test]
    fn ranking_matches_brute_force() {
        let (db, sets) = database(20, 12);
        for (qi, set) in sets.iter().enumerate() {
            let q = db.tree().bow(set);
            let fast = db.query_vector(&q, Some(qi as u64));
            let mut brute: Vec<(u64, f64)> = db
                .vectors
                .iter()
                .filter(|(id, _)| **id != qi as u64)
                .map(|(id, v)| (*id, q.similarity(v)))
                .filter(|(_, s)| *s > 1e-15)
                .collect();
            brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            let ids_fast: Vec<u64> = fast.iter().map(|x| x.0).collect();
            let ids_brute: Vec<u64> = brute.iter().map(|x| x.0).collect();
            assert_eq!(ids_fast, ids_brute);
            for (a, b) in fast.iter().zip(&brute) {
                assert!((a.1 - b.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_similarity_and_disjoint() {
        let (mut db, sets) = database(5, 13);
        db.add_submap(100, &sets[2]).unwrap();
        let ranked = db.query(&sets[2], Some(2));
        assert_eq!(ranked[0].0, 100);
        assert!((ranked[0].1 - 1.0).abs() < 1e-12);
        let a = BowVector {
            weights: BTreeMap::from([(1, 0.5), (2, 0.5)]),
        };
        let b = BowVector {
            weights: BTreeMap::from([(3, 1.0)]),
        };
        assert_eq!(a.similarity(&b), 0.0);
        assert_eq!(a.similarity(&b), b.similarity(&a));
    }

    #[test]
    fn incremental_equals_rebuild() {
        let (db, sets) = database(8, 14);
        let mut rebuilt = SubmapDatabase::new(std::sync::Arc::new(db.tree().clone()));
        for (i, s) in sets.iter().enumerate().rev() {
            rebuilt.add_submap(i as u64, s).unwrap();
        }
        for s in &sets {
            assert_eq!(db.query(s, None), rebuilt.query(s, None));
        }
    }

    #[test]
    fn candidate_selection() {
        let ranked = vec![(1, 0.9), (2, 0.5), (3, 0.05), (4, 0.04)];
        assert_eq!(select_candidates(&ranked, 5, 0.1), vec![(1, 0.9), (2, 0.5)]);
        assert_eq!(select_candidates(&ranked, 1, 0.0), vec![(1, 0.9)]);
        assert!(select_candidates(&[], 5, 0.1).is_empty());
    }
}
