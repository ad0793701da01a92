use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::scenario::{SceneConfig, SceneKind};
use super::SimulationError;
use crate::descriptor::{normalize, Descriptor, DESCRIPTOR_LEN};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneLandmark {
    pub id: u32,
    pub position: Vector3<f64>,
    pub descriptor: Descriptor,
}

/// Landmark cloud with a uniform XY grid for visibility queries.
#[derive(Debug, Clone)]
pub struct Scene {
    pub landmarks: Vec<SceneLandmark>,
    pub max_height: f64,
    origin: f64,
    cell: f64,
    cells_per_side: usize,
    grid: Vec<Vec<u32>>,
}

const GRID_CELL: f64 = 20.0;

fn hash2(seed: u64, a: i64, b: i64) -> u64 {
    // splitmix64 over the combined key.
    let mut z = seed ^ (a as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Surface height of the scene at `(x, y)`.
pub fn surface_height(cfg: &SceneConfig, seed: u64, x: f64, y: f64) -> f64 {
    match cfg.kind {
        SceneKind::GridCity => {
            let pitch = cfg.block_size + cfg.street_width;
            let u = x + cfg.extent / 2.0;
            let v = y + cfg.extent / 2.0;
            let (bx, by) = ((u / pitch).floor(), (v / pitch).floor());
            let (lu, lv) = (u - bx * pitch, v - by * pitch);
            if lu < cfg.block_size && lv < cfg.block_size {
                let h = hash2(seed, bx as i64, by as i64);
                let frac = (h >> 11) as f64 / (1u64 << 53) as f64;
                cfg.max_height * (0.2 + 0.8 * frac)
            } else {
                0.0
            }
        }
        SceneKind::Heightfield => {
            let h = hash2(seed, 7, 11);
            let p1 = (h & 0xffff) as f64 / 65536.0 * std::f64::consts::TAU;
            let p2 = ((h >> 16) & 0xffff) as f64 / 65536.0 * std::f64::consts::TAU;
            let l = cfg.extent / 5.0;
            cfg.max_height
                * (0.5 + 0.25 * ((std::f64::consts::TAU * x / l + p1).sin() + (std::f64::consts::TAU * y / (0.7 * l) + p2).sin()))
        }
    }
}

pub fn random_descriptor(rng: &mut ChaCha8Rng) -> Descriptor {
    let mut d = [0f32; DESCRIPTOR_LEN];
    d.iter_mut().for_each(|x| *x = rng.sample::<f64, _>(StandardNormal) as f32);
    normalize(&mut d);
    d
}

pub fn generate_scene(cfg: &SceneConfig, seed: u64) -> Result<Scene, SimulationError> {
    if !(cfg.density > 0.0) {
        return Err(SimulationError::Config("scene.density must be positive".into()));
    }
    let count = (cfg.density * cfg.extent * cfg.extent).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = cfg.extent / 2.0;
    let landmarks: Vec<SceneLandmark> = (0..count)
        .map(|i| {
            let x = rng.random_range(-half..half);
            let y = rng.random_range(-half..half);
            let z = surface_height(cfg, seed, x, y);
            SceneLandmark {
                id: i as u32,
                position: Vector3::new(x, y, z),
                descriptor: random_descriptor(&mut rng),
            }
        })
        .collect();
    let cells_per_side = (cfg.extent / GRID_CELL).ceil().max(1.0) as usize;
    let mut grid = vec![Vec::new(); cells_per_side * cells_per_side];
    let mut scene = Scene {
        landmarks: Vec::new(),
        max_height: cfg.max_height,
        origin: -half,
        cell: GRID_CELL,
        cells_per_side,
        grid: Vec::new(),
    };
    for l in &landmarks {
        let (cx, cy) = scene.cell_of(l.position.x, l.position.y);
        grid[cy * cells_per_side + cx].push(l.id);
    }
    scene.landmarks = landmarks;
    scene.grid = grid;
    Ok(scene)
}

impl Scene {
    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let clamp = |v: f64| (((v - self.origin) / self.cell).floor().max(0.0) as usize).min(self.cells_per_side - 1);
        (clamp(x), clamp(y))
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Landmark indices inside the axis-aligned XY box, in ascending order.
    pub fn in_box(&self, min: (f64, f64), max: (f64, f64)) -> Vec<u32> {
        let (x0, y0) = self.cell_of(min.0, min.1);
        let (x1, y1) = self.cell_of(max.0, max.1);
        let mut out = Vec::new();
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                out.extend_from_slice(&self.grid[cy * self.cells_per_side + cx]);
            }
        }
        out.sort_unstable();
        out
    }
}
