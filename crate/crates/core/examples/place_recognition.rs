//! Vocabulary tree training and submap retrieval by BoW similarity.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use submap_slam::descriptor::{normalize, Descriptor};
use submap_slam::place_recognition::{build_vocabulary, select_candidates, SubmapDatabase};
use submap_slam::simulation::random_descriptor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // Each place is a bag of 300 distinct features.
    let places: Vec<Vec<Descriptor>> = (0..20).map(|_| (0..300).map(|_| random_descriptor(&mut rng)).collect()).collect();
    let sample: Vec<Descriptor> = places.iter().flatten().step_by(2).copied().collect();
    let tree = build_vocabulary(&sample, 8, 3, 1)?;
    println!("vocabulary: {} words", tree.word_count());

    let mut db = SubmapDatabase::new(Arc::new(tree));
    for (id, place) in places.iter().enumerate() {
        db.add_submap(id as u64, place)?;
    }

    // Revisit place 13: half its features, slightly perturbed.
    let noise = Normal::new(0.0, 0.01)?;
    let query: Vec<Descriptor> = places[13]
        .iter()
        .step_by(2)
        .map(|d| {
            let mut q = *d;
            q.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
            normalize(&mut q);
            q
        })
        .collect();
    let ranked = db.query(&query, None);
    for (id, score) in ranked.iter().take(5) {
        println!("submap {id:2} score {score:.3}");
    }
    println!("candidates: {:?}", select_candidates(&ranked, 3, 0.5));
    Ok(())
}
