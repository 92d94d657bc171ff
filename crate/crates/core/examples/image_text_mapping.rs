//! Over-cluster the images and attach the best-matching nouns to each
//! cluster centroid.

use kec::mapping::{build_mapping, cluster_count};
use kec::synthetic::{RescueFixture, RescueParams, RESCUE_RATIO};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = RescueFixture::generate(RescueParams::default());
    println!(
        "{} images, ratio {RESCUE_RATIO} -> k = {}",
        f.images.rows(),
        cluster_count(f.images.rows(), RESCUE_RATIO)
    );
    let mapping = build_mapping(&f.images, &f.nouns, &f.noun_embs, RESCUE_RATIO, 5, 0)?;
    for (c, nouns) in mapping.noun_sets.iter().enumerate().take(8) {
        let size = mapping.image_assignments.iter().filter(|&&a| a == c).count();
        println!("cluster {c:>2} ({size:>3} images): {}", nouns.join(", "));
    }
    println!("...");
    Ok(())
}
