//! Fuse visual and textual centroid similarity, threshold it, and merge
//! clusters into connected components.

use kec::knowledge::graph::{fuse_similarity, merge_clusters};
use kec::mapping::build_mapping;
use kec::synthetic::{RescueFixture, RescueParams, RESCUE_RATIO};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = RescueFixture::generate(RescueParams::default());
    let mapping = build_mapping(&f.images, &f.nouns, &f.noun_embs, RESCUE_RATIO, 5, 0)?;

    for threshold in [0.95, 0.8, 0.5] {
        let mut graph = fuse_similarity(&mapping, 0.8)?;
        let components = merge_clusters(&mut graph, threshold);
        let edges = graph.adjacency.iter().filter(|&&e| e).count() / 2;
        println!(
            "beta {threshold}: {edges} edges, {} components from {} clusters",
            components.len(),
            mapping.k
        );
    }

    let mut graph = fuse_similarity(&mapping, 0.8)?;
    for comp in merge_clusters(&mut graph, 0.8) {
        let first = &mapping.noun_sets[comp[0]];
        println!("  {comp:?}  e.g. {}", first.join(", "));
    }
    Ok(())
}
