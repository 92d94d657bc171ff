//! Spherical k-means with k-means++ seeding and several restarts.

use kec::kmeans::{fit_traced, KMeansConfig};
use kec::synthetic::{RescueFixture, RescueParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fixture = RescueFixture::generate(RescueParams::default());
    let config = KMeansConfig {
        n_redo: 8,
        ..KMeansConfig::new(4, 42)
    };
    let (result, traces) = fit_traced(&fixture.images, &config)?;

    println!(
        "best of {} restarts: #{} with objective {:.4} after {} iterations",
        traces.len(),
        result.restart,
        result.objective,
        result.iterations_run
    );
    for (i, t) in traces.iter().enumerate() {
        println!(
            "  restart {i}: {:.4} -> {:.4} in {} steps",
            t.objectives.first().unwrap(),
            t.objectives.last().unwrap(),
            t.objectives.len()
        );
    }
    let mut sizes = vec![0; config.k];
    for &a in &result.assignments {
        sizes[a] += 1;
    }
    println!("cluster sizes: {sizes:?}");
    Ok(())
}
