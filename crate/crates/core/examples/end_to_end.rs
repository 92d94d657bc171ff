//! Run the whole pipeline on the synthetic fixture and leave a config file
//! behind for the `kec` command line.
//!
//! ```text
//! cargo run --example end_to_end -- /tmp/kec-demo
//! cargo run --bin kec -- run --config /tmp/kec-demo/config.json
//! ```

use std::path::PathBuf;

use kec::pipeline::Pipeline;
use kec::synthetic::{rescue_config, RescueFixture, RescueParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("kec-demo"));
    let fixture = RescueFixture::generate(RescueParams::default());
    let paths = fixture.write_to(&root.join("data"))?;
    let config = rescue_config(&paths, &root.join("out"), 0);
    std::fs::write(root.join("config.json"), config.to_json())?;

    let pipeline = Pipeline::new(config)?;
    let outcome = pipeline.run_all()?;
    for rec in &outcome.manifest.stages {
        println!(
            "{:<10} {:?} {:.2}s, {} live / {} cached LLM calls, {} outputs",
            rec.stage.as_str(),
            rec.status,
            rec.seconds,
            rec.llm_live,
            rec.llm_cached,
            rec.outputs.len()
        );
    }
    if let Some(report) = outcome.report {
        println!("{}", report.to_json_line(false));
    }
    println!("artifacts in {}", pipeline.output_dir().display());
    println!("config at {}", root.join("config.json").display());
    Ok(())
}
