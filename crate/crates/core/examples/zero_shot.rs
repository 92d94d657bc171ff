//! Zero-shot assignment: each image goes to the class whose prompt-ensemble
//! text embedding is nearest.

use kec::eval::{class_prompts, zero_shot_assign, EvalReport};
use kec::knowledge::TextEmbedder;
use kec::synthetic::{RescueFixture, RescueParams};
use kec::tensorio::{l2_normalize_rows, EmbeddingMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = RescueFixture::generate(RescueParams::default());
    let embedder = f.embedder();
    let classes = ["heron", "otter", "tulip", "anvil"];

    let mut rows = Vec::new();
    for class in classes {
        let prompts = class_prompts(class);
        let mut mean = vec![0.0f32; embedder.dim()];
        for p in &prompts {
            for (m, v) in mean.iter_mut().zip(embedder.embed(p)?) {
                *m += v / prompts.len() as f32;
            }
        }
        println!("{class}: {} prompts, e.g. {:?}", prompts.len(), prompts[0]);
        rows.push(mean);
    }
    let class_embs = l2_normalize_rows(&EmbeddingMatrix::from_rows(&rows)?)?;

    let pred = zero_shot_assign(&f.images, &class_embs)?;
    let report = EvalReport::compute(&pred, &f.labels)?;
    println!("zero-shot: {}", report.to_json_line(false));
    Ok(())
}
