//! Ground a small hand-made knowledge base on a few images: attention over
//! concepts, the concept and attribute parts, and the concatenated feature.

use kec::grounding::{concat_features, ground, instantiate_attributes, GroundingFlags};
use kec::knowledge::{AttributeKind, AttributeRecord, Concept, KnowledgeBase, KnowledgeConfig};
use kec::tensorio::EmbeddingMatrix;

fn concept(id: usize, name: &str, emb: Vec<f32>) -> Concept {
    Concept {
        id,
        member_clusters: vec![id],
        merged_nouns: vec![name.to_string()],
        name: name.to_string(),
        description: format!("a {name}"),
        name_emb: emb.clone(),
        desc_emb: emb,
    }
}

fn attribute(text: &str, kind: AttributeKind, owners: Vec<usize>, emb: Vec<f32>) -> AttributeRecord {
    AttributeRecord {
        text: text.to_string(),
        kind,
        owners,
        embedding: emb,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kb = KnowledgeBase {
        config: KnowledgeConfig {
            alpha: 0.8,
            merge_threshold: 0.8,
            neighbor_cumulative_threshold: 0.8,
            max_neighbors: 10,
            lambda1: 1,
            lambda2: 1,
            use_uni_attr: true,
            use_bi_attr: true,
            model: "none".into(),
            temperature: 0.0,
            domain_hint: None,
        },
        concepts: vec![concept(0, "bird", vec![1.0, 0.0, 0.0]), concept(1, "mammal", vec![0.0, 1.0, 0.0])],
        attributes: vec![
            attribute("long legs", AttributeKind::Uni, vec![0], vec![0.6, 0.0, 0.8]),
            attribute("fur", AttributeKind::Uni, vec![1], vec![0.0, 0.6, 0.8]),
            attribute("near water", AttributeKind::Bi, vec![0, 1], vec![0.0, 0.0, 1.0]),
        ],
        neighbor_pairs: vec![[0, 1]],
        provenance: vec![],
    };
    kb.validate()?;

    let images = EmbeddingMatrix::from_rows(&[
        vec![0.9, 0.1, 0.424],
        vec![0.1, 0.9, 0.424],
        vec![0.6, 0.6, 0.529],
    ])?;
    let g = ground(&images, &kb, GroundingFlags::default(), 0.1)?;
    for i in 0..g.n {
        println!("image {i}: omega {:.3?} kappa {:.3?}", g.omega_row(i), g.kappa_row(i));
    }

    let per_attr = instantiate_attributes(&images, &kb, true, true)?;
    println!("instantiated attributes tensor: {} values (n x m x d)", per_attr.len());

    let concat = concat_features(&images, &g.kappa_matrix()?)?;
    println!("concatenated feature width {}", concat.dim());

    let off = GroundingFlags {
        use_uni: false,
        use_bi: false,
        ..GroundingFlags::default()
    };
    let g = ground(&images, &kb, off, 0.1)?;
    println!("attributes off: attribute part all zero = {}", g.attr_feat.iter().all(|&v| v == 0.0));
    Ok(())
}
