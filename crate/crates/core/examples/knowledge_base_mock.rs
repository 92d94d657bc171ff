//! Build a complete knowledge base offline: concept abstraction, uni- and
//! bi-concept attributes, neighbour selection, all against the mock backend.

use std::sync::Arc;

use kec::knowledge::graph::{fuse_similarity, merge_clusters};
use kec::knowledge::{
    abstract_concepts, assemble_knowledge_base, embed_attributes, embed_concepts,
    mine_bi_attributes, mine_uni_attributes_batch, select_neighbors, KnowledgeConfig,
    PromptSettings,
};
use kec::llm::{BackendConfig, LlmClient, MockBackend};
use kec::mapping::build_mapping;
use kec::synthetic::{RescueFixture, RescueParams, RESCUE_RATIO};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let f = RescueFixture::generate(RescueParams::default());
    let embedder = f.embedder();
    let mapping = build_mapping(&f.images, &f.nouns, &f.noun_embs, RESCUE_RATIO, 5, 0)?;
    let mut graph = fuse_similarity(&mapping, 0.8)?;
    let components = merge_clusters(&mut graph, 0.8);

    let client = LlmClient::new(Arc::new(MockBackend), &BackendConfig::default())?;
    let settings = PromptSettings::default();

    let (mut concepts, mut provenance) = abstract_concepts(&components, &mapping, &client, &settings)?;
    embed_concepts(&mut concepts, &embedder)?;

    let (uni, prov) = mine_uni_attributes_batch(&concepts, &client, &settings, 2)?;
    provenance.extend(prov);
    let mut uni: Vec<_> = uni.into_iter().flatten().collect();
    embed_attributes(&mut uni, &embedder)?;

    let selections = select_neighbors(&concepts, 0.8, 10)?;
    let mut bi = mine_bi_attributes(&selections, &concepts, &client, &settings, 1)?;
    embed_attributes(&mut bi.records, &embedder)?;
    provenance.extend(bi.provenance);

    let config = KnowledgeConfig {
        alpha: 0.8,
        merge_threshold: 0.8,
        neighbor_cumulative_threshold: 0.8,
        max_neighbors: 10,
        lambda1: 2,
        lambda2: 1,
        use_uni_attr: true,
        use_bi_attr: true,
        model: settings.model.clone(),
        temperature: settings.temperature,
        domain_hint: None,
    };
    let kb = assemble_knowledge_base(config, concepts, uni, bi.records, bi.pairs, provenance)?;

    println!("{} concepts, {} attributes, {} neighbour pairs", kb.num_concepts(), kb.attributes.len(), kb.neighbor_pairs.len());
    for c in kb.concepts.iter().take(3) {
        println!("- {} ({} clusters): {}", c.name, c.member_clusters.len(), c.description);
        for a in kb.attributes_of(c.id, true, true) {
            println!("    {:?} {}", a.kind, a.text);
        }
    }
    println!("LLM calls: {:?}", client.stats());
    Ok(())
}
