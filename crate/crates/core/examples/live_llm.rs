//! Ask a real OpenAI-compatible endpoint for one concept.
//!
//! Needs `KEC_LLM_API_KEY`; `KEC_LLM_BASE_URL` overrides the endpoint.
//! Without a key it prints what it would send and exits.

use std::sync::Arc;

use kec::knowledge::prompts::{concept_prompt, parse_concept};
use kec::llm::{BackendConfig, HttpBackend, LlmClient, PromptRequest, TemplateId, API_KEY_ENV};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let nouns: Vec<String> = ["heron", "egret", "stork", "crane", "ibis"].map(String::from).to_vec();
    let request = PromptRequest::new(TemplateId::Concept, concept_prompt(&nouns, None));

    if std::env::var(API_KEY_ENV).is_err() {
        println!("{API_KEY_ENV} is not set; prompt would be:\n\n{}", request.rendered_prompt);
        return Ok(());
    }
    let config = BackendConfig {
        cache_dir: Some(std::env::temp_dir().join("kec_live_cache")),
        ..BackendConfig::default()
    };
    let client = LlmClient::new(Arc::new(HttpBackend::from_config(&config)?), &config)?;
    let response = client.complete(&request)?;
    let (name, description) = parse_concept(&response.text)?;
    println!("{name}: {description}");
    println!("cached {}, attempt {}, {} ms", response.cached, response.attempt, response.latency_ms);
    Ok(())
}
