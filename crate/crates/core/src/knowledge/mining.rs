use std::collections::{BTreeSet, HashSet};

use tracing::warn;

use super::embed::TextEmbedder;
use super::prompts::{self, ParseError};
use super::{
    AttributeKind, AttributeRecord, Concept, KnowledgeError, NeighborSelection, ProvenanceRecord,
};
use crate::llm::{
    sha256_hex, CompletionResponse, LlmClient, LlmError, PromptRequest, TemplateId,
    DEFAULT_MAX_TOKENS, DEFAULT_MODEL, DEFAULT_TEMPERATURE,
};
use crate::mapping::MappingResult;
use crate::tensorio::dot;

/// Request parameters shared by every knowledge prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSettings {
    pub model: String,
    pub temperature: f32,
    pub max_tokens: u32,
    /// Extra guidance appended to every prompt's additional criteria.
    pub domain_hint: Option<String>,
    /// Fresh (cache-bypassing) requests allowed after an unparsable reply.
    pub parse_retries: u32,
}

impl Default for PromptSettings {
    fn default() -> Self {
        PromptSettings {
            model: DEFAULT_MODEL.to_string(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            domain_hint: None,
            parse_retries: 3,
        }
    }
}

impl PromptSettings {
    fn request(&self, template: TemplateId, prompt: String) -> PromptRequest {
        PromptRequest {
            template_id: template,
            rendered_prompt: prompt,
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    fn hint(&self) -> Option<&str> {
        self.domain_hint.as_deref()
    }
}

struct Job {
    request: PromptRequest,
    target: Vec<usize>,
}

/// Sends all jobs as one bounded batch and parses every reply, re-asking
/// without the cache when a reply does not parse.
fn run_jobs<T>(
    client: &LlmClient,
    settings: &PromptSettings,
    jobs: &[Job],
    parse: impl Fn(&str) -> Result<T, ParseError>,
) -> Result<Vec<(T, ProvenanceRecord)>, KnowledgeError> {
    let requests: Vec<PromptRequest> = jobs.iter().map(|j| j.request.clone()).collect();
    let replies = client.complete_batch(&requests).0;
    let mut out = Vec::with_capacity(jobs.len());
    for (job, reply) in jobs.iter().zip(replies) {
        let template = job.request.template_id.as_str();
        let llm_err = |source: LlmError| KnowledgeError::Llm {
            template,
            target: job.target.clone(),
            source,
        };
        let mut reply: CompletionResponse = reply.map_err(llm_err)?;
        let mut retries = 0;
        let parsed = loop {
            match parse(&reply.text) {
                Ok(v) => break v,
                Err(e) if retries >= settings.parse_retries => {
                    return Err(KnowledgeError::Parse {
                        template,
                        target: job.target.clone(),
                        source: e,
                    })
                }
                Err(e) => {
                    warn!("unparsable {template} reply for {:?} ({e}); asking again", job.target);
                    retries += 1;
                    reply = client.refresh(&job.request).map_err(llm_err)?;
                }
            }
        };
        out.push((
            parsed,
            ProvenanceRecord {
                template: job.request.template_id,
                target: job.target.clone(),
                prompt_hash: job.request.prompt_hash(),
                response_hash: sha256_hex(reply.text.as_bytes()),
            },
        ));
    }
    Ok(out)
}

/// Union of the member clusters' noun sets, deduplicated case-insensitively
/// and keeping the first spelling seen.
pub fn merged_nouns(component: &[usize], mapping: &MappingResult) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for &p in component {
        for noun in &mapping.noun_sets[p] {
            if seen.insert(noun.to_lowercase()) {
                out.push(noun.clone());
            }
        }
    }
    out
}

/// One concept per component, named and described by the LLM. Embeddings
/// are left empty.
pub fn abstract_concepts(
    components: &[Vec<usize>],
    mapping: &MappingResult,
    client: &LlmClient,
    settings: &PromptSettings,
) -> Result<(Vec<Concept>, Vec<ProvenanceRecord>), KnowledgeError> {
    let mut nouns_per = Vec::with_capacity(components.len());
    let mut jobs = Vec::with_capacity(components.len());
    for (q, comp) in components.iter().enumerate() {
        if let Some(&bad) = comp.iter().find(|&&p| p >= mapping.k) {
            return Err(KnowledgeError::Invariant(format!(
                "component {q} references cluster {bad} but k = {}",
                mapping.k
            )));
        }
        let nouns = merged_nouns(comp, mapping);
        if nouns.is_empty() {
            return Err(KnowledgeError::Invariant(format!("component {q} has no nouns")));
        }
        jobs.push(Job {
            request: settings.request(
                TemplateId::Concept,
                prompts::concept_prompt(&nouns, settings.hint()),
            ),
            target: vec![q],
        });
        nouns_per.push(nouns);
    }
    let parsed = run_jobs(client, settings, &jobs, prompts::parse_concept)?;
    let mut concepts = Vec::with_capacity(parsed.len());
    let mut provenance = Vec::with_capacity(parsed.len());
    for (q, (((name, description), prov), nouns)) in parsed.into_iter().zip(nouns_per).enumerate() {
        concepts.push(Concept {
            id: q,
            member_clusters: components[q].clone(),
            merged_nouns: nouns,
            name,
            description,
            name_emb: Vec::new(),
            desc_emb: Vec::new(),
        });
        provenance.push(prov);
    }
    Ok((concepts, provenance))
}

/// Fills `name_emb` and `desc_emb`. The description is embedded on its own;
/// an empty description falls back to the name.
pub fn embed_concepts(
    concepts: &mut [Concept],
    embedder: &dyn TextEmbedder,
) -> Result<(), KnowledgeError> {
    for c in concepts.iter_mut() {
        c.name_emb = embedder.embed(&c.name)?;
        let desc = if c.description.trim().is_empty() {
            &c.name
        } else {
            &c.description
        };
        c.desc_emb = embedder.embed(desc)?;
    }
    Ok(())
}

pub fn embed_attributes(
    records: &mut [AttributeRecord],
    embedder: &dyn TextEmbedder,
) -> Result<(), KnowledgeError> {
    for r in records.iter_mut() {
        r.embedding = embedder.embed(&r.text)?;
    }
    Ok(())
}

pub fn mine_uni_attributes(
    concept: &Concept,
    client: &LlmClient,
    settings: &PromptSettings,
    lambda1: usize,
) -> Result<(Vec<AttributeRecord>, ProvenanceRecord), KnowledgeError> {
    let (mut recs, mut prov) =
        mine_uni_attributes_batch(std::slice::from_ref(concept), client, settings, lambda1)?;
    Ok((recs.pop().unwrap_or_default(), prov.pop().expect("one job")))
}

/// Uni-concept attributes for every concept, issued as one batch.
pub fn mine_uni_attributes_batch(
    concepts: &[Concept],
    client: &LlmClient,
    settings: &PromptSettings,
    lambda1: usize,
) -> Result<(Vec<Vec<AttributeRecord>>, Vec<ProvenanceRecord>), KnowledgeError> {
    if lambda1 == 0 {
        return Err(KnowledgeError::Config("lambda1 must be >= 1".into()));
    }
    if let Some(c) = concepts.iter().find(|c| c.name.trim().is_empty()) {
        return Err(KnowledgeError::Invariant(format!("concept {} has no name", c.id)));
    }
    let jobs: Vec<Job> = concepts
        .iter()
        .map(|c| Job {
            request: settings.request(
                TemplateId::UniAttr,
                prompts::uni_attribute_prompt(&c.name, lambda1, settings.hint()),
            ),
            target: vec![c.id],
        })
        .collect();
    let parsed = run_jobs(client, settings, &jobs, |t| prompts::parse_attributes(t, lambda1))?;
    let mut records = Vec::with_capacity(parsed.len());
    let mut provenance = Vec::with_capacity(parsed.len());
    for (c, (texts, prov)) in concepts.iter().zip(parsed) {
        records.push(
            texts
                .into_iter()
                .map(|text| AttributeRecord {
                    text,
                    kind: AttributeKind::Uni,
                    owners: vec![c.id],
                    embedding: Vec::new(),
                })
                .collect(),
        );
        provenance.push(prov);
    }
    Ok((records, provenance))
}

/// Softmax of `sims` over every index except `skip`, stabilized by the max.
/// Returns the kept indices and their probabilities.
pub fn softmax_excluding(sims: &[f64], skip: usize) -> (Vec<usize>, Vec<f64>) {
    let others: Vec<usize> = (0..sims.len()).filter(|&l| l != skip).collect();
    let max = others
        .iter()
        .map(|&l| sims[l])
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = others.iter().map(|&l| (sims[l] - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    (others, exps.into_iter().map(|e| e / total).collect())
}

/// Length of the shortest prefix of `sorted_probs` whose running sum
/// reaches `threshold`, capped at `cap`. If rounding keeps the full sum
/// below the threshold, every entry is taken.
pub fn cumulative_prefix_len(sorted_probs: &[f64], threshold: f64, cap: usize) -> usize {
    let mut acc = 0.0;
    for (i, p) in sorted_probs.iter().enumerate() {
        acc += p;
        if acc >= threshold {
            return (i + 1).min(cap);
        }
    }
    sorted_probs.len().min(cap)
}

pub fn select_neighbors(
    concepts: &[Concept],
    cumulative_threshold: f64,
    max_neighbors: usize,
) -> Result<Vec<NeighborSelection>, KnowledgeError> {
    if !(cumulative_threshold > 0.0 && cumulative_threshold <= 1.0) {
        return Err(KnowledgeError::Config(format!(
            "cumulative threshold {cumulative_threshold} outside (0, 1]"
        )));
    }
    if concepts.iter().any(|c| c.name_emb.is_empty()) {
        return Err(KnowledgeError::Invariant(
            "neighbour selection needs concept name embeddings".into(),
        ));
    }
    let m = concepts.len();
    if m < 2 {
        warn!("only {m} concept(s); no bi-concept attributes possible");
        return Ok(concepts
            .iter()
            .map(|c| NeighborSelection {
                concept: c.id,
                others: Vec::new(),
                normalized_sims: Vec::new(),
                neighbor_ids: Vec::new(),
                cumulative_threshold,
                max_neighbors,
            })
            .collect());
    }
    let mut out = Vec::with_capacity(m);
    for (q, cq) in concepts.iter().enumerate() {
        let sims: Vec<f64> = concepts
            .iter()
            .map(|cl| dot(&cq.name_emb, &cl.name_emb))
            .collect();
        let (others, probs) = softmax_excluding(&sims, q);
        let mut order: Vec<usize> = (0..others.len()).collect();
        order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(others[a].cmp(&others[b])));
        let sorted: Vec<f64> = order.iter().map(|&i| probs[i]).collect();
        let take = cumulative_prefix_len(&sorted, cumulative_threshold, max_neighbors);
        out.push(NeighborSelection {
            concept: cq.id,
            neighbor_ids: order[..take].iter().map(|&i| concepts[others[i]].id).collect(),
            others: others.iter().map(|&l| concepts[l].id).collect(),
            normalized_sims: probs,
            cumulative_threshold,
            max_neighbors,
        });
    }
    Ok(out)
}

/// Output of [`mine_bi_attributes`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BiMining {
    pub records: Vec<AttributeRecord>,
    /// Unordered pairs, ascending, each prompted once.
    pub pairs: Vec<[usize; 2]>,
    pub provenance: Vec<ProvenanceRecord>,
}

pub fn mine_bi_attributes(
    selections: &[NeighborSelection],
    concepts: &[Concept],
    client: &LlmClient,
    settings: &PromptSettings,
    lambda2: usize,
) -> Result<BiMining, KnowledgeError> {
    if lambda2 == 0 {
        return Err(KnowledgeError::Config("lambda2 must be >= 1".into()));
    }
    let name_of = |id: usize| {
        concepts
            .iter()
            .find(|c| c.id == id)
            .map(|c| c.name.as_str())
            .ok_or_else(|| KnowledgeError::Invariant(format!("unknown concept id {id}")))
    };
    let pairs: BTreeSet<[usize; 2]> = selections
        .iter()
        .flat_map(|s| {
            s.neighbor_ids
                .iter()
                .map(move |&l| [s.concept.min(l), s.concept.max(l)])
        })
        .filter(|[a, b]| a != b)
        .collect();
    let pairs: Vec<[usize; 2]> = pairs.into_iter().collect();
    let mut jobs = Vec::with_capacity(pairs.len());
    for &[a, b] in &pairs {
        jobs.push(Job {
            request: settings.request(
                TemplateId::BiAttr,
                prompts::bi_attribute_prompt(name_of(a)?, name_of(b)?, lambda2, settings.hint()),
            ),
            target: vec![a, b],
        });
    }
    let parsed = run_jobs(client, settings, &jobs, |t| prompts::parse_attributes(t, lambda2))?;
    let mut out = BiMining {
        pairs: pairs.clone(),
        ..BiMining::default()
    };
    for (pair, (texts, prov)) in pairs.iter().zip(parsed) {
        out.records.extend(texts.into_iter().map(|text| AttributeRecord {
            text,
            kind: AttributeKind::Bi,
            owners: pair.to_vec(),
            embedding: Vec::new(),
        }));
        out.provenance.push(prov);
    }
    Ok(out)
}
