use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{AtStage, Pipeline, PipelineError, Stage};
use crate::eval::{zero_shot_assign, EvalReport};
use crate::grounding::{concat_features, ground};
use crate::kmeans::{self, KMeansConfig};
use crate::knowledge::{
    abstract_concepts, assemble_knowledge_base, embed_attributes, embed_concepts, fuse_similarity,
    merge_clusters, mine_bi_attributes, mine_uni_attributes_batch, select_neighbors, Concept,
    KnowledgeBase, KnowledgeConfig, NeighborSelection, ProvenanceRecord,
};
use crate::mapping::{build_mapping_with, cluster_count, MappingIndex, MappingResult};
use crate::tensorio::{
    self, l2_normalize_rows, write_atomic, EmbeddingMatrix, LabelVector, NounVocabulary,
};

pub const MAPPING_JSON: &str = "mapping.json";
pub const MAPPING_CENTROIDS: &str = "mapping_centroids.kecemb";
pub const MAPPING_TEXT_CENTROIDS: &str = "mapping_text_centroids.kecemb";
pub const MERGE_GRAPH_JSON: &str = "merge_graph.json";
pub const CONCEPTS_JSON: &str = "concepts.json";
pub const CONCEPT_STRINGS: &str = "concept_strings.txt";
pub const NEIGHBORS_JSON: &str = "neighbors.json";
pub const ATTRIBUTE_STRINGS: &str = "attribute_strings.txt";
pub const KNOWLEDGE_BASE_JSON: &str = "knowledge_base.json";
pub const KAPPA: &str = "kappa.kecemb";
pub const OMEGA: &str = "omega.kecemb";
pub const CONCAT: &str = "concat.kecemb";
pub const PREDICTIONS: &str = "predictions.txt";
pub const CLUSTER_JSON: &str = "cluster.json";
pub const EVAL_JSON: &str = "eval.json";

/// Output of the concepts stage: concepts without embeddings plus the
/// provenance of every naming call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConceptsFile {
    pub components: Vec<Vec<usize>>,
    pub concepts: Vec<Concept>,
    pub provenance: Vec<ProvenanceRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    /// `visual` for the baseline, `concat` otherwise.
    pub features: String,
    pub k: usize,
    pub objective: f64,
    pub iterations_run: usize,
    pub restart: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub kec: EvalReport,
    /// Nearest-class-prompt baseline, when class embeddings are configured.
    pub zero_shot: Option<EvalReport>,
}

pub(super) fn run(p: &Pipeline, stage: Stage) -> Result<Vec<String>, PipelineError> {
    match stage {
        Stage::Map => map(p),
        Stage::Concepts => concepts(p),
        Stage::Attributes => attributes(p),
        Stage::Ground => ground_stage(p),
        Stage::Cluster => cluster(p),
        Stage::Eval => eval(p),
    }
}

fn require(p: &Pipeline, stage: Stage, name: &str, run_first: Stage) -> Result<PathBuf, PipelineError> {
    let path = p.artifact(name);
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact {
            stage,
            artifact: name.to_string(),
            run_first,
        })
    }
}

fn write_json<T: Serialize>(p: &Pipeline, stage: Stage, name: &str, value: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(value).at(stage)?;
    s.push('\n');
    write_atomic(&p.artifact(name), s.as_bytes()).at(stage)
}

fn read_json<T: DeserializeOwned>(path: &Path, stage: Stage) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).at(stage)
}

fn write_strings(p: &Pipeline, stage: Stage, name: &str, strings: &[String]) -> Result<(), PipelineError> {
    let mut seen = std::collections::HashSet::new();
    let mut body = String::new();
    for s in strings {
        if !s.is_empty() && !s.contains('\n') && seen.insert(s.as_str()) {
            body.push_str(s);
            body.push('\n');
        }
    }
    write_atomic(&p.artifact(name), body.as_bytes()).at(stage)
}

fn read_images(p: &Pipeline, stage: Stage) -> Result<EmbeddingMatrix, PipelineError> {
    let images = tensorio::read_embeddings(&p.config().paths.image_embeddings).at(stage)?;
    if !images.rows_have_unit_norm() {
        return Err(PipelineError::Config(format!(
            "{} must contain unit-norm rows",
            p.config().paths.image_embeddings.display()
        )));
    }
    Ok(images)
}

fn map(p: &Pipeline) -> Result<Vec<String>, PipelineError> {
    let st = Stage::Map;
    let cfg = p.config();
    let images = read_images(p, st)?;
    let nouns: NounVocabulary = tensorio::read_nouns(&cfg.paths.nouns).at(st)?;
    let noun_embs = tensorio::read_embeddings(&cfg.paths.noun_embeddings).at(st)?;
    nouns.check_aligned(&noun_embs).at(st)?;
    let km = KMeansConfig {
        k: cluster_count(images.rows(), cfg.ratio),
        n_redo: cfg.n_redo,
        n_iter: cfg.n_iter,
        spherical: true,
        seed: cfg.seed,
    };
    let mapping = build_mapping_with(&images, &nouns, &noun_embs, km, cfg.top_k).at(st)?;
    write_json(p, st, MAPPING_JSON, &mapping.index())?;
    tensorio::write_embeddings(&mapping.centroids, p.artifact(MAPPING_CENTROIDS)).at(st)?;
    tensorio::write_embeddings(&mapping.text_centroids, p.artifact(MAPPING_TEXT_CENTROIDS)).at(st)?;
    Ok(vec![
        MAPPING_JSON.into(),
        MAPPING_CENTROIDS.into(),
        MAPPING_TEXT_CENTROIDS.into(),
    ])
}

fn load_mapping(p: &Pipeline, stage: Stage) -> Result<MappingResult, PipelineError> {
    let index: MappingIndex = read_json(&require(p, stage, MAPPING_JSON, Stage::Map)?, stage)?;
    let c = tensorio::read_embeddings(require(p, stage, MAPPING_CENTROIDS, Stage::Map)?).at(stage)?;
    let t = tensorio::read_embeddings(require(p, stage, MAPPING_TEXT_CENTROIDS, Stage::Map)?)
        .at(stage)?;
    MappingResult::from_parts(index, c, t).at(stage)
}

fn concepts(p: &Pipeline) -> Result<Vec<String>, PipelineError> {
    let st = Stage::Concepts;
    let cfg = p.config();
    let mapping = load_mapping(p, st)?;
    let mut graph = fuse_similarity(&mapping, cfg.alpha).at(st)?;
    let components = merge_clusters(&mut graph, cfg.merge_threshold);
    write_json(p, st, MERGE_GRAPH_JSON, &graph)?;
    let (concepts, provenance) =
        abstract_concepts(&components, &mapping, p.client()?, &cfg.prompt_settings()).at(st)?;
    let strings: Vec<String> = concepts
        .iter()
        .flat_map(|c| [c.name.clone(), c.description.clone()])
        .collect();
    write_strings(p, st, CONCEPT_STRINGS, &strings)?;
    write_json(
        p,
        st,
        CONCEPTS_JSON,
        &ConceptsFile {
            components,
            concepts,
            provenance,
        },
    )?;
    Ok(vec![
        MERGE_GRAPH_JSON.into(),
        CONCEPT_STRINGS.into(),
        CONCEPTS_JSON.into(),
    ])
}

fn attributes(p: &Pipeline) -> Result<Vec<String>, PipelineError> {
    let st = Stage::Attributes;
    let cfg = p.config();
    let file: ConceptsFile = read_json(&require(p, st, CONCEPTS_JSON, Stage::Concepts)?, st)?;
    let mut concepts = file.concepts;
    let mut provenance = file.provenance;
    let embedder = p.embedder(st)?;
    embed_concepts(&mut concepts, embedder.as_ref()).at(st)?;

    let settings = cfg.prompt_settings();
    let mut uni = Vec::new();
    if cfg.toggles.use_uni_attr {
        let (recs, prov) =
            mine_uni_attributes_batch(&concepts, p.client()?, &settings, cfg.lambda1).at(st)?;
        uni = recs.into_iter().flatten().collect();
        provenance.extend(prov);
    }
    let mut selections: Vec<NeighborSelection> = Vec::new();
    let mut bi = Vec::new();
    let mut pairs = Vec::new();
    if cfg.toggles.use_bi_attr {
        selections =
            select_neighbors(&concepts, cfg.neighbor_cumulative_threshold, cfg.max_neighbors)
                .at(st)?;
        let mined = mine_bi_attributes(&selections, &concepts, p.client()?, &settings, cfg.lambda2)
            .at(st)?;
        bi = mined.records;
        pairs = mined.pairs;
        provenance.extend(mined.provenance);
    }
    write_json(p, st, NEIGHBORS_JSON, &selections)?;
    let texts: Vec<String> = uni.iter().chain(&bi).map(|a| a.text.clone()).collect();
    write_strings(p, st, ATTRIBUTE_STRINGS, &texts)?;
    embed_attributes(&mut uni, embedder.as_ref()).at(st)?;
    embed_attributes(&mut bi, embedder.as_ref()).at(st)?;

    let kb_config = KnowledgeConfig {
        alpha: cfg.alpha,
        merge_threshold: cfg.merge_threshold,
        neighbor_cumulative_threshold: cfg.neighbor_cumulative_threshold,
        max_neighbors: cfg.max_neighbors,
        lambda1: cfg.lambda1,
        lambda2: cfg.lambda2,
        use_uni_attr: cfg.toggles.use_uni_attr,
        use_bi_attr: cfg.toggles.use_bi_attr,
        model: cfg.llm.model.clone(),
        temperature: cfg.llm.temperature,
        domain_hint: cfg.domain_hint.clone(),
    };
    let kb = assemble_knowledge_base(kb_config, concepts, uni, bi, pairs, provenance).at(st)?;
    write_atomic(&p.artifact(KNOWLEDGE_BASE_JSON), kb.to_json().at(st)?.as_bytes()).at(st)?;
    Ok(vec![
        NEIGHBORS_JSON.into(),
        ATTRIBUTE_STRINGS.into(),
        KNOWLEDGE_BASE_JSON.into(),
    ])
}

pub(super) fn load_knowledge_base(p: &Pipeline, stage: Stage) -> Result<KnowledgeBase, PipelineError> {
    let path = require(p, stage, KNOWLEDGE_BASE_JSON, Stage::Attributes)?;
    let text = std::fs::read_to_string(&path).map_err(|source| PipelineError::Io { path, source })?;
    KnowledgeBase::from_json(&text).at(stage)
}

fn ground_stage(p: &Pipeline) -> Result<Vec<String>, PipelineError> {
    let st = Stage::Ground;
    let cfg = p.config();
    let kb = load_knowledge_base(p, st)?;
    let images = read_images(p, st)?;
    let g = ground(&images, &kb, cfg.grounding_flags(), cfg.tau).at(st)?;
    let kappa = g.kappa_matrix().at(st)?;
    tensorio::write_embeddings(&kappa, p.artifact(KAPPA)).at(st)?;
    tensorio::write_embeddings(&g.omega_matrix().at(st)?, p.artifact(OMEGA)).at(st)?;
    let concat = concat_features(&images, &kappa).at(st)?;
    tensorio::write_embeddings(&concat, p.artifact(CONCAT)).at(st)?;
    Ok(vec![KAPPA.into(), OMEGA.into(), CONCAT.into()])
}

fn final_k(p: &Pipeline, stage: Stage) -> Result<usize, PipelineError> {
    let cfg = p.config();
    if let Some(k) = cfg.final_k {
        return Ok(k);
    }
    match &cfg.paths.labels {
        Some(path) => Ok(tensorio::read_labels(path).at(stage)?.num_classes()),
        None => Err(PipelineError::Config(
            "final_k is required when no labels are configured".into(),
        )),
    }
}

fn cluster(p: &Pipeline) -> Result<Vec<String>, PipelineError> {
    let st = Stage::Cluster;
    let cfg = p.config();
    let (features, data) = if cfg.toggles.is_baseline() {
        ("visual", read_images(p, st)?)
    } else {
        let path = require(p, st, CONCAT, Stage::Ground)?;
        ("concat", tensorio::read_embeddings(path).at(st)?)
    };
    // spherical k-means needs unit rows; [x; kappa] has norm sqrt(2)
    let data = l2_normalize_rows(&data).at(st)?;
    let k = final_k(p, st)?;
    let result = kmeans::fit(
        &data,
        &KMeansConfig {
            k,
            n_redo: cfg.n_redo,
            n_iter: cfg.n_iter,
            spherical: true,
            seed: cfg.seed,
        },
    )
    .at(st)?;
    let labels = LabelVector::new(result.assignments.clone(), k).at(st)?;
    tensorio::write_labels(&labels, p.artifact(PREDICTIONS)).at(st)?;
    write_json(
        p,
        st,
        CLUSTER_JSON,
        &ClusterSummary {
            features: features.into(),
            k,
            objective: result.objective,
            iterations_run: result.iterations_run,
            restart: result.restart,
        },
    )?;
    Ok(vec![PREDICTIONS.into(), CLUSTER_JSON.into()])
}

fn eval(p: &Pipeline) -> Result<Vec<String>, PipelineError> {
    let st = Stage::Eval;
    let cfg = p.config();
    let Some(labels_path) = &cfg.paths.labels else {
        return Err(PipelineError::Config("eval needs paths.labels".into()));
    };
    let truth = tensorio::read_labels(labels_path).at(st)?;
    let pred = tensorio::read_labels(require(p, st, PREDICTIONS, Stage::Cluster)?).at(st)?;
    let kec = EvalReport::compute(&pred, &truth).at(st)?;
    let zero_shot = match &cfg.paths.class_embeddings {
        Some(path) => {
            let classes = tensorio::read_embeddings(path).at(st)?;
            let images = read_images(p, st)?;
            let zs = zero_shot_assign(&images, &classes).at(st)?;
            Some(EvalReport::compute(&zs, &truth).at(st)?)
        }
        None => None,
    };
    write_json(p, st, EVAL_JSON, &EvalFile { kec, zero_shot })?;
    Ok(vec![EVAL_JSON.into()])
}

pub(super) fn export_features(p: &Pipeline, out: Option<&Path>) -> Result<Vec<PathBuf>, PipelineError> {
    let st = Stage::Ground;
    let dir = out
        .map(Path::to_path_buf)
        .unwrap_or_else(|| p.artifact("export"));
    std::fs::create_dir_all(&dir).map_err(|source| PipelineError::Io {
        path: dir.clone(),
        source,
    })?;
    let images = read_images(p, st)?;
    let mut written = vec![dir.join("visual.kecemb")];
    tensorio::write_embeddings(&images, &written[0]).at(st)?;
    if !p.config().toggles.is_baseline() {
        let kappa = tensorio::read_embeddings(require(p, st, KAPPA, Stage::Ground)?).at(st)?;
        let concat = tensorio::read_embeddings(require(p, st, CONCAT, Stage::Ground)?).at(st)?;
        for (name, m) in [("kappa.kecemb", &kappa), ("concat.kecemb", &concat)] {
            let path = dir.join(name);
            tensorio::write_embeddings(m, &path).at(st)?;
            written.push(path);
        }
    }
    Ok(written)
}
