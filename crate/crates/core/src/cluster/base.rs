use serde::{Deserialize, Serialize};
use serde_json::json;

use super::kmeans::kmeans_best_of;
use super::{base_k, normalize, ClusterConfig, ClusterError, FacetItem, FacetKind};
use crate::providers::{generate, GenerationParams, GenerationRequest, Generator, SchemaId, INPUT_MARKER};

pub(crate) const HIERARCHY_SYSTEM: &str = "You organise short descriptions of how people use AI assistants into \
clear thematic categories. Names are concise (2 to 6 words), specific, and free of personal details. \
Always reply with a single JSON object in the requested format.";

const LABEL_PROMPT: &str = "Below is a group of related items. Write one short name that captures what \
they have in common. Reply as {\"name\": \"...\"}.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseCluster {
    pub id: String,
    pub name: String,
    /// Indices into the melted item list, ascending.
    pub members: Vec<usize>,
    /// Normalised mean of the member vectors.
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaseClustering {
    pub k: usize,
    pub clusters: Vec<BaseCluster>,
    /// Items from dissolved clusters, ascending.
    pub unclustered: Vec<usize>,
}

pub(crate) fn parse_name(raw: &str) -> Result<String, String> {
    let v: serde_json::Value = serde_json::from_str(raw).map_err(|e| e.to_string())?;
    match v["name"].as_str().map(str::trim) {
        Some(s) if !s.is_empty() => Ok(s.to_string()),
        _ => Err("expected a non-empty \"name\" string".into()),
    }
}

/// k-means with `k = max(1, floor(n/10))`, dissolve clusters below
/// `min_cluster_size`, then name the survivors.
pub fn base_clusters(
    kind: FacetKind,
    items: &[FacetItem],
    vectors: &[Vec<f64>],
    gen: &dyn Generator,
    config: &ClusterConfig,
) -> Result<BaseClustering, ClusterError> {
    if items.len() != vectors.len() {
        return Err(ClusterError::Misaligned {
            items: items.len(),
            vectors: vectors.len(),
        });
    }
    if items.is_empty() {
        return Ok(BaseClustering::default());
    }
    let k = base_k(items.len());
    let run = kmeans_best_of(vectors, k, config.seed, config.restarts, config.max_iterations, config.exec)?;

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &a) in run.assignments.iter().enumerate() {
        groups[a].push(i);
    }
    let mut unclustered = Vec::new();
    let mut survivors = Vec::new();
    for (j, members) in groups.into_iter().enumerate() {
        if members.len() < config.min_cluster_size {
            unclustered.extend(members);
        } else {
            survivors.push((members, normalize(run.centroids[j].clone())));
        }
    }
    unclustered.sort_unstable();

    let names = config.exec.map_bounded(&survivors, gen.max_in_flight(), |(members, _)| {
        let texts: Vec<&str> = members.iter().map(|&i| items[i].text.as_str()).collect();
        let user = format!("{LABEL_PROMPT}\n{INPUT_MARKER}\n{}", json!({ "items": texts }));
        let req = GenerationRequest::new(HIERARCHY_SYSTEM, user, GenerationParams::HIERARCHY, SchemaId::ClusterLabel);
        generate(gen, &req, config.max_retries, parse_name)
    });

    let mut clusters = Vec::with_capacity(survivors.len());
    for (i, ((members, centroid), name)) in survivors.into_iter().zip(names).enumerate() {
        clusters.push(BaseCluster {
            id: format!("{}-b{i}", kind.as_str()),
            name: name?,
            members,
            centroid,
        });
    }
    Ok(BaseClustering {
        k,
        clusters,
        unclustered,
    })
}
