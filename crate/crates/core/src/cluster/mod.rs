//! Facet clustering: melt profiles into items, embed, k-means base clusters,
//! a generation-guided two-level hierarchy, and prevalence metrics.
//!
//! Each facet kind is clustered independently.

mod base;
mod hierarchy;
pub mod kmeans;
mod metrics;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::profiler::FacetProfile;
use crate::providers::{embed, Embedder, Generator, ProviderError};

pub use base::{base_clusters, BaseCluster, BaseClustering};
pub use hierarchy::{build_hierarchy, HierarchyBuild, ParentGroup, RangeStatus};
pub use kmeans::{kmeans, kmeans_best_of, KMeansResult};
pub use metrics::{assemble_hierarchy, compute_metrics, write_assignments_csv};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClusterError {
    #[error("k = {k} is invalid for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{items} items but {vectors} vectors")]
    Misaligned { items: usize, vectors: usize },
    #[error("hierarchy needs at least one base cluster")]
    NoBaseClusters,
    #[error("hierarchy degenerate: {0}")]
    HierarchyDegenerate(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetKind {
    Topic,
    RedFlag,
    GreenFlag,
    CommunicationStyle,
}

impl FacetKind {
    pub const ALL: [FacetKind; 4] = [
        FacetKind::Topic,
        FacetKind::RedFlag,
        FacetKind::GreenFlag,
        FacetKind::CommunicationStyle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FacetKind::Topic => "topic",
            FacetKind::RedFlag => "red_flag",
            FacetKind::GreenFlag => "green_flag",
            FacetKind::CommunicationStyle => "communication_style",
        }
    }

    /// Items per participant.
    pub fn cardinality(self) -> usize {
        match self {
            FacetKind::Topic => crate::profiler::TOPIC_COUNT,
            FacetKind::RedFlag => crate::profiler::RED_FLAG_COUNT,
            FacetKind::GreenFlag => crate::profiler::GREEN_FLAG_COUNT,
            FacetKind::CommunicationStyle => 1,
        }
    }

    fn items_of(self, profile: &FacetProfile) -> Vec<&str> {
        let f = &profile.facets;
        match self {
            FacetKind::Topic => f.top_topics.iter().map(String::as_str).collect(),
            FacetKind::RedFlag => f.red_flags.iter().map(String::as_str).collect(),
            FacetKind::GreenFlag => f.green_flags.iter().map(String::as_str).collect(),
            FacetKind::CommunicationStyle => vec![f.communication_style.as_str()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FacetItem {
    pub item_id: String,
    pub participant_id: String,
    pub facet_kind: FacetKind,
    pub text: String,
}

/// One row per item, ordered by participant (input order) then position.
pub fn melt_facets(profiles: &[FacetProfile], kind: FacetKind) -> Vec<FacetItem> {
    profiles
        .iter()
        .flat_map(|p| {
            kind.items_of(p).into_iter().enumerate().map(move |(i, text)| FacetItem {
                item_id: format!("{}:{}:{i}", p.participant_id, kind.as_str()),
                participant_id: p.participant_id.clone(),
                facet_kind: kind,
                text: text.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterNode {
    pub id: String,
    /// 1 for parents, 2 for base clusters.
    pub level: u8,
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub item_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub child_ids: Vec<String>,
    pub item_count: usize,
    pub user_count: usize,
    pub item_share_pct: f64,
    pub user_prevalence_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterHierarchy {
    pub facet_kind: FacetKind,
    pub level1: Vec<ClusterNode>,
    pub level2: Vec<ClusterNode>,
    pub unclustered_item_ids: Vec<String>,
    pub total_items: usize,
    pub clustered_items: usize,
    pub coverage_pct: f64,
    pub participant_count: usize,
    pub range_status: RangeStatus,
    pub rounds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub min_cluster_size: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub max_rounds: usize,
    pub min_top_level: usize,
    pub max_top_level: usize,
    pub max_retries: u32,
    pub exec: Execution,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            min_cluster_size: 5,
            seed: 0,
            restarts: 1,
            max_iterations: kmeans::DEFAULT_MAX_ITERATIONS,
            max_rounds: 5,
            min_top_level: 5,
            max_top_level: 10,
            max_retries: 3,
            exec: Execution::default(),
        }
    }
}

/// `max(1, floor(n / 10))`.
pub fn base_k(n: usize) -> usize {
    (n / 10).max(1)
}

pub(crate) fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Full pipeline for one facet kind.
pub fn cluster_facet(
    profiles: &[FacetProfile],
    kind: FacetKind,
    embedder: &dyn Embedder,
    gen: &dyn Generator,
    config: &ClusterConfig,
) -> Result<(ClusterHierarchy, Vec<FacetItem>), ClusterError> {
    let items = melt_facets(profiles, kind);
    let participants = profiles.len();
    if items.is_empty() {
        return Ok((assemble_hierarchy(kind, &items, &BaseClustering::default(), None, participants), items));
    }
    let texts: Vec<String> = items.iter().map(|i| i.text.clone()).collect();
    let vectors: Vec<Vec<f64>> = embed(embedder, &texts)?
        .into_iter()
        .map(|v| normalize(v.values))
        .collect();
    let base = base_clusters(kind, &items, &vectors, gen, config)?;
    let build = if base.clusters.is_empty() {
        None
    } else {
        Some(build_hierarchy(&base.clusters, gen, config)?)
    };
    let hierarchy = assemble_hierarchy(kind, &items, &base, build.as_ref(), participants);
    Ok((hierarchy, items))
}
