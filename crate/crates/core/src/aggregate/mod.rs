//! Cross-participant reporting.
//!
//! Takes per-participant records (facet profile, usage telemetry, optional
//! demographics) plus the per-kind cluster hierarchies and produces one
//! versioned [`AggregateReport`]: usage distributions, hierarchy metrics,
//! subgroup deviations, red-flag co-occurrence and conditional usage.
//! Internal values keep full precision; [`round1`] is applied only where a
//! figure is rendered or compared as rendered.

mod demographics;
mod export;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use demographics::{
    demographic_summary, AgeBracket, Demographics, DimensionSummary, Education, EducationGroup, Gender,
    IncomeBracket, UsState, DIMENSIONS,
};
pub use export::{export_plot_data, PLOT_TABLES};

use crate::cluster::{cluster_facet, ClusterConfig, ClusterError, ClusterHierarchy, FacetItem, FacetKind, RangeStatus};
use crate::profiler::FacetProfile;
use crate::providers::{Embedder, Generator};
use crate::usage::{median_sorted, Tier, UsageStats};

pub const REPORT_SCHEMA: &str = "wrapped.aggregate/v1";

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("unknown cluster id {0:?}")]
    UnknownCluster(String),
    #[error("unsupported report schema {found:?}, expected {REPORT_SCHEMA:?}")]
    Schema { found: String },
    #[error("participant {0:?} appears more than once")]
    DuplicateParticipant(String),
    #[error("profile and usage participant ids differ: {profile:?} vs {usage:?}")]
    MismatchedRecord { profile: String, usage: String },
    #[error("invalid report: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
}

/// Everything retained about one participant after processing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub profile: FacetProfile,
    pub usage: UsageStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demographics: Option<Demographics>,
}

impl ParticipantRecord {
    pub fn participant_id(&self) -> &str {
        &self.profile.participant_id
    }
}

/// A built hierarchy together with the items it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetClustering {
    pub hierarchy: ClusterHierarchy,
    pub items: Vec<FacetItem>,
}

/// Rounds half away from zero to one decimal place.
pub fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64 * 100.0
    }
}

/// Distinct participants per cluster id, at both levels.
#[derive(Debug, Clone, Default)]
pub struct Membership {
    members: BTreeMap<String, BTreeSet<String>>,
}

impl Membership {
    pub fn new(clusterings: &[FacetClustering]) -> Self {
        let mut members: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for c in clusterings {
            let owner: HashMap<&str, &str> = c
                .items
                .iter()
                .map(|i| (i.item_id.as_str(), i.participant_id.as_str()))
                .collect();
            for n in &c.hierarchy.level2 {
                let users = n
                    .item_ids
                    .iter()
                    .filter_map(|id| owner.get(id.as_str()).map(|p| p.to_string()))
                    .collect();
                members.insert(n.id.clone(), users);
            }
            for p in &c.hierarchy.level1 {
                let users: BTreeSet<String> = p
                    .child_ids
                    .iter()
                    .filter_map(|id| members.get(id))
                    .flat_map(|s| s.iter().cloned())
                    .collect();
                members.insert(p.id.clone(), users);
            }
        }
        Self { members }
    }

    pub fn get(&self, cluster_id: &str) -> Result<&BTreeSet<String>, AggregateError> {
        self.members
            .get(cluster_id)
            .ok_or_else(|| AggregateError::UnknownCluster(cluster_id.to_string()))
    }
}

/// Share of all participants present in both clusters.
pub fn cooccurrence(
    membership: &Membership,
    a: &str,
    b: &str,
    participant_count: usize,
) -> Result<f64, AggregateError> {
    let (a, b) = (membership.get(a)?, membership.get(b)?);
    Ok(pct(a.intersection(b).count(), participant_count))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
}

impl GroupStats {
    /// `None` for an empty group.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            n: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: median_sorted(&sorted),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalUsage {
    pub flagged: Option<GroupStats>,
    pub unflagged: Option<GroupStats>,
}

/// Messages-per-conversation statistics over per-participant means, split by
/// membership in `flagged`. Participants without conversations have no mean
/// and are left out of both groups.
pub fn conditional_usage(usage: &[UsageStats], flagged: &BTreeSet<String>) -> ConditionalUsage {
    let (mut yes, mut no) = (Vec::new(), Vec::new());
    for u in usage.iter().filter(|u| u.conversation_count > 0) {
        if flagged.contains(&u.participant_id) {
            yes.push(u.messages_per_conversation_mean);
        } else {
            no.push(u.messages_per_conversation_mean);
        }
    }
    ConditionalUsage {
        flagged: GroupStats::of(&yes),
        unflagged: GroupStats::of(&no),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubgroupConfig {
    pub min_n: usize,
    pub threshold_pp: f64,
}

impl Default for SubgroupConfig {
    fn default() -> Self {
        Self {
            min_n: 10,
            threshold_pp: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Subgroup {
    pub dimension: String,
    pub value: String,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupDeviation {
    pub facet_kind: FacetKind,
    pub cluster_id: String,
    pub cluster_name: String,
    pub subgroup: Subgroup,
    pub subgroup_prevalence_pct: f64,
    pub baseline_prevalence_pct: f64,
    /// Difference of the two prevalences as rendered at one decimal.
    pub deviation_pp: f64,
}

/// Subgroup dimensions compared against the baseline: the derived usage
/// tier, then age, gender, grouped education, income and state.
pub const SUBGROUP_DIMENSIONS: [&str; 6] = ["usage_tier", "age_bracket", "gender", "education_group", "income_bracket", "state"];

fn subgroup_value(dimension: &str, usage: &UsageStats, demo: Option<&Demographics>) -> Option<&'static str> {
    match dimension {
        "usage_tier" => Some(usage.tier.as_str()),
        "age_bracket" => demo?.age_bracket.map(AgeBracket::code),
        "gender" => demo?.gender.map(Gender::code),
        "education_group" => demo?.education.map(|e| e.group().code()),
        "income_bracket" => demo?.income_bracket.map(IncomeBracket::code),
        "state" => demo?.state.map(UsState::code),
        _ => None,
    }
}

/// Subgroups with at least `min_n` members, keyed by (dimension, value).
fn subgroups(
    usage: &[UsageStats],
    demographics: &BTreeMap<String, Demographics>,
    min_n: usize,
) -> Vec<(Subgroup, BTreeSet<String>)> {
    let mut out = Vec::new();
    for dim in SUBGROUP_DIMENSIONS {
        let mut by_value: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
        for u in usage {
            if let Some(v) = subgroup_value(dim, u, demographics.get(&u.participant_id)) {
                by_value.entry(v).or_default().insert(u.participant_id.clone());
            }
        }
        for (value, members) in by_value {
            if members.len() >= min_n {
                let sub = Subgroup {
                    dimension: dim.to_string(),
                    value: value.to_string(),
                    n: members.len(),
                };
                out.push((sub, members));
            }
        }
    }
    out
}

/// Level-1 prevalence per qualifying subgroup against the whole-sample
/// baseline. Only deviations of at least `threshold_pp` (after rounding both
/// prevalences to one decimal) are returned. The participant universe is
/// `usage`; a participant missing an answer is left out of that dimension
/// only.
pub fn subgroup_compare(
    clusterings: &[FacetClustering],
    usage: &[UsageStats],
    demographics: &BTreeMap<String, Demographics>,
    config: SubgroupConfig,
) -> Vec<SubgroupDeviation> {
    let membership = Membership::new(clusterings);
    let groups = subgroups(usage, demographics, config.min_n);
    let total = usage.len();
    let universe: BTreeSet<&str> = usage.iter().map(|u| u.participant_id.as_str()).collect();
    let mut out = Vec::new();
    for c in clusterings {
        for node in &c.hierarchy.level1 {
            let members = membership.get(&node.id).expect("membership covers every node");
            let present = members.iter().filter(|p| universe.contains(p.as_str())).count();
            let baseline = pct(present, total);
            for (sub, in_group) in &groups {
                let prevalence = pct(members.intersection(in_group).count(), sub.n);
                let deviation = round1(round1(prevalence) - round1(baseline));
                if deviation.abs() >= config.threshold_pp {
                    out.push(SubgroupDeviation {
                        facet_kind: c.hierarchy.facet_kind,
                        cluster_id: node.id.clone(),
                        cluster_name: node.name.clone(),
                        subgroup: sub.clone(),
                        subgroup_prevalence_pct: prevalence,
                        baseline_prevalence_pct: baseline,
                        deviation_pp: deviation,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        match GroupStats::of(values) {
            None => Self {
                mean: 0.0,
                median: 0.0,
                min: 0.0,
                max: 0.0,
            },
            Some(g) => Self {
                mean: g.mean,
                median: g.median,
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRow {
    pub participant_id: String,
    pub conversation_count: usize,
    pub message_count: usize,
    pub messages_per_conversation_mean: f64,
    pub peak_hour: u32,
    pub tier: Tier,
}

/// Raw per-participant values (for log-scale plots) plus summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageDistribution {
    pub rows: Vec<UsageRow>,
    pub conversations: Summary,
    pub messages: Summary,
    pub messages_per_conversation: Summary,
    pub tier_counts: BTreeMap<Tier, usize>,
    pub hour_totals: [usize; 24],
}

fn usage_distribution(usage: &[UsageStats]) -> UsageDistribution {
    let mut rows: Vec<UsageRow> = usage
        .iter()
        .map(|u| UsageRow {
            participant_id: u.participant_id.clone(),
            conversation_count: u.conversation_count,
            message_count: u.message_count,
            messages_per_conversation_mean: u.messages_per_conversation_mean,
            peak_hour: u.peak_hour,
            tier: u.tier,
        })
        .collect();
    rows.sort_by(|a, b| a.participant_id.cmp(&b.participant_id));
    let active: Vec<f64> = usage
        .iter()
        .filter(|u| u.conversation_count > 0)
        .map(|u| u.messages_per_conversation_mean)
        .collect();
    let mut tier_counts: BTreeMap<Tier, usize> = [Tier::Heavy, Tier::Normal, Tier::Light].into_iter().map(|t| (t, 0)).collect();
    let mut hour_totals = [0usize; 24];
    for u in usage {
        *tier_counts.entry(u.tier).or_default() += 1;
        for (t, h) in hour_totals.iter_mut().zip(u.hour_histogram) {
            *t += h;
        }
    }
    UsageDistribution {
        conversations: Summary::of(&usage.iter().map(|u| u.conversation_count as f64).collect::<Vec<_>>()),
        messages: Summary::of(&usage.iter().map(|u| u.message_count as f64).collect::<Vec<_>>()),
        messages_per_conversation: Summary::of(&active),
        rows,
        tier_counts,
        hour_totals,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub facet_kind: FacetKind,
    pub total_items: usize,
    pub clustered_items: usize,
    pub coverage_pct: f64,
    pub top_level_count: usize,
    pub range_status: RangeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cooccurrence {
    pub cluster_a: String,
    pub cluster_b: String,
    pub participants_in_both: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalUsageRow {
    pub cluster_id: String,
    pub cluster_name: String,
    #[serde(flatten)]
    pub stats: ConditionalUsage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema: String,
    pub participant_count: usize,
    pub usage: UsageDistribution,
    pub hierarchies: Vec<ClusterHierarchy>,
    pub coverage: Vec<Coverage>,
    pub subgroup_deviations: Vec<SubgroupDeviation>,
    /// Every pair of top-level red-flag clusters.
    pub cooccurrences: Vec<Cooccurrence>,
    /// Per top-level red-flag cluster.
    pub conditional_usage: Vec<ConditionalUsageRow>,
    pub demographics: BTreeMap<String, DimensionSummary>,
}

impl AggregateReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Parses a report, rejecting other schema versions.
    pub fn from_json(s: &str) -> Result<Self, AggregateError> {
        let report: Self = serde_json::from_str(s)?;
        if report.schema != REPORT_SCHEMA {
            return Err(AggregateError::Schema { found: report.schema });
        }
        Ok(report)
    }
}

/// Sorts records by participant id and checks ids are unique and consistent.
pub fn prepare_records(mut records: Vec<ParticipantRecord>) -> Result<Vec<ParticipantRecord>, AggregateError> {
    records.sort_by(|a, b| a.participant_id().cmp(b.participant_id()));
    for r in &records {
        if r.profile.participant_id != r.usage.participant_id {
            return Err(AggregateError::MismatchedRecord {
                profile: r.profile.participant_id.clone(),
                usage: r.usage.participant_id.clone(),
            });
        }
    }
    if let Some(w) = records.windows(2).find(|w| w[0].participant_id() == w[1].participant_id()) {
        return Err(AggregateError::DuplicateParticipant(w[0].participant_id().to_string()));
    }
    Ok(records)
}

/// Assembles the report from records and already built clusterings.
pub fn build_report(
    records: &[ParticipantRecord],
    clusterings: &[FacetClustering],
    subgroup: SubgroupConfig,
) -> AggregateReport {
    let usage: Vec<UsageStats> = records.iter().map(|r| r.usage.clone()).collect();
    let demographics: BTreeMap<String, Demographics> = records
        .iter()
        .filter_map(|r| r.demographics.clone().map(|d| (r.participant_id().to_string(), d)))
        .collect();
    let n = records.len();
    let membership = Membership::new(clusterings);

    let mut cooccurrences = Vec::new();
    let mut conditional = Vec::new();
    for c in clusterings.iter().filter(|c| c.hierarchy.facet_kind == FacetKind::RedFlag) {
        let top = &c.hierarchy.level1;
        for (i, a) in top.iter().enumerate() {
            let ma = membership.get(&a.id).expect("known node");
            conditional.push(ConditionalUsageRow {
                cluster_id: a.id.clone(),
                cluster_name: a.name.clone(),
                stats: conditional_usage(&usage, ma),
            });
            for b in &top[i + 1..] {
                let both = ma.intersection(membership.get(&b.id).expect("known node")).count();
                cooccurrences.push(Cooccurrence {
                    cluster_a: a.id.clone(),
                    cluster_b: b.id.clone(),
                    participants_in_both: both,
                    pct: pct(both, n),
                });
            }
        }
    }

    AggregateReport {
        schema: REPORT_SCHEMA.to_string(),
        participant_count: n,
        usage: usage_distribution(&usage),
        hierarchies: clusterings.iter().map(|c| c.hierarchy.clone()).collect(),
        coverage: clusterings
            .iter()
            .map(|c| Coverage {
                facet_kind: c.hierarchy.facet_kind,
                total_items: c.hierarchy.total_items,
                clustered_items: c.hierarchy.clustered_items,
                coverage_pct: c.hierarchy.coverage_pct,
                top_level_count: c.hierarchy.level1.len(),
                range_status: c.hierarchy.range_status,
            })
            .collect(),
        subgroup_deviations: subgroup_compare(clusterings, &usage, &demographics, subgroup),
        cooccurrences,
        conditional_usage: conditional,
        demographics: demographic_summary(records.iter().map(|r| r.demographics.as_ref()), n),
    }
}

/// Clusters all four facet kinds (in parallel when `cluster.exec` allows)
/// and builds the report.
pub fn run_study(
    records: Vec<ParticipantRecord>,
    embedder: &dyn Embedder,
    gen: &dyn Generator,
    cluster: &ClusterConfig,
    subgroup: SubgroupConfig,
) -> Result<(AggregateReport, Vec<FacetClustering>), AggregateError> {
    let records = prepare_records(records)?;
    let profiles: Vec<FacetProfile> = records.iter().map(|r| r.profile.clone()).collect();
    let clusterings = cluster
        .exec
        .map(&FacetKind::ALL, |&kind| cluster_facet(&profiles, kind, embedder, gen, cluster))
        .into_iter()
        .map(|r| r.map(|(hierarchy, items)| FacetClustering { hierarchy, items }))
        .collect::<Result<Vec<_>, _>>()?;
    let report = build_report(&records, &clusterings, subgroup);
    Ok((report, clusterings))
}
