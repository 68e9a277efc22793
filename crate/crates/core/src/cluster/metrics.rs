use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use super::{BaseClustering, ClusterHierarchy, ClusterNode, FacetItem, FacetKind, HierarchyBuild, RangeStatus};

fn pct(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64 * 100.0
    }
}

/// Builds the node lists from a base clustering and an optional parent
/// layer, then fills in metrics.
pub fn assemble_hierarchy(
    kind: FacetKind,
    items: &[FacetItem],
    base: &BaseClustering,
    build: Option<&HierarchyBuild>,
    participant_count: usize,
) -> ClusterHierarchy {
    let node = |id: String, level: u8, name: String| ClusterNode {
        id,
        level,
        name,
        item_ids: Vec::new(),
        child_ids: Vec::new(),
        item_count: 0,
        user_count: 0,
        item_share_pct: 0.0,
        user_prevalence_pct: 0.0,
    };
    let level2: Vec<ClusterNode> = base
        .clusters
        .iter()
        .map(|b| ClusterNode {
            item_ids: b.members.iter().map(|&i| items[i].item_id.clone()).collect(),
            ..node(b.id.clone(), 2, b.name.clone())
        })
        .collect();
    let level1: Vec<ClusterNode> = build
        .map(|b| {
            b.parents
                .iter()
                .enumerate()
                .map(|(j, p)| ClusterNode {
                    child_ids: p.children.iter().map(|&c| level2[c].id.clone()).collect(),
                    ..node(format!("{}-p{j}", kind.as_str()), 1, p.name.clone())
                })
                .collect()
        })
        .unwrap_or_default();
    let mut h = ClusterHierarchy {
        facet_kind: kind,
        level1,
        level2,
        unclustered_item_ids: base.unclustered.iter().map(|&i| items[i].item_id.clone()).collect(),
        total_items: items.len(),
        clustered_items: 0,
        coverage_pct: 0.0,
        participant_count,
        range_status: build.map_or(RangeStatus::BelowRange, |b| b.range_status),
        rounds: build.map_or(0, |b| b.rounds),
    };
    compute_metrics(&mut h, items, participant_count);
    h
}

/// Recomputes item counts, item shares, user prevalence and coverage from
/// node membership. A participant counts once per node however many of
/// their items it holds.
pub fn compute_metrics(h: &mut ClusterHierarchy, items: &[FacetItem], participant_count: usize) {
    let owner: HashMap<&str, &str> = items
        .iter()
        .map(|i| (i.item_id.as_str(), i.participant_id.as_str()))
        .collect();
    let clustered: usize = h.level2.iter().map(|n| n.item_ids.len()).sum();
    h.total_items = items.len();
    h.clustered_items = clustered;
    h.participant_count = participant_count;
    h.coverage_pct = pct(clustered, items.len());

    let mut users_of: HashMap<String, BTreeSet<&str>> = HashMap::new();
    for n in &mut h.level2 {
        let users: BTreeSet<&str> = n.item_ids.iter().filter_map(|id| owner.get(id.as_str()).copied()).collect();
        n.item_count = n.item_ids.len();
        n.user_count = users.len();
        n.item_share_pct = pct(n.item_count, clustered);
        n.user_prevalence_pct = pct(n.user_count, participant_count);
        users_of.insert(n.id.clone(), users);
    }
    let sizes: HashMap<&str, usize> = h.level2.iter().map(|n| (n.id.as_str(), n.item_count)).collect();
    for p in &mut h.level1 {
        let mut users = BTreeSet::new();
        let mut count = 0;
        for c in &p.child_ids {
            count += sizes.get(c.as_str()).copied().unwrap_or(0);
            if let Some(u) = users_of.get(c) {
                users.extend(u.iter().copied());
            }
        }
        p.item_count = count;
        p.user_count = users.len();
        p.item_share_pct = pct(count, clustered);
        p.user_prevalence_pct = pct(users.len(), participant_count);
    }
}

/// Flat table of every item with its base and parent cluster (blank when
/// unclustered).
pub fn write_assignments_csv<W: Write>(out: W, h: &ClusterHierarchy, items: &[FacetItem]) -> csv::Result<()> {
    let mut base_of: HashMap<&str, &ClusterNode> = HashMap::new();
    for n in &h.level2 {
        for id in &n.item_ids {
            base_of.insert(id, n);
        }
    }
    let mut parent_of: HashMap<&str, &ClusterNode> = HashMap::new();
    for p in &h.level1 {
        for c in &p.child_ids {
            parent_of.insert(c, p);
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "item_id",
        "participant_id",
        "facet_kind",
        "text",
        "level2_id",
        "level2_name",
        "level1_id",
        "level1_name",
    ])?;
    for item in items.iter().filter(|i| i.facet_kind == h.facet_kind) {
        let base = base_of.get(item.item_id.as_str());
        let parent = base.and_then(|b| parent_of.get(b.id.as_str()));
        w.write_record([
            item.item_id.as_str(),
            item.participant_id.as_str(),
            item.facet_kind.as_str(),
            item.text.as_str(),
            base.map_or("", |b| b.id.as_str()),
            base.map_or("", |b| b.name.as_str()),
            parent.map_or("", |p| p.id.as_str()),
            parent.map_or("", |p| p.name.as_str()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
