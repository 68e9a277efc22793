use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::base::{BaseCluster, HIERARCHY_SYSTEM};
use super::{normalize, ClusterConfig, ClusterError};
use crate::providers::{generate, GenerationParams, GenerationRequest, Generator, SchemaId, INPUT_MARKER};

const PROPOSE_PROMPT: &str = "Below are the names of clusters of similar items. Propose broader parent \
categories that together cover all of them, fewer parents than clusters. Reply as \
{\"parents\": [\"...\", ...]}.";

const DEDUP_PROMPT: &str = "Below is a numbered list of candidate category names (0-based). Identify names \
that mean the same thing. Reply as {\"merge_groups\": [[i, j, ...], ...]}; use an empty list if all are distinct.";

const ASSIGN_PROMPT: &str = "Assign every child cluster to the one parent category that fits it best. Reply \
as {\"assignments\": [...]} with one 0-based parent index per child, in child order. Use null when no \
parent fits.";

const RENAME_PROMPT: &str = "Each parent category below lists the clusters now assigned to it. Give each \
parent a name that accurately covers its children. Reply as {\"names\": [...]}, one per parent, in order.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeStatus {
    InRange,
    BelowRange,
    AboveRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParentGroup {
    pub name: String,
    /// Indices into the base cluster list, ascending.
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyBuild {
    pub parents: Vec<ParentGroup>,
    pub rounds: usize,
    pub range_status: RangeStatus,
}

/// A node of the layer currently being grouped.
#[derive(Debug, Clone)]
struct LayerNode {
    label: String,
    centroid: Vec<f64>,
    weight: f64,
    bases: Vec<usize>,
}

fn request(prompt: &str, payload: Value, schema: SchemaId) -> GenerationRequest {
    let user = format!("{prompt}\n{INPUT_MARKER}\n{payload}");
    GenerationRequest::new(HIERARCHY_SYSTEM, user, GenerationParams::HIERARCHY, schema)
}

fn string_array(v: &Value, key: &str) -> Result<Vec<String>, String> {
    let arr = v[key].as_array().ok_or_else(|| format!("expected \"{key}\" to be a list"))?;
    arr.iter()
        .map(|x| match x.as_str().map(str::trim) {
            Some(s) if !s.is_empty() => Ok(s.to_string()),
            _ => Err(format!("\"{key}\" entries must be non-empty strings")),
        })
        .collect()
}

fn parse_json(raw: &str) -> Result<Value, String> {
    serde_json::from_str(raw).map_err(|e| e.to_string())
}

fn parse_merges(raw: &str, n: usize) -> Result<Vec<Vec<usize>>, String> {
    let v = parse_json(raw)?;
    let groups = v["merge_groups"].as_array().ok_or("expected \"merge_groups\" list")?;
    groups
        .iter()
        .map(|g| {
            g.as_array()
                .ok_or_else(|| "each merge group must be a list".to_string())?
                .iter()
                .map(|i| match i.as_u64() {
                    Some(i) if (i as usize) < n => Ok(i as usize),
                    _ => Err(format!("merge index {i} out of range 0..{n}")),
                })
                .collect()
        })
        .collect()
}

fn parse_assignments(raw: &str, children: usize, parents: usize) -> Result<Vec<Option<usize>>, String> {
    let v = parse_json(raw)?;
    let arr = v["assignments"].as_array().ok_or("expected \"assignments\" list")?;
    if arr.len() != children {
        return Err(format!("expected {children} assignments, got {}", arr.len()));
    }
    arr.iter()
        .map(|a| match a {
            Value::Null => Ok(None),
            Value::Number(n) if n.as_i64().is_some_and(|x| x < 0) => Ok(None),
            Value::Number(n) => match n.as_u64() {
                Some(p) if (p as usize) < parents => Ok(Some(p as usize)),
                _ => Err(format!("parent index {n} out of range 0..{parents}")),
            },
            other => Err(format!("assignment {other} is not an index or null")),
        })
        .collect()
}

/// Groups indices `0..n` by the transitive closure of `groups`. Each class is
/// represented by its smallest index; classes are returned in that order.
pub(crate) fn union_find(n: usize, groups: &[Vec<usize>]) -> Vec<Vec<usize>> {
    fn find(parent: &mut [usize], x: usize) -> usize {
        let mut root = x;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = x;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    let mut parent: Vec<usize> = (0..n).collect();
    for g in groups {
        for w in g.windows(2) {
            let (a, b) = (find(&mut parent, w[0]), find(&mut parent, w[1]));
            let (lo, hi) = (a.min(b), a.max(b));
            parent[hi] = lo;
        }
    }
    let mut classes: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = classes.len();
            classes.push(Vec::new());
        }
        classes[slot[r]].push(i);
    }
    classes
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn weighted_centroid(nodes: &[&LayerNode]) -> Vec<f64> {
    let dim = nodes[0].centroid.len();
    let mut sum = vec![0.0; dim];
    for n in nodes {
        for (s, x) in sum.iter_mut().zip(&n.centroid) {
            *s += n.weight * x;
        }
    }
    normalize(sum)
}

fn run_round(layer: &[LayerNode], gen: &dyn Generator, retries: u32) -> Result<Vec<LayerNode>, ClusterError> {
    let labels: Vec<&str> = layer.iter().map(|n| n.label.as_str()).collect();

    let proposed = generate(
        gen,
        &request(PROPOSE_PROMPT, json!({ "labels": labels }), SchemaId::ParentProposals),
        retries,
        |raw| string_array(&parse_json(raw)?, "parents"),
    )?;
    if proposed.is_empty() {
        return Err(ClusterError::HierarchyDegenerate("no parent categories proposed".into()));
    }

    let parents: Vec<String> = if proposed.len() > 1 {
        let n = proposed.len();
        let groups = generate(
            gen,
            &request(DEDUP_PROMPT, json!({ "candidates": proposed }), SchemaId::ParentMerges),
            retries,
            |raw| parse_merges(raw, n),
        )?;
        union_find(n, &groups).into_iter().map(|c| proposed[c[0]].clone()).collect()
    } else {
        proposed
    };

    let p = parents.len();
    let assigned = generate(
        gen,
        &request(
            ASSIGN_PROMPT,
            json!({ "children": labels, "parents": parents }),
            SchemaId::ParentAssignments,
        ),
        retries,
        |raw| parse_assignments(raw, layer.len(), p),
    )?;

    let mut children: Vec<Vec<usize>> = vec![Vec::new(); p];
    for (c, a) in assigned.iter().enumerate() {
        if let Some(j) = a {
            children[*j].push(c);
        }
    }
    let centroids: Vec<Option<Vec<f64>>> = children
        .iter()
        .map(|cs| {
            (!cs.is_empty()).then(|| weighted_centroid(&cs.iter().map(|&c| &layer[c]).collect::<Vec<_>>()))
        })
        .collect();
    for (c, a) in assigned.iter().enumerate() {
        if a.is_some() {
            continue;
        }
        let nearest = centroids
            .iter()
            .enumerate()
            .filter_map(|(j, cen)| cen.as_ref().map(|cen| (j, cosine(&layer[c].centroid, cen))))
            .fold(None::<(usize, f64)>, |best, (j, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((j, s)),
            });
        match nearest {
            Some((j, _)) => children[j].push(c),
            None => return Err(ClusterError::HierarchyDegenerate("no child was assigned to any parent".into())),
        }
    }

    let kept: Vec<(String, Vec<usize>)> = parents
        .into_iter()
        .zip(children)
        .filter(|(_, cs)| !cs.is_empty())
        .map(|(name, mut cs)| {
            cs.sort_unstable();
            (name, cs)
        })
        .collect();

    let payload: Vec<Value> = kept
        .iter()
        .map(|(name, cs)| json!({ "name": name, "children": cs.iter().map(|&c| labels[c]).collect::<Vec<_>>() }))
        .collect();
    let k = kept.len();
    let names = generate(
        gen,
        &request(RENAME_PROMPT, json!({ "parents": payload }), SchemaId::ParentNames),
        retries,
        |raw| {
            let names = string_array(&parse_json(raw)?, "names")?;
            if names.len() != k {
                return Err(format!("expected {k} names, got {}", names.len()));
            }
            Ok(names)
        },
    )?;

    Ok(kept
        .into_iter()
        .zip(names)
        .map(|((_, cs), name)| {
            let members: Vec<&LayerNode> = cs.iter().map(|&c| &layer[c]).collect();
            let mut bases: Vec<usize> = members.iter().flat_map(|m| m.bases.iter().copied()).collect();
            bases.sort_unstable();
            LayerNode {
                label: name,
                centroid: weighted_centroid(&members),
                weight: members.iter().map(|m| m.weight).sum(),
                bases,
            }
        })
        .collect())
}

/// Propose, deduplicate, assign and rename parents, repeating on the parent
/// layer while it has more than `max_top_level` nodes and rounds remain.
pub fn build_hierarchy(
    base: &[BaseCluster],
    gen: &dyn Generator,
    config: &ClusterConfig,
) -> Result<HierarchyBuild, ClusterError> {
    if base.is_empty() {
        return Err(ClusterError::NoBaseClusters);
    }
    let mut layer: Vec<LayerNode> = base
        .iter()
        .enumerate()
        .map(|(i, b)| LayerNode {
            label: b.name.clone(),
            centroid: b.centroid.clone(),
            weight: b.members.len() as f64,
            bases: vec![i],
        })
        .collect();
    let mut rounds = 0;
    loop {
        layer = run_round(&layer, gen, config.max_retries)?;
        rounds += 1;
        log::debug!("hierarchy round {rounds}: {} parents", layer.len());
        if layer.len() <= config.max_top_level || rounds >= config.max_rounds.max(1) {
            break;
        }
    }
    let range_status = if layer.len() < config.min_top_level {
        RangeStatus::BelowRange
    } else if layer.len() > config.max_top_level {
        RangeStatus::AboveRange
    } else {
        RangeStatus::InRange
    };
    Ok(HierarchyBuild {
        parents: layer
            .into_iter()
            .map(|n| ParentGroup {
                name: n.label,
                children: n.bases,
            })
            .collect(),
        rounds,
        range_status,
    })
}
