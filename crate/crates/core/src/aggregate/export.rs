use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use super::{round1, AggregateReport};

/// File names written by [`export_plot_data`].
pub const PLOT_TABLES: [&str; 8] = [
    "usage.csv",
    "hours.csv",
    "clusters.csv",
    "coverage.csv",
    "subgroups.csv",
    "cooccurrence.csv",
    "conditional_usage.csv",
    "demographics.csv",
];

fn p1(x: f64) -> String {
    format!("{:.1}", round1(x))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_default()
}

fn table<F>(dir: &Path, name: &str, header: &[&str], rows: F) -> io::Result<PathBuf>
where
    F: FnOnce(&mut csv::Writer<File>) -> csv::Result<()>,
{
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(header)?;
    rows(&mut w)?;
    w.flush()?;
    Ok(path)
}

/// Writes one CSV per figure into `dir`. Percentages are rendered at one
/// decimal place.
pub fn export_plot_data(report: &AggregateReport, dir: &Path) -> io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    written.push(table(
        dir,
        PLOT_TABLES[0],
        &["participant_id", "conversation_count", "message_count", "messages_per_conversation_mean", "peak_hour", "tier"],
        |w| {
            for r in &report.usage.rows {
                w.write_record([
                    r.participant_id.clone(),
                    r.conversation_count.to_string(),
                    r.message_count.to_string(),
                    format!("{:.3}", r.messages_per_conversation_mean),
                    r.peak_hour.to_string(),
                    r.tier.as_str().to_string(),
                ])?;
            }
            Ok(())
        },
    )?);

    written.push(table(dir, PLOT_TABLES[1], &["hour", "messages"], |w| {
        for (h, n) in report.usage.hour_totals.iter().enumerate() {
            w.write_record([h.to_string(), n.to_string()])?;
        }
        Ok(())
    })?);

    written.push(table(
        dir,
        PLOT_TABLES[2],
        &["facet_kind", "level", "cluster_id", "parent_id", "name", "item_count", "user_count", "item_share_pct", "user_prevalence_pct"],
        |w| {
            for h in &report.hierarchies {
                let kind = h.facet_kind.as_str();
                for p in &h.level1 {
                    w.write_record([kind, "1", &p.id, "", &p.name, &p.item_count.to_string(), &p.user_count.to_string(), &p1(p.item_share_pct), &p1(p.user_prevalence_pct)])?;
                }
                for n in &h.level2 {
                    let parent = h.level1.iter().find(|p| p.child_ids.contains(&n.id)).map_or("", |p| p.id.as_str());
                    w.write_record([kind, "2", &n.id, parent, &n.name, &n.item_count.to_string(), &n.user_count.to_string(), &p1(n.item_share_pct), &p1(n.user_prevalence_pct)])?;
                }
            }
            Ok(())
        },
    )?);

    written.push(table(
        dir,
        PLOT_TABLES[3],
        &["facet_kind", "total_items", "clustered_items", "coverage_pct", "top_level_count"],
        |w| {
            for c in &report.coverage {
                w.write_record([
                    c.facet_kind.as_str().to_string(),
                    c.total_items.to_string(),
                    c.clustered_items.to_string(),
                    p1(c.coverage_pct),
                    c.top_level_count.to_string(),
                ])?;
            }
            Ok(())
        },
    )?);

    written.push(table(
        dir,
        PLOT_TABLES[4],
        &["facet_kind", "cluster_id", "cluster_name", "dimension", "value", "n", "subgroup_pct", "baseline_pct", "deviation_pp"],
        |w| {
            for d in &report.subgroup_deviations {
                w.write_record([
                    d.facet_kind.as_str().to_string(),
                    d.cluster_id.clone(),
                    d.cluster_name.clone(),
                    d.subgroup.dimension.clone(),
                    d.subgroup.value.clone(),
                    d.subgroup.n.to_string(),
                    p1(d.subgroup_prevalence_pct),
                    p1(d.baseline_prevalence_pct),
                    format!("{:+.1}", d.deviation_pp),
                ])?;
            }
            Ok(())
        },
    )?);

    written.push(table(dir, PLOT_TABLES[5], &["cluster_a", "cluster_b", "participants_in_both", "pct"], |w| {
        for c in &report.cooccurrences {
            w.write_record([c.cluster_a.clone(), c.cluster_b.clone(), c.participants_in_both.to_string(), p1(c.pct)])?;
        }
        Ok(())
    })?);

    written.push(table(
        dir,
        PLOT_TABLES[6],
        &["cluster_id", "cluster_name", "flagged_n", "flagged_mean", "flagged_median", "unflagged_n", "unflagged_mean", "unflagged_median"],
        |w| {
            for r in &report.conditional_usage {
                let (f, u) = (r.stats.flagged.as_ref(), r.stats.unflagged.as_ref());
                w.write_record([
                    r.cluster_id.clone(),
                    r.cluster_name.clone(),
                    f.map_or(0, |g| g.n).to_string(),
                    opt(f.map(|g| g.mean)),
                    opt(f.map(|g| g.median)),
                    u.map_or(0, |g| g.n).to_string(),
                    opt(u.map(|g| g.mean)),
                    opt(u.map(|g| g.median)),
                ])?;
            }
            Ok(())
        },
    )?);

    written.push(table(
        dir,
        PLOT_TABLES[7],
        &["dimension", "code", "count", "share_pct", "response_rate_pct"],
        |w| {
            for (dim, s) in &report.demographics {
                for (code, n) in &s.counts {
                    w.write_record([dim.clone(), code.clone(), n.to_string(), p1(s.shares_pct[code]), p1(s.response_rate_pct)])?;
                }
            }
            Ok(())
        },
    )?);

    Ok(written)
}
