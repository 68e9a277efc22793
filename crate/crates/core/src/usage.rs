//! Per-participant usage telemetry and tier classification.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ingest::{Conversation, Role};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Heavy,
    Normal,
    Light,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Heavy => "heavy",
            Tier::Normal => "normal",
            Tier::Light => "light",
        }
    }
}

/// Heavy means strictly more than `heavy` conversations, light strictly fewer
/// than `light`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierThresholds {
    pub heavy: usize,
    pub light: usize,
}

impl Default for TierThresholds {
    fn default() -> Self {
        Self { heavy: 1000, light: 100 }
    }
}

impl TierThresholds {
    pub fn classify(&self, conversation_count: usize) -> Tier {
        if conversation_count > self.heavy {
            Tier::Heavy
        } else if conversation_count < self.light {
            Tier::Light
        } else {
            Tier::Normal
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    pub participant_id: String,
    /// Conversations with at least one user message.
    pub conversation_count: usize,
    /// User messages.
    pub message_count: usize,
    pub messages_per_conversation_mean: f64,
    pub messages_per_conversation_median: f64,
    /// User messages per local hour of day.
    pub hour_histogram: [usize; 24],
    pub peak_hour: u32,
    pub tier: Tier,
    pub active_days: usize,
}

impl UsageStats {
    /// Hex sha256 of the conversation count, message count and hour
    /// histogram. Identical archives give identical fingerprints.
    pub fn fingerprint(&self) -> String {
        let hours: Vec<String> = self.hour_histogram.iter().map(usize::to_string).collect();
        let canonical = format!(
            "conversations={};messages={};hours={}",
            self.conversation_count,
            self.message_count,
            hours.join(",")
        );
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Median of a sorted slice; 0 when empty.
pub(crate) fn median_sorted(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        n if n % 2 == 1 => xs[n / 2],
        n => (xs[n / 2 - 1] + xs[n / 2]) / 2.0,
    }
}

/// Usage over the user messages of `conversations`, which should already be
/// restricted to the analysis year but not length-filtered.
pub fn compute_usage(participant_id: &str, conversations: &[Conversation], thresholds: TierThresholds) -> UsageStats {
    let mut per_conversation: Vec<f64> = Vec::new();
    let mut hour_histogram = [0usize; 24];
    let mut days = BTreeSet::new();
    for conv in conversations {
        let mut n = 0usize;
        for m in conv.messages.iter().filter(|m| m.role == Role::User) {
            n += 1;
            if let Some(t) = m.timestamp {
                hour_histogram[t.local_hour() as usize] += 1;
                days.insert(t.local_date());
            }
        }
        if n > 0 {
            per_conversation.push(n as f64);
        }
    }
    per_conversation.sort_by(f64::total_cmp);
    let conversation_count = per_conversation.len();
    let message_count = per_conversation.iter().sum::<f64>() as usize;
    let mean = if conversation_count == 0 {
        0.0
    } else {
        message_count as f64 / conversation_count as f64
    };
    let peak_hour = (0..24).rev().max_by_key(|&h| hour_histogram[h]).unwrap_or(0) as u32;
    UsageStats {
        participant_id: participant_id.to_string(),
        conversation_count,
        message_count,
        messages_per_conversation_mean: mean,
        messages_per_conversation_median: median_sorted(&per_conversation),
        hour_histogram,
        peak_hour,
        tier: thresholds.classify(conversation_count),
        active_days: days.len(),
    }
}

#[cfg(test)]
mod tests {
    use chrono::{Duration, TimeZone, Utc};
    use proptest::prelude::*;

    use super::*;
    use crate::ingest::{Message, Source, Timestamp};

    fn conv(id: usize, hours: &[u32]) -> Conversation {
        Conversation {
            id: format!("c{id}"),
            title: None,
            source: Source::Neutral,
            created_at: None,
            messages: hours
                .iter()
                .enumerate()
                .flat_map(|(i, &h)| {
                    let t = Utc.with_ymd_and_hms(2025, 5, 1 + (i as u32 % 28), h, 15, 0).unwrap();
                    [
                        Message {
                            id: format!("u{i}"),
                            role: Role::User,
                            text: "question".into(),
                            timestamp: Some(Timestamp::from_utc(t)),
                        },
                        Message {
                            id: format!("a{i}"),
                            role: Role::Assistant,
                            text: "answer".into(),
                            timestamp: Some(Timestamp::from_utc(t + Duration::seconds(5))),
                        },
                    ]
                })
                .collect(),
        }
    }

    #[test]
    fn tier_boundaries() {
        let t = TierThresholds::default();
        assert_eq!(t.classify(1001), Tier::Heavy);
        assert_eq!(t.classify(1000), Tier::Normal);
        assert_eq!(t.classify(100), Tier::Normal);
        assert_eq!(t.classify(99), Tier::Light);
        let convs: Vec<Conversation> = (0..1001).map(|i| conv(i, &[10])).collect();
        assert_eq!(compute_usage("p", &convs, t).tier, Tier::Heavy);
        assert_eq!(compute_usage("p", &convs[..100], t).tier, Tier::Normal);
    }

    #[test]
    fn hour_histogram_example() {
        let stats = compute_usage("p", &[conv(0, &[13, 13]), conv(1, &[13, 22])], TierThresholds::default());
        assert_eq!(stats.hour_histogram[13], 3);
        assert_eq!(stats.hour_histogram[22], 1);
        assert_eq!(stats.peak_hour, 13);
        assert_eq!(stats.message_count, 4);
        assert_eq!(stats.conversation_count, 2);
    }

    #[test]
    fn peak_hour_tie_goes_to_smallest() {
        let stats = compute_usage("p", &[conv(0, &[20, 7])], TierThresholds::default());
        assert_eq!(stats.peak_hour, 7);
    }

    #[test]
    fn local_offset_drives_hour() {
        let mut c = conv(0, &[23]);
        let utc = c.messages[0].timestamp.unwrap().utc();
        c.messages[0].timestamp = Timestamp::with_offset(utc, 120);
        let stats = compute_usage("p", &[c], TierThresholds::default());
        assert_eq!(stats.hour_histogram[1], 1);
    }

    #[test]
    fn empty_is_zeroed_light() {
        let stats = compute_usage("p", &[], TierThresholds::default());
        assert_eq!(stats.conversation_count, 0);
        assert_eq!(stats.messages_per_conversation_mean, 0.0);
        assert_eq!(stats.messages_per_conversation_median, 0.0);
        assert_eq!(stats.peak_hour, 0);
        assert_eq!(stats.tier, Tier::Light);
    }

    #[test]
    fn assistant_only_conversation_not_counted() {
        let mut c = conv(0, &[9]);
        c.messages.retain(|m| m.role == Role::Assistant);
        let stats = compute_usage("p", &[c, conv(1, &[9, 10, 11])], TierThresholds::default());
        assert_eq!(stats.conversation_count, 1);
        assert_eq!(stats.messages_per_conversation_mean, 3.0);
    }

    #[test]
    fn fingerprint_ignores_participant_and_tracks_counts() {
        let a = compute_usage("a", &[conv(0, &[9, 10])], TierThresholds::default());
        let b = compute_usage("b", &[conv(0, &[9, 10])], TierThresholds::default());
        let c = compute_usage("a", &[conv(0, &[9, 11])], TierThresholds::default());
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
        assert_eq!(a.fingerprint().len(), 64);
    }

    fn corpus_strategy() -> impl Strategy<Value = Vec<Vec<u32>>> {
        prop::collection::vec(prop::collection::vec(0u32..24, 0..8), 0..12)
    }

    proptest! {
        #[test]
        fn permutation_invariant(hours in corpus_strategy(), seed in any::<u64>()) {
            let convs: Vec<Conversation> = hours.iter().enumerate().map(|(i, h)| conv(i, h)).collect();
            let mut shuffled = convs.clone();
            let n = shuffled.len();
            if n > 1 {
                let mut s = seed;
                for i in (1..n).rev() {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    shuffled.swap(i, (s >> 33) as usize % (i + 1));
                }
            }
            let a = compute_usage("p", &convs, TierThresholds::default());
            let b = compute_usage("p", &shuffled, TierThresholds::default());
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.fingerprint(), b.fingerprint());
        }

        #[test]
        fn matches_brute_force(hours in corpus_strategy()) {
            let convs: Vec<Conversation> = hours.iter().enumerate().map(|(i, h)| conv(i, h)).collect();
            let stats = compute_usage("p", &convs, TierThresholds::default());

            let counts: Vec<usize> = hours.iter().map(Vec::len).filter(|&n| n > 0).collect();
            prop_assert_eq!(stats.conversation_count, counts.len());
            prop_assert_eq!(stats.message_count, counts.iter().sum::<usize>());
            if !counts.is_empty() {
                let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
                prop_assert!((stats.messages_per_conversation_mean - mean).abs() < 1e-12);
                // Median: the value with at most half strictly below and at most
                // half strictly above, averaged over the two middles.
                let mut sorted = counts.clone();
                sorted.sort();
                let lo = sorted[(sorted.len() - 1) / 2] as f64;
                let hi = sorted[sorted.len() / 2] as f64;
                prop_assert_eq!(stats.messages_per_conversation_median, (lo + hi) / 2.0);
            }
            let mut hist = [0usize; 24];
            for h in hours.iter().flatten() {
                hist[*h as usize] += 1;
            }
            prop_assert_eq!(stats.hour_histogram, hist);
            prop_assert_eq!(stats.hour_histogram.iter().sum::<usize>(), stats.message_count);
            let best = *hist.iter().max().unwrap();
            prop_assert_eq!(stats.peak_hour as usize, hist.iter().position(|&c| c == best).unwrap());
        }
    }
}
