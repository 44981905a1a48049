//! Temporal-semantic clustering of related memories and their fusion into a
//! single consolidated record with slower decay, gated by an information
//! preservation check.

use std::collections::BTreeSet;

use crate::config::EngineConfig;
use crate::dynamics::{self, ContextWindow};
use crate::embedding::dot;
use crate::oracle::{MergeOracle, OracleError};
use crate::record::{Layer, MemoryId, MemoryRecord, Timestamp};

/// A group of records eligible for fusion: every member is closer than the
/// fusion similarity gate to the seed and created within the temporal
/// locality window around it. The seed is always a member.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionCluster {
    pub seed_id: MemoryId,
    pub member_ids: Vec<MemoryId>,
    pub created_window: (Timestamp, Timestamp),
}

impl FusionCluster {
    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }
}

/// Why a fusion attempt did not produce a record.
#[derive(Debug, Clone, PartialEq)]
pub enum RejectCause {
    /// Preservation score fell below `theta_preserve`.
    Preservation { score: f64 },
    MergeFailed(OracleError),
    VerifierFailed(OracleError),
}

/// Result of one fusion attempt. A rejection leaves every member untouched.
#[derive(Debug, Clone, PartialEq)]
pub enum FuseOutcome {
    Fused(MemoryRecord),
    Rejected(RejectCause),
}

/// Finds disjoint fusion clusters. Seeds are visited by ascending creation
/// time (ties by id) and greedily claim every still-unclaimed record within
/// the similarity and temporal gates; clusters smaller than
/// `cluster_min_size` are discarded and claim nothing.
pub fn find_fusion_clusters<'a, I>(store_view: I, cfg: &EngineConfig) -> Vec<FusionCluster>
where
    I: IntoIterator<Item = &'a MemoryRecord>,
{
    let mut records: Vec<&MemoryRecord> = store_view.into_iter().collect();
    records.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then(a.id.cmp(&b.id)));

    let mut claimed: BTreeSet<MemoryId> = BTreeSet::new();
    let mut clusters = Vec::new();

    for (k, seed) in records.iter().enumerate() {
        if claimed.contains(&seed.id) {
            continue;
        }
        let mut member_ids = vec![seed.id];
        // Records are time-sorted, so candidates within the temporal window
        // sit in a contiguous range around the seed.
        let in_window = |r: &MemoryRecord| {
            (r.created_at.days() - seed.created_at.days()).abs() < cfg.t_window_days
        };
        let before = records[..k]
            .iter()
            .rev()
            .take_while(|r| in_window(r))
            .copied();
        let after = records[k + 1..].iter().take_while(|r| in_window(r)).copied();
        for other in before.chain(after) {
            if claimed.contains(&other.id) {
                continue;
            }
            if dot(&other.embedding, &seed.embedding) > cfg.theta_fusion {
                member_ids.push(other.id);
            }
        }
        if member_ids.len() < cfg.cluster_min_size {
            continue;
        }
        member_ids.sort();
        claimed.extend(member_ids.iter().copied());
        let times: Vec<Timestamp> = member_ids
            .iter()
            .map(|id| records.iter().find(|r| r.id == *id).unwrap().created_at)
            .collect();
        let min_t = times.iter().copied().min_by(Timestamp::total_cmp).unwrap();
        let max_t = times.iter().copied().max_by(Timestamp::total_cmp).unwrap();
        clusters.push(FusionCluster {
            seed_id: seed.id,
            member_ids,
            created_window: (min_t, max_t),
        });
    }
    clusters
}

/// Aggregated strength of a fused record: the members' maximum plus a
/// variance bonus (diverse supporting strengths consolidate harder), clipped
/// to [0,1]. Variance is the population variance. `None` for an empty list.
pub fn fused_strength(member_strengths: &[f64], eps_var: f64) -> Option<f64> {
    if member_strengths.is_empty() {
        return None;
    }
    let n = member_strengths.len() as f64;
    let max = member_strengths.iter().copied().fold(f64::MIN, f64::max);
    let mean = member_strengths.iter().sum::<f64>() / n;
    let variance = member_strengths
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    Some((max + eps_var * variance).min(1.0))
}

/// Decay-rate modifier for a fused cluster: `1 / (1 + ln n)`, natural log.
pub fn fused_decay_scale(cluster_size: usize) -> f64 {
    assert!(cluster_size >= 1, "cluster size must be at least 1");
    1.0 / (1.0 + (cluster_size as f64).ln())
}

/// Fuses a cluster into one record.
///
/// Member contents are merged in creation order; the verifier scores how
/// much source information the merged text preserves, and a score below
/// `theta_preserve` rejects the fusion. The fused record keeps the seed's
/// embedding, the earliest creation time, the union of access histories, the
/// long-term layer if any member held it, and a recomputed importance.
#[allow(clippy::too_many_arguments)]
pub fn fuse(
    cluster: &FusionCluster,
    members: &[&MemoryRecord],
    merger: &dyn MergeOracle,
    verifier: &dyn MergeOracle,
    ctx: &ContextWindow,
    now: Timestamp,
    new_id: MemoryId,
    cfg: &EngineConfig,
) -> FuseOutcome {
    let mut ordered: Vec<&MemoryRecord> = members.to_vec();
    ordered.sort_by(|a, b| a.created_at.total_cmp(&b.created_at).then(a.id.cmp(&b.id)));

    let sources: Vec<&str> = ordered.iter().map(|r| r.content.as_str()).collect();
    let merged = match merger.merge(&sources) {
        Ok(text) => text,
        Err(e) => return FuseOutcome::Rejected(RejectCause::MergeFailed(e)),
    };
    let score = match verifier.preservation_score(&sources, &merged) {
        Ok(score) => score,
        Err(e) => return FuseOutcome::Rejected(RejectCause::VerifierFailed(e)),
    };
    if score < cfg.theta_preserve {
        return FuseOutcome::Rejected(RejectCause::Preservation { score });
    }

    let strengths: Vec<f64> = ordered
        .iter()
        .map(|r| dynamics::strength_at(r, now, cfg))
        .collect();
    let anchor_strength =
        fused_strength(&strengths, cfg.eps_var).expect("cluster members are non-empty");

    let seed = ordered
        .iter()
        .find(|r| r.id == cluster.seed_id)
        .unwrap_or(&ordered[0]);

    let mut access_times: Vec<Timestamp> = ordered
        .iter()
        .flat_map(|r| r.access_times.iter().copied())
        .collect();
    access_times.sort_by(Timestamp::total_cmp);
    access_times.dedup();

    let layer = if ordered.iter().any(|r| r.layer == Layer::Lml) {
        Layer::Lml
    } else {
        Layer::Sml
    };

    let mut fused = MemoryRecord {
        id: new_id,
        content: merged,
        embedding: seed.embedding.clone(),
        anchor_strength,
        anchor_time: now,
        created_at: ordered[0].created_at,
        access_times,
        layer,
        importance: 0.0,
        decay_scale: fused_decay_scale(ordered.len()),
        category_label: seed.category_label.clone(),
    };
    fused.importance = dynamics::importance(&fused, ctx, now, cfg);
    FuseOutcome::Fused(fused)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingProvider, HashEmbedder};
    use crate::oracle::RuleOracle;

    fn record(id: u64, text: &str, created: f64) -> MemoryRecord {
        MemoryRecord::new(
            MemoryId(id),
            text.to_string(),
            HashEmbedder::default().embed(text).unwrap(),
            Timestamp::new(created),
            Layer::Sml,
            0.2,
        )
    }

    fn cfg() -> EngineConfig {
        EngineConfig::default()
    }

    fn burst(base: &str, extras: &[&str], start_day: f64, gap: f64) -> Vec<MemoryRecord> {
        extras
            .iter()
            .enumerate()
            .map(|(i, extra)| {
                record(
                    i as u64 + 1,
                    &format!("{base} {extra}"),
                    start_day + gap * i as f64,
                )
            })
            .collect()
    }

    #[test]
    fn dissimilar_records_form_no_clusters() {
        let records = [
            record(1, "morning walk by the river", 0.0),
            record(2, "quarterly budget review notes", 0.2),
            record(3, "guitar practice chord changes", 0.4),
        ];
        assert!(find_fusion_clusters(records.iter(), &cfg()).is_empty());
    }

    #[test]
    fn near_duplicates_within_a_day_form_one_cluster() {
        let records = burst(
            "sensor reading battery level nominal today",
            &["first", "second", "third", "fourth"],
            0.0,
            0.25,
        );
        // Brute-force check: every pair clears the gates.
        for a in &records {
            for b in &records {
                let sim = dot(&a.embedding, &b.embedding);
                assert!(sim > cfg().theta_fusion, "{sim}");
                assert!((a.created_at.days() - b.created_at.days()).abs() < cfg().t_window_days);
            }
        }
        let clusters = find_fusion_clusters(records.iter(), &cfg());
        assert_eq!(clusters.len(), 1);
        assert_eq!(clusters[0].len(), 4);
        assert_eq!(clusters[0].seed_id, MemoryId(1));
    }

    #[test]
    fn similar_but_distant_in_time_records_are_excluded() {
        let mut records = burst(
            "sensor reading battery level nominal today",
            &["first", "second"],
            0.0,
            0.25,
        );
        let mut far = record(9, "sensor reading battery level nominal today third", 10.0);
        far.importance = 0.2;
        records.push(far);
        // Two in-window members are below the minimum cluster size of 3.
        assert!(find_fusion_clusters(records.iter(), &cfg()).is_empty());
    }

    #[test]
    fn fused_strength_matches_hand_evaluations() {
        // Equal strengths: variance 0, bonus vanishes.
        assert_eq!(fused_strength(&[0.7, 0.7, 0.7], 0.1), Some(0.7));
        // {0.4, 0.6, 0.8}: population variance 0.02667 -> 0.8027.
        let v = fused_strength(&[0.4, 0.6, 0.8], 0.1).unwrap();
        assert!((v - 0.802667).abs() < 1e-5, "{v}");
        // {1, 1, 0} with eps 1: 1 + 0.2222 clips to 1.
        assert_eq!(fused_strength(&[1.0, 1.0, 0.0], 1.0), Some(1.0));
        assert_eq!(fused_strength(&[], 0.1), None);
    }

    #[test]
    fn fused_decay_scale_matches_hand_evaluations() {
        assert_eq!(fused_decay_scale(1), 1.0);
        let s3 = fused_decay_scale(3);
        assert!((s3 - 0.4765).abs() < 1e-4, "{s3}");
        let mut prev = fused_decay_scale(1);
        for n in 2..10 {
            let s = fused_decay_scale(n);
            assert!(s < prev);
            prev = s;
        }
    }

    fn fuse_cluster(records: &[MemoryRecord], now: f64) -> FuseOutcome {
        let cfg = cfg();
        let clusters = find_fusion_clusters(records.iter(), &cfg);
        assert_eq!(clusters.len(), 1);
        let members: Vec<&MemoryRecord> = records.iter().collect();
        fuse(
            &clusters[0],
            &members,
            &RuleOracle,
            &RuleOracle,
            &ContextWindow::new(),
            Timestamp::new(now),
            MemoryId(100),
            &cfg,
        )
    }

    #[test]
    fn identical_texts_fuse_with_full_preservation() {
        let text = "sensor reading battery level nominal today";
        let records: Vec<MemoryRecord> =
            (1..=3).map(|i| record(i, text, 0.1 * i as f64)).collect();
        match fuse_cluster(&records, 1.0) {
            FuseOutcome::Fused(fused) => {
                assert_eq!(fused.content, text);
                assert_eq!(fused.created_at.days(), 0.1);
                assert_eq!(fused.decay_scale, fused_decay_scale(3));
            }
            FuseOutcome::Rejected(cause) => panic!("unexpected rejection: {cause:?}"),
        }
    }

    #[test]
    fn lossy_merger_is_rejected_by_preservation_gate() {
        // Merger that keeps only the first half of each source's tokens;
        // the rule verifier then counts the missing ones.
        struct LossyMerger;
        impl MergeOracle for LossyMerger {
            fn merge(&self, ordered_texts: &[&str]) -> Result<String, OracleError> {
                let kept: Vec<String> = ordered_texts
                    .iter()
                    .map(|t| {
                        let words: Vec<&str> = t.split_whitespace().collect();
                        words[..words.len() / 2].join(" ")
                    })
                    .collect();
                Ok(kept.join(" "))
            }
            fn preservation_score(&self, _: &[&str], _: &str) -> Result<f64, OracleError> {
                unreachable!("verification uses the rule oracle")
            }
        }

        let records = burst(
            "sensor reading battery level nominal today",
            &["first", "second", "third"],
            0.0,
            0.2,
        );
        let cfg = cfg();
        let clusters = find_fusion_clusters(records.iter(), &cfg);
        let members: Vec<&MemoryRecord> = records.iter().collect();
        let outcome = fuse(
            &clusters[0],
            &members,
            &LossyMerger,
            &RuleOracle,
            &ContextWindow::new(),
            Timestamp::new(1.0),
            MemoryId(100),
            &cfg,
        );
        match outcome {
            FuseOutcome::Rejected(RejectCause::Preservation { score }) => {
                assert!(score < cfg.theta_preserve, "{score}");
            }
            other => panic!("expected preservation rejection, got {other:?}"),
        }
    }

    #[test]
    fn fusion_preserves_union_of_access_histories() {
        let mut records = burst(
            "sensor reading battery level nominal today",
            &["first", "second", "third"],
            0.0,
            0.2,
        );
        records[0].access_times = vec![Timestamp::new(0.5)];
        records[1].access_times = vec![Timestamp::new(0.6), Timestamp::new(0.9)];
        records[2].access_times = vec![Timestamp::new(0.6)];
        match fuse_cluster(&records, 1.0) {
            FuseOutcome::Fused(fused) => {
                let days: Vec<f64> = fused.access_times.iter().map(|t| t.days()).collect();
                assert_eq!(days, vec![0.5, 0.6, 0.9]);
            }
            FuseOutcome::Rejected(cause) => panic!("unexpected rejection: {cause:?}"),
        }
    }

    #[test]
    fn fused_record_takes_lml_if_any_member_has_it() {
        let mut records = burst(
            "sensor reading battery level nominal today",
            &["first", "second", "third"],
            0.0,
            0.2,
        );
        records[1].layer = Layer::Lml;
        match fuse_cluster(&records, 1.0) {
            FuseOutcome::Fused(fused) => assert_eq!(fused.layer, Layer::Lml),
            FuseOutcome::Rejected(cause) => panic!("unexpected rejection: {cause:?}"),
        }
    }

    #[test]
    fn fused_strength_dominates_member_strengths() {
        let cfg = cfg();
        let mut records = burst(
            "sensor reading battery level nominal today",
            &["first", "second", "third"],
            0.0,
            0.2,
        );
        records[0].anchor_strength = 0.4;
        records[1].anchor_strength = 0.9;
        let now = Timestamp::new(1.5);
        let max_member = records
            .iter()
            .map(|r| dynamics::strength_at(r, now, &cfg))
            .fold(f64::MIN, f64::max);
        match fuse_cluster(&records, 1.5) {
            FuseOutcome::Fused(fused) => {
                assert!(fused.anchor_strength >= max_member);
                assert!(fused.anchor_strength <= 1.0);
            }
            FuseOutcome::Rejected(cause) => panic!("unexpected rejection: {cause:?}"),
        }
    }
}
