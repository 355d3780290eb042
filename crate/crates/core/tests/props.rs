mod common;

use std::collections::BTreeMap;

use common::diffy_apply;
use coursecorrect::backend::{find_cycle, has_duplicate_call};
use coursecorrect::env::{diff_trees, Difficulty, FileTree};
use coursecorrect::metrics::{aggregate, patch_generation_rate, resolution_rate, Exact, InstanceMetrics, PriceTable};
use coursecorrect::transcript::Outcome;
use coursecorrect::{Patch, TokenUsage};
use proptest::prelude::*;

fn content() -> impl Strategy<Value = String> {
    (prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "", "fn x() {}", "  z"]), 0..12), any::<bool>())
        .prop_map(|(lines, trailing)| {
            let mut text = lines.join("\n");
            if trailing && !text.is_empty() {
                text.push('\n');
            }
            text
        })
}

fn tree() -> impl Strategy<Value = FileTree> {
    prop::collection::btree_map(prop::sample::select(vec!["a.txt", "b.rs", "src/c.rs", "src/deep/d.md"]), content(), 0..4)
        .prop_map(|m| m.into_iter().map(|(k, v)| (k.to_owned(), v)).collect())
}

/// Shortest period, then earliest start, by direct comparison.
fn brute_cycle(a: &[u8]) -> Option<(usize, usize)> {
    (2..=a.len() / 2).find_map(|p| (0..=a.len() - 2 * p).find(|&s| a[s..s + p] == a[s + p..s + 2 * p]).map(|s| (s, p)))
}

fn brute_duplicate(a: &[u8]) -> bool {
    (0..a.len()).any(|i| (i + 1..a.len()).any(|j| a[i] == a[j]))
}

fn row(i: usize, difficulty: Difficulty, patch: bool, resolved: bool) -> InstanceMetrics {
    InstanceMetrics {
        instance_id: format!("r{i}"),
        difficulty,
        resolved: resolved && patch,
        patch_generated: patch,
        steps: 10,
        outcome: if patch { Outcome::Submitted } else { Outcome::BudgetExhaustedNoPatch },
        policy_usage: TokenUsage { prompt_tokens: 1000, completion_tokens: 10 },
        prm_usage: TokenUsage::default(),
        supervisor_invocations: 0,
        optimal_windows: None,
        suboptimal_windows: None,
        variant: None,
        policy_model: "m".into(),
        prm_model: None,
        error: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn diff_round_trips(old in tree(), new in tree()) {
        let patch = diff_trees(&old, &new);
        prop_assert_eq!(patch.nonempty, old != new);
        prop_assert_eq!(&patch.apply(&old).unwrap(), &new);
        prop_assert_eq!(&diffy_apply(&old, &patch.unified_diff).unwrap(), &new);
        let reparsed = Patch::from_diff(patch.unified_diff.clone()).unwrap();
        prop_assert_eq!(reparsed, patch);
    }

    #[test]
    fn cycle_detection_matches_brute_force(a in prop::collection::vec(0u8..5, 0..16)) {
        prop_assert_eq!(find_cycle(&a), brute_cycle(&a));
        prop_assert_eq!(has_duplicate_call(&a), brute_duplicate(&a));
    }

    #[test]
    fn rate_identities(flags in prop::collection::vec((0usize..3, any::<bool>(), any::<bool>()), 1..40)) {
        let rows: Vec<_> = flags.iter().enumerate().map(|(i, &(d, p, r))| row(i, Difficulty::ALL[d], p, r)).collect();
        let n = rows.len() as i128;
        let resolved = rows.iter().filter(|r| r.resolved).count() as i128;
        let patched = rows.iter().filter(|r| r.patch_generated).count() as i128;
        let rr = resolution_rate(&rows, None).unwrap();
        prop_assert_eq!(rr, Exact::ratio(100 * resolved, n));
        prop_assert!(rr <= patch_generation_rate(&rows, None).unwrap());
        prop_assert_eq!(patch_generation_rate(&rows, None).unwrap(), Exact::ratio(100 * patched, n));

        let m = aggregate(&rows, &PriceTable::default()).unwrap();
        prop_assert_eq!(m.resolved as i128, resolved);
        let mut by_tier: BTreeMap<Difficulty, (usize, usize)> = BTreeMap::new();
        for r in &rows {
            let e = by_tier.entry(r.difficulty).or_default();
            e.0 += 1;
            e.1 += usize::from(r.resolved);
        }
        prop_assert_eq!(m.tiers.len(), by_tier.len());
        for (d, (count, hits)) in by_tier {
            let t = &m.tiers[&d];
            prop_assert_eq!((t.instances, t.resolved), (count, hits));
            prop_assert_eq!(t.resolution_rate, resolution_rate(&rows, Some(d)).unwrap());
        }
    }
}
