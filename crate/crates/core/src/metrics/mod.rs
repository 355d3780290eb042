//! Resolution and patch-generation rates, token and step averages, and
//! cost per 100 instances.

mod exact;
mod report;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use exact::Exact;
pub use report::render_report;

use crate::agent::TrajectoryResult;
use crate::backend::TokenUsage;
use crate::env::{Difficulty, Instance};
use crate::prm::{PrmVariant, VariantName, WindowVerdict};
use crate::transcript::Outcome;

const DEFAULT_PRICES: &str = include_str!("../../data/prices.json");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no instances{}", .0.map(|d| format!(" in tier {}", d.as_str())).unwrap_or_default())]
    EmptyPopulation(Option<Difficulty>),
    #[error("results mix run configurations: {0}")]
    MixedConfiguration(String),
    #[error("invalid price for {model}: {reason}")]
    InvalidPrice { model: String, reason: String },
    #[error("price table: {0}")]
    PriceTable(String),
    #[error("inconsistent record for {instance}: {reason}")]
    Inconsistent { instance: String, reason: String },
}

/// Dollars per million tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceEntry {
    pub input_per_mtok: f64,
    pub output_per_mtok: f64,
}

impl PriceEntry {
    pub fn new(input_per_mtok: f64, output_per_mtok: f64) -> Self {
        PriceEntry { input_per_mtok, output_per_mtok }
    }

    /// Exact input and output rates.
    pub fn rates(&self) -> Result<(Exact, Exact), String> {
        let conv = |v: f64, which: &str| match Exact::from_f64(v) {
            Some(x) if !x.is_negative() => Ok(x),
            _ => Err(format!("{which} price must be a finite non-negative number, got {v}")),
        };
        Ok((conv(self.input_per_mtok, "input")?, conv(self.output_per_mtok, "output")?))
    }
}

/// Prices keyed by model id. Lookups fall back to the part of the id
/// before the first `:` (so `scripted:loop_k_actions` uses `scripted`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, PriceEntry>);

impl PriceTable {
    pub fn from_json(text: &str) -> Result<Self, MetricsError> {
        let table: PriceTable = serde_json::from_str(text).map_err(|e| MetricsError::PriceTable(e.to_string()))?;
        for (model, entry) in &table.0 {
            entry.rates().map_err(|reason| MetricsError::InvalidPrice { model: model.clone(), reason })?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = fs::read_to_string(path).map_err(|e| MetricsError::PriceTable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn get(&self, model_id: &str) -> Option<&PriceEntry> {
        self.0.get(model_id).or_else(|| model_id.split_once(':').and_then(|(family, _)| self.0.get(family)))
    }
}

impl Default for PriceTable {
    fn default() -> Self {
        PriceTable::from_json(DEFAULT_PRICES).expect("bundled price table is valid")
    }
}

/// `100 * (in * p_in + out * p_out) / 1e6` for per-instance average token
/// counts given exactly.
pub fn cost_per_100_exact(prompt_tokens: Exact, completion_tokens: Exact, price: &PriceEntry) -> Result<Exact, MetricsError> {
    let (p_in, p_out) = price.rates().map_err(|reason| MetricsError::InvalidPrice { model: String::new(), reason })?;
    let total = prompt_tokens.0 * p_in.0 + completion_tokens.0 * p_out.0;
    Ok(Exact(total * Ratio::new(100, 1_000_000)))
}

/// Cost per 100 instances for a per-instance average usage.
pub fn cost_per_100(usage: TokenUsage, price: &PriceEntry) -> Result<Exact, MetricsError> {
    cost_per_100_exact(Exact::from_int(usage.prompt_tokens.into()), Exact::from_int(usage.completion_tokens.into()), price)
}

/// One instance's row of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    pub instance_id: String,
    pub difficulty: Difficulty,
    pub resolved: bool,
    pub patch_generated: bool,
    pub steps: usize,
    pub outcome: Outcome,
    pub policy_usage: TokenUsage,
    pub prm_usage: TokenUsage,
    pub supervisor_invocations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_windows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suboptimal_windows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<VariantName>,
    pub policy_model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prm_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl InstanceMetrics {
    /// The row for a finished trajectory. `supervision` is the variant and
    /// PRM model id when a supervisor ran.
    pub fn from_trajectory(
        instance: &Instance,
        result: &TrajectoryResult,
        policy_model: &str,
        supervision: Option<(&PrmVariant, &str)>,
    ) -> Self {
        let count = |v: WindowVerdict| result.guidance_reports.iter().filter(|r| r.window_verdict == Some(v)).count();
        let windows = supervision.is_some_and(|(v, _)| v.has_verdict());
        InstanceMetrics {
            instance_id: instance.id.clone(),
            difficulty: instance.difficulty,
            resolved: result.resolved(),
            patch_generated: result.patch_generated(),
            steps: result.transcript.len(),
            outcome: result.outcome(),
            policy_usage: result.policy_usage_total,
            prm_usage: result.prm_usage_total,
            supervisor_invocations: result.guidance_reports.len(),
            optimal_windows: windows.then(|| count(WindowVerdict::Optimal)),
            suboptimal_windows: windows.then(|| count(WindowVerdict::Suboptimal)),
            variant: supervision.map(|(v, _)| v.name),
            policy_model: policy_model.to_owned(),
            prm_model: supervision.map(|(_, m)| m.to_owned()),
            error: result.error.clone(),
        }
    }

    /// Row for an instance that failed before producing a trajectory.
    pub fn failed(instance: &Instance, policy_model: &str, supervision: Option<(&PrmVariant, &str)>, error: String) -> Self {
        let windows = supervision.is_some_and(|(v, _)| v.has_verdict());
        InstanceMetrics {
            instance_id: instance.id.clone(),
            difficulty: instance.difficulty,
            resolved: false,
            patch_generated: false,
            steps: 0,
            outcome: Outcome::AbortedError,
            policy_usage: TokenUsage::default(),
            prm_usage: TokenUsage::default(),
            supervisor_invocations: 0,
            optimal_windows: windows.then_some(0),
            suboptimal_windows: windows.then_some(0),
            variant: supervision.map(|(v, _)| v.name),
            policy_model: policy_model.to_owned(),
            prm_model: supervision.map(|(_, m)| m.to_owned()),
            error: Some(error),
        }
    }

    pub fn check(&self) -> Result<(), MetricsError> {
        let bad = |reason: &str| Err(MetricsError::Inconsistent { instance: self.instance_id.clone(), reason: reason.into() });
        if self.resolved && !self.patch_generated {
            return bad("resolved without a generated patch");
        }
        let windows = self.variant.is_some_and(|v| PrmVariant::preset(v).has_verdict());
        if self.optimal_windows.is_some() != windows || self.suboptimal_windows.is_some() != windows {
            return bad("window counts must be present exactly for verdict-bearing variants");
        }
        if let (Some(o), Some(s)) = (self.optimal_windows, self.suboptimal_windows) {
            if o + s != self.supervisor_invocations {
                return bad("optimal + suboptimal windows differ from supervisor invocations");
            }
        }
        if self.variant.is_some() != self.prm_model.is_some() {
            return bad("variant and PRM model must be given together");
        }
        Ok(())
    }
}

/// `100 * resolved / n` over the rows in `tier` (all rows when `None`).
pub fn resolution_rate(results: &[InstanceMetrics], tier: Option<Difficulty>) -> Result<Exact, MetricsError> {
    rate(results, tier, |r| r.resolved)
}

pub fn patch_generation_rate(results: &[InstanceMetrics], tier: Option<Difficulty>) -> Result<Exact, MetricsError> {
    rate(results, tier, |r| r.patch_generated)
}

fn rate(results: &[InstanceMetrics], tier: Option<Difficulty>, hit: impl Fn(&InstanceMetrics) -> bool) -> Result<Exact, MetricsError> {
    let pop: Vec<&InstanceMetrics> = results.iter().filter(|r| tier.is_none_or(|t| r.difficulty == t)).collect();
    if pop.is_empty() {
        return Err(MetricsError::EmptyPopulation(tier));
    }
    let hits = pop.iter().filter(|r| hit(r)).count();
    Ok(Exact::ratio(100 * hits as i128, pop.len() as i128))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TierMetrics {
    pub instances: usize,
    pub resolved: usize,
    pub resolution_rate: Exact,
}

/// Policy, supervisor and total cost per 100 instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CostBreakdown {
    pub policy: Exact,
    pub supervisor: Exact,
    pub total: Exact,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunMetrics {
    pub instances: usize,
    pub policy_model: String,
    pub prm_model: Option<String>,
    pub variant: Option<VariantName>,
    pub resolved: usize,
    pub resolution_rate: Exact,
    pub tiers: BTreeMap<Difficulty, TierMetrics>,
    pub patch_generated: usize,
    pub patch_generation_rate: Exact,
    pub avg_steps: Exact,
    pub avg_policy_input_tokens: Exact,
    pub avg_policy_output_tokens: Exact,
    pub avg_prm_input_tokens: Exact,
    pub avg_prm_output_tokens: Exact,
    pub avg_supervisor_invocations: Option<Exact>,
    pub avg_optimal_windows: Option<Exact>,
    pub avg_suboptimal_windows: Option<Exact>,
    /// Absent when a model has no price.
    pub cost: Option<CostBreakdown>,
}

/// Means over instances; costs from mean usage.
pub fn aggregate(results: &[InstanceMetrics], prices: &PriceTable) -> Result<RunMetrics, MetricsError> {
    let first = results.first().ok_or(MetricsError::EmptyPopulation(None))?;
    for r in results {
        r.check()?;
        if r.variant != first.variant {
            return Err(MetricsError::MixedConfiguration(format!(
                "variant {} vs {}",
                show(first.variant),
                show(r.variant)
            )));
        }
        if r.policy_model != first.policy_model || r.prm_model != first.prm_model {
            return Err(MetricsError::MixedConfiguration(format!(
                "models {}/{} vs {}/{}",
                first.policy_model,
                first.prm_model.as_deref().unwrap_or("-"),
                r.policy_model,
                r.prm_model.as_deref().unwrap_or("-")
            )));
        }
    }
    let n = results.len() as i128;
    let mean = |f: &dyn Fn(&InstanceMetrics) -> u64| Exact::ratio(results.iter().map(|r| f(r) as i128).sum(), n);

    let mut tiers = BTreeMap::new();
    for d in Difficulty::ALL {
        let members: Vec<&InstanceMetrics> = results.iter().filter(|r| r.difficulty == d).collect();
        if members.is_empty() {
            continue;
        }
        let resolved = members.iter().filter(|r| r.resolved).count();
        tiers.insert(
            d,
            TierMetrics {
                instances: members.len(),
                resolved,
                resolution_rate: Exact::ratio(100 * resolved as i128, members.len() as i128),
            },
        );
    }

    let avg_policy_input_tokens = mean(&|r| r.policy_usage.prompt_tokens);
    let avg_policy_output_tokens = mean(&|r| r.policy_usage.completion_tokens);
    let avg_prm_input_tokens = mean(&|r| r.prm_usage.prompt_tokens);
    let avg_prm_output_tokens = mean(&|r| r.prm_usage.completion_tokens);
    let supervised = first.variant.is_some();
    let windows = first.optimal_windows.is_some();

    let cost = match (prices.get(&first.policy_model), &first.prm_model) {
        (Some(pp), None) => {
            let policy = cost_per_100_exact(avg_policy_input_tokens, avg_policy_output_tokens, pp)?;
            Some(CostBreakdown { policy, supervisor: Exact::zero(), total: policy })
        }
        (Some(pp), Some(prm)) => match prices.get(prm) {
            Some(sp) => {
                let policy = cost_per_100_exact(avg_policy_input_tokens, avg_policy_output_tokens, pp)?;
                let supervisor = cost_per_100_exact(avg_prm_input_tokens, avg_prm_output_tokens, sp)?;
                Some(CostBreakdown { policy, supervisor, total: policy + supervisor })
            }
            None => None,
        },
        (None, _) => None,
    };

    Ok(RunMetrics {
        instances: results.len(),
        policy_model: first.policy_model.clone(),
        prm_model: first.prm_model.clone(),
        variant: first.variant,
        resolved: results.iter().filter(|r| r.resolved).count(),
        resolution_rate: resolution_rate(results, None)?,
        tiers,
        patch_generated: results.iter().filter(|r| r.patch_generated).count(),
        patch_generation_rate: patch_generation_rate(results, None)?,
        avg_steps: mean(&|r| r.steps as u64),
        avg_policy_input_tokens,
        avg_policy_output_tokens,
        avg_prm_input_tokens,
        avg_prm_output_tokens,
        avg_supervisor_invocations: supervised.then(|| mean(&|r| r.supervisor_invocations as u64)),
        avg_optimal_windows: windows.then(|| mean(&|r| r.optimal_windows.unwrap_or(0) as u64)),
        avg_suboptimal_windows: windows.then(|| mean(&|r| r.suboptimal_windows.unwrap_or(0) as u64)),
        cost,
    })
}

fn show(v: Option<VariantName>) -> String {
    v.map_or_else(|| "none".to_owned(), |v| v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, d: Difficulty, resolved: bool) -> InstanceMetrics {
        InstanceMetrics {
            instance_id: id.into(),
            difficulty: d,
            resolved,
            patch_generated: resolved,
            steps: 10,
            outcome: if resolved { Outcome::Submitted } else { Outcome::BudgetExhaustedNoPatch },
            policy_usage: TokenUsage::new(1000, 100),
            prm_usage: TokenUsage::default(),
            supervisor_invocations: 0,
            optimal_windows: None,
            suboptimal_windows: None,
            variant: None,
            policy_model: "SWE-agent-LM-32B".into(),
            prm_model: None,
            error: None,
        }
    }

    #[test]
    fn zero_usage_costs_nothing() {
        let c = cost_per_100(TokenUsage::default(), &PriceEntry::new(3.0, 15.0)).unwrap();
        assert_eq!(c.fixed(2), "0.00");
    }

    #[test]
    fn negative_price_rejected() {
        assert!(PriceTable::from_json(r#"{"m": {"input_per_mtok": -1, "output_per_mtok": 0}}"#).is_err());
        assert!(cost_per_100(TokenUsage::new(1, 1), &PriceEntry::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn price_lookup_falls_back_to_family() {
        let t = PriceTable::default();
        assert!(t.get("claude-sonnet-4").is_some());
        assert!(t.get("scripted:loop_k_actions:2").is_some());
        assert!(t.get("gpt-unknown").is_none());
    }

    #[test]
    fn rates() {
        let mut rows: Vec<InstanceMetrics> = (0..5).map(|i| row(&i.to_string(), Difficulty::Easy, i < 2)).collect();
        assert_eq!(resolution_rate(&rows, None).unwrap(), Exact::from_int(40));
        assert_eq!(resolution_rate(&rows, Some(Difficulty::Hard)), Err(MetricsError::EmptyPopulation(Some(Difficulty::Hard))));
        rows.iter_mut().for_each(|r| r.resolved = false);
        assert_eq!(resolution_rate(&rows, None).unwrap(), Exact::zero());
    }

    #[test]
    fn single_instance_means_are_its_values() {
        let r = row("a", Difficulty::Medium, true);
        let m = aggregate(std::slice::from_ref(&r), &PriceTable::default()).unwrap();
        assert_eq!(m.avg_steps, Exact::from_int(10));
        assert_eq!(m.avg_policy_input_tokens, Exact::from_int(1000));
        assert_eq!(m.avg_supervisor_invocations, None);
        let cost = m.cost.unwrap();
        assert_eq!(cost.total, cost.policy + cost.supervisor);
    }

    #[test]
    fn mixed_variants_rejected() {
        let a = row("a", Difficulty::Easy, true);
        let mut b = row("b", Difficulty::Easy, true);
        b.variant = Some(VariantName::S);
        b.prm_model = Some("scripted-prm".into());
        assert!(matches!(aggregate(&[a, b], &PriceTable::default()), Err(MetricsError::MixedConfiguration(_))));
    }

    #[test]
    fn inconsistent_rows_rejected() {
        let mut a = row("a", Difficulty::Easy, true);
        a.patch_generated = false;
        assert!(a.check().is_err());
        let mut b = row("b", Difficulty::Easy, false);
        b.variant = Some(VariantName::D);
        b.prm_model = Some("p".into());
        assert!(b.check().is_err(), "D rows need window counts");
        b.optimal_windows = Some(1);
        b.suboptimal_windows = Some(1);
        b.supervisor_invocations = 2;
        assert!(b.check().is_ok());
    }
}
