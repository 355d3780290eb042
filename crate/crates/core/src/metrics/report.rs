use std::fmt::Write as _;

use super::{Exact, RunMetrics};
use crate::env::Difficulty;

struct Line {
    label: String,
    value: Option<Exact>,
    baseline: Option<Option<Exact>>,
    decimals: u32,
}

/// Aligned plain-text table; with a baseline, each numeric line gains a
/// signed delta column.
pub fn render_report(metrics: &RunMetrics, baseline: Option<&RunMetrics>) -> String {
    let pick = |f: &dyn Fn(&RunMetrics) -> Option<Exact>| baseline.map(f);
    let mut lines = Vec::new();
    let mut push = |label: &str, f: &dyn Fn(&RunMetrics) -> Option<Exact>, decimals: u32| {
        lines.push(Line { label: label.to_owned(), value: f(metrics), baseline: pick(f), decimals });
    };
    push("instances", &|m| Some(Exact::from_int(m.instances as i128)), 0);
    push("resolved (%)", &|m| Some(m.resolution_rate), 1);
    for d in Difficulty::ALL {
        let label = format!("  {} (%)", d.as_str());
        push(&label, &move |m| m.tiers.get(&d).map(|t| t.resolution_rate), 1);
    }
    push("patch generation (%)", &|m| Some(m.patch_generation_rate), 1);
    push("avg steps", &|m| Some(m.avg_steps), 2);
    push("avg policy input tokens", &|m| Some(m.avg_policy_input_tokens), 0);
    push("avg policy output tokens", &|m| Some(m.avg_policy_output_tokens), 0);
    push("avg supervisor invocations", &|m| m.avg_supervisor_invocations, 2);
    push("avg supervisor input tokens", &|m| m.prm_model.as_ref().map(|_| m.avg_prm_input_tokens), 0);
    push("avg supervisor output tokens", &|m| m.prm_model.as_ref().map(|_| m.avg_prm_output_tokens), 0);
    push("avg optimal windows", &|m| m.avg_optimal_windows, 2);
    push("avg suboptimal windows", &|m| m.avg_suboptimal_windows, 2);
    push("policy cost ($/100)", &|m| m.cost.map(|c| c.policy), 2);
    push("supervisor cost ($/100)", &|m| m.cost.map(|c| c.supervisor), 2);
    push("total cost ($/100)", &|m| m.cost.map(|c| c.total), 2);

    let mut out = String::new();
    let config = match (&metrics.variant, &metrics.prm_model) {
        (Some(v), Some(prm)) => format!("policy {} | supervisor {prm} ({v})", metrics.policy_model),
        _ => format!("policy {} | no supervisor", metrics.policy_model),
    };
    let _ = writeln!(out, "{config}");
    let rows: Vec<[String; 3]> = lines
        .iter()
        .map(|l| {
            let value = l.value.map_or_else(|| "-".to_owned(), |v| v.fixed(l.decimals));
            let delta = match (l.value, l.baseline) {
                (_, None) => String::new(),
                (Some(v), Some(Some(b))) => (v - b).signed(l.decimals),
                _ => "-".to_owned(),
            };
            [l.label.clone(), value, delta]
        })
        .collect();
    let w0 = rows.iter().map(|r| r[0].len()).max().unwrap_or(0).max("metric".len());
    let w1 = rows.iter().map(|r| r[1].len()).max().unwrap_or(0).max("value".len());
    if baseline.is_some() {
        let _ = writeln!(out, "{:<w0$}  {:>w1$}  delta", "metric", "value");
    } else {
        let _ = writeln!(out, "{:<w0$}  {:>w1$}", "metric", "value");
    }
    for [label, value, delta] in rows {
        let line = format!("{label:<w0$}  {value:>w1$}  {delta}");
        let _ = writeln!(out, "{}", line.trim_end());
    }
    out
}
