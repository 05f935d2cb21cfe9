//! Multi-trial experiments: runs every variant of a scenario, applies the
//! verifiers to each trace and evaluates the variant's gates.
//!
//! Trials run on the current rayon pool and are collected in trial order, so
//! reports do not depend on the number of worker threads.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::AttackReport;
use crate::chain::{BlockId, NodeId, Round};
use crate::economics::{bribery_equilibrium, Equilibrium};
use crate::engine::{calibrate_t_conf, run_trial};
use crate::error::{Error, Result};
use crate::scenario::{ConsistencyGate, ResolvedVariant, ScenarioDoc};
use crate::trace::{RunTrace, TraceEvent};
use crate::verify::{
    bound_report_samples, check_consistency, check_liveness, check_recovery_lemma, BoundReport, MiningSample, Verdict,
};

pub const REPORT_VERSION: u32 = 1;

/// Receives every trace as soon as its trial finishes; called from worker threads.
pub type TraceSink<'a> = dyn Fn(&ResolvedVariant, &RunTrace) -> Result<()> + Sync + 'a;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub end_round: Round,
    pub consistency: Verdict,
    pub liveness: Option<Verdict>,
    pub recovery_lemma: Option<Verdict>,
    pub attack: AttackReport,
    /// Some node halted.
    pub halted: bool,
    /// Every honest node online at the end ignored at least one attack block.
    pub all_ignored: bool,
    /// A late joiner finalized against a block finalized before it joined.
    pub joiner_conflict: Option<bool>,
    /// Every late joiner finalized past the latest oracle genesis.
    pub joiner_on_oracle: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateResult {
    pub gate: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Conversion {
    /// Trials whose paired run violated consistency.
    pub paired_violations: u64,
    /// Of those, trials where this run ignored or halted without finalizing a conflict.
    pub converted: u64,
    pub unconverted_trials: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub name: String,
    pub label: String,
    pub sweep_index: usize,
    pub protocol: crate::node::Protocol,
    pub adversary_power: u32,
    pub trials: u64,
    pub t_conf: Option<Round>,
    pub consistency_violations: u64,
    pub success_rate: f64,
    pub successes: u64,
    /// Over successful trials, in USD.
    pub mean_net_cost: Option<f64>,
    pub net_cost_stderr: Option<f64>,
    pub liveness_pass_rate: Option<f64>,
    pub recovery_lemma_violations: Option<u64>,
    pub joiner_conflict_rate: Option<f64>,
    pub bounds: Option<BoundReport>,
    pub conversion: Option<Conversion>,
    pub equilibrium: Option<Equilibrium>,
    pub gates: Vec<GateResult>,
    pub pass: bool,
    pub trial_results: Vec<TrialSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub scenario: String,
    pub seed: u64,
    pub variants: Vec<VariantReport>,
    pub pass: bool,
}

impl ExperimentReport {
    /// Gates that failed, as `(variant label, gate result)`.
    pub fn failures(&self) -> Vec<(&str, &GateResult)> {
        self.variants
            .iter()
            .flat_map(|v| v.gates.iter().filter(|g| !g.pass).map(move |g| (v.label.as_str(), g)))
            .collect()
    }

    /// A short human-readable summary, one line per variant and gate.
    pub fn summary(&self) -> String {
        let mut s = format!("scenario {} (seed {})\n", self.scenario, self.seed);
        for v in &self.variants {
            s += &format!(
                "  {}: {} trials, {} consistency violations, success rate {:.3}",
                v.label, v.trials, v.consistency_violations, v.success_rate
            );
            if let (Some(m), Some(se)) = (v.mean_net_cost, v.net_cost_stderr) {
                s += &format!(", mean net cost {m:.2} USD (se {se:.2})");
            }
            if let Some(r) = v.liveness_pass_rate {
                s += &format!(", liveness {r:.3} at T_conf {}", v.t_conf.unwrap_or_default());
            }
            if let Some(r) = v.joiner_conflict_rate {
                s += &format!(", joiner conflict rate {r:.3}");
            }
            s += "\n";
            for g in &v.gates {
                s += &format!("    [{}] {}: {}\n", if g.pass { "PASS" } else { "FAIL" }, g.gate, g.detail);
            }
        }
        s += if self.pass { "all gates pass\n" } else { "GATE FAILURE\n" };
        s
    }
}

/// Runs every variant of `doc` on the current rayon pool.
pub fn run_experiment(doc: &ScenarioDoc, sink: Option<&TraceSink<'_>>) -> Result<ExperimentReport> {
    let variants = doc.variants()?;
    let mut reports = Vec::with_capacity(variants.len());
    for v in &variants {
        reports.push(run_variant(v, sink)?);
    }
    apply_pairing(&variants, &mut reports)?;
    for r in &mut reports {
        r.pass = r.gates.iter().all(|g| g.pass);
    }
    let base = doc.scenario()?;
    Ok(ExperimentReport {
        version: REPORT_VERSION,
        scenario: base.name,
        seed: base.seed,
        pass: reports.iter().all(|r| r.pass),
        variants: reports,
    })
}

/// Runs `doc` on a dedicated pool of `jobs` threads.
pub fn run_experiment_with_jobs(
    doc: &ScenarioDoc,
    jobs: usize,
    sink: Option<&TraceSink<'_>>,
) -> Result<ExperimentReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment(doc, sink))
}

fn run_variant(v: &ResolvedVariant, sink: Option<&TraceSink<'_>>) -> Result<VariantReport> {
    let s = &v.scenario;
    let gates = &s.gates;
    let (t_conf, since) = match &s.liveness {
        Some(l) => {
            let t = match (l.t_conf, &s.calibration) {
                (Some(t), _) => t,
                (None, Some(c)) => calibrate_t_conf(s, c.quantile, c.trials, l.since)?,
                (None, None) => {
                    return Err(Error::config(format!("{}: liveness needs t_conf or a [calibration] section", v.label)))
                }
            };
            (Some(t), l.since)
        }
        None => (None, 0),
    };
    let want_lemma = gates.recovery_lemma || s.protocol == crate::node::Protocol::Stubborn;
    let want_bounds = s.bounds.is_some();
    let results: Vec<(TrialSummary, Option<MiningSample>)> = (0..s.trials)
        .into_par_iter()
        .map(|trial| {
            let out = run_trial(s, &v.label, trial)?;
            let trace = &out.trace;
            if let Some(sink) = sink {
                sink(v, trace)?;
            }
            let liveness = t_conf.map(|t| check_liveness(trace, t, since)).transpose()?;
            let active: Vec<NodeId> = trace.snapshots.iter().filter(|n| n.active).map(|n| n.node).collect();
            let summary = TrialSummary {
                trial,
                end_round: trace.end_round,
                consistency: check_consistency(trace),
                liveness,
                recovery_lemma: want_lemma.then(|| check_recovery_lemma(trace)),
                halted: !out.attack.halted_nodes.is_empty(),
                all_ignored: !active.is_empty() && active.iter().all(|n| out.attack.ignoring_nodes.contains(n)),
                joiner_conflict: joiner_conflict(trace),
                joiner_on_oracle: joiner_on_oracle(trace),
                attack: out.attack,
            };
            Ok((summary, want_bounds.then(|| MiningSample::from_trace(trace))))
        })
        .collect::<Result<_>>()?;
    let (trial_results, samples): (Vec<TrialSummary>, Vec<Option<MiningSample>>) = results.into_iter().unzip();
    let samples: Vec<MiningSample> = samples.into_iter().flatten().collect();
    let bounds =
        s.bounds.as_ref().map(|b| bound_report_samples(&samples, b.epsilon, b.window, b.windows_per_trace, s.seed));

    let n = trial_results.len() as f64;
    let successes: Vec<&TrialSummary> = trial_results.iter().filter(|t| t.attack.success).collect();
    let net: Vec<f64> = successes.iter().filter_map(|t| t.attack.net_cost.map(|c| c.to_f64())).collect();
    let (mean_net_cost, net_cost_stderr) = mean_stderr(&net);
    let rate = |f: &dyn Fn(&TrialSummary) -> Option<bool>| -> Option<f64> {
        let vals: Vec<bool> = trial_results.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().filter(|b| **b).count() as f64 / vals.len() as f64)
    };
    let mut report = VariantReport {
        name: v.name.clone(),
        label: v.label.clone(),
        sweep_index: v.sweep_index,
        protocol: s.protocol,
        adversary_power: s.adversary_power(),
        trials: s.trials,
        t_conf,
        consistency_violations: trial_results.iter().filter(|t| !t.consistency.pass).count() as u64,
        success_rate: successes.len() as f64 / n,
        successes: successes.len() as u64,
        mean_net_cost,
        net_cost_stderr,
        liveness_pass_rate: rate(&|t| t.liveness.as_ref().map(|l| l.pass)),
        recovery_lemma_violations: want_lemma.then(|| {
            trial_results.iter().filter(|t| t.recovery_lemma.as_ref().is_some_and(|l| !l.pass)).count() as u64
        }),
        joiner_conflict_rate: rate(&|t| t.joiner_conflict),
        bounds,
        conversion: None,
        equilibrium: s.bribery.as_ref().map(bribery_equilibrium).transpose()?,
        gates: Vec::new(),
        pass: true,
        trial_results,
    };
    report.gates = evaluate_gates(v, &report);
    Ok(report)
}

fn mean_stderr(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(mean), None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some((var / n).sqrt()))
}

fn gate(name: &str, pass: bool, detail: String) -> GateResult {
    GateResult { gate: name.into(), pass, detail }
}

fn evaluate_gates(v: &ResolvedVariant, r: &VariantReport) -> Vec<GateResult> {
    let g = &v.scenario.gates;
    let mut out = Vec::new();
    let trials = &r.trial_results;
    match g.consistency {
        Some(ConsistencyGate::Always) => out.push(gate(
            "consistency",
            r.consistency_violations == 0,
            format!("{} of {} trials violate consistency", r.consistency_violations, r.trials),
        )),
        Some(ConsistencyGate::ViolatedOnSuccess) => {
            let bad = trials
                .iter()
                .filter(|t| t.attack.success && (t.consistency.pass || t.consistency.witness.is_none()))
                .count();
            out.push(gate(
                "consistency_violated_on_success",
                bad == 0,
                format!("{bad} of {} successful trials lack a consistency witness", r.successes),
            ));
        }
        None => {}
    }
    if let Some(min) = g.min_success_rate {
        out.push(gate("success_rate", r.success_rate >= min, format!("{:.3} (need >= {min})", r.success_rate)));
    }
    if let Some(z) = g.zero_net_cost_z {
        let (pass, detail) = match (r.mean_net_cost, r.net_cost_stderr) {
            (Some(m), Some(se)) => (m.abs() <= z * se, format!("mean {m:.3} USD, stderr {se:.3}, bound {z} stderr")),
            _ => (false, "fewer than two successful trials with a cost".into()),
        };
        out.push(gate("zero_net_cost", pass, detail));
    }
    if let Some(min) = g.min_liveness_rate {
        let rate = r.liveness_pass_rate.unwrap_or(0.0);
        out.push(gate(
            "liveness",
            r.liveness_pass_rate.is_some() && rate >= min,
            format!("{rate:.3} of trials pass at T_conf {} (need >= {min})", r.t_conf.unwrap_or_default()),
        ));
    }
    if g.recovery_lemma {
        let bad = r.recovery_lemma_violations.unwrap_or(0);
        let witness = trials.iter().find_map(|t| {
            t.recovery_lemma.as_ref().and_then(|l| l.witness.as_ref()).map(|w| (t.trial, w.note.clone()))
        });
        let detail = match witness {
            Some((t, note)) => format!("{bad} trials violate the lemma; first in trial {t}: {note}"),
            None => format!("0 of {} trials violate the lemma", r.trials),
        };
        out.push(gate("recovery_lemma", bad == 0, detail));
    }
    if let Some(max) = g.max_bound_violation_rate {
        match &r.bounds {
            Some(b) => {
                for (name, stat) in [("lemma2", &b.lemma2), ("lemma3", &b.lemma3), ("lemma4", &b.lemma4)] {
                    out.push(gate(
                        name,
                        stat.checked > 0 && stat.rate <= max,
                        format!(
                            "{} of {} windows violate (rate {:.4}, need <= {max})",
                            stat.violations, stat.checked, stat.rate
                        ),
                    ));
                }
            }
            None => out.push(gate("bounds", false, "no [bounds] section".into())),
        }
    }
    if let Some(min) = g.min_joiner_conflict_rate {
        let rate = r.joiner_conflict_rate.unwrap_or(0.0);
        out.push(gate("joiner_conflict", rate >= min, format!("{rate:.3} (need >= {min})")));
    }
    if g.joiner_on_oracle {
        let bad = trials.iter().filter(|t| t.joiner_on_oracle != Some(true)).count();
        out.push(gate("joiner_on_oracle", bad == 0, format!("{bad} trials where a joiner is off the oracle branch")));
    }
    out
}

/// Paired-conversion gates compare trial `i` of a variant with trial `i` of
/// the named variant in the same sweep cell.
fn apply_pairing(variants: &[ResolvedVariant], reports: &mut [VariantReport]) -> Result<()> {
    for i in 0..variants.len() {
        let Some(other) = variants[i].scenario.gates.paired_conversion.clone() else { continue };
        let j = variants
            .iter()
            .position(|v| v.name == other && v.sweep_index == variants[i].sweep_index)
            .ok_or_else(|| Error::config(format!("{}: no variant named {other} to pair with", variants[i].label)))?;
        let violated: HashSet<u64> =
            reports[j].trial_results.iter().filter(|t| !t.consistency.pass).map(|t| t.trial).collect();
        let mut c = Conversion::default();
        for t in reports[i].trial_results.iter().filter(|t| violated.contains(&t.trial)) {
            c.paired_violations += 1;
            if t.consistency.pass && !t.attack.success && (t.all_ignored || t.halted) {
                c.converted += 1;
            } else {
                c.unconverted_trials.push(t.trial);
            }
        }
        reports[i].gates.push(gate(
            "paired_conversion",
            c.unconverted_trials.is_empty(),
            format!(
                "{} of {} trials with a {other} violation end in ignore or halt without a finalized conflict",
                c.converted, c.paired_violations
            ),
        ));
        reports[i].conversion = Some(c);
    }
    Ok(())
}

fn late_joiners(trace: &RunTrace) -> Vec<(NodeId, Round)> {
    trace.header.nodes.iter().filter(|n| n.role.is_honest() && n.join > 0).map(|n| (n.id, n.join)).collect()
}

/// Whether a late joiner finalized a block conflicting with one an honest
/// node finalized before the joiner arrived.
pub fn joiner_conflict(trace: &RunTrace) -> Option<bool> {
    let joiners = late_joiners(trace);
    if joiners.is_empty() {
        return None;
    }
    let mut conflict = false;
    for (j, join) in joiners {
        let mut before: BTreeMap<u64, HashSet<BlockId>> = BTreeMap::new();
        for e in &trace.events {
            match *e {
                TraceEvent::Finalize { round, node, block, height }
                    if round < join && node != j && trace.header.is_honest(node) =>
                {
                    before.entry(height).or_default().insert(block);
                }
                TraceEvent::Finalize { node, block, height, .. }
                    if node == j && before.get(&height).is_some_and(|bs| bs.iter().any(|b| *b != block)) =>
                {
                    conflict = true;
                }
                _ => {}
            }
        }
    }
    Some(conflict)
}

/// Whether every late joiner's final log runs through the latest oracle
/// genesis and extends past it. `None` without late joiners.
pub fn joiner_on_oracle(trace: &RunTrace) -> Option<bool> {
    let joiners = late_joiners(trace);
    if joiners.is_empty() {
        return None;
    }
    let genesis = trace.events.iter().rev().find_map(|e| match *e {
        TraceEvent::Recovery { genesis, .. } => Some(genesis),
        _ => None,
    });
    let Some(g) = genesis else { return Some(false) };
    let store = trace.store().ok()?;
    let gh = store.height(g) as usize;
    Some(joiners.iter().all(|(j, _)| {
        trace.snapshot(*j).is_some_and(|s| s.finalized.get(gh) == Some(&g) && s.finalized.len() > gh + 1)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
version = 1
name = "small"
trials = 6
protocol = "nakamoto"
p = 0.05
delta = 1
k = 3
max_rounds = 150

[[nodes]]
count = 4

[[transactions]]
round = 20
issuer = 0

[liveness]
t_conf = 120

[gates]
consistency = "always"
min_liveness_rate = 0.5
"#;

    #[test]
    fn results_do_not_depend_on_jobs() {
        let doc = ScenarioDoc::parse("small", SMALL).unwrap();
        let a = run_experiment_with_jobs(&doc, 1, None).unwrap();
        let b = run_experiment_with_jobs(&doc, 3, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.variants.len(), 1);
        assert_eq!(a.variants[0].trial_results.len(), 6);
        assert!(a.pass, "{}", a.summary());
    }

    #[test]
    fn single_trial_matches_direct_verdicts() {
        let mut doc = ScenarioDoc::parse("small", SMALL).unwrap();
        doc.apply_override("trials=1").unwrap();
        let r = run_experiment(&doc, None).unwrap();
        let out = run_trial(&doc.scenario().unwrap(), "default", 0).unwrap();
        assert_eq!(r.variants[0].trial_results[0].consistency, check_consistency(&out.trace));
        assert_eq!(r.variants[0].consistency_violations, 0);
    }

    #[test]
    fn mean_and_stderr() {
        let (m, se) = mean_stderr(&[1.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert!((se.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mean_stderr(&[]), (None, None));
    }
}
