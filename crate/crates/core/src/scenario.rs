//! Scenario files: TOML documents with preset inheritance, dotted-path
//! overrides, variants and sweeps.
//!
//! A file may name a `preset`; its own keys are merged over the preset's
//! (tables merge recursively, everything else replaces). Overrides use the
//! same merge with keys such as `adversary.margin` or `nodes.2.power`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::adversary::AttackPlan;
use crate::chain::{NodeId, Round};
use crate::economics::{BriberyParams, CommunityResponse, EconParams};
use crate::error::{Error, Result};
use crate::network::{DelayRule, PartitionWindow};
use crate::node::{Protocol, Role};
use crate::trace::NodeInfo;

pub const SCENARIO_VERSION: u32 = 1;

fn one_u32() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeGroup {
    #[serde(default = "one_u32")]
    pub count: u32,
    #[serde(default)]
    pub role: Role,
    /// Mining units per node; observers must have zero.
    #[serde(default)]
    pub power: Option<u32>,
    #[serde(default)]
    pub join: Round,
    #[serde(default)]
    pub leave: Option<Round>,
    /// Confirmation depth for these nodes; defaults to the scenario's `k`.
    #[serde(default)]
    pub k: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TxSpec {
    pub round: Round,
    pub issuer: NodeId,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub rules: Vec<DelayRule>,
    pub partitions: Vec<PartitionWindow>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub rounds: Vec<Round>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    pub trials: u64,
}

fn default_quantile() -> f64 {
    0.999
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LivenessConfig {
    /// Only transactions issued at or after this round are checked.
    #[serde(default)]
    pub since: Round,
    /// Fixed T_conf; calibrated when absent.
    #[serde(default)]
    pub t_conf: Option<Round>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub epsilon: f64,
    pub window: Round,
    pub windows_per_trace: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsistencyGate {
    /// Every trial passes consistency.
    Always,
    /// Every trial where the attack succeeded shows a violation.
    ViolatedOnSuccess,
}

/// Pass/fail criteria evaluated over a variant's trials.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Gates {
    pub consistency: Option<ConsistencyGate>,
    pub min_success_rate: Option<f64>,
    /// Mean net cost over successful trials within this many standard errors of zero.
    pub zero_net_cost_z: Option<f64>,
    pub min_liveness_rate: Option<f64>,
    pub recovery_lemma: bool,
    pub max_bound_violation_rate: Option<f64>,
    /// Fraction of trials where a late joiner finalizes against a block an
    /// online honest node finalized before it joined.
    pub min_joiner_conflict_rate: Option<f64>,
    /// Late joiners finalize past the latest oracle genesis.
    pub joiner_on_oracle: bool,
    /// Name of the paired variant whose consistency violations this
    /// variant must turn into ignores or halts.
    pub paired_conversion: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub overrides: Table,
    #[serde(default)]
    pub gates: Gates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub key: String,
    pub values: Vec<Value>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub preset: Option<String>,
    pub name: String,
    pub description: String,
    /// Documented expected outcome.
    pub expected: String,
    pub seed: u64,
    pub trials: u64,
    pub protocol: Protocol,
    pub p: f64,
    pub delta: Round,
    pub k: u64,
    pub max_rounds: Round,
    /// Emit SEND/DELIVER events.
    pub record_network: bool,
    pub nodes: Vec<NodeGroup>,
    pub transactions: Vec<TxSpec>,
    pub network: NetworkConfig,
    pub adversary: AttackPlan,
    pub recovery: RecoveryConfig,
    pub econ: Option<EconParams>,
    pub response: CommunityResponse,
    pub bribery: Option<BriberyParams>,
    pub calibration: Option<CalibrationConfig>,
    pub liveness: Option<LivenessConfig>,
    pub bounds: Option<BoundsConfig>,
    pub gates: Gates,
    pub sweep: Option<Sweep>,
    pub variants: Vec<Variant>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            version: SCENARIO_VERSION,
            preset: None,
            name: "unnamed".into(),
            description: String::new(),
            expected: String::new(),
            seed: 0,
            trials: 1,
            protocol: Protocol::Nakamoto,
            p: 0.0,
            delta: 0,
            k: 1,
            max_rounds: 0,
            record_network: false,
            nodes: Vec::new(),
            transactions: Vec::new(),
            network: NetworkConfig::default(),
            adversary: AttackPlan::None,
            recovery: RecoveryConfig::default(),
            econ: None,
            response: CommunityResponse::None,
            bribery: None,
            calibration: None,
            liveness: None,
            bounds: None,
            gates: Gates::default(),
            sweep: None,
            variants: Vec::new(),
        }
    }
}

impl Scenario {
    /// Node table with ids assigned in group order.
    pub fn node_table(&self) -> Vec<NodeInfo> {
        let mut out = Vec::new();
        for g in &self.nodes {
            for _ in 0..g.count {
                let power = g.power.unwrap_or(match g.role {
                    Role::Observer => 0,
                    _ => 1,
                });
                out.push(NodeInfo {
                    id: NodeId(out.len() as u32),
                    role: g.role,
                    power,
                    join: g.join,
                    leave: g.leave,
                    k: g.k.unwrap_or(self.k),
                });
            }
        }
        out
    }

    pub fn honest_power(&self) -> u32 {
        self.node_table().iter().filter(|n| n.role == Role::Honest).map(|n| n.power).sum()
    }

    pub fn adversary_power(&self) -> u32 {
        self.node_table().iter().filter(|n| n.role == Role::Corrupt).map(|n| n.power).sum()
    }

    /// Partition windows declared directly plus those from a partition plan.
    pub fn partition_windows(&self) -> Vec<PartitionWindow> {
        let mut w = self.network.partitions.clone();
        if let AttackPlan::Partition(p) = &self.adversary {
            w.push(PartitionWindow { groups: p.groups.clone(), start: p.start, end: p.end });
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("{}: {m}", self.name)));
        if self.version != SCENARIO_VERSION {
            return bad(format!("unsupported scenario version {}", self.version));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return bad(format!("p = {} outside [0, 1]", self.p));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        let nodes = self.node_table();
        if !nodes.iter().any(|n| n.role.is_honest()) {
            return bad("at least one honest node is required".into());
        }
        for n in &nodes {
            if n.role == Role::Observer && n.power != 0 {
                return bad(format!("observer {} has mining power", n.id));
            }
            if n.k < self.k {
                return bad(format!("node {} has k below the scenario k", n.id));
            }
            if n.leave.is_some_and(|l| l <= n.join) {
                return bad(format!("node {} leaves before it joins", n.id));
            }
            if n.join > self.max_rounds {
                return bad(format!("node {} joins after max_rounds", n.id));
            }
        }
        for tx in &self.transactions {
            match nodes.get(tx.issuer.0 as usize) {
                Some(n) if n.role.is_honest() && n.join <= tx.round && n.leave.is_none_or(|l| l > tx.round) => {}
                _ => {
                    return bad(format!(
                        "transaction issuer {} is not an active honest node at round {}",
                        tx.issuer, tx.round
                    ))
                }
            }
            if tx.round > self.max_rounds {
                return bad(format!("transaction at round {} after max_rounds", tx.round));
            }
        }
        if !self.recovery.rounds.is_empty() && self.protocol != Protocol::Stubborn {
            return bad("the recovery oracle applies to Stubborn Nakamoto only".into());
        }
        for w in self.partition_windows() {
            let mut seen = BTreeSet::new();
            for id in w.groups.iter().flatten() {
                if !nodes.get(id.0 as usize).is_some_and(|n| n.role.is_honest()) || !seen.insert(*id) {
                    return bad(format!("partition group member {id} is not a distinct honest node"));
                }
            }
        }
        if let Some(e) = &self.econ {
            e.validate()?;
        }
        if let Some(c) = &self.calibration {
            if !(0.0..=1.0).contains(&c.quantile) || c.trials == 0 {
                return bad("calibration needs a quantile in [0, 1] and at least one trial".into());
            }
        }
        if let AttackPlan::Bribery(_) = self.adversary {
            if self.bribery.is_none() {
                return bad("a bribery attack needs a [bribery] section".into());
            }
        }
        self.adversary.validate(self.honest_power(), self.adversary_power(), self.k)
    }
}

/// Merges `over` into `base`: tables recursively, other values replace.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `value` at a dotted path; numeric segments index arrays.
pub fn set_path(doc: &mut Table, path: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = path.split('.').collect();
    let err = |m: &str| Error::Scenario { path: path.into(), message: m.into() };
    if parts.iter().any(|p| p.is_empty()) {
        return Err(err("empty path segment"));
    }
    let mut cur: &mut Value = doc.entry(parts[0].to_string()).or_insert_with(|| Value::Table(Table::new()));
    for seg in &parts[1..] {
        cur = match cur {
            Value::Table(t) => t.entry(seg.to_string()).or_insert_with(|| Value::Table(Table::new())),
            Value::Array(a) => {
                let i: usize = seg.parse().map_err(|_| err("array segment must be an index"))?;
                a.get_mut(i).ok_or_else(|| err("array index out of range"))?
            }
            _ => return Err(err("path descends into a scalar")),
        };
    }
    match (cur, value) {
        (Value::Table(t), Value::Table(v)) => merge(t, v),
        (slot, v) => *slot = v,
    }
    Ok(())
}

/// Parses `key=value`; the value is read as TOML, falling back to a string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (k, v) = spec
        .split_once('=')
        .ok_or_else(|| Error::Scenario { path: spec.into(), message: "override must look like key=value".into() })?;
    let v = v.trim();
    let value = toml::from_str::<Table>(&format!("v = {v}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// A scenario document after preset merging and overrides.
#[derive(Clone, Debug)]
pub struct ScenarioDoc {
    pub source: String,
    pub table: Table,
}

impl ScenarioDoc {
    /// Parses a scenario file. Schema errors in a file without a preset
    /// carry line and column numbers; files extending a preset are checked
    /// after the merge.
    pub fn parse(source: &str, text: &str) -> Result<Self> {
        let located = |e: toml::de::Error| Error::Scenario { path: source.into(), message: e.to_string() };
        let mut table: Table = toml::from_str(text).map_err(located)?;
        if !table.contains_key("preset") {
            toml::from_str::<Scenario>(text).map_err(located)?;
        }
        if let Some(preset) = table.remove("preset") {
            let name = preset
                .as_str()
                .ok_or_else(|| Error::Scenario { path: source.into(), message: "preset must be a string".into() })?;
            let mut base = crate::presets::load(name)?.table;
            merge(&mut base, table);
            table = base;
            Scenario::deserialize(table.clone()).map_err(located)?;
        }
        Ok(ScenarioDoc { source: source.into(), table })
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&path.display().to_string(), &text)
    }

    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = parse_override(spec)?;
        set_path(&mut self.table, &k, v)
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        set_path(&mut self.table, key, value)
    }

    fn build(&self, table: Table) -> Result<Scenario> {
        let mut s: Scenario = Table::try_into(table)
            .map_err(|e: toml::de::Error| Error::Scenario { path: self.source.clone(), message: e.to_string() })?;
        s.preset = None;
        s.validate()?;
        Ok(s)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        self.build(self.table.clone())
    }

    /// Expands variants and the sweep into concrete configurations.
    pub fn variants(&self) -> Result<Vec<ResolvedVariant>> {
        let base = self.scenario()?;
        let variants = if base.variants.is_empty() {
            vec![Variant { name: "default".into(), overrides: Table::new(), gates: base.gates.clone() }]
        } else {
            base.variants.clone()
        };
        let sweep: Vec<Option<(String, Value)>> = match &base.sweep {
            Some(s) => s.values.iter().map(|v| Some((s.key.clone(), v.clone()))).collect(),
            None => vec![None],
        };
        let mut out = Vec::new();
        for (si, point) in sweep.iter().enumerate() {
            for v in &variants {
                let mut table = self.table.clone();
                table.remove("variants");
                table.remove("sweep");
                let mut label = v.name.clone();
                if let Some((key, value)) = point {
                    set_path(&mut table, key, value.clone())?;
                    label = format!("{}[{key}={value}]", v.name);
                }
                for (k, val) in &v.overrides {
                    set_path(&mut table, k, val.clone())?;
                }
                let mut scenario = self.build(table)?;
                scenario.gates = v.gates.clone();
                out.push(ResolvedVariant { name: v.name.clone(), label, sweep_index: si, scenario });
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct ResolvedVariant {
    pub name: String,
    pub label: String,
    pub sweep_index: usize,
    pub scenario: Scenario,
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
version = 1
name = "t"
p = 0.1
delta = 1
k = 2
max_rounds = 50

[[nodes]]
count = 3

[[nodes]]
role = "corrupt"
power = 4
"#;

    #[test]
    fn node_table_and_powers() {
        let s = ScenarioDoc::parse("t", BASIC).unwrap().scenario().unwrap();
        let t = s.node_table();
        assert_eq!(t.len(), 4);
        assert_eq!(t[3].role, Role::Corrupt);
        assert_eq!(s.honest_power(), 3);
        assert_eq!(s.adversary_power(), 4);
    }

    #[test]
    fn overrides_and_array_paths() {
        let mut doc = ScenarioDoc::parse("t", BASIC).unwrap();
        doc.apply_override("nodes.1.power=9").unwrap();
        doc.apply_override("protocol=stubborn").unwrap();
        doc.apply_override("k = 4").unwrap();
        let s = doc.scenario().unwrap();
        assert_eq!(s.adversary_power(), 9);
        assert_eq!(s.protocol, Protocol::Stubborn);
        assert_eq!(s.k, 4);
        assert!(doc.apply_override("nodes.7.power=1").is_err());
        assert!(doc.apply_override("novalue").is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = format!("bogus_key = 3\n{BASIC}");
        let e = ScenarioDoc::parse("t.toml", &text).unwrap_err().to_string();
        assert!(e.contains("line 1") && e.contains("bogus_key"), "{e}");
        let text = format!("{BASIC}\ncolour = 3\n");
        let e = ScenarioDoc::parse("t.toml", &text).unwrap_err().to_string();
        assert!(e.contains("line 16") && e.contains("colour"), "{e}");
        let e = ScenarioDoc::parse("t.toml", "version = 1\np = \"high\"\n").unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn semantic_validation() {
        let mut doc = ScenarioDoc::parse("t", BASIC).unwrap();
        doc.apply_override("p=1.5").unwrap();
        assert!(doc.scenario().is_err());
        let mut doc = ScenarioDoc::parse("t", BASIC).unwrap();
        doc.apply_override("recovery.rounds=[10]").unwrap();
        assert!(doc.scenario().is_err(), "recovery needs stubborn");
    }

    #[test]
    fn variants_and_sweep_expand() {
        let text = format!(
            "{BASIC}\n[sweep]\nkey = \"nodes.1.power\"\nvalues = [1, 2]\n\n[[variants]]\nname = \"a\"\n\n[[variants]]\nname = \"b\"\noverrides = {{ protocol = \"stubborn\" }}\n"
        );
        let v = ScenarioDoc::parse("t", &text).unwrap().variants().unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v[1].label, "b[nodes.1.power=1]");
        assert_eq!(v[1].scenario.protocol, Protocol::Stubborn);
        assert_eq!(v[2].scenario.adversary_power(), 2);
        assert_eq!(v[2].sweep_index, 1);
    }
}
