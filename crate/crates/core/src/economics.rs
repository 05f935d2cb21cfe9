//! Attack cost accounting in exact rational USD.
//!
//! Rental model: the attacker pays `c` per hash and recoups the block reward
//! `p_b` for each attack block that ends up in the consensus chain. Bribery
//! model: miners are paid `p̃_b` per attack block, and each miner's choice is
//! resolved by dominance over the payoff matrix in [`bribery_payoff`].

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::node::Protocol;

/// Exact USD amount. Serialized as a decimal-free string such as `"7/3"`.
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Usd(pub Ratio<i128>);

impl Usd {
    pub fn int(v: i128) -> Self {
        Usd(Ratio::from_integer(v))
    }

    pub fn new(num: i128, den: i128) -> Self {
        Usd(Ratio::new(num, den))
    }

    pub fn zero() -> Self {
        Usd(Ratio::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for Usd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Usd {
    type Err = Error;

    /// Accepts integers, fractions (`7/3`) and finite decimals (`0.25`).
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("not a USD amount: {s:?}"));
        let s = s.trim();
        if let Some((n, d)) = s.split_once('/') {
            let n: i128 = n.trim().parse().map_err(|_| bad())?;
            let d: i128 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            return Ok(Usd::new(n, d));
        }
        if let Some((whole, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let neg = whole.starts_with('-');
            let w: i128 = if whole.is_empty() || whole == "-" { 0 } else { whole.parse().map_err(|_| bad())? };
            let den = 10i128.pow(frac.len() as u32);
            let f: i128 = frac.parse().map_err(|_| bad())?;
            let num = w.abs() * den + f;
            return Ok(Usd::new(if neg { -num } else { num }, den));
        }
        s.parse::<i128>().map(Usd::int).map_err(|_| bad())
    }
}

impl Serialize for Usd {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Usd {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Float(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(v) => Ok(Usd::int(i128::from(v))),
            // Shortest round-trip text of the float, parsed exactly as a decimal.
            Raw::Float(v) => format!("{v:?}").parse().map_err(serde::de::Error::custom),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

impl Add for Usd {
    type Output = Usd;
    fn add(self, o: Usd) -> Usd {
        Usd(self.0 + o.0)
    }
}

impl Sub for Usd {
    type Output = Usd;
    fn sub(self, o: Usd) -> Usd {
        Usd(self.0 - o.0)
    }
}

impl Mul for Usd {
    type Output = Usd;
    fn mul(self, o: Usd) -> Usd {
        Usd(self.0 * o.0)
    }
}

impl Mul<u64> for Usd {
    type Output = Usd;
    fn mul(self, o: u64) -> Usd {
        Usd(self.0 * Ratio::from_integer(i128::from(o)))
    }
}

impl Neg for Usd {
    type Output = Usd;
    fn neg(self) -> Usd {
        Usd(-self.0)
    }
}

/// Economic parameters. `d` is the difficulty, i.e. expected hashes per block.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EconParams {
    pub c: Usd,
    pub d: Usd,
    pub p_b: Usd,
    #[serde(default)]
    pub p_b_tilde: Option<Usd>,
    #[serde(default)]
    pub psi_a: Option<Usd>,
}

impl EconParams {
    pub fn validate(&self) -> Result<()> {
        if self.c < Usd::zero() || self.d < Usd::zero() || self.p_b < Usd::zero() {
            return Err(Error::config("economic parameters must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CommunityResponse {
    #[default]
    None,
    /// The community refuses to pay rewards for attack blocks.
    NoRecoup,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub gross_cost: Usd,
    pub rewards_recouped: Usd,
    pub net_cost: Usd,
    /// Attack blocks the cost is spread over.
    pub blocks: u64,
    pub per_block_net: Option<Usd>,
}

impl CostReport {
    fn new(gross: Usd, recouped: Usd, blocks: u64) -> Self {
        let net = gross - recouped;
        CostReport {
            gross_cost: gross,
            rewards_recouped: recouped,
            net_cost: net,
            blocks,
            per_block_net: (blocks > 0).then(|| Usd(net.0 / Ratio::from_integer(i128::from(blocks)))),
        }
    }
}

/// Rental-model cost of a fork attack: every hash is paid at `c`, rewards are
/// recouped for attack blocks that remain in the final consensus chain.
pub fn rental_cost(
    hashes: u64,
    blocks_in_consensus: u64,
    econ: &EconParams,
    response: CommunityResponse,
) -> CostReport {
    let gross = econ.c * hashes;
    let recouped = match response {
        CommunityResponse::None => econ.p_b * blocks_in_consensus,
        CommunityResponse::NoRecoup => Usd::zero(),
    };
    CostReport::new(gross, recouped, blocks_in_consensus)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MinerAction {
    MineAttack,
    MineHonest,
    NoMine,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AttackOutcome {
    Succeed,
    Fail,
}

pub const ACTIONS: [MinerAction; 3] = [MinerAction::MineAttack, MinerAction::MineHonest, MinerAction::NoMine];
pub const OUTCOMES: [AttackOutcome; 2] = [AttackOutcome::Succeed, AttackOutcome::Fail];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BriberyParams {
    pub p_b: Usd,
    pub p_b_tilde: Usd,
    pub c: Usd,
    pub d: Usd,
    pub psi_a: Usd,
    /// Hashes one miner computes during the attack.
    pub x: Usd,
    pub n_miners: u64,
    /// Attack chain length in blocks.
    pub k: u64,
    /// A single miner's share of power must stay below this.
    #[serde(default = "default_pivotality")]
    pub pivotality_threshold: f64,
}

fn default_pivotality() -> f64 {
    0.01
}

impl BriberyParams {
    /// Aggregate harm to all miners if the attack succeeds.
    pub fn total_harm(&self) -> Usd {
        self.psi_a * self.n_miners
    }

    pub fn econ(&self) -> EconParams {
        EconParams { c: self.c, d: self.d, p_b: self.p_b, p_b_tilde: Some(self.p_b_tilde), psi_a: Some(self.psi_a) }
    }
}

/// One miner's payoff for an action given the attack outcome.
pub fn bribery_payoff(action: MinerAction, outcome: AttackOutcome, p: &BriberyParams) -> Usd {
    let per_hash = |reward: Usd| Usd(reward.0 / p.d.0) - p.c;
    match (action, outcome) {
        (MinerAction::MineAttack, AttackOutcome::Succeed) => p.x * per_hash(p.p_b_tilde) - p.psi_a,
        (MinerAction::MineAttack, AttackOutcome::Fail) => p.x * per_hash(p.p_b_tilde),
        (MinerAction::MineHonest, AttackOutcome::Succeed) => -(p.x * p.c) - p.psi_a,
        (MinerAction::MineHonest, AttackOutcome::Fail) => p.x * per_hash(p.p_b),
        (MinerAction::NoMine, AttackOutcome::Succeed) => -p.psi_a,
        (MinerAction::NoMine, AttackOutcome::Fail) => Usd::zero(),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub action: MinerAction,
    pub outcome: AttackOutcome,
    pub attacker_net_cost: Usd,
}

fn check_bribery_preconditions(p: &BriberyParams) -> Result<()> {
    if p.d.0 <= Ratio::zero() {
        return Err(Error::Bribery("difficulty must be positive".into()));
    }
    if p.n_miners == 0 || 1.0 / p.n_miners as f64 >= p.pivotality_threshold {
        return Err(Error::Bribery(format!(
            "a single miner holds 1/{} of the power, not below the pivotality threshold {}; \
             the dominance argument does not apply",
            p.n_miners, p.pivotality_threshold
        )));
    }
    if Usd(p.p_b.0 / p.d.0) < p.c {
        return Err(Error::Bribery("honest mining is unprofitable (p_b/D < c)".into()));
    }
    Ok(())
}

/// `a` strictly beats `b` for every attack outcome.
fn strictly_dominates(a: MinerAction, b: MinerAction, p: &BriberyParams) -> bool {
    OUTCOMES.iter().all(|o| bribery_payoff(a, *o, p) > bribery_payoff(b, *o, p))
}

/// Resolves the miners' game by dominance over the payoff matrix.
pub fn bribery_equilibrium(p: &BriberyParams) -> Result<Equilibrium> {
    check_bribery_preconditions(p)?;
    if p.p_b_tilde > p.p_b {
        let dominant = ACTIONS
            .iter()
            .filter(|a| **a != MinerAction::MineAttack)
            .all(|b| strictly_dominates(MinerAction::MineAttack, *b, p));
        if !dominant {
            return Err(Error::Bribery("no strictly dominant action (miners compute no hashes)".into()));
        }
        return Ok(Equilibrium {
            action: MinerAction::MineAttack,
            outcome: AttackOutcome::Succeed,
            attacker_net_cost: (p.p_b_tilde - p.p_b) * p.k,
        });
    }
    // Without a premium the honest reward is at least as good when the attack fails.
    Ok(Equilibrium { action: MinerAction::MineHonest, outcome: AttackOutcome::Fail, attacker_net_cost: Usd::zero() })
}

/// Net cost of a `k`-block bribed attack chain.
pub fn bribery_cost(k: u64, econ: &EconParams, response: CommunityResponse) -> Result<CostReport> {
    let tilde = econ.p_b_tilde.ok_or_else(|| Error::Bribery("p_b_tilde is required for the bribery model".into()))?;
    if econ.d.0 <= Ratio::zero() {
        return Err(Error::Bribery("difficulty must be positive".into()));
    }
    // Weak dominance of attacking: the bribe is no worse than the honest reward.
    if tilde < econ.p_b || Usd(econ.p_b.0 / econ.d.0) < econ.c {
        return Err(Error::Bribery("attacking is not a dominant strategy for miners".into()));
    }
    let recouped = match response {
        CommunityResponse::None => econ.p_b * k,
        CommunityResponse::NoRecoup => Usd::zero(),
    };
    Ok(CostReport::new(tilde * k, recouped, k))
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CostModel {
    Rental,
    Bribery,
}

/// Minimal cost to violate consistency.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SecurityLevel {
    Zero,
    /// Zero is the infimum but no attack attains it.
    InfimumZero,
    Infinite,
}

impl fmt::Display for SecurityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SecurityLevel::Zero => "0",
            SecurityLevel::InfimumZero => "inf 0 (not attained)",
            SecurityLevel::Infinite => "infinite",
        })
    }
}

pub fn economic_security_summary(protocol: Protocol, model: CostModel) -> SecurityLevel {
    match (protocol, model) {
        (Protocol::Nakamoto, CostModel::Rental) => SecurityLevel::Zero,
        (Protocol::Nakamoto, CostModel::Bribery) => SecurityLevel::InfimumZero,
        (Protocol::Stubborn, _) => SecurityLevel::Infinite,
    }
}
