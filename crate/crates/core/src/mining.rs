//! The proof-of-work lottery.
//!
//! Every unit of mining power makes one hash attempt per round and succeeds
//! independently with probability `p`. Draws come from a ChaCha8 stream keyed
//! by the scenario seed, with the trial index as stream id and the round as
//! word position, so the outcome of round `r` never depends on how many draws
//! earlier rounds consumed. Within a round, units are scanned in ascending id
//! order by geometric skipping, which costs one draw per success instead of
//! one per unit.

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::chain::Round;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningParams {
    pub p: f64,
    /// Total unit-power miners in the run.
    pub n: u32,
    pub rng_seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MiningOutcome {
    pub round: Round,
    pub successes: Vec<u32>,
}

/// Per-trial lottery stream.
#[derive(Clone, Debug)]
pub struct Lottery {
    rng: ChaCha8Rng,
    p: f64,
    ln_miss: f64,
}

impl Lottery {
    pub fn new(seed: u64, trial: u64, p: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        Lottery { rng, p, ln_miss: (-p).ln_1p() }
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Winning unit ids among `0..units` for this round, ascending.
    pub fn draw(&mut self, round: Round, units: u32) -> Vec<u32> {
        if units == 0 || self.p <= 0.0 {
            return Vec::new();
        }
        if self.p >= 1.0 {
            return (0..units).collect();
        }
        self.rng.set_word_pos(u128::from(round) << 32);
        let mut wins = Vec::new();
        let mut next = 0u64;
        loop {
            // u is uniform on (0, 1]; the gap is Geometric(p) failures before a success.
            let u = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
            let gap = (u.ln() / self.ln_miss).floor();
            if !gap.is_finite() || gap >= f64::from(units) {
                break;
            }
            next += gap as u64;
            if next >= u64::from(units) {
                break;
            }
            wins.push(next as u32);
            next += 1;
        }
        wins
    }
}

/// Draws one round for an explicit set of active units.
pub fn draw_round(
    active_units: &BTreeSet<u32>,
    params: &MiningParams,
    lottery: &mut Lottery,
    round: Round,
) -> MiningOutcome {
    let units = params.n.max(active_units.last().map_or(0, |u| u + 1));
    let successes = lottery.draw(round, units).into_iter().filter(|u| active_units.contains(u)).collect();
    MiningOutcome { round, successes }
}

/// Expected hash attempts per block found, i.e. the difficulty `D = 1/p`.
pub fn expected_hashes_per_block(params: &MiningParams) -> Result<f64> {
    if params.p <= 0.0 {
        return Err(Error::config("p must be positive to have a finite block time"));
    }
    Ok(1.0 / params.p)
}
