//! Best responses, the per-agent bound quantities `b̄ᵢ` and `b̲ᵢ`, the
//! Pay-as-Clear pure equilibrium construction, equilibrium verification, and
//! exhaustive equilibrium search over the integer bid space.
//!
//! Best responses and both bound quantities are defined through Pay-as-Clear
//! utilities; the Pay-as-Bid support bounds reuse them unchanged.

mod support;

pub use support::{enumerate_mixed_ne_2p, SupportEnumOptions};

use crate::market::{
    merit_order, pivotal_agent, rat_bid, rat_int, Bid, Error, MarketInstance, Rational,
};
use crate::mechanism::{
    counterfactual_utilities, counterfactual_utilities_in, splice_profile, Mechanism,
};
use num_traits::{One, Signed, Zero};
use std::collections::BTreeMap;

/// Cap on exhaustive perturbation enumeration inside [`b_high`].
pub const DEFAULT_AGENT_CAP: usize = 20;

/// Default budget for exhaustive pure-equilibrium search, in profiles.
pub const DEFAULT_PROFILE_BUDGET: u64 = 10_000_000;

/// Default cap on the support product used by exact expectations.
pub const DEFAULT_EXPECTATION_BUDGET: u64 = 1_000_000;

/// Per-agent bound quantities and the interval statements derived from them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundsReport {
    pub b_high: Vec<Bid>,
    pub b_low: Vec<Bid>,
    /// Agents weakly preceding the truthful pivot; only they enter the maxima.
    pub eligible: Vec<usize>,
    /// Lower bound on every Pay-as-Clear equilibrium unit price.
    pub pc_floor: Bid,
    /// Unit price of the constructed Pay-as-Clear pure equilibrium.
    pub pc_pure_price: Bid,
    /// Interval containing the support of every Pay-as-Bid mixed equilibrium.
    pub pb_interval: (Bid, Bid),
    /// Tighter Pay-as-Bid unit-price bound, when its hypotheses hold.
    pub refined_pb_bound: Option<Rational>,
}

/// Result of an equilibrium check: the largest gain any unilateral deviation
/// achieves, and one deviation attaining it when positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeReport {
    pub is_equilibrium: bool,
    pub epsilon: Rational,
    pub worst_deviator: Option<(usize, Bid)>,
}

/// Independent per-agent distributions over the bid space.
#[derive(Debug, Clone, PartialEq, Eq, Ord, PartialOrd)]
pub struct MixedProfile {
    pub distributions: Vec<BTreeMap<Bid, Rational>>,
}

impl MixedProfile {
    pub fn point_mass(bids: &[Bid]) -> Self {
        MixedProfile {
            distributions: bids
                .iter()
                .map(|&b| BTreeMap::from([(b, Rational::one())]))
                .collect(),
        }
    }

    /// Converts floating weights exactly and renormalizes; each agent's
    /// weights must already sum to one within `1e-12`.
    pub fn from_float_weights(weights: &[Vec<(Bid, f64)>]) -> Result<Self, Error> {
        let mut distributions = Vec::with_capacity(weights.len());
        for (i, row) in weights.iter().enumerate() {
            let float_sum: f64 = row.iter().map(|&(_, w)| w).sum();
            if (float_sum - 1.0).abs() > 1e-12 {
                return Err(Error::MalformedProfile(format!(
                    "agent {i} weights sum to {float_sum}, not 1"
                )));
            }
            let mut dist = BTreeMap::new();
            let mut total = Rational::zero();
            for &(bid, w) in row {
                if w < 0.0 || !w.is_finite() {
                    return Err(Error::MalformedProfile(format!(
                        "agent {i} has weight {w} at bid {bid}"
                    )));
                }
                if w == 0.0 {
                    continue;
                }
                let exact = Rational::from_float(w).expect("finite float");
                total += &exact;
                dist.insert(bid, exact);
            }
            for value in dist.values_mut() {
                *value /= &total;
            }
            distributions.push(dist);
        }
        Ok(MixedProfile { distributions })
    }

    pub fn validate(&self, inst: &MarketInstance) -> Result<(), Error> {
        if self.distributions.len() != inst.len() {
            return Err(Error::MalformedProfile(format!(
                "{} distributions for {} producers",
                self.distributions.len(),
                inst.len()
            )));
        }
        let one = Rational::one();
        for (i, dist) in self.distributions.iter().enumerate() {
            if dist.is_empty() {
                return Err(Error::MalformedProfile(format!("agent {i} has empty support")));
            }
            let mut total = Rational::zero();
            for (&bid, p) in dist {
                if bid > inst.max_bid {
                    return Err(Error::MalformedProfile(format!(
                        "agent {i} puts weight on bid {bid} above the ceiling"
                    )));
                }
                if !p.is_positive() {
                    return Err(Error::MalformedProfile(format!(
                        "agent {i} has non-positive weight at bid {bid}"
                    )));
                }
                total += p;
            }
            if total != one {
                return Err(Error::MalformedProfile(format!(
                    "agent {i} weights sum to {total}, not 1"
                )));
            }
        }
        Ok(())
    }

    pub fn support_product(&self) -> u128 {
        self.distributions
            .iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d.len() as u128))
    }

    /// Supports, one sorted vector per agent.
    pub fn supports(&self) -> Vec<Vec<Bid>> {
        self.distributions
            .iter()
            .map(|d| d.keys().copied().collect())
            .collect()
    }
}

/// Best responses of one agent against fixed opponent bids, under
/// Pay-as-Clear utilities. When no bid earns a positive utility the set
/// degenerates to the agent's own cost.
pub fn best_response_set(
    inst: &MarketInstance,
    i: usize,
    opponents: &[Bid],
) -> Result<Vec<Bid>, Error> {
    let sweep = counterfactual_utilities(Mechanism::PayAsClear, inst, opponents, i)?;
    let best = sweep.iter().max().expect("non-empty sweep").clone();
    if !best.is_positive() {
        return Ok(vec![inst.producers[i].cost]);
    }
    Ok(sweep
        .iter()
        .enumerate()
        .filter(|(_, u)| **u == best)
        .map(|(v, _)| v as Bid)
        .collect())
}

#[cfg(test)]
fn max_best_response(inst: &MarketInstance, i: usize, opponents: &[Bid]) -> Result<Bid, Error> {
    Ok(*best_response_set(inst, i, opponents)?
        .last()
        .expect("best-response sets are non-empty"))
}

/// Opponent costs of agent `i` in index order.
fn opponent_costs(inst: &MarketInstance, i: usize) -> Vec<Bid> {
    (0..inst.len())
        .filter(|&j| j != i)
        .map(|j| inst.producers[j].cost)
        .collect()
}

/// Applies a perturbation mask: raised opponents bid their cost plus one,
/// without clamping at the ceiling.
fn raise(bids: &[Bid], mask: u64) -> Vec<Bid> {
    bids.iter()
        .enumerate()
        .map(|(slot, &b)| if mask & (1 << slot) != 0 { b + 1 } else { b })
        .collect()
}

/// Smallest integer price at which selling the whole supply matches the
/// best-response utility against truthful opponents: `⌈cᵢ + maxU/sᵢ⌉`.
pub fn b_low(inst: &MarketInstance, i: usize) -> Result<Bid, Error> {
    inst.check_agent(i)?;
    let costs = opponent_costs(inst, i);
    let sweep = counterfactual_utilities(Mechanism::PayAsClear, inst, &costs, i)?;
    let best = sweep.iter().max().expect("non-empty sweep");
    let producer = &inst.producers[i];
    let value = rat_bid(producer.cost) + best / &producer.supply;
    Ok(crate::market::bid_to_u32(&value.ceil()))
}

/// Highest best-response bid of agent `i` over every opponent profile in
/// which each opponent bids its cost or its cost plus one.
pub fn b_high(inst: &MarketInstance, i: usize) -> Result<Bid, Error> {
    b_high_capped(inst, i, DEFAULT_AGENT_CAP)
}

pub fn b_high_capped(inst: &MarketInstance, i: usize, agent_cap: usize) -> Result<Bid, Error> {
    Ok(b_high_with_witness(inst, i, agent_cap)?.0)
}

/// Computes `b̄ᵢ` and one opponent profile attaining it.
///
/// Utilities are componentwise monotone in opponent bids, which gives a
/// certified upper bound: any maximal best response under some perturbation
/// keeps at least the unperturbed best value when all opponents are raised.
/// When a probed perturbation already attains that bound the exhaustive
/// enumeration over all `2^(n-1)` perturbations is skipped; otherwise it runs
/// in full, up to `agent_cap` producers.
fn b_high_with_witness(
    inst: &MarketInstance,
    i: usize,
    agent_cap: usize,
) -> Result<(Bid, Vec<Bid>), Error> {
    inst.check_agent(i)?;
    inst.ensure_valid()?;
    let costs = opponent_costs(inst, i);
    let slots = costs.len();

    let evaluate = |opp: &[Bid]| -> Result<(Bid, Rational), Error> {
        let sweep = counterfactual_utilities(Mechanism::PayAsClear, inst, opp, i)?;
        let best = sweep.iter().max().expect("non-empty sweep").clone();
        let bid = if best.is_positive() {
            sweep
                .iter()
                .rposition(|u| *u == best)
                .expect("max exists") as Bid
        } else {
            inst.producers[i].cost
        };
        Ok((bid, best))
    };

    // Probe the unperturbed profile, each single raise, each single omission,
    // and the fully raised profile.
    let raised_where = |pred: &dyn Fn(usize) -> bool| -> Vec<Bid> {
        costs
            .iter()
            .enumerate()
            .map(|(slot, &b)| {
                if pred(slot) {
                    (b + 1).min(inst.max_bid)
                } else {
                    b
                }
            })
            .collect()
    };
    let mut probes: Vec<Vec<Bid>> = vec![costs.clone()];
    for s in 0..slots {
        probes.push(raised_where(&|slot| slot == s));
    }
    if slots > 1 {
        for s in 0..slots {
            probes.push(raised_where(&|slot| slot != s));
        }
    }
    if slots > 0 {
        probes.push(raised_where(&|_| true));
    }
    let mut best_probe: Option<(Bid, Vec<Bid>)> = None;
    let mut base_value = Rational::zero();
    for (k, opp) in probes.iter().enumerate() {
        let (bid, value) = evaluate(opp)?;
        if k == 0 {
            base_value = value;
        }
        if best_probe.as_ref().is_none_or(|(b, _)| bid > *b) {
            best_probe = Some((bid, opp.clone()));
        }
    }
    let (probe_bid, probe_witness) = best_probe.expect("probed at least the base profile");

    // Certified upper bound from the fully raised profile: a maximal best
    // response under any perturbation keeps utility at least the unperturbed
    // best value (or stays positive) when every opponent is raised.
    let upper = if slots == 0 {
        probe_bid
    } else {
        let all_raised = raised_where(&|_| true);
        let sweep = counterfactual_utilities(Mechanism::PayAsClear, inst, &all_raised, i)?;
        let mut bound = inst.producers[i].cost;
        for (v, u) in sweep.iter().enumerate() {
            let qualifies = if base_value.is_positive() {
                *u >= base_value
            } else {
                u.is_positive()
            };
            if qualifies && v as Bid > bound {
                bound = v as Bid;
            }
        }
        bound
    };

    if probe_bid >= upper {
        return Ok((probe_bid, probe_witness));
    }

    if inst.len() > agent_cap || slots > 63 {
        return Err(Error::BudgetExceeded(format!(
            "{} producers exceed the exhaustive perturbation cap {}",
            inst.len(),
            agent_cap
        )));
    }
    let mut best: Option<(Bid, Vec<Bid>)> = None;
    for mask in 0..(1u64 << slots) {
        let opp = raise(&costs, mask, inst.max_bid);
        let (bid, _) = evaluate(&opp)?;
        if best.as_ref().is_none_or(|(b, _)| bid > *b) {
            best = Some((bid, opp));
        }
    }
    Ok(best.expect("at least one perturbation"))
}

/// Agents weakly preceding the truthful pivot in the truthful merit order.
pub fn eligible_agents(inst: &MarketInstance) -> Result<Vec<usize>, Error> {
    let truthful = inst.truthful_profile();
    let pivot = pivotal_agent(inst, &truthful)?;
    let mut eligible = Vec::new();
    for agent in merit_order(&truthful) {
        eligible.push(agent);
        if agent == pivot {
            break;
        }
    }
    eligible.sort_unstable();
    Ok(eligible)
}

/// Populates every bound quantity for an instance.
pub fn bounds_summary(inst: &MarketInstance) -> Result<BoundsReport, Error> {
    bounds_summary_capped(inst, DEFAULT_AGENT_CAP)
}

pub fn bounds_summary_capped(inst: &MarketInstance, agent_cap: usize) -> Result<BoundsReport, Error> {
    inst.ensure_valid()?;
    let n = inst.len();
    let mut highs = Vec::with_capacity(n);
    let mut lows = Vec::with_capacity(n);
    for i in 0..n {
        highs.push(b_high_capped(inst, i, agent_cap)?);
        lows.push(b_low(inst, i)?);
    }
    let eligible = eligible_agents(inst)?;
    let pc_pure_price = eligible.iter().map(|&i| highs[i]).max().expect("non-empty");
    let pc_floor = eligible.iter().map(|&i| lows[i]).max().expect("non-empty");
    let refined_pb_bound = refined_bound_from_parts(inst, &lows, &highs, &eligible)?;
    Ok(BoundsReport {
        b_high: highs,
        b_low: lows,
        eligible,
        pc_floor,
        pc_pure_price,
        pb_interval: (pc_floor.saturating_sub(1), pc_pure_price),
        refined_pb_bound,
    })
}

/// Builds the Pay-as-Clear pure equilibrium: the eligible agent with the
/// largest `b̄` (ties to the highest index) bids it, everyone else keeps the
/// perturbed cost profile attaining it.
pub fn construct_pc_pure_ne(inst: &MarketInstance) -> Result<Vec<Bid>, Error> {
    construct_pc_pure_ne_capped(inst, DEFAULT_AGENT_CAP)
}

pub fn construct_pc_pure_ne_capped(
    inst: &MarketInstance,
    agent_cap: usize,
) -> Result<Vec<Bid>, Error> {
    let eligible = eligible_agents(inst)?;
    let mut best: Option<(Bid, usize, Vec<Bid>)> = None;
    for &i in &eligible {
        let (bid, witness) = b_high_with_witness(inst, i, agent_cap)?;
        if best.as_ref().is_none_or(|(b, _, _)| bid >= *b) {
            best = Some((bid, i, witness));
        }
    }
    let (bid, agent, witness) = best.expect("eligible set is non-empty");
    Ok(splice_profile(&witness, agent, bid))
}

/// Checks a pure profile for Nash stability by sweeping every unilateral
/// deviation of every agent.
pub fn is_pure_ne(
    mech: Mechanism,
    inst: &MarketInstance,
    bids: &[Bid],
) -> Result<NeReport, Error> {
    inst.check_profile(bids)?;
    let mut epsilon = Rational::zero();
    let mut worst: Option<(usize, Bid)> = None;
    for i in 0..inst.len() {
        let sweep = counterfactual_utilities_in(mech, inst, bids, i)?;
        let current = &sweep[bids[i] as usize];
        for (v, value) in sweep.iter().enumerate() {
            let gain = value - current;
            if gain > epsilon {
                epsilon = gain;
                worst = Some((i, v as Bid));
            }
        }
    }
    Ok(NeReport {
        is_equilibrium: epsilon.is_zero(),
        epsilon,
        worst_deviator: worst,
    })
}

/// Exhaustively lists every pure Nash equilibrium of an instance.
pub fn enumerate_pure_ne(
    mech: Mechanism,
    inst: &MarketInstance,
    budget: u64,
) -> Result<Vec<Vec<Bid>>, Error> {
    inst.ensure_valid()?;
    let n = inst.len();
    let actions = u128::from(inst.max_bid) + 1;
    let mut space = 1u128;
    for _ in 0..n {
        space = space.saturating_mul(actions);
    }
    if space > u128::from(budget) {
        return Err(Error::BudgetExceeded(format!(
            "{space} profiles exceed the budget {budget}"
        )));
    }
    let mut found = Vec::new();
    let mut profile = vec![0 as Bid; n];
    'outer: loop {
        let mut stable = true;
        'agents: for i in 0..n {
            let sweep = counterfactual_utilities_in(mech, inst, &profile, i)?;
            let current = &sweep[profile[i] as usize];
            for value in &sweep {
                if value > current {
                    stable = false;
                    break 'agents;
                }
            }
        }
        if stable {
            found.push(profile.clone());
        }
        // Odometer step in lexicographic order.
        for slot in (0..n).rev() {
            if profile[slot] < inst.max_bid {
                profile[slot] += 1;
                continue 'outer;
            }
            profile[slot] = 0;
        }
        break;
    }
    Ok(found)
}

/// Expected utility vector of one agent against the opponents' mixture:
/// entry `v` is `E[Uᵢ(v, b₋ᵢ)]`.
fn expected_deviation_values(
    mech: Mechanism,
    inst: &MarketInstance,
    sigma: &MixedProfile,
    i: usize,
) -> Result<Vec<Rational>, Error> {
    let opponents: Vec<(usize, &BTreeMap<Bid, Rational>)> = sigma
        .distributions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .collect();
    let mut totals = vec![Rational::zero(); inst.max_bid as usize + 1];
    let supports: Vec<Vec<(&Bid, &Rational)>> =
        opponents.iter().map(|(_, d)| d.iter().collect()).collect();
    let mut cursor = vec![0usize; supports.len()];
    loop {
        let mut weight = Rational::one();
        let mut combo = Vec::with_capacity(supports.len());
        for (slot, support) in supports.iter().enumerate() {
            let (bid, p) = support[cursor[slot]];
            weight *= p;
            combo.push(*bid);
        }
        let sweep = counterfactual_utilities(mech, inst, &combo, i)?;
        for (total, value) in totals.iter_mut().zip(sweep) {
            *total += &weight * value;
        }
        let mut slot = supports.len();
        loop {
            if slot == 0 {
                return Ok(totals);
            }
            slot -= 1;
            cursor[slot] += 1;
            if cursor[slot] < supports[slot].len() {
                break;
            }
            cursor[slot] = 0;
        }
    }
}

/// Checks a mixed profile for (epsilon-approximate) Nash stability with
/// exact expectations over the support product.
pub fn is_mixed_ne(
    mech: Mechanism,
    inst: &MarketInstance,
    sigma: &MixedProfile,
    tolerance: &Rational,
    budget: u64,
) -> Result<NeReport, Error> {
    inst.ensure_valid()?;
    sigma.validate(inst)?;
    if sigma.support_product() > u128::from(budget) {
        return Err(Error::BudgetExceeded(format!(
            "support product {} exceeds the exact-expectation budget {budget}; \
             use a sampled evaluation instead",
            sigma.support_product()
        )));
    }
    let mut epsilon = Rational::zero();
    let mut worst: Option<(usize, Bid)> = None;
    for i in 0..inst.len() {
        let deviations = expected_deviation_values(mech, inst, sigma, i)?;
        let current: Rational = sigma.distributions[i]
            .iter()
            .fold(Rational::zero(), |acc, (&bid, p)| {
                acc + p * &deviations[bid as usize]
            });
        for (v, value) in deviations.iter().enumerate() {
            let gain = value - &current;
            if gain > epsilon {
                epsilon = gain;
                worst = Some((i, v as Bid));
            }
        }
    }
    Ok(NeReport {
        is_equilibrium: epsilon <= *tolerance,
        epsilon,
        worst_deviator: worst,
    })
}

/// Exact expected unit price of a mixed profile under a mechanism.
pub fn expected_unit_price(
    mech: Mechanism,
    inst: &MarketInstance,
    sigma: &MixedProfile,
    budget: u64,
) -> Result<Rational, Error> {
    inst.ensure_valid()?;
    sigma.validate(inst)?;
    if sigma.support_product() > u128::from(budget) {
        return Err(Error::BudgetExceeded(format!(
            "support product {} exceeds the budget {budget}",
            sigma.support_product()
        )));
    }
    let supports: Vec<Vec<(&Bid, &Rational)>> = sigma
        .distributions
        .iter()
        .map(|d| d.iter().collect())
        .collect();
    let mut cursor = vec![0usize; supports.len()];
    let mut total = Rational::zero();
    loop {
        let mut weight = Rational::one();
        let mut bids = Vec::with_capacity(supports.len());
        for (slot, support) in supports.iter().enumerate() {
            let (bid, p) = support[cursor[slot]];
            weight *= p;
            bids.push(*bid);
        }
        let outcome = crate::mechanism::run_mechanism(mech, inst, &bids)?;
        total += weight * outcome.unit_price;
        let mut slot = supports.len();
        loop {
            if slot == 0 {
                return Ok(total);
            }
            slot -= 1;
            cursor[slot] += 1;
            if cursor[slot] < supports[slot].len() {
                break;
            }
            cursor[slot] = 0;
        }
    }
}

fn refined_bound_from_parts(
    inst: &MarketInstance,
    lows: &[Bid],
    highs: &[Bid],
    eligible: &[usize],
) -> Result<Option<Rational>, Error> {
    let max_low = eligible.iter().map(|&i| lows[i]).max().expect("non-empty");
    let leaders: Vec<usize> = eligible
        .iter()
        .copied()
        .filter(|&i| lows[i] == max_low)
        .collect();
    if leaders.len() != 1 {
        return Ok(None);
    }
    let star = leaders[0];
    let low = lows[star];
    let high = highs[star];
    let producer = &inst.producers[star];
    if producer.supply >= Rational::one() || low + 1 >= high {
        return Ok(None);
    }
    if (0..inst.len())
        .any(|j| j != star && lows[j] + 2 > low)
    {
        return Ok(None);
    }

    let costs = opponent_costs(inst, star);
    let sweep = counterfactual_utilities(Mechanism::PayAsClear, inst, &costs, star)?;
    let best = sweep.iter().max().expect("non-empty sweep");
    let gamma = best / &producer.supply + Rational::one();

    let cost = i64::from(producer.cost);
    let mut harmonic = Rational::zero();
    for alpha in i64::from(low) + 2..=i64::from(high) {
        harmonic += rat_int(alpha - cost - 1).recip();
    }
    let one = Rational::one();
    let bound = (&one - &producer.supply)
        * (rat_int(i64::from(low) + 1) + gamma * harmonic)
        + &producer.supply * rat_bid(high);
    Ok(Some(bound))
}

/// Tighter Pay-as-Bid unit-price bound. Present only when the eligible agent
/// with the largest `b̲` is unique, sells less than the whole demand, has
/// `b̲ + 1 < b̄`, and every other agent trails its `b̲` by at least two.
pub fn refined_pb_upper_bound(inst: &MarketInstance) -> Result<Option<Rational>, Error> {
    let report = bounds_summary(inst)?;
    Ok(report.refined_pb_bound)
}

/// A profitable unilateral Pay-as-Clear deviation from truthful bidding, if
/// any exists. The truthful pivot's best raise is preferred: whenever the
/// pivot's cost stays below the next merit-order cost it can lift the
/// clearing price without losing allocation, and that deviation is returned.
pub fn truthful_manipulability(
    inst: &MarketInstance,
) -> Result<Option<(usize, Bid, Rational)>, Error> {
    inst.ensure_valid()?;
    let truthful = inst.truthful_profile();
    let pivot = pivotal_agent(inst, &truthful)?;

    let best_deviation = |i: usize| -> Result<Option<(Bid, Rational)>, Error> {
        let sweep = counterfactual_utilities_in(Mechanism::PayAsClear, inst, &truthful, i)?;
        let current = sweep[truthful[i] as usize].clone();
        let mut best: Option<(Bid, Rational)> = None;
        for (v, value) in sweep.iter().enumerate() {
            let gain = value - &current;
            if gain.is_positive() && best.as_ref().is_none_or(|(_, g)| gain > *g) {
                best = Some((v as Bid, gain));
            }
        }
        Ok(best)
    };

    if let Some((bid, gain)) = best_deviation(pivot)? {
        return Ok(Some((pivot, bid, gain)));
    }
    let mut best: Option<(usize, Bid, Rational)> = None;
    for i in 0..inst.len() {
        if i == pivot {
            continue;
        }
        if let Some((bid, gain)) = best_deviation(i)? {
            if best.as_ref().is_none_or(|(_, _, g)| gain > *g) {
                best = Some((i, bid, gain));
            }
        }
    }
    Ok(best)
}
