//! Pricing rules on top of the cost-minimizing allocation: Pay-as-Bid,
//! Pay-as-Clear, and VCG, plus utilities and a single-sweep counterfactual
//! utility vector over every bid an agent could have made.

use crate::market::{
    allocate, clearing_price, rat_bid, rat_int, Bid, Error, MarketInstance, Rational,
};
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

/// The three pricing rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mechanism {
    PayAsBid,
    PayAsClear,
    Vcg,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::PayAsBid, Mechanism::PayAsClear, Mechanism::Vcg];

    pub fn label(self) -> &'static str {
        match self {
            Mechanism::PayAsBid => "pb",
            Mechanism::PayAsClear => "pc",
            Mechanism::Vcg => "vcg",
        }
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        match text.to_ascii_lowercase().as_str() {
            "pb" | "pay-as-bid" | "payasbid" => Ok(Mechanism::PayAsBid),
            "pc" | "pay-as-clear" | "payasclear" => Ok(Mechanism::PayAsClear),
            "vcg" => Ok(Mechanism::Vcg),
            other => Err(Error::Unsupported(format!("unknown mechanism `{other}`"))),
        }
    }
}

/// What a mechanism run produces: the allocation, per-unit prices, the
/// clearing price, and the average unit price `Σ xᵢ·pᵢ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub allocation: Vec<Rational>,
    pub prices: Vec<Rational>,
    pub clearing_price: Bid,
    pub unit_price: Rational,
}

/// Runs one pricing mechanism on a bid profile.
///
/// Sellers are always paid at least their bid. Non-sellers are reported with
/// price = bid under PB, price = clearing price under PC, and price = 0 under
/// VCG; their allocation is zero so the unit price is unaffected.
pub fn run_mechanism(
    mech: Mechanism,
    inst: &MarketInstance,
    bids: &[Bid],
) -> Result<Outcome, Error> {
    let allocation = allocate(inst, bids)?;
    let q = clearing_price(inst, bids)?;
    let prices = match mech {
        Mechanism::PayAsBid => bids.iter().map(|&b| rat_bid(b)).collect(),
        Mechanism::PayAsClear => vec![rat_bid(q); inst.len()],
        Mechanism::Vcg => vcg_prices_given(inst, bids, &allocation),
    };
    let unit_price = allocation
        .iter()
        .zip(&prices)
        .fold(Rational::zero(), |acc, (x, p)| acc + x * p);
    Ok(Outcome {
        allocation,
        prices,
        clearing_price: q,
        unit_price,
    })
}

/// Per-unit VCG prices: each seller is paid the increase in the other
/// agents' cost caused by its absence, divided by its allocation.
///
/// When removing an agent leaves total supply below the demand, the unmet
/// residual is costed at the bid ceiling.
pub fn vcg_prices(inst: &MarketInstance, bids: &[Bid]) -> Result<Vec<Rational>, Error> {
    let allocation = allocate(inst, bids)?;
    Ok(vcg_prices_given(inst, bids, &allocation))
}

fn vcg_prices_given(inst: &MarketInstance, bids: &[Bid], allocation: &[Rational]) -> Vec<Rational> {
    let one = Rational::one();
    let n = inst.len();
    let mut prices = vec![Rational::zero(); n];
    for i in 0..n {
        if allocation[i].is_zero() {
            continue;
        }
        let others = OpponentView::new(inst, bids, i);
        let absent_cost = others.cover_cost(&one, inst.max_bid);
        let present_cost: Rational = (0..n)
            .filter(|&j| j != i)
            .fold(Rational::zero(), |acc, j| {
                acc + &allocation[j] * rat_bid(bids[j])
            });
        prices[i] = (absent_cost - present_cost) / &allocation[i];
    }
    prices
}

/// Individual revenue `(pᵢ − cᵢ)·xᵢ` of one agent under a mechanism.
pub fn utility(
    mech: Mechanism,
    inst: &MarketInstance,
    bids: &[Bid],
    i: usize,
) -> Result<Rational, Error> {
    inst.check_agent(i)?;
    let outcome = run_mechanism(mech, inst, bids)?;
    let cost = rat_bid(inst.producers[i].cost);
    Ok((&outcome.prices[i] - cost) * &outcome.allocation[i])
}

/// The opponents of one agent, sorted into merit order, with prefix sums of
/// supply and of supply-weighted bids.
struct OpponentView<'a> {
    /// (bid, original index, supply), ascending by (bid, index).
    sorted: Vec<(Bid, usize, &'a Rational)>,
    /// `prefix_supply[k]` = total supply of the first `k` sorted opponents.
    prefix_supply: Vec<Rational>,
    /// `prefix_value[k]` = Σ supply·bid over the first `k` sorted opponents.
    prefix_value: Vec<Rational>,
}

impl<'a> OpponentView<'a> {
    /// View over all agents except `i`, bidding per the full profile.
    fn new(inst: &'a MarketInstance, bids: &[Bid], i: usize) -> Self {
        let pairs: Vec<(Bid, usize, &Rational)> = (0..inst.len())
            .filter(|&j| j != i)
            .map(|j| (bids[j], j, &inst.producers[j].supply))
            .collect();
        Self::from_pairs(pairs)
    }

    /// View from explicit opponent bids given in index order (skipping `i`).
    fn from_partial(inst: &'a MarketInstance, opponents: &[Bid], i: usize) -> Self {
        let pairs: Vec<(Bid, usize, &Rational)> = (0..inst.len())
            .filter(|&j| j != i)
            .enumerate()
            .map(|(slot, j)| (opponents[slot], j, &inst.producers[j].supply))
            .collect();
        Self::from_pairs(pairs)
    }

    fn from_pairs(mut pairs: Vec<(Bid, usize, &'a Rational)>) -> Self {
        pairs.sort_by_key(|&(bid, idx, _)| (bid, idx));
        let mut prefix_supply = Vec::with_capacity(pairs.len() + 1);
        let mut prefix_value = Vec::with_capacity(pairs.len() + 1);
        prefix_supply.push(Rational::zero());
        prefix_value.push(Rational::zero());
        for &(bid, _, supply) in &pairs {
            let s = prefix_supply.last().unwrap() + supply;
            let v = prefix_value.last().unwrap() + supply * rat_bid(bid);
            prefix_supply.push(s);
            prefix_value.push(v);
        }
        OpponentView {
            sorted: pairs,
            prefix_supply,
            prefix_value,
        }
    }

    fn total_supply(&self) -> &Rational {
        self.prefix_supply.last().unwrap()
    }

    /// Cheapest cost at which the opponents alone cover `demand`, pricing any
    /// shortfall at `ceiling` per unit.
    fn cover_cost(&self, demand: &Rational, ceiling: Bid) -> Rational {
        if !demand.is_positive() {
            return Rational::zero();
        }
        if self.total_supply() < demand {
            let shortfall = demand - self.total_supply();
            return self.prefix_value.last().unwrap() + rat_bid(ceiling) * shortfall;
        }
        let t = self.first_covering(demand, 0);
        &self.prefix_value[t] + rat_bid(self.sorted[t].0) * (demand - &self.prefix_supply[t])
    }

    /// Smallest `t ≥ from` with `prefix_supply[t + 1] ≥ demand`.
    fn first_covering(&self, demand: &Rational, from: usize) -> usize {
        let mut t = from;
        while self.prefix_supply[t + 1] < *demand {
            t += 1;
        }
        t
    }
}

/// Utility of agent `i` for every own bid `0..=max_bid` against fixed
/// opponent bids, under one mechanism.
///
/// `opponents` lists the bids of all agents except `i` in index order. The
/// whole vector is computed in a single pass over the sorted opponents
/// instead of `max_bid + 1` independent allocations.
pub fn counterfactual_utilities(
    mech: Mechanism,
    inst: &MarketInstance,
    opponents: &[Bid],
    i: usize,
) -> Result<Vec<Rational>, Error> {
    for (slot, &bid) in opponents.iter().enumerate() {
        if bid > inst.max_bid {
            let agent = if slot < i { slot } else { slot + 1 };
            return Err(Error::BidOutOfRange {
                agent,
                bid,
                max_bid: inst.max_bid,
            });
        }
    }
    counterfactual_utilities_unrestricted(mech, inst, opponents, i)
}

/// Like [`counterfactual_utilities`], but opponents may bid above the
/// ceiling. Best-response perturbations raise costs by one without clamping,
/// which can push an opponent to `max_bid + 1`.
pub(crate) fn counterfactual_utilities_unrestricted(
    mech: Mechanism,
    inst: &MarketInstance,
    opponents: &[Bid],
    i: usize,
) -> Result<Vec<Rational>, Error> {
    inst.ensure_valid()?;
    inst.check_agent(i)?;
    if opponents.len() + 1 != inst.len() {
        return Err(Error::ProfileLength {
            got: opponents.len() + 1,
            want: inst.len(),
        });
    }

    let me = &inst.producers[i];
    let own_supply = &me.supply;
    let own_cost = i64::from(me.cost);
    let one = Rational::one();
    let view = OpponentView::from_partial(inst, opponents, i);

    // Pivot position among the opponents when this agent sells its full
    // supply; independent of the own bid.
    let need = &one - own_supply;
    let opponents_pivot = if need.is_positive() && *view.total_supply() >= need {
        Some(view.first_covering(&need, 0))
    } else {
        None
    };
    let absent_cost = match mech {
        Mechanism::Vcg => Some(view.cover_cost(&one, inst.max_bid)),
        _ => None,
    };

    let m = inst.max_bid as usize;
    let mut out = Vec::with_capacity(m + 1);
    let mut pos = 0usize; // opponents preceding agent i at the current bid
    let mut fill = 0usize; // VCG: opponents covering the residual demand
    for v in 0..=inst.max_bid {
        while pos < view.sorted.len() {
            let (bid, idx, _) = view.sorted[pos];
            if bid < v || (bid == v && idx < i) {
                pos += 1;
            } else {
                break;
            }
        }
        let before = &view.prefix_supply[pos];
        let avail = &one - before;
        if !avail.is_positive() {
            out.push(Rational::zero());
            continue;
        }
        let sold = if avail < *own_supply {
            avail.clone()
        } else {
            own_supply.clone()
        };
        let margin_bid = rat_int(i64::from(v) - own_cost);
        let value = match mech {
            Mechanism::PayAsBid => margin_bid * &sold,
            Mechanism::PayAsClear => {
                let pivotal_self = avail <= *own_supply;
                if pivotal_self {
                    margin_bid * &sold
                } else {
                    let t = opponents_pivot.expect("a later opponent covers the demand");
                    rat_int(i64::from(view.sorted[t].0) - own_cost) * &sold
                }
            }
            Mechanism::Vcg => {
                let residual = &one - &sold;
                let others_cost = if residual.is_positive() {
                    while view.prefix_supply[fill + 1] < residual {
                        fill += 1;
                    }
                    &view.prefix_value[fill]
                        + rat_bid(view.sorted[fill].0) * (&residual - &view.prefix_supply[fill])
                } else {
                    Rational::zero()
                };
                let externality = absent_cost.as_ref().unwrap() - others_cost;
                externality - rat_int(own_cost) * &sold
            }
        };
        out.push(value);
    }
    Ok(out)
}

/// Convenience: utility vector of agent `i` against the other bids of a full
/// profile (entry `i` of `bids` is ignored).
pub fn counterfactual_utilities_in(
    mech: Mechanism,
    inst: &MarketInstance,
    bids: &[Bid],
    i: usize,
) -> Result<Vec<Rational>, Error> {
    let opponents: Vec<Bid> = bids
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &b)| b)
        .collect();
    counterfactual_utilities(mech, inst, &opponents, i)
}

/// Splices an own bid into opponent bids given in index order.
pub(crate) fn splice_profile(opponents: &[Bid], i: usize, own: Bid) -> Vec<Bid> {
    let mut bids = Vec::with_capacity(opponents.len() + 1);
    bids.extend_from_slice(&opponents[..i]);
    bids.push(own);
    bids.extend_from_slice(&opponents[i..]);
    bids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::rat;
    use num_traits::ToPrimitive;

    fn example1() -> MarketInstance {
        MarketInstance::from_triples(
            "example1",
            4,
            &[(1, 3, 0), (1, 2, 1), (1, 4, 2), (2, 3, 3)],
        )
    }

    fn sec31() -> MarketInstance {
        MarketInstance::from_triples("sec31", 6, &[(3, 4, 0), (3, 4, 1), (1, 10, 4)])
    }

    #[test]
    fn pay_as_clear_example1() {
        let inst = example1();
        let out = run_mechanism(Mechanism::PayAsClear, &inst, &inst.truthful_profile()).unwrap();
        assert_eq!(out.clearing_price, 2);
        assert!(out.prices.iter().all(|p| *p == rat(2, 1)));
        assert_eq!(out.unit_price, rat(2, 1));
    }

    #[test]
    fn pay_as_bid_example1() {
        let inst = example1();
        let out = run_mechanism(Mechanism::PayAsBid, &inst, &inst.truthful_profile()).unwrap();
        assert_eq!(
            out.prices,
            vec![rat(0, 1), rat(1, 1), rat(2, 1), rat(3, 1)]
        );
        assert_eq!(out.unit_price, rat(5, 6));
    }

    #[test]
    fn vcg_example1() {
        let inst = example1();
        let out = run_mechanism(Mechanism::Vcg, &inst, &inst.truthful_profile()).unwrap();
        // Removing the first producer moves 1/4 + 1/4 of demand onto costs 2
        // and 3; the externality 11/12 over an allocation of 1/3 prices each
        // unit at 11/4. The third producer's residual 1/6 lands on cost 3
        // when it leaves, so its externality 1/2 prices at 3 per unit.
        assert_eq!(
            out.prices,
            vec![rat(11, 4), rat(17, 6), rat(3, 1), rat(0, 1)]
        );
        assert_eq!(
            out.unit_price,
            rat(11, 4) * rat(1, 3) + rat(17, 6) * rat(1, 2) + rat(3, 1) * rat(1, 6)
        );
    }

    #[test]
    fn vcg_redundant_zero_cost_pair() {
        let inst = MarketInstance::from_triples("pair", 3, &[(1, 1, 0), (1, 1, 0)]);
        let prices = vcg_prices(&inst, &[0, 0]).unwrap();
        assert_eq!(prices, vec![rat(0, 1), rat(0, 1)]);
    }

    #[test]
    fn vcg_shortfall_family_smallest() {
        // Two half-supplies at cost 0 and a quarter at cost 3, ceiling 4.
        // Removing either zero-cost seller strands 1/4 of demand at the
        // ceiling: externality 3/4 + 1 = 7/4 over an allocation of 1/2.
        let inst = MarketInstance::from_triples("g2", 4, &[(1, 2, 0), (1, 2, 0), (1, 4, 3)]);
        let out = run_mechanism(Mechanism::Vcg, &inst, &inst.truthful_profile()).unwrap();
        assert_eq!(out.prices, vec![rat(7, 2), rat(7, 2), rat(0, 1)]);
        assert_eq!(out.unit_price, rat(7, 2));
    }

    #[test]
    fn utility_examples() {
        let inst = sec31();
        assert_eq!(
            utility(Mechanism::PayAsClear, &inst, &[4, 1, 4], 0).unwrap(),
            rat(1, 1)
        );
        assert_eq!(
            utility(Mechanism::PayAsClear, &inst, &[1, 1, 4], 0).unwrap(),
            rat(3, 4)
        );
        // The most expensive producer sells nothing under truthful bids.
        assert_eq!(
            utility(Mechanism::PayAsClear, &inst, &inst.truthful_profile(), 2).unwrap(),
            rat(0, 1)
        );
    }

    #[test]
    fn counterfactual_entries_match_worked_values() {
        let inst = sec31();
        let sweep =
            counterfactual_utilities(Mechanism::PayAsClear, &inst, &[1, 4], 0).unwrap();
        assert_eq!(sweep[4], rat(1, 1));
        assert_eq!(sweep[1], rat(3, 4));
        assert_eq!(sweep[6], rat(9, 10));
    }

    #[test]
    fn counterfactual_residual_seller_scales_with_bid() {
        let inst = MarketInstance::from_triples(
            "fig3",
            800,
            &[(3, 10, 0), (3, 10, 0), (3, 10, 0), (3, 10, 0)],
        );
        let sweep = counterfactual_utilities(Mechanism::PayAsBid, &inst, &[0, 0, 0], 0).unwrap();
        assert_eq!(sweep[0], rat(0, 1));
        for v in 1..=800u32 {
            assert_eq!(sweep[v as usize], rat(i64::from(v), 10));
        }
    }

    #[test]
    fn counterfactual_crowded_out_agent_is_flat_zero() {
        let inst = MarketInstance::from_triples("pair", 3, &[(1, 1, 0), (1, 1, 0)]);
        let sweep = counterfactual_utilities(Mechanism::PayAsClear, &inst, &[0], 1).unwrap();
        assert!(sweep.iter().all(|u| u.is_zero()));
    }

    fn random_instance(
        supplies: &[(i64, i64)],
        costs: &[u32],
        max_bid: Bid,
    ) -> Option<MarketInstance> {
        let producers: Vec<crate::market::Producer> = supplies
            .iter()
            .zip(costs)
            .map(|(&(n, d), &c)| crate::market::Producer::new(rat(n.min(d), d), c.min(max_bid)))
            .collect();
        let inst = MarketInstance::new("prop", max_bid, producers);
        crate::market::validate_instance(&inst)
            .is_valid()
            .then_some(inst)
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn sweep_matches_naive_recomputation(
            supplies in proptest::collection::vec((1i64..=5, 1i64..=5), 2..=5),
            costs in proptest::collection::vec(0u32..=10, 5),
            opp_bids in proptest::collection::vec(0u32..=10, 5),
            i in 0usize..5,
        ) {
            let n = supplies.len();
            let inst = match random_instance(&supplies, &costs[..n], 10) {
                Some(inst) => inst,
                None => return Ok(()),
            };
            let i = i % n;
            let opponents: Vec<Bid> = opp_bids[..n - 1].to_vec();
            for mech in Mechanism::ALL {
                let sweep = counterfactual_utilities(mech, &inst, &opponents, i).unwrap();
                for v in 0..=inst.max_bid {
                    let bids = splice_profile(&opponents, i, v);
                    let direct = utility(mech, &inst, &bids, i).unwrap();
                    proptest::prop_assert_eq!(&sweep[v as usize], &direct, "mech {:?} v {}", mech, v);
                }
            }
        }

        #[test]
        fn sellers_are_individually_rational(
            supplies in proptest::collection::vec((1i64..=5, 1i64..=5), 2..=5),
            costs in proptest::collection::vec(0u32..=10, 5),
            bids in proptest::collection::vec(0u32..=10, 5),
        ) {
            let n = supplies.len();
            let inst = match random_instance(&supplies, &costs[..n], 10) {
                Some(inst) => inst,
                None => return Ok(()),
            };
            let bids = &bids[..n];
            for mech in Mechanism::ALL {
                let out = run_mechanism(mech, &inst, bids).unwrap();
                for j in 0..n {
                    if out.allocation[j].is_positive() {
                        proptest::prop_assert!(out.prices[j] >= rat_bid(bids[j]));
                    }
                }
            }
        }

        #[test]
        fn clear_price_identity_and_pb_bound(
            supplies in proptest::collection::vec((1i64..=5, 1i64..=5), 2..=5),
            costs in proptest::collection::vec(0u32..=10, 5),
            bids in proptest::collection::vec(0u32..=10, 5),
        ) {
            let n = supplies.len();
            let inst = match random_instance(&supplies, &costs[..n], 10) {
                Some(inst) => inst,
                None => return Ok(()),
            };
            let bids = &bids[..n];
            let pc = run_mechanism(Mechanism::PayAsClear, &inst, bids).unwrap();
            proptest::prop_assert_eq!(&pc.unit_price, &rat_bid(pc.clearing_price));
            let pb = run_mechanism(Mechanism::PayAsBid, &inst, bids).unwrap();
            proptest::prop_assert!(pb.unit_price <= pc.unit_price);
        }

        #[test]
        fn vcg_is_truthful_profile_level(
            supplies in proptest::collection::vec((1i64..=4, 1i64..=4), 2..=4),
            costs in proptest::collection::vec(0u32..=8, 4),
        ) {
            let n = supplies.len();
            let inst = match random_instance(&supplies, &costs[..n], 8) {
                Some(inst) => inst,
                None => return Ok(()),
            };
            let truthful = inst.truthful_profile();
            for i in 0..n {
                let honest = utility(Mechanism::Vcg, &inst, &truthful, i).unwrap();
                let sweep = counterfactual_utilities_in(Mechanism::Vcg, &inst, &truthful, i).unwrap();
                for v in 0..=inst.max_bid {
                    proptest::prop_assert!(
                        sweep[v as usize] <= honest,
                        "agent {} gains by bidding {} instead of {}",
                        i, v, truthful[i]
                    );
                }
            }
        }
    }

    #[test]
    fn unit_price_never_exceeds_ceiling() {
        // VCG externalities stay within the ceiling because the residual can
        // always be served at the ceiling instead.
        let inst = MarketInstance::from_triples("half", 10, &[(1, 2, 0), (1, 2, 0)]);
        let out = run_mechanism(Mechanism::Vcg, &inst, &[0, 0]).unwrap();
        assert_eq!(out.unit_price.to_f64().unwrap(), 10.0);
        assert!(out.unit_price <= rat(10, 1));
    }
}
