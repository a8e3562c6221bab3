//! Market primitives: producers, instances, merit order, and the
//! cost-minimizing allocation of one unit of demand.
//!
//! Supplies and allocations are exact rationals. Bids and costs are integers
//! in `[0, max_bid]`. Ties in the merit order are broken by producer index,
//! lower index first.

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational number used for supplies, allocations, and prices.
pub type Rational = num_rational::BigRational;

/// Integer bid or cost in `[0, max_bid]`.
pub type Bid = u32;

/// Shorthand for constructing a rational from an integer pair.
pub fn rat(numer: i64, denom: i64) -> Rational {
    Rational::new(BigInt::from(numer), BigInt::from(denom))
}

pub(crate) fn rat_int(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

pub(crate) fn rat_bid(b: Bid) -> Rational {
    rat_int(i64::from(b))
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("agent index {index} out of range for {agents} agents")]
    IndexOutOfRange { index: usize, agents: usize },
    #[error("order relation requires two distinct agents, got index {0} twice")]
    EqualIndices(usize),
    #[error("profile has {got} bids but the instance has {want} producers")]
    ProfileLength { got: usize, want: usize },
    #[error("bid {bid} of agent {agent} exceeds the ceiling {max_bid}")]
    BidOutOfRange { agent: usize, bid: Bid, max_bid: Bid },
    #[error("instance cannot cover the unit demand: {0}")]
    Infeasible(String),
    #[error("search budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("malformed mixed profile: {0}")]
    MalformedProfile(String),
    #[error("{0}")]
    Unsupported(String),
    #[error("learning diverged: {0}")]
    NonFinite(String),
}

/// A producer offering up to `supply` units at integer marginal `cost`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Producer {
    pub supply: Rational,
    pub cost: Bid,
}

impl Producer {
    pub fn new(supply: Rational, cost: Bid) -> Self {
        Producer { supply, cost }
    }
}

/// A named market: a bid ceiling and an ordered list of producers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarketInstance {
    pub name: String,
    pub max_bid: Bid,
    pub producers: Vec<Producer>,
}

impl MarketInstance {
    pub fn new(name: impl Into<String>, max_bid: Bid, producers: Vec<Producer>) -> Self {
        MarketInstance {
            name: name.into(),
            max_bid,
            producers,
        }
    }

    /// Convenience constructor from `(supply_numer, supply_denom, cost)` triples.
    pub fn from_triples(name: impl Into<String>, max_bid: Bid, triples: &[(i64, i64, Bid)]) -> Self {
        let producers = triples
            .iter()
            .map(|&(n, d, c)| Producer::new(rat(n, d), c))
            .collect();
        Self::new(name, max_bid, producers)
    }

    pub fn len(&self) -> usize {
        self.producers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.producers.is_empty()
    }

    pub fn total_supply(&self) -> Rational {
        self.producers
            .iter()
            .fold(Rational::zero(), |acc, p| acc + &p.supply)
    }

    /// The profile where every producer bids its own marginal cost.
    pub fn truthful_profile(&self) -> Vec<Bid> {
        self.producers.iter().map(|p| p.cost).collect()
    }

    /// Errors unless the instance satisfies all structural constraints.
    pub fn ensure_valid(&self) -> Result<(), Error> {
        let report = validate_instance(self);
        if report.is_valid() {
            Ok(())
        } else {
            Err(Error::Infeasible(report.problems.join("; ")))
        }
    }

    /// Checks a bid profile against this instance (length and ceiling).
    pub fn check_profile(&self, bids: &[Bid]) -> Result<(), Error> {
        if bids.len() != self.len() {
            return Err(Error::ProfileLength {
                got: bids.len(),
                want: self.len(),
            });
        }
        for (agent, &bid) in bids.iter().enumerate() {
            if bid > self.max_bid {
                return Err(Error::BidOutOfRange {
                    agent,
                    bid,
                    max_bid: self.max_bid,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn check_agent(&self, i: usize) -> Result<(), Error> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                agents: self.len(),
            });
        }
        Ok(())
    }
}

/// Outcome of structural validation; collects every violation instead of
/// stopping at the first one.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub problems: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Checks supply ranges, cost ranges, and coverage of the unit demand.
pub fn validate_instance(inst: &MarketInstance) -> ValidationReport {
    let mut problems = Vec::new();
    if inst.is_empty() {
        problems.push("instance has no producers".to_string());
    }
    let one = Rational::one();
    for (i, p) in inst.producers.iter().enumerate() {
        if !p.supply.is_positive() || p.supply > one {
            problems.push(format!(
                "producer {} has supply {} outside (0, 1]",
                i, p.supply
            ));
        }
        if p.cost > inst.max_bid {
            problems.push(format!(
                "producer {} has cost {} above the bid ceiling {}",
                i, p.cost, inst.max_bid
            ));
        }
    }
    if !inst.is_empty() && inst.total_supply() < one {
        problems.push(format!(
            "total supply {} is below the unit demand",
            inst.total_supply()
        ));
    }
    ValidationReport { problems }
}

/// Merit-order precedence without bounds checks: agent `i` precedes agent `j`
/// iff `i` bids strictly less, or they tie and `i` has the lower index.
#[inline]
pub(crate) fn precedes_unchecked(bids: &[Bid], i: usize, j: usize) -> bool {
    (bids[i], i) < (bids[j], j)
}

/// Strict total order on agents induced by a bid profile.
pub fn precedes(bids: &[Bid], i: usize, j: usize) -> Result<bool, Error> {
    let n = bids.len();
    for &k in &[i, j] {
        if k >= n {
            return Err(Error::IndexOutOfRange {
                index: k,
                agents: n,
            });
        }
    }
    if i == j {
        return Err(Error::EqualIndices(i));
    }
    Ok(precedes_unchecked(bids, i, j))
}

/// Agent indices sorted into merit order (ascending bid, index tie-break).
pub fn merit_order(bids: &[Bid]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..bids.len()).collect();
    order.sort_by_key(|&i| (bids[i], i));
    order
}

/// The first agent in merit order whose cumulative supply covers the demand.
pub fn pivotal_agent(inst: &MarketInstance, bids: &[Bid]) -> Result<usize, Error> {
    inst.ensure_valid()?;
    inst.check_profile(bids)?;
    let one = Rational::one();
    let mut cumulative = Rational::zero();
    for i in merit_order(bids) {
        cumulative += &inst.producers[i].supply;
        if cumulative >= one {
            return Ok(i);
        }
    }
    unreachable!("validated instances cover the unit demand")
}

/// The bid of the pivotal agent.
pub fn clearing_price(inst: &MarketInstance, bids: &[Bid]) -> Result<Bid, Error> {
    Ok(bids[pivotal_agent(inst, bids)?])
}

/// Cost-minimizing allocation: agents preceding the pivot sell their full
/// supply, the pivot sells the residual, everyone after sells nothing.
pub fn allocate(inst: &MarketInstance, bids: &[Bid]) -> Result<Vec<Rational>, Error> {
    inst.ensure_valid()?;
    inst.check_profile(bids)?;
    let one = Rational::one();
    let mut amounts = vec![Rational::zero(); inst.len()];
    let mut remaining = one;
    for i in merit_order(bids) {
        if remaining.is_zero() {
            break;
        }
        let supply = &inst.producers[i].supply;
        let amount = if *supply < remaining {
            supply.clone()
        } else {
            remaining.clone()
        };
        remaining -= &amount;
        amounts[i] = amount;
    }
    Ok(amounts)
}

pub(crate) fn bid_to_u32(value: &Rational) -> Bid {
    value
        .to_integer()
        .to_u32()
        .expect("value fits the bid range")
}
