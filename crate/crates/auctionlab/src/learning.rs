//! Hedge (multiplicative weights) bidding dynamics over the integer bid
//! space, with full-information counterfactual gains against the sampled
//! opponents.
//!
//! This is the only module that uses floating point: weights live in log
//! space, gains are scaled into `[0, 1]` per agent, and per-agent RNG
//! substreams keep runs byte-identical regardless of worker count.

use crate::market::{Bid, Error, MarketInstance};
use crate::mechanism::Mechanism;
use num_traits::ToPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Per-agent log weights over the bid space.
#[derive(Debug, Clone)]
pub struct HedgeState {
    pub log_weights: Vec<Vec<f64>>,
    pub iteration: u64,
}

impl HedgeState {
    /// Normalized per-agent distributions derived from the log weights.
    pub fn probabilities(&self) -> Vec<Vec<f64>> {
        self.log_weights.iter().map(|lw| distribution(lw)).collect()
    }
}

fn distribution(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = log_weights.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = p.iter().sum();
    for value in &mut p {
        *value /= total;
    }
    p
}

/// How each agent's gain vector is computed per iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackMode {
    /// Gains against the opponents' sampled bids.
    Sampled,
    /// Gains in expectation over the opponents' current mixtures.
    ExactExpectation,
}

/// Configuration of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub mechanism: Mechanism,
    pub iterations: u64,
    pub seed: u64,
    /// `None` uses `sqrt(8·ln(M+1)/T)`.
    pub learning_rate: Option<f64>,
    pub snapshot_every: u64,
    pub feedback: FeedbackMode,
    /// Cap on the opponents' joint-support size in exact-expectation mode.
    pub expectation_budget: u64,
}

impl SimConfig {
    pub fn new(mechanism: Mechanism, iterations: u64, seed: u64) -> Self {
        SimConfig {
            mechanism,
            iterations,
            seed,
            learning_rate: None,
            snapshot_every: 1,
            feedback: FeedbackMode::Sampled,
            expectation_budget: 1_000_000,
        }
    }
}

/// One recorded point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub iteration: u64,
    pub unit_price: f64,
    pub normalized_unit_price: f64,
    pub time_avg_unit_price: f64,
}

/// Recorded prices plus the final mixed strategies of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub final_strategies: Vec<Vec<f64>>,
}

/// Trailing-window statistics of the normalized unit price.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub window: usize,
    pub trailing_mean: f64,
    pub trailing_min: f64,
    pub trailing_max: f64,
    pub time_avg_unit_price: f64,
}

/// The classical Hedge rate for a known horizon: `sqrt(8·ln(M+1)/T)`.
pub fn auto_learning_rate(max_bid: Bid, iterations: u64) -> f64 {
    (8.0 * f64::from(max_bid + 1).ln() / iterations as f64).sqrt()
}

/// Uniform distributions over `0..=max_bid` for every agent.
pub fn hedge_init(inst: &MarketInstance) -> HedgeState {
    HedgeState {
        log_weights: vec![vec![0.0; inst.max_bid as usize + 1]; inst.len()],
        iteration: 0,
    }
}

/// Floating-point mirror of the market used only by the dynamics.
struct FloatMarket {
    supplies: Vec<f64>,
    costs: Vec<f64>,
    max_bid: Bid,
}

impl FloatMarket {
    fn new(inst: &MarketInstance) -> Self {
        FloatMarket {
            supplies: inst
                .producers
                .iter()
                .map(|p| p.supply.to_f64().unwrap())
                .collect(),
            costs: inst.producers.iter().map(|p| f64::from(p.cost)).collect(),
            max_bid: inst.max_bid,
        }
    }

    fn len(&self) -> usize {
        self.supplies.len()
    }

    /// Sorted opponents of `i` with prefix supply and prefix supply·bid.
    fn opponent_view(&self, bids: &[Bid], i: usize) -> (Vec<(Bid, usize)>, Vec<f64>, Vec<f64>) {
        let mut sorted: Vec<(Bid, usize)> = (0..self.len())
            .filter(|&j| j != i)
            .map(|j| (bids[j], j))
            .collect();
        sorted.sort_unstable();
        let mut prefix_supply = Vec::with_capacity(sorted.len() + 1);
        let mut prefix_value = Vec::with_capacity(sorted.len() + 1);
        prefix_supply.push(0.0);
        prefix_value.push(0.0);
        for &(bid, j) in &sorted {
            prefix_supply.push(prefix_supply.last().unwrap() + self.supplies[j]);
            prefix_value.push(prefix_value.last().unwrap() + self.supplies[j] * f64::from(bid));
        }
        (sorted, prefix_supply, prefix_value)
    }

    fn cover_cost(
        prefix_supply: &[f64],
        prefix_value: &[f64],
        sorted: &[(Bid, usize)],
        demand: f64,
        ceiling: Bid,
    ) -> f64 {
        if demand <= 0.0 {
            return 0.0;
        }
        let total = *prefix_supply.last().unwrap();
        if total < demand {
            return prefix_value.last().unwrap() + f64::from(ceiling) * (demand - total);
        }
        let mut t = 0;
        while prefix_supply[t + 1] < demand {
            t += 1;
        }
        prefix_value[t] + f64::from(sorted[t].0) * (demand - prefix_supply[t])
    }

    /// Raw utility of agent `i` for every own bid against fixed opponents.
    fn utility_sweep(&self, mech: Mechanism, bids: &[Bid], i: usize, out: &mut [f64]) {
        let (sorted, prefix_supply, prefix_value) = self.opponent_view(bids, i);
        let own_supply = self.supplies[i];
        let own_cost = self.costs[i];
        let need = 1.0 - own_supply;
        let opponents_pivot = if need > 0.0 && *prefix_supply.last().unwrap() >= need {
            let mut t = 0;
            while prefix_supply[t + 1] < need {
                t += 1;
            }
            Some(t)
        } else {
            None
        };
        let absent_cost = match mech {
            Mechanism::Vcg => {
                Self::cover_cost(&prefix_supply, &prefix_value, &sorted, 1.0, self.max_bid)
            }
            _ => 0.0,
        };

        let mut pos = 0usize;
        let mut fill = 0usize;
        for v in 0..=self.max_bid {
            while pos < sorted.len() {
                let (bid, idx) = sorted[pos];
                if bid < v || (bid == v && idx < i) {
                    pos += 1;
                } else {
                    break;
                }
            }
            let avail = 1.0 - prefix_supply[pos];
            if avail <= 0.0 {
                out[v as usize] = 0.0;
                continue;
            }
            let sold = avail.min(own_supply);
            out[v as usize] = match mech {
                Mechanism::PayAsBid => (f64::from(v) - own_cost) * sold,
                Mechanism::PayAsClear => {
                    let price = if avail <= own_supply {
                        f64::from(v)
                    } else {
                        f64::from(sorted[opponents_pivot.expect("demand is covered")].0)
                    };
                    (price - own_cost) * sold
                }
                Mechanism::Vcg => {
                    let residual = 1.0 - sold;
                    let others_cost = if residual > 0.0 {
                        while prefix_supply[fill + 1] < residual {
                            fill += 1;
                        }
                        prefix_value[fill]
                            + f64::from(sorted[fill].0) * (residual - prefix_supply[fill])
                    } else {
                        0.0
                    };
                    (absent_cost - others_cost) - own_cost * sold
                }
            };
        }
    }

    fn unit_price(&self, mech: Mechanism, bids: &[Bid]) -> f64 {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_unstable_by_key(|&j| (bids[j], j));
        let mut allocation = vec![0.0; self.len()];
        let mut remaining = 1.0_f64;
        let mut clearing = 0.0_f64;
        for &j in &order {
            if remaining <= 0.0 {
                break;
            }
            let sold = remaining.min(self.supplies[j]);
            allocation[j] = sold;
            remaining -= sold;
            clearing = f64::from(bids[j]);
        }
        match mech {
            Mechanism::PayAsBid => (0..self.len())
                .map(|j| allocation[j] * f64::from(bids[j]))
                .sum(),
            Mechanism::PayAsClear => clearing,
            Mechanism::Vcg => {
                let mut total = 0.0;
                for j in 0..self.len() {
                    if allocation[j] <= 0.0 {
                        continue;
                    }
                    let (sorted, ps, pv) = self.opponent_view(bids, j);
                    let absent = Self::cover_cost(&ps, &pv, &sorted, 1.0, self.max_bid);
                    let present: f64 = (0..self.len())
                        .filter(|&l| l != j)
                        .map(|l| allocation[l] * f64::from(bids[l]))
                        .sum();
                    total += absent - present;
                }
                total
            }
        }
    }
}

/// Per-agent affine rescaling of raw utilities into `[0, 1]`:
/// `(U + cᵢ·sᵢ) / (sᵢ·(M + cᵢ))`. For zero-cost agents this is exactly
/// `U / (sᵢ·M)`; the shift never changes Hedge's induced distributions.
fn gain_scale(market: &FloatMarket, i: usize) -> (f64, f64) {
    let shift = market.costs[i] * market.supplies[i];
    let denom = market.supplies[i] * (f64::from(market.max_bid) + market.costs[i]);
    (shift, denom)
}

struct HedgeRunner {
    market: FloatMarket,
    mechanism: Mechanism,
    eta: f64,
    feedback: FeedbackMode,
    rngs: Vec<ChaCha12Rng>,
    state: HedgeState,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl HedgeRunner {
    fn new(inst: &MarketInstance, config: &SimConfig, eta: f64) -> Self {
        let rngs = (0..inst.len())
            .map(|agent| {
                ChaCha12Rng::seed_from_u64(splitmix64(
                    config.seed ^ splitmix64(agent as u64 + 1),
                ))
            })
            .collect();
        HedgeRunner {
            market: FloatMarket::new(inst),
            mechanism: config.mechanism,
            eta,
            feedback: config.feedback,
            rngs,
            state: hedge_init(inst),
        }
    }

    fn sample_bids(&mut self) -> Vec<Bid> {
        let log_weights = &self.state.log_weights;
        self.rngs
            .par_iter_mut()
            .zip(log_weights.par_iter())
            .map(|(rng, lw)| {
                let p = distribution(lw);
                let draw: f64 = rng.random();
                let mut acc = 0.0;
                for (v, &mass) in p.iter().enumerate() {
                    acc += mass;
                    if draw < acc {
                        return v as Bid;
                    }
                }
                (p.len() - 1) as Bid
            })
            .collect()
    }

    /// One iteration: sample a profile, record its price, update weights
    /// from the scaled counterfactual gain vectors.
    fn step(&mut self) -> Result<(Vec<Bid>, f64), Error> {
        let bids = self.sample_bids();
        let price = self.market.unit_price(self.mechanism, &bids);
        let probabilities = match self.feedback {
            FeedbackMode::Sampled => Vec::new(),
            FeedbackMode::ExactExpectation => self.state.probabilities(),
        };

        let market = &self.market;
        let mechanism = self.mechanism;
        let eta = self.eta;
        let feedback = self.feedback;
        let bad = self
            .state
            .log_weights
            .par_iter_mut()
            .enumerate()
            .map(|(i, lw)| {
                let (shift, denom) = gain_scale(market, i);
                let mut gains = vec![0.0; market.max_bid as usize + 1];
                match feedback {
                    FeedbackMode::Sampled => {
                        market.utility_sweep(mechanism, &bids, i, &mut gains);
                    }
                    FeedbackMode::ExactExpectation => {
                        expected_sweep(market, mechanism, &probabilities, &bids, i, &mut gains);
                    }
                }
                let mut max = f64::NEG_INFINITY;
                for (w, g) in lw.iter_mut().zip(&gains) {
                    *w += eta * (g + shift) / denom;
                    if *w > max {
                        max = *w;
                    }
                }
                let mut finite = max.is_finite();
                for w in lw.iter_mut() {
                    *w -= max;
                    finite &= w.is_finite();
                }
                !finite
            })
            .reduce(|| false, |x, y| x || y);
        if bad {
            return Err(Error::NonFinite(format!(
                "non-finite weight at iteration {}",
                self.state.iteration + 1
            )));
        }
        self.state.iteration += 1;
        Ok((bids, price))
    }
}

/// Expected raw-utility sweep over the opponents' full joint distribution.
fn expected_sweep(
    market: &FloatMarket,
    mechanism: Mechanism,
    probabilities: &[Vec<f64>],
    template: &[Bid],
    i: usize,
    out: &mut [f64],
) {
    let opponents: Vec<usize> = (0..market.len()).filter(|&j| j != i).collect();
    let mut combo: Vec<Bid> = template.to_vec();
    let mut cursor = vec![0usize; opponents.len()];
    let mut sweep = vec![0.0; out.len()];
    loop {
        let mut weight = 1.0;
        for (slot, &j) in opponents.iter().enumerate() {
            combo[j] = cursor[slot] as Bid;
            weight *= probabilities[j][cursor[slot]];
        }
        if weight > 0.0 {
            market.utility_sweep(mechanism, &combo, i, &mut sweep);
            for (acc, value) in out.iter_mut().zip(&sweep) {
                *acc += weight * value;
            }
        }
        let mut slot = opponents.len();
        loop {
            if slot == 0 {
                return;
            }
            slot -= 1;
            cursor[slot] += 1;
            if cursor[slot] <= market.max_bid as usize {
                break;
            }
            cursor[slot] = 0;
        }
    }
}

/// Runs Hedge for the configured horizon. Identical configurations produce
/// identical trajectories, independent of the rayon worker count.
pub fn run_simulation(inst: &MarketInstance, config: &SimConfig) -> Result<Trajectory, Error> {
    inst.ensure_valid()?;
    if config.iterations == 0 {
        return Err(Error::Unsupported("iterations must be positive".into()));
    }
    if config.snapshot_every == 0 {
        return Err(Error::Unsupported("snapshot interval must be positive".into()));
    }
    if config.feedback == FeedbackMode::ExactExpectation {
        let per_agent = (u128::from(inst.max_bid) + 1).pow(inst.len() as u32 - 1);
        if per_agent > u128::from(config.expectation_budget) {
            return Err(Error::BudgetExceeded(format!(
                "exact expectation needs {per_agent} opponent profiles per agent, budget {}",
                config.expectation_budget
            )));
        }
    }
    let eta = config
        .learning_rate
        .unwrap_or_else(|| auto_learning_rate(inst.max_bid, config.iterations));
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::Unsupported(format!("invalid learning rate {eta}")));
    }

    let mut runner = HedgeRunner::new(inst, config, eta);
    let m = f64::from(inst.max_bid);
    let mut snapshots = Vec::new();
    let mut price_sum = 0.0;
    for t in 1..=config.iterations {
        let (_bids, price) = runner.step()?;
        price_sum += price;
        if t % config.snapshot_every == 0 || t == config.iterations {
            snapshots.push(Snapshot {
                iteration: t,
                unit_price: price,
                normalized_unit_price: price / m,
                time_avg_unit_price: price_sum / t as f64,
            });
        }
    }
    Ok(Trajectory {
        snapshots,
        final_strategies: runner.state.probabilities(),
    })
}

/// Trailing-window statistics over the recorded normalized prices.
pub fn summarize(trajectory: &Trajectory, window: usize) -> Result<RunSummary, Error> {
    let len = trajectory.snapshots.len();
    if window == 0 || window > len {
        return Err(Error::Unsupported(format!(
            "window {window} outside the recorded length {len}"
        )));
    }
    let tail = &trajectory.snapshots[len - window..];
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for snap in tail {
        min = min.min(snap.normalized_unit_price);
        max = max.max(snap.normalized_unit_price);
        sum += snap.normalized_unit_price;
    }
    Ok(RunSummary {
        window,
        trailing_mean: sum / window as f64,
        trailing_min: min,
        trailing_max: max,
        time_avg_unit_price: trajectory.snapshots[len - 1].time_avg_unit_price,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::MarketInstance;
    use crate::mechanism::counterfactual_utilities;

    fn fig3() -> MarketInstance {
        MarketInstance::from_triples(
            "fig3",
            800,
            &[(3, 10, 0), (3, 10, 0), (3, 10, 0), (3, 10, 0)],
        )
    }

    #[test]
    fn init_is_uniform() {
        let state = hedge_init(&fig3());
        for p in state.probabilities() {
            assert_eq!(p.len(), 801);
            for &mass in &p {
                assert!((mass - 1.0 / 801.0).abs() < 1e-15);
            }
        }

        let tiny = MarketInstance::from_triples("tiny", 1, &[(1, 1, 0), (1, 1, 0)]);
        for p in hedge_init(&tiny).probabilities() {
            assert_eq!(p, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn zero_learning_rate_freezes_distributions() {
        let inst = fig3();
        let mut config = SimConfig::new(Mechanism::PayAsBid, 25, 3);
        config.learning_rate = Some(0.0);
        let traj = run_simulation(&inst, &config).unwrap();
        for p in traj.final_strategies {
            for mass in p {
                assert!((mass - 1.0 / 801.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_gain_shift_leaves_distribution_unchanged() {
        let mut lw = vec![0.25, -0.5, 1.0];
        let before = distribution(&lw);
        for w in lw.iter_mut() {
            *w += 0.7; // same gain everywhere
        }
        let after = distribution(&lw);
        for (x, y) in before.iter().zip(&after) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_two_bid_update() {
        // Gains (1, 0) at rate ln 2 from uniform tilt the weights to 2:1.
        let eta = std::f64::consts::LN_2;
        let lw = [eta * 1.0, eta * 0.0];
        let p = distribution(&lw);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn runs_are_deterministic_for_a_seed() {
        let inst = fig3();
        let mut config = SimConfig::new(Mechanism::PayAsBid, 40, 9);
        config.snapshot_every = 5;
        let one = run_simulation(&inst, &config).unwrap();
        let two = run_simulation(&inst, &config).unwrap();
        assert_eq!(one.snapshots, two.snapshots);
        assert_eq!(one.final_strategies, two.final_strategies);

        let mut other = config.clone();
        other.seed = 10;
        let three = run_simulation(&inst, &other).unwrap();
        assert_ne!(one.snapshots, three.snapshots);
    }

    #[test]
    fn probabilities_stay_normalized_and_gains_stay_in_unit_interval() {
        let inst = MarketInstance::from_triples(
            "mixed-costs",
            12,
            &[(1, 2, 3), (3, 4, 0), (1, 4, 7)],
        );
        let config = SimConfig::new(Mechanism::PayAsClear, 60, 4);
        let mut runner = HedgeRunner::new(&inst, &config, 0.3);
        let market = FloatMarket::new(&inst);
        let mut gains = vec![0.0; 13];
        for _ in 0..60 {
            let (bids, _) = runner.step().unwrap();
            for p in runner.state.probabilities() {
                let total: f64 = p.iter().sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
            for i in 0..inst.len() {
                market.utility_sweep(Mechanism::PayAsClear, &bids, i, &mut gains);
                let (shift, denom) = gain_scale(&market, i);
                for &g in &gains {
                    let scaled = (g + shift) / denom;
                    assert!((-1e-12..=1.0 + 1e-12).contains(&scaled), "gain {scaled}");
                }
            }
        }
    }

    #[test]
    fn float_sweep_matches_exact_sweep_on_dyadic_supplies() {
        // Dyadic supplies make every prefix sum exact in f64, so the float
        // path must agree with the rational path to rounding.
        let inst = MarketInstance::from_triples(
            "dyadic",
            9,
            &[(1, 2, 4), (3, 8, 0), (1, 4, 9), (5, 8, 2)],
        );
        let market = FloatMarket::new(&inst);
        let mut buffer = vec![0.0; 10];
        for mech in Mechanism::ALL {
            for i in 0..inst.len() {
                let opponents: Vec<Bid> = (0..inst.len())
                    .filter(|&j| j != i)
                    .map(|j| inst.producers[j].cost)
                    .collect();
                let bids = crate::mechanism::splice_profile(&opponents, i, 0);
                market.utility_sweep(mech, &bids, i, &mut buffer);
                let exact = counterfactual_utilities(mech, &inst, &opponents, i).unwrap();
                for v in 0..buffer.len() {
                    let reference = exact[v].to_f64().unwrap();
                    assert!(
                        (buffer[v] - reference).abs() <= 1e-12 * (1.0 + reference.abs()),
                        "mech {mech:?} agent {i} bid {v}: {} vs {reference}",
                        buffer[v]
                    );
                }
            }
        }
    }

    #[test]
    fn empirical_regret_obeys_the_hedge_bound() {
        let inst = MarketInstance::from_triples("duo", 10, &[(3, 4, 0), (3, 4, 2)]);
        let horizon = 2000u64;
        let eta = auto_learning_rate(inst.max_bid, horizon);
        let market = FloatMarket::new(&inst);
        for seed in [1u64, 2, 3] {
            let config = SimConfig::new(Mechanism::PayAsBid, horizon, seed);
            let mut runner = HedgeRunner::new(&inst, &config, eta);
            let n = inst.len();
            let mut cumulative = vec![vec![0.0; 11]; n];
            let mut realized = vec![0.0; n];
            let mut sweep = vec![0.0; 11];
            for _ in 0..horizon {
                let (bids, _) = runner.step().unwrap();
                for i in 0..n {
                    market.utility_sweep(Mechanism::PayAsBid, &bids, i, &mut sweep);
                    realized[i] += sweep[bids[i] as usize];
                    for (acc, value) in cumulative[i].iter_mut().zip(&sweep) {
                        *acc += value;
                    }
                }
            }
            for i in 0..n {
                let best = cumulative[i].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let regret = best - realized[i];
                let scale = market.supplies[i] * f64::from(inst.max_bid);
                let bound = 2.0 * ((horizon as f64) * f64::from(inst.max_bid + 1).ln()).sqrt()
                    * scale;
                assert!(
                    regret <= bound,
                    "seed {seed} agent {i}: regret {regret} above {bound}"
                );
            }
        }
    }

    #[test]
    fn sampled_updates_match_exact_expectation_on_average() {
        // Freeze a state, then compare the average sampled gain vector with
        // the exact expectation within three standard errors.
        let inst = MarketInstance::from_triples("tiny", 3, &[(3, 4, 0), (3, 4, 1)]);
        let market = FloatMarket::new(&inst);
        let config = SimConfig::new(Mechanism::PayAsBid, 5, 77);
        let mut warm = HedgeRunner::new(&inst, &config, 0.4);
        for _ in 0..5 {
            warm.step().unwrap();
        }
        let probabilities = warm.state.probabilities();

        let i = 0usize;
        let mut exact = vec![0.0; 4];
        expected_sweep(&market, Mechanism::PayAsBid, &probabilities, &[0, 0], i, &mut exact);

        let samples = 10_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let mut mean = vec![0.0; 4];
        let mut sq = vec![0.0; 4];
        let mut sweep = vec![0.0; 4];
        for _ in 0..samples {
            let draw: f64 = rng.random();
            let mut acc = 0.0;
            let mut opp = 3 as Bid;
            for (v, &mass) in probabilities[1].iter().enumerate() {
                acc += mass;
                if draw < acc {
                    opp = v as Bid;
                    break;
                }
            }
            market.utility_sweep(Mechanism::PayAsBid, &[0, opp], i, &mut sweep);
            for v in 0..4 {
                mean[v] += sweep[v];
                sq[v] += sweep[v] * sweep[v];
            }
        }
        for v in 0..4 {
            mean[v] /= samples as f64;
            let variance = (sq[v] / samples as f64 - mean[v] * mean[v]).max(0.0);
            let stderr = (variance / samples as f64).sqrt();
            assert!(
                (mean[v] - exact[v]).abs() <= 3.0 * stderr + 1e-12,
                "bid {v}: sampled {} exact {} stderr {stderr}",
                mean[v],
                exact[v]
            );
        }
    }

    #[test]
    fn exact_expectation_budget_is_enforced() {
        let inst = fig3();
        let mut config = SimConfig::new(Mechanism::PayAsBid, 5, 1);
        config.feedback = FeedbackMode::ExactExpectation;
        config.expectation_budget = 1000;
        assert!(matches!(
            run_simulation(&inst, &config),
            Err(crate::market::Error::BudgetExceeded(_))
        ));
    }

    #[test]
    fn summarize_windows() {
        let constant = Trajectory {
            snapshots: (1..=10)
                .map(|t| Snapshot {
                    iteration: t,
                    unit_price: 4.0,
                    normalized_unit_price: 0.5,
                    time_avg_unit_price: 4.0,
                })
                .collect(),
            final_strategies: vec![],
        };
        let summary = summarize(&constant, 4).unwrap();
        assert_eq!(summary.trailing_mean, 0.5);
        assert_eq!(summary.trailing_min, 0.5);
        assert_eq!(summary.trailing_max, 0.5);

        let full = summarize(&constant, 10).unwrap();
        assert_eq!(full.trailing_mean, 0.5);
        assert_eq!(full.time_avg_unit_price, 4.0);

        assert!(summarize(&constant, 0).is_err());
        assert!(summarize(&constant, 11).is_err());
    }

    #[test]
    fn sampled_price_equals_exact_price_for_dyadic_supplies() {
        let inst = MarketInstance::from_triples("dyadic", 6, &[(1, 2, 1), (3, 4, 0), (1, 4, 5)]);
        let market = FloatMarket::new(&inst);
        for bids in [[1, 0, 5], [3, 3, 3], [0, 6, 2], [6, 6, 6]] {
            for mech in Mechanism::ALL {
                let exact = crate::mechanism::run_mechanism(mech, &inst, &bids)
                    .unwrap()
                    .unit_price
                    .to_f64()
                    .unwrap();
                let float = market.unit_price(mech, &bids);
                assert!(
                    (float - exact).abs() <= 1e-12 * (1.0 + exact.abs()),
                    "mech {mech:?} bids {bids:?}: {float} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn normalized_prices_stay_in_the_unit_interval() {
        let inst = fig3();
        let mut config = SimConfig::new(Mechanism::PayAsClear, 200, 5);
        config.snapshot_every = 1;
        let traj = run_simulation(&inst, &config).unwrap();
        assert_eq!(traj.snapshots.len(), 200);
        for snap in &traj.snapshots {
            assert!((0.0..=1.0).contains(&snap.normalized_unit_price));
        }
    }
}
