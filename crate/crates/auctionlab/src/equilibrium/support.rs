//! Support enumeration for the two-player game induced by a mechanism:
//! every pair of equal-size supports is tested by solving the indifference
//! conditions exactly, rejecting solutions with non-positive probabilities or
//! profitable off-support deviations.
//!
//! A floating-point pre-screen discards clearly infeasible support pairs
//! before any exact arithmetic; every surviving candidate is re-solved and
//! re-verified in rationals, so reported equilibria are exact.

use super::{is_mixed_ne, MixedProfile, DEFAULT_EXPECTATION_BUDGET};
use crate::market::{Bid, Error, MarketInstance, Rational};
use crate::mechanism::{counterfactual_utilities, Mechanism};
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::collections::{BTreeMap, BTreeSet};

/// Search limits for [`enumerate_mixed_ne_2p`].
#[derive(Debug, Clone)]
pub struct SupportEnumOptions {
    /// Largest support size considered per player; `None` allows the full
    /// bid space.
    pub max_support: Option<usize>,
    /// Cap on the number of support pairs examined.
    pub pair_budget: u64,
}

impl Default for SupportEnumOptions {
    fn default() -> Self {
        SupportEnumOptions {
            max_support: None,
            pair_budget: 5_000_000,
        }
    }
}

const SCREEN_SLACK: f64 = 1e-6;
const PIVOT_FLOOR: f64 = 1e-9;

/// Exhaustively enumerates mixed equilibria of a two-producer market over
/// equal-size support pairs. Every returned profile passes [`is_mixed_ne`]
/// at tolerance zero; the output is sorted and duplicate-free.
pub fn enumerate_mixed_ne_2p(
    mech: Mechanism,
    inst: &MarketInstance,
    options: &SupportEnumOptions,
) -> Result<Vec<MixedProfile>, Error> {
    inst.ensure_valid()?;
    if inst.len() != 2 {
        return Err(Error::Unsupported(format!(
            "support enumeration handles exactly 2 producers, got {}",
            inst.len()
        )));
    }
    let actions = inst.max_bid as usize + 1;
    let cap = options.max_support.unwrap_or(actions).min(actions);
    let mut pair_count = 0u128;
    for k in 1..=cap {
        let c = binomial(actions, k);
        pair_count = pair_count.saturating_add(c.saturating_mul(c));
    }
    if pair_count > u128::from(options.pair_budget) {
        return Err(Error::BudgetExceeded(format!(
            "{pair_count} support pairs exceed the budget {}",
            options.pair_budget
        )));
    }

    // Payoff matrices indexed [row bid][column bid].
    let mut a: Vec<Vec<Rational>> = vec![Vec::with_capacity(actions); actions];
    for v1 in 0..actions {
        let col = counterfactual_utilities(mech, inst, &[v1 as Bid], 0)?;
        for (v0, value) in col.into_iter().enumerate() {
            a[v0].push(value);
        }
    }
    let mut b: Vec<Vec<Rational>> = Vec::with_capacity(actions);
    for v0 in 0..actions {
        b.push(counterfactual_utilities(mech, inst, &[v0 as Bid], 1)?);
    }
    let to_f64 = |m: &[Vec<Rational>]| -> Vec<Vec<f64>> {
        m.iter()
            .map(|row| row.iter().map(|x| x.to_f64().unwrap()).collect())
            .collect()
    };
    let a_f64 = to_f64(&a);
    let b_f64 = to_f64(&b);

    let zero = Rational::zero();
    let mut found: BTreeSet<MixedProfile> = BTreeSet::new();
    for k in 1..=cap {
        let subsets = combinations(actions, k);
        for s1 in &subsets {
            for s2 in &subsets {
                let Some(profile) = try_support_pair(&a, &b, &a_f64, &b_f64, s1, s2) else {
                    continue;
                };
                let report =
                    is_mixed_ne(mech, inst, &profile, &zero, DEFAULT_EXPECTATION_BUDGET)?;
                if report.is_equilibrium {
                    found.insert(profile);
                }
            }
        }
    }
    Ok(found.into_iter().collect())
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut value = 1u128;
    for j in 0..k {
        value = value.saturating_mul((n - j) as u128) / (j as u128 + 1);
    }
    value
}

/// All size-`k` subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let mut slot = k;
        loop {
            if slot == 0 {
                return out;
            }
            slot -= 1;
            if current[slot] < n - (k - slot) {
                current[slot] += 1;
                for later in slot + 1..k {
                    current[later] = current[later - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Attempts one support pair: solves both indifference systems, first in
/// floating point as a screen, then exactly.
fn try_support_pair(
    a: &[Vec<Rational>],
    b: &[Vec<Rational>],
    a_f64: &[Vec<f64>],
    b_f64: &[Vec<f64>],
    s1: &[usize],
    s2: &[usize],
) -> Option<MixedProfile> {
    if matches!(screen_side(a_f64, s1, s2, false), Screen::Infeasible) {
        return None;
    }
    if matches!(screen_side(b_f64, s2, s1, true), Screen::Infeasible) {
        return None;
    }
    let y = solve_side_exact(a, s1, s2, false)?;
    let x = solve_side_exact(b, s2, s1, true)?;
    let dist = |support: &[usize], weights: Vec<Rational>| -> BTreeMap<Bid, Rational> {
        support
            .iter()
            .zip(weights)
            .map(|(&action, p)| (action as Bid, p))
            .collect()
    };
    Some(MixedProfile {
        distributions: vec![dist(s1, x), dist(s2, y)],
    })
}

enum Screen {
    Keep,
    Infeasible,
}

use Screen::Keep as ScreenKeep;

fn screen_side(payoff: &[Vec<f64>], own: &[usize], mix: &[usize], transpose: bool) -> Screen {
    let k = mix.len();
    let at = |r: usize, c: usize| -> f64 {
        if transpose {
            payoff[mix[c]][own[r]]
        } else {
            payoff[own[r]][mix[c]]
        }
    };
    let unknowns = k + 1;
    let mut system = Vec::with_capacity(own.len() + 1);
    for r in 0..own.len() {
        let mut row: Vec<f64> = (0..k).map(|c| at(r, c)).collect();
        row.push(-1.0);
        row.push(0.0);
        system.push(row);
    }
    let mut norm = vec![1.0; k];
    norm.push(0.0);
    norm.push(1.0);
    system.push(norm);

    let rows = system.len();
    let mut pivot_row = 0usize;
    for col in 0..unknowns {
        let best = (pivot_row..rows)
            .max_by(|&r1, &r2| system[r1][col].abs().total_cmp(&system[r2][col].abs()))
            .expect("at least one row remains");
        if system[best][col].abs() < PIVOT_FLOOR {
            // Too close to singular to judge; let the exact path decide.
            return ScreenKeep;
        }
        system.swap(pivot_row, best);
        let inv = 1.0 / system[pivot_row][col];
        for c in col..=unknowns {
            system[pivot_row][c] *= inv;
        }
        for r in 0..rows {
            if r != pivot_row && system[r][col] != 0.0 {
                let f = system[r][col];
                for c in col..=unknowns {
                    system[r][c] -= f * system[pivot_row][c];
                }
            }
        }
        pivot_row += 1;
    }
    for row in system.iter().skip(pivot_row) {
        if row[unknowns].abs() > SCREEN_SLACK {
            return Screen::Infeasible;
        }
    }
    let solution: Vec<f64> = (0..unknowns).map(|c| system[c][unknowns]).collect();
    let value = solution[k];
    if solution[..k].iter().any(|&w| w < -SCREEN_SLACK) {
        return Screen::Infeasible;
    }
    let mut own_mask = vec![false; payoff.len()];
    for &s in own {
        own_mask[s] = true;
    }
    for s in 0..payoff.len() {
        if own_mask[s] {
            continue;
        }
        let mut deviation = 0.0;
        for c in 0..k {
            let entry = if transpose {
                payoff[mix[c]][s]
            } else {
                payoff[s][mix[c]]
            };
            deviation += entry * solution[c];
        }
        if deviation > value + SCREEN_SLACK {
            return Screen::Infeasible;
        }
    }
    ScreenKeep
}

/// Exact solve of one side; returns the mixture over `mix` when it is the
/// unique solution, strictly positive, and optimal against every action
/// outside `own`.
fn solve_side_exact(
    payoff: &[Vec<Rational>],
    own: &[usize],
    mix: &[usize],
    transpose: bool,
) -> Option<Vec<Rational>> {
    let k = mix.len();
    let at = |r: usize, c: usize| -> Rational {
        if transpose {
            payoff[mix[c]][own[r]].clone()
        } else {
            payoff[own[r]][mix[c]].clone()
        }
    };
    let unknowns = k + 1;
    let mut system: Vec<Vec<Rational>> = Vec::with_capacity(own.len() + 1);
    for r in 0..own.len() {
        let mut row: Vec<Rational> = (0..k).map(|c| at(r, c)).collect();
        row.push(-Rational::one());
        row.push(Rational::zero());
        system.push(row);
    }
    let mut norm = vec![Rational::one(); k];
    norm.push(Rational::zero());
    norm.push(Rational::one());
    system.push(norm);

    let solution = solve_unique(system, unknowns)?;
    let value = &solution[k];
    if solution[..k].iter().any(|w| !w.is_positive()) {
        return None;
    }
    let own_set: BTreeSet<usize> = own.iter().copied().collect();
    for s in 0..payoff.len() {
        if own_set.contains(&s) {
            continue;
        }
        let mut deviation = Rational::zero();
        for c in 0..k {
            let entry = if transpose {
                &payoff[mix[c]][s]
            } else {
                &payoff[s][mix[c]]
            };
            deviation += entry * &solution[c];
        }
        if deviation > *value {
            return None;
        }
    }
    Some(solution[..k].to_vec())
}

/// Gauss-Jordan elimination; `Some` only when the system has exactly one
/// solution.
fn solve_unique(mut system: Vec<Vec<Rational>>, unknowns: usize) -> Option<Vec<Rational>> {
    let rows = system.len();
    let mut pivot_of = vec![usize::MAX; unknowns];
    let mut pivot_row = 0usize;
    for col in 0..unknowns {
        let found = (pivot_row..rows).find(|&r| !system[r][col].is_zero())?;
        system.swap(pivot_row, found);
        let inv = system[pivot_row][col].clone();
        for c in col..=unknowns {
            system[pivot_row][c] = &system[pivot_row][c] / &inv;
        }
        for r in 0..rows {
            if r != pivot_row && !system[r][col].is_zero() {
                let factor = system[r][col].clone();
                for c in col..=unknowns {
                    let delta = &system[pivot_row][c] * &factor;
                    system[r][c] -= delta;
                }
            }
        }
        pivot_of[col] = pivot_row;
        pivot_row += 1;
        if pivot_row == rows && col + 1 < unknowns {
            return None;
        }
    }
    for row in system.iter().skip(pivot_row) {
        if !row[unknowns].is_zero() {
            return None;
        }
    }
    Some(
        pivot_of
            .iter()
            .map(|&r| system[r][unknowns].clone())
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{bounds_summary, enumerate_pure_ne, expected_unit_price};
    use crate::market::rat;

    fn tight_pair(max_bid: Bid) -> MarketInstance {
        MarketInstance::from_triples("cor-pb", max_bid, &[(3, 4, 0), (3, 4, 0)])
    }

    #[test]
    fn finds_mixed_equilibrium_within_the_support_interval() {
        let inst = tight_pair(5);
        let found =
            enumerate_mixed_ne_2p(Mechanism::PayAsBid, &inst, &SupportEnumOptions::default())
                .unwrap();
        assert!(!found.is_empty());
        let report = bounds_summary(&inst).unwrap();
        assert_eq!(report.pb_interval, (1, 5));
        for profile in &found {
            for support in profile.supports() {
                for bid in support {
                    assert!((1..=5).contains(&bid), "support bid {bid} outside [1, 5]");
                }
            }
        }
    }

    #[test]
    fn point_masses_of_pure_equilibria_appear() {
        let inst = MarketInstance::from_triples("pair1", 1, &[(1, 1, 0), (1, 1, 0)]);
        let found =
            enumerate_mixed_ne_2p(Mechanism::PayAsClear, &inst, &SupportEnumOptions::default())
                .unwrap();
        for pure in enumerate_pure_ne(Mechanism::PayAsClear, &inst, 100).unwrap() {
            let point = MixedProfile::point_mass(&pure);
            assert!(found.contains(&point), "missing point mass {pure:?}");
        }
    }

    #[test]
    fn truthful_pure_equilibrium_appears_as_point_mass() {
        // Truthful bidding is a pure equilibrium here: the cheap producer
        // covers everything and the expensive one cannot undercut at a gain.
        let inst = MarketInstance::from_triples("calm", 4, &[(1, 1, 0), (1, 1, 4)]);
        assert!(
            crate::equilibrium::is_pure_ne(Mechanism::PayAsBid, &inst, &[0, 4])
                .unwrap()
                .is_equilibrium
        );
        let found =
            enumerate_mixed_ne_2p(Mechanism::PayAsBid, &inst, &SupportEnumOptions::default())
                .unwrap();
        assert!(found.contains(&MixedProfile::point_mass(&[0, 4])));
    }

    #[test]
    fn support_budget_is_enforced() {
        let inst = tight_pair(5);
        let options = SupportEnumOptions {
            max_support: None,
            pair_budget: 10,
        };
        assert!(matches!(
            enumerate_mixed_ne_2p(Mechanism::PayAsBid, &inst, &options),
            Err(Error::BudgetExceeded(_))
        ));
    }

    #[test]
    fn expected_price_of_found_equilibria_is_exact() {
        let inst = tight_pair(5);
        let found =
            enumerate_mixed_ne_2p(Mechanism::PayAsBid, &inst, &SupportEnumOptions::default())
                .unwrap();
        for profile in &found {
            let price =
                expected_unit_price(Mechanism::PayAsBid, &inst, profile, 1_000_000).unwrap();
            assert!(price >= rat(1, 1) && price <= rat(5, 1));
        }
    }
}
