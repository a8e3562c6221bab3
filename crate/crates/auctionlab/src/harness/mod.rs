//! Instance files, the built-in instance registry, run manifests, and
//! trajectory serialization.
//!
//! Instance files are JSON with supplies as exact `[numerator, denominator]`
//! pairs; decimal shorthand (`0.3`) and fraction strings (`"3/10"`) are
//! accepted on input and converted exactly.

use crate::equilibrium::{BoundsReport, MixedProfile, NeReport};
use crate::learning::{SimConfig, Trajectory};
use crate::market::{
    rat, validate_instance, Bid, Error, MarketInstance, Producer, Rational,
};
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;
use thiserror::Error as ThisError;

#[derive(Debug, ThisError)]
pub enum HarnessError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse instance: {0}")]
    Parse(String),
    #[error("instance fails validation: {0}")]
    Validation(String),
    #[error("unknown instance `{0}`")]
    UnknownInstance(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl HarnessError {
    /// CLI exit code: 1 usage, 2 validation, 3 budget exceeded.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(Error::BudgetExceeded(_)) => 3,
            HarnessError::Parse(_) | HarnessError::Validation(_) => 2,
            HarnessError::UnknownInstance(_) => 1,
            HarnessError::Io(_) => 1,
            HarnessError::Core(_) => 2,
        }
    }
}

// ---------------------------------------------------------------------------
// Instance files

/// Parses an instance from JSON without validating market constraints.
pub fn parse_instance_json(text: &str) -> Result<MarketInstance, HarnessError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| HarnessError::Parse("top level must be an object".into()))?;
    let name = object
        .get("name")
        .and_then(|v| v.as_str())
        .unwrap_or("unnamed")
        .to_string();
    let max_bid = object
        .get("max_bid")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| HarnessError::Parse("missing integer `max_bid`".into()))?;
    let max_bid = Bid::try_from(max_bid)
        .map_err(|_| HarnessError::Parse("`max_bid` out of range".into()))?;
    let raw_producers = object
        .get("producers")
        .and_then(|v| v.as_array())
        .ok_or_else(|| HarnessError::Parse("missing array `producers`".into()))?;
    let mut producers = Vec::with_capacity(raw_producers.len());
    for (slot, entry) in raw_producers.iter().enumerate() {
        producers.push(
            parse_producer(entry)
                .map_err(|e| HarnessError::Parse(format!("producer {slot}: {e}")))?,
        );
    }
    Ok(MarketInstance::new(name, max_bid, producers))
}

fn parse_producer(entry: &serde_json::Value) -> Result<Producer, String> {
    match entry {
        serde_json::Value::Array(items) => match items.len() {
            3 => {
                let numer = integer_of(&items[0])?;
                let denom = integer_of(&items[1])?;
                if denom.is_zero() {
                    return Err("zero denominator".into());
                }
                let cost = cost_of(&items[2])?;
                Ok(Producer::new(Rational::new(numer, denom), cost))
            }
            2 => {
                let supply = supply_of(&items[0])?;
                let cost = cost_of(&items[1])?;
                Ok(Producer::new(supply, cost))
            }
            n => Err(format!("expected 2 or 3 entries, got {n}")),
        },
        serde_json::Value::Object(map) => {
            let supply = map
                .get("supply")
                .ok_or("missing `supply`")
                .and_then(|v| supply_of(v).map_err(|_| "bad `supply`"))
                .map_err(|e| e.to_string())?;
            let cost = map
                .get("cost")
                .ok_or_else(|| "missing `cost`".to_string())
                .and_then(|v| cost_of(v))?;
            Ok(Producer::new(supply, cost))
        }
        _ => Err("expected an array or object".into()),
    }
}

fn integer_of(value: &serde_json::Value) -> Result<BigInt, String> {
    let number = value.as_number().ok_or("expected an integer")?;
    let text = number.to_string();
    text.parse::<BigInt>()
        .map_err(|_| format!("`{text}` is not an integer"))
}

fn cost_of(value: &serde_json::Value) -> Result<Bid, String> {
    value
        .as_u64()
        .and_then(|c| Bid::try_from(c).ok())
        .ok_or_else(|| "cost must be a non-negative integer".into())
}

fn supply_of(value: &serde_json::Value) -> Result<Rational, String> {
    match value {
        serde_json::Value::Number(n) => decimal_to_rational(&n.to_string()),
        serde_json::Value::String(text) => {
            if let Some((numer, denom)) = text.split_once('/') {
                let numer: BigInt = numer.trim().parse().map_err(|_| "bad numerator")?;
                let denom: BigInt = denom.trim().parse().map_err(|_| "bad denominator")?;
                if denom.is_zero() {
                    return Err("zero denominator".into());
                }
                Ok(Rational::new(numer, denom))
            } else {
                decimal_to_rational(text.trim())
            }
        }
        serde_json::Value::Array(pair) if pair.len() == 2 => {
            let numer = integer_of(&pair[0])?;
            let denom = integer_of(&pair[1])?;
            if denom.is_zero() {
                return Err("zero denominator".into());
            }
            Ok(Rational::new(numer, denom))
        }
        _ => Err("supply must be a number, fraction string, or [numer, denom]".into()),
    }
}

/// Converts a decimal literal (optionally with an exponent) to an exact
/// rational, e.g. `0.3 -> 3/10`.
pub fn decimal_to_rational(text: &str) -> Result<Rational, String> {
    let bad = || format!("`{text}` is not a decimal number");
    let (mantissa, exponent) = match text.split_once(['e', 'E']) {
        Some((m, e)) => (m, e.parse::<i64>().map_err(|_| bad())?),
        None => (text, 0),
    };
    let (integral, fraction) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if fraction.contains(['+', '-']) {
        return Err(bad());
    }
    let digits = format!("{integral}{fraction}");
    if digits.is_empty() || digits == "-" || digits == "+" {
        return Err(bad());
    }
    let numer: BigInt = digits.parse().map_err(|_| bad())?;
    let shift = exponent - fraction.len() as i64;
    let ten = BigInt::from(10);
    let value = if shift >= 0 {
        Rational::from_integer(numer * ten.pow(shift as u32))
    } else {
        Rational::new(numer, ten.pow((-shift) as u32))
    };
    Ok(value)
}

/// Canonical JSON serialization: supplies as `[numerator, denominator]`
/// triples with the cost.
pub fn instance_to_json(inst: &MarketInstance) -> Result<String, HarnessError> {
    let producers: Vec<serde_json::Value> = inst
        .producers
        .iter()
        .map(|p| {
            let numer = p.supply.numer().to_i64().ok_or_else(|| {
                HarnessError::Parse("supply numerator too large to serialize".into())
            })?;
            let denom = p.supply.denom().to_i64().ok_or_else(|| {
                HarnessError::Parse("supply denominator too large to serialize".into())
            })?;
            Ok(serde_json::json!([numer, denom, p.cost]))
        })
        .collect::<Result<_, HarnessError>>()?;
    let value = serde_json::json!({
        "name": inst.name,
        "max_bid": inst.max_bid,
        "producers": producers,
    });
    Ok(format!("{:#}\n", value))
}

/// Loads and validates an instance file, reporting every violation at once.
pub fn load_instance(path: impl AsRef<Path>) -> Result<MarketInstance, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let inst = parse_instance_json(&text)?;
    let report = validate_instance(&inst);
    if !report.is_valid() {
        return Err(HarnessError::Validation(report.problems.join("; ")));
    }
    Ok(inst)
}

pub fn save_instance(inst: &MarketInstance, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    atomic_write(path, instance_to_json(inst)?.as_bytes())
}

/// Stable content hash of the canonical serialization.
pub fn instance_digest(inst: &MarketInstance) -> Result<String, HarnessError> {
    let canonical = instance_to_json(inst)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Writes through a temporary file in the target directory and renames, so
/// failed runs leave no partial outputs.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let mut file = match dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            tempfile::NamedTempFile::new_in(dir)?
        }
        None => tempfile::NamedTempFile::new_in(".")?,
    };
    file.write_all(bytes)?;
    file.persist(path).map_err(|e| HarnessError::Io(e.error))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Built-in instances

pub const BUILTIN_NAMES: [&str; 12] = [
    "example1", "sec31", "cor-pc", "cor-pb", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7",
    "fig8", "fig9",
];

/// Materializes a named instance from the registry. Parametric families are
/// spelled `vcg:K,D` and `bestpc:D`.
pub fn gen_builtin(name: &str) -> Result<MarketInstance, HarnessError> {
    if let Some(spec) = name.strip_prefix("vcg:") {
        let (k, delta) = spec
            .split_once(',')
            .ok_or_else(|| HarnessError::Parse(format!("expected vcg:K,D, got `{name}`")))?;
        let k: u32 = k
            .trim()
            .parse()
            .map_err(|_| HarnessError::Parse(format!("bad K in `{name}`")))?;
        let delta: u32 = delta
            .trim()
            .parse()
            .map_err(|_| HarnessError::Parse(format!("bad D in `{name}`")))?;
        return gen_vcg_family(k, delta);
    }
    if let Some(spec) = name.strip_prefix("bestpc:") {
        let delta: u32 = spec
            .trim()
            .parse()
            .map_err(|_| HarnessError::Parse(format!("bad D in `{name}`")))?;
        return gen_bestpc_family(delta);
    }
    let inst = match name {
        "example1" => MarketInstance::from_triples(
            "example1",
            4,
            &[(1, 3, 0), (1, 2, 1), (1, 4, 2), (2, 3, 3)],
        ),
        "sec31" => {
            MarketInstance::from_triples("sec31", 6, &[(3, 4, 0), (3, 4, 1), (1, 10, 4)])
        }
        "cor-pc" => MarketInstance::from_triples("cor-pc", 10, &[(1, 1, 0), (1, 1, 10)]),
        "cor-pb" => MarketInstance::from_triples("cor-pb", 5, &[(3, 4, 0), (3, 4, 0)]),
        // The family that makes the best uniform-price equilibrium beat the
        // best discriminatory one, at the scale used for the price plots.
        "fig2" | "fig6" => {
            let mut inst = gen_bestpc_family(300)?;
            inst.name = name.to_string();
            inst
        }
        "fig3" => MarketInstance::from_triples(
            "fig3",
            800,
            &[(3, 10, 0), (3, 10, 0), (3, 10, 0), (3, 10, 0)],
        ),
        "fig4" => MarketInstance::from_triples(
            "fig4",
            800,
            &[(2, 5, 0), (2, 5, 0), (2, 5, 0)],
        ),
        "fig5" => MarketInstance::from_triples(
            "fig5",
            800,
            &[(99, 100, 0), (99, 100, 0)],
        ),
        // Randomly drawn five-producer market; the fifth supply is read as
        // 0.26 units.
        "fig7" => MarketInstance::from_triples(
            "fig7",
            1000,
            &[
                (18, 25, 390),
                (3, 20, 280),
                (47, 100, 30),
                (24, 25, 510),
                (13, 50, 680),
            ],
        ),
        "fig8" => MarketInstance::from_triples(
            "fig8",
            10_000,
            &[
                (18, 25, 3900),
                (3, 20, 2800),
                (47, 100, 300),
                (24, 25, 5100),
                (13, 50, 6800),
            ],
        ),
        "fig9" => MarketInstance::from_triples(
            "fig9",
            1000,
            &[
                (1, 4, 0),
                (1, 4, 0),
                (1, 4, 0),
                (1, 4, 0),
                (11, 100, 600),
            ],
        ),
        other => return Err(HarnessError::UnknownInstance(other.to_string())),
    };
    Ok(inst)
}

/// Family of markets where truthful VCG spending grows like the harmonic
/// number of `k` while the uniform-price equilibrium stays bounded:
/// `2k-1` producers with ceiling `delta·k - 2`.
pub fn gen_vcg_family(k: u32, delta: u32) -> Result<MarketInstance, HarnessError> {
    if k < 2 {
        return Err(HarnessError::Parse(format!("vcg family needs k >= 2, got {k}")));
    }
    if delta <= 2 {
        return Err(HarnessError::Parse(format!(
            "vcg family needs delta > 2, got {delta}"
        )));
    }
    let max_bid_wide = u64::from(delta) * u64::from(k) - 2;
    let max_bid = Bid::try_from(max_bid_wide)
        .map_err(|_| HarnessError::Parse("vcg family ceiling overflows".into()))?;
    let k_i64 = i64::from(k);
    let delta_i64 = i64::from(delta);
    let mut producers = Vec::with_capacity(2 * k as usize - 1);
    for _ in 0..k {
        producers.push(Producer::new(rat(1, k_i64), 0));
    }
    producers.push(Producer::new(rat(1, 2 * k_i64), delta));
    for index in k + 2..=2 * k - 1 {
        let j = i64::from(index) - k_i64;
        producers.push(Producer::new(
            rat(1, k_i64 * j * (j + 1)),
            Bid::try_from(delta_i64 * j - 2).expect("below the ceiling"),
        ));
    }
    Ok(MarketInstance::new(
        format!("vcg-k{k}-d{delta}"),
        max_bid,
        producers,
    ))
}

/// Three-producer family whose best uniform-price equilibrium undercuts
/// every discriminatory equilibrium: ceiling `3·delta`, costs `(0, 0, delta)`.
pub fn gen_bestpc_family(delta: u32) -> Result<MarketInstance, HarnessError> {
    if delta < 1 {
        return Err(HarnessError::Parse("bestpc family needs delta >= 1".into()));
    }
    let max_bid = delta
        .checked_mul(3)
        .ok_or_else(|| HarnessError::Parse("bestpc family ceiling overflows".into()))?;
    Ok(MarketInstance::new(
        format!("bestpc-d{delta}"),
        max_bid,
        vec![
            Producer::new(rat(1, 2), 0),
            Producer::new(rat(3, 4), 0),
            Producer::new(rat(1, 4), delta),
        ],
    ))
}

/// Resolves a CLI instance argument: registry name first, then a file path.
pub fn resolve_instance(arg: &str) -> Result<MarketInstance, HarnessError> {
    match gen_builtin(arg) {
        Ok(inst) => Ok(inst),
        Err(HarnessError::UnknownInstance(_)) if Path::new(arg).exists() => load_instance(arg),
        Err(HarnessError::UnknownInstance(name)) => Err(HarnessError::UnknownInstance(format!(
            "{name} (not a registry name, and no such file)"
        ))),
        Err(other) => Err(other),
    }
}

// ---------------------------------------------------------------------------
// Run outputs

/// Everything needed to reproduce a simulation run byte-for-byte.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub instance_name: String,
    pub instance_digest: String,
    pub config: SimConfig,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(
        inst: &MarketInstance,
        config: &SimConfig,
        started_at: chrono::DateTime<chrono::Utc>,
        outputs: Vec<String>,
    ) -> Result<Self, HarnessError> {
        Ok(RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            instance_name: inst.name.clone(),
            instance_digest: instance_digest(inst)?,
            config: config.clone(),
            started_at: started_at.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            outputs,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| HarnessError::Parse(e.to_string()))?;
        atomic_write(path, format!("{text}\n").as_bytes())
    }
}

/// Plot-ready CSV of a trajectory.
pub fn trajectory_to_csv(trajectory: &Trajectory) -> String {
    let mut out = String::from("iteration,unit_price,normalized_unit_price,time_avg_unit_price\n");
    for snap in &trajectory.snapshots {
        out.push_str(&format!(
            "{},{},{},{}\n",
            snap.iteration, snap.unit_price, snap.normalized_unit_price, snap.time_avg_unit_price
        ));
    }
    out
}

pub fn write_trajectory_csv(
    trajectory: &Trajectory,
    path: impl AsRef<Path>,
) -> Result<(), HarnessError> {
    atomic_write(path, trajectory_to_csv(trajectory).as_bytes())
}

// ---------------------------------------------------------------------------
// JSON views of analysis results

pub fn rational_string(value: &Rational) -> String {
    if value.denom().is_one() {
        value.numer().to_string()
    } else {
        format!("{}/{}", value.numer(), value.denom())
    }
}

pub fn bounds_to_json(inst: &MarketInstance, report: &BoundsReport) -> serde_json::Value {
    serde_json::json!({
        "instance": inst.name,
        "producers": inst.len(),
        "max_bid": inst.max_bid,
        "b_high": report.b_high,
        "b_low": report.b_low,
        "eligible": report.eligible,
        "pc_floor": report.pc_floor,
        "pc_pure_price": report.pc_pure_price,
        "pb_interval": [report.pb_interval.0, report.pb_interval.1],
        "refined_pb_bound": report.refined_pb_bound.as_ref().map(rational_string),
    })
}

pub fn ne_report_to_json(report: &NeReport) -> serde_json::Value {
    serde_json::json!({
        "is_equilibrium": report.is_equilibrium,
        "epsilon": rational_string(&report.epsilon),
        "worst_deviator": report.worst_deviator.map(|(agent, bid)| {
            serde_json::json!({ "agent": agent, "bid": bid })
        }),
    })
}

pub fn mixed_profile_to_json(profile: &MixedProfile) -> serde_json::Value {
    let distributions: Vec<serde_json::Value> = profile
        .distributions
        .iter()
        .map(|dist| {
            serde_json::Value::Object(
                dist.iter()
                    .map(|(bid, p)| (bid.to_string(), serde_json::Value::String(rational_string(p))))
                    .collect(),
            )
        })
        .collect();
    serde_json::json!({ "distributions": distributions })
}

/// Parses a bid profile file: either a bare JSON array of bids or an object
/// with a `bids` array.
pub fn parse_profile_json(text: &str) -> Result<Vec<Bid>, HarnessError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    let array = value
        .as_array()
        .or_else(|| value.get("bids").and_then(|b| b.as_array()))
        .ok_or_else(|| HarnessError::Parse("expected a JSON array of bids".into()))?;
    array
        .iter()
        .map(|v| {
            v.as_u64()
                .and_then(|b| Bid::try_from(b).ok())
                .ok_or_else(|| HarnessError::Parse("bids must be non-negative integers".into()))
        })
        .collect()
}

/// Parses a mixed profile file: a JSON array (one object per agent) mapping
/// bids to weights, given as fractions or decimals.
pub fn parse_mixed_profile_json(text: &str) -> Result<MixedProfile, HarnessError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| HarnessError::Parse(e.to_string()))?;
    let agents = value
        .as_array()
        .or_else(|| value.get("distributions").and_then(|d| d.as_array()))
        .ok_or_else(|| HarnessError::Parse("expected an array of distributions".into()))?;
    let mut distributions = Vec::with_capacity(agents.len());
    for (slot, entry) in agents.iter().enumerate() {
        let map = entry.as_object().ok_or_else(|| {
            HarnessError::Parse(format!("agent {slot}: expected an object of bid weights"))
        })?;
        let mut dist = std::collections::BTreeMap::new();
        for (bid, weight) in map {
            let bid: Bid = bid
                .parse()
                .map_err(|_| HarnessError::Parse(format!("agent {slot}: bad bid `{bid}`")))?;
            let weight = supply_of(weight)
                .map_err(|e| HarnessError::Parse(format!("agent {slot} bid {bid}: {e}")))?;
            if weight.is_positive() {
                dist.insert(bid, weight);
            }
        }
        distributions.push(dist);
    }
    Ok(MixedProfile { distributions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::is_pure_ne;
    use crate::market::rat;
    use crate::mechanism::Mechanism;
    use num_traits::Zero;

    #[test]
    fn decimal_conversion_is_exact() {
        assert_eq!(decimal_to_rational("0.3").unwrap(), rat(3, 10));
        assert_eq!(decimal_to_rational("2.50").unwrap(), rat(5, 2));
        assert_eq!(decimal_to_rational("1e-2").unwrap(), rat(1, 100));
        assert_eq!(decimal_to_rational("-0.125").unwrap(), rat(-1, 8));
        assert_eq!(decimal_to_rational("26").unwrap(), rat(26, 1));
        assert!(decimal_to_rational("abc").is_err());
    }

    #[test]
    fn parses_supplies_in_every_accepted_form() {
        let text = r#"{
            "name": "forms",
            "max_bid": 10,
            "producers": [
                [1, 3, 0],
                [0.3, 1],
                ["1/2", 2],
                {"supply": [2, 3], "cost": 3}
            ]
        }"#;
        let inst = parse_instance_json(text).unwrap();
        assert_eq!(inst.producers[0].supply, rat(1, 3));
        assert_eq!(inst.producers[1].supply, rat(3, 10));
        assert_eq!(inst.producers[2].supply, rat(1, 2));
        assert_eq!(inst.producers[3].supply, rat(2, 3));
        assert_eq!(inst.producers[3].cost, 3);
    }

    #[test]
    fn round_trips_and_digests() {
        let dir = tempfile::tempdir().unwrap();
        let inst = gen_builtin("example1").unwrap();
        let path = dir.path().join("example1.json");
        save_instance(&inst, &path).unwrap();
        let loaded = load_instance(&path).unwrap();
        assert_eq!(inst, loaded);
        assert_eq!(
            loaded.producers.iter().map(|p| p.supply.clone()).collect::<Vec<_>>(),
            vec![rat(1, 3), rat(1, 2), rat(1, 4), rat(2, 3)]
        );

        assert_eq!(
            instance_digest(&inst).unwrap(),
            instance_digest(&loaded).unwrap()
        );
        let mut renamed = inst.clone();
        renamed.name = "other".into();
        assert_ne!(
            instance_digest(&inst).unwrap(),
            instance_digest(&renamed).unwrap()
        );
        let mut repriced = inst.clone();
        repriced.producers[0].cost = 1;
        assert_ne!(
            instance_digest(&inst).unwrap(),
            instance_digest(&repriced).unwrap()
        );
    }

    #[test]
    fn loading_rejects_uncoverable_demand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.json");
        std::fs::write(&path, r#"{"name":"short","max_bid":3,"producers":[[1,2,0]]}"#).unwrap();
        assert!(matches!(
            load_instance(&path),
            Err(HarnessError::Validation(_))
        ));
    }

    #[test]
    fn registry_matches_published_parameters() {
        let fig3 = gen_builtin("fig3").unwrap();
        assert_eq!(fig3.len(), 4);
        assert_eq!(fig3.max_bid, 800);
        assert!(fig3.producers.iter().all(|p| p.supply == rat(3, 10) && p.cost == 0));

        let cor_pb = gen_builtin("cor-pb").unwrap();
        assert_eq!(cor_pb.max_bid, 5);
        assert!(cor_pb.producers.iter().all(|p| p.supply == rat(3, 4) && p.cost == 0));

        let sec31 = gen_builtin("sec31").unwrap();
        assert_eq!(sec31.max_bid, 6);
        assert_eq!(
            sec31.producers.iter().map(|p| p.cost).collect::<Vec<_>>(),
            vec![0, 1, 4]
        );
        assert_eq!(sec31.producers[2].supply, rat(1, 10));

        for name in [
            "example1", "sec31", "cor-pc", "cor-pb", "fig2", "fig3", "fig4", "fig5", "fig6",
            "fig7", "fig8", "fig9",
        ] {
            let inst = gen_builtin(name).unwrap();
            assert!(
                validate_instance(&inst).is_valid(),
                "builtin {name} must validate"
            );
        }
        assert!(matches!(
            gen_builtin("fig99"),
            Err(HarnessError::UnknownInstance(_))
        ));
    }

    #[test]
    fn vcg_family_substitution() {
        let small = gen_vcg_family(2, 3).unwrap();
        assert_eq!(small.len(), 3);
        assert_eq!(small.max_bid, 4);
        assert_eq!(
            small.producers.iter().map(|p| p.supply.clone()).collect::<Vec<_>>(),
            vec![rat(1, 2), rat(1, 2), rat(1, 4)]
        );
        assert_eq!(
            small.producers.iter().map(|p| p.cost).collect::<Vec<_>>(),
            vec![0, 0, 3]
        );

        let mid = gen_vcg_family(3, 3).unwrap();
        assert_eq!(mid.len(), 5);
        assert_eq!(mid.max_bid, 7);
        assert_eq!(
            mid.producers.iter().map(|p| p.supply.clone()).collect::<Vec<_>>(),
            vec![rat(1, 3), rat(1, 3), rat(1, 3), rat(1, 6), rat(1, 18)]
        );
        assert_eq!(
            mid.producers.iter().map(|p| p.cost).collect::<Vec<_>>(),
            vec![0, 0, 0, 3, 4]
        );

        // Total supply is 1 + 1/k - 1/k² for every member.
        for k in 2..=8u32 {
            for delta in 3..=5u32 {
                let inst = gen_vcg_family(k, delta).unwrap();
                assert!(validate_instance(&inst).is_valid());
                let k_i64 = i64::from(k);
                assert_eq!(
                    inst.total_supply(),
                    rat(1, 1) + rat(1, k_i64) - rat(1, k_i64 * k_i64)
                );
            }
        }
        assert!(gen_vcg_family(1, 3).is_err());
        assert!(gen_vcg_family(2, 2).is_err());
    }

    #[test]
    fn bestpc_family_substitution() {
        let fig2 = gen_builtin("fig2").unwrap();
        assert_eq!(fig2.max_bid, 900);
        assert_eq!(
            fig2.producers.iter().map(|p| p.cost).collect::<Vec<_>>(),
            vec![0, 0, 300]
        );
        assert_eq!(
            fig2.producers.iter().map(|p| p.supply.clone()).collect::<Vec<_>>(),
            vec![rat(1, 2), rat(3, 4), rat(1, 4)]
        );

        let small = gen_bestpc_family(3).unwrap();
        assert_eq!(small.max_bid, 9);

        // The sandwich profile (delta, 0, delta) clears at delta and nobody
        // can improve on it under uniform pricing.
        for delta in 1..=6u32 {
            let inst = gen_bestpc_family(delta).unwrap();
            let profile = vec![delta, 0, delta];
            let report = is_pure_ne(Mechanism::PayAsClear, &inst, &profile).unwrap();
            assert!(report.is_equilibrium, "delta {delta}");
            assert!(report.epsilon.is_zero());
        }
    }

    #[test]
    fn manifest_and_trajectory_files() {
        let dir = tempfile::tempdir().unwrap();
        let inst = gen_builtin("cor-pb").unwrap();
        let mut config = SimConfig::new(Mechanism::PayAsBid, 30, 12);
        config.snapshot_every = 10;
        let trajectory = crate::learning::run_simulation(&inst, &config).unwrap();
        assert_eq!(trajectory.snapshots.len(), 3);

        let csv_path = dir.path().join("out").join("run.csv");
        write_trajectory_csv(&trajectory, &csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with(
            "iteration,unit_price,normalized_unit_price,time_avg_unit_price\n"
        ));
        assert_eq!(text.lines().count(), 4);

        let manifest =
            RunManifest::new(&inst, &config, chrono::Utc::now(), vec!["run.csv".into()])
                .unwrap();
        let manifest_path = dir.path().join("out").join("run.manifest.json");
        manifest.write(&manifest_path).unwrap();
        let body = std::fs::read_to_string(&manifest_path).unwrap();
        assert!(body.contains("instance_digest"));
        assert!(body.contains(&instance_digest(&inst).unwrap()));
    }

    #[test]
    fn profile_files_parse() {
        assert_eq!(parse_profile_json("[1, 2, 3]").unwrap(), vec![1, 2, 3]);
        assert_eq!(
            parse_profile_json(r#"{"bids": [0, 800]}"#).unwrap(),
            vec![0, 800]
        );
        let mixed =
            parse_mixed_profile_json(r#"[{"0": "1/2", "5": "1/2"}, {"3": 1}]"#).unwrap();
        assert_eq!(mixed.distributions[0][&0], rat(1, 2));
        assert_eq!(mixed.distributions[1][&3], rat(1, 1));
    }
}
