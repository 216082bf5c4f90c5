//! Concrete protocols and the checks that apply to their traces.

pub mod chain;
pub mod echo_decide;
pub mod naive_majority;
pub mod pos_bb;

use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::message::{Identifier, Timeslot};
use crate::processor::{IdleProtocol, Protocol};
use crate::setting::Timing;
use crate::trace::{RoleTag, Trace};

pub use chain::{check_consistency_liveness, count_forks, ChainReport, ChainView, LcPos, Nakamoto, PrivateMining};
pub use echo_decide::EchoDecide;
pub use naive_majority::NaiveMajority;
pub use pos_bb::{check_dagger_lemmas, compute_k, pos_bb_round_time, BBConfig, PosBb};

/// Untimed: every non-faulty broadcast at `t` lies in the permission set
/// received at `t`. Timed: every non-faulty broadcast of `m` happens at `t_m`.
pub fn check_weak_decentralisation(trace: &Trace) -> bool {
    for t in 1..=trace.horizon {
        for p in trace.processors.iter().filter(|p| p.role == RoleTag::Honest) {
            let rec = trace.record(t, p.index);
            let ok = match trace.setting.timing {
                Timing::Untimed => rec.broadcast.iter().all(|m| rec.permissions.permits(m)),
                Timing::Timed => rec.broadcast.iter().all(|m| m.timestamp == Some(t)),
            };
            if !ok {
                return false;
            }
        }
    }
    true
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("unknown protocol {0:?}")]
    Unknown(String),
    #[error("bad parameters for {name}: {message}")]
    Params { name: String, message: String },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StakeEntry {
    id: u32,
    balance: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PosBbParams {
    delta: u64,
    q: f64,
    stake: Vec<StakeEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainParams {
    #[serde(default = "default_depth")]
    confirm_depth: u64,
    #[serde(default)]
    decide: Option<u64>,
}

fn default_depth() -> u64 {
    6
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MajorityParams {
    rounds: Timeslot,
    #[serde(default)]
    permissioned: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EchoParams {
    decide_at: Timeslot,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PrivateParams {
    #[serde(default = "default_give_up")]
    give_up: u64,
}

fn default_give_up() -> u64 {
    3
}

fn parse<T: for<'de> Deserialize<'de>>(name: &str, params: &serde_json::Value) -> Result<T, RegistryError> {
    let value = if params.is_null() { serde_json::json!({}) } else { params.clone() };
    serde_json::from_value(value).map_err(|e| RegistryError::Params { name: name.into(), message: e.to_string() })
}

/// The broadcast configuration named by `pos-bb` parameters.
pub fn pos_bb_config(params: &serde_json::Value) -> Result<BBConfig, RegistryError> {
    let name = "pos-bb";
    let p: PosBbParams = parse(name, params)?;
    let mut ustar = std::collections::BTreeMap::new();
    for e in p.stake {
        let id = Identifier::new(e.id)
            .ok_or_else(|| RegistryError::Params { name: name.into(), message: "reserved identifier".into() })?;
        ustar.insert(id, e.balance);
    }
    BBConfig::new(p.delta, p.q, ustar).map_err(|e| RegistryError::Params { name: name.into(), message: e.to_string() })
}

/// Looks a protocol up by its registered name.
pub fn protocol_by_name(name: &str, params: &serde_json::Value) -> Result<Arc<dyn Protocol>, RegistryError> {
    Ok(match name {
        "idle" => Arc::new(IdleProtocol),
        "pos-bb" => Arc::new(PosBb { config: pos_bb_config(params)? }),
        "nakamoto" => {
            let p: ChainParams = parse(name, params)?;
            Arc::new(Nakamoto { confirm_depth: p.confirm_depth, decide: p.decide })
        }
        "lc-pos" => {
            let p: ChainParams = parse(name, params)?;
            Arc::new(LcPos { decide: p.decide })
        }
        "naive-majority" => {
            let p: MajorityParams = parse(name, params)?;
            Arc::new(NaiveMajority { rounds: p.rounds, permissioned: p.permissioned })
        }
        "echo-decide" => {
            let p: EchoParams = parse(name, params)?;
            Arc::new(EchoDecide { decide_at: p.decide_at })
        }
        "private-mining" => {
            let p: PrivateParams = parse(name, params)?;
            Arc::new(PrivateMining { give_up: p.give_up })
        }
        other => return Err(RegistryError::Unknown(other.into())),
    })
}
