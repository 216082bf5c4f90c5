//! Setting flags: timed/untimed, sized/unsized, single/multi-permitter,
//! authenticated or not, and the network synchrony regime.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::Timeslot;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Timing {
    Timed,
    Untimed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sizing {
    Sized,
    Unsized { alpha0: f64, alpha1: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Permits {
    Single,
    Multi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Auth {
    Authenticated,
    Unauthenticated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Synchronous { delta: u64 },
    PartiallySynchronous { delta: u64, stabilisation: Timeslot },
}

impl Regime {
    pub fn delta(&self) -> u64 {
        match *self {
            Regime::Synchronous { delta } | Regime::PartiallySynchronous { delta, .. } => delta,
        }
    }

    /// Latest admissible delivery slot for a broadcast at `sent`.
    pub fn deadline(&self, sent: Timeslot) -> Timeslot {
        match *self {
            Regime::Synchronous { delta } => sent + delta,
            Regime::PartiallySynchronous { delta, stabilisation } => sent.max(stabilisation) + delta,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingFlags {
    pub timing: Timing,
    pub sizing: Sizing,
    pub permits: Permits,
    pub auth: Auth,
    pub network: Regime,
    /// Permissioned: every message is permitted and processors are counted
    /// rather than weighed.
    #[serde(default)]
    pub permissioned: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum SettingError {
    #[error("unsized setting needs 0 < alpha0 < alpha1, got [{0}, {1}]")]
    AlphaBounds(f64, f64),
    #[error("delta must be at least 1")]
    Delta,
}

impl SettingFlags {
    /// Untimed, unsized, single-permitter.
    pub fn pow(network: Regime, auth: Auth, alpha0: f64, alpha1: f64) -> Self {
        SettingFlags {
            timing: Timing::Untimed,
            sizing: Sizing::Unsized { alpha0, alpha1 },
            permits: Permits::Single,
            auth,
            network,
            permissioned: false,
        }
    }

    /// Timed, sized, multi-permitter, authenticated.
    pub fn pos(network: Regime) -> Self {
        SettingFlags {
            timing: Timing::Timed,
            sizing: Sizing::Sized,
            permits: Permits::Multi,
            auth: Auth::Authenticated,
            network,
            permissioned: false,
        }
    }

    pub fn permissioned(network: Regime, auth: Auth) -> Self {
        SettingFlags {
            timing: Timing::Untimed,
            sizing: Sizing::Sized,
            permits: Permits::Multi,
            auth,
            network,
            permissioned: true,
        }
    }

    pub fn validate(&self) -> Result<(), SettingError> {
        if let Sizing::Unsized { alpha0, alpha1 } = self.sizing {
            if !(alpha0 > 0.0 && alpha1 > alpha0) {
                return Err(SettingError::AlphaBounds(alpha0, alpha1));
            }
        }
        if self.network.delta() == 0 {
            return Err(SettingError::Delta);
        }
        Ok(())
    }

    pub fn is_authenticated(&self) -> bool {
        self.auth == Auth::Authenticated
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unsized_bounds_are_checked() {
        let bad = SettingFlags::pow(Regime::Synchronous { delta: 1 }, Auth::Unauthenticated, 0.0, 1.0);
        assert_eq!(bad.validate(), Err(SettingError::AlphaBounds(0.0, 1.0)));
        let ok = SettingFlags::pow(Regime::Synchronous { delta: 1 }, Auth::Unauthenticated, 0.5, 1.0);
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn partial_synchrony_deadline_waits_for_stabilisation() {
        let r = Regime::PartiallySynchronous { delta: 1, stabilisation: 10 };
        assert_eq!(r.deadline(4), 11);
        assert_eq!(r.deadline(12), 13);
    }
}
