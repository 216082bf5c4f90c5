//! Timing rules: when a broadcast reaches each other processor, and (for
//! delay-faulty processors) when instructed broadcasts actually go out.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{Message, Timeslot};
use crate::setting::Regime;

pub trait TimingRule: Send {
    fn regime(&self) -> Regime;

    /// Slot at which `to` receives the batch `from` broadcast at `sent`.
    fn delivery(&mut self, from: usize, to: usize, batch: &[Message], sent: Timeslot) -> Timeslot;

    /// Slot at which delay-faulty processor `p` actually broadcasts what it
    /// was instructed to broadcast at `instructed`. `None` holds the batch
    /// back for the rest of the run.
    fn defer(&mut self, _p: usize, instructed: Timeslot) -> Option<Timeslot> {
        Some(instructed)
    }
}

/// Everything arrives at the next slot.
#[derive(Clone, Copy, Debug)]
pub struct MinimalDelay {
    pub regime: Regime,
}

impl TimingRule for MinimalDelay {
    fn regime(&self) -> Regime {
        self.regime
    }

    fn delivery(&mut self, _from: usize, _to: usize, _batch: &[Message], sent: Timeslot) -> Timeslot {
        sent + 1
    }
}

/// Everything arrives at the latest admissible slot.
#[derive(Clone, Copy, Debug)]
pub struct MaximalDelay {
    pub regime: Regime,
}

impl TimingRule for MaximalDelay {
    fn regime(&self) -> Regime {
        self.regime
    }

    fn delivery(&mut self, _from: usize, _to: usize, _batch: &[Message], sent: Timeslot) -> Timeslot {
        self.regime.deadline(sent)
    }
}

/// Independent uniform delays in the admissible window.
#[derive(Clone, Debug)]
pub struct RandomDelay {
    pub regime: Regime,
    rng: ChaCha8Rng,
}

impl RandomDelay {
    pub fn new(regime: Regime, seed: u64) -> Self {
        RandomDelay { regime, rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6e65_7477_6f72_6b00) }
    }
}

impl TimingRule for RandomDelay {
    fn regime(&self) -> Regime {
        self.regime
    }

    fn delivery(&mut self, _from: usize, _to: usize, _batch: &[Message], sent: Timeslot) -> Timeslot {
        self.rng.gen_range(sent + 1..=self.regime.deadline(sent))
    }
}

/// Messages between the two sides of a partition are held back as long as
/// the regime allows; messages within a side arrive at the next slot.
#[derive(Clone, Debug)]
pub struct Partition {
    pub regime: Regime,
    pub side: Vec<u8>,
}

impl TimingRule for Partition {
    fn regime(&self) -> Regime {
        self.regime
    }

    fn delivery(&mut self, from: usize, to: usize, _batch: &[Message], sent: Timeslot) -> Timeslot {
        if self.side.get(from) == self.side.get(to) {
            sent + 1
        } else {
            self.regime.deadline(sent)
        }
    }
}

/// Named timing rules for scenario files.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum TimingSpec {
    Minimal,
    Maximal,
    Random,
    Partition { side: Vec<u8> },
}

impl TimingSpec {
    pub fn build(&self, regime: Regime, seed: u64) -> Box<dyn TimingRule> {
        match self {
            TimingSpec::Minimal => Box::new(MinimalDelay { regime }),
            TimingSpec::Maximal => Box::new(MaximalDelay { regime }),
            TimingSpec::Random => Box::new(RandomDelay::new(regime, seed)),
            TimingSpec::Partition { side } => Box::new(Partition { regime, side: side.clone() }),
        }
    }
}

/// One defined value of a timing rule: `from` broadcast `message` at `sent`
/// and `to` received it at `received`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Delivery {
    pub from: usize,
    pub to: usize,
    pub message: Message,
    pub sent: Timeslot,
    pub received: Timeslot,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TimingError {
    #[error("{from}->{to}: broadcast at {sent}, delivered at {received}, window ends at {deadline}")]
    Window { from: usize, to: usize, sent: Timeslot, received: Timeslot, deadline: Timeslot },
    #[error("{to} received a message from {from} at {received} that was not broadcast at {sent}")]
    Unsent { from: usize, to: usize, sent: Timeslot, received: Timeslot },
    #[error("{0} received its own broadcast through the network")]
    SelfDelivery(usize),
}

/// Checks a finite restriction of a timing rule: every delivery lies in the
/// regime's window and matches a broadcast that actually happened.
pub fn validate_timing_rule(
    regime: Regime,
    deliveries: &[Delivery],
    broadcasts: &BTreeSet<(usize, Timeslot, Message)>,
) -> Result<(), TimingError> {
    for d in deliveries {
        if d.from == d.to {
            return Err(TimingError::SelfDelivery(d.to));
        }
        let deadline = regime.deadline(d.sent);
        if d.received <= d.sent || d.received > deadline {
            return Err(TimingError::Window {
                from: d.from,
                to: d.to,
                sent: d.sent,
                received: d.received,
                deadline,
            });
        }
        if !broadcasts.contains(&(d.from, d.sent, d.message.clone())) {
            return Err(TimingError::Unsent { from: d.from, to: d.to, sent: d.sent, received: d.received });
        }
    }
    Ok(())
}
