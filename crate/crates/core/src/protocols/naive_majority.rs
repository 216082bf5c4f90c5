//! Echo the general's value once, then output the majority of the distinct
//! signed echoes seen plus one's own input. Ties go to 0.

use std::collections::BTreeSet;

use crate::message::{sign, Bit, Identifier, Message, Timeslot};
use crate::permission::Request;
use crate::processor::{input_values, Processor, Protocol, SpawnContext, StepInput, StepOutput};

#[derive(Clone, Debug)]
pub struct NaiveMajority {
    pub rounds: Timeslot,
    /// Broadcast at slot 1 without asking. Otherwise request permission for
    /// the echo every slot until it is granted.
    pub permissioned: bool,
}

/// `z_{U*, U}`.
pub fn echo(z: Bit, signer: Identifier) -> Message {
    sign(&Message::general(z), signer)
}

/// The `(signer, value)` pair of an echo.
pub fn as_echo(m: &Message) -> Option<(Identifier, Bit)> {
    match m.signatures.as_slice() {
        [g, u] if g.is_general() && !u.is_general() && m.timestamp.is_none() => Some((*u, m.as_bit()?)),
        _ => None,
    }
}

/// Majority over votes, ties to 0.
pub fn majority(votes: impl IntoIterator<Item = Bit>) -> Bit {
    let (mut zeros, mut ones) = (0usize, 0usize);
    for z in votes {
        if z == 0 {
            zeros += 1;
        } else {
            ones += 1;
        }
    }
    Bit::from(ones > zeros)
}

impl Protocol for NaiveMajority {
    fn name(&self) -> &str {
        "naive-majority"
    }

    fn spawn(&self, ctx: &SpawnContext) -> Box<dyn Processor> {
        let own = input_values(&ctx.inputs).into_iter().next();
        Box::new(Majority {
            identifier: ctx.identifier,
            rounds: self.rounds,
            permissioned: self.permissioned,
            own,
            sent: false,
            echoes: BTreeSet::new(),
        })
    }
}

#[derive(Clone, Debug)]
struct Majority {
    identifier: Identifier,
    rounds: Timeslot,
    permissioned: bool,
    own: Option<Bit>,
    sent: bool,
    echoes: BTreeSet<(Identifier, Bit)>,
}

impl Processor for Majority {
    fn step(&mut self, input: &StepInput<'_>) -> StepOutput {
        let mut out = StepOutput::idle();
        for m in input.received {
            if let Some((u, z)) = as_echo(m) {
                if u != self.identifier {
                    self.echoes.insert((u, z));
                }
            }
        }
        if let (Some(z), false) = (self.own, self.sent) {
            let m = echo(z, self.identifier);
            if self.permissioned || input.permissions.permits(&m) {
                out.broadcast.push(m);
                self.sent = true;
            } else {
                out.requests.push(Request::Untimed { messages: BTreeSet::new(), extra: Some(m) });
            }
        }
        if input.slot == self.rounds {
            out.output = Some(majority(self.echoes.iter().map(|e| e.1).chain(self.own)));
        }
        out
    }

    fn state(&self) -> serde_json::Value {
        serde_json::json!({ "echoes": self.echoes.iter().map(|(u, z)| (u.raw(), z)).collect::<Vec<_>>() })
    }

    fn box_clone(&self) -> Box<dyn Processor> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ties_go_to_zero() {
        assert_eq!(majority([0, 1]), 0);
        assert_eq!(majority([1, 1, 0]), 1);
        assert_eq!(majority([]), 0);
    }

    #[test]
    fn echo_shape() {
        let u = Identifier::new(3).unwrap();
        assert_eq!(as_echo(&echo(1, u)), Some((u, 1)));
        assert_eq!(as_echo(&Message::general(1)), None);
    }
}
