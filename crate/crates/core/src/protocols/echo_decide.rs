//! A deterministic, weakly decentralised vote relay. Every processor asks for
//! permission each slot; whoever receives a non-empty permission set votes
//! the majority of its input and the votes it has received, ties to its own
//! input. The two deciders output the same rule at `decide_at`.

use std::collections::BTreeSet;

use crate::message::{sign, Bit, Identifier, Message, Timeslot};
use crate::permission::Request;
use crate::processor::{input_values, Processor, Protocol, SpawnContext, StepInput, StepOutput};

#[derive(Clone, Debug)]
pub struct EchoDecide {
    pub decide_at: Timeslot,
}

impl Protocol for EchoDecide {
    fn name(&self) -> &str {
        "echo-decide"
    }

    fn spawn(&self, ctx: &SpawnContext) -> Box<dyn Processor> {
        let own = input_values(&ctx.inputs).into_iter().next().unwrap_or(0);
        Box::new(Voter { identifier: ctx.identifier, decide_at: self.decide_at, own, votes: BTreeSet::new() })
    }
}

#[derive(Clone, Debug)]
struct Voter {
    identifier: Identifier,
    decide_at: Timeslot,
    own: Bit,
    votes: BTreeSet<(Identifier, Bit)>,
}

impl Voter {
    fn tally(&self) -> Bit {
        let ones = self.votes.iter().filter(|v| v.1 == 1).count() + usize::from(self.own == 1);
        let total = self.votes.len() + 1;
        match (2 * ones).cmp(&total) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => self.own,
        }
    }
}

impl Processor for Voter {
    fn step(&mut self, input: &StepInput<'_>) -> StepOutput {
        let mut out = StepOutput::idle();
        for m in input.received {
            if let ([u], Some(z)) = (m.signatures.as_slice(), m.as_bit()) {
                if *u != self.identifier && !u.is_general() {
                    self.votes.insert((*u, z));
                }
            }
        }
        if !input.permissions.is_empty() {
            let vote = sign(&Message::bit(self.tally()), self.identifier);
            if input.permissions.permits(&vote) {
                out.broadcast.push(vote);
            }
        }
        out.requests.push(Request::Untimed { messages: BTreeSet::new(), extra: None });
        if input.slot == self.decide_at {
            out.output = Some(self.tally());
        }
        out
    }

    fn box_clone(&self) -> Box<dyn Processor> {
        Box::new(self.clone())
    }
}
