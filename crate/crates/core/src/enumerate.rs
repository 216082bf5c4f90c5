//! Exhaustive enumeration of adversary choices by stateless re-execution.
//!
//! A run asks a [`Tape`] for each choice it needs. The first pass takes
//! option 0 everywhere; afterwards the tape behaves like an odometer over the
//! choices actually consulted, so every reachable branch is executed exactly
//! once, in a fixed depth-first order.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::message::{Message, Timeslot};
use crate::network::TimingRule;
use crate::setting::Regime;

#[derive(Clone, Debug, Default)]
pub struct Tape {
    choices: Vec<(usize, usize)>,
    pos: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EnumError {
    #[error("enumeration budget of {0} branches exceeded")]
    Budget(usize),
    #[error("run asked for choice {pos} with {got} options, earlier pass saw {expected}")]
    Nondeterministic { pos: usize, expected: usize, got: usize },
}

impl Tape {
    /// Picks one of `arity` options.
    pub fn choose(&mut self, arity: usize) -> usize {
        assert!(arity > 0, "a choice needs at least one option");
        if arity == 1 {
            return 0;
        }
        let pick = if self.pos < self.choices.len() {
            let (taken, seen) = self.choices[self.pos];
            assert_eq!(seen, arity, "choice {} changed arity between passes", self.pos);
            taken
        } else {
            self.choices.push((0, arity));
            0
        };
        self.pos += 1;
        pick
    }

    /// The choices consulted in the last pass.
    pub fn path(&self) -> Vec<usize> {
        self.choices[..self.pos].iter().map(|c| c.0).collect()
    }

    fn advance(&mut self) -> bool {
        self.choices.truncate(self.pos);
        self.pos = 0;
        while let Some((taken, arity)) = self.choices.pop() {
            if taken + 1 < arity {
                self.choices.push((taken + 1, arity));
                return true;
            }
        }
        false
    }
}

/// Runs `body` once per branch. Returns the number of branches.
pub fn explore<E>(
    budget: usize,
    mut body: impl FnMut(&mut Tape) -> Result<(), E>,
) -> Result<Result<usize, E>, EnumError> {
    let mut tape = Tape::default();
    let mut count = 0;
    loop {
        if count == budget {
            return Err(EnumError::Budget(budget));
        }
        if let Err(e) = body(&mut tape) {
            return Ok(Err(e));
        }
        count += 1;
        if !tape.advance() {
            return Ok(Ok(count));
        }
    }
}

/// A delay adversary driven by a tape.
///
/// Processors in `faulty` choose, per instructed batch, to broadcast at any
/// slot from the instruction slot up to `horizon - 1` or to hold the batch
/// back, and choose a delay per receiver. Batches from other processors get
/// one delay for all receivers. Options whose deliveries all fall after the
/// horizon are merged, since no processor's view up to the horizon can tell
/// them apart.
pub struct DelayMenu<'a> {
    pub regime: Regime,
    pub horizon: Timeslot,
    pub faulty: &'a BTreeSet<usize>,
    /// When set, honest batches also get a delay per receiver.
    pub per_receiver_honest: bool,
    pub tape: &'a mut Tape,
    uniform: BTreeMap<(usize, Timeslot), Timeslot>,
}

impl<'a> DelayMenu<'a> {
    pub fn new(regime: Regime, horizon: Timeslot, faulty: &'a BTreeSet<usize>, tape: &'a mut Tape) -> Self {
        DelayMenu { regime, horizon, faulty, per_receiver_honest: false, tape, uniform: BTreeMap::new() }
    }

    fn delivery_options(&self, sent: Timeslot) -> Vec<Timeslot> {
        let mut opts: Vec<Timeslot> = (sent + 1..=self.regime.deadline(sent)).filter(|&d| d <= self.horizon).collect();
        if self.regime.deadline(sent) > self.horizon {
            opts.push((self.horizon + 1).max(sent + 1));
        }
        opts
    }

    fn pick_delivery(&mut self, sent: Timeslot) -> Timeslot {
        let opts = self.delivery_options(sent);
        opts[self.tape.choose(opts.len())]
    }
}

impl TimingRule for DelayMenu<'_> {
    fn regime(&self) -> Regime {
        self.regime
    }

    fn delivery(&mut self, from: usize, _to: usize, _batch: &[Message], sent: Timeslot) -> Timeslot {
        if self.faulty.contains(&from) || self.per_receiver_honest {
            return self.pick_delivery(sent);
        }
        if let Some(&d) = self.uniform.get(&(from, sent)) {
            return d;
        }
        let d = self.pick_delivery(sent);
        self.uniform.insert((from, sent), d);
        d
    }

    fn defer(&mut self, p: usize, instructed: Timeslot) -> Option<Timeslot> {
        if !self.faulty.contains(&p) || instructed + 1 >= self.horizon {
            return Some(instructed);
        }
        // Options: instructed, .., horizon - 1, held back.
        let span = (self.horizon - instructed) as usize;
        let pick = self.tape.choose(span + 1);
        (pick < span).then(|| instructed + pick as Timeslot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odometer_visits_every_leaf_once() {
        let mut seen = Vec::new();
        let n = explore::<()>(100, |tape| {
            let a = tape.choose(2);
            let b = if a == 0 { tape.choose(3) } else { 0 };
            seen.push((a, b));
            Ok(())
        })
        .unwrap()
        .unwrap();
        assert_eq!(n, 4);
        assert_eq!(seen, vec![(0, 0), (0, 1), (0, 2), (1, 0)]);
    }

    #[test]
    fn budget_is_an_error() {
        let r = explore::<()>(3, |tape| {
            tape.choose(2);
            tape.choose(2);
            Ok(())
        });
        assert_eq!(r, Err(EnumError::Budget(3)));
    }

    #[test]
    fn late_options_merge() {
        let faulty = BTreeSet::new();
        let mut tape = Tape::default();
        let menu = DelayMenu::new(Regime::Synchronous { delta: 2 }, 10, &faulty, &mut tape);
        assert_eq!(menu.delivery_options(3), vec![4, 5]);
        assert_eq!(menu.delivery_options(9), vec![10, 11]);
        assert_eq!(menu.delivery_options(10), vec![11]);
    }
}
