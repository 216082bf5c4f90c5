//! Processor state machines and protocol families.

use std::collections::BTreeSet;
use std::fmt;

use crate::message::{Bit, Identifier, Message, Timeslot};
use crate::permission::{PermissionSet, Request};

/// What a processor sees at the start of its step at `slot`.
#[derive(Clone, Copy, Debug)]
pub struct StepInput<'a> {
    pub slot: Timeslot,
    /// `M`: messages delivered at this slot.
    pub received: &'a BTreeSet<Message>,
    /// `M*`: the union of permitter responses to last slot's requests.
    pub permissions: &'a PermissionSet,
    /// For adversary-controlled processors: what every member of the
    /// coalition received at this slot.
    pub coalition: Option<&'a CoalitionView>,
}

#[derive(Clone, Debug, Default)]
pub struct CoalitionView {
    pub received: BTreeSet<Message>,
    pub permissions: PermissionSet,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepOutput {
    pub broadcast: Vec<Message>,
    pub requests: Vec<Request>,
    pub output: Option<Bit>,
}

impl StepOutput {
    pub fn idle() -> Self {
        Self::default()
    }
}

/// One processor's transition function together with its current state.
pub trait Processor: Send {
    fn step(&mut self, input: &StepInput<'_>) -> StepOutput;

    /// Snapshot of the state, for traces.
    fn state(&self) -> serde_json::Value {
        serde_json::Value::Null
    }

    fn box_clone(&self) -> Box<dyn Processor>;
}

impl Clone for Box<dyn Processor> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

/// Initial conditions handed to a protocol when a processor is created.
#[derive(Clone, Debug)]
pub struct SpawnContext {
    pub index: usize,
    pub identifier: Identifier,
    /// Protocol inputs, treated as received at slot 0.
    pub inputs: BTreeSet<Message>,
}

/// A protocol: a family of state machines indexed by identifier and input.
pub trait Protocol: Send + Sync {
    fn name(&self) -> &str;
    fn spawn(&self, ctx: &SpawnContext) -> Box<dyn Processor>;
}

impl fmt::Debug for dyn Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Protocol({})", self.name())
    }
}

/// Broadcasts nothing, requests nothing, never outputs.
#[derive(Clone, Debug, Default)]
pub struct Idle;

impl Processor for Idle {
    fn step(&mut self, _input: &StepInput<'_>) -> StepOutput {
        StepOutput::idle()
    }

    fn box_clone(&self) -> Box<dyn Processor> {
        Box::new(self.clone())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdleProtocol;

impl Protocol for IdleProtocol {
    fn name(&self) -> &str {
        "idle"
    }

    fn spawn(&self, _ctx: &SpawnContext) -> Box<dyn Processor> {
        Box::new(Idle)
    }
}

/// The general's binary values present in an input set.
pub fn input_values(inputs: &BTreeSet<Message>) -> BTreeSet<Bit> {
    inputs
        .iter()
        .filter(|m| m.signatures == [Identifier::GENERAL])
        .filter_map(Message::as_bit)
        .collect()
}

/// `{z_{U*}}` for each listed `z`.
pub fn general_inputs(values: &[Bit]) -> BTreeSet<Message> {
    values.iter().map(|&z| Message::general(z)).collect()
}
