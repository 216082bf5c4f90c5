//! Run traces, their JSON-lines form, and per-processor views.
//!
//! A trace file is one header line followed by one line per
//! `(slot, processor)`, slots ascending and processors ascending within a
//! slot. Messages are written as lowercase hex of their canonical encoding.
//!
//! ```text
//! {"kind":"header","horizon":H,"seed":S,"setting":{..},"processors":[{"index":0,"identifier":0,"role":"honest","inputs":["53.."]}]}
//! {"kind":"slot","t":1,"p":0,"received":[{"msg":"..","from":1,"sent":0}],"permissions":{"all":false,"exact":[],"extend":[]},
//!  "instructed":[],"broadcast":[],"requests":[{"slot":null,"messages":[],"extra":null}],"output":null}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{Bit, CodecError, Identifier, Message, Timeslot};
use crate::network::Delivery;
use crate::permission::{ChainGrant, PermissionSet, Request};
use crate::resource::PoolPoint;
use crate::setting::SettingFlags;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleTag {
    Honest,
    DelayFaulty,
    Controlled,
}

impl RoleTag {
    pub fn is_faulty(self) -> bool {
        self != RoleTag::Honest
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProcessorInfo {
    pub index: usize,
    pub identifier: Identifier,
    pub role: RoleTag,
    pub inputs: BTreeSet<Message>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Receipt {
    pub message: Message,
    pub from: usize,
    pub sent: Timeslot,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotRecord {
    pub received: Vec<Receipt>,
    pub permissions: PermissionSet,
    pub instructed: Vec<Message>,
    pub broadcast: Vec<Message>,
    pub requests: Vec<Request>,
    pub state: Option<serde_json::Value>,
    pub output: Option<Bit>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub setting: SettingFlags,
    pub seed: u64,
    pub horizon: Timeslot,
    pub processors: Vec<ProcessorInfo>,
    /// `slots[t - 1][p]`.
    pub slots: Vec<Vec<SlotRecord>>,
}

impl Trace {
    pub fn record(&self, t: Timeslot, p: usize) -> &SlotRecord {
        &self.slots[(t - 1) as usize][p]
    }

    /// First output of each processor, with the slot it was given at.
    pub fn outputs(&self) -> Vec<Option<(Bit, Timeslot)>> {
        let mut out = vec![None; self.processors.len()];
        for (i, row) in self.slots.iter().enumerate() {
            for (p, r) in row.iter().enumerate() {
                if out[p].is_none() {
                    out[p] = r.output.map(|z| (z, i as Timeslot + 1));
                }
            }
        }
        out
    }

    pub fn output_of(&self, p: usize) -> Option<Bit> {
        self.outputs()[p].map(|(z, _)| z)
    }

    /// The canonical bytes of `p`'s view through slot `until`: its inputs and
    /// the pair `(M, M*)` received at each slot, with `M` taken as a set.
    pub fn view(&self, p: usize, until: Timeslot) -> Vec<u8> {
        let mut out = Vec::new();
        let inputs = &self.processors[p].inputs;
        out.extend_from_slice(&(inputs.len() as u32).to_be_bytes());
        for m in inputs {
            out.extend_from_slice(&m.encode());
        }
        for t in 1..=until.min(self.horizon) {
            let r = self.record(t, p);
            let set: BTreeSet<Vec<u8>> = r.received.iter().map(|x| x.message.encode()).collect();
            out.push(0xfe);
            out.extend_from_slice(&t.to_be_bytes());
            out.extend_from_slice(&(set.len() as u32).to_be_bytes());
            for m in set {
                out.extend_from_slice(&m);
            }
            encode_permissions(&r.permissions, &mut out);
        }
        out
    }

    /// Every `(sender, slot, message)` actually broadcast.
    pub fn broadcasts(&self) -> BTreeSet<(usize, Timeslot, Message)> {
        let mut out = BTreeSet::new();
        for (i, row) in self.slots.iter().enumerate() {
            for (p, r) in row.iter().enumerate() {
                for m in &r.broadcast {
                    out.insert((p, i as Timeslot + 1, m.clone()));
                }
            }
        }
        out
    }

    pub fn deliveries(&self) -> Vec<Delivery> {
        let mut out = Vec::new();
        for (i, row) in self.slots.iter().enumerate() {
            for (p, r) in row.iter().enumerate() {
                for x in &r.received {
                    out.push(Delivery {
                        from: x.from,
                        to: p,
                        message: x.message.clone(),
                        sent: x.sent,
                        received: i as Timeslot + 1,
                    });
                }
            }
        }
        out
    }

    /// The `(t, M)` points at which the pool was consulted.
    pub fn reached_points(&self) -> Vec<PoolPoint> {
        let mut set = BTreeSet::new();
        for (i, row) in self.slots.iter().enumerate() {
            for r in row {
                for req in &r.requests {
                    let t = req.timed_slot().unwrap_or(i as Timeslot + 1);
                    set.insert(PoolPoint::new(t, req.messages().clone()));
                }
            }
        }
        if set.is_empty() {
            set.insert(PoolPoint::bare(0));
        }
        set.into_iter().collect()
    }

    pub fn write_jsonl(&self, w: &mut dyn Write) -> std::io::Result<()> {
        let header = HeaderLine {
            kind: "header",
            horizon: self.horizon,
            seed: self.seed,
            setting: self.setting,
            processors: self
                .processors
                .iter()
                .map(|p| ProcessorLine {
                    index: p.index,
                    identifier: p.identifier,
                    role: p.role,
                    inputs: p.inputs.iter().map(Message::to_hex).collect(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n")?;
        for (i, row) in self.slots.iter().enumerate() {
            for (p, r) in row.iter().enumerate() {
                serde_json::to_writer(&mut *w, &SlotLine::from_record(i as Timeslot + 1, p, r))?;
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_jsonl(&mut out).expect("writing to memory");
        out
    }

    pub fn read_jsonl(r: &mut dyn BufRead) -> Result<Trace, TraceError> {
        let mut lines = r.lines();
        let first = lines.next().ok_or(TraceError::Empty)??;
        let header: HeaderIn = serde_json::from_str(&first)?;
        let n = header.processors.len();
        let mut processors = Vec::with_capacity(n);
        for p in header.processors {
            processors.push(ProcessorInfo {
                index: p.index,
                identifier: p.identifier,
                role: p.role,
                inputs: p.inputs.iter().map(|h| Message::from_hex(h)).collect::<Result<_, _>>()?,
            });
        }
        let mut slots = vec![vec![SlotRecord::default(); n]; header.horizon as usize];
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: SlotIn = serde_json::from_str(&line)?;
            if s.t == 0 || s.t > header.horizon || s.p >= n {
                return Err(TraceError::OutOfRange { line: lineno + 2 });
            }
            let (t, p) = (s.t, s.p);
            slots[(t - 1) as usize][p] = s.into_record()?;
        }
        Ok(Trace { setting: header.setting, seed: header.seed, horizon: header.horizon, processors, slots })
    }
}

fn encode_permissions(p: &PermissionSet, out: &mut Vec<u8>) {
    out.push(p.all as u8);
    out.extend_from_slice(&(p.exact.len() as u32).to_be_bytes());
    for m in &p.exact {
        out.extend_from_slice(&m.encode());
    }
    out.extend_from_slice(&(p.extend.len() as u32).to_be_bytes());
    for g in &p.extend {
        out.extend_from_slice(&g.tip.0.to_be_bytes());
        out.extend_from_slice(&g.slot.to_be_bytes());
        g.producer.encode_into(out);
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("empty trace file")]
    Empty,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("message codec: {0}")]
    Codec(#[from] CodecError),
    #[error("slot record out of range on line {line}")]
    OutOfRange { line: usize },
}

#[derive(Serialize)]
struct HeaderLine {
    kind: &'static str,
    horizon: Timeslot,
    seed: u64,
    setting: SettingFlags,
    processors: Vec<ProcessorLine>,
}

#[derive(Serialize, Deserialize)]
struct ProcessorLine {
    index: usize,
    identifier: Identifier,
    role: RoleTag,
    inputs: Vec<String>,
}

#[derive(Deserialize)]
struct HeaderIn {
    horizon: Timeslot,
    seed: u64,
    setting: SettingFlags,
    processors: Vec<ProcessorLine>,
}

#[derive(Serialize, Deserialize)]
struct ReceiptLine {
    msg: String,
    from: usize,
    sent: Timeslot,
}

#[derive(Serialize, Deserialize)]
struct PermissionLine {
    all: bool,
    exact: Vec<String>,
    extend: Vec<ChainGrant>,
}

#[derive(Serialize, Deserialize)]
struct RequestLine {
    slot: Option<Timeslot>,
    messages: Vec<String>,
    extra: Option<String>,
}

#[derive(Serialize)]
struct SlotLine {
    kind: &'static str,
    t: Timeslot,
    p: usize,
    received: Vec<ReceiptLine>,
    permissions: PermissionLine,
    instructed: Vec<String>,
    broadcast: Vec<String>,
    requests: Vec<RequestLine>,
    #[serde(skip_serializing_if = "Option::is_none")]
    state: Option<serde_json::Value>,
    output: Option<Bit>,
}

#[derive(Deserialize)]
struct SlotIn {
    t: Timeslot,
    p: usize,
    received: Vec<ReceiptLine>,
    permissions: PermissionLine,
    instructed: Vec<String>,
    broadcast: Vec<String>,
    requests: Vec<RequestLine>,
    #[serde(default)]
    state: Option<serde_json::Value>,
    output: Option<Bit>,
}

fn hexes(ms: &[Message]) -> Vec<String> {
    ms.iter().map(Message::to_hex).collect()
}

fn unhex(hs: &[String]) -> Result<Vec<Message>, CodecError> {
    hs.iter().map(|h| Message::from_hex(h)).collect()
}

impl SlotLine {
    fn from_record(t: Timeslot, p: usize, r: &SlotRecord) -> Self {
        SlotLine {
            kind: "slot",
            t,
            p,
            received: r
                .received
                .iter()
                .map(|x| ReceiptLine { msg: x.message.to_hex(), from: x.from, sent: x.sent })
                .collect(),
            permissions: PermissionLine {
                all: r.permissions.all,
                exact: r.permissions.exact.iter().map(Message::to_hex).collect(),
                extend: r.permissions.extend.iter().copied().collect(),
            },
            instructed: hexes(&r.instructed),
            broadcast: hexes(&r.broadcast),
            requests: r
                .requests
                .iter()
                .map(|q| RequestLine {
                    slot: q.timed_slot(),
                    messages: q.messages().iter().map(Message::to_hex).collect(),
                    extra: q.extra().map(Message::to_hex),
                })
                .collect(),
            state: r.state.clone(),
            output: r.output,
        }
    }
}

impl SlotIn {
    fn into_record(self) -> Result<SlotRecord, CodecError> {
        let mut received = Vec::with_capacity(self.received.len());
        for x in &self.received {
            received.push(Receipt { message: Message::from_hex(&x.msg)?, from: x.from, sent: x.sent });
        }
        let mut requests = Vec::with_capacity(self.requests.len());
        for q in &self.requests {
            let messages = unhex(&q.messages)?.into_iter().collect();
            let extra = q.extra.as_deref().map(Message::from_hex).transpose()?;
            requests.push(match q.slot {
                Some(slot) => Request::Timed { slot, messages, extra },
                None => Request::Untimed { messages, extra },
            });
        }
        Ok(SlotRecord {
            received,
            permissions: PermissionSet {
                all: self.permissions.all,
                exact: unhex(&self.permissions.exact)?.into_iter().collect(),
                extend: self.permissions.extend.into_iter().collect(),
            },
            instructed: unhex(&self.instructed)?,
            broadcast: unhex(&self.broadcast)?,
            requests,
            state: self.state,
            output: self.output,
        })
    }
}

/// Whether an injective map from receipts to earlier broadcasts by other
/// processors exists, for every receiver. Sender labels in the trace are
/// not trusted: for each receiver and message, receipts in slot order are
/// matched greedily against broadcasts of that message by others, which is
/// exact for this interval-shaped matching problem.
pub fn deliveries_injective(trace: &Trace) -> bool {
    let n = trace.processors.len();
    let mut broadcast_slots: HashMap<&Message, Vec<(Timeslot, usize)>> = HashMap::new();
    for (i, row) in trace.slots.iter().enumerate() {
        for (p, r) in row.iter().enumerate() {
            for m in &r.broadcast {
                broadcast_slots.entry(m).or_default().push((i as Timeslot + 1, p));
            }
        }
    }
    for receiver in 0..n {
        let mut receipts: BTreeMap<&Message, Vec<Timeslot>> = BTreeMap::new();
        for (i, row) in trace.slots.iter().enumerate() {
            for x in &row[receiver].received {
                receipts.entry(&x.message).or_default().push(i as Timeslot + 1);
            }
        }
        for (m, times) in receipts {
            let mut available: Vec<Timeslot> = broadcast_slots
                .get(m)
                .map(|v| v.iter().filter(|(_, p)| *p != receiver).map(|(t, _)| *t).collect())
                .unwrap_or_default();
            available.sort_unstable();
            // Hall's condition: by each receipt time, at least as many
            // strictly earlier broadcasts as receipts so far.
            for (k, &t) in times.iter().enumerate() {
                let earlier = available.partition_point(|&b| b < t);
                if earlier < k + 1 {
                    return false;
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setting::{Auth, Regime};

    fn empty_trace(n: usize, horizon: Timeslot) -> Trace {
        Trace {
            setting: SettingFlags::permissioned(Regime::Synchronous { delta: 1 }, Auth::Authenticated),
            seed: 0,
            horizon,
            processors: (0..n)
                .map(|i| ProcessorInfo {
                    index: i,
                    identifier: Identifier::new(i as u32).unwrap(),
                    role: RoleTag::Honest,
                    inputs: BTreeSet::new(),
                })
                .collect(),
            slots: vec![vec![SlotRecord::default(); n]; horizon as usize],
        }
    }

    #[test]
    fn empty_trace_is_injective() {
        assert!(deliveries_injective(&empty_trace(3, 4)));
    }

    #[test]
    fn double_receipt_of_single_broadcast_fails() {
        let mut tr = empty_trace(2, 4);
        let m = Message::bit(1);
        tr.slots[0][0].broadcast.push(m.clone());
        tr.slots[1][1].received.push(Receipt { message: m.clone(), from: 0, sent: 1 });
        assert!(deliveries_injective(&tr));
        tr.slots[2][1].received.push(Receipt { message: m, from: 0, sent: 1 });
        assert!(!deliveries_injective(&tr));
    }

    #[test]
    fn own_broadcast_cannot_back_a_receipt() {
        let mut tr = empty_trace(2, 3);
        let m = Message::bit(0);
        tr.slots[0][1].broadcast.push(m.clone());
        tr.slots[1][1].received.push(Receipt { message: m, from: 1, sent: 1 });
        assert!(!deliveries_injective(&tr));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut tr = empty_trace(2, 2);
        tr.processors[0].inputs.insert(Message::general(1));
        tr.slots[0][0].broadcast.push(Message::bit(1));
        tr.slots[0][0].requests.push(Request::Timed { slot: 0, messages: BTreeSet::new(), extra: None });
        tr.slots[1][1].received.push(Receipt { message: Message::bit(1), from: 0, sent: 1 });
        tr.slots[1][1].output = Some(1);
        let bytes = tr.to_jsonl();
        let back = Trace::read_jsonl(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, tr);
        assert_eq!(back.to_jsonl(), bytes);
    }

    #[test]
    fn views_ignore_senders_but_not_messages() {
        let mut a = empty_trace(3, 2);
        let mut b = empty_trace(3, 2);
        a.slots[1][2].received.push(Receipt { message: Message::bit(1), from: 0, sent: 1 });
        b.slots[1][2].received.push(Receipt { message: Message::bit(1), from: 1, sent: 1 });
        assert_eq!(a.view(2, 2), b.view(2, 2));
        b.slots[1][2].received[0].message = Message::bit(0);
        assert_ne!(a.view(2, 2), b.view(2, 2));
        assert_eq!(a.view(2, 1), b.view(2, 1));
    }
}
