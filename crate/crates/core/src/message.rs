//! Identifiers, messages, blocks and the canonical message codec.
//!
//! Byte layout (all integers big-endian):
//!
//! ```text
//! identifier   = 0x49 u32
//! message      = 0x42 u32:len body                 ; unsigned base message
//!              | 0x53 u32:len identifier message   ; (U, m), i.e. m signed by U
//! body         = 0x00 payload | 0x01 u64:timestamp payload
//! payload      = 0x30 u8:bit
//!              | 0x31 u64:parent identifier u64:height opt_u64:slot opt_u8:value
//!              | 0x32 u32:len bytes
//!              | 0x33 u32:count message*
//! opt_X        = 0x00 | 0x01 X
//! ```
//!
//! Every message is framed by a tag and its exact length and every identifier
//! has a fixed width and its own tag, so the set of all encodings is
//! prefix-free.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Real-time clock value. Slot 0 is reserved for protocol inputs.
pub type Timeslot = u64;

/// A binary protocol value.
pub type Bit = u8;

const TAG_IDENT: u8 = 0x49;
const TAG_BASE: u8 = 0x42;
const TAG_SIGNED: u8 = 0x53;
const TAG_BIT: u8 = 0x30;
const TAG_BLOCK: u8 = 0x31;
const TAG_BYTES: u8 = 0x32;
const TAG_BUNDLE: u8 = 0x33;

/// Name of a processor, or of the general.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Identifier(u32);

impl Identifier {
    /// `U*`, the general's identifier. It belongs to no processor.
    pub const GENERAL: Identifier = Identifier(u32::MAX);

    pub fn new(raw: u32) -> Option<Self> {
        (raw != u32::MAX).then_some(Identifier(raw))
    }

    pub fn raw(self) -> u32 {
        self.0
    }

    pub fn is_general(self) -> bool {
        self == Self::GENERAL
    }

    pub fn encode_into(self, out: &mut Vec<u8>) {
        out.push(TAG_IDENT);
        out.extend_from_slice(&self.0.to_be_bytes());
    }

    pub fn encode(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5);
        self.encode_into(&mut out);
        out
    }
}

impl fmt::Debug for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_general() {
            write!(f, "U*")
        } else {
            write!(f, "U{}", self.0)
        }
    }
}

impl fmt::Display for Identifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Structural block id. Not a cryptographic commitment, only a stable name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BlockId(pub u64);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Block {
    pub parent: BlockId,
    pub producer: Identifier,
    pub height: u64,
    /// Present only in the timed setting.
    pub slot: Option<Timeslot>,
    /// Value carried by the block when a chain is used to decide a bit.
    pub value: Option<Bit>,
}

impl Block {
    pub fn id(&self) -> BlockId {
        let mut buf = Vec::with_capacity(48);
        encode_payload(&Payload::Block(self.clone()), &mut buf);
        let digest = Sha256::digest(&buf);
        let mut raw = [0u8; 8];
        raw.copy_from_slice(&digest[..8]);
        // 0 is reserved for genesis.
        BlockId(u64::from_be_bytes(raw).max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Payload {
    Bit(Bit),
    Block(Block),
    Bytes(Vec<u8>),
    Bundle(Vec<Message>),
}

/// A message: a payload, an optional timestamp, and the ordered list of
/// signers applied to it (outermost last).
///
/// `signatures = [U1, .., Ui]` denotes `(Ui, (.., (U1, base)))`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Message {
    pub payload: Payload,
    pub timestamp: Option<Timeslot>,
    pub signatures: Vec<Identifier>,
}

impl Message {
    pub fn new(payload: Payload) -> Self {
        Message { payload, timestamp: None, signatures: Vec::new() }
    }

    pub fn bit(z: Bit) -> Self {
        Message::new(Payload::Bit(z))
    }

    /// `z_{U*}`: the general's signed value.
    pub fn general(z: Bit) -> Self {
        sign(&Message::bit(z), Identifier::GENERAL)
    }

    pub fn block(block: Block) -> Self {
        let timestamp = block.slot;
        Message { payload: Payload::Block(block), timestamp, signatures: Vec::new() }
    }

    pub fn depth(&self) -> usize {
        self.signatures.len()
    }

    /// The message with its outermost signature stripped.
    pub fn unsigned_once(&self) -> Option<(Identifier, Message)> {
        let (&last, rest) = self.signatures.split_last()?;
        Some((
            last,
            Message {
                payload: self.payload.clone(),
                timestamp: self.timestamp,
                signatures: rest.to_vec(),
            },
        ))
    }

    pub fn as_block(&self) -> Option<&Block> {
        match &self.payload {
            Payload::Block(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_bit(&self) -> Option<Bit> {
        match self.payload {
            Payload::Bit(z) => Some(z),
            _ => None,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        encode_message(self, &mut out);
        out
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.encode())
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, CodecError> {
        let mut r = Reader { bytes, pos: 0 };
        let m = r.message()?;
        if r.pos != bytes.len() {
            return Err(CodecError::Trailing(bytes.len() - r.pos));
        }
        Ok(m)
    }

    pub fn from_hex(s: &str) -> Result<Message, CodecError> {
        let bytes = hex::decode(s).map_err(|_| CodecError::Hex)?;
        Message::decode(&bytes)
    }
}

/// `m_U`: the ordered pair `(U, m)`.
pub fn sign(m: &Message, signer: Identifier) -> Message {
    let mut out = m.clone();
    out.signatures.push(signer);
    out
}

/// Whether the pair `(signer, inner)` occurs as a subterm of `m`.
pub fn contains_signed_pair(m: &Message, signer: Identifier, inner: &Message) -> bool {
    let mut found = false;
    for_each_signed_pair(m, &mut |u, sub| {
        if !found && u == signer && sub == inner {
            found = true;
        }
    });
    found
}

/// Visits every signed pair `(U, m')` occurring in `m`, including pairs
/// nested inside bundle payloads.
pub fn for_each_signed_pair(m: &Message, f: &mut dyn FnMut(Identifier, &Message)) {
    let mut prefix = Message {
        payload: m.payload.clone(),
        timestamp: m.timestamp,
        signatures: Vec::with_capacity(m.signatures.len()),
    };
    for &u in &m.signatures {
        f(u, &prefix);
        prefix.signatures.push(u);
    }
    if let Payload::Bundle(items) = &m.payload {
        for item in items {
            for_each_signed_pair(item, f);
        }
    }
}

fn encode_message(m: &Message, out: &mut Vec<u8>) {
    match m.unsigned_once() {
        None => {
            let mut body = Vec::new();
            match m.timestamp {
                None => body.push(0),
                Some(ts) => {
                    body.push(1);
                    body.extend_from_slice(&ts.to_be_bytes());
                }
            }
            encode_payload(&m.payload, &mut body);
            out.push(TAG_BASE);
            out.extend_from_slice(&(body.len() as u32).to_be_bytes());
            out.extend_from_slice(&body);
        }
        Some((signer, inner)) => {
            let mut body = Vec::new();
            signer.encode_into(&mut body);
            encode_message(&inner, &mut body);
            out.push(TAG_SIGNED);
            out.extend_from_slice(&(body.len() as u32).to_be_bytes());
            out.extend_from_slice(&body);
        }
    }
}

fn encode_payload(p: &Payload, out: &mut Vec<u8>) {
    match p {
        Payload::Bit(z) => {
            out.push(TAG_BIT);
            out.push(*z);
        }
        Payload::Block(b) => {
            out.push(TAG_BLOCK);
            out.extend_from_slice(&b.parent.0.to_be_bytes());
            b.producer.encode_into(out);
            out.extend_from_slice(&b.height.to_be_bytes());
            match b.slot {
                None => out.push(0),
                Some(s) => {
                    out.push(1);
                    out.extend_from_slice(&s.to_be_bytes());
                }
            }
            match b.value {
                None => out.push(0),
                Some(v) => {
                    out.push(1);
                    out.push(v);
                }
            }
        }
        Payload::Bytes(bytes) => {
            out.push(TAG_BYTES);
            out.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
            out.extend_from_slice(bytes);
        }
        Payload::Bundle(items) => {
            out.push(TAG_BUNDLE);
            out.extend_from_slice(&(items.len() as u32).to_be_bytes());
            for item in items {
                encode_message(item, out);
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("unexpected end of input at byte {0}")]
    Eof(usize),
    #[error("unknown tag {tag:#04x} at byte {pos}")]
    Tag { tag: u8, pos: usize },
    #[error("frame length mismatch at byte {0}")]
    Frame(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("invalid hex")]
    Hex,
    #[error("reserved identifier value inside a signature chain")]
    General,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], CodecError> {
        if self.pos + n > self.bytes.len() {
            return Err(CodecError::Eof(self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn identifier(&mut self) -> Result<Identifier, CodecError> {
        let pos = self.pos;
        let tag = self.u8()?;
        if tag != TAG_IDENT {
            return Err(CodecError::Tag { tag, pos });
        }
        Ok(Identifier(self.u32()?))
    }

    fn message(&mut self) -> Result<Message, CodecError> {
        let pos = self.pos;
        let tag = self.u8()?;
        let len = self.u32()? as usize;
        let end = self.pos + len;
        let m = match tag {
            TAG_BASE => {
                let timestamp = match self.u8()? {
                    0 => None,
                    1 => Some(self.u64()?),
                    t => return Err(CodecError::Tag { tag: t, pos: self.pos - 1 }),
                };
                let payload = self.payload()?;
                Message { payload, timestamp, signatures: Vec::new() }
            }
            TAG_SIGNED => {
                let signer = self.identifier()?;
                let inner = self.message()?;
                sign(&inner, signer)
            }
            tag => return Err(CodecError::Tag { tag, pos }),
        };
        if self.pos != end {
            return Err(CodecError::Frame(pos));
        }
        Ok(m)
    }

    fn payload(&mut self) -> Result<Payload, CodecError> {
        let pos = self.pos;
        match self.u8()? {
            TAG_BIT => Ok(Payload::Bit(self.u8()?)),
            TAG_BLOCK => {
                let parent = BlockId(self.u64()?);
                let producer = self.identifier()?;
                let height = self.u64()?;
                let slot = match self.u8()? {
                    0 => None,
                    _ => Some(self.u64()?),
                };
                let value = match self.u8()? {
                    0 => None,
                    _ => Some(self.u8()?),
                };
                Ok(Payload::Block(Block { parent, producer, height, slot, value }))
            }
            TAG_BYTES => {
                let n = self.u32()? as usize;
                Ok(Payload::Bytes(self.take(n)?.to_vec()))
            }
            TAG_BUNDLE => {
                let n = self.u32()? as usize;
                let mut items = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    items.push(self.message()?);
                }
                Ok(Payload::Bundle(items))
            }
            tag => Err(CodecError::Tag { tag, pos }),
        }
    }
}
