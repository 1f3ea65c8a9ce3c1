//! Asynchronous reliable message substrate. Nothing is lost or duplicated;
//! the adversary picks which in-flight message is delivered next.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{InvocationId, ProcessId};
use crate::value::{Timestamp, Value};

pub type MsgId = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("message {msg} is not deliverable to process {proc}")]
    NotDeliverable { proc: ProcessId, msg: MsgId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Query,
    Reply,
    Update,
    Ack,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Query,
    Reply { value: Value, ts: Timestamp },
    Update { value: Value, ts: Timestamp },
    Ack,
}

impl Payload {
    pub fn tag(&self) -> Tag {
        match self {
            Payload::Query => Tag::Query,
            Payload::Reply { .. } => Tag::Reply,
            Payload::Update { .. } => Tag::Update,
            Payload::Ack => Tag::Ack,
        }
    }
}

/// The client invocation a message works for, and the sequence number of the
/// step that sent the request it belongs to. Replies and acks inherit the
/// cause of their request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cause {
    pub inv: InvocationId,
    pub seq: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub id: MsgId,
    pub sender: ProcessId,
    pub dest: ProcessId,
    pub object: u32,
    pub sn: u32,
    pub payload: Payload,
    pub cause: Cause,
}

impl Message {
    pub fn tag(&self) -> Tag {
        self.payload.tag()
    }
}

/// The set of undelivered messages, kept in send order.
#[derive(Clone, Debug, Default)]
pub struct Network {
    in_flight: Vec<Message>,
    next_id: MsgId,
    delivered: u64,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn send(
        &mut self,
        sender: ProcessId,
        dest: ProcessId,
        object: u32,
        sn: u32,
        payload: Payload,
        cause: Cause,
    ) -> &Message {
        let id = self.next_id;
        self.next_id += 1;
        self.in_flight.push(Message {
            id,
            sender,
            dest,
            object,
            sn,
            payload,
            cause,
        });
        self.in_flight.last().unwrap()
    }

    /// One message per destination `0..n`, the sender included.
    pub fn broadcast(
        &mut self,
        sender: ProcessId,
        n: usize,
        object: u32,
        sn: u32,
        payload: Payload,
        cause: Cause,
    ) -> Vec<MsgId> {
        (0..n as ProcessId)
            .map(|dest| {
                self.send(sender, dest, object, sn, payload.clone(), cause)
                    .id
            })
            .collect()
    }

    pub fn deliverable(&self, p: ProcessId) -> Vec<MsgId> {
        self.in_flight
            .iter()
            .filter(|m| m.dest == p)
            .map(|m| m.id)
            .collect()
    }

    pub fn get(&self, id: MsgId) -> Option<&Message> {
        self.in_flight.iter().find(|m| m.id == id)
    }

    /// Removes a message addressed to `p`.
    pub fn take(&mut self, p: ProcessId, id: MsgId) -> Result<Message, NetError> {
        match self
            .in_flight
            .iter()
            .position(|m| m.id == id && m.dest == p)
        {
            Some(i) => {
                self.delivered += 1;
                Ok(self.in_flight.remove(i))
            }
            None => Err(NetError::NotDeliverable { proc: p, msg: id }),
        }
    }

    pub fn in_flight(&self) -> &[Message] {
        &self.in_flight
    }

    /// Drops in-flight messages failing `keep`; they are never delivered.
    pub(crate) fn retain(&mut self, keep: impl FnMut(&Message) -> bool) {
        self.in_flight.retain(keep);
    }

    pub fn sent_count(&self) -> u64 {
        self.next_id
    }

    pub fn delivered_count(&self) -> u64 {
        self.delivered
    }
}
