//! JSON-lines event log. One [`Event`] per line, tagged by `type`.

use serde::{Deserialize, Serialize};

use crate::epidemic::EpidemicParams;
use crate::routing::SessionKind;
use crate::sim::{ContactRecord, TriggerKind};
use crate::trust::{DeviceId, ProfileKey, Tick, TrustModelParams};

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub population: Vec<DeviceId>,
    pub ticks_total: Tick,
    pub tick_length: f64,
    /// Devices that run the protocol; everyone else is invisible to tracing.
    pub adopters: Vec<DeviceId>,
    pub initial_infected: Vec<DeviceId>,
    pub trust_params: TrustModelParams,
    pub epidemic: EpidemicParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Header(Box<LogHeader>),
    ModeFlip {
        tick: Tick,
        device: DeviceId,
        airplane: bool,
    },
    /// A proximity contact that just closed.
    Contact {
        tick: Tick,
        #[serde(flatten)]
        record: ContactRecord,
    },
    Trigger {
        tick: Tick,
        device: DeviceId,
        trigger: TriggerKind,
    },
    Discovery {
        tick: Tick,
        device: DeviceId,
        peers: Vec<DeviceId>,
        previously_known: usize,
    },
    TrustUpdate {
        tick: Tick,
        from: DeviceId,
        to: DeviceId,
        profile: ProfileKey,
        score: f64,
    },
    MessageBlocked {
        tick: Tick,
        key_id: u64,
        sender: DeviceId,
        receiver: DeviceId,
        score: f64,
        required: f64,
    },
    RelayHop {
        tick: Tick,
        key_id: u64,
        node: DeviceId,
    },
    Delivery {
        tick: Tick,
        key_id: u64,
        sender: DeviceId,
        receiver: DeviceId,
        session: SessionKind,
        hops: Vec<DeviceId>,
    },
    DeliveryFailed {
        tick: Tick,
        key_id: u64,
        sender: DeviceId,
        receiver: DeviceId,
        reason: String,
    },
    Reveal {
        tick: Tick,
        key_id: u64,
        receiver: DeviceId,
        revealed: Vec<usize>,
        complete: bool,
    },
    /// Ground truth: `infector` exposed `infectee`. Reserved for evaluation.
    Exposure {
        tick: Tick,
        infector: DeviceId,
        infectee: DeviceId,
    },
    Onset {
        tick: Tick,
        device: DeviceId,
    },
    Confirmed {
        tick: Tick,
        device: DeviceId,
        onset: Tick,
    },
    Recovery {
        tick: Tick,
        device: DeviceId,
    },
}

impl Event {
    pub fn tick(&self) -> Tick {
        match self {
            Event::Header(_) => 0,
            Event::ModeFlip { tick, .. }
            | Event::Contact { tick, .. }
            | Event::Trigger { tick, .. }
            | Event::Discovery { tick, .. }
            | Event::TrustUpdate { tick, .. }
            | Event::MessageBlocked { tick, .. }
            | Event::RelayHop { tick, .. }
            | Event::Delivery { tick, .. }
            | Event::DeliveryFailed { tick, .. }
            | Event::Reveal { tick, .. }
            | Event::Exposure { tick, .. }
            | Event::Onset { tick, .. }
            | Event::Confirmed { tick, .. }
            | Event::Recovery { tick, .. } => *tick,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("event log does not start with a header")]
    MissingHeader,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn header(&self) -> Option<&LogHeader> {
        match self.events.first() {
            Some(Event::Header(h)) => Some(h),
            _ => None,
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, LogError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(line).map_err(|source| LogError::Parse {
                line: i + 1,
                source,
            })?;
            events.push(event);
        }
        let log = EventLog { events };
        if log.header().is_none() {
            return Err(LogError::MissingHeader);
        }
        Ok(log)
    }
}
