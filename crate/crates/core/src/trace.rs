//! Ground-truth event log and its JSON-lines encoding.
//!
//! Every line is one [`TraceEvent`] with the fields `time`, `process`, `kind`,
//! `envelope`, `detail`, in that order. The envelope object carries `id`,
//! `origin`, `dest`, `kind`, `tag`, `actor`, `subject`, `seq` and `msg`;
//! fields that do not apply to an envelope kind are `null`.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    Body, ControlTag, Envelope, EnvelopeId, EnvelopeKind, MsgId, PairSeq, ProcessId, SimTime,
    Subject,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Send,
    Arrive,
    Push,
    Pop,
    Deliver,
    AckSent,
    TimerStart,
    TimerStop,
    Timeout,
    Delete,
    Drop,
}

/// Flattened view of an envelope as written to the trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopeInfo {
    pub id: EnvelopeId,
    pub origin: ProcessId,
    pub dest: ProcessId,
    pub kind: EnvelopeKind,
    pub tag: Option<ControlTag>,
    pub actor: Option<ProcessId>,
    pub subject: Option<Subject>,
    pub seq: Option<PairSeq>,
    pub msg: Option<MsgId>,
}

impl From<&Envelope> for EnvelopeInfo {
    fn from(env: &Envelope) -> Self {
        let mut info = EnvelopeInfo {
            id: env.id,
            origin: env.origin,
            dest: env.dest,
            kind: env.kind(),
            tag: None,
            actor: None,
            subject: None,
            seq: None,
            msg: None,
        };
        match &env.body {
            Body::App(a) => {
                info.seq = Some(a.seq);
                info.msg = Some(a.msg);
            }
            Body::Control(c) => {
                info.tag = Some(c.tag);
                info.actor = Some(c.actor);
                info.subject = Some(c.subject.clone());
                info.msg = Some(c.msg);
            }
            Body::Ack(a) => info.msg = Some(a.msg),
        }
        info
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub time: SimTime,
    pub process: ProcessId,
    pub kind: EventKind,
    pub envelope: Option<EnvelopeInfo>,
    pub detail: String,
}

impl TraceEvent {
    pub fn is(&self, kind: EventKind) -> bool {
        self.kind == kind
    }

    pub fn envelope_kind(&self) -> Option<EnvelopeKind> {
        self.envelope.as_ref().map(|e| e.kind)
    }

    pub fn control_tag(&self) -> Option<ControlTag> {
        self.envelope.as_ref().and_then(|e| e.tag)
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("event {index}: {reason}")]
    Malformed { index: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(events: Vec<TraceEvent>) -> Self {
        Trace { events }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for event in &self.events {
            serde_json::to_writer(&mut out, event)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let mut events = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(line).map_err(|source| TraceError::Parse {
                line: i + 1,
                source,
            })?;
            events.push(event);
        }
        Ok(Trace { events })
    }

    /// Checks the structural invariants every consumer relies on: times never
    /// decrease and deliveries name application envelopes only.
    pub fn check_well_formed(&self) -> Result<(), TraceError> {
        let mut last = SimTime::ZERO;
        for (index, e) in self.events.iter().enumerate() {
            if e.time < last {
                return Err(TraceError::Malformed {
                    index,
                    reason: format!("time goes backwards ({} after {})", e.time, last),
                });
            }
            last = e.time;
            if e.kind == EventKind::Deliver && e.envelope_kind() != Some(EnvelopeKind::App) {
                return Err(TraceError::Malformed {
                    index,
                    reason: "deliver event without an application envelope".into(),
                });
            }
            if matches!(e.kind, EventKind::Send | EventKind::AckSent) {
                match &e.envelope {
                    Some(env) if env.origin == e.process => {}
                    Some(env) => {
                        return Err(TraceError::Malformed {
                            index,
                            reason: format!(
                                "{} emitted an envelope with origin {}",
                                e.process, env.origin
                            ),
                        })
                    }
                    None => {
                        return Err(TraceError::Malformed {
                            index,
                            reason: "send event without envelope".into(),
                        })
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{AppBody, SimTime};

    fn sample() -> Trace {
        let env = Envelope {
            id: EnvelopeId(0),
            origin: ProcessId(0),
            dest: ProcessId(1),
            body: Body::App(AppBody {
                msg: MsgId { sender: ProcessId(0), n: 1 },
                seq: PairSeq { sender: ProcessId(0), receiver: ProcessId(1), k: 1 },
                payload: 7,
                clock: None,
                group: None,
            }),
            sent_at: SimTime(10),
            arrive_at: SimTime(13),
        };
        Trace::new(vec![TraceEvent {
            time: SimTime(10),
            process: ProcessId(0),
            kind: EventKind::Send,
            envelope: Some(EnvelopeInfo::from(&env)),
            detail: String::new(),
        }])
    }

    #[test]
    fn jsonl_field_order_is_fixed() {
        let line = sample().to_jsonl();
        assert_eq!(
            line.trim_end(),
            r#"{"time":10,"process":0,"kind":"send","envelope":{"id":0,"origin":0,"dest":1,"kind":"app","tag":null,"actor":null,"subject":null,"seq":{"sender":0,"receiver":1,"k":1},"msg":{"sender":0,"n":1}},"detail":""}"#
        );
    }

    #[test]
    fn jsonl_round_trips() {
        let t = sample();
        assert_eq!(Trace::from_jsonl(&t.to_jsonl()).unwrap(), t);
    }

    #[test]
    fn malformed_time_is_rejected_with_position() {
        let mut t = sample();
        let mut e = t.events[0].clone();
        e.time = SimTime(3);
        e.kind = EventKind::Arrive;
        t.events.push(e);
        match t.check_well_formed() {
            Err(TraceError::Malformed { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
