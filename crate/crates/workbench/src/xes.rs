//! XES reading and writing.
//!
//! Reads the flat subset of XES used by event logs in practice: `log`,
//! `trace` and `event` elements carrying `string`, `int`, `float`,
//! `boolean`, `date` and `id` attributes. Nested attribute children, lists,
//! containers, extensions, globals and classifiers are skipped.

use std::collections::BTreeMap;

use chrono::{DateTime, FixedOffset, NaiveDateTime, SecondsFormat};
use ppm_core::log::{KEY_ACTIVITY, KEY_RESOURCE, KEY_TIMESTAMP};
use ppm_core::prelude::*;
use quick_xml::events::{BytesDecl, BytesEnd, BytesStart, Event as Xml};
use quick_xml::{Reader, Writer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum XesError {
    #[error("malformed XES at line {line}, column {column}: {message}")]
    Malformed { line: usize, column: usize, message: String },
    #[error("trace `{trace}`: {message}")]
    Invalid { trace: String, message: String },
    #[error(transparent)]
    Log(#[from] ppm_core::Error),
}

/// 1-based line and column of a byte offset.
fn locate(input: &[u8], offset: usize) -> (usize, usize) {
    let offset = offset.min(input.len());
    let before = &input[..offset];
    let line = before.iter().filter(|b| **b == b'\n').count() + 1;
    let column = offset - before.iter().rposition(|b| *b == b'\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

pub fn parse_timestamp(s: &str) -> Option<Timestamp> {
    let s = s.trim();
    let dt = DateTime::parse_from_rfc3339(s)
        .or_else(|_| DateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f%z"))
        .ok()
        .or_else(|| {
            let naive = NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f").ok()?;
            Some(naive.and_utc().fixed_offset())
        })?;
    Some(Timestamp { micros: dt.timestamp_micros(), offset_secs: dt.offset().local_minus_utc() })
}

pub fn format_timestamp(t: Timestamp) -> String {
    let offset = FixedOffset::east_opt(t.offset_secs).unwrap_or(FixedOffset::east_opt(0).unwrap());
    match DateTime::from_timestamp_micros(t.micros) {
        Some(utc) => utc.with_timezone(&offset).to_rfc3339_opts(SecondsFormat::AutoSi, false),
        None => t.micros.to_string(),
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "true" | "1" => Some(true),
        "false" | "0" => Some(false),
        _ => None,
    }
}

#[derive(Default)]
struct RawEvent {
    attrs: BTreeMap<String, AttributeValue>,
}

#[derive(Default)]
struct RawTrace {
    attrs: BTreeMap<String, AttributeValue>,
    events: Vec<RawEvent>,
}

enum Scope {
    Log,
    Trace,
    Event,
}

struct Parser<'a> {
    input: &'a [u8],
    log_attrs: BTreeMap<String, AttributeValue>,
    traces: Vec<RawTrace>,
    scope: Vec<Scope>,
    seen_root: bool,
}

impl<'a> Parser<'a> {
    fn malformed(&self, offset: usize, message: impl Into<String>) -> XesError {
        let (line, column) = locate(self.input, offset);
        XesError::Malformed { line, column, message: message.into() }
    }

    fn attribute(&self, e: &BytesStart, offset: usize) -> Result<Option<(String, AttributeValue)>, XesError> {
        let tag = e.name();
        let tag = std::str::from_utf8(tag.as_ref()).map_err(|_| self.malformed(offset, "non UTF-8 tag"))?;
        if !matches!(tag, "string" | "id" | "int" | "float" | "boolean" | "date") {
            return Ok(None);
        }
        let mut key = None;
        let mut value = None;
        for a in e.attributes() {
            let a = a.map_err(|err| self.malformed(offset, err.to_string()))?;
            let text = a.unescape_value().map_err(|err| self.malformed(offset, err.to_string()))?;
            match a.key.as_ref() {
                b"key" => key = Some(text.into_owned()),
                b"value" => value = Some(text.into_owned()),
                _ => {}
            }
        }
        let Some(key) = key else {
            return Err(self.malformed(offset, format!("<{tag}> without a key")));
        };
        let raw = value.unwrap_or_default();
        let bad = |kind: &str| self.malformed(offset, format!("`{key}`: `{raw}` is not a valid {kind}"));
        let parsed = match tag {
            "string" | "id" => AttributeValue::String(raw.clone()),
            "int" => AttributeValue::Integer(raw.trim().parse().map_err(|_| bad("int"))?),
            "float" => AttributeValue::Real(raw.trim().parse().map_err(|_| bad("float"))?),
            "boolean" => AttributeValue::Boolean(parse_bool(&raw).ok_or_else(|| bad("boolean"))?),
            _ => AttributeValue::Timestamp(parse_timestamp(&raw).ok_or_else(|| bad("date"))?),
        };
        Ok(Some((key, parsed)))
    }

    fn assign(&mut self, key: String, value: AttributeValue) {
        let target = match self.scope.last() {
            Some(Scope::Event) => self.traces.last_mut().and_then(|t| t.events.last_mut()).map(|e| &mut e.attrs),
            Some(Scope::Trace) => self.traces.last_mut().map(|t| &mut t.attrs),
            Some(Scope::Log) => Some(&mut self.log_attrs),
            None => None,
        };
        if let Some(map) = target {
            map.insert(key, value);
        }
    }

    /// Handles an opening or self-closing element. Returns true when the
    /// element's children should be skipped.
    fn open(&mut self, e: &BytesStart, offset: usize, empty: bool) -> Result<bool, XesError> {
        let name = e.name();
        match (name.as_ref(), self.scope.last()) {
            (b"log", None) if !self.seen_root => {
                self.seen_root = true;
                if !empty {
                    self.scope.push(Scope::Log);
                }
                Ok(false)
            }
            (_, None) => Err(self.malformed(offset, "expected a single <log> root element")),
            (b"trace", Some(Scope::Log)) => {
                self.traces.push(RawTrace::default());
                if !empty {
                    self.scope.push(Scope::Trace);
                }
                Ok(false)
            }
            (b"event", Some(Scope::Trace)) => {
                if let Some(t) = self.traces.last_mut() {
                    t.events.push(RawEvent::default());
                }
                if !empty {
                    self.scope.push(Scope::Event);
                }
                Ok(false)
            }
            (b"trace" | b"event", _) => Err(self.malformed(offset, "misplaced <trace> or <event>")),
            _ => {
                if let Some((key, value)) = self.attribute(e, offset)? {
                    self.assign(key, value);
                }
                Ok(!empty)
            }
        }
    }

    fn run(mut self) -> Result<(BTreeMap<String, AttributeValue>, Vec<RawTrace>), XesError> {
        let mut reader = Reader::from_reader(self.input);
        reader.config_mut().trim_text(true);
        let mut buf = Vec::new();
        // depth of a subtree being skipped, counted in open elements
        let mut skipping = 0usize;
        loop {
            let offset = reader.buffer_position() as usize;
            let event = reader.read_event_into(&mut buf).map_err(|err| {
                let at = reader.error_position() as usize;
                self.malformed(at, err.to_string())
            })?;
            match event {
                Xml::Eof => break,
                Xml::Start(_) if skipping > 0 => skipping += 1,
                Xml::End(_) if skipping > 0 => skipping -= 1,
                _ if skipping > 0 => {}
                Xml::Start(e) => {
                    if self.open(&e, offset, false)? {
                        skipping = 1;
                    }
                }
                Xml::Empty(e) => {
                    self.open(&e, offset, true)?;
                }
                Xml::End(_) => {
                    self.scope.pop();
                }
                _ => {}
            }
            buf.clear();
        }
        if !self.seen_root {
            return Err(self.malformed(self.input.len(), "no <log> element"));
        }
        Ok((self.log_attrs, self.traces))
    }
}

fn build_event(trace_id: &str, position: usize, raw: RawEvent) -> Result<Event, XesError> {
    let invalid = |message: String| XesError::Invalid { trace: trace_id.to_string(), message };
    let mut attrs = raw.attrs;
    let activity = match attrs.remove(KEY_ACTIVITY) {
        Some(AttributeValue::String(a)) if !a.is_empty() => a,
        Some(other) if !matches!(other, AttributeValue::String(_)) => other.to_string(),
        _ => return Err(invalid(format!("event {position} lacks {KEY_ACTIVITY}"))),
    };
    let timestamp = match attrs.remove(KEY_TIMESTAMP) {
        Some(AttributeValue::Timestamp(t)) => t,
        Some(AttributeValue::String(s)) => {
            parse_timestamp(&s).ok_or_else(|| invalid(format!("event {position} has an unparseable {KEY_TIMESTAMP}")))?
        }
        _ => return Err(invalid(format!("event {position} lacks {KEY_TIMESTAMP}"))),
    };
    let resource = attrs.remove(KEY_RESOURCE).map(|r| r.to_string());
    Ok(Event { activity, timestamp, resource, payload: attrs })
}

/// Parses an XES document. `fallback_name` names the log when the document
/// carries no log-level `concept:name`.
pub fn parse_xes(bytes: &[u8], fallback_name: &str) -> Result<EventLog, XesError> {
    let parser = Parser { input: bytes, log_attrs: BTreeMap::new(), traces: Vec::new(), scope: Vec::new(), seen_root: false };
    let (log_attrs, raw_traces) = parser.run()?;
    let name = match log_attrs.get(KEY_ACTIVITY) {
        Some(v) => v.to_string(),
        None => fallback_name.to_string(),
    };
    let mut traces = Vec::with_capacity(raw_traces.len());
    for (i, raw) in raw_traces.into_iter().enumerate() {
        let mut attrs = raw.attrs;
        let id = match attrs.remove(KEY_ACTIVITY) {
            Some(v) => v.to_string(),
            None => format!("#{}", i + 1),
        };
        let events = raw
            .events
            .into_iter()
            .enumerate()
            .map(|(j, e)| build_event(&id, j + 1, e))
            .collect::<Result<Vec<_>, _>>()?;
        traces.push(Trace { id, events, attributes: attrs });
    }
    Ok(EventLog::new(name, traces)?)
}

fn attribute_element(key: &str, value: &AttributeValue) -> BytesStart<'static> {
    let (tag, text) = match value {
        AttributeValue::String(s) => ("string", s.clone()),
        AttributeValue::Integer(i) => ("int", i.to_string()),
        AttributeValue::Real(r) => ("float", r.to_string()),
        AttributeValue::Boolean(b) => ("boolean", b.to_string()),
        AttributeValue::Timestamp(t) => ("date", format_timestamp(*t)),
    };
    let mut el = BytesStart::new(tag);
    el.push_attribute(("key", key));
    el.push_attribute(("value", text.as_str()));
    el
}

const EXTENSIONS: [(&str, &str, &str); 3] = [
    ("Concept", "concept", "http://www.xes-standard.org/concept.xesext"),
    ("Time", "time", "http://www.xes-standard.org/time.xesext"),
    ("Organizational", "org", "http://www.xes-standard.org/org.xesext"),
];

pub fn serialize_xes(log: &EventLog) -> Vec<u8> {
    let mut w = Writer::new_with_indent(Vec::new(), b' ', 2);
    // writes into a Vec cannot fail
    let mut put = |ev: Xml| w.write_event(ev).expect("in-memory write");
    put(Xml::Decl(BytesDecl::new("1.0", Some("UTF-8"), None)));
    put(Xml::Start(BytesStart::new("log").with_attributes([("xes.version", "1.0"), ("xes.features", "")])));
    for (name, prefix, uri) in EXTENSIONS {
        put(Xml::Empty(BytesStart::new("extension").with_attributes([("name", name), ("prefix", prefix), ("uri", uri)])));
    }
    put(Xml::Empty(attribute_element(KEY_ACTIVITY, &AttributeValue::String(log.name.clone()))));
    for trace in &log.traces {
        put(Xml::Start(BytesStart::new("trace")));
        put(Xml::Empty(attribute_element(KEY_ACTIVITY, &AttributeValue::String(trace.id.clone()))));
        for (k, v) in &trace.attributes {
            put(Xml::Empty(attribute_element(k, v)));
        }
        for e in &trace.events {
            put(Xml::Start(BytesStart::new("event")));
            put(Xml::Empty(attribute_element(KEY_ACTIVITY, &AttributeValue::String(e.activity.clone()))));
            put(Xml::Empty(attribute_element(KEY_TIMESTAMP, &AttributeValue::Timestamp(e.timestamp))));
            if let Some(r) = &e.resource {
                put(Xml::Empty(attribute_element(KEY_RESOURCE, &AttributeValue::String(r.clone()))));
            }
            for (k, v) in &e.payload {
                put(Xml::Empty(attribute_element(k, v)));
            }
            put(Xml::End(BytesEnd::new("event")));
        }
        put(Xml::End(BytesEnd::new("trace")));
    }
    put(Xml::End(BytesEnd::new("log")));
    let mut out = w.into_inner();
    out.push(b'\n');
    out
}
