//! Events, event chains and the completion grammar.
//!
//! A completion looks like
//!
//! ```text
//! <think><event>Time:2.0-4.5,Des:chef chops onions</event> ... reasoning ...</think><answer>B</answer>
//! ```
//!
//! [`parse_completion`] is total: malformed input never aborts, it yields a
//! best-effort [`ParsedCompletion`] with `tag_valid == false` and a list of
//! [`Diagnostic`]s naming the broken rule.

use serde::{Deserialize, Serialize};

use crate::error::{CoeError, Result};

pub const EVENT_OPEN: &str = "<event>";
pub const EVENT_CLOSE: &str = "</event>";
pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";
pub const TIME_PREFIX: &str = "Time:";
pub const DES_PREFIX: &str = ",Des:";

/// A timestamped event: `[t_start, t_end]` seconds plus a textual description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_start: f64,
    pub t_end: f64,
    pub description: String,
}

impl Event {
    pub fn new(t_start: f64, t_end: f64, description: impl Into<String>) -> Result<Self> {
        let event = Event {
            t_start,
            t_end,
            description: description.into(),
        };
        event.validate()?;
        Ok(event)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite()) || self.t_start < 0.0 {
            return Err(CoeError::InvariantViolation(format!(
                "event timestamps must be finite and non-negative: {}-{}",
                self.t_start, self.t_end
            )));
        }
        if self.t_start > self.t_end {
            return Err(CoeError::InvariantViolation(format!(
                "event starts after it ends: {}-{}",
                self.t_start, self.t_end
            )));
        }
        if self.description.trim().is_empty() {
            return Err(CoeError::InvariantViolation(
                "event description is empty".into(),
            ));
        }
        if self.description.contains(['<', '>']) {
            return Err(CoeError::InvariantViolation(
                "event description contains tag markup".into(),
            ));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Temporally ordered sequence of events.
///
/// Chains produced by the parser may violate the ordering (the completion is
/// then marked invalid); [`EventChain::new`] enforces it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventChain {
    pub events: Vec<Event>,
}

impl EventChain {
    pub fn new(events: Vec<Event>) -> Result<Self> {
        let chain = EventChain { events };
        if !chain.is_chronological() {
            return Err(CoeError::InvariantViolation(
                "event chain is not ordered by start time".into(),
            ));
        }
        Ok(chain)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Event> {
        self.events.iter()
    }

    pub fn is_chronological(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t_start <= w[1].t_start)
    }

    /// Every event moved by `offset` seconds; starts are floored at zero.
    pub fn shifted(&self, offset: f64) -> EventChain {
        EventChain {
            events: self
                .events
                .iter()
                .map(|e| Event {
                    t_start: (e.t_start + offset).max(0.0),
                    t_end: (e.t_end + offset).max(0.0),
                    description: e.description.clone(),
                })
                .collect(),
        }
    }
}

/// Which validity rule a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// An `<event>` without its `</event>`, or a stray closing tag.
    UnclosedTag,
    /// Timestamp missing, unparseable, negative or reversed.
    BadTimestamp,
    /// Event body does not follow `Time:a-b,Des:text`.
    MalformedEvent,
    NoEvents,
    OutOfOrder,
    MissingAnswer,
    DuplicateAnswer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rule: Rule,
    /// Byte offset into the raw completion.
    pub position: usize,
    pub message: String,
}

impl Diagnostic {
    fn new(rule: Rule, position: usize, message: impl Into<String>) -> Self {
        Diagnostic {
            rule,
            position,
            message: message.into(),
        }
    }
}

/// A policy output split into event chain, free reasoning and answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedCompletion {
    pub chain: EventChain,
    pub reasoning_text: String,
    pub answer: Option<String>,
    pub tag_valid: bool,
    pub raw_text: String,
    pub diagnostics: Vec<Diagnostic>,
}

impl ParsedCompletion {
    pub fn has_rule(&self, rule: Rule) -> bool {
        self.diagnostics.iter().any(|d| d.rule == rule)
    }

    /// Diagnostics as a JSON array of `{rule, position, message}`.
    pub fn diagnostics_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.diagnostics).unwrap_or(serde_json::Value::Null)
    }

    /// Render chain, reasoning and answer in the canonical grammar.
    pub fn to_canonical(&self) -> String {
        let mut out = String::from(THINK_OPEN);
        for e in self.chain.iter() {
            out.push_str(&format_event(e));
        }
        out.push_str(&self.reasoning_text);
        out.push_str(THINK_CLOSE);
        if let Some(answer) = &self.answer {
            out.push_str(ANSWER_OPEN);
            out.push_str(answer);
            out.push_str(ANSWER_CLOSE);
        }
        out
    }
}

fn format_event(e: &Event) -> String {
    format!(
        "{EVENT_OPEN}{TIME_PREFIX}{:.1}-{:.1}{DES_PREFIX}{}{EVENT_CLOSE}",
        e.t_start, e.t_end, e.description
    )
}

/// Canonical `<event>Time:a-b,Des:D</event>` rendering with one decimal place.
pub fn serialize_event(e: &Event) -> Result<String> {
    e.validate()?;
    Ok(format_event(e))
}

/// Returns 1 when the completion satisfies every tag rule, else 0.
pub fn tag_validity_indicator(parsed: &ParsedCompletion) -> u8 {
    u8::from(parsed.tag_valid)
}

/// Number of well-formed events recovered, regardless of validity.
pub fn chain_length(parsed: &ParsedCompletion) -> usize {
    parsed.chain.len()
}

fn parse_decimal(s: &str) -> Option<f64> {
    let s = s.trim();
    let mut digits = 0;
    let mut dots = 0;
    for c in s.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return None,
        }
    }
    if digits == 0 || dots > 1 || s.starts_with('.') || s.ends_with('.') {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_event_body(body: &str, position: usize) -> std::result::Result<Event, Diagnostic> {
    let body = body.trim();
    let Some(rest) = body.strip_prefix(TIME_PREFIX) else {
        return Err(Diagnostic::new(
            Rule::MalformedEvent,
            position,
            "event body does not start with Time:",
        ));
    };
    let Some(des_at) = rest.find(DES_PREFIX) else {
        return Err(Diagnostic::new(
            Rule::MalformedEvent,
            position,
            "event body has no ,Des: field",
        ));
    };
    let (times, des) = (&rest[..des_at], &rest[des_at + DES_PREFIX.len()..]);
    let mut parts = times.split('-');
    let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
        return Err(Diagnostic::new(
            Rule::BadTimestamp,
            position,
            format!("expected start-end, got {times:?}"),
        ));
    };
    let (Some(t_start), Some(t_end)) = (parse_decimal(a), parse_decimal(b)) else {
        return Err(Diagnostic::new(
            Rule::BadTimestamp,
            position,
            format!("unparseable timestamps {times:?}"),
        ));
    };
    if t_start > t_end {
        return Err(Diagnostic::new(
            Rule::BadTimestamp,
            position,
            format!("start {t_start} after end {t_end}"),
        ));
    }
    let description = des.trim();
    if description.is_empty() {
        return Err(Diagnostic::new(
            Rule::MalformedEvent,
            position,
            "empty description",
        ));
    }
    Ok(Event {
        t_start,
        t_end,
        description: description.to_string(),
    })
}

fn next_tag(text: &str, from: usize, tags: &[&'static str]) -> Option<(usize, &'static str)> {
    tags.iter()
        .filter_map(|tag| text[from..].find(tag).map(|i| (from + i, *tag)))
        .min_by_key(|(i, _)| *i)
}

/// Removes complete event regions and any leftover event tags.
fn strip_events(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pos = 0;
    while let Some((at, tag)) = next_tag(text, pos, &[EVENT_OPEN, EVENT_CLOSE]) {
        out.push_str(&text[pos..at]);
        pos = at + tag.len();
        if tag == EVENT_OPEN {
            if let Some((close_at, close)) = next_tag(text, pos, &[EVENT_OPEN, EVENT_CLOSE]) {
                if close == EVENT_CLOSE {
                    pos = close_at + close.len();
                }
            }
        }
    }
    out.push_str(&text[pos..]);
    out
}

fn extract_reasoning(text: &str) -> String {
    let inner = match text.find(THINK_OPEN) {
        Some(open) => {
            let start = open + THINK_OPEN.len();
            let end = text[start..]
                .find(THINK_CLOSE)
                .map(|i| start + i)
                .or_else(|| text[start..].find(ANSWER_OPEN).map(|i| start + i))
                .unwrap_or(text.len());
            text[start..end].to_string()
        }
        None => {
            let cut = text.find(ANSWER_OPEN).unwrap_or(text.len());
            text[..cut].to_string()
        }
    };
    strip_events(&inner).trim().to_string()
}

fn extract_answer(text: &str, diagnostics: &mut Vec<Diagnostic>) -> Option<String> {
    let opens: Vec<usize> = text.match_indices(ANSWER_OPEN).map(|(i, _)| i).collect();
    let closes = text.matches(ANSWER_CLOSE).count();
    let Some(&first) = opens.first() else {
        diagnostics.push(Diagnostic::new(
            Rule::MissingAnswer,
            text.len(),
            "no <answer> block",
        ));
        return None;
    };
    if opens.len() > 1 || closes > 1 {
        diagnostics.push(Diagnostic::new(
            Rule::DuplicateAnswer,
            opens.get(1).copied().unwrap_or(first),
            format!("{} <answer> and {closes} </answer> tags", opens.len()),
        ));
    }
    let start = first + ANSWER_OPEN.len();
    let Some(len) = text[start..].find(ANSWER_CLOSE) else {
        diagnostics.push(Diagnostic::new(
            Rule::MissingAnswer,
            first,
            "<answer> is never closed",
        ));
        return None;
    };
    let content = text[start..start + len].trim();
    if content.is_empty() || content.contains(['<', '>']) {
        diagnostics.push(Diagnostic::new(
            Rule::MissingAnswer,
            first,
            "answer block is empty or contains markup",
        ));
        return None;
    }
    Some(content.to_string())
}

/// Parses a completion into its event chain, reasoning and answer.
///
/// `tag_valid` holds iff every `<event>` is closed, every event body is
/// well formed with non-negative ordered timestamps, at least one event is
/// present, events are ordered by start time and exactly one well-formed
/// `<answer>` block exists. Malformed events are dropped from the chain.
pub fn parse_completion(text: &str) -> ParsedCompletion {
    let mut diagnostics = Vec::new();
    let mut events = Vec::new();

    let mut pos = 0;
    while let Some((at, tag)) = next_tag(text, pos, &[EVENT_OPEN, EVENT_CLOSE]) {
        if tag == EVENT_CLOSE {
            diagnostics.push(Diagnostic::new(
                Rule::UnclosedTag,
                at,
                "</event> without a matching <event>",
            ));
            pos = at + tag.len();
            continue;
        }
        let body_start = at + EVENT_OPEN.len();
        match next_tag(text, body_start, &[EVENT_OPEN, EVENT_CLOSE]) {
            Some((close_at, EVENT_CLOSE)) => {
                match parse_event_body(&text[body_start..close_at], at) {
                    Ok(event) => events.push(event),
                    Err(diag) => diagnostics.push(diag),
                }
                pos = close_at + EVENT_CLOSE.len();
            }
            _ => {
                diagnostics.push(Diagnostic::new(
                    Rule::UnclosedTag,
                    at,
                    "<event> is never closed",
                ));
                pos = body_start;
            }
        }
    }

    if events.is_empty() {
        diagnostics.push(Diagnostic::new(Rule::NoEvents, 0, "no well-formed events"));
    }
    for (i, w) in events.windows(2).enumerate() {
        if w[0].t_start > w[1].t_start {
            diagnostics.push(Diagnostic::new(
                Rule::OutOfOrder,
                i + 1,
                format!(
                    "event {} starts at {} before previous start {}",
                    i + 1,
                    w[1].t_start,
                    w[0].t_start
                ),
            ));
        }
    }

    let answer = extract_answer(text, &mut diagnostics);
    let tag_valid = diagnostics.is_empty();

    ParsedCompletion {
        chain: EventChain { events },
        reasoning_text: extract_reasoning(text),
        answer,
        tag_valid,
        raw_text: text.to_string(),
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_event_completion() {
        let text = "<think><event>Time:2.0-4.5,Des:chef chops onions</event>reasoning…</think><answer>B</answer>";
        let p = parse_completion(text);
        assert!(p.tag_valid, "{:?}", p.diagnostics);
        assert_eq!(
            p.chain.events,
            vec![Event::new(2.0, 4.5, "chef chops onions").unwrap()]
        );
        assert_eq!(p.answer.as_deref(), Some("B"));
        assert_eq!(p.reasoning_text, "reasoning…");
        assert_eq!(tag_validity_indicator(&p), 1);
    }

    #[test]
    fn empty_input_is_invalid() {
        let p = parse_completion("");
        assert!(p.chain.is_empty());
        assert!(!p.tag_valid);
        assert!(p.answer.is_none());
        assert_eq!(chain_length(&p), 0);
    }

    #[test]
    fn out_of_order_events_keep_both() {
        let text = "<think><event>Time:5.0-6.0,Des:b</event><event>Time:1.0-2.0,Des:a</event></think><answer>A</answer>";
        let p = parse_completion(text);
        assert_eq!(p.chain.len(), 2);
        assert!(!p.tag_valid);
        assert!(p.has_rule(Rule::OutOfOrder));
        assert_eq!(p.diagnostics.len(), 1);
    }

    #[test]
    fn serializes_with_one_decimal() {
        let e = Event::new(0.0, 3.5, "a man opens the door").unwrap();
        assert_eq!(
            serialize_event(&e).unwrap(),
            "<event>Time:0.0-3.5,Des:a man opens the door</event>"
        );
        let z = Event::new(1.0, 1.0, "x").unwrap();
        assert_eq!(serialize_event(&z).unwrap(), "<event>Time:1.0-1.0,Des:x</event>");
    }

    #[test]
    fn serialize_rejects_invalid_event() {
        let bad = Event {
            t_start: 2.0,
            t_end: 1.0,
            description: "x".into(),
        };
        assert!(matches!(
            serialize_event(&bad),
            Err(CoeError::InvariantViolation(_))
        ));
        let blank = Event {
            t_start: 0.0,
            t_end: 1.0,
            description: "  ".into(),
        };
        assert!(serialize_event(&blank).is_err());
    }

    #[test]
    fn unclosed_event_is_invalid() {
        let p = parse_completion("<think><event>Time:0.0-1.0,Des:a</think><answer>A</answer>");
        assert_eq!(tag_validity_indicator(&p), 0);
        assert!(p.has_rule(Rule::UnclosedTag));
        assert!(p.chain.is_empty());
    }

    #[test]
    fn stray_close_is_invalid() {
        let p = parse_completion(
            "<think><event>Time:0.0-1.0,Des:a</event></event></think><answer>A</answer>",
        );
        assert!(!p.tag_valid);
        assert!(p.has_rule(Rule::UnclosedTag));
        assert_eq!(p.chain.len(), 1);
    }

    #[test]
    fn missing_answer_is_invalid() {
        let p = parse_completion("<think><event>Time:0.0-1.0,Des:a</event></think>");
        assert_eq!(tag_validity_indicator(&p), 0);
        assert!(p.has_rule(Rule::MissingAnswer));
        assert_eq!(p.diagnostics.len(), 1);
    }

    #[test]
    fn duplicate_answer_is_invalid() {
        let p = parse_completion(
            "<think><event>Time:0.0-1.0,Des:a</event></think><answer>A</answer><answer>B</answer>",
        );
        assert!(!p.tag_valid);
        assert!(p.has_rule(Rule::DuplicateAnswer));
        assert_eq!(p.answer.as_deref(), Some("A"));
    }

    #[test]
    fn no_events_is_invalid() {
        let p = parse_completion("<think>just thinking</think><answer>A</answer>");
        assert!(!p.tag_valid);
        assert!(p.has_rule(Rule::NoEvents));
        assert_eq!(p.answer.as_deref(), Some("A"));
    }

    #[test]
    fn bad_timestamp_is_flagged() {
        for body in ["Time:a-1.0,Des:x", "Time:-1.0-2.0,Des:x", "Time:3.0-1.0,Des:x", "Time:1.0,Des:x"] {
            let p = parse_completion(&format!(
                "<think><event>{body}</event></think><answer>A</answer>"
            ));
            assert!(p.has_rule(Rule::BadTimestamp), "{body}: {:?}", p.diagnostics);
            assert!(!p.tag_valid);
        }
    }

    #[test]
    fn malformed_event_dropped_from_count() {
        let mut text = String::from("<think>");
        for i in 0..5 {
            if i == 2 {
                text.push_str("<event>Tim:2.0-3.0,Des:broken</event>");
            } else {
                text.push_str(&serialize_event(&Event::new(i as f64, i as f64 + 1.0, "ok").unwrap()).unwrap());
            }
        }
        text.push_str("</think><answer>C</answer>");
        let p = parse_completion(&text);
        assert_eq!(chain_length(&p), 4);
        assert!(p.has_rule(Rule::MalformedEvent));
        assert!(!p.tag_valid);
    }

    #[test]
    fn empty_reasoning_is_allowed() {
        let p = parse_completion("<think><event>Time:0.0-1.0,Des:a</event></think><answer>A</answer>");
        assert!(p.tag_valid);
        assert!(p.reasoning_text.is_empty());
    }

    #[test]
    fn accepts_unpadded_decimals_and_whitespace() {
        let p = parse_completion("<event> Time:2-4.25,Des: x y </event><answer> A </answer>");
        assert!(p.tag_valid, "{:?}", p.diagnostics);
        assert_eq!(p.chain.events[0].t_start, 2.0);
        assert_eq!(p.chain.events[0].t_end, 4.25);
        assert_eq!(p.chain.events[0].description, "x y");
        assert_eq!(p.answer.as_deref(), Some("A"));
    }

    #[test]
    fn diagnostics_serialize_as_json_array() {
        let p = parse_completion("<event>Time:1.0-0.5,Des:x</event>");
        let json = p.diagnostics_json();
        let arr = json.as_array().unwrap();
        assert!(!arr.is_empty());
        assert_eq!(arr[0]["rule"], "bad-timestamp");
        assert!(arr[0]["position"].is_u64());
        assert!(arr[0]["message"].is_string());
    }

    #[test]
    fn canonical_is_fixed_point() {
        let text = "<think><event>Time:0.0-1.2,Des:a b</event><event>Time:1.2-2.0,Des:c</event>so next d</think><answer>B</answer>";
        let p = parse_completion(text);
        assert_eq!(p.to_canonical(), text);
        let again = parse_completion(&p.to_canonical());
        assert_eq!(again, p);
    }

    #[test]
    fn event_chain_rejects_unordered() {
        let a = Event::new(2.0, 3.0, "a").unwrap();
        let b = Event::new(1.0, 3.0, "b").unwrap();
        assert!(EventChain::new(vec![a, b]).is_err());
    }
}
