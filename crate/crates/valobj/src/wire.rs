//! Text serialization: the versioned trace file format and the shared
//! value/operation syntax also used by scenario files.
//!
//! Trace files: a `valobj-v1 trace` header, then one event per line,
//! `time uid issuer INVOKE kind(args...)` or `time uid issuer RESPOND
//! ACK(value)` / `... RESPOND NACK`. Lines starting with `#` are debug
//! commentary (`#dlo`, `#ab`) and are skipped on parse.

use crate::history::{EventPayload, HistoryEvent, HistoryTrace};
use crate::types::{ApplyResult, OpUid, OperationRecord, ProcessId, Value};
use std::collections::BTreeMap;
use thiserror::Error;

pub const TRACE_HEADER: &str = "valobj-v1 trace";
pub const SCENARIO_HEADER: &str = "valobj-v1 scenario";

#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("missing `{0}` header")]
    MissingHeader(&'static str),
    #[error("trace is not well-formed: {0}")]
    BadHistory(String),
}

fn line_err(line: usize, msg: impl Into<String>) -> WireError {
    WireError::Line {
        line,
        msg: msg.into(),
    }
}

/// Render one event line.
pub fn render_event(ev: &HistoryEvent) -> String {
    match &ev.payload {
        EventPayload::Invoke(op) => format!(
            "{} {} {} INVOKE {}",
            ev.time,
            ev.uid,
            ev.issuer(),
            op.render_call()
        ),
        EventPayload::Respond(res) => {
            format!("{} {} {} RESPOND {}", ev.time, ev.uid, ev.issuer(), res)
        }
    }
}

/// Render a full trace file, interleaving debug lines (already `#`-prefixed)
/// at their recorded times. Deterministic: events sort by time, debug lines
/// of equal time follow the event that produced them.
pub fn render_trace(trace: &HistoryTrace, debug: &[(u64, String)]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    let mut debug_iter = debug.iter().peekable();
    for ev in trace.events() {
        while let Some((t, line)) = debug_iter.peek() {
            if *t < ev.time {
                out.push_str(line);
                out.push('\n');
                debug_iter.next();
            } else {
                break;
            }
        }
        out.push_str(&render_event(ev));
        out.push('\n');
    }
    for (_, line) in debug_iter {
        out.push_str(line);
        out.push('\n');
    }
    out
}

/// Parse a trace file.
pub fn parse_trace(text: &str) -> Result<HistoryTrace, WireError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == TRACE_HEADER => {}
        _ => return Err(WireError::MissingHeader(TRACE_HEADER)),
    }
    let mut events = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        events.push(parse_event_line(line, line_no)?);
    }
    HistoryTrace::new(events).map_err(|e| WireError::BadHistory(e.to_string()))
}

fn parse_event_line(line: &str, line_no: usize) -> Result<HistoryEvent, WireError> {
    let mut parts = line.splitn(5, ' ');
    let time: u64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| line_err(line_no, "expected integer event time"))?;
    let uid = parts
        .next()
        .ok_or_else(|| line_err(line_no, "expected operation uid"))
        .and_then(|s| parse_uid(s, line_no))?;
    let issuer: u32 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| line_err(line_no, "expected integer issuer"))?;
    if ProcessId(issuer) != uid.issuer {
        return Err(line_err(
            line_no,
            format!("issuer column {issuer} does not match uid {uid}"),
        ));
    }
    let kind = parts
        .next()
        .ok_or_else(|| line_err(line_no, "expected INVOKE or RESPOND"))?;
    let rest = parts
        .next()
        .ok_or_else(|| line_err(line_no, "missing event payload"))?;
    let payload = match kind {
        "INVOKE" => {
            let (name, args) = parse_call(rest, line_no, false)?;
            EventPayload::Invoke(OperationRecord::new(uid, name, args))
        }
        "RESPOND" => EventPayload::Respond(parse_result(rest, line_no)?),
        other => {
            return Err(line_err(
                line_no,
                format!("unknown event kind `{other}` (expected INVOKE or RESPOND)"),
            ))
        }
    };
    Ok(HistoryEvent { time, uid, payload })
}

pub fn parse_uid(s: &str, line_no: usize) -> Result<OpUid, WireError> {
    let (a, b) = s
        .split_once('.')
        .ok_or_else(|| line_err(line_no, format!("uid `{s}` is not issuer.seq")))?;
    let issuer: u32 = a
        .parse()
        .map_err(|_| line_err(line_no, format!("uid issuer `{a}` is not an integer")))?;
    let seq: u32 = b
        .parse()
        .map_err(|_| line_err(line_no, format!("uid seq `{b}` is not an integer")))?;
    Ok(OpUid::new(ProcessId(issuer), seq))
}

fn parse_result(s: &str, line_no: usize) -> Result<ApplyResult, WireError> {
    let s = s.trim();
    if s == "NACK" {
        return Ok(ApplyResult::Nack);
    }
    if let Some(inner) = s.strip_prefix("ACK(").and_then(|r| r.strip_suffix(')')) {
        let value = parse_value(inner, line_no, false)?;
        return Ok(ApplyResult::Ack(value));
    }
    Err(line_err(
        line_no,
        format!("expected ACK(value) or NACK, got `{s}`"),
    ))
}

/// Parse `kind(arg,arg,...)`. With `lenient`, unquoted words parse as
/// strings (scenario convenience); trace files require strict quoting.
pub fn parse_call(
    s: &str,
    line_no: usize,
    lenient: bool,
) -> Result<(String, Vec<Value>), WireError> {
    let s = s.trim();
    let open = s
        .find('(')
        .ok_or_else(|| line_err(line_no, format!("call `{s}` is missing `(`")))?;
    if !s.ends_with(')') {
        return Err(line_err(line_no, format!("call `{s}` is missing `)`")));
    }
    let name = &s[..open];
    if name.is_empty() {
        return Err(line_err(line_no, "call has an empty name"));
    }
    let inner = &s[open + 1..s.len() - 1];
    let args = split_args(inner, line_no)?
        .into_iter()
        .map(|a| parse_value(&a, line_no, lenient))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name.to_string(), args))
}

/// Split a comma-separated argument list, respecting quotes and `<...>`.
fn split_args(s: &str, line_no: usize) -> Result<Vec<String>, WireError> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    let mut cur = String::new();
    for c in s.chars() {
        if in_str {
            cur.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_str = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_str = true;
                cur.push(c);
            }
            '<' => {
                depth += 1;
                cur.push(c);
            }
            '>' => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| line_err(line_no, "unbalanced `>`"))?;
                cur.push(c);
            }
            ',' if depth == 0 => {
                out.push(cur.trim().to_string());
                cur = String::new();
            }
            c => cur.push(c),
        }
    }
    if in_str {
        return Err(line_err(line_no, "unterminated string"));
    }
    if depth != 0 {
        return Err(line_err(line_no, "unbalanced `<`"));
    }
    let last = cur.trim().to_string();
    if !last.is_empty() {
        out.push(last);
    } else if !out.is_empty() {
        return Err(line_err(line_no, "trailing comma in argument list"));
    }
    Ok(out)
}

/// Parse a single value. Strict syntax: integer, `true`/`false`, `null`,
/// `"string"`, `<a,b>`. With `lenient`, a bare word is a string.
pub fn parse_value(s: &str, line_no: usize, lenient: bool) -> Result<Value, WireError> {
    let s = s.trim();
    if s == "null" {
        return Ok(Value::Null);
    }
    if s == "true" {
        return Ok(Value::Bool(true));
    }
    if s == "false" {
        return Ok(Value::Bool(false));
    }
    if let Ok(i) = s.parse::<i64>() {
        return Ok(Value::Int(i));
    }
    if let Some(inner) = s.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
        let parts = split_args(inner, line_no)?;
        if parts.len() != 2 {
            return Err(line_err(
                line_no,
                format!("pair `{s}` must have exactly two components"),
            ));
        }
        let a = parse_value(&parts[0], line_no, lenient)?;
        let b = parse_value(&parts[1], line_no, lenient)?;
        return Ok(Value::pair(a, b));
    }
    if s.starts_with('"') {
        return parse_quoted(s, line_no);
    }
    if lenient
        && !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
    {
        return Ok(Value::str(s));
    }
    Err(line_err(line_no, format!("cannot parse value `{s}`")))
}

fn parse_quoted(s: &str, line_no: usize) -> Result<Value, WireError> {
    let inner = s
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .ok_or_else(|| line_err(line_no, format!("unterminated string `{s}`")))?;
    let mut out = String::new();
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('"') => out.push('"'),
                Some('\\') => out.push('\\'),
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                other => {
                    return Err(line_err(
                        line_no,
                        format!("bad escape `\\{}`", other.map(String::from).unwrap_or_default()),
                    ))
                }
            }
        } else if c == '"' {
            return Err(line_err(line_no, "unescaped quote inside string"));
        } else {
            out.push(c);
        }
    }
    Ok(Value::Str(out))
}

/// Canonical single-line rendering of an apply result map (used in reports).
pub fn render_result_map(map: &BTreeMap<OpUid, ApplyResult>) -> String {
    map.iter()
        .map(|(uid, res)| format!("{uid}:{res}"))
        .collect::<Vec<_>>()
        .join(" ")
}
