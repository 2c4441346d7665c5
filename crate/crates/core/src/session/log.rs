use super::{ReplayError, SessionEvent};

/// Events read from a JSONL log.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub events: Vec<SessionEvent>,
    /// Bytes of an unterminated, unparseable last line (a write cut short by a crash).
    pub torn_tail: Option<usize>,
}

/// Parses one event per line. Only an unterminated final line may be
/// malformed; it is reported as a torn tail rather than an error.
pub fn parse_log(text: &str) -> Result<ParsedLog, ReplayError> {
    let mut events: Vec<SessionEvent> = Vec::new();
    let mut torn_tail = None;
    let mut rest = text;
    while !rest.is_empty() {
        let (line, terminated, next) = match rest.find('\n') {
            Some(i) => (&rest[..i], true, &rest[i + 1..]),
            None => (rest, false, ""),
        };
        rest = next;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SessionEvent>(line) {
            Ok(event) => events.push(event),
            Err(_) if !terminated => torn_tail = Some(line.len()),
            Err(err) => {
                let seq = events.last().map_or(1, |e| e.seq + 1);
                return Err(ReplayError { seq, reason: format!("unparseable event: {err}") });
            }
        }
    }
    Ok(ParsedLog { events, torn_tail })
}
