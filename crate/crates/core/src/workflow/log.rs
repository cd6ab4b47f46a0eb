use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Event, Registry, WorkflowError};

/// One line of a workflow log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub sequence: u64,
    pub workflow: String,
    pub event: String,
    #[serde(default)]
    pub payload: Value,
}

impl LogRecord {
    pub fn new(sequence: u64, workflow: &str, event: &Event) -> Self {
        let v = serde_json::to_value(event).expect("events serialize");
        LogRecord {
            sequence,
            workflow: workflow.to_string(),
            event: v["event"].as_str().unwrap_or_default().to_string(),
            payload: v.get("payload").cloned().unwrap_or(Value::Null),
        }
    }

    pub fn event(&self) -> Result<Event, String> {
        let mut v = json!({ "event": self.event });
        if !self.payload.is_null() {
            v["payload"] = self.payload.clone();
        }
        serde_json::from_value(v).map_err(|e| format!("bad '{}' event: {e}", self.event))
    }
}

fn io(e: std::io::Error) -> WorkflowError {
    WorkflowError::Io(e.to_string())
}

fn parse_lines(file: &File) -> Result<Vec<LogRecord>, WorkflowError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| WorkflowError::Corrupt {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads and folds a log. A missing file is an empty log.
pub fn read_log(path: &Path) -> Result<(Vec<LogRecord>, Registry), WorkflowError> {
    let records = match File::open(path) {
        Ok(f) => {
            f.lock_shared().map_err(io)?;
            parse_lines(&f)?
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(io(e)),
    };
    let reg = Registry::replay(&records).map_err(|(_, e)| e)?;
    Ok((records, reg))
}

/// Under an exclusive lock on the log: folds it, lets `f` apply events,
/// and appends the resulting records. Nothing is written if `f` fails.
pub fn append_events<T>(
    path: &Path,
    f: impl FnOnce(&mut Registry) -> Result<(Vec<LogRecord>, T), WorkflowError>,
) -> Result<(Registry, T), WorkflowError> {
    let mut file = OpenOptions::new().read(true).append(true).create(true).open(path).map_err(io)?;
    file.lock().map_err(io)?;
    file.seek(SeekFrom::Start(0)).map_err(io)?;
    let records = parse_lines(&file)?;
    let mut reg = Registry::replay(&records).map_err(|(_, e)| e)?;
    let (new, out) = f(&mut reg)?;
    let mut buf = String::new();
    for r in &new {
        buf.push_str(&serde_json::to_string(r).expect("records serialize"));
        buf.push('\n');
    }
    file.write_all(buf.as_bytes()).map_err(io)?;
    file.flush().map_err(io)?;
    Ok((reg, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::{DriftOrigin, ValidationTarget};

    #[test]
    fn field_order_is_stable() {
        let r = LogRecord::new(3, "w", &Event::RequestValidation { target: ValidationTarget::ProblemView });
        assert_eq!(
            serde_json::to_string(&r).unwrap(),
            r#"{"sequence":3,"workflow":"w","event":"request-validation","payload":{"target":"problem-view"}}"#
        );
        assert_eq!(r.event().unwrap(), Event::RequestValidation { target: ValidationTarget::ProblemView });
        let c = LogRecord::new(4, "w", &Event::Complete);
        assert_eq!(c.event().unwrap(), Event::Complete);
        let d = Event::Drift { touched: ["x".to_string()].into(), description: String::new(), origin: DriftOrigin::Need };
        assert_eq!(LogRecord::new(5, "*", &d).event().unwrap(), d);
    }
}
