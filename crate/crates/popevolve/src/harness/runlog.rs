//! Run-directory layout and event-log IO.
//!
//! Layout: `config.json` (written once), `events.jsonl` (append-only, one
//! event per line, flushed per line), `summary.json` (rewritten on
//! completion). Lines are written in canonical order — problems in dataset
//! order, iterations in order, members in index order — by a single writer
//! thread that buffers events from out-of-order workers until the log
//! frontier reaches them.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread::JoinHandle;

use crate::harness::HarnessError;
use crate::record::{EventLine, RequestEvent, RunConfig};
use crate::strategies::StrategyOutcome;

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

/// Parsed contents of an event log.
pub struct LoadedEvents {
    pub events: Vec<RequestEvent>,
    pub outcomes: Vec<StrategyOutcome>,
    /// Byte length of the valid prefix of the file.
    pub valid_bytes: u64,
    /// Set when a corrupt final line was ignored.
    pub tail_warning: Option<String>,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn events_path(&self) -> PathBuf {
        self.root.join("events.jsonl")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.root.join("summary.json")
    }

    pub fn write_config(&self, config: &RunConfig) -> Result<(), HarnessError> {
        fs::create_dir_all(&self.root)?;
        let text = serde_json::to_string_pretty(config)?;
        fs::write(self.config_path(), text)?;
        Ok(())
    }

    pub fn read_config(&self) -> Result<RunConfig, HarnessError> {
        let text = fs::read_to_string(self.config_path())?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Parses `events.jsonl`. A malformed final line (a torn write from a
    /// killed run) is reported as a warning and excluded; malformed interior
    /// lines are corruption and refuse to load.
    pub fn load_events(&self) -> Result<LoadedEvents, HarnessError> {
        let path = self.events_path();
        if !path.exists() {
            return Ok(LoadedEvents {
                events: Vec::new(),
                outcomes: Vec::new(),
                valid_bytes: 0,
                tail_warning: None,
            });
        }
        let text = fs::read_to_string(&path)?;
        let mut events = Vec::new();
        let mut outcomes = Vec::new();
        let mut valid_bytes = 0u64;
        let mut tail_warning = None;

        let mut offset = 0usize;
        let lines: Vec<&str> = text.split('\n').collect();
        for (i, line) in lines.iter().enumerate() {
            let line_start = offset;
            offset += line.len() + 1;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<EventLine>(line) {
                Ok(EventLine::Request { event, .. }) => {
                    events.push(event);
                    valid_bytes = (line_start + line.len() + 1).min(text.len()) as u64;
                }
                Ok(EventLine::Outcome { outcome, .. }) => {
                    outcomes.push(outcome);
                    valid_bytes = (line_start + line.len() + 1).min(text.len()) as u64;
                }
                Err(e) => {
                    let is_last_content_line =
                        lines[i + 1..].iter().all(|rest| rest.trim().is_empty());
                    if is_last_content_line {
                        tail_warning = Some(format!(
                            "ignoring corrupt final line {} of {}: {e}",
                            i + 1,
                            path.display()
                        ));
                        break;
                    }
                    return Err(HarnessError::Corrupt(format!(
                        "{} line {}: {e}",
                        path.display(),
                        i + 1
                    )));
                }
            }
        }
        Ok(LoadedEvents { events, outcomes, valid_bytes, tail_warning })
    }

    /// Truncates the log to its valid prefix so appends start on a clean
    /// line. Call after `load_events` reported a tail warning.
    pub fn truncate_events(&self, valid_bytes: u64) -> Result<(), HarnessError> {
        let file = OpenOptions::new().write(true).open(self.events_path())?;
        file.set_len(valid_bytes)?;
        Ok(())
    }
}

/// Messages from problem workers to the log writer.
pub enum WriterMsg {
    Line { problem_idx: usize, line: String },
    Done { problem_idx: usize },
}

pub struct LogWriter {
    pub tx: Sender<WriterMsg>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl LogWriter {
    /// Spawns the writer thread. `pre_done` marks problems already complete
    /// in the log (from a resume), which the frontier skips over.
    pub fn spawn(path: PathBuf, pre_done: HashSet<usize>) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let (tx, rx) = channel();
        let handle = std::thread::Builder::new()
            .name("run-log-writer".into())
            .spawn(move || write_loop(file, rx, pre_done))?;
        Ok(Self { tx, handle })
    }

    /// Drops the sender and waits for the writer to drain.
    pub fn finish(self) -> std::io::Result<()> {
        drop(self.tx);
        self.handle.join().expect("log writer panicked")
    }
}

struct ProblemBuffer {
    lines: Vec<String>,
    done: bool,
}

fn write_loop(
    file: File,
    rx: Receiver<WriterMsg>,
    pre_done: HashSet<usize>,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(file);
    let mut frontier = 0usize;
    let mut pending: BTreeMap<usize, ProblemBuffer> = BTreeMap::new();

    let advance = |frontier: &mut usize,
                   pending: &mut BTreeMap<usize, ProblemBuffer>,
                   out: &mut BufWriter<File>|
     -> std::io::Result<()> {
        loop {
            if pre_done.contains(frontier) {
                *frontier += 1;
                continue;
            }
            match pending.remove(frontier) {
                Some(buffer) => {
                    for line in &buffer.lines {
                        writeln!(out, "{line}")?;
                    }
                    out.flush()?;
                    if buffer.done {
                        *frontier += 1;
                        continue;
                    }
                    // Frontier problem still running; its next lines stream
                    // straight through.
                    return Ok(());
                }
                None => return Ok(()),
            }
        }
    };

    advance(&mut frontier, &mut pending, &mut out)?;
    for msg in rx {
        match msg {
            WriterMsg::Line { problem_idx, line } => {
                if problem_idx == frontier {
                    writeln!(out, "{line}")?;
                    out.flush()?;
                } else {
                    pending
                        .entry(problem_idx)
                        .or_insert_with(|| ProblemBuffer { lines: Vec::new(), done: false })
                        .lines
                        .push(line);
                }
            }
            WriterMsg::Done { problem_idx } => {
                if problem_idx == frontier {
                    frontier += 1;
                    advance(&mut frontier, &mut pending, &mut out)?;
                } else {
                    pending
                        .entry(problem_idx)
                        .or_insert_with(|| ProblemBuffer { lines: Vec::new(), done: false })
                        .done = true;
                }
            }
        }
    }
    out.flush()
}

/// Serializes one event line.
pub fn encode_line(line: &EventLine) -> Result<String, HarnessError> {
    Ok(serde_json::to_string(line)?)
}

/// Strips volatile timestamp fields from an event-log or summary text so
/// byte comparisons cover only deterministic content.
pub fn strip_timestamps(text: &str) -> String {
    static TS_RE: std::sync::LazyLock<regex::Regex> =
        std::sync::LazyLock::new(|| regex::Regex::new(r#""ts_ms":\d+,?"#).unwrap());
    TS_RE.replace_all(text, "").into_owned()
}
