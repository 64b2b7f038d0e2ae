use serde::{Deserialize, Serialize};
use std::ops::{Add, AddAssign};

/// Event counters; always maintained, independent of logging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Counters {
    pub array_row_read: u64,
    pub array_row_write: u64,
    pub lb_access: u64,
    pub pe_step: u64,
    pub pc_step: u64,
    pub addp_step: u64,
    pub bcast_word: u64,
}

impl Counters {
    pub fn array_accesses(&self) -> u64 {
        self.array_row_read + self.array_row_write
    }

    pub fn named(&self) -> [(&'static str, u64); 7] {
        [
            ("array_row_read", self.array_row_read),
            ("array_row_write", self.array_row_write),
            ("lb_access", self.lb_access),
            ("pe_step", self.pe_step),
            ("pc_step", self.pc_step),
            ("addp_step", self.addp_step),
            ("bcast_word", self.bcast_word),
        ]
    }

    pub fn scaled(&self, k: u64) -> Counters {
        Counters {
            array_row_read: self.array_row_read * k,
            array_row_write: self.array_row_write * k,
            lb_access: self.lb_access * k,
            pe_step: self.pe_step * k,
            pc_step: self.pc_step * k,
            addp_step: self.addp_step * k,
            bcast_word: self.bcast_word * k,
        }
    }
}

impl Add for Counters {
    type Output = Counters;

    fn add(mut self, rhs: Counters) -> Counters {
        self += rhs;
        self
    }
}

impl AddAssign for Counters {
    fn add_assign(&mut self, rhs: Counters) {
        self.array_row_read += rhs.array_row_read;
        self.array_row_write += rhs.array_row_write;
        self.lb_access += rhs.lb_access;
        self.pe_step += rhs.pe_step;
        self.pc_step += rhs.pc_step;
        self.addp_step += rhs.addp_step;
        self.bcast_word += rhs.bcast_word;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    ArrayRowRead,
    ArrayRowWrite,
    LbAccess { row: u32 },
    PeStep,
    PcStep,
    AddpStep,
    BcastWord,
}

/// Counters plus an optional, bounded, ordered event log.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventTrace {
    counters: Counters,
    log: Option<Vec<Event>>,
    capacity: usize,
    dropped: u64,
}

impl EventTrace {
    /// Counters only.
    pub fn new() -> Self {
        Self::default()
    }

    /// Counters plus a log holding at most `capacity` events.
    pub fn with_log(capacity: usize) -> Self {
        EventTrace {
            log: Some(Vec::new()),
            capacity,
            ..Self::default()
        }
    }

    /// Empty trace with the same logging mode as `self`.
    pub fn fresh_like(&self) -> Self {
        match self.log {
            Some(_) => Self::with_log(self.capacity),
            None => Self::new(),
        }
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn log(&self) -> Option<&[Event]> {
        self.log.as_deref()
    }

    /// Events that did not fit the log.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn record(&mut self, ev: Event) {
        let c = &mut self.counters;
        match ev {
            Event::ArrayRowRead => c.array_row_read += 1,
            Event::ArrayRowWrite => c.array_row_write += 1,
            Event::LbAccess { .. } => c.lb_access += 1,
            Event::PeStep => c.pe_step += 1,
            Event::PcStep => c.pc_step += 1,
            Event::AddpStep => c.addp_step += 1,
            Event::BcastWord => c.bcast_word += 1,
        }
        if let Some(log) = &mut self.log {
            if log.len() < self.capacity {
                log.push(ev);
            } else {
                self.dropped += 1;
            }
        }
    }

    pub fn record_n(&mut self, ev: Event, n: u64) {
        for _ in 0..n {
            self.record(ev);
        }
    }

    /// Appends `other` after the events already recorded.
    pub fn extend(&mut self, other: &EventTrace) {
        if let (Some(log), Some(theirs)) = (&mut self.log, &other.log) {
            for ev in theirs {
                if log.len() < self.capacity {
                    log.push(*ev);
                } else {
                    self.dropped += 1;
                }
            }
            self.dropped += other.dropped;
        }
        self.counters += other.counters;
    }

    /// Recounts the log; equals `counters()` when nothing was dropped.
    pub fn counters_from_log(&self) -> Option<Counters> {
        let log = self.log.as_ref()?;
        let mut t = EventTrace::new();
        for ev in log {
            t.record(*ev);
        }
        Some(t.counters)
    }

    /// Line-delimited JSON: one record per counter, then the event log.
    pub fn dump_jsonl(&self) -> String {
        let mut out = String::new();
        for (name, value) in self.counters.named() {
            let rec = serde_json::json!({ "kind": "counter", "name": name, "value": value });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
        if let Some(log) = &self.log {
            for (seq, ev) in log.iter().enumerate() {
                let mut rec = serde_json::to_value(ev).expect("event serializes");
                rec["kind"] = "event".into();
                rec["seq"] = seq.into();
                out.push_str(&rec.to_string());
                out.push('\n');
            }
        }
        out
    }
}
