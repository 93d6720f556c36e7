//! Execution histories recorded by the simulator.

use serde::{Deserialize, Serialize};

use crate::actor::Note;
use crate::config::Time;
use crate::message::Addr;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    /// Position in the history.
    pub index: usize,
    pub time: Time,
    pub node: Addr,
    pub note: Note,
}

/// Everything the nodes reported, in simulated-time order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct History {
    pub events: Vec<Event>,
}

impl History {
    pub fn push(&mut self, time: Time, node: Addr, note: Note) {
        let index = self.events.len();
        self.events.push(Event { index, time, node, note });
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.events.iter()
    }

    /// Client response latencies, in arrival order.
    pub fn latencies(&self) -> Vec<Time> {
        self.events
            .iter()
            .filter_map(|e| match e.note {
                Note::Respond { latency, .. } => Some(latency),
                _ => None,
            })
            .collect()
    }

    pub fn responses(&self) -> usize {
        self.events.iter().filter(|e| matches!(e.note, Note::Respond { .. })).count()
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_json_lines(text: &str) -> Result<History, serde_json::Error> {
        let events = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<Event>, _>>()?;
        Ok(History { events })
    }
}
