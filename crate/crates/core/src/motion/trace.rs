//! Simulation output: sampled robot states and the event log.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Depart,
    PickStart,
    PickEnd,
    UnloadStart,
    UnloadEnd,
    WaitStart,
    WaitEnd,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub time: f64,
    pub robot: usize,
    pub kind: EventKind,
    pub object_id: u32,
    pub pos: Point2,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub time: f64,
    pub robot: usize,
    pub pos: Point2,
    pub carrying: Option<u32>,
}

/// Timed record of one joint execution.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub dt: f64,
    pub robot_count: usize,
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    /// Time of the last unload_end event.
    pub makespan: f64,
    /// Smallest distance between two robot centers over all steps.
    pub min_separation: f64,
    /// Steps at which some robot center was inside an obstacle.
    pub obstacle_violations: usize,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace is empty")]
    Empty,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dt: f64,
    robots: usize,
    makespan: f64,
    min_separation: f64,
    obstacle_violations: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    time: f64,
    robot_id: usize,
    x: f64,
    y: f64,
    carrying: Option<u32>,
    event: Option<EventKind>,
    object: Option<u32>,
}

impl Trace {
    /// Events of one kind for the object.
    pub fn count(&self, kind: EventKind, object_id: u32) -> usize {
        self.events
            .iter()
            .filter(|e| e.kind == kind && e.object_id == object_id)
            .count()
    }

    /// Each object in `ids` is picked once and unloaded once, pick first.
    pub fn check_conservation(&self, ids: &[u32]) -> Result<(), String> {
        for &id in ids {
            let picks: Vec<&Event> = self
                .events
                .iter()
                .filter(|e| e.kind == EventKind::PickEnd && e.object_id == id)
                .collect();
            let unloads: Vec<&Event> = self
                .events
                .iter()
                .filter(|e| e.kind == EventKind::UnloadEnd && e.object_id == id)
                .collect();
            if picks.len() != 1 || unloads.len() != 1 {
                return Err(format!(
                    "object {id}: {} picks, {} unloads",
                    picks.len(),
                    unloads.len()
                ));
            }
            if picks[0].time > unloads[0].time {
                return Err(format!("object {id} unloaded before it was picked"));
            }
        }
        let extra = self
            .events
            .iter()
            .find(|e| e.kind == EventKind::PickEnd && !ids.contains(&e.object_id));
        if let Some(e) = extra {
            return Err(format!("unexpected object {} picked", e.object_id));
        }
        Ok(())
    }

    /// Per-robot object order by pick time.
    pub fn sequences(&self) -> Vec<Vec<u32>> {
        let mut seqs = vec![Vec::new(); self.robot_count];
        for e in self.events.iter().filter(|e| e.kind == EventKind::PickEnd) {
            seqs[e.robot].push(e.object_id);
        }
        seqs
    }

    /// Line-delimited export: a header line, then one record per event and
    /// per sample.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = Header {
            dt: self.dt,
            robots: self.robot_count,
            makespan: self.makespan,
            min_separation: self.min_separation,
            obstacle_violations: self.obstacle_violations,
        };
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string(&header).expect("header serializes")
        );
        let mut events = self.events.iter().peekable();
        for s in &self.samples {
            while let Some(e) = events.next_if(|e| e.time <= s.time) {
                push_event(&mut out, e, self.carrying_at(e));
            }
            let rec = Record {
                time: s.time,
                robot_id: s.robot,
                x: s.pos.x,
                y: s.pos.y,
                carrying: s.carrying,
                event: None,
                object: None,
            };
            let _ = writeln!(
                out,
                "{}",
                serde_json::to_string(&rec).expect("record serializes")
            );
        }
        for e in events {
            push_event(&mut out, e, self.carrying_at(e));
        }
        out
    }

    fn carrying_at(&self, e: &Event) -> Option<u32> {
        match e.kind {
            EventKind::PickEnd | EventKind::UnloadStart => Some(e.object_id),
            _ => None,
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(TraceError::Empty)?;
        let header: Header = serde_json::from_str(first).map_err(|e| TraceError::Parse {
            line: 1,
            message: e.to_string(),
        })?;
        let mut trace = Trace {
            dt: header.dt,
            robot_count: header.robots,
            makespan: header.makespan,
            min_separation: header.min_separation,
            obstacle_violations: header.obstacle_violations,
            ..Trace::default()
        };
        for (i, line) in lines {
            let rec: Record = serde_json::from_str(line).map_err(|e| TraceError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let pos = Point2::new(rec.x, rec.y);
            match (rec.event, rec.object) {
                (Some(kind), Some(object_id)) => trace.events.push(Event {
                    time: rec.time,
                    robot: rec.robot_id,
                    kind,
                    object_id,
                    pos,
                }),
                (None, None) => trace.samples.push(Sample {
                    time: rec.time,
                    robot: rec.robot_id,
                    pos,
                    carrying: rec.carrying,
                }),
                _ => {
                    return Err(TraceError::Parse {
                        line: i + 1,
                        message: "event and object must appear together".into(),
                    })
                }
            }
        }
        Ok(trace)
    }

    /// Per-timestep table (time, robot, x, y, carrying) up to the makespan.
    pub fn replay_csv(&self) -> String {
        let mut out = String::from("time,robot_id,x,y,carrying\n");
        for s in self
            .samples
            .iter()
            .filter(|s| s.time <= self.makespan + 1e-9)
        {
            let carrying = s.carrying.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:.3},{},{:.6},{:.6},{}",
                s.time, s.robot, s.pos.x, s.pos.y, carrying
            );
        }
        out
    }
}

fn push_event(out: &mut String, e: &Event, carrying: Option<u32>) {
    let rec = Record {
        time: e.time,
        robot_id: e.robot,
        x: e.pos.x,
        y: e.pos.y,
        carrying,
        event: Some(e.kind),
        object: Some(e.object_id),
    };
    let _ = writeln!(
        out,
        "{}",
        serde_json::to_string(&rec).expect("record serializes")
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Trace {
        Trace {
            dt: 0.5,
            robot_count: 1,
            samples: (0..4)
                .map(|i| Sample {
                    time: i as f64 * 0.5,
                    robot: 0,
                    pos: Point2::new(i as f64, 0.1),
                    carrying: (i >= 2).then_some(7),
                })
                .collect(),
            events: vec![
                Event {
                    time: 0.0,
                    robot: 0,
                    kind: EventKind::Depart,
                    object_id: 7,
                    pos: Point2::ORIGIN,
                },
                Event {
                    time: 0.7,
                    robot: 0,
                    kind: EventKind::PickEnd,
                    object_id: 7,
                    pos: Point2::new(1.0, 0.0),
                },
                Event {
                    time: 1.2,
                    robot: 0,
                    kind: EventKind::UnloadEnd,
                    object_id: 7,
                    pos: Point2::new(2.0, 0.0),
                },
            ],
            makespan: 1.2,
            min_separation: f64::INFINITY,
            obstacle_violations: 0,
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let t = Trace {
            min_separation: 3.5,
            ..tiny()
        };
        let back = Trace::from_jsonl(&t.to_jsonl()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn replay_stops_at_makespan() {
        let csv = tiny().replay_csv();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "time,robot_id,x,y,carrying");
        assert_eq!(rows.len(), 1 + 3);
        assert!(rows[3].ends_with(",7"));
    }

    #[test]
    fn empty_trace_replays_to_header_only() {
        assert_eq!(
            Trace::default().replay_csv(),
            "time,robot_id,x,y,carrying\n"
        );
    }

    #[test]
    fn conservation_detects_duplicates() {
        let mut t = tiny();
        assert!(t.check_conservation(&[7]).is_ok());
        t.events.push(Event {
            time: 1.3,
            robot: 0,
            kind: EventKind::PickEnd,
            object_id: 7,
            pos: Point2::ORIGIN,
        });
        assert!(t.check_conservation(&[7]).is_err());
    }
}
