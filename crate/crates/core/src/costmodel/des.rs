use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::instrument::PrimKind;

pub type TaskId = usize;

#[derive(Clone, Debug)]
struct Resource {
    name: String,
    rank: usize,
    exclusive: bool,
}

#[derive(Clone, Debug)]
struct Node {
    name: String,
    resource: usize,
    dur: f64,
    deps: Vec<TaskId>,
    kind: Option<PrimKind>,
}

/// A task graph over named resources. Tasks on an exclusive resource run
/// one at a time in insertion order; lanes (non-exclusive resources) only
/// group events for display.
#[derive(Clone, Debug, Default)]
pub struct Dag {
    resources: Vec<Resource>,
    nodes: Vec<Node>,
}

impl Dag {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the index of the resource, creating it on first use.
    pub fn resource(&mut self, name: &str, rank: usize, exclusive: bool) -> usize {
        if let Some(i) = self.resources.iter().position(|r| r.name == name) {
            return i;
        }
        self.resources.push(Resource {
            name: name.to_string(),
            rank,
            exclusive,
        });
        self.resources.len() - 1
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        resource: usize,
        dur: f64,
        deps: &[TaskId],
    ) -> TaskId {
        self.add_kind(name, resource, dur, deps, None)
    }

    /// Adds a task tagged with the primitive it models.
    pub fn add_kind(
        &mut self,
        name: impl Into<String>,
        resource: usize,
        dur: f64,
        deps: &[TaskId],
        kind: Option<PrimKind>,
    ) -> TaskId {
        let id = self.nodes.len();
        assert!(
            resource < self.resources.len(),
            "unknown resource {resource}"
        );
        assert!(
            deps.iter().all(|&d| d < id),
            "dependencies must be added first"
        );
        assert!(dur >= 0.0, "negative duration");
        self.nodes.push(Node {
            name: name.into(),
            resource,
            dur,
            deps: deps.to_vec(),
            kind,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn kind(&self, id: TaskId) -> Option<PrimKind> {
        self.nodes[id].kind
    }

    pub fn rank_of(&self, id: TaskId) -> usize {
        self.resources[self.nodes[id].resource].rank
    }

    /// Max-plus evaluation in insertion order.
    pub fn run(&self) -> Timeline {
        let n = self.nodes.len();
        let mut start = vec![0.0f64; n];
        let mut end = vec![0.0f64; n];
        let mut pred: Vec<Option<TaskId>> = vec![None; n];
        let mut last_on: Vec<Option<TaskId>> = vec![None; self.resources.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            let mut t = 0.0;
            let mut from = None;
            for &d in &node.deps {
                if end[d] > t || from.is_none() && end[d] >= t {
                    t = end[d];
                    from = Some(d);
                }
            }
            let res = &self.resources[node.resource];
            if res.exclusive {
                if let Some(p) = last_on[node.resource] {
                    if end[p] > t {
                        t = end[p];
                        from = Some(p);
                    }
                }
                last_on[node.resource] = Some(i);
            }
            start[i] = t;
            end[i] = t + node.dur;
            pred[i] = from;
        }
        let mut critical_path = Vec::new();
        if let Some(last) = (0..n).max_by(|&a, &b| end[a].total_cmp(&end[b]).then(b.cmp(&a))) {
            let mut cur = Some(last);
            while let Some(c) = cur {
                critical_path.push(c);
                cur = pred[c];
            }
            critical_path.reverse();
        }
        Timeline {
            resources: self
                .resources
                .iter()
                .map(|r| ResourceInfo {
                    name: r.name.clone(),
                    rank: r.rank,
                    exclusive: r.exclusive,
                })
                .collect(),
            events: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, nd)| TimelineEvent {
                    name: nd.name.clone(),
                    rank: self.resources[nd.resource].rank,
                    resource: nd.resource,
                    start_us: start[i],
                    dur_us: nd.dur,
                    kind: nd.kind,
                })
                .collect(),
            critical_path,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceInfo {
    pub name: String,
    pub rank: usize,
    pub exclusive: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub name: String,
    pub rank: usize,
    /// Index into [`Timeline::resources`].
    pub resource: usize,
    pub start_us: f64,
    pub dur_us: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<PrimKind>,
}

impl TimelineEvent {
    pub fn end_us(&self) -> f64 {
        self.start_us + self.dur_us
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub resources: Vec<ResourceInfo>,
    pub events: Vec<TimelineEvent>,
    /// Event indices along the chain that determines the makespan.
    pub critical_path: Vec<usize>,
}

impl Timeline {
    pub fn makespan(&self) -> f64 {
        self.events.iter().map(|e| e.end_us()).fold(0.0, f64::max)
    }

    pub fn find(&self, name: &str) -> Option<&TimelineEvent> {
        self.events.iter().find(|e| e.name == name)
    }

    pub fn on_resource(&self, resource: usize) -> impl Iterator<Item = &TimelineEvent> {
        self.events.iter().filter(move |e| e.resource == resource)
    }

    pub fn resource_index(&self, name: &str) -> Option<usize> {
        self.resources.iter().position(|r| r.name == name)
    }

    /// First pair of overlapping events on an exclusive resource, if any.
    pub fn exclusive_overlap(&self) -> Option<(usize, usize)> {
        const EPS: f64 = 1e-9;
        for (ri, r) in self.resources.iter().enumerate() {
            if !r.exclusive {
                continue;
            }
            let mut evs: Vec<usize> = (0..self.events.len())
                .filter(|&i| self.events[i].resource == ri && self.events[i].dur_us > 0.0)
                .collect();
            evs.sort_by(|&a, &b| self.events[a].start_us.total_cmp(&self.events[b].start_us));
            for w in evs.windows(2) {
                if self.events[w[0]].end_us() > self.events[w[1]].start_us + EPS {
                    return Some((w[0], w[1]));
                }
            }
        }
        None
    }

    /// Busy time summed per exclusive resource.
    pub fn busy(&self, resource: usize) -> f64 {
        self.on_resource(resource).map(|e| e.dur_us).sum()
    }

    /// Chrome trace-event JSON: one complete ("X") event per timeline event,
    /// `pid` = rank, `tid` = resource index, times in microseconds.
    pub fn to_chrome_trace(&self) -> Value {
        let mut out: Vec<Value> = self
            .events
            .iter()
            .map(|e| {
                json!({
                    "name": e.name,
                    "ph": "X",
                    "ts": e.start_us,
                    "dur": e.dur_us,
                    "pid": e.rank,
                    "tid": e.resource,
                    "args": { "resource": self.resources[e.resource].name },
                })
            })
            .collect();
        for (i, r) in self.resources.iter().enumerate() {
            out.push(json!({
                "name": "thread_name",
                "ph": "M",
                "pid": r.rank,
                "tid": i,
                "args": { "name": r.name },
            }));
        }
        json!({ "traceEvents": out, "displayTimeUnit": "ns" })
    }

    /// Parses the output of [`Timeline::to_chrome_trace`] back into events.
    pub fn from_chrome_trace(v: &Value) -> Result<Vec<TimelineEvent>> {
        let evs = v
            .get("traceEvents")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::arg("missing traceEvents array"))?;
        let mut out = Vec::new();
        for e in evs {
            if e.get("ph").and_then(Value::as_str) != Some("X") {
                continue;
            }
            let num = |k: &str| {
                e.get(k)
                    .and_then(Value::as_f64)
                    .ok_or_else(|| Error::arg(format!("trace event missing `{k}`")))
            };
            out.push(TimelineEvent {
                name: e
                    .get("name")
                    .and_then(Value::as_str)
                    .ok_or_else(|| Error::arg("trace event missing `name`"))?
                    .to_string(),
                rank: num("pid")? as usize,
                resource: num("tid")? as usize,
                start_us: num("ts")?,
                dur_us: num("dur")?,
                kind: None,
            });
        }
        Ok(out)
    }
}
