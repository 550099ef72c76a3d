//! Chrome trace-event export of a simulated schedule.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::graph::DependencyGraph;
use crate::sim::SimulationResult;
use crate::time::nanos_to_micros;
use crate::trace::LaneId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExportError {
    #[error("simulation result does not belong to this graph: {0}")]
    MismatchedInput(String),
}

impl ExportError {
    pub fn name(&self) -> &'static str {
        "MismatchedInput"
    }
}

/// `{"traceEvents": [...]}` with one complete (`"ph": "X"`) event per task
/// and one named thread row per lane.
pub fn chrome_trace_events(result: &SimulationResult, graph: &DependencyGraph) -> Result<Value, ExportError> {
    if result.start_of.len() != graph.len() {
        return Err(ExportError::MismatchedInput(format!(
            "{} start times for {} tasks",
            result.start_of.len(),
            graph.len()
        )));
    }
    let lanes: BTreeMap<&LaneId, usize> = graph.lane_order().keys().chain(graph.tasks().map(|t| &t.lane)).fold(
        BTreeMap::new(),
        |mut m, l| {
            let n = m.len();
            m.entry(l).or_insert(n);
            m
        },
    );
    let mut events: Vec<Value> = lanes
        .iter()
        .map(|(lane, tid)| {
            json!({"name": "thread_name", "ph": "M", "pid": 1, "tid": tid, "args": {"name": lane.to_string()}})
        })
        .collect();
    for task in graph.tasks() {
        let start = *result
            .start_of
            .get(&task.id)
            .ok_or_else(|| ExportError::MismatchedInput(format!("no start time for task {}", task.id)))?;
        events.push(json!({
            "name": task.name,
            "cat": task.kind.as_str(),
            "ph": "X",
            "pid": 1,
            "tid": lanes[&task.lane],
            "ts": nanos_to_micros(start),
            "dur": nanos_to_micros(task.duration),
            "args": {
                "id": task.id,
                "lane": task.lane.to_string(),
                "kind": task.kind.as_str(),
                "layer": task.layer.as_ref().map(|t| t.layer.clone()),
                "phase": task.layer.as_ref().map(|t| t.phase),
            },
        }));
    }
    Ok(json!({
        "traceEvents": events,
        "displayTimeUnit": "ns",
        "otherData": {"makespan_ns": result.makespan},
    }))
}

pub fn export_chrome_trace(result: &SimulationResult, graph: &DependencyGraph) -> Result<String, ExportError> {
    Ok(serde_json::to_string(&chrome_trace_events(result, graph)?).expect("json values serialize"))
}
