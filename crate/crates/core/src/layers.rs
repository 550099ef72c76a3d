//! Synchronization-free task-to-layer mapping.
//!
//! CPU tasks are attributed to the layer marker that contains their traced
//! interval; GPU and communication tasks inherit the layer of the CPU call
//! that launched them. Only original trace timestamps are consulted.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::{DependencyGraph, LayerTag, TaskId};
use crate::trace::{LaneId, LayerMarker, Phase};

/// Marker layer name meaning "the whole model".
pub const WILDCARD_LAYER: &str = "*";
/// Layer that wildcard markers map to.
pub const GLOBAL_LAYER: &str = "_global";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerAssignment {
    pub map: BTreeMap<TaskId, LayerTag>,
    pub unmapped: BTreeSet<TaskId>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LayerError {
    #[error("task {task} lies inside partially overlapping markers {first} and {second}")]
    AmbiguousMarker { task: TaskId, first: String, second: String },
}

impl LayerError {
    pub fn name(&self) -> &'static str {
        "AmbiguousMarker"
    }
}

fn marker_tag(m: &LayerMarker) -> LayerTag {
    let layer = if m.layer == WILDCARD_LAYER {
        GLOBAL_LAYER.to_string()
    } else {
        m.layer.clone()
    };
    LayerTag { layer, phase: m.phase }
}

fn label(m: &LayerMarker) -> String {
    format!("{}/{}@[{},{})", m.layer, m.phase, m.start, m.end)
}

/// Maps every task to a `(layer, phase)` pair where possible and writes the
/// result back onto `Task::layer`.
///
/// A CPU task maps to the innermost marker on its lane whose half-open span
/// contains the task's whole traced interval. Markers that overlap without
/// nesting make the assignment ambiguous.
pub fn map_tasks_to_layers(
    graph: &mut DependencyGraph,
    markers: &[LayerMarker],
) -> Result<LayerAssignment, LayerError> {
    let mut by_lane: BTreeMap<&LaneId, Vec<&LayerMarker>> = BTreeMap::new();
    for m in markers {
        by_lane.entry(&m.cpu_lane).or_default().push(m);
    }
    for ms in by_lane.values_mut() {
        ms.sort_by_key(|m| (m.start, std::cmp::Reverse(m.end)));
    }

    let mut assignment = LayerAssignment::default();
    for task in graph.tasks().filter(|t| t.is_cpu()) {
        let covering: Vec<&LayerMarker> = match (task.trace, by_lane.get(&task.lane)) {
            (Some(tt), Some(ms)) => ms
                .iter()
                .filter(|m| {
                    // zero-length tasks still need a start strictly inside
                    tt.start >= m.start && tt.end() <= m.end && tt.start < m.end
                })
                .copied()
                .collect(),
            _ => Vec::new(),
        };
        let Some(innermost) = covering.iter().min_by_key(|m| (m.end - m.start, m.start)) else {
            continue;
        };
        for other in &covering {
            let nested = other.start <= innermost.start && other.end >= innermost.end;
            let same_span = other.start == innermost.start && other.end == innermost.end;
            if !nested || (same_span && marker_tag(other) != marker_tag(innermost)) {
                return Err(LayerError::AmbiguousMarker {
                    task: task.id,
                    first: label(innermost),
                    second: label(other),
                });
            }
        }
        assignment.map.insert(task.id, marker_tag(innermost));
    }

    for task in graph.tasks().filter(|t| !t.is_cpu()) {
        if let Some(tag) = graph.launcher_of(task.id).and_then(|l| assignment.map.get(&l)) {
            assignment.map.insert(task.id, tag.clone());
        }
    }
    for id in graph.task_ids() {
        if !assignment.map.contains_key(&id) {
            assignment.unmapped.insert(id);
        }
    }

    let ids: Vec<TaskId> = graph.task_ids().collect();
    for id in ids {
        let tag = assignment.map.get(&id).cloned();
        graph.task_mut(id).expect("id from graph").layer = tag;
    }
    Ok(assignment)
}

/// Ids of tasks mapped to `layer` (and `phase`, when given).
pub fn select_by_layer(graph: &DependencyGraph, layer: &str, phase: Option<Phase>) -> BTreeSet<TaskId> {
    graph
        .tasks()
        .filter(|t| t.in_layer(layer, phase))
        .map(|t| t.id)
        .collect()
}

/// Layers in order of their first forward marker; layers without a forward
/// marker follow in order of first appearance.
pub fn forward_layer_order(markers: &[LayerMarker]) -> Vec<String> {
    let mut firsts: BTreeMap<String, (u8, u64)> = BTreeMap::new();
    for m in markers {
        if m.layer == WILDCARD_LAYER {
            continue;
        }
        let rank = if m.phase == Phase::Forward { 0 } else { 1 };
        let key = (rank, m.start);
        firsts
            .entry(m.layer.clone())
            .and_modify(|k| *k = (*k).min(key))
            .or_insert(key);
    }
    let mut layers: Vec<(String, (u8, u64))> = firsts.into_iter().collect();
    layers.sort_by_key(|(name, k)| (*k, name.clone()));
    layers.into_iter().map(|(n, _)| n).collect()
}
