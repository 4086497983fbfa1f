//! Basic-graph documents: vertices, edges, and branch rules in TOML.

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::net::Position;
use crate::num::Scalar;
use crate::synthesis::{BasicGraph, BranchRule, Edge, Vertex, VertexId};

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
struct GraphDoc<T: Scalar> {
    #[serde(default)]
    vertices: Vec<VertexDoc<T>>,
    #[serde(default)]
    edges: Vec<EdgeDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    branch_rules: Vec<RuleDoc<T>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
struct VertexDoc<T: Scalar> {
    id: u32,
    x: T,
    y: T,
    #[serde(default, skip_serializing_if = "super::is_zero")]
    z: T,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EdgeDoc {
    from: u32,
    to: u32,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    lanes: u32,
    #[serde(default, skip_serializing_if = "is_false")]
    separator: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    bidirectional: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
struct RuleDoc<T: Scalar> {
    vertex: u32,
    /// (edge index, probability) pairs.
    branches: Vec<(usize, T)>,
}

fn one() -> u32 {
    1
}

fn is_one(v: &u32) -> bool {
    *v == 1
}

fn is_false(v: &bool) -> bool {
    !*v
}

pub fn parse_graph<T: Scalar>(text: &str) -> Result<(BasicGraph<T>, Vec<BranchRule<T>>), IoError> {
    let doc: GraphDoc<T> = toml::from_str(text).map_err(|e| IoError::Syntax {
        message: e.to_string(),
    })?;
    let graph = BasicGraph {
        vertices: doc
            .vertices
            .into_iter()
            .map(|v| Vertex {
                id: VertexId(v.id),
                position: Position::new(v.x, v.y, v.z),
            })
            .collect(),
        edges: doc
            .edges
            .into_iter()
            .map(|e| Edge {
                from: VertexId(e.from),
                to: VertexId(e.to),
                lanes: e.lanes,
                separator: e.separator,
                bidirectional: e.bidirectional,
            })
            .collect(),
    };
    let rules = doc
        .branch_rules
        .into_iter()
        .map(|r| BranchRule {
            vertex: VertexId(r.vertex),
            branches: r.branches,
        })
        .collect();
    Ok((graph, rules))
}

pub fn serialize_graph<T: Scalar>(graph: &BasicGraph<T>, rules: &[BranchRule<T>]) -> String {
    let doc = GraphDoc {
        vertices: graph
            .vertices
            .iter()
            .map(|v| VertexDoc {
                id: v.id.0,
                x: v.position.x,
                y: v.position.y,
                z: v.position.z,
            })
            .collect(),
        edges: graph
            .edges
            .iter()
            .map(|e| EdgeDoc {
                from: e.from.0,
                to: e.to.0,
                lanes: e.lanes,
                separator: e.separator,
                bidirectional: e.bidirectional,
            })
            .collect(),
        branch_rules: rules
            .iter()
            .map(|r| RuleDoc {
                vertex: r.vertex.0,
                branches: r.branches.clone(),
            })
            .collect(),
    };
    toml::to_string(&doc).expect("graph document always serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graph_round_trip_is_lossless() {
        let text = r#"
[[vertices]]
id = 0
x = 0.0
y = 0.0

[[vertices]]
id = 1
x = 10.0
y = 0.5

[[vertices]]
id = 2
x = 10.0
y = 10.0

[[edges]]
from = 0
to = 1

[[edges]]
from = 1
to = 2
lanes = 2
separator = true
bidirectional = true

[[branch_rules]]
vertex = 0
branches = [[0, 1.0]]
"#;
        let (graph, rules) = parse_graph::<f64>(text).unwrap();
        let again = serialize_graph(&graph, &rules);
        let (graph2, rules2) = parse_graph::<f64>(&again).unwrap();
        assert_eq!(graph, graph2);
        assert_eq!(rules, rules2);
        assert_eq!(graph.edges[1].lanes, 2);
        assert!(graph.edges[1].separator);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = parse_graph::<f64>("[[vertices]]\nid = 0\nx = 0.0\ny = 0.0\nbogus = 1\n")
            .unwrap_err();
        assert!(matches!(err, IoError::Syntax { .. }));
    }
}
