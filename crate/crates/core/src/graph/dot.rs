use std::fmt::Write;

use super::{Layer, Node, SceneGraph};

/// Options for Graphviz export.
#[derive(Debug, Clone)]
pub struct DotOptions {
    /// Mesh vertices can number in the tens of thousands; off by default.
    pub include_mesh: bool,
    /// Optional human-readable label names, indexed by class index.
    pub label_names: Vec<String>,
}

impl Default for DotOptions {
    fn default() -> Self {
        Self {
            include_mesh: false,
            label_names: Vec::new(),
        }
    }
}

fn fmt3(p: &[f64; 3]) -> String {
    format!("({:.2}, {:.2}, {:.2})", p[0], p[1], p[2])
}

impl SceneGraph {
    /// Graphviz rendering with one cluster per layer. Containment edges point
    /// child to parent; relation and place edges are undirected and dashed.
    pub fn export_dot(&self, opts: &DotOptions) -> String {
        let mut out = String::from("digraph scene_graph {\n  rankdir=BT;\n  node [shape=box, fontsize=10];\n");
        let shown = |layer: Layer| opts.include_mesh || layer != Layer::Mesh;
        for layer in Layer::ALL {
            let _ = writeln!(out, "  subgraph cluster_l{} {{", layer.index());
            let _ = writeln!(out, "    label=\"{} {}\";", layer, layer.name());
            if shown(layer) {
                for (id, node) in self.nodes(layer) {
                    let text = match node {
                        Node::MeshVertex(v) => format!("{id}\\nv {}", fmt3(&v.position)),
                        Node::Object(o) => {
                            let name = opts
                                .label_names
                                .get(o.label as usize)
                                .cloned()
                                .unwrap_or_else(|| format!("label {}", o.label));
                            format!("{id}\\n{name}\\nn={}", o.update_count)
                        }
                        Node::Place(p) => format!("{id}\\nplace {}", fmt3(&p.centroid)),
                        Node::Room(r) => {
                            format!("{id}\\nroom K={}", r.feature_clusters.len())
                        }
                        Node::Building(_) => format!("{id}\\nbuilding"),
                    };
                    let _ = writeln!(out, "    {id} [label=\"{text}\"];");
                }
            }
            out.push_str("  }\n");
        }
        for (child, parent) in self.interlayer_edges() {
            let visible = [child, parent]
                .iter()
                .all(|n| self.layer_of(*n).is_some_and(shown));
            if visible {
                let _ = writeln!(out, "  {child} -> {parent};");
            }
        }
        for (id, place) in self.places() {
            for n in place.neighbors.range(id..) {
                if *n != id {
                    let _ = writeln!(
                        out,
                        "  {id} -> {n} [dir=none, style=dotted, color=gray];"
                    );
                }
            }
        }
        for edge in self.relations() {
            let _ = writeln!(
                out,
                "  {} -> {} [dir=none, style=dashed, color=red, label=\"n={}\"];",
                edge.endpoints.0, edge.endpoints.1, edge.update_count
            );
        }
        out.push_str("}\n");
        out
    }
}
