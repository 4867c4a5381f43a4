use std::fmt::Write;

use super::SceneGraph3D;

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' | '\\' => {
                out.push('\\');
                out.push(ch);
            }
            '\n' => out.push_str("\\n"),
            _ => out.push(ch),
        }
    }
    out.push('"');
    out
}

/// Graphviz rendering: nodes labeled `name#id`, edges by predicate.
pub fn to_dot(graph: &SceneGraph3D) -> String {
    let mut s = String::from("digraph scene {\n");
    for n in graph.nodes() {
        let label = format!("{}#{}", n.top_label(), n.id);
        writeln!(s, "  n{} [label={}];", n.id, quote(&label)).unwrap();
    }
    for e in graph.edges() {
        writeln!(s, "  n{} -> n{} [label={}];", e.subject, e.object, quote(&e.predicate)).unwrap();
    }
    s.push_str("}\n");
    s
}
