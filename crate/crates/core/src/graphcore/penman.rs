//! PENMAN-lite reader and writer.
//!
//! Supported grammar:
//!
//! ```text
//! node   := "(" var "/" concept (role target)* ")"
//! target := node | var
//! role   := ":" [^\s()]+
//! ```
//!
//! Variables may be referenced before or after their definition; every
//! reference must resolve somewhere in the same graph. Wiki links, string
//! literals and alignments are not part of the dialect.

use std::collections::HashMap;

use super::{AmrEdge, AmrGraph, AmrNode};
use crate::error::{LabError, Result};

struct Reader<'a> {
    text: &'a str,
    pos: usize,
}

fn is_atom_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, '(' | ')' | '/' | ':' | '"')
}

impl<'a> Reader<'a> {
    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn expect(&mut self, want: char) -> Result<()> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == want => {
                self.pos += c.len_utf8();
                Ok(())
            }
            Some(c) => Err(LabError::parse(self.pos, format!("expected '{want}', found '{c}'"))),
            None if want == ')' => Err(LabError::parse(self.pos, "unbalanced parentheses: missing ')'")),
            None => Err(LabError::parse(self.pos, format!("expected '{want}', found end of input"))),
        }
    }

    fn atom(&mut self) -> &'a str {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if !is_atom_char(c) {
                break;
            }
            self.pos += c.len_utf8();
        }
        &self.text[start..self.pos]
    }

    fn role(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let start = self.pos;
        self.expect(':')?;
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == '(' || c == ')' {
                break;
            }
            self.pos += c.len_utf8();
        }
        if self.pos == start + 1 {
            return Err(LabError::parse(start, "empty role label"));
        }
        Ok(&self.text[start..self.pos])
    }
}

struct Builder {
    nodes: Vec<AmrNode>,
    defined: HashMap<String, usize>,
    edges: Vec<(usize, String, Target)>,
}

enum Target {
    Node(usize),
    Ref { var: String, offset: usize },
}

fn parse_node(r: &mut Reader<'_>, b: &mut Builder) -> Result<usize> {
    r.expect('(')?;
    let var_at = {
        r.skip_ws();
        r.pos
    };
    let var = r.atom();
    if var.is_empty() {
        return Err(LabError::parse(var_at, "missing variable"));
    }
    if b.defined.contains_key(var) {
        return Err(LabError::parse(var_at, format!("variable '{var}' defined twice")));
    }
    r.expect('/')?;
    let concept_at = {
        r.skip_ws();
        r.pos
    };
    let concept = r.atom();
    if concept.is_empty() {
        return Err(LabError::parse(concept_at, "empty concept"));
    }
    let id = b.nodes.len();
    b.nodes.push(AmrNode { var: var.to_string(), concept: concept.to_string() });
    b.defined.insert(var.to_string(), id);
    loop {
        r.skip_ws();
        match r.peek() {
            Some(')') => {
                r.pos += 1;
                return Ok(id);
            }
            Some(':') => {
                let role = r.role()?.to_string();
                r.skip_ws();
                let slot = b.edges.len();
                match r.peek() {
                    Some('(') => {
                        b.edges.push((id, role, Target::Node(usize::MAX)));
                        let child = parse_node(r, b)?;
                        b.edges[slot].2 = Target::Node(child);
                    }
                    Some(_) => {
                        let offset = r.pos;
                        let target = r.atom();
                        if target.is_empty() {
                            return Err(LabError::parse(offset, format!("role {role} has no target")));
                        }
                        b.edges.push((id, role, Target::Ref { var: target.to_string(), offset }));
                    }
                    None => return Err(LabError::parse(r.pos, "unbalanced parentheses: missing ')'")),
                }
            }
            Some(c) => return Err(LabError::parse(r.pos, format!("unexpected '{c}' inside node"))),
            None => return Err(LabError::parse(r.pos, "unbalanced parentheses: missing ')'")),
        }
    }
}

/// Parse one PENMAN-lite graph.
pub fn parse_penman(text: &str) -> Result<AmrGraph> {
    let mut r = Reader { text, pos: 0 };
    let mut b = Builder { nodes: Vec::new(), defined: HashMap::new(), edges: Vec::new() };
    r.skip_ws();
    if r.peek().is_none() {
        return Err(LabError::parse(0, "empty input"));
    }
    let root = parse_node(&mut r, &mut b)?;
    r.skip_ws();
    if let Some(c) = r.peek() {
        let msg = if c == ')' { "unbalanced parentheses: extra ')'".to_string() } else { format!("trailing input '{c}'") };
        return Err(LabError::parse(r.pos, msg));
    }
    let mut edges = Vec::with_capacity(b.edges.len());
    for (source, role, target) in b.edges {
        let target = match target {
            Target::Node(t) => t,
            Target::Ref { var, offset } => *b
                .defined
                .get(&var)
                .ok_or_else(|| LabError::parse(offset, format!("unknown variable '{var}'")))?,
        };
        edges.push(AmrEdge { source, role, target });
    }
    Ok(AmrGraph { nodes: b.nodes, edges, root })
}

/// Write a graph back to PENMAN-lite. Nodes are expanded at their first
/// depth-first visit from the root and referenced by variable afterwards.
pub fn serialize(g: &AmrGraph) -> String {
    fn visit(g: &AmrGraph, n: usize, seen: &mut [bool], out: &mut String) {
        seen[n] = true;
        out.push('(');
        out.push_str(&g.nodes[n].var);
        out.push_str(" / ");
        out.push_str(&g.nodes[n].concept);
        for e in g.edges.iter().filter(|e| e.source == n) {
            out.push(' ');
            out.push_str(&e.role);
            out.push(' ');
            if seen[e.target] {
                out.push_str(&g.nodes[e.target].var);
            } else {
                visit(g, e.target, seen, out);
            }
        }
        out.push(')');
    }
    let mut seen = vec![false; g.nodes.len()];
    let mut out = String::new();
    visit(g, g.root, &mut seen, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordination_example() {
        let g = parse_penman("(a / and :op1 (o / occidentalism) :op2 (o2 / orientalism))").unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.nodes[g.root].var, "a");
        let roles: Vec<_> = g.edges.iter().map(|e| e.role.as_str()).collect();
        assert_eq!(roles, [":op1", ":op2"]);
    }

    #[test]
    fn single_node() {
        let g = parse_penman("(x / thing)").unwrap();
        assert_eq!(g.nodes.len(), 1);
        assert!(g.edges.is_empty());
    }

    #[test]
    fn reentrancy_adds_edge_not_node() {
        let g = parse_penman("(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))").unwrap();
        assert_eq!(g.nodes.len(), 3);
        assert_eq!(g.edges.len(), 3);
        let b = g.nodes.iter().position(|n| n.var == "b").unwrap();
        assert_eq!(g.degree(b), 2);
    }

    #[test]
    fn forward_reference_resolves() {
        let g = parse_penman("(w / want-01 :ARG0 b :ARG1 (b / boy))").unwrap();
        assert_eq!(g.edges[0].target, 1);
    }

    #[test]
    fn errors_carry_offsets() {
        match parse_penman("(a / and :op1 (b / boy)") {
            Err(LabError::Parse { offset, message }) => {
                assert_eq!(offset, 23);
                assert!(message.contains("unbalanced"));
            }
            other => panic!("{other:?}"),
        }
        match parse_penman("(a / and :op1 zz)") {
            Err(LabError::Parse { offset, message }) => {
                assert_eq!(offset, 14);
                assert!(message.contains("unknown variable"));
            }
            other => panic!("{other:?}"),
        }
        match parse_penman("(a / )") {
            Err(LabError::Parse { offset, message }) => {
                assert_eq!(offset, 5);
                assert!(message.contains("empty concept"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_penman("(a / b))"), Err(LabError::Parse { offset: 7, .. })));
    }

    #[test]
    fn serialize_roundtrip() {
        let text = "(w / want-01 :ARG0 (b / boy) :ARG1 (g / go-02 :ARG0 b))";
        let g = parse_penman(text).unwrap();
        assert_eq!(serialize(&g), text);
    }
}
