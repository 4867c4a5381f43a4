//! PDDL problem files from scene graphs, plus a structural checker.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, SceneGraph3D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgRole {
    Subject,
    Object,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredicateMapping {
    pub name: String,
    pub args: Vec<ArgRole>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportProfile {
    pub domain: String,
    pub predicates: BTreeMap<String, PredicateMapping>,
    #[serde(default)]
    pub types: BTreeMap<String, String>,
    #[serde(default = "default_type")]
    pub default_type: String,
    #[serde(default)]
    pub constants: BTreeMap<String, String>,
}

fn default_type() -> String {
    "object".into()
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    chars.next().is_some_and(|c| c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Lowercases and replaces anything outside `[a-z0-9_-]` with `_`; names
/// not starting with a letter get an `o_` prefix.
pub fn sanitize(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| {
            let c = c.to_ascii_lowercase();
            if c.is_ascii_alphanumeric() || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    if !s.starts_with(|c: char| c.is_ascii_alphabetic()) {
        s.insert_str(0, "o_");
    }
    s
}

impl ExportProfile {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: ExportProfile = serde_json::from_str(text).map_err(|e| Error::json("export profile", e))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn builtin() -> Self {
        Self::from_json(include_str!("../data/kitchen_profile.json")).expect("builtin profile is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let names = std::iter::once(&self.domain)
            .chain(self.predicates.values().map(|m| &m.name))
            .chain(self.types.values())
            .chain(std::iter::once(&self.default_type))
            .chain(self.constants.keys())
            .chain(self.constants.values());
        for n in names {
            if !is_identifier(n) {
                return Err(Error::Pddl(format!("'{n}' is not a PDDL identifier")));
            }
        }
        if self.predicates.values().any(|m| m.args.is_empty()) {
            return Err(Error::Pddl("predicate mapping without arguments".into()));
        }
        Ok(())
    }

    fn type_of(&self, class: &str) -> &str {
        self.types.get(class).unwrap_or(&self.default_type)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemDescription {
    pub name: String,
    pub domain: String,
    /// `(name, type)` in node-id order, constants last.
    pub objects: Vec<(String, String)>,
    /// Literals without surrounding parentheses, sorted and unique.
    pub init: Vec<String>,
    pub goal: String,
    pub warnings: Vec<String>,
}

impl ProblemDescription {
    /// ASCII text, two-space indent, LF line endings.
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "(define (problem {})", self.name).unwrap();
        writeln!(s, "  (:domain {})", self.domain).unwrap();
        s.push_str("  (:requirements :strips :typing)\n");
        if self.objects.is_empty() {
            s.push_str("  (:objects)\n");
        } else {
            s.push_str("  (:objects\n");
            for (n, t) in &self.objects {
                writeln!(s, "    {n} - {t}").unwrap();
            }
            s.push_str("  )\n");
        }
        if self.init.is_empty() {
            s.push_str("  (:init)\n");
        } else {
            s.push_str("  (:init\n");
            for l in &self.init {
                writeln!(s, "    ({l})").unwrap();
            }
            s.push_str("  )\n");
        }
        writeln!(s, "  (:goal {})", self.goal).unwrap();
        s.push_str(")\n");
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Sexp {
    Atom(String, usize),
    List(Vec<Sexp>, usize),
}

impl Sexp {
    fn offset(&self) -> usize {
        match self {
            Sexp::Atom(_, o) | Sexp::List(_, o) => *o,
        }
    }

    fn atom(&self) -> Option<&str> {
        match self {
            Sexp::Atom(a, _) => Some(a),
            Sexp::List(..) => None,
        }
    }

    fn head(&self) -> Option<&str> {
        match self {
            Sexp::List(items, _) => items.first().and_then(|i| i.atom()),
            Sexp::Atom(..) => None,
        }
    }
}

/// First problem found by [`check_pddl`], with its byte offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub offset: usize,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "byte {}: {}", self.offset, self.message)
    }
}

fn diag<T>(offset: usize, message: impl Into<String>) -> std::result::Result<T, Diagnostic> {
    Err(Diagnostic {
        offset,
        message: message.into(),
    })
}

fn parse_sexps(text: &str) -> std::result::Result<Vec<Sexp>, Diagnostic> {
    let bytes = text.as_bytes();
    let mut stack: Vec<(Vec<Sexp>, usize)> = vec![(Vec::new(), 0)];
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b';' => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            b'(' => {
                stack.push((Vec::new(), i));
                i += 1;
            }
            b')' => {
                if stack.len() == 1 {
                    return diag(i, "unbalanced ')'");
                }
                let (items, start) = stack.pop().unwrap();
                stack.last_mut().unwrap().0.push(Sexp::List(items, start));
                i += 1;
            }
            _ if b.is_ascii_whitespace() => i += 1,
            _ if !b.is_ascii() => return diag(i, "non-ASCII character"),
            _ => {
                let start = i;
                while i < bytes.len() && !bytes[i].is_ascii_whitespace() && !b"();".contains(&bytes[i]) {
                    i += 1;
                }
                let atom = &text[start..i];
                if let Some(k) = atom.bytes().position(|c| !c.is_ascii()) {
                    return diag(start + k, "non-ASCII character");
                }
                stack.last_mut().unwrap().0.push(Sexp::Atom(atom.to_string(), start));
            }
        }
    }
    if stack.len() > 1 {
        return diag(stack.last().unwrap().1, "unclosed '('");
    }
    Ok(stack.pop().unwrap().0)
}

fn check_name(s: &Sexp, what: &str) -> std::result::Result<(), Diagnostic> {
    match s.atom() {
        Some(a) if is_identifier(a) => Ok(()),
        _ => diag(s.offset(), format!("expected {what}")),
    }
}

fn check_literal(s: &Sexp) -> std::result::Result<(), Diagnostic> {
    match s {
        Sexp::List(items, off) => {
            let Some(head) = items.first() else {
                return diag(*off, "empty literal");
            };
            if head.atom() == Some("not") {
                if items.len() != 2 {
                    return diag(*off, "'not' takes one literal");
                }
                return check_literal(&items[1]);
            }
            check_name(head, "a predicate name")?;
            for a in &items[1..] {
                match a.atom() {
                    Some(x) if is_identifier(x) || (x.starts_with('?') && is_identifier(&x[1..])) => {}
                    _ => return diag(a.offset(), "expected a term"),
                }
            }
            Ok(())
        }
        Sexp::Atom(_, off) => diag(*off, "expected a literal in parentheses"),
    }
}

fn check_formula(s: &Sexp) -> std::result::Result<(), Diagnostic> {
    match s.head() {
        Some("and") | Some("or") => match s {
            Sexp::List(items, _) => items[1..].iter().try_for_each(check_formula),
            _ => unreachable!(),
        },
        _ => check_literal(s),
    }
}

/// Checks s-expression balance and the problem skeleton: `define`,
/// `problem`, `:domain`, `:objects`, `:init`, `:goal`.
pub fn check_pddl(text: &str) -> std::result::Result<(), Diagnostic> {
    let top = parse_sexps(text)?;
    let Some(first) = top.first() else {
        return diag(0, "empty input");
    };
    if let Some(extra) = top.get(1) {
        return diag(extra.offset(), "trailing content after the problem");
    }
    let Sexp::List(items, off) = first else {
        return diag(first.offset(), "expected '(define'");
    };
    if first.head() != Some("define") {
        return diag(*off, "expected '(define'");
    }
    let end = off + 1;
    match items.get(1) {
        Some(p @ Sexp::List(pi, _)) if p.head() == Some("problem") && pi.len() == 2 => {
            check_name(&pi[1], "a problem name")?
        }
        Some(other) => return diag(other.offset(), "expected '(problem <name>)'"),
        None => return diag(end, "expected '(problem <name>)'"),
    }
    let sections = &items[2..];
    let mut seen: Vec<&str> = Vec::new();
    for sec in sections {
        let Sexp::List(parts, soff) = sec else {
            return diag(sec.offset(), "expected a section");
        };
        let key = sec.head().unwrap_or("");
        match key {
            ":domain" => {
                if parts.len() != 2 {
                    return diag(*soff, "':domain' takes one name");
                }
                check_name(&parts[1], "a domain name")?;
            }
            ":requirements" => {
                for r in &parts[1..] {
                    if !r.atom().is_some_and(|a| a.starts_with(':')) {
                        return diag(r.offset(), "expected a requirement keyword");
                    }
                }
            }
            ":objects" => {
                let mut k = 1;
                while k < parts.len() {
                    if parts[k].atom() == Some("-") {
                        match parts.get(k + 1) {
                            Some(t) => check_name(t, "a type name")?,
                            None => return diag(parts[k].offset(), "'-' without a type"),
                        }
                        k += 2;
                    } else {
                        check_name(&parts[k], "an object name")?;
                        k += 1;
                    }
                }
            }
            ":init" => parts[1..].iter().try_for_each(check_literal)?,
            ":goal" => {
                if parts.len() != 2 {
                    return diag(*soff, "':goal' takes exactly one formula");
                }
                check_formula(&parts[1])?;
            }
            _ => return diag(*soff, format!("unknown section '{key}'")),
        }
        if seen.contains(&key) {
            return diag(*soff, format!("duplicate section '{key}'"));
        }
        seen.push(key);
    }
    let order = [":domain", ":objects", ":init", ":goal"];
    for want in order {
        if !seen.contains(&want) {
            return diag(end, format!("missing {want} section"));
        }
    }
    let positions: Vec<usize> = order
        .iter()
        .map(|w| seen.iter().position(|s| s == w).unwrap())
        .collect();
    if positions.windows(2).any(|w| w[0] > w[1]) {
        return diag(end, "sections out of order");
    }
    Ok(())
}

fn goal_atoms<'a>(s: &'a Sexp, out: &mut Vec<(&'a str, Vec<&'a Sexp>, usize)>) {
    match s.head() {
        Some("and") | Some("or") | Some("not") => {
            if let Sexp::List(items, _) = s {
                for i in &items[1..] {
                    goal_atoms(i, out);
                }
            }
        }
        Some(p) => {
            if let Sexp::List(items, off) = s {
                out.push((p, items[1..].iter().collect(), *off));
            }
        }
        None => {}
    }
}

/// Builds a problem description. `goal` must be one formula over mapped
/// predicate names and declared objects.
pub fn to_problem(graph: &SceneGraph3D, profile: &ExportProfile, goal: &str, name: &str) -> Result<ProblemDescription> {
    if !is_identifier(name) {
        return Err(Error::Pddl(format!("problem name '{name}' is not a PDDL identifier")));
    }
    let mut names: BTreeMap<NodeId, String> = BTreeMap::new();
    let mut taken: BTreeSet<String> = BTreeSet::new();
    let mut objects = Vec::new();
    for n in graph.nodes() {
        let obj = sanitize(&format!("{}_{}", n.top_label(), n.id));
        if !taken.insert(obj.clone()) {
            return Err(Error::Pddl(format!("object name collision on '{obj}'")));
        }
        objects.push((obj.clone(), profile.type_of(n.top_label()).to_string()));
        names.insert(n.id, obj);
    }
    for (c, t) in &profile.constants {
        if !taken.insert(c.clone()) {
            return Err(Error::Pddl(format!("constant '{c}' collides with an object name")));
        }
        objects.push((c.clone(), t.clone()));
    }

    let mut init = BTreeSet::new();
    let mut warnings = Vec::new();
    for e in graph.edges() {
        let Some(m) = profile.predicates.get(&e.predicate) else {
            warnings.push(format!(
                "skipped edge {} -> {}: predicate '{}' is not mapped",
                e.subject, e.object, e.predicate
            ));
            continue;
        };
        let args: Vec<&str> = m
            .args
            .iter()
            .map(|r| match r {
                ArgRole::Subject => names[&e.subject].as_str(),
                ArgRole::Object => names[&e.object].as_str(),
            })
            .collect();
        init.insert(format!("{} {}", m.name, args.join(" ")));
    }

    let goal = goal.trim();
    let parsed = parse_sexps(goal).map_err(|d| Error::Pddl(format!("goal: {d}")))?;
    let [formula] = parsed.as_slice() else {
        return Err(Error::Pddl("goal must be exactly one formula".into()));
    };
    check_formula(formula).map_err(|d| Error::Pddl(format!("goal: {d}")))?;
    let mapped: BTreeSet<&str> = profile.predicates.values().map(|m| m.name.as_str()).collect();
    let mut atoms = Vec::new();
    goal_atoms(formula, &mut atoms);
    for (pred, args, off) in atoms {
        if !mapped.contains(pred) {
            return Err(Error::Pddl(format!(
                "goal byte {off}: predicate '{pred}' is not in the profile"
            )));
        }
        for a in args {
            let a = a.atom().unwrap_or("");
            if !a.starts_with('?') && !taken.contains(a) {
                return Err(Error::Pddl(format!("goal references undeclared object '{a}'")));
            }
        }
    }

    Ok(ProblemDescription {
        name: name.to_string(),
        domain: profile.domain.clone(),
        objects,
        init: init.into_iter().collect(),
        goal: goal.to_string(),
        warnings,
    })
}
