//! Query language:
//!
//! ```text
//! query   := count | show
//! count   := COUNT class [HIER] [where]
//! show    := SHOW superlative class [where]
//! where   := WHERE cond {AND cond}
//! cond    := color = name | (width|height) cmp number | pred = class | in box
//! box     := ( n , n , n ) - ( n , n , n )
//! ```
//!
//! Keywords are case-insensitive; class, color and predicate names are kept
//! as written.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ClassSel {
    Any,
    Name(String),
}

impl fmt::Display for ClassSel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassSel::Any => f.write_str("*"),
            ClassSel::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Superlative {
    Biggest,
    Smallest,
    Nearest,
    Farthest,
}

impl Superlative {
    fn parse(word: &str) -> Option<Self> {
        Some(match word.to_ascii_lowercase().as_str() {
            "biggest" => Superlative::Biggest,
            "smallest" => Superlative::Smallest,
            "nearest" => Superlative::Nearest,
            "farthest" => Superlative::Farthest,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Superlative::Biggest => "biggest",
            Superlative::Smallest => "smallest",
            Superlative::Nearest => "nearest",
            Superlative::Farthest => "farthest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dim {
    Width,
    Height,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Lt,
    Gt,
    Le,
    Ge,
}

impl Cmp {
    pub fn as_str(self) -> &'static str {
        match self {
            Cmp::Lt => "<",
            Cmp::Gt => ">",
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
        }
    }

    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Cmp::Lt => a < b,
            Cmp::Gt => a > b,
            Cmp::Le => a <= b,
            Cmp::Ge => a >= b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cond {
    Color(String),
    Size {
        dim: Dim,
        cmp: Cmp,
        value: f64,
    },
    /// Outgoing edge with this predicate into a node of the class.
    Related {
        predicate: String,
        class: ClassSel,
    },
    /// Node mean inside the axis-aligned box, in meters.
    In {
        min: [f64; 3],
        max: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Count {
        class: ClassSel,
        hierarchical: bool,
        filters: Vec<Cond>,
    },
    Show {
        superlative: Superlative,
        class: ClassSel,
        filters: Vec<Cond>,
    },
}

impl Query {
    pub fn filters(&self) -> &[Cond] {
        match self {
            Query::Count { filters, .. } | Query::Show { filters, .. } => filters,
        }
    }
}

fn fmt_num(x: f64) -> String {
    format!("{x:?}")
}

impl fmt::Display for Cond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cond::Color(c) => write!(f, "color={c}"),
            Cond::Size { dim, cmp, value } => {
                let d = match dim {
                    Dim::Width => "width",
                    Dim::Height => "height",
                };
                write!(f, "{d}{}{}", cmp.as_str(), fmt_num(*value))
            }
            Cond::Related { predicate, class } => write!(f, "{predicate}={class}"),
            Cond::In { min, max } => {
                let t = |v: &[f64; 3]| v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(",");
                write!(f, "in ({})-({})", t(min), t(max))
            }
        }
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Query::Count {
                class, hierarchical, ..
            } => {
                write!(f, "COUNT {class}")?;
                if *hierarchical {
                    f.write_str(" HIER")?;
                }
            }
            Query::Show { superlative, class, .. } => write!(f, "SHOW {} {class}", superlative.as_str())?,
        }
        let filters = self.filters();
        if !filters.is_empty() {
            f.write_str(" WHERE ")?;
            for (i, c) in filters.iter().enumerate() {
                if i > 0 {
                    f.write_str(" AND ")?;
                }
                write!(f, "{c}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Star,
    Eq,
    Lt,
    Gt,
    Le,
    Ge,
    LParen,
    RParen,
    Comma,
    Minus,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Num(n) => format!("number {n}"),
            Tok::Star => "'*'".into(),
            Tok::Eq => "'='".into(),
            Tok::Lt => "'<'".into(),
            Tok::Gt => "'>'".into(),
            Tok::Le => "'<='".into(),
            Tok::Ge => "'>='".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Minus => "'-'".into(),
        }
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> Error {
    Error::QuerySyntax {
        offset,
        message: message.into(),
    }
}

fn lex(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        let single = match b {
            b'*' => Some(Tok::Star),
            b'=' => Some(Tok::Eq),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            b'-' => Some(Tok::Minus),
            _ => None,
        };
        if b.is_ascii_whitespace() {
            i += 1;
        } else if let Some(t) = single {
            out.push((start, t));
            i += 1;
        } else if b == b'<' || b == b'>' {
            let eq = bytes.get(i + 1) == Some(&b'=');
            out.push((
                start,
                match (b, eq) {
                    (b'<', false) => Tok::Lt,
                    (b'<', true) => Tok::Le,
                    (_, false) => Tok::Gt,
                    (_, true) => Tok::Ge,
                },
            ));
            i += 1 + eq as usize;
        } else if b.is_ascii_digit() || b == b'.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s = &text[start..i];
            let n: f64 = s.parse().map_err(|_| syntax(start, format!("bad number '{s}'")))?;
            out.push((start, Tok::Num(n)));
        } else if b.is_ascii_alphabetic() || b == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Ident(text[start..i].to_string())));
        } else {
            let ch = text[start..].chars().next().unwrap();
            return Err(syntax(start, format!("unexpected character {ch:?}")));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|t| t.0).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.1.clone());
        self.pos += 1;
        t
    }

    fn fail<T>(&self, expected: &str) -> Result<T> {
        let found = self
            .peek()
            .map(|t| t.describe())
            .unwrap_or_else(|| "end of query".into());
        Err(syntax(self.offset(), format!("expected {expected}, found {found}")))
    }

    fn keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s.eq_ignore_ascii_case(kw))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(what)
        }
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.fail(what),
        }
    }

    fn class(&mut self) -> Result<ClassSel> {
        match self.peek() {
            Some(Tok::Star) => {
                self.pos += 1;
                Ok(ClassSel::Any)
            }
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(ClassSel::Name(s))
            }
            _ => self.fail("a class name or '*'"),
        }
    }

    fn number(&mut self) -> Result<f64> {
        let neg = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.peek() {
            Some(Tok::Num(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(if neg { -n } else { n })
            }
            _ => self.fail("a number"),
        }
    }

    fn triple(&mut self) -> Result<[f64; 3]> {
        self.expect(Tok::LParen, "'('")?;
        let a = self.number()?;
        self.expect(Tok::Comma, "','")?;
        let b = self.number()?;
        self.expect(Tok::Comma, "','")?;
        let c = self.number()?;
        self.expect(Tok::RParen, "')'")?;
        Ok([a, b, c])
    }

    fn cond(&mut self) -> Result<Cond> {
        let at = self.offset();
        let key = self.ident("a filter")?;
        let lower = key.to_ascii_lowercase();
        let next = self.peek().cloned();
        match (lower.as_str(), next) {
            ("in", Some(Tok::LParen)) => {
                let min = self.triple()?;
                self.expect(Tok::Minus, "'-' between box corners")?;
                let max = self.triple()?;
                Ok(Cond::In { min, max })
            }
            ("color", Some(Tok::Eq)) => {
                self.pos += 1;
                Ok(Cond::Color(self.ident("a color name")?))
            }
            ("width" | "height", Some(Tok::Lt | Tok::Gt | Tok::Le | Tok::Ge)) => {
                let cmp = match self.next() {
                    Some(Tok::Lt) => Cmp::Lt,
                    Some(Tok::Gt) => Cmp::Gt,
                    Some(Tok::Le) => Cmp::Le,
                    _ => Cmp::Ge,
                };
                let dim = if lower == "width" { Dim::Width } else { Dim::Height };
                Ok(Cond::Size {
                    dim,
                    cmp,
                    value: self.number()?,
                })
            }
            ("color" | "width" | "height", _) => {
                self.pos = self.toks.iter().position(|t| t.0 == at).unwrap() + 1;
                self.fail(if lower == "color" { "'='" } else { "a comparison" })
            }
            (_, Some(Tok::Eq)) => {
                self.pos += 1;
                Ok(Cond::Related {
                    predicate: key,
                    class: self.class()?,
                })
            }
            _ => Err(syntax(at, format!("unknown filter key '{key}'"))),
        }
    }

    fn filters(&mut self) -> Result<Vec<Cond>> {
        let mut out = Vec::new();
        if !self.keyword("where") {
            return Ok(out);
        }
        self.pos += 1;
        out.push(self.cond()?);
        while self.keyword("and") {
            self.pos += 1;
            out.push(self.cond()?);
        }
        Ok(out)
    }

    fn query(&mut self) -> Result<Query> {
        let q = if self.keyword("count") {
            self.pos += 1;
            let class = self.class()?;
            let hierarchical = self.keyword("hier");
            if hierarchical {
                self.pos += 1;
            }
            Query::Count {
                class,
                hierarchical,
                filters: self.filters()?,
            }
        } else if self.keyword("show") {
            self.pos += 1;
            let superlative = match self.peek() {
                Some(Tok::Ident(s)) => match Superlative::parse(s) {
                    Some(sup) => sup,
                    None => return self.fail("biggest, smallest, nearest or farthest"),
                },
                _ => return self.fail("biggest, smallest, nearest or farthest"),
            };
            self.pos += 1;
            Query::Show {
                superlative,
                class: self.class()?,
                filters: self.filters()?,
            }
        } else {
            return self.fail("COUNT or SHOW");
        };
        if self.peek().is_some() {
            return self.fail("end of query");
        }
        Ok(q)
    }
}

pub fn parse_query(text: &str) -> Result<Query> {
    let toks = lex(text)?;
    Parser {
        toks,
        pos: 0,
        end: text.len(),
    }
    .query()
}
