//! An independent recognizer for the description language, plus a random
//! definition generator and a mutator.
//!
//! The recognizer tokenizes with `regex` and then runs a generic
//! set-of-positions interpreter over the BNF productions written out below
//! as data. It shares no code with the crate's parser.

use std::collections::{BTreeSet, HashMap};

use pandora::adl::{ComponentNode, OptionBinding, Shape, StackDefinition};
use pandora::event::ScalarValue;
use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Sym(char),
    Id(String),
    Int,
    Float,
    Str,
}

pub struct Lexer {
    skip: Regex,
    string: Regex,
    float: Regex,
    int: Regex,
    id: Regex,
    sym: Regex,
}

impl Default for Lexer {
    fn default() -> Self {
        Lexer {
            skip: Regex::new(r"\A(?:\s+|#[^\n]*)").unwrap(),
            string: Regex::new(r#"\A"(?:[^"\\]|\\["\\])*""#).unwrap(),
            float: Regex::new(r"\A[+-]?[0-9]+\.[0-9]+").unwrap(),
            int: Regex::new(r"\A[+-]?[0-9]+").unwrap(),
            id: Regex::new(r"\A[a-zA-Z][a-zA-Z0-9_]*").unwrap(),
            sym: Regex::new(r"\A[%@$:{}\[\]<>()|,=]").unwrap(),
        }
    }
}

impl Lexer {
    pub fn tokens(&self, text: &str) -> Option<Vec<Tok>> {
        let mut out = Vec::new();
        let mut rest = text;
        while !rest.is_empty() {
            if let Some(m) = self.skip.find(rest) {
                rest = &rest[m.end()..];
                continue;
            }
            let (tok, len) = if let Some(m) = self.string.find(rest) {
                (Tok::Str, m.end())
            } else if let Some(m) = self.float.find(rest) {
                (Tok::Float, m.end())
            } else if let Some(m) = self.int.find(rest) {
                (Tok::Int, m.end())
            } else if let Some(m) = self.id.find(rest) {
                (Tok::Id(m.as_str().to_string()), m.end())
            } else {
                let m = self.sym.find(rest)?;
                (Tok::Sym(m.as_str().chars().next().unwrap()), m.end())
            };
            out.push(tok);
            rest = &rest[len..];
        }
        Some(out)
    }
}

#[derive(Debug, Clone)]
enum G {
    Lit(char),
    Id,
    Value,
    N(&'static str),
    Opt(Vec<G>),
    Star(Vec<G>),
    Plus(Vec<G>),
    Alt(Vec<Vec<G>>),
}

fn rules() -> HashMap<&'static str, Vec<G>> {
    use G::*;
    let mut r = HashMap::new();
    r.insert(
        "stack",
        vec![
            Lit('%'),
            Id,
            Opt(vec![N("alias")]),
            Lit('{'),
            Star(vec![N("component")]),
            Lit('}'),
        ],
    );
    r.insert(
        "component",
        vec![Alt(vec![
            vec![N("demux")],
            vec![N("alternative")],
            vec![N("simple")],
        ])],
    );
    r.insert(
        "simple",
        vec![Lit('@'), Id, Opt(vec![N("alias")]), Opt(vec![N("options")])],
    );
    r.insert(
        "options",
        vec![
            Lit('['),
            N("option"),
            Star(vec![Lit(','), N("option")]),
            Lit(']'),
        ],
    );
    r.insert("alias", vec![Lit(':'), Id]);
    r.insert("demux", vec![N("simple"), Lit('<'), N("branch"), Lit('>')]);
    r.insert(
        "alternative",
        vec![
            N("simple"),
            Lit('('),
            N("branch"),
            Star(vec![Lit('|'), N("branch")]),
            Lit(')'),
        ],
    );
    r.insert("branch", vec![Plus(vec![N("component")])]);
    r.insert(
        "option",
        vec![
            Lit('$'),
            Id,
            Opt(vec![N("alias")]),
            Opt(vec![Lit('='), Value]),
        ],
    );
    r
}

/// Reference recognizer for a single stack definition.
pub struct Reference {
    lexer: Lexer,
    rules: HashMap<&'static str, Vec<G>>,
}

impl Default for Reference {
    fn default() -> Self {
        Reference {
            lexer: Lexer::default(),
            rules: rules(),
        }
    }
}

struct Run<'a> {
    toks: &'a [Tok],
    rules: &'a HashMap<&'static str, Vec<G>>,
    memo: HashMap<(&'static str, usize), BTreeSet<usize>>,
}

impl Run<'_> {
    fn seq(&mut self, syms: &[G], start: usize) -> BTreeSet<usize> {
        let mut cur = BTreeSet::from([start]);
        for s in syms {
            let mut next = BTreeSet::new();
            for p in cur {
                next.extend(self.one(s, p));
            }
            if next.is_empty() {
                return next;
            }
            cur = next;
        }
        cur
    }

    fn one(&mut self, g: &G, p: usize) -> BTreeSet<usize> {
        let tok = self.toks.get(p);
        match g {
            G::Lit(c) => match tok {
                Some(Tok::Sym(x)) if x == c => BTreeSet::from([p + 1]),
                _ => BTreeSet::new(),
            },
            G::Id => match tok {
                Some(Tok::Id(_)) => BTreeSet::from([p + 1]),
                _ => BTreeSet::new(),
            },
            G::Value => match tok {
                Some(Tok::Int | Tok::Float | Tok::Str) => BTreeSet::from([p + 1]),
                Some(Tok::Id(s)) if s == "true" || s == "false" => BTreeSet::from([p + 1]),
                _ => BTreeSet::new(),
            },
            G::N(name) => {
                if let Some(r) = self.memo.get(&(*name, p)) {
                    return r.clone();
                }
                let body = self.rules[name].clone();
                let r = self.seq(&body, p);
                self.memo.insert((*name, p), r.clone());
                r
            }
            G::Opt(x) => {
                let mut r = self.seq(x, p);
                r.insert(p);
                r
            }
            G::Star(x) => self.star(x, BTreeSet::from([p])),
            G::Plus(x) => {
                let first = self.seq(x, p);
                self.star(x, first)
            }
            G::Alt(alts) => {
                let mut r = BTreeSet::new();
                for a in alts {
                    r.extend(self.seq(a, p));
                }
                r
            }
        }
    }

    fn star(&mut self, x: &[G], start: BTreeSet<usize>) -> BTreeSet<usize> {
        let mut all = start.clone();
        let mut frontier = start;
        while !frontier.is_empty() {
            let mut next = BTreeSet::new();
            for q in frontier {
                for e in self.seq(x, q) {
                    if all.insert(e) {
                        next.insert(e);
                    }
                }
            }
            frontier = next;
        }
        all
    }
}

impl Reference {
    pub fn accepts(&self, text: &str) -> bool {
        let Some(toks) = self.lexer.tokens(text) else {
            return false;
        };
        let mut run = Run {
            toks: &toks,
            rules: &self.rules,
            memo: HashMap::new(),
        };
        run.one(&G::N("stack"), 0).contains(&toks.len())
    }

    pub fn identifier(&self) -> Regex {
        Regex::new(r"\A[a-zA-Z][a-zA-Z0-9_]*\z").unwrap()
    }
}

// ---------------------------------------------------------------------------
// Generation

const TYPES: &[&str] = &[
    "src", "count", "filter", "udp", "demux", "sink", "noop", "a", "B_2",
];
const OPTS: &[&str] = &["device", "path", "rate", "n", "field", "equals", "x1"];

pub struct Gen<'r, R: Rng> {
    pub rng: &'r mut R,
    next_alias: usize,
}

impl<'r, R: Rng> Gen<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Gen { rng, next_alias: 0 }
    }

    fn alias(&mut self) -> Option<String> {
        if self.rng.gen_bool(0.3) {
            self.next_alias += 1;
            Some(format!("al{}", self.next_alias))
        } else {
            None
        }
    }

    pub fn value(&mut self) -> ScalarValue {
        match self.rng.gen_range(0..4) {
            0 => ScalarValue::Int(match self.rng.gen_range(0..4) {
                0 => i64::MAX,
                1 => i64::MIN,
                _ => self.rng.gen_range(-1000..1000),
            }),
            1 => {
                let text = format!(
                    "{}{}.{}",
                    if self.rng.gen_bool(0.3) { "-" } else { "" },
                    self.rng.gen_range(0..10_000),
                    self.rng.gen_range(0..1_000_000)
                );
                ScalarValue::Float(text.parse().unwrap())
            }
            2 => ScalarValue::Bool(self.rng.gen()),
            _ => {
                let alphabet: Vec<char> = "ab z_\"\\#{}%@$,.\n\té".chars().collect();
                let n = self.rng.gen_range(0..8);
                ScalarValue::Str(
                    (0..n)
                        .map(|_| *alphabet.choose(self.rng).unwrap())
                        .collect(),
                )
            }
        }
    }

    fn options(&mut self) -> Vec<OptionBinding> {
        if self.rng.gen_bool(0.5) {
            return Vec::new();
        }
        let n = self.rng.gen_range(1..4);
        (0..n)
            .map(|_| OptionBinding {
                name: OPTS.choose(self.rng).unwrap().to_string(),
                alias: self.alias(),
                value: if self.rng.gen_bool(0.8) {
                    Some(self.value())
                } else {
                    None
                },
            })
            .collect()
    }

    fn branch(&mut self, depth: usize) -> Vec<ComponentNode> {
        let n = self.rng.gen_range(1..4);
        (0..n).map(|_| self.node(depth + 1)).collect()
    }

    pub fn node(&mut self, depth: usize) -> ComponentNode {
        let type_id = TYPES.choose(self.rng).unwrap().to_string();
        let alias = self.alias();
        let options = self.options();
        let shape = if depth >= 3 {
            Shape::Simple
        } else {
            match self.rng.gen_range(0..10) {
                0 | 1 => Shape::Demux(self.branch(depth)),
                2 | 3 => {
                    let k = self.rng.gen_range(1..4);
                    Shape::Alternative((0..k).map(|_| self.branch(depth)).collect())
                }
                _ => Shape::Simple,
            }
        };
        ComponentNode {
            type_id,
            alias,
            options,
            shape,
        }
    }

    pub fn definition(&mut self) -> StackDefinition {
        self.next_alias = 0;
        let n = self.rng.gen_range(0..6);
        StackDefinition {
            name: TYPES.choose(self.rng).unwrap().to_string(),
            // Stack aliases live in their own namespace.
            alias: if self.rng.gen_bool(0.3) {
                Some("al1".into())
            } else {
                None
            },
            body: (0..n).map(|_| self.node(0)).collect(),
        }
    }

    /// Random inter-token layout: spaces, newlines, tabs, comments.
    fn gap(&mut self, out: &mut String, required: bool) {
        match self.rng.gen_range(0..6) {
            0 if !required => {}
            1 => out.push('\n'),
            2 => out.push_str("\t "),
            3 => out.push_str(" # note: @x[$y=1] }\n"),
            _ => out.push(' '),
        }
    }

    /// Writes a definition with randomized whitespace and comments.
    pub fn write(&mut self, def: &StackDefinition) -> String {
        let mut out = String::new();
        self.gap(&mut out, false);
        out.push('%');
        self.gap(&mut out, false);
        out.push_str(&def.name);
        if let Some(a) = &def.alias {
            self.gap(&mut out, false);
            out.push(':');
            self.gap(&mut out, false);
            out.push_str(a);
        }
        self.gap(&mut out, false);
        out.push('{');
        for n in &def.body {
            self.gap(&mut out, false);
            self.write_node(&mut out, n);
        }
        self.gap(&mut out, false);
        out.push('}');
        self.gap(&mut out, false);
        out
    }

    fn write_value(&mut self, out: &mut String, v: &ScalarValue) {
        match v {
            ScalarValue::Int(i) => {
                if *i >= 0 && self.rng.gen_bool(0.2) {
                    out.push('+');
                }
                out.push_str(&i.to_string());
            }
            ScalarValue::Float(f) => out.push_str(&float_text(*f)),
            ScalarValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            ScalarValue::Str(s) => {
                out.push('"');
                for c in s.chars() {
                    if c == '"' || c == '\\' {
                        out.push('\\');
                    }
                    out.push(c);
                }
                out.push('"');
            }
        }
    }

    fn write_node(&mut self, out: &mut String, n: &ComponentNode) {
        out.push('@');
        self.gap(out, false);
        out.push_str(&n.type_id);
        if let Some(a) = &n.alias {
            self.gap(out, false);
            out.push(':');
            self.gap(out, false);
            out.push_str(a);
        }
        if !n.options.is_empty() {
            self.gap(out, false);
            out.push('[');
            for (i, o) in n.options.iter().enumerate() {
                if i > 0 {
                    self.gap(out, false);
                    out.push(',');
                }
                self.gap(out, false);
                out.push('$');
                self.gap(out, false);
                out.push_str(&o.name);
                if let Some(a) = &o.alias {
                    self.gap(out, false);
                    out.push(':');
                    self.gap(out, false);
                    out.push_str(a);
                }
                if let Some(v) = &o.value {
                    self.gap(out, false);
                    out.push('=');
                    self.gap(out, false);
                    self.write_value(out, v);
                }
            }
            self.gap(out, false);
            out.push(']');
        }
        let branch = |g: &mut Self, out: &mut String, b: &[ComponentNode]| {
            for (i, n) in b.iter().enumerate() {
                // Two identifiers in a row need a separator; after '@x' a
                // '@' is fine but keep at least one space for readability.
                g.gap(out, i > 0);
                g.write_node(out, n);
            }
        };
        match &n.shape {
            Shape::Simple => {}
            Shape::Demux(b) => {
                self.gap(out, false);
                out.push('<');
                branch(self, out, b);
                self.gap(out, false);
                out.push('>');
            }
            Shape::Alternative(bs) => {
                self.gap(out, false);
                out.push('(');
                for (i, b) in bs.iter().enumerate() {
                    if i > 0 {
                        self.gap(out, false);
                        out.push('|');
                    }
                    branch(self, out, b);
                }
                self.gap(out, false);
                out.push(')');
            }
        }
    }
}

/// Decimal text with digits on both sides of the point that parses back to
/// exactly `f`.
pub fn float_text(f: f64) -> String {
    let s = format!("{f:?}");
    if s.contains('e') {
        format!("{f:.1}")
    } else if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}

/// Applies 1 to 3 random character-level edits.
pub fn mutate<R: Rng>(rng: &mut R, text: &str) -> String {
    let alphabet: Vec<char> = "%@$:{}[]<>()|,=\"#\\ \n1a.-_+".chars().collect();
    let mut chars: Vec<char> = text.chars().collect();
    for _ in 0..rng.gen_range(1..=3) {
        if chars.is_empty() {
            chars.push(*alphabet.choose(rng).unwrap());
            continue;
        }
        let i = rng.gen_range(0..chars.len());
        match rng.gen_range(0..5) {
            0 => {
                chars.remove(i);
            }
            1 => chars.insert(i, *alphabet.choose(rng).unwrap()),
            2 => chars[i] = *alphabet.choose(rng).unwrap(),
            3 if i + 1 < chars.len() => chars.swap(i, i + 1),
            _ => {
                let j = rng.gen_range(i..=chars.len().min(i + 6));
                let piece: Vec<char> = chars[i..j].to_vec();
                let k = rng.gen_range(0..=chars.len());
                for (off, c) in piece.into_iter().enumerate() {
                    chars.insert(k + off, c);
                }
            }
        }
    }
    chars.into_iter().collect()
}
