//! The stack description language.
//!
//! ```text
//! stack       ::= '%' id alias? '{' component* '}'
//! component   ::= simple | demux | alternative
//! simple      ::= '@' id alias? options?
//! options     ::= '[' option (',' option)* ']'
//! alias       ::= ':' id
//! demux       ::= simple '<' branch '>'
//! alternative ::= simple '(' branch ('|' branch)* ')'
//! branch      ::= component+
//! option      ::= '$' id alias? ('=' value)?
//! id          ::= [a-zA-Z][a-zA-Z0-9_]*
//! value       ::= integer | float | boolean | '"' chars '"'
//! ```
//!
//! Extensions over the bare grammar: whitespace between tokens is ignored,
//! `#` starts a comment running to the end of the line, and string literals
//! accept `\"` and `\\` as their only escapes. Integers are decimal with an
//! optional sign, floats need digits on both sides of the decimal point,
//! booleans are `true` and `false`.

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::assembly::FactoryRegistry;
use crate::component::{resolve_option, OutputKind};
use crate::event::{is_identifier, write_quoted, ScalarValue};

#[derive(Debug, Clone, PartialEq)]
pub struct StackDefinition {
    pub name: String,
    pub alias: Option<String>,
    pub body: Vec<ComponentNode>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentNode {
    pub type_id: String,
    pub alias: Option<String>,
    pub options: Vec<OptionBinding>,
    pub shape: Shape,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Simple,
    /// Branch template instantiated once per category key.
    Demux(Vec<ComponentNode>),
    Alternative(Vec<Vec<ComponentNode>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptionBinding {
    pub name: String,
    pub alias: Option<String>,
    pub value: Option<ScalarValue>,
}

impl StackDefinition {
    pub fn new(name: impl Into<String>) -> Self {
        StackDefinition {
            name: name.into(),
            alias: None,
            body: Vec::new(),
        }
    }

    pub fn node(&self, path: &NodePath) -> Option<&ComponentNode> {
        let mut seq = &self.body;
        for step in &path.steps {
            let node = seq.get(step.node)?;
            seq = match (&node.shape, &step.branch) {
                (Shape::Alternative(branches), BranchRef::Alt(b)) => branches.get(*b)?,
                (Shape::Demux(template), BranchRef::Key(_)) => template,
                _ => return None,
            };
        }
        seq.get(path.index)
    }

    pub fn node_mut(&mut self, path: &NodePath) -> Option<&mut ComponentNode> {
        let mut seq = &mut self.body;
        for step in &path.steps {
            let node = seq.get_mut(step.node)?;
            seq = match (&mut node.shape, &step.branch) {
                (Shape::Alternative(branches), BranchRef::Alt(b)) => branches.get_mut(*b)?,
                (Shape::Demux(template), BranchRef::Key(_)) => template,
                _ => return None,
            };
        }
        seq.get_mut(path.index)
    }

    /// Visits every node in definition order. Demux templates are entered
    /// only when `templates` is set; their steps carry an empty key.
    pub fn visit<'a>(&'a self, templates: bool, f: &mut dyn FnMut(&NodePath, &'a ComponentNode)) {
        fn walk<'a>(
            seq: &'a [ComponentNode],
            prefix: &mut Vec<BranchStep>,
            templates: bool,
            f: &mut dyn FnMut(&NodePath, &'a ComponentNode),
        ) {
            for (i, node) in seq.iter().enumerate() {
                f(
                    &NodePath {
                        steps: prefix.clone(),
                        index: i,
                    },
                    node,
                );
                match &node.shape {
                    Shape::Simple => {}
                    Shape::Alternative(branches) => {
                        for (b, branch) in branches.iter().enumerate() {
                            prefix.push(BranchStep {
                                node: i,
                                branch: BranchRef::Alt(b),
                            });
                            walk(branch, prefix, templates, f);
                            prefix.pop();
                        }
                    }
                    Shape::Demux(template) if templates => {
                        prefix.push(BranchStep {
                            node: i,
                            branch: BranchRef::Key(String::new()),
                        });
                        walk(template, prefix, templates, f);
                        prefix.pop();
                    }
                    Shape::Demux(_) => {}
                }
            }
        }
        walk(&self.body, &mut Vec::new(), templates, f);
    }
}

impl ComponentNode {
    pub fn simple(type_id: impl Into<String>) -> Self {
        ComponentNode {
            type_id: type_id.into(),
            alias: None,
            options: Vec::new(),
            shape: Shape::Simple,
        }
    }

    pub fn binding(&self, name: &str) -> Option<&OptionBinding> {
        self.options.iter().find(|b| b.name == name)
    }

    /// Sets (or adds) the value bound to `name`.
    pub fn bind(&mut self, name: &str, value: ScalarValue) {
        match self.options.iter_mut().find(|b| b.name == name) {
            Some(b) => b.value = Some(value),
            None => self.options.push(OptionBinding {
                name: name.to_string(),
                alias: None,
                value: Some(value),
            }),
        }
    }
}

// ---------------------------------------------------------------------------
// Paths

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BranchRef {
    Alt(usize),
    Key(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BranchStep {
    pub node: usize,
    pub branch: BranchRef,
}

/// Position of a component inside a stack: the chain of branches leading to
/// its sequence, then its index in that sequence. Text form is
/// `seg/seg/.../index` where `seg` is `i.b` (alternative branch) or
/// `i{key}` (demux branch).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodePath {
    pub steps: Vec<BranchStep>,
    pub index: usize,
}

impl NodePath {
    pub fn top(index: usize) -> Self {
        NodePath {
            steps: Vec::new(),
            index,
        }
    }

    /// The sequence this node belongs to, as a list of steps.
    pub fn branch(&self) -> &[BranchStep] {
        &self.steps
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for step in &self.steps {
            match &step.branch {
                BranchRef::Alt(b) => write!(f, "{}.{}/", step.node, b)?,
                BranchRef::Key(k) => write!(f, "{}{{{}}}/", step.node, k)?,
            }
        }
        write!(f, "{}", self.index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed component path {0:?}")]
pub struct PathError(pub String);

impl FromStr for NodePath {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PathError(s.to_string());
        let mut segments = Vec::new();
        let mut rest = s;
        loop {
            // A key may contain '/', so split outside braces only.
            let end = match rest.find('{') {
                Some(open) if rest[..open].find('/').is_none() => {
                    let close = rest[open..].find('}').ok_or_else(err)? + open;
                    close + 1
                }
                _ => rest.find('/').unwrap_or(rest.len()),
            };
            segments.push(&rest[..end]);
            if end == rest.len() {
                break;
            }
            if rest.as_bytes()[end] != b'/' {
                return Err(err());
            }
            rest = &rest[end + 1..];
        }
        let (last, steps) = segments.split_last().ok_or_else(err)?;
        let index = last.parse::<usize>().map_err(|_| err())?;
        let steps = steps
            .iter()
            .map(|seg| {
                if let Some(open) = seg.find('{') {
                    if !seg.ends_with('}') {
                        return Err(err());
                    }
                    let node = seg[..open].parse().map_err(|_| err())?;
                    Ok(BranchStep {
                        node,
                        branch: BranchRef::Key(seg[open + 1..seg.len() - 1].to_string()),
                    })
                } else {
                    let (n, b) = seg.split_once('.').ok_or_else(err)?;
                    Ok(BranchStep {
                        node: n.parse().map_err(|_| err())?,
                        branch: BranchRef::Alt(b.parse().map_err(|_| err())?),
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(NodePath { steps, index })
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    DuplicateAlias,
    LiteralRange,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
    pub expected: Vec<&'static str>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Sym(char),
    Ident(String),
    Int(i64),
    Float(f64),
    Str(String),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Sym(c) => format!("'{c}'"),
            Tok::Ident(s) => format!("identifier {s:?}"),
            Tok::Int(v) => format!("integer {v}"),
            Tok::Float(v) => format!("float {v}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

const SYMBOLS: &str = "%@$:{}[]<>()|,=";

/// Tokens plus the first literal-range error, which is reported only if the
/// text is otherwise well formed.
fn lex(text: &str) -> Result<(Vec<Token>, Option<ParseError>), ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut range: Option<ParseError> = None;
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |kind, line, column, message: String| ParseError {
        kind,
        line,
        column,
        expected: Vec::new(),
        message,
    };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let tok = if SYMBOLS.contains(c) {
            i += 1;
            Tok::Sym(c)
        } else if c.is_ascii_alphabetic() {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            Tok::Ident(chars[start..i].iter().collect())
        } else if c.is_ascii_digit() || c == '+' || c == '-' {
            if c == '+' || c == '-' {
                i += 1;
            }
            let digits = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i == digits {
                return Err(err(
                    ParseErrorKind::Syntax,
                    tl,
                    tc,
                    format!("expected digits after '{c}'"),
                ));
            }
            let mut float = false;
            if i + 1 < chars.len() && chars[i] == '.' && chars[i + 1].is_ascii_digit() {
                float = true;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let s: String = chars[start..i].iter().collect();
            if float {
                Tok::Float(s.parse().expect("float lexeme"))
            } else {
                Tok::Int(s.parse().unwrap_or_else(|_| {
                    range.get_or_insert_with(|| {
                        err(
                            ParseErrorKind::LiteralRange,
                            tl,
                            tc,
                            format!("integer literal {s} out of range"),
                        )
                    });
                    0
                }))
            }
        } else if c == '"' {
            i += 1;
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None => {
                        return Err(err(
                            ParseErrorKind::Syntax,
                            tl,
                            tc,
                            "unterminated string literal".into(),
                        ))
                    }
                    Some('"') => {
                        i += 1;
                        break;
                    }
                    Some('\\') => match chars.get(i + 1) {
                        Some(&e @ ('"' | '\\')) => {
                            s.push(e);
                            i += 2;
                        }
                        _ => {
                            return Err(err(
                                ParseErrorKind::Syntax,
                                tl,
                                tc,
                                "invalid escape in string literal".into(),
                            ))
                        }
                    },
                    Some(&ch) => {
                        if ch == '\n' {
                            line += 1;
                            col = 1;
                        }
                        s.push(ch);
                        i += 1;
                    }
                }
            }
            Tok::Str(s)
        } else {
            return Err(err(
                ParseErrorKind::Syntax,
                tl,
                tc,
                format!("unexpected character {c:?}"),
            ));
        };
        // Multi-line strings already advanced `line`; only bump the column
        // by the token width when the token stayed on one line.
        if line == tl {
            col += i - start;
        } else {
            col += chars[start..i]
                .iter()
                .rev()
                .take_while(|&&ch| ch != '\n')
                .count();
        }
        out.push(Token {
            tok,
            line: tl,
            column: tc,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok((out, range))
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    aliases: HashSet<String>,
    /// Semantic error held back until the whole text has parsed, so that
    /// syntax errors always take precedence.
    deferred: Option<ParseError>,
}

impl Parser {
    fn new(text: &str) -> Result<Self, ParseError> {
        let (toks, deferred) = lex(text)?;
        Ok(Parser {
            toks,
            pos: 0,
            aliases: HashSet::new(),
            deferred,
        })
    }

    fn finish<T>(self, v: T) -> Result<T, ParseError> {
        match self.deferred {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn at_sym(&self, c: char) -> bool {
        *self.peek() == Tok::Sym(c)
    }

    fn error(&self, expected: &[&'static str]) -> ParseError {
        let t = &self.toks[self.pos];
        ParseError {
            kind: ParseErrorKind::Syntax,
            line: t.line,
            column: t.column,
            expected: expected.to_vec(),
            message: format!(
                "expected {}, found {}",
                expected.join(" or "),
                t.tok.describe()
            ),
        }
    }

    fn expect_sym(&mut self, c: char, name: &'static str) -> Result<(), ParseError> {
        if self.at_sym(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(&[name]))
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.error(&["identifier"])),
        }
    }

    fn alias(&mut self) -> Result<Option<String>, ParseError> {
        if !self.at_sym(':') {
            return Ok(None);
        }
        self.pos += 1;
        let t = self.toks[self.pos].clone();
        let a = self.ident()?;
        if !self.aliases.insert(a.clone()) && self.deferred.is_none() {
            self.deferred = Some(ParseError {
                kind: ParseErrorKind::DuplicateAlias,
                line: t.line,
                column: t.column,
                expected: Vec::new(),
                message: format!("duplicate alias {a:?}"),
            });
        }
        Ok(Some(a))
    }

    fn value(&mut self) -> Result<ScalarValue, ParseError> {
        let v = match self.peek().clone() {
            Tok::Int(v) => ScalarValue::Int(v),
            Tok::Float(v) => ScalarValue::Float(v),
            Tok::Str(s) => ScalarValue::Str(s),
            Tok::Ident(s) if s == "true" => ScalarValue::Bool(true),
            Tok::Ident(s) if s == "false" => ScalarValue::Bool(false),
            _ => return Err(self.error(&["integer", "float", "boolean", "string"])),
        };
        self.pos += 1;
        Ok(v)
    }

    fn stack(&mut self) -> Result<StackDefinition, ParseError> {
        self.aliases.clear();
        self.expect_sym('%', "'%'")?;
        let name = self.ident()?;
        // The stack alias lives in the kernel's namespace, not the body's.
        let alias = if self.at_sym(':') {
            self.pos += 1;
            Some(self.ident()?)
        } else {
            None
        };
        self.expect_sym('{', "'{'")?;
        let mut body = Vec::new();
        while self.at_sym('@') {
            body.push(self.component()?);
        }
        if !self.at_sym('}') {
            return Err(self.error(&["'@'", "'}'"]));
        }
        self.pos += 1;
        Ok(StackDefinition { name, alias, body })
    }

    fn component(&mut self) -> Result<ComponentNode, ParseError> {
        self.expect_sym('@', "'@'")?;
        let type_id = self.ident()?;
        let alias = self.alias()?;
        let mut options = Vec::new();
        if self.at_sym('[') {
            self.pos += 1;
            loop {
                options.push(self.option()?);
                if self.at_sym(',') {
                    self.pos += 1;
                } else if self.at_sym(']') {
                    self.pos += 1;
                    break;
                } else {
                    return Err(self.error(&["','", "']'"]));
                }
            }
        }
        let shape = if self.at_sym('<') {
            self.pos += 1;
            let branch = self.branch()?;
            if !self.at_sym('>') {
                return Err(self.error(&["'@'", "'>'"]));
            }
            self.pos += 1;
            Shape::Demux(branch)
        } else if self.at_sym('(') {
            self.pos += 1;
            let mut branches = vec![self.branch()?];
            loop {
                if self.at_sym('|') {
                    self.pos += 1;
                    branches.push(self.branch()?);
                } else if self.at_sym(')') {
                    self.pos += 1;
                    break;
                } else {
                    return Err(self.error(&["'@'", "'|'", "')'"]));
                }
            }
            Shape::Alternative(branches)
        } else {
            Shape::Simple
        };
        Ok(ComponentNode {
            type_id,
            alias,
            options,
            shape,
        })
    }

    fn branch(&mut self) -> Result<Vec<ComponentNode>, ParseError> {
        let mut nodes = vec![self.component()?];
        while self.at_sym('@') {
            nodes.push(self.component()?);
        }
        Ok(nodes)
    }

    fn option(&mut self) -> Result<OptionBinding, ParseError> {
        self.expect_sym('$', "'$'")?;
        let name = self.ident()?;
        let alias = self.alias()?;
        let value = if self.at_sym('=') {
            self.pos += 1;
            Some(self.value()?)
        } else {
            None
        };
        Ok(OptionBinding { name, alias, value })
    }

    fn eof(&self) -> Result<(), ParseError> {
        if *self.peek() == Tok::Eof {
            Ok(())
        } else {
            Err(self.error(&["end of input"]))
        }
    }
}

/// Parses exactly one stack definition.
pub fn parse_stack(text: &str) -> Result<StackDefinition, ParseError> {
    let mut p = Parser::new(text)?;
    let def = p.stack()?;
    p.eof()?;
    p.finish(def)
}

/// Parses a configuration text holding any number of stack definitions.
pub fn parse_config(text: &str) -> Result<Vec<StackDefinition>, ParseError> {
    let mut p = Parser::new(text)?;
    let mut defs = Vec::new();
    while *p.peek() != Tok::Eof {
        if !p.at_sym('%') {
            return Err(p.error(&["'%'", "end of input"]));
        }
        defs.push(p.stack()?);
    }
    p.finish(defs)
}

/// Parses a single value literal.
pub fn parse_literal(text: &str) -> Result<ScalarValue, ParseError> {
    let mut p = Parser::new(text)?;
    let v = p.value()?;
    p.eof()?;
    p.finish(v)
}

// ---------------------------------------------------------------------------
// Renderer

/// Canonical single-line form. `parse_stack(&render_stack(d)) == Ok(d)` for
/// every definition with finite floats.
pub fn render_stack(def: &StackDefinition) -> String {
    let mut out = String::new();
    out.push('%');
    out.push_str(&def.name);
    if let Some(a) = &def.alias {
        let _ = write!(out, ":{a}");
    }
    out.push_str(" { ");
    for node in &def.body {
        render_node(&mut out, node);
        out.push(' ');
    }
    out.push('}');
    out
}

fn render_seq(out: &mut String, seq: &[ComponentNode]) {
    for (i, node) in seq.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        render_node(out, node);
    }
}

fn render_node(out: &mut String, node: &ComponentNode) {
    out.push('@');
    out.push_str(&node.type_id);
    if let Some(a) = &node.alias {
        let _ = write!(out, ":{a}");
    }
    if !node.options.is_empty() {
        out.push('[');
        for (i, b) in node.options.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push('$');
            out.push_str(&b.name);
            if let Some(a) = &b.alias {
                let _ = write!(out, ":{a}");
            }
            if let Some(v) = &b.value {
                let _ = write!(out, "={v}");
            }
        }
        out.push(']');
    }
    match &node.shape {
        Shape::Simple => {}
        Shape::Demux(template) => {
            out.push('<');
            render_seq(out, template);
            out.push('>');
        }
        Shape::Alternative(branches) => {
            out.push('(');
            for (i, b) in branches.iter().enumerate() {
                if i > 0 {
                    out.push_str(" | ");
                }
                render_seq(out, b);
            }
            out.push(')');
        }
    }
}

impl fmt::Display for StackDefinition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_stack(self))
    }
}

/// Renders a string as a quoted literal.
pub fn quote(s: &str) -> String {
    let mut out = String::new();
    let _ = write_quoted(&mut out, s);
    out
}

// ---------------------------------------------------------------------------
// Validation

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticKind {
    UnknownComponentType,
    UnknownOption,
    OptionKind,
    ShapeMismatch,
    MalformedIdentifier,
    DuplicateAlias,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagnosticKind,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Checks a definition against the registered component contracts. An empty
/// result means the definition can be instantiated.
pub fn validate(def: &StackDefinition, registry: &FactoryRegistry) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    let mut aliases = HashSet::new();
    let mut push = |kind, path: &NodePath, message: String| {
        diags.push(Diagnostic {
            kind,
            path: format!("{}/{}", def.name, path),
            message,
        })
    };
    if !is_identifier(&def.name) {
        push(
            DiagnosticKind::MalformedIdentifier,
            &NodePath::top(0),
            format!("malformed stack name {:?}", def.name),
        );
    }
    def.visit(true, &mut |path, node| {
        for a in node
            .alias
            .iter()
            .chain(node.options.iter().filter_map(|b| b.alias.as_ref()))
        {
            if !aliases.insert(a.clone()) {
                push(
                    DiagnosticKind::DuplicateAlias,
                    path,
                    format!("duplicate alias {a:?}"),
                );
            }
        }
        let Some(contract) = registry.contract(&node.type_id) else {
            push(
                DiagnosticKind::UnknownComponentType,
                path,
                format!("unknown component type {:?}", node.type_id),
            );
            return;
        };
        for b in &node.options {
            let Some(decl) = contract.option(&b.name) else {
                push(
                    DiagnosticKind::UnknownOption,
                    path,
                    format!("{} has no option {:?}", node.type_id, b.name),
                );
                continue;
            };
            if let Some(v) = &b.value {
                if let Err(e) = resolve_option(decl, v.clone()) {
                    push(DiagnosticKind::OptionKind, path, e.to_string());
                }
            }
        }
        let ok = matches!(
            (contract.output, &node.shape),
            (OutputKind::Linear, Shape::Simple)
                | (OutputKind::Alternative, Shape::Simple)
                | (OutputKind::Alternative, Shape::Alternative(_))
                | (OutputKind::Demux, Shape::Demux(_))
        );
        if !ok {
            push(
                DiagnosticKind::ShapeMismatch,
                path,
                format!(
                    "shape mismatch: {} declares {:?} output",
                    node.type_id, contract.output
                ),
            );
        }
    });
    diags
}
