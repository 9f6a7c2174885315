//! The `.dgp` model language.
//!
//! Line oriented; `#` starts a comment. Statements:
//!
//! ```text
//! node A B C                      # optional explicit declaration (fixes order)
//! latent U                        # declare/flag unobserved nodes
//! A -> B                          # directed edge
//! A <-> B                         # correlated errors
//! coef A -> B = 0.5               # path coefficient
//! noise B = 1.5                   # residual standard deviation
//! target total(X, Y)
//! target mediation(X, Y via M1, M2, partial)
//! ```
//!
//! Nodes are declared by first mention. Keywords cannot be node names.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{is_identifier, CausalGraph, GraphSpec, NodeId, NodeIdx};

const KEYWORDS: &[&str] = &[
    "node", "latent", "coef", "noise", "target", "total", "mediation", "via", "partial",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectKind {
    Total,
    Mediation,
}

/// A declared research question.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TargetEffect {
    pub kind: EffectKind,
    pub cause: NodeId,
    pub outcome: NodeId,
    /// Ordered chain of mediators; empty for total effects.
    pub mediators: Vec<NodeId>,
    /// Mediation only: the direct edge cause -> outcome is also estimated.
    pub partial: bool,
}

impl TargetEffect {
    pub fn total(cause: &str, outcome: &str) -> Result<Self> {
        Ok(TargetEffect {
            kind: EffectKind::Total,
            cause: NodeId::new(cause)?,
            outcome: NodeId::new(outcome)?,
            mediators: Vec::new(),
            partial: false,
        })
    }

    pub fn mediation(cause: &str, outcome: &str, mediators: &[&str], partial: bool) -> Result<Self> {
        Ok(TargetEffect {
            kind: EffectKind::Mediation,
            cause: NodeId::new(cause)?,
            outcome: NodeId::new(outcome)?,
            mediators: mediators.iter().map(|m| NodeId::new(*m)).collect::<Result<_>>()?,
            partial,
        })
    }

    /// The chain cause, mediators..., outcome.
    pub fn chain(&self) -> Vec<&NodeId> {
        std::iter::once(&self.cause)
            .chain(&self.mediators)
            .chain(std::iter::once(&self.outcome))
            .collect()
    }

    /// Checks the target's own invariants and that it references declared,
    /// observed nodes of `graph`.
    pub fn check(&self, graph: &CausalGraph) -> Result<()> {
        if let Some(msg) = self.shape_error() {
            return Err(Error::InvalidQuery(msg));
        }
        for id in self.chain() {
            let v = graph.index(id.as_str())?;
            if graph.is_latent(v) {
                return Err(Error::InvalidQuery(format!(
                    "target references latent node `{id}`"
                )));
            }
        }
        Ok(())
    }

    fn shape_error(&self) -> Option<String> {
        if self.cause == self.outcome {
            return Some(format!("cause and outcome are both `{}`", self.cause));
        }
        match self.kind {
            EffectKind::Total if !self.mediators.is_empty() || self.partial => {
                return Some("total effects take no mediators".into())
            }
            EffectKind::Mediation if self.mediators.is_empty() => {
                return Some("mediation needs at least one mediator".into())
            }
            _ => {}
        }
        for (i, m) in self.mediators.iter().enumerate() {
            if *m == self.cause || *m == self.outcome {
                return Some(format!("mediator `{m}` is the cause or outcome"));
            }
            if self.mediators[..i].contains(m) {
                return Some(format!("mediator `{m}` listed twice"));
            }
        }
        None
    }
}

impl fmt::Display for TargetEffect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EffectKind::Total => write!(f, "total({}, {})", self.cause, self.outcome),
            EffectKind::Mediation => {
                write!(f, "mediation({}, {} via ", self.cause, self.outcome)?;
                let meds: Vec<&str> = self.mediators.iter().map(NodeId::as_str).collect();
                f.write_str(&meds.join(", "))?;
                if self.partial {
                    f.write_str(", partial")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// A parsed model: the full data-generating graph, optional simulation
/// parameters and the target effects.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub graph: CausalGraph,
    pub coefficients: BTreeMap<(NodeId, NodeId), f64>,
    pub noise_sd: BTreeMap<NodeId, f64>,
    pub targets: Vec<TargetEffect>,
}

impl ModelFile {
    /// Model with no coefficients, noise settings or targets.
    pub fn from_graph(graph: CausalGraph) -> Self {
        ModelFile {
            graph,
            coefficients: BTreeMap::new(),
            noise_sd: BTreeMap::new(),
            targets: Vec::new(),
        }
    }

    /// Checks the cross-field invariants.
    pub fn check(&self) -> Result<()> {
        for (a, b) in self.coefficients.keys() {
            let (ia, ib) = (self.graph.index(a.as_str())?, self.graph.index(b.as_str())?);
            if !self.graph.has_edge(ia, ib) {
                return Err(Error::MissingEdge(a.to_string(), b.to_string()));
            }
        }
        for (v, sd) in &self.noise_sd {
            self.graph.index(v.as_str())?;
            if !(sd.is_finite() && *sd > 0.0) {
                return Err(Error::InvalidQuery(format!("noise for `{v}` must be positive")));
            }
        }
        for t in &self.targets {
            t.check(&self.graph)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DiagnosticCode {
    Syntax,
    InvalidValue,
    UnknownNode,
    DuplicateEdge,
    SelfLoop,
    Cycle,
    MissingEdge,
    InvalidTarget,
    Encoding,
}

impl DiagnosticCode {
    pub fn code(self) -> &'static str {
        match self {
            DiagnosticCode::Cycle => "E001",
            DiagnosticCode::UnknownNode => "E002",
            DiagnosticCode::DuplicateEdge => "E003",
            DiagnosticCode::SelfLoop => "E004",
            DiagnosticCode::Syntax => "E010",
            DiagnosticCode::InvalidValue => "E015",
            DiagnosticCode::InvalidTarget => "E016",
            DiagnosticCode::Encoding => "E017",
            DiagnosticCode::MissingEdge => "E022",
        }
    }
}

/// A located parse failure. Lines and columns are 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub code: DiagnosticCode,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (line {}, column {})", self.message, self.line, self.column)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok<'a> {
    Word(&'a str),
    Arrow,
    BiArrow,
    Eq,
    LParen,
    RParen,
    Comma,
}

#[derive(Clone, Debug)]
struct Token<'a> {
    tok: Tok<'a>,
    col: usize,
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'+' | b'-')
}

fn lex(line: &str) -> std::result::Result<Vec<Token<'_>>, (usize, String)> {
    let bytes = line.as_bytes();
    let col_of = |i: usize| line[..i].chars().count() + 1;
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let rest = &bytes[i..];
        if b.is_ascii_whitespace() {
            i += 1;
        } else if rest.starts_with(b"<->") {
            out.push(Token { tok: Tok::BiArrow, col: col_of(i) });
            i += 3;
        } else if rest.starts_with(b"->") {
            out.push(Token { tok: Tok::Arrow, col: col_of(i) });
            i += 2;
        } else if let Some(tok) = match b {
            b'=' => Some(Tok::Eq),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        } {
            out.push(Token { tok, col: col_of(i) });
            i += 1;
        } else if is_word_byte(b) {
            let start = i;
            while i < bytes.len() && is_word_byte(bytes[i]) && !bytes[i..].starts_with(b"->") {
                i += 1;
            }
            out.push(Token { tok: Tok::Word(&line[start..i]), col: col_of(start) });
        } else {
            let c = line[i..].chars().next().unwrap_or('?');
            return Err((col_of(i), format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

/// Statement after syntax checking, before name resolution.
enum Stmt<'a> {
    Node(Vec<(&'a str, usize)>),
    Latent(Vec<(&'a str, usize)>),
    Edge { tail: &'a str, head: &'a str, bidirected: bool },
    Coef { tail: &'a str, head: &'a str, value: f64 },
    Noise { node: (&'a str, usize), value: f64 },
    Target(TargetEffect),
}

struct Cursor<'t, 'a> {
    toks: &'t [Token<'a>],
    pos: usize,
    end_col: usize,
}

type SyntaxResult<T> = std::result::Result<T, (usize, DiagnosticCode, String)>;

impl<'t, 'a> Cursor<'t, 'a> {
    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn fail<T>(&self, what: &str) -> SyntaxResult<T> {
        let found = match self.toks.get(self.pos) {
            None => "end of line".to_string(),
            Some(t) => match &t.tok {
                Tok::Word(w) => format!("`{w}`"),
                Tok::Arrow => "`->`".into(),
                Tok::BiArrow => "`<->`".into(),
                Tok::Eq => "`=`".into(),
                Tok::LParen => "`(`".into(),
                Tok::RParen => "`)`".into(),
                Tok::Comma => "`,`".into(),
            },
        };
        Err((self.col(), DiagnosticCode::Syntax, format!("expected {what}, found {found}")))
    }

    fn expect(&mut self, tok: Tok<'_>, what: &str) -> SyntaxResult<()> {
        match self.toks.get(self.pos) {
            Some(t) if t.tok == tok => {
                self.pos += 1;
                Ok(())
            }
            _ => self.fail(what),
        }
    }

    fn peek_word(&self) -> Option<&'a str> {
        match self.toks.get(self.pos).map(|t| &t.tok) {
            Some(Tok::Word(w)) => Some(w),
            _ => None,
        }
    }

    fn ident(&mut self) -> SyntaxResult<(&'a str, usize)> {
        let col = self.col();
        match self.peek_word() {
            Some(w) if KEYWORDS.contains(&w) => Err((
                col,
                DiagnosticCode::Syntax,
                format!("`{w}` is a keyword and cannot name a node"),
            )),
            Some(w) if is_identifier(w) => {
                self.pos += 1;
                Ok((w, col))
            }
            _ => self.fail("a node name"),
        }
    }

    fn keyword(&mut self, kw: &str) -> SyntaxResult<()> {
        match self.peek_word() {
            Some(w) if w == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => self.fail(&format!("`{kw}`")),
        }
    }

    fn number(&mut self) -> SyntaxResult<f64> {
        let col = self.col();
        let word = match self.peek_word() {
            Some(w) => w,
            None => return self.fail("a number"),
        };
        match word.parse::<f64>() {
            Ok(v) if v.is_finite() => {
                self.pos += 1;
                Ok(v)
            }
            _ => Err((col, DiagnosticCode::InvalidValue, format!("`{word}` is not a finite number"))),
        }
    }

    fn done(&self) -> SyntaxResult<()> {
        if self.pos == self.toks.len() {
            Ok(())
        } else {
            self.fail("end of line")
        }
    }
}

fn parse_stmt<'a>(toks: &[Token<'a>], end_col: usize) -> SyntaxResult<Stmt<'a>> {
    let mut c = Cursor { toks, pos: 0, end_col };
    let stmt = match c.peek_word() {
        Some(kw @ ("node" | "latent")) => {
            c.pos += 1;
            let mut names = vec![c.ident()?];
            while c.pos < toks.len() {
                names.push(c.ident()?);
            }
            if kw == "node" {
                Stmt::Node(names)
            } else {
                Stmt::Latent(names)
            }
        }
        Some("coef") => {
            c.pos += 1;
            let (tail, _) = c.ident()?;
            c.expect(Tok::Arrow, "`->`")?;
            let (head, _) = c.ident()?;
            c.expect(Tok::Eq, "`=`")?;
            let value = c.number()?;
            Stmt::Coef { tail, head, value }
        }
        Some("noise") => {
            c.pos += 1;
            let node = c.ident()?;
            c.expect(Tok::Eq, "`=`")?;
            let col = c.col();
            let value = c.number()?;
            if value <= 0.0 {
                return Err((col, DiagnosticCode::InvalidValue, "noise must be positive".into()));
            }
            Stmt::Noise { node, value }
        }
        Some("target") => {
            c.pos += 1;
            let col = c.col();
            let kind = match c.peek_word() {
                Some("total") => EffectKind::Total,
                Some("mediation") => EffectKind::Mediation,
                _ => return c.fail("`total` or `mediation`"),
            };
            c.pos += 1;
            c.expect(Tok::LParen, "`(`")?;
            let (cause, _) = c.ident()?;
            c.expect(Tok::Comma, "`,`")?;
            let (outcome, _) = c.ident()?;
            let mut mediators = Vec::new();
            let mut partial = false;
            if kind == EffectKind::Mediation {
                c.keyword("via")?;
                mediators.push(c.ident()?.0);
                while c.toks.get(c.pos).map(|t| &t.tok) == Some(&Tok::Comma) {
                    c.pos += 1;
                    if c.peek_word() == Some("partial") {
                        c.pos += 1;
                        partial = true;
                        break;
                    }
                    mediators.push(c.ident()?.0);
                }
            }
            c.expect(Tok::RParen, "`)`")?;
            let target = match kind {
                EffectKind::Total => TargetEffect::total(cause, outcome),
                EffectKind::Mediation => TargetEffect::mediation(cause, outcome, &mediators, partial),
            }
            .map_err(|e| (col, DiagnosticCode::InvalidTarget, e.to_string()))?;
            if let Some(msg) = target.shape_error() {
                return Err((col, DiagnosticCode::InvalidTarget, msg));
            }
            Stmt::Target(target)
        }
        _ => {
            let (tail, _) = c.ident()?;
            let bidirected = match c.toks.get(c.pos).map(|t| &t.tok) {
                Some(Tok::Arrow) => false,
                Some(Tok::BiArrow) => true,
                _ => return c.fail("`->` or `<->`"),
            };
            c.pos += 1;
            let (head, _) = c.ident()?;
            Stmt::Edge { tail, head, bidirected }
        }
    };
    c.done()?;
    Ok(stmt)
}

/// Parses raw bytes, reporting invalid UTF-8 as a diagnostic.
pub fn parse_bytes(bytes: &[u8]) -> Result<ModelFile> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse(text),
        Err(e) => {
            let prefix = &bytes[..e.valid_up_to()];
            let line = prefix.iter().filter(|&&b| b == b'\n').count() + 1;
            let line_start = prefix.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
            let column = String::from_utf8_lossy(&prefix[line_start..]).chars().count() + 1;
            Err(Error::Parse(vec![Diagnostic {
                line,
                column,
                code: DiagnosticCode::Encoding,
                message: "input is not valid UTF-8".into(),
            }]))
        }
    }
}

/// Parses a model. On failure returns every diagnostic found.
pub fn parse(text: &str) -> Result<ModelFile> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut diags = Vec::new();
    let mut stmts = Vec::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let code = line.split('#').next().unwrap_or("");
        let end_col = code.chars().count() + 1;
        let toks = match lex(code) {
            Ok(t) => t,
            Err((column, message)) => {
                diags.push(Diagnostic { line: i + 1, column, code: DiagnosticCode::Syntax, message });
                continue;
            }
        };
        if toks.is_empty() {
            continue;
        }
        match parse_stmt(&toks, end_col) {
            Ok(s) => stmts.push((i + 1, toks[0].col, s)),
            Err((column, code, message)) => {
                diags.push(Diagnostic { line: i + 1, column, code, message })
            }
        }
    }
    let resolved = resolve(&stmts, &mut diags);
    if diags.is_empty() {
        Ok(resolved.expect("no diagnostics implies a model"))
    } else {
        Err(Error::Parse(diags))
    }
}

fn resolve<'a>(stmts: &[(usize, usize, Stmt<'a>)], diags: &mut Vec<Diagnostic>) -> Option<ModelFile> {
    let mut spec = GraphSpec::new();
    let mut index: HashMap<&'a str, NodeIdx> = HashMap::new();
    let mut latent = Vec::new();
    let mut children: Vec<Vec<NodeIdx>> = Vec::new();
    let mut bidirected: Vec<(NodeIdx, NodeIdx)> = Vec::new();

    let mut declare = |name: &'a str, spec: &mut GraphSpec, children: &mut Vec<Vec<NodeIdx>>| {
        let next = index.len();
        *index.entry(name).or_insert_with(|| {
            spec.nodes.push(name.to_string());
            children.push(Vec::new());
            next
        })
    };

    // Pass 1: nodes and edges.
    for (line, col, stmt) in stmts {
        let diag = |code, message| Diagnostic { line: *line, column: *col, code, message };
        match stmt {
            Stmt::Node(names) => {
                for (n, _) in names {
                    declare(n, &mut spec, &mut children);
                }
            }
            Stmt::Latent(names) => {
                for (n, _) in names {
                    let v = declare(n, &mut spec, &mut children);
                    if !latent.contains(&v) {
                        latent.push(v);
                    }
                }
            }
            Stmt::Edge { tail, head, bidirected: bi } => {
                let a = declare(tail, &mut spec, &mut children);
                let b = declare(head, &mut spec, &mut children);
                if a == b {
                    diags.push(diag(DiagnosticCode::SelfLoop, format!("self-loop on `{tail}`")));
                } else if *bi {
                    let key = (a.min(b), a.max(b));
                    if bidirected.contains(&key) {
                        diags.push(diag(
                            DiagnosticCode::DuplicateEdge,
                            format!("duplicate edge {tail} <-> {head}"),
                        ));
                    } else {
                        bidirected.push(key);
                        spec.bidirected.push((tail.to_string(), head.to_string()));
                    }
                } else if children[a].contains(&b) {
                    diags.push(diag(
                        DiagnosticCode::DuplicateEdge,
                        format!("duplicate edge {tail} -> {head}"),
                    ));
                } else if reaches(&children, b, a) {
                    diags.push(diag(
                        DiagnosticCode::Cycle,
                        format!("cycle: edge {tail} -> {head} closes a directed cycle"),
                    ));
                } else {
                    children[a].push(b);
                    spec.directed.push((tail.to_string(), head.to_string()));
                }
            }
            _ => {}
        }
    }
    for &v in &latent {
        spec.latent.push(spec.nodes[v].clone());
    }

    // Pass 2: everything that refers to nodes and edges.
    let mut coefficients = BTreeMap::new();
    let mut noise_sd = BTreeMap::new();
    let mut targets = Vec::new();
    let lookup = |name: &str, line: usize, col: usize, diags: &mut Vec<Diagnostic>| {
        let v = index.get(name).copied();
        if v.is_none() {
            diags.push(Diagnostic {
                line,
                column: col,
                code: DiagnosticCode::UnknownNode,
                message: format!("unknown node `{name}`"),
            });
        }
        v
    };
    for (line, col, stmt) in stmts {
        let (line, col) = (*line, *col);
        match stmt {
            Stmt::Coef { tail, head, value } => {
                let (Some(a), Some(b)) = (lookup(tail, line, col, diags), lookup(head, line, col, diags))
                else {
                    continue;
                };
                if !children[a].contains(&b) {
                    diags.push(Diagnostic {
                        line,
                        column: col,
                        code: DiagnosticCode::MissingEdge,
                        message: format!("coefficient on missing edge {tail} -> {head}"),
                    });
                    continue;
                }
                let key = (NodeId::new(*tail).ok()?, NodeId::new(*head).ok()?);
                if coefficients.insert(key, *value).is_some() {
                    diags.push(Diagnostic {
                        line,
                        column: col,
                        code: DiagnosticCode::DuplicateEdge,
                        message: format!("coefficient for {tail} -> {head} set twice"),
                    });
                }
            }
            Stmt::Noise { node: (name, ncol), value } => {
                if lookup(name, line, *ncol, diags).is_none() {
                    continue;
                }
                if noise_sd.insert(NodeId::new(*name).ok()?, *value).is_some() {
                    diags.push(Diagnostic {
                        line,
                        column: col,
                        code: DiagnosticCode::InvalidValue,
                        message: format!("noise for `{name}` set twice"),
                    });
                }
            }
            Stmt::Target(t) => {
                for id in t.chain() {
                    match lookup(id.as_str(), line, col, diags) {
                        Some(v) if latent.contains(&v) => diags.push(Diagnostic {
                            line,
                            column: col,
                            code: DiagnosticCode::InvalidTarget,
                            message: format!("target references latent node `{id}`"),
                        }),
                        _ => {}
                    }
                }
                targets.push(t.clone());
            }
            _ => {}
        }
    }
    if !diags.is_empty() {
        return None;
    }
    let graph = spec.build().ok()?;
    Some(ModelFile { graph, coefficients, noise_sd, targets })
}

fn reaches(children: &[Vec<NodeIdx>], from: NodeIdx, to: NodeIdx) -> bool {
    let mut seen = vec![false; children.len()];
    let mut stack = vec![from];
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        if std::mem::replace(&mut seen[v], true) {
            continue;
        }
        stack.extend(&children[v]);
    }
    false
}

/// Canonical text form. Statement order: node declarations, latents,
/// directed edges, bidirected edges, coefficients, noise, targets. Edges
/// are sorted by topological position of the tail, then of the head.
pub fn serialize(model: &ModelFile) -> String {
    let g = &model.graph;
    let rank = g.topological_rank();
    let mut out = String::new();
    if g.node_count() > 0 {
        let names: Vec<&str> = g.names().iter().map(NodeId::as_str).collect();
        writeln!(out, "node {}", names.join(" ")).unwrap();
    }
    let latents = g.set_names(&g.latent_nodes());
    if !latents.is_empty() {
        writeln!(out, "latent {}", latents.join(" ")).unwrap();
    }
    let mut directed: Vec<_> = g.directed_edges().collect();
    directed.sort_by_key(|&(a, b)| (rank[a], rank[b]));
    for &(a, b) in &directed {
        writeln!(out, "{} -> {}", g.name(a), g.name(b)).unwrap();
    }
    let mut bidirected: Vec<_> = g
        .bidirected_edges()
        .map(|(a, b)| if rank[a] <= rank[b] { (a, b) } else { (b, a) })
        .collect();
    bidirected.sort_by_key(|&(a, b)| (rank[a], rank[b]));
    for &(a, b) in &bidirected {
        writeln!(out, "{} <-> {}", g.name(a), g.name(b)).unwrap();
    }
    for &(a, b) in &directed {
        if let Some(v) = model.coefficients.get(&(g.id(a).clone(), g.id(b).clone())) {
            writeln!(out, "coef {} -> {} = {v}", g.name(a), g.name(b)).unwrap();
        }
    }
    for id in g.names() {
        if let Some(v) = model.noise_sd.get(id) {
            writeln!(out, "noise {id} = {v}").unwrap();
        }
    }
    for t in &model.targets {
        writeln!(out, "target {t}").unwrap();
    }
    out
}
