//! Pipeline spec files: a line-oriented text form of a streaming graph.
//!
//! ```text
//! source 1GiB
//!   >=> read "inputDir"
//!   >=> discreteGaussian 1.5
//!   >=> write "outDir"
//!   |> sink
//! ```
//!
//! `>=>` and `|>` are optional line prefixes. `>=>>` (or `tee`) opens a
//! block of branches separated by `---`; `>>=> add` (or `join add`)
//! zips the two branches back together, `end` closes branches that each
//! finish in their own sink. `#` starts a comment.

use std::fmt::{self, Write as _};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{pos}: {msg}")]
pub struct SyntaxError {
    pub pos: Pos,
    pub msg: String,
}

fn err<T>(pos: Pos, msg: impl Into<String>) -> Result<T, SyntaxError> {
    Err(SyntaxError { pos, msg: msg.into() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arg {
    /// `None` for positional arguments.
    pub key: Option<String>,
    pub value: String,
    pub pos: Pos,
}

/// One statement: a keyword and its arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub keyword: String,
    pub args: Vec<Arg>,
    pub pos: Pos,
}

impl Stmt {
    pub fn positional(&self) -> impl Iterator<Item = &Arg> {
        self.args.iter().filter(|a| a.key.is_none())
    }

    pub fn get(&self, key: &str) -> Option<&Arg> {
        self.args.iter().find(|a| a.key.as_deref() == Some(key))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Stage(Stmt),
    Branches {
        pos: Pos,
        branches: Vec<Vec<Item>>,
        /// `join <fn>` or `end`.
        close: Stmt,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub source: Stmt,
    pub body: Vec<Item>,
}

struct Signature {
    keyword: &'static str,
    positional: (usize, usize),
    keys: &'static [&'static str],
}

const fn sig(keyword: &'static str, min: usize, max: usize, keys: &'static [&'static str]) -> Signature {
    Signature {
        keyword,
        positional: (min, max),
        keys,
    }
}

const SIGNATURES: &[Signature] = &[
    sig("read", 1, 1, &["w", "name"]),
    sig("readInChunks", 1, 1, &["name"]),
    sig("generate", 1, 1, &["dtype", "pattern", "value", "seed", "name"]),
    sig("gaussian", 0, 1, &["sigma", "w", "pad", "name"]),
    sig("discreteGaussian", 0, 1, &["sigma", "w", "pad", "name"]),
    sig("median", 0, 0, &["r", "shape", "w", "pad", "name"]),
    sig("erode", 0, 0, &["r", "shape", "w", "pad", "name"]),
    sig("dilate", 0, 0, &["r", "shape", "w", "pad", "name"]),
    sig("convolve", 0, 0, &["kernel", "box", "w", "pad", "name"]),
    sig("threshold", 0, 1, &["t", "w", "name"]),
    sig("square", 0, 0, &["w", "name"]),
    sig("invert", 0, 0, &["w", "name"]),
    sig("scale", 0, 1, &["f", "w", "name"]),
    sig("convert", 0, 1, &["dtype", "w", "name"]),
    sig("crop", 1, 1, &["name"]),
    sig("pad", 0, 0, &["x", "y", "z", "mode", "name"]),
    sig("permute", 1, 1, &["name"]),
    sig("reslice", 1, 1, &["name"]),
    sig("tee", 0, 0, &["name"]),
    sig("join", 1, 1, &["name"]),
    sig("end", 0, 0, &[]),
    sig("write", 1, 1, &["w", "name"]),
    sig("writeInChunks", 1, 1, &["chunk", "name"]),
    sig("histogram", 0, 0, &["out", "w", "range", "name"]),
    sig("mean", 0, 0, &["out", "stride", "name"]),
    sig("sink", 0, 0, &["name"]),
];

const SOURCE: Signature = sig("source", 1, 1, &["epsilon"]);

fn check(stmt: &Stmt, s: &Signature) -> Result<(), SyntaxError> {
    let n = stmt.positional().count();
    let (lo, hi) = s.positional;
    if n < lo || n > hi {
        let want = if lo == hi { format!("{lo}") } else { format!("{lo} to {hi}") };
        return err(stmt.pos, format!("`{}` takes {want} positional argument(s), got {n}", s.keyword));
    }
    for a in &stmt.args {
        if let Some(k) = &a.key {
            if !s.keys.contains(&k.as_str()) {
                return err(
                    a.pos,
                    format!("unknown key `{k}` for `{}` (expected one of: {})", s.keyword, s.keys.join(", ")),
                );
            }
            if stmt.args.iter().filter(|b| b.key.as_ref() == Some(k)).count() > 1 {
                return err(a.pos, format!("key `{k}` given twice"));
            }
        }
    }
    Ok(())
}

/// Splits a line into tokens with their 1-based columns. Double quotes
/// group, `\"` and `\\` escape inside quotes, `#` outside quotes ends the
/// line.
fn tokenize(line: &str, lineno: usize) -> Result<Vec<(String, usize, bool)>, SyntaxError> {
    let chars: Vec<char> = line.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        let start = i + 1;
        let mut tok = String::new();
        // a token opening with a quote is always a plain value
        let quoted = c == '"';
        while i < chars.len() && !chars[i].is_whitespace() {
            match chars[i] {
                '"' => {
                    i += 1;
                    loop {
                        match chars.get(i) {
                            None => {
                                return err(Pos { line: lineno, col: start }, "unterminated quote");
                            }
                            Some('"') => {
                                i += 1;
                                break;
                            }
                            Some('\\') if matches!(chars.get(i + 1), Some('"') | Some('\\')) => {
                                tok.push(chars[i + 1]);
                                i += 2;
                            }
                            Some(&ch) => {
                                tok.push(ch);
                                i += 1;
                            }
                        }
                    }
                }
                '#' => break,
                ch => {
                    tok.push(ch);
                    i += 1;
                }
            }
        }
        out.push((tok, start, quoted));
        if chars.get(i) == Some(&'#') {
            break;
        }
    }
    Ok(out)
}

fn statement(tokens: &[(String, usize, bool)], lineno: usize) -> Result<Stmt, SyntaxError> {
    let (kw, col, _) = &tokens[0];
    let mut args = Vec::new();
    for (t, c, quoted) in &tokens[1..] {
        let pos = Pos { line: lineno, col: *c };
        let split = if *quoted { None } else { t.split_once('=') };
        match split {
            Some((k, v)) if !k.is_empty() && k.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_') => {
                args.push(Arg {
                    key: Some(k.to_string()),
                    value: v.to_string(),
                    pos,
                })
            }
            Some(_) => return err(pos, format!("malformed argument `{t}`")),
            None => args.push(Arg {
                key: None,
                value: t.clone(),
                pos,
            }),
        }
    }
    Ok(Stmt {
        keyword: kw.clone(),
        args,
        pos: Pos { line: lineno, col: *col },
    })
}

enum Line {
    Stmt(Stmt),
    Separator(Pos),
}

fn lines(text: &str) -> Result<Vec<Line>, SyntaxError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut tokens = tokenize(raw, lineno)?;
        if tokens.is_empty() {
            continue;
        }
        let (first, col, quoted) = tokens[0].clone();
        if !quoted {
            match first.as_str() {
                ">=>" | "|>" => {
                    tokens.remove(0);
                    if tokens.is_empty() {
                        return err(Pos { line: lineno, col }, format!("`{first}` needs a stage after it"));
                    }
                }
                ">=>>" => tokens[0].0 = "tee".into(),
                ">>=>" => tokens[0].0 = "join".into(),
                "---" => {
                    if tokens.len() > 1 {
                        return err(Pos { line: lineno, col: tokens[1].1 }, "`---` stands alone on its line");
                    }
                    out.push(Line::Separator(Pos { line: lineno, col }));
                    continue;
                }
                _ => {}
            }
        }
        out.push(Line::Stmt(statement(&tokens, lineno)?));
    }
    Ok(out)
}

struct Frame {
    pos: Pos,
    branches: Vec<Vec<Item>>,
}

/// Parses a spec. Only syntax and argument names are checked here;
/// values are checked when the graph is built.
pub fn parse(text: &str) -> Result<PipelineSpec, SyntaxError> {
    let mut it = lines(text)?.into_iter();
    let source = match it.next() {
        Some(Line::Stmt(s)) if s.keyword == "source" => {
            check(&s, &SOURCE)?;
            s
        }
        Some(Line::Stmt(s)) => return err(s.pos, format!("a spec starts with `source <bytes>`, found `{}`", s.keyword)),
        Some(Line::Separator(p)) => return err(p, "a spec starts with `source <bytes>`"),
        None => return err(Pos { line: 1, col: 1 }, "empty spec"),
    };
    let mut top: Vec<Item> = Vec::new();
    let mut stack: Vec<Frame> = Vec::new();
    fn current<'a>(top: &'a mut Vec<Item>, stack: &'a mut [Frame]) -> &'a mut Vec<Item> {
        match stack.last_mut() {
            Some(f) => f.branches.last_mut().expect("frames hold at least one branch"),
            None => top,
        }
    }
    for line in it {
        match line {
            Line::Separator(p) => match stack.last_mut() {
                Some(f) => f.branches.push(Vec::new()),
                None => return err(p, "`---` outside a branch block"),
            },
            Line::Stmt(s) => {
                let Some(signature) = SIGNATURES.iter().find(|g| g.keyword == s.keyword) else {
                    let hint = if s.keyword == "source" { " (only one source line is allowed)" } else { "" };
                    return err(s.pos, format!("unknown stage `{}`{hint}", s.keyword));
                };
                check(&s, signature)?;
                match s.keyword.as_str() {
                    "tee" => stack.push(Frame {
                        pos: s.pos,
                        branches: vec![Vec::new()],
                    }),
                    "join" | "end" => {
                        let Some(frame) = stack.pop() else {
                            return err(s.pos, format!("`{}` without an open branch block", s.keyword));
                        };
                        current(&mut top, &mut stack).push(Item::Branches {
                            pos: frame.pos,
                            branches: frame.branches,
                            close: s,
                        });
                    }
                    _ => current(&mut top, &mut stack).push(Item::Stage(s)),
                }
            }
        }
    }
    if let Some(f) = stack.last() {
        return err(f.pos, "branch block is never closed with `join` or `end`");
    }
    Ok(PipelineSpec { source, body: top })
}

fn quote(v: &str) -> String {
    let plain = !v.is_empty() && !v.chars().any(|c| c.is_whitespace() || c == '"' || c == '#' || c == '\\');
    if plain {
        v.to_string()
    } else {
        format!("\"{}\"", v.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

fn render_stmt(s: &Stmt) -> String {
    let mut out = s.keyword.clone();
    for a in &s.args {
        out.push(' ');
        match &a.key {
            Some(k) => {
                let _ = write!(out, "{k}={}", quote(&a.value));
            }
            None => {
                // a positional value that looks like key=value must be quoted
                if a.value.contains('=') {
                    let _ = write!(out, "\"{}\"", a.value.replace('\\', "\\\\").replace('"', "\\\""));
                } else {
                    out.push_str(&quote(&a.value));
                }
            }
        }
    }
    out
}

fn render_items(items: &[Item], depth: usize, out: &mut String) {
    let pad = "  ".repeat(depth + 1);
    for item in items {
        match item {
            Item::Stage(s) => {
                let prefix = if s.keyword == "sink" { "|>" } else { ">=>" };
                let _ = writeln!(out, "{pad}{prefix} {}", render_stmt(s));
            }
            Item::Branches { branches, close, .. } => {
                let _ = writeln!(out, "{pad}>=>>");
                for (i, b) in branches.iter().enumerate() {
                    if i > 0 {
                        let _ = writeln!(out, "{pad}---");
                    }
                    render_items(b, depth + 1, out);
                }
                if close.keyword == "join" {
                    let args = render_stmt(close);
                    let _ = writeln!(out, "{pad}>>=> {}", args.trim_start_matches("join").trim_start());
                } else {
                    let _ = writeln!(out, "{pad}{}", render_stmt(close));
                }
            }
        }
    }
}

impl PipelineSpec {
    /// Canonical text; parsing it gives back an equal spec up to
    /// positions.
    pub fn pretty(&self) -> String {
        let mut out = render_stmt(&self.source);
        out.push('\n');
        render_items(&self.body, 0, &mut out);
        out
    }
}
