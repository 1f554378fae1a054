//! Architecture layout grammar.
//!
//! A layout string is a bracketed list. A one-element list holding a stack
//! string (e.g. `["T2"]`) is a plain stack; a three-element list
//! `[enc, inner, dec]` with stack strings flanking a nested list is a stage.
//! Stack strings are runs of `(m|T)<count>` tokens: `"T1m4"` is one
//! attention layer followed by four recurrent mixers.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
#[error("layout error at offset {offset}: {reason}")]
pub struct LayoutError {
    pub offset: usize,
    pub reason: String,
}

fn layout_err<V>(offset: usize, reason: impl Into<String>) -> Result<V, LayoutError> {
    Err(LayoutError {
        offset,
        reason: reason.into(),
    })
}

/// Kind of a sequence-mixing layer slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Gated linear recurrent mixer (an `m` slot).
    Mixer,
    /// Causal self-attention (a `T` slot).
    Attention,
}

/// An ordered run-length list of layer slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackSpec {
    pub blocks: Vec<(BlockKind, usize)>,
}

impl StackSpec {
    pub fn num_layers(&self) -> usize {
        self.blocks.iter().map(|(_, n)| n).sum()
    }

    pub fn num_attention(&self) -> usize {
        self.blocks
            .iter()
            .filter(|(k, _)| *k == BlockKind::Attention)
            .map(|(_, n)| n)
            .sum()
    }

    /// Expands the run-length form into one kind per layer.
    pub fn expanded(&self) -> Vec<BlockKind> {
        let mut out = Vec::with_capacity(self.num_layers());
        for &(kind, count) in &self.blocks {
            out.extend(std::iter::repeat_n(kind, count));
        }
        out
    }
}

/// Parsed layout tree. Depth of `Stage` nesting = number of stages; a plain
/// `Stack` is a zero-stage (non-hierarchical) model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layout {
    Stack(StackSpec),
    Stage {
        encoder: StackSpec,
        inner: Box<Layout>,
        decoder: StackSpec,
    },
}

impl Layout {
    /// Number of compression stages (tree depth above the leaf stack).
    pub fn num_stages(&self) -> usize {
        match self {
            Layout::Stack(_) => 0,
            Layout::Stage { inner, .. } => 1 + inner.num_stages(),
        }
    }

    /// The innermost plain stack.
    pub fn innermost(&self) -> &StackSpec {
        match self {
            Layout::Stack(s) => s,
            Layout::Stage { inner, .. } => inner.innermost(),
        }
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

enum Element {
    Stack(StackSpec),
    List(Layout),
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, ch: u8) -> Result<(), LayoutError> {
        self.skip_ws();
        match self.peek() {
            Some(c) if c == ch => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => layout_err(
                self.pos,
                format!("expected '{}', found '{}'", ch as char, c as char),
            ),
            None => layout_err(self.pos, format!("expected '{}', found end of input", ch as char)),
        }
    }

    fn parse_stack_string(&mut self) -> Result<StackSpec, LayoutError> {
        let open = self.pos;
        self.expect(b'"')?;
        let start = self.pos;
        while self.peek().is_some_and(|c| c != b'"') {
            self.pos += 1;
        }
        if self.peek().is_none() {
            return layout_err(open, "unterminated string");
        }
        let body = std::str::from_utf8(&self.src[start..self.pos])
            .map_err(|_| LayoutError {
                offset: start,
                reason: "non-UTF8 stack string".into(),
            })?
            .to_string();
        self.pos += 1; // closing quote

        let mut blocks = Vec::new();
        let bytes = body.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let kind = match bytes[i] {
                b'm' => BlockKind::Mixer,
                b'T' => BlockKind::Attention,
                other => {
                    return layout_err(
                        start + i,
                        format!("bad layer kind '{}', expected 'm' or 'T'", other as char),
                    )
                }
            };
            i += 1;
            let digits_start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if digits_start == i {
                return layout_err(start + i, "layer kind must be followed by a count");
            }
            let count: usize = body[digits_start..i].parse().map_err(|_| LayoutError {
                offset: start + digits_start,
                reason: "count out of range".into(),
            })?;
            if count == 0 {
                return layout_err(start + digits_start, "layer count must be positive");
            }
            blocks.push((kind, count));
        }
        if blocks.is_empty() {
            return layout_err(start, "empty stack string");
        }
        Ok(StackSpec { blocks })
    }

    fn parse_list(&mut self) -> Result<Layout, LayoutError> {
        let open = self.pos;
        self.expect(b'[')?;
        let mut elements: Vec<(usize, Element)> = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b']') => {
                    self.pos += 1;
                    break;
                }
                Some(b'"') => {
                    let at = self.pos;
                    elements.push((at, Element::Stack(self.parse_stack_string()?)));
                }
                Some(b'[') => {
                    let at = self.pos;
                    elements.push((at, Element::List(self.parse_list()?)));
                }
                Some(c) => {
                    return layout_err(self.pos, format!("unexpected character '{}'", c as char))
                }
                None => return layout_err(open, "unbalanced brackets"),
            }
            self.skip_ws();
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                }
                Some(b']') => {}
                Some(c) => {
                    return layout_err(
                        self.pos,
                        format!("expected ',' or ']', found '{}'", c as char),
                    )
                }
                None => return layout_err(open, "unbalanced brackets"),
            }
        }

        match elements.len() {
            1 => match elements.into_iter().next().unwrap() {
                (_, Element::Stack(s)) => Ok(Layout::Stack(s)),
                (at, Element::List(_)) => {
                    layout_err(at, "a one-element list must hold a stack string")
                }
            },
            3 => {
                let mut it = elements.into_iter();
                let (a_at, a) = it.next().unwrap();
                let (b_at, b) = it.next().unwrap();
                let (c_at, c) = it.next().unwrap();
                let encoder = match a {
                    Element::Stack(s) => s,
                    Element::List(_) => {
                        return layout_err(a_at, "stage encoder must be a stack string")
                    }
                };
                let inner = match b {
                    Element::List(l) => l,
                    Element::Stack(_) => {
                        return layout_err(b_at, "stage inner must be a nested list")
                    }
                };
                let decoder = match c {
                    Element::Stack(s) => s,
                    Element::List(_) => {
                        return layout_err(c_at, "stage decoder must be a stack string")
                    }
                };
                Ok(Layout::Stage {
                    encoder,
                    inner: Box::new(inner),
                    decoder,
                })
            }
            n => layout_err(open, format!("list must have 1 or 3 elements, got {n}")),
        }
    }
}

/// Parses a layout string into the stage tree.
pub fn parse_layout(text: &str) -> Result<Layout, LayoutError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let layout = p.parse_list()?;
    p.skip_ws();
    if p.pos != text.len() {
        return layout_err(p.pos, "trailing characters after layout");
    }
    Ok(layout)
}

fn write_stack(out: &mut String, s: &StackSpec) {
    out.push('"');
    for &(kind, count) in &s.blocks {
        let ch = match kind {
            BlockKind::Mixer => 'm',
            BlockKind::Attention => 'T',
        };
        let _ = write!(out, "{ch}{count}");
    }
    out.push('"');
}

/// Canonical string form; `parse_layout(print_layout(x)) == x`.
pub fn print_layout(layout: &Layout) -> String {
    fn go(out: &mut String, node: &Layout) {
        match node {
            Layout::Stack(s) => {
                out.push('[');
                write_stack(out, s);
                out.push(']');
            }
            Layout::Stage {
                encoder,
                inner,
                decoder,
            } => {
                out.push('[');
                write_stack(out, encoder);
                out.push_str(", ");
                go(out, inner);
                out.push_str(", ");
                write_stack(out, decoder);
                out.push(']');
            }
        }
    }
    let mut out = String::new();
    go(&mut out, layout);
    out
}
