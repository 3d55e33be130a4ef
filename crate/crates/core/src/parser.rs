//! Parsing planner output into a [`ReasoningDag`].
//!
//! The planner is asked for a Python-style list of `(parent, child)` string
//! tuples, or a single quoted `"Q: ..."` string for simple queries. Real
//! model output drifts from that template (code fences, quote styles,
//! trailing commas, a `DAG:` prefix), so this is a small recursive-descent
//! reader over that grammar rather than a literal evaluator.

use thiserror::Error;

use crate::plan::{
    self, AnswerTag, CanonicalPlan, NodeId, NodeLabel, PlanError, ReasoningDag,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unparseable plan syntax at byte {position}: {message}")]
    UnparseableSyntax { position: usize, message: String },
    #[error("bad node label `{0}`")]
    BadLabel(String),
    #[error("empty planner output")]
    Empty,
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Result of reading planner output.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanParseResult {
    pub outcome: PlanOutcome,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlanOutcome {
    /// The planner declined to decompose; carries the query text it echoed.
    SimpleQuery(String),
    Dag(ReasoningDag),
}

impl PlanParseResult {
    /// The plan to execute; simple queries become the single-node plan.
    pub fn into_dag(self, original_query: &str) -> ReasoningDag {
        match self.outcome {
            PlanOutcome::Dag(dag) => dag,
            PlanOutcome::SimpleQuery(_) => ReasoningDag::simple(original_query),
        }
    }
}

/// Parses raw planner output for `original_query`.
pub fn parse_plan_text(raw: &str, original_query: &str) -> Result<PlanParseResult, ParseError> {
    let body = strip_wrappers(raw);
    if body.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut warnings = Vec::new();

    if body.starts_with('{') {
        let plan: CanonicalPlan =
            serde_json::from_str(body).map_err(|e| ParseError::UnparseableSyntax {
                position: offset_of(raw, body) + e.column().saturating_sub(1),
                message: e.to_string(),
            })?;
        let (dag, w) = ReasoningDag::from_canonical_with_warnings(&plan)?;
        warnings.extend(w);
        return Ok(PlanParseResult {
            outcome: outcome_for(dag),
            warnings,
        });
    }

    let base = offset_of(raw, body);
    let mut cursor = Cursor {
        src: body,
        pos: 0,
        base,
    };
    cursor.skip_ws();
    let value = cursor.value()?;
    cursor.skip_ws();
    // Tolerate a trailing semicolon or comma, nothing else.
    while matches!(cursor.peek(), Some(';') | Some(',')) {
        cursor.bump();
        cursor.skip_ws();
    }
    if !cursor.at_end() {
        return Err(cursor.error("unexpected trailing text"));
    }

    match value {
        Value::Str(s) => {
            let (id, template) = parse_node_label(&s)?;
            if !id.is_root() {
                return Err(ParseError::BadLabel(s));
            }
            Ok(PlanParseResult {
                outcome: PlanOutcome::SimpleQuery(template),
                warnings,
            })
        }
        Value::List(items) => {
            let mut pairs: Vec<(NodeLabel, NodeLabel)> = Vec::new();
            for item in items {
                let (parent, child) = match item {
                    Value::List(mut pair) if pair.len() == 2 => {
                        let child = pair.pop().expect("len 2");
                        let parent = pair.pop().expect("len 2");
                        match (parent, child) {
                            (Value::Str(p), Value::Str(c)) => (p, c),
                            _ => return Err(syntax_error(base, "tuple members must be strings")),
                        }
                    }
                    _ => return Err(syntax_error(base, "expected a list of 2-tuples")),
                };
                let (pid, ptext) = parse_node_label(&parent)?;
                let (cid, ctext) = parse_node_label(&child)?;
                let pair = (NodeLabel::new(pid, ptext), NodeLabel::new(cid, ctext));
                if pairs.contains(&pair) {
                    warnings.push(format!("duplicate tuple ({pid}, {cid}) ignored"));
                    continue;
                }
                pairs.push(pair);
            }
            for (_, child) in &pairs {
                for near in find_malformed_tags(&child.template) {
                    let msg = format!("{}: malformed tag `{near}` left as text", child.id);
                    if !warnings.contains(&msg) {
                        warnings.push(msg);
                    }
                }
            }
            let (dag, w) = plan::build_dag_with_warnings(original_query, &pairs)?;
            warnings.extend(w);
            Ok(PlanParseResult {
                outcome: outcome_for(dag),
                warnings,
            })
        }
    }
}

fn outcome_for(dag: ReasoningDag) -> PlanOutcome {
    if dag.is_simple() {
        PlanOutcome::SimpleQuery(dag.original_query().to_string())
    } else {
        PlanOutcome::Dag(dag)
    }
}

fn syntax_error(position: usize, message: &str) -> ParseError {
    ParseError::UnparseableSyntax {
        position,
        message: message.to_string(),
    }
}

fn offset_of(outer: &str, inner: &str) -> usize {
    inner.as_ptr() as usize - outer.as_ptr() as usize
}

/// Removes code fences and a leading `DAG:` label.
fn strip_wrappers(raw: &str) -> &str {
    let mut s = raw.trim();
    if let Some(rest) = s.strip_prefix("```") {
        // Drop the info string (e.g. `python`) up to the first newline.
        s = match rest.find('\n') {
            Some(nl) => &rest[nl + 1..],
            None => rest,
        };
        s = s.trim_end();
        s = s.strip_suffix("```").unwrap_or(s).trim();
    }
    if s.get(..4).is_some_and(|head| head.eq_ignore_ascii_case("dag:")) {
        s = s[4..].trim_start();
    }
    s
}

/// Splits `"QI.J: template"` (or `"Q: template"`) into id and trimmed template.
pub fn parse_node_label(label: &str) -> Result<(NodeId, String), ParseError> {
    let bad = || ParseError::BadLabel(label.to_string());
    let trimmed = label
        .trim()
        .trim_matches(|c| matches!(c, '"' | '\'' | '`'))
        .trim();
    let (head, template) = trimmed.split_once(':').ok_or_else(bad)?;
    let id: NodeId = head.trim().parse().map_err(|_| bad())?;
    let template = template.trim().to_string();
    if !id.is_root() && template.is_empty() {
        return Err(bad());
    }
    Ok((id, template))
}

/// A piece of a subquery template: literal text or an answer tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateSegment<'a> {
    Text(&'a str),
    Tag(AnswerTag),
}

/// Tries to read a well-formed `<AI.J>` tag at the start of `s`, returning the
/// tag and its byte length.
fn tag_at(s: &str) -> Option<(AnswerTag, usize)> {
    let rest = s.strip_prefix("<A")?;
    let close = rest.find('>')?;
    let (depth, position) = rest[..close].split_once('.')?;
    if depth.starts_with('0') || position.starts_with('0') {
        return None;
    }
    let target = NodeId::new(
        plan::parse_index(depth)?,
        plan::parse_index(position)?,
    )?;
    Some((AnswerTag { target }, 2 + close + 1))
}

/// Splits a template into text and tag segments. Concatenating the segments
/// (tags rendered with `Display`) reproduces the template.
pub fn split_template(template: &str) -> Vec<TemplateSegment<'_>> {
    let mut out = Vec::new();
    let mut text_start = 0;
    let mut i = 0;
    while let Some(off) = template[i..].find("<A") {
        let at = i + off;
        match tag_at(&template[at..]) {
            Some((tag, len)) => {
                if at > text_start {
                    out.push(TemplateSegment::Text(&template[text_start..at]));
                }
                out.push(TemplateSegment::Tag(tag));
                i = at + len;
                text_start = i;
            }
            None => i = at + 2,
        }
    }
    if text_start < template.len() {
        out.push(TemplateSegment::Text(&template[text_start..]));
    }
    out
}

/// Every distinct well-formed answer tag in order of first appearance.
pub fn extract_tags(template: &str) -> Vec<AnswerTag> {
    let mut tags = Vec::new();
    for seg in split_template(template) {
        if let TemplateSegment::Tag(tag) = seg {
            if !tags.contains(&tag) {
                tags.push(tag);
            }
        }
    }
    tags
}

/// Near-miss tags such as `<A1>` or `<A01.1>`, which are left as literal text.
pub fn find_malformed_tags(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    for seg in split_template(template) {
        let TemplateSegment::Text(text) = seg else {
            continue;
        };
        let mut i = 0;
        while let Some(off) = text[i..].find("<A") {
            let at = i + off;
            let window: String = text[at..].chars().take(12).collect();
            let near = match window.find('>') {
                Some(end) => window[..=end].to_string(),
                None => window.split_whitespace().next().unwrap_or("<A").to_string(),
            };
            out.push(near);
            i = at + 2;
        }
    }
    out
}

/// Parses a Python-style list of strings, as returned by the query splitter.
pub fn parse_string_list(raw: &str) -> Result<Vec<String>, ParseError> {
    let body = strip_wrappers(raw);
    let base = offset_of(raw, body);
    let mut cursor = Cursor {
        src: body,
        pos: 0,
        base,
    };
    cursor.skip_ws();
    let value = cursor.value()?;
    match value {
        Value::List(items) => items
            .into_iter()
            .map(|v| match v {
                Value::Str(s) => Ok(s),
                Value::List(_) => Err(syntax_error(base, "expected a list of strings")),
            })
            .collect(),
        Value::Str(s) => Ok(vec![s]),
    }
}

#[derive(Debug)]
enum Value {
    Str(String),
    List(Vec<Value>),
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    base: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.bump();
        }
    }

    fn error(&self, message: &str) -> ParseError {
        syntax_error(self.base + self.pos, message)
    }

    fn value(&mut self) -> Result<Value, ParseError> {
        match self.peek() {
            Some('[') => self.sequence('[', ']'),
            Some('(') => self.sequence('(', ')'),
            Some(c) if closing_quote(c).is_some() => self.string().map(Value::Str),
            Some(_) => {
                // An unquoted simple-query answer like `Q: Who is ...?`.
                let rest = self.src[self.pos..].trim_end();
                if rest.starts_with("Q:") && !rest.contains('\n') {
                    self.pos = self.src.len();
                    Ok(Value::Str(rest.to_string()))
                } else {
                    Err(self.error("expected a list or a quoted string"))
                }
            }
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn sequence(&mut self, open: char, close: char) -> Result<Value, ParseError> {
        debug_assert_eq!(self.peek(), Some(open));
        self.bump();
        let mut items = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(c) if c == close => {
                    self.bump();
                    return Ok(Value::List(items));
                }
                None => return Err(self.error("unterminated sequence")),
                _ => {}
            }
            items.push(self.value()?);
            self.skip_ws();
            match self.peek() {
                Some(',') => {
                    self.bump();
                }
                Some(c) if c == close => {}
                _ => return Err(self.error("expected `,` or end of sequence")),
            }
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        let open = self.bump().expect("peeked");
        let close = closing_quote(open).expect("quote char");
        let mut out = String::new();
        loop {
            match self.bump() {
                None => {
                    return Err(syntax_error(self.base + start, "unterminated string"));
                }
                Some('\\') => match self.bump() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(c @ ('"' | '\'' | '\\')) => out.push(c),
                    Some(c) if c == close => out.push(c),
                    Some(c) => {
                        out.push('\\');
                        out.push(c);
                    }
                    None => {
                        return Err(syntax_error(self.base + start, "unterminated string"));
                    }
                },
                Some(c) if c == close => return Ok(out),
                Some(c) => out.push(c),
            }
        }
    }
}

fn closing_quote(open: char) -> Option<char> {
    match open {
        '"' => Some('"'),
        '\'' => Some('\''),
        '`' => Some('\''),
        '\u{201c}' => Some('\u{201d}'),
        '\u{2018}' => Some('\u{2019}'),
        _ => None,
    }
}
