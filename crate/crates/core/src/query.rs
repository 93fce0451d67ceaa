//! Track queries over segment sets.
//!
//! ```text
//! query   := or
//! or      := and ("or" and)*
//! and     := then ("and" then)*
//! then    := unary ("then" unary)*        operands of `then` must be patterns
//! unary   := "not" unary | "true" | "false" | "(" query ")" | pattern
//! pattern := "[" label "]" ("for" bound ("," bound)*)?
//! bound   := (">=" | ">" | "<=" | "<") NUMBER ("s" | "f")
//! label   := land ("|" land)*
//! land    := lnot ("&" lnot)*
//! lnot    := "!" lnot | "*" | "(" label ")" | FEATURE "=" (ID | NAME)
//! ```
//!
//! A pattern is witnessed by a maximal run of consecutive segments of one
//! track whose labels all satisfy the label expression and whose total
//! extent satisfies every bound. `a then b` needs a witness of `b` starting
//! after a witness of `a` ends.
//!
//! Example: `[speed=0] for >= 30s` finds tracks that stay in speed class 0
//! for at least thirty seconds.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::classify::{Segment, SegmentSet};
use crate::error::{FlaError, Result};
use crate::track::Feature;

#[derive(Debug, Clone, PartialEq)]
pub enum LabelExpr {
    Any,
    Is { feature: Feature, class: u32 },
    Not(Box<LabelExpr>),
    And(Box<LabelExpr>, Box<LabelExpr>),
    Or(Box<LabelExpr>, Box<LabelExpr>),
}

impl LabelExpr {
    pub fn matches(&self, labels: &[u32]) -> bool {
        match self {
            LabelExpr::Any => true,
            LabelExpr::Is { feature, class } => labels.get(feature.index()) == Some(class),
            LabelExpr::Not(e) => !e.matches(labels),
            LabelExpr::And(a, b) => a.matches(labels) && b.matches(labels),
            LabelExpr::Or(a, b) => a.matches(labels) || b.matches(labels),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Seconds,
    Frames,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurationBound {
    pub cmp: Cmp,
    pub value: f64,
    pub unit: Unit,
}

impl DurationBound {
    fn holds(&self, frames: i64, frame_rate: f64) -> bool {
        let limit = match self.unit {
            Unit::Seconds => self.value * frame_rate,
            Unit::Frames => self.value,
        };
        let d = frames as f64;
        match self.cmp {
            Cmp::Ge => d >= limit,
            Cmp::Gt => d > limit,
            Cmp::Le => d <= limit,
            Cmp::Lt => d < limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub label: LabelExpr,
    pub bounds: Vec<DurationBound>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryPredicate {
    Const(bool),
    Pattern(Pattern),
    Then(Vec<Pattern>),
    Not(Box<QueryPredicate>),
    And(Box<QueryPredicate>, Box<QueryPredicate>),
    Or(Box<QueryPredicate>, Box<QueryPredicate>),
}

/// What a query may refer to: class counts and optional class names.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryContext {
    pub class_counts: Vec<usize>,
    /// Per feature, names of its classes (may be empty).
    pub class_names: Vec<Vec<String>>,
}

impl QueryContext {
    pub fn new(class_counts: Vec<usize>) -> Self {
        let names = vec![Vec::new(); class_counts.len()];
        QueryContext {
            class_counts,
            class_names: names,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Word(String),
    Sym(&'static str),
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Sym(s) => write!(f, "`{s}`"),
        }
    }
}

const SYMBOLS: [&str; 13] = [">=", "<=", ">", "<", "[", "]", "(", ")", "&", "|", "!", "*", "="];

fn lex(input: &str) -> Result<Vec<(usize, Tok)>> {
    let mut out = Vec::new();
    let bytes = input.as_bytes();
    let mut i = 0;
    'outer: while i < bytes.len() {
        let c = input[i..].chars().next().expect("in bounds");
        if c.is_whitespace() {
            i += c.len_utf8();
            continue;
        }
        if c == ',' {
            out.push((i, Tok::Sym(",")));
            i += 1;
            continue;
        }
        for s in SYMBOLS {
            if input[i..].starts_with(s) {
                out.push((i, Tok::Sym(s)));
                i += s.len();
                continue 'outer;
            }
        }
        if c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-' {
            let start = i;
            while i < bytes.len() {
                let d = bytes[i] as char;
                if d.is_ascii_alphanumeric() || d == '_' || d == '.' || d == '-' {
                    i += 1;
                } else {
                    break;
                }
            }
            out.push((start, Tok::Word(input[start..i].to_string())));
            continue;
        }
        return Err(FlaError::Query {
            position: i,
            message: format!("unexpected character `{c}`"),
        });
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    ctx: &'a QueryContext,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T> {
        Err(FlaError::Query {
            position: self.offset(),
            message: message.into(),
        })
    }

    fn found(&self) -> String {
        self.peek().map_or("end of query".to_string(), |t| t.to_string())
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Sym(x)) if *x == s) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn eat_word(&mut self, w: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Word(x)) if x == w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.err(format!("expected `{s}`, found {}", self.found()))
        }
    }

    fn query(&mut self) -> Result<QueryPredicate> {
        let mut left = self.and()?;
        while self.eat_word("or") {
            let right = self.and()?;
            left = QueryPredicate::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<QueryPredicate> {
        let mut left = self.then()?;
        while self.eat_word("and") {
            let right = self.then()?;
            left = QueryPredicate::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn then(&mut self) -> Result<QueryPredicate> {
        let first_at = self.offset();
        let first = self.unary()?;
        if !matches!(self.peek(), Some(Tok::Word(w)) if w == "then") {
            return Ok(first);
        }
        let mut chain = match first {
            QueryPredicate::Pattern(p) => vec![p],
            _ => {
                return Err(FlaError::Query {
                    position: first_at,
                    message: "operands of `then` must be patterns".into(),
                })
            }
        };
        while self.eat_word("then") {
            let at = self.offset();
            match self.unary()? {
                QueryPredicate::Pattern(p) => chain.push(p),
                _ => {
                    return Err(FlaError::Query {
                        position: at,
                        message: "operands of `then` must be patterns".into(),
                    })
                }
            }
        }
        Ok(QueryPredicate::Then(chain))
    }

    fn unary(&mut self) -> Result<QueryPredicate> {
        if self.eat_word("not") {
            return Ok(QueryPredicate::Not(Box::new(self.unary()?)));
        }
        if self.eat_word("true") {
            return Ok(QueryPredicate::Const(true));
        }
        if self.eat_word("false") {
            return Ok(QueryPredicate::Const(false));
        }
        if self.eat_sym("(") {
            let q = self.query()?;
            self.expect_sym(")")?;
            return Ok(q);
        }
        if self.eat_sym("[") {
            let label = self.label()?;
            self.expect_sym("]")?;
            let mut bounds = Vec::new();
            if self.eat_word("for") {
                bounds.push(self.bound()?);
                while self.eat_sym(",") {
                    bounds.push(self.bound()?);
                }
            }
            return Ok(QueryPredicate::Pattern(Pattern { label, bounds }));
        }
        self.err(format!("expected a pattern, `not`, `true`, `false` or `(`, found {}", self.found()))
    }

    fn bound(&mut self) -> Result<DurationBound> {
        let cmp = if self.eat_sym(">=") {
            Cmp::Ge
        } else if self.eat_sym("<=") {
            Cmp::Le
        } else if self.eat_sym(">") {
            Cmp::Gt
        } else if self.eat_sym("<") {
            Cmp::Lt
        } else {
            return self.err(format!("expected a comparison, found {}", self.found()));
        };
        let Some(Tok::Word(w)) = self.peek().cloned() else {
            return self.err(format!("expected a duration such as `30s`, found {}", self.found()));
        };
        let split = w
            .find(|c: char| c.is_ascii_alphabetic())
            .unwrap_or(w.len());
        let (num, unit) = w.split_at(split);
        let value: f64 = match num.parse() {
            Ok(v) if v >= 0.0 && f64::is_finite(v) => v,
            _ => return self.err(format!("bad duration `{w}`")),
        };
        let unit = match unit {
            "s" => Unit::Seconds,
            "f" => Unit::Frames,
            _ => return self.err(format!("duration `{w}` needs unit `s` or `f`")),
        };
        self.pos += 1;
        Ok(DurationBound { cmp, value, unit })
    }

    fn label(&mut self) -> Result<LabelExpr> {
        let mut left = self.label_and()?;
        while self.eat_sym("|") {
            let right = self.label_and()?;
            left = LabelExpr::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn label_and(&mut self) -> Result<LabelExpr> {
        let mut left = self.label_atom()?;
        while self.eat_sym("&") {
            let right = self.label_atom()?;
            left = LabelExpr::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn label_atom(&mut self) -> Result<LabelExpr> {
        if self.eat_sym("!") {
            return Ok(LabelExpr::Not(Box::new(self.label_atom()?)));
        }
        if self.eat_sym("*") {
            return Ok(LabelExpr::Any);
        }
        if self.eat_sym("(") {
            let e = self.label()?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        let Some(Tok::Word(name)) = self.peek().cloned() else {
            return self.err(format!("expected a feature test, found {}", self.found()));
        };
        let feature: Feature = match name.parse() {
            Ok(f) => f,
            Err(_) => return self.err(format!("unknown feature `{name}`")),
        };
        self.pos += 1;
        self.expect_sym("=")?;
        let Some(Tok::Word(value)) = self.peek().cloned() else {
            return self.err(format!("expected a class id or name, found {}", self.found()));
        };
        let f = feature.index();
        let count = self.ctx.class_counts.get(f).copied().unwrap_or(0);
        let class = match value.parse::<u32>() {
            Ok(c) => c,
            Err(_) => match self
                .ctx
                .class_names
                .get(f)
                .and_then(|names| names.iter().position(|n| *n == value))
            {
                Some(c) => c as u32,
                None => return self.err(format!("unknown class `{value}` for {feature}")),
            },
        };
        if class as usize >= count {
            return self.err(format!("{feature} has {count} classes, no class {class}"));
        }
        self.pos += 1;
        Ok(LabelExpr::Is { feature, class })
    }
}

pub fn parse_query(input: &str, ctx: &QueryContext) -> Result<QueryPredicate> {
    let toks = lex(input)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: input.len(),
        ctx,
    };
    let q = p.query()?;
    if p.pos != p.toks.len() {
        return p.err(format!("unexpected {}", p.found()));
    }
    Ok(q)
}

/// Time-ordered runs of consecutive segments matching a pattern.
fn witnesses<'s>(pattern: &Pattern, segs: &[&'s Segment], frame_rate: f64) -> Vec<Vec<&'s Segment>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < segs.len() {
        if !pattern.label.matches(&segs[i].labels) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < segs.len() && pattern.label.matches(&segs[j + 1].labels) {
            j += 1;
        }
        let frames = segs[j].end - segs[i].start + 1;
        if pattern.bounds.iter().all(|b| b.holds(frames, frame_rate)) {
            out.push(segs[i..=j].to_vec());
        }
        i = j + 1;
    }
    out
}

fn evaluate<'s>(
    q: &QueryPredicate,
    segs: &[&'s Segment],
    frame_rate: f64,
) -> Option<Vec<&'s Segment>> {
    match q {
        QueryPredicate::Const(b) => b.then(Vec::new),
        QueryPredicate::Pattern(p) => {
            let runs = witnesses(p, segs, frame_rate);
            (!runs.is_empty()).then(|| runs.into_iter().flatten().collect())
        }
        QueryPredicate::Then(chain) => {
            // greedy earliest-ending witness for each step
            let mut after = i64::MIN;
            let mut out = Vec::new();
            for p in chain {
                let run = witnesses(p, segs, frame_rate)
                    .into_iter()
                    .find(|r| r[0].start > after)?;
                after = run.last().expect("runs are nonempty").end;
                out.extend(run);
            }
            Some(out)
        }
        QueryPredicate::Not(e) => match evaluate(e, segs, frame_rate) {
            Some(_) => None,
            None => Some(Vec::new()),
        },
        QueryPredicate::And(a, b) => {
            let mut x = evaluate(a, segs, frame_rate)?;
            x.extend(evaluate(b, segs, frame_rate)?);
            Some(dedup_in_time(x))
        }
        QueryPredicate::Or(a, b) => match (evaluate(a, segs, frame_rate), evaluate(b, segs, frame_rate)) {
            (None, None) => None,
            (x, y) => {
                let mut v = x.unwrap_or_default();
                v.extend(y.unwrap_or_default());
                Some(dedup_in_time(v))
            }
        },
    }
}

fn dedup_in_time(mut v: Vec<&Segment>) -> Vec<&Segment> {
    v.sort_by_key(|s| (s.start, s.end));
    v.dedup_by(|a, b| std::ptr::eq(*a, *b));
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMatch {
    pub track_id: String,
    pub witnesses: Vec<Segment>,
}

/// Tracks satisfying the predicate, sorted by track id, with witnessing
/// segments.
pub fn query(segments: &SegmentSet, predicate: &QueryPredicate, frame_rate: f64) -> Vec<QueryMatch> {
    let mut out: Vec<QueryMatch> = segments
        .by_track()
        .into_iter()
        .filter_map(|(id, mut segs)| {
            segs.sort_by_key(|s| s.start);
            evaluate(predicate, &segs, frame_rate).map(|w| QueryMatch {
                track_id: id.to_string(),
                witnesses: w.into_iter().cloned().collect(),
            })
        })
        .collect();
    out.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx() -> QueryContext {
        let mut c = QueryContext::new(vec![2, 3, 6, 8]);
        c.class_names[1] = vec!["stopped".into(), "walking".into(), "driving".into()];
        c
    }

    fn seg(track: &str, start: i64, end: i64, speed: u32) -> Segment {
        Segment {
            track_id: track.into(),
            start,
            end,
            labels: vec![0, speed, 0, 0],
            confidence: Vec::new(),
        }
    }

    fn ids(m: &[QueryMatch]) -> Vec<&str> {
        m.iter().map(|x| x.track_id.as_str()).collect()
    }

    fn set() -> SegmentSet {
        SegmentSet {
            segments: vec![
                seg("b", 0, 99, 1),
                seg("b", 100, 599, 0),
                seg("a", 0, 449, 0),
                seg("a", 450, 460, 2),
                seg("c", 0, 300, 2),
                seg("c", 301, 700, 1),
            ],
        }
    }

    #[test]
    fn true_matches_every_track() {
        let q = parse_query("true", &ctx()).unwrap();
        assert_eq!(ids(&query(&set(), &q, 15.0)), vec!["a", "b", "c"]);
        let q = parse_query("[*]", &ctx()).unwrap();
        assert_eq!(ids(&query(&set(), &q, 15.0)), vec!["a", "b", "c"]);
    }

    #[test]
    fn duration_bounds() {
        let q = parse_query("[speed=stopped] for >= 30s", &ctx()).unwrap();
        let m = query(&set(), &q, 15.0);
        assert_eq!(ids(&m), vec!["a", "b"]);
        assert_eq!(m[0].witnesses, vec![seg("a", 0, 449, 0)]);
        let q = parse_query("[*] for >= 1000s", &ctx()).unwrap();
        assert!(query(&set(), &q, 15.0).is_empty());
        let q = parse_query("[speed=0] for > 450f", &ctx()).unwrap();
        assert_eq!(ids(&query(&set(), &q, 15.0)), vec!["b"]);
        let q = parse_query("[speed=2] for >= 1s, <= 1000f", &ctx()).unwrap();
        assert_eq!(ids(&query(&set(), &q, 15.0)), vec!["c"]);
    }

    #[test]
    fn runs_merge_consecutive_matching_segments() {
        let s = SegmentSet {
            segments: vec![
                Segment {
                    labels: vec![0, 0, 1, 0],
                    ..seg("x", 0, 240, 0)
                },
                Segment {
                    labels: vec![0, 0, 2, 0],
                    ..seg("x", 241, 460, 0)
                },
            ],
        };
        let q = parse_query("[speed=0] for >= 30s", &ctx()).unwrap();
        assert_eq!(query(&s, &q, 15.0)[0].witnesses.len(), 2);
        let q = parse_query("[speed=0 & direction=1] for >= 30s", &ctx()).unwrap();
        assert!(query(&s, &q, 15.0).is_empty());
    }

    #[test]
    fn then_requires_time_order() {
        let c = ctx();
        let q = parse_query("[speed=walking] then [speed=stopped]", &c).unwrap();
        assert_eq!(ids(&query(&set(), &q, 15.0)), vec!["b"]);
        let q = parse_query("[speed=stopped] then [speed=driving]", &c).unwrap();
        assert_eq!(ids(&query(&set(), &q, 15.0)), vec!["a"]);
        let q = parse_query("[speed=2] then [speed=1] and not [speed=0]", &c).unwrap();
        assert_eq!(ids(&query(&set(), &q, 15.0)), vec!["c"]);
        let q = parse_query("[speed=1] or ([speed=2] and false)", &c).unwrap();
        assert_eq!(ids(&query(&set(), &q, 15.0)), vec!["b", "c"]);
    }

    #[test]
    fn order_independent() {
        let q = parse_query("[speed=0] for >= 30s or [speed=2 | !size=0]", &ctx()).unwrap();
        let mut rev = set();
        rev.segments.reverse();
        assert_eq!(query(&set(), &q, 15.0), query(&rev, &q, 15.0));
    }

    #[test]
    fn parse_errors_report_positions() {
        let c = ctx();
        let pos = |s: &str| match parse_query(s, &c) {
            Err(FlaError::Query { position, .. }) => position,
            other => panic!("{s}: {other:?}"),
        };
        assert_eq!(pos("[speed=0"), 8);
        assert_eq!(pos("[sped=0]"), 1);
        assert_eq!(pos("[speed=9]"), 7);
        assert_eq!(pos("[size=0] for >= 30"), 16);
        assert_eq!(pos("true then [size=0]"), 0);
        assert_eq!(pos("true false"), 5);
        assert_eq!(pos("[size=0] # x"), 9);
        assert_eq!(pos("[speed=flying]"), 7);
    }
}
