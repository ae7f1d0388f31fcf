//! Filter expressions over CoT records.
//!
//! A small conjunction/comparison grammar, enough for every filter the
//! pipeline performs (score ranges, teacher, correctness):
//!
//! ```text
//! expr   := and_or
//! and_or := unary (("and" | "or") unary)*    left-associative
//! unary  := "not" unary | "(" expr ")" | comparison | bool_field
//! comparison := field op value               op in {== != <= >= < >}
//! ```
//!
//! Fields are typed: `s_rv`, `s_cd`, `token_count` are integers,
//! `teacher` is a string, `thought_correctness_verify` (alias
//! `reasoning_valid`) and `solution_valid` are booleans and may appear
//! bare. Type errors are rejected at parse time. Comparisons against a
//! missing value (unscored record, pending verdict) evaluate to false,
//! so `not` is the exact complement and filters always partition.

use crate::corpus::CoTRecord;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed predicate: {0}")]
pub struct PredicateError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    SRv,
    SCd,
    TokenCount,
    Teacher,
    ReasoningValid,
    SolutionValid,
}

impl Field {
    fn parse(word: &str) -> Option<Field> {
        match word.to_ascii_lowercase().as_str() {
            "s_rv" | "rv" => Some(Field::SRv),
            "s_cd" | "cd" => Some(Field::SCd),
            "token_count" => Some(Field::TokenCount),
            "teacher" => Some(Field::Teacher),
            "thought_correctness_verify" | "reasoning_valid" => Some(Field::ReasoningValid),
            "solution_valid" => Some(Field::SolutionValid),
            _ => None,
        }
    }

    fn is_int(&self) -> bool {
        matches!(self, Field::SRv | Field::SCd | Field::TokenCount)
    }

    fn is_bool(&self) -> bool {
        matches!(self, Field::ReasoningValid | Field::SolutionValid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Eq,
    Ne,
    Le,
    Ge,
    Lt,
    Gt,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    And(Box<Node>, Box<Node>),
    Or(Box<Node>, Box<Node>),
    Not(Box<Node>),
    IntCmp(Field, Op, i64),
    StrCmp(Field, Op, String),
    BoolCmp(Field, bool),
}

/// A parsed, type-checked filter expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    root: Node,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Word(String),
    Quoted(String),
    Sym(&'static str),
    Open,
    Close,
}

fn lex(input: &str) -> Result<Vec<Token>, PredicateError> {
    let mut tokens = Vec::new();
    let mut chars = input.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                tokens.push(Token::Open);
            }
            ')' => {
                chars.next();
                tokens.push(Token::Close);
            }
            '"' | '\'' => {
                let quote = c;
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some(ch) if ch == quote => break,
                        Some(ch) => s.push(ch),
                        None => return Err(PredicateError("unterminated string literal".into())),
                    }
                }
                tokens.push(Token::Quoted(s));
            }
            '=' | '!' | '<' | '>' => {
                chars.next();
                let eq = chars.peek() == Some(&'=');
                if eq {
                    chars.next();
                }
                let sym = match (c, eq) {
                    ('=', true) => "==",
                    ('!', true) => "!=",
                    ('<', true) => "<=",
                    ('>', true) => ">=",
                    ('<', false) => "<",
                    ('>', false) => ">",
                    _ => return Err(PredicateError(format!("stray `{c}`"))),
                };
                tokens.push(Token::Sym(sym));
            }
            _ => {
                let mut word = String::new();
                while let Some(&ch) = chars.peek() {
                    if ch.is_whitespace() || "()=!<>\"'".contains(ch) {
                        break;
                    }
                    word.push(ch);
                    chars.next();
                }
                tokens.push(Token::Word(word));
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn keyword(&self) -> Option<&'static str> {
        match self.peek() {
            Some(Token::Word(w)) => match w.to_ascii_lowercase().as_str() {
                "and" => Some("and"),
                "or" => Some("or"),
                "not" => Some("not"),
                _ => None,
            },
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Node, PredicateError> {
        let mut node = self.unary()?;
        while let Some(kw) = self.keyword() {
            if kw == "not" {
                return Err(PredicateError("`not` in infix position".into()));
            }
            self.next();
            let rhs = self.unary()?;
            node = match kw {
                "and" => Node::And(Box::new(node), Box::new(rhs)),
                _ => Node::Or(Box::new(node), Box::new(rhs)),
            };
        }
        Ok(node)
    }

    fn unary(&mut self) -> Result<Node, PredicateError> {
        if self.keyword() == Some("not") {
            self.next();
            return Ok(Node::Not(Box::new(self.unary()?)));
        }
        if self.peek() == Some(&Token::Open) {
            self.next();
            let node = self.expr()?;
            match self.next() {
                Some(Token::Close) => return Ok(node),
                _ => return Err(PredicateError("missing closing paren".into())),
            }
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Node, PredicateError> {
        let Some(Token::Word(word)) = self.next() else {
            return Err(PredicateError("expected a field name".into()));
        };
        let field = Field::parse(&word)
            .ok_or_else(|| PredicateError(format!("unknown field `{word}`")))?;

        let op = match self.peek() {
            Some(Token::Sym(s)) => {
                let op = match *s {
                    "==" => Op::Eq,
                    "!=" => Op::Ne,
                    "<=" => Op::Le,
                    ">=" => Op::Ge,
                    "<" => Op::Lt,
                    ">" => Op::Gt,
                    _ => unreachable!(),
                };
                self.next();
                op
            }
            _ => {
                // Bare boolean field.
                if field.is_bool() {
                    return Ok(Node::BoolCmp(field, true));
                }
                return Err(PredicateError(format!("field `{word}` needs a comparison")));
            }
        };

        let value = self
            .next()
            .ok_or_else(|| PredicateError("missing comparison value".into()))?;
        match value {
            Token::Quoted(s) => {
                if field != Field::Teacher {
                    return Err(PredicateError(format!("field `{word}` is not a string")));
                }
                match op {
                    Op::Eq => Ok(Node::StrCmp(field, Op::Eq, s)),
                    Op::Ne => Ok(Node::StrCmp(field, Op::Ne, s)),
                    _ => Err(PredicateError("strings only support == and !=".into())),
                }
            }
            Token::Word(w) => {
                if let Ok(n) = w.parse::<i64>() {
                    if !field.is_int() {
                        return Err(PredicateError(format!("field `{word}` is not numeric")));
                    }
                    return Ok(Node::IntCmp(field, op, n));
                }
                match w.to_ascii_lowercase().as_str() {
                    "true" | "false" => {
                        if !field.is_bool() {
                            return Err(PredicateError(format!("field `{word}` is not boolean")));
                        }
                        let b = w.eq_ignore_ascii_case("true");
                        match op {
                            Op::Eq => Ok(Node::BoolCmp(field, b)),
                            Op::Ne => Ok(Node::BoolCmp(field, !b)),
                            _ => Err(PredicateError("booleans only support == and !=".into())),
                        }
                    }
                    _ => {
                        if field != Field::Teacher {
                            return Err(PredicateError(format!(
                                "field `{word}` cannot compare to `{w}`"
                            )));
                        }
                        match op {
                            Op::Eq => Ok(Node::StrCmp(field, Op::Eq, w)),
                            Op::Ne => Ok(Node::StrCmp(field, Op::Ne, w)),
                            _ => Err(PredicateError("strings only support == and !=".into())),
                        }
                    }
                }
            }
            _ => Err(PredicateError("expected a literal value".into())),
        }
    }
}

impl Predicate {
    pub fn parse(input: &str) -> Result<Self, PredicateError> {
        let tokens = lex(input)?;
        if tokens.is_empty() {
            return Err(PredicateError("empty predicate".into()));
        }
        let mut parser = Parser { tokens, pos: 0 };
        let root = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(PredicateError("trailing tokens after expression".into()));
        }
        Ok(Self { root })
    }

    pub fn eval(&self, record: &CoTRecord) -> bool {
        eval_node(&self.root, record)
    }
}

fn int_value(field: Field, record: &CoTRecord) -> Option<i64> {
    match field {
        Field::SRv => record.rv.as_ref().map(|a| i64::from(a.level)),
        Field::SCd => record.cd.as_ref().map(|a| i64::from(a.level)),
        Field::TokenCount => Some(record.token_count as i64),
        _ => None,
    }
}

fn bool_value(field: Field, record: &CoTRecord) -> Option<bool> {
    match field {
        Field::ReasoningValid => record.thought_correctness_verify,
        Field::SolutionValid => record.solution_valid,
        _ => None,
    }
}

fn eval_node(node: &Node, record: &CoTRecord) -> bool {
    match node {
        Node::And(a, b) => eval_node(a, record) && eval_node(b, record),
        Node::Or(a, b) => eval_node(a, record) || eval_node(b, record),
        Node::Not(inner) => !eval_node(inner, record),
        Node::IntCmp(field, op, rhs) => match int_value(*field, record) {
            None => false,
            Some(lhs) => match op {
                Op::Eq => lhs == *rhs,
                Op::Ne => lhs != *rhs,
                Op::Le => lhs <= *rhs,
                Op::Ge => lhs >= *rhs,
                Op::Lt => lhs < *rhs,
                Op::Gt => lhs > *rhs,
            },
        },
        Node::StrCmp(_, op, rhs) => match op {
            Op::Eq => record.teacher == *rhs,
            _ => record.teacher != *rhs,
        },
        Node::BoolCmp(field, expected) => bool_value(*field, record) == Some(*expected),
    }
}
