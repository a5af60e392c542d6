//! Recursive-descent parser for the function-call grammar
//!
//! ```text
//! expr := ident | number | ident '(' expr (',' expr)* ')'
//! ```

use thiserror::Error;

use super::ast::FactorExpr;

const MAX_NESTING: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("unexpected end of input, expected {expected}")]
    UnexpectedEnd { expected: &'static str },
    #[error("unexpected `{found}`, expected {expected}")]
    UnexpectedToken { found: String, expected: &'static str },
    #[error("unknown character `{0}`")]
    UnknownCharacter(char),
    #[error("invalid number `{0}`")]
    BadNumber(String),
    #[error("nesting deeper than {MAX_NESTING}")]
    TooDeep,
}

#[derive(Debug, Clone, PartialEq)]
enum Token<'a> {
    Ident(&'a str),
    Number(&'a str),
    LParen,
    RParen,
    Comma,
}

impl Token<'_> {
    fn text(&self) -> String {
        match self {
            Token::Ident(s) | Token::Number(s) => s.to_string(),
            Token::LParen => "(".into(),
            Token::RParen => ")".into(),
            Token::Comma => ",".into(),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token<'_>)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'(' => {
                out.push((i, Token::LParen));
                i += 1;
            }
            b')' => {
                out.push((i, Token::RParen));
                i += 1;
            }
            b',' => {
                out.push((i, Token::Comma));
                i += 1;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Token::Ident(&src[start..i])));
            }
            b'0'..=b'9' | b'-' | b'.' => {
                let start = i;
                if c == b'-' {
                    i += 1;
                }
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    i += 1;
                    if i < bytes.len() && (bytes[i] == b'+' || bytes[i] == b'-') {
                        i += 1;
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                out.push((start, Token::Number(&src[start..i])));
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    offset: i,
                    kind: ParseErrorKind::UnknownCharacter(ch),
                });
            }
        }
    }
    Ok(out)
}

fn number(offset: usize, text: &str) -> Result<FactorExpr, ParseError> {
    let bad = || ParseError {
        offset,
        kind: ParseErrorKind::BadNumber(text.to_string()),
    };
    let digits = text.strip_prefix('-').unwrap_or(text);
    if !digits.starts_with(|c: char| c.is_ascii_digit()) {
        return Err(bad());
    }
    if text.contains(['.', 'e', 'E']) {
        let v: f64 = text.parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        Ok(FactorExpr::NumLiteral(v))
    } else {
        text.parse().map(FactorExpr::IntLiteral).map_err(|_| bad())
    }
}

struct Parser<'a> {
    tokens: Vec<(usize, Token<'a>)>,
    pos: usize,
    end: usize,
}

impl<'a> Parser<'a> {
    fn next(&mut self, expected: &'static str) -> Result<(usize, Token<'a>), ParseError> {
        let tok = self.tokens.get(self.pos).cloned().ok_or(ParseError {
            offset: self.end,
            kind: ParseErrorKind::UnexpectedEnd { expected },
        })?;
        self.pos += 1;
        Ok(tok)
    }

    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn expr(&mut self, nesting: usize) -> Result<FactorExpr, ParseError> {
        let (offset, tok) = self.next("an expression")?;
        if nesting > MAX_NESTING {
            return Err(ParseError {
                offset,
                kind: ParseErrorKind::TooDeep,
            });
        }
        match tok {
            Token::Number(text) => number(offset, text),
            Token::Ident(name) => {
                if self.peek() != Some(&Token::LParen) {
                    return Ok(FactorExpr::Variable(name.to_string()));
                }
                self.pos += 1;
                let mut args = vec![self.expr(nesting + 1)?];
                loop {
                    let (offset, tok) = self.next("`,` or `)`")?;
                    match tok {
                        Token::Comma => args.push(self.expr(nesting + 1)?),
                        Token::RParen => break,
                        other => {
                            return Err(ParseError {
                                offset,
                                kind: ParseErrorKind::UnexpectedToken {
                                    found: other.text(),
                                    expected: "`,` or `)`",
                                },
                            })
                        }
                    }
                }
                Ok(FactorExpr::Call(name.to_string(), args))
            }
            other => Err(ParseError {
                offset,
                kind: ParseErrorKind::UnexpectedToken {
                    found: other.text(),
                    expected: "an expression",
                },
            }),
        }
    }
}

pub fn parse(text: &str) -> Result<FactorExpr, ParseError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let expr = p.expr(0)?;
    if let Some((offset, tok)) = p.tokens.get(p.pos) {
        return Err(ParseError {
            offset: *offset,
            kind: ParseErrorKind::UnexpectedToken {
                found: tok.text(),
                expected: "end of input",
            },
        });
    }
    Ok(expr)
}
