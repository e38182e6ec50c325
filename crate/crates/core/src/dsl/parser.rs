use super::lexer::{tokenize, Tok, Token};
use super::{CmpOp, DslError, Expr, OpArg, OpKind, Statement, DEFAULT_K};

/// Parses a cell into statements, one per non-blank line.
///
/// Any grammar violation fails the whole cell.
pub fn parse_cell(source: &str) -> Result<Vec<Statement>, DslError> {
    let mut out = Vec::new();
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let tokens = tokenize(raw, line)?;
        if tokens.is_empty() {
            continue;
        }
        let mut p = Parser {
            tokens,
            pos: 0,
            line,
            line_len: raw.chars().count(),
        };
        let (target, expression) = p.statement()?;
        out.push(Statement {
            target,
            expression,
            source_text: raw.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    line: usize,
    line_len: usize,
}

/// A call argument with its column, before it is checked against the
/// method signature.
type RawArg = (Expr, usize);

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn peek_at(&self, offset: usize) -> Option<&Tok> {
        self.tokens.get(self.pos + offset).map(|t| &t.tok)
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.column).unwrap_or(self.line_len + 1)
    }

    fn error(&self, message: impl Into<String>) -> DslError {
        self.error_at(self.column(), message)
    }

    fn error_at(&self, column: usize, message: impl Into<String>) -> DslError {
        DslError::Syntax {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.tokens.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: &Tok, what: &str) -> Result<(), DslError> {
        match self.peek() {
            Some(t) if t == want => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(self.error(format!("expected {what}, found {}", describe(t)))),
            None => Err(self.error(format!("expected {what}, found end of line"))),
        }
    }

    fn statement(&mut self) -> Result<(Option<String>, Expr), DslError> {
        let target = match (self.peek(), self.peek_at(1)) {
            (Some(Tok::Ident(name)), Some(Tok::Assign)) => {
                let name = name.clone();
                if name == "read_csv" {
                    return Err(self.error("cannot assign to `read_csv`"));
                }
                self.pos += 2;
                Some(name)
            }
            _ => None,
        };
        let expr = self.expr()?;
        if let Some(t) = self.peek() {
            return Err(self.error(format!("unexpected {} after expression", describe(t))));
        }
        Ok((target, expr))
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        let mut e = self.primary()?;
        loop {
            match self.peek() {
                Some(Tok::LBracket) => {
                    self.pos += 1;
                    e = self.subscript(e)?;
                }
                Some(Tok::Dot) => {
                    self.pos += 1;
                    e = self.method(e)?;
                }
                _ => return Ok(e),
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        let column = self.column();
        match self.next() {
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    if name != "read_csv" {
                        return Err(DslError::UnknownMethod {
                            line: self.line,
                            column,
                            name,
                        });
                    }
                    self.pos += 1;
                    let path = match self.next() {
                        Some(Tok::Str(s)) => s,
                        _ => return Err(self.error_at(column, "read_csv expects a quoted path")),
                    };
                    self.expect(&Tok::RParen, "`)`")?;
                    Ok(Expr::call(OpKind::ReadCsv, vec![], vec![OpArg::Str(path)]))
                } else if name == "read_csv" {
                    Err(self.error_at(column, "read_csv must be called"))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::Num(v)) => Ok(Expr::call(OpKind::Literal, vec![], vec![OpArg::Num(v)])),
            Some(Tok::Str(s)) => Ok(Expr::call(OpKind::Literal, vec![], vec![OpArg::Str(s)])),
            Some(t) => Err(self.error_at(column, format!("unexpected {}", describe(&t)))),
            None => Err(self.error_at(column, "expected an expression")),
        }
    }

    /// After `[`: either a column name or a filter predicate.
    fn subscript(&mut self, input: Expr) -> Result<Expr, DslError> {
        if let (Some(Tok::Str(name)), Some(Tok::RBracket)) = (self.peek(), self.peek_at(1)) {
            let name = name.clone();
            self.pos += 2;
            return Ok(Expr::call(OpKind::SelectColumn, vec![input], vec![OpArg::Str(name)]));
        }
        let predicate = self.expr()?;
        let cmp = match self.next() {
            Some(Tok::Cmp(sym)) => CmpOp::from_symbol(sym).expect("lexer emits known symbols"),
            _ => {
                self.pos = self.pos.saturating_sub(1);
                return Err(self.error("expected a comparison operator in filter"));
            }
        };
        let value = self.literal("filter constant")?;
        self.expect(&Tok::RBracket, "`]`")?;
        Ok(Expr::call(
            OpKind::Filter,
            vec![input, predicate],
            vec![OpArg::Cmp(cmp), value],
        ))
    }

    fn literal(&mut self, what: &str) -> Result<OpArg, DslError> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(OpArg::Num(v))
            }
            Some(Tok::Str(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(OpArg::Str(s))
            }
            _ => Err(self.error(format!("expected a literal {what}"))),
        }
    }

    fn method(&mut self, receiver: Expr) -> Result<Expr, DslError> {
        let column = self.column();
        let name = match self.next() {
            Some(Tok::Ident(n)) => n,
            _ => return Err(self.error_at(column, "expected a method name after `.`")),
        };
        let kind = OpKind::from_name(&name)
            .filter(|k| k.is_method())
            .ok_or_else(|| DslError::UnknownMethod {
                line: self.line,
                column,
                name: name.clone(),
            })?;
        if kind == OpKind::Columns && self.peek() != Some(&Tok::LParen) {
            return Ok(Expr::call(OpKind::Columns, vec![receiver], vec![]));
        }
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek() != Some(&Tok::RParen) {
            loop {
                let col = self.column();
                args.push((self.expr()?, col));
                if self.peek() == Some(&Tok::Comma) {
                    self.pos += 1;
                    continue;
                }
                break;
            }
        }
        self.expect(&Tok::RParen, "`)` or `,`")?;
        self.build_method(kind, receiver, args, column)
    }

    fn build_method(&self, kind: OpKind, receiver: Expr, args: Vec<RawArg>, column: usize) -> Result<Expr, DslError> {
        let argc = args.len();
        let arity = |n: std::ops::RangeInclusive<usize>| -> Result<(), DslError> {
            if n.contains(&argc) {
                Ok(())
            } else {
                Err(self.error_at(
                    column,
                    format!("`{kind}` takes {} argument(s), got {}", fmt_range(&n), argc),
                ))
            }
        };
        let mut args = args.into_iter();
        let as_literal = |e: Expr, c: usize, what: &str| -> Result<OpArg, DslError> {
            match e {
                Expr::Call {
                    kind: OpKind::Literal,
                    mut params,
                    ..
                } => Ok(params.remove(0)),
                _ => Err(self.error_at(c, format!("`{kind}` expects a literal {what}"))),
            }
        };
        match kind {
            OpKind::Mean | OpKind::Sum | OpKind::ValueCounts | OpKind::Columns => {
                arity(0..=0)?;
                Ok(Expr::call(kind, vec![receiver], vec![]))
            }
            OpKind::Head | OpKind::Tail => {
                arity(0..=1)?;
                let k = match args.next() {
                    None => DEFAULT_K as f64,
                    Some((e, c)) => match as_literal(e, c, "row count")? {
                        OpArg::Num(v) if v >= 1.0 && v.fract() == 0.0 => v,
                        _ => return Err(self.error_at(c, "row count must be a positive integer")),
                    },
                };
                Ok(Expr::call(kind, vec![receiver], vec![OpArg::Num(k)]))
            }
            OpKind::SortValues => {
                arity(0..=1)?;
                let params = match args.next() {
                    None => vec![],
                    Some((e, c)) => match as_literal(e, c, "column name")? {
                        s @ OpArg::Str(_) => vec![s],
                        _ => return Err(self.error_at(c, "sort key must be a column name")),
                    },
                };
                Ok(Expr::call(kind, vec![receiver], params))
            }
            OpKind::GroupbyMean => {
                arity(1..=1)?;
                let (e, c) = args.next().expect("arity checked");
                match as_literal(e, c, "column name")? {
                    s @ OpArg::Str(_) => Ok(Expr::call(kind, vec![receiver], vec![s])),
                    _ => Err(self.error_at(c, "group key must be a column name")),
                }
            }
            OpKind::DropColumnsBelowThreshold => {
                arity(1..=1)?;
                let (e, c) = args.next().expect("arity checked");
                match as_literal(e, c, "fraction")? {
                    OpArg::Num(f) if (0.0..=1.0).contains(&f) => {
                        Ok(Expr::call(kind, vec![receiver], vec![OpArg::Num(f)]))
                    }
                    _ => Err(self.error_at(c, "threshold must be a number in [0, 1]")),
                }
            }
            OpKind::Fillna => {
                arity(1..=1)?;
                let (value, _) = args.next().expect("arity checked");
                Ok(Expr::call(kind, vec![receiver, value], vec![]))
            }
            OpKind::Assign => {
                arity(2..=2)?;
                let (e, c) = args.next().expect("arity checked");
                let name = match as_literal(e, c, "column name")? {
                    s @ OpArg::Str(_) => s,
                    _ => return Err(self.error_at(c, "assign expects a column name first")),
                };
                let (value, _) = args.next().expect("arity checked");
                Ok(Expr::call(kind, vec![receiver, value], vec![name]))
            }
            OpKind::ReadCsv | OpKind::SelectColumn | OpKind::Filter | OpKind::Literal => {
                unreachable!("not methods")
            }
        }
    }
}

fn fmt_range(r: &std::ops::RangeInclusive<usize>) -> String {
    if r.start() == r.end() {
        r.start().to_string()
    } else {
        format!("{}..={}", r.start(), r.end())
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("identifier `{s}`"),
        Tok::Num(v) => format!("number `{v}`"),
        Tok::Str(s) => format!("string '{s}'"),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::Dot => "`.`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Assign => "`=`".into(),
        Tok::Cmp(s) => format!("`{s}`"),
    }
}
