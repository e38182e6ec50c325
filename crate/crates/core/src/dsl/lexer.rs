use super::DslError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Dot,
    Comma,
    Assign,
    Cmp(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    /// 1-based column of the first character.
    pub column: usize,
}

fn err(line: usize, column: usize, message: impl Into<String>) -> DslError {
    DslError::Syntax {
        line,
        column,
        message: message.into(),
    }
}

/// Tokenizes one line. A `#` outside a string starts a comment.
pub(crate) fn tokenize(src: &str, line: usize) -> Result<Vec<Token>, DslError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '#' {
            break;
        }
        let simple = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '[' => Some(Tok::LBracket),
            ']' => Some(Tok::RBracket),
            '.' if !chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => Some(Tok::Dot),
            ',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = simple {
            out.push(Token { tok, column });
            i += 1;
            continue;
        }
        match c {
            '=' | '!' | '<' | '>' => {
                let next = chars.get(i + 1).copied();
                let (tok, width) = match (c, next) {
                    ('=', Some('=')) => (Tok::Cmp("=="), 2),
                    ('!', Some('=')) => (Tok::Cmp("!="), 2),
                    ('<', Some('=')) => (Tok::Cmp("<="), 2),
                    ('>', Some('=')) => (Tok::Cmp(">="), 2),
                    ('<', _) => (Tok::Cmp("<"), 1),
                    ('>', _) => (Tok::Cmp(">"), 1),
                    ('=', _) => (Tok::Assign, 1),
                    _ => return Err(err(line, column, "unexpected `!`")),
                };
                out.push(Token { tok, column });
                i += width;
            }
            '\'' | '"' => {
                let quote = c;
                let mut s = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(err(line, column, "unterminated string literal")),
                        Some('\\') => {
                            match chars.get(i + 1) {
                                Some(&e) => s.push(e),
                                None => return Err(err(line, column, "unterminated string literal")),
                            }
                            i += 2;
                        }
                        Some(&ch) if ch == quote => {
                            i += 1;
                            break;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            i += 1;
                        }
                    }
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    column,
                });
            }
            c if c.is_ascii_digit()
                || c == '.'
                || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.')) =>
            {
                let start = i;
                i += 1;
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = (d == '-' || d == '+') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v: f64 = text
                    .parse()
                    .map_err(|_| err(line, column, format!("malformed number `{text}`")))?;
                if !v.is_finite() {
                    return Err(err(line, column, format!("number out of range `{text}`")));
                }
                out.push(Token {
                    tok: Tok::Num(v),
                    column,
                });
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(chars[start..i].iter().collect()),
                    column,
                });
            }
            other => return Err(err(line, column, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}
