use super::SeqError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    /// Numeric literal with its unit suffix, if any.
    Num(f64, Option<String>),
    Comma,
    Eq,
    DotDot,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    /// Statement terminator: newline or `;`.
    Sep,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> SeqError {
    SeqError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

pub(crate) fn lex(src: &str) -> Result<Vec<Token>, SeqError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let (l0, c0) = (line, col);
        let mut push = |tok| out.push(Token { tok, line: l0, col: c0 });
        match c {
            '\n' => {
                push(Tok::Sep);
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            ';' => push(Tok::Sep),
            ',' => push(Tok::Comma),
            '=' => push(Tok::Eq),
            '{' => push(Tok::LBrace),
            '}' => push(Tok::RBrace),
            '[' => push(Tok::LBracket),
            ']' => push(Tok::RBracket),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
                continue;
            }
            '.' if chars.get(i + 1) == Some(&'.') => {
                push(Tok::DotDot);
                i += 2;
                col += 2;
                continue;
            }
            c if c.is_whitespace() => {}
            c if c.is_ascii_digit() || c == '-' => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                if chars.get(i) == Some(&'.') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                    i += 1;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let value: f64 = text
                    .parse()
                    .map_err(|_| syntax(l0, c0, format!("bad number `{text}`")))?;
                let ustart = i;
                while i < chars.len() && chars[i].is_ascii_alphabetic() {
                    i += 1;
                }
                let unit: String = chars[ustart..i].iter().collect();
                col += i - start;
                push(Tok::Num(value, (!unit.is_empty()).then_some(unit)));
                continue;
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                col += i - start;
                push(Tok::Ident(chars[start..i].iter().collect()));
                continue;
            }
            other => return Err(syntax(l0, c0, format!("unexpected character `{other}`"))),
        }
        i += 1;
        col += 1;
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}
