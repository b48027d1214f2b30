use super::ast::{Duration, SequenceSpec, Statement, SweepDecl, SweepValues};
use super::lexer::{lex, Tok, Token};
use super::SeqError;

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    spec: SequenceSpec,
}

fn syntax(t: &Token, msg: impl Into<String>) -> SeqError {
    SeqError::Syntax {
        line: t.line,
        col: t.col,
        msg: msg.into(),
    }
}

fn describe(tok: &Tok) -> String {
    match tok {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Num(v, Some(u)) => format!("`{v}{u}`"),
        Tok::Num(v, None) => format!("`{v}`"),
        Tok::Comma => "`,`".into(),
        Tok::Eq => "`=`".into(),
        Tok::DotDot => "`..`".into(),
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
        Tok::LBracket => "`[`".into(),
        Tok::RBracket => "`]`".into(),
        Tok::Sep => "end of statement".into(),
        Tok::Eof => "end of input".into(),
    }
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token, SeqError> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(syntax(&t, format!("expected {what}, found {}", describe(&t.tok))))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Token), SeqError> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            other => Err(syntax(&t, format!("expected {what}, found {}", describe(other)))),
        }
    }

    fn skip_seps(&mut self) {
        while self.peek().tok == Tok::Sep {
            self.pos += 1;
        }
    }

    /// A literal duration with unit, converted to ns.
    fn literal(&mut self) -> Result<(f64, Token), SeqError> {
        let t = self.next();
        match &t.tok {
            Tok::Num(v, Some(unit)) => {
                let scale = match unit.as_str() {
                    "ns" => 1.0,
                    "us" => 1000.0,
                    other => return Err(syntax(&t, format!("unknown unit `{other}` (use ns or us)"))),
                };
                Ok((v * scale, t.clone()))
            }
            Tok::Num(_, None) => Err(syntax(&t, "duration needs a unit (ns or us)")),
            other => Err(syntax(&t, format!("expected a duration, found {}", describe(other)))),
        }
    }

    fn end_of_statement(&mut self) -> Result<(), SeqError> {
        match self.peek().tok {
            Tok::Sep => {
                self.pos += 1;
                Ok(())
            }
            Tok::Eof | Tok::RBrace => Ok(()),
            ref other => Err(syntax(
                self.peek(),
                format!("expected end of statement, found {}", describe(other)),
            )),
        }
    }

    fn program(&mut self) -> Result<(), SeqError> {
        let mut any = false;
        loop {
            self.skip_seps();
            let t = self.peek().clone();
            match &t.tok {
                Tok::Eof => break,
                Tok::Ident(kw) if kw == "channels" => {
                    self.pos += 1;
                    self.channels()?;
                }
                Tok::Ident(kw) if kw == "sweep" => {
                    self.pos += 1;
                    self.sweep()?;
                }
                Tok::Ident(kw) if kw == "block" || kw == "repeat" => {
                    let st = self.statement()?;
                    self.spec.body.push(st);
                }
                other => return Err(syntax(&t, format!("unexpected {}", describe(other)))),
            }
            any = true;
            self.end_of_statement()?;
            if self.peek().tok == Tok::RBrace {
                return Err(syntax(self.peek(), "unmatched `}`"));
            }
        }
        if any {
            Ok(())
        } else {
            Err(SeqError::Empty)
        }
    }

    fn declare_check(&self, name: &str, t: &Token) -> Result<(), SeqError> {
        if self.spec.has_channel(name) || self.spec.sweep(name).is_some() {
            return Err(SeqError::Duplicate {
                name: name.to_string(),
                line: t.line,
            });
        }
        if matches!(name, "channels" | "sweep" | "block" | "repeat" | "on" | "off" | "step") {
            return Err(syntax(t, format!("`{name}` is a keyword")));
        }
        Ok(())
    }

    fn channels(&mut self) -> Result<(), SeqError> {
        loop {
            let (name, t) = self.ident("a channel name")?;
            self.declare_check(&name, &t)?;
            self.spec.channels.push(name);
            if self.peek().tok == Tok::Comma {
                self.pos += 1;
            } else {
                return Ok(());
            }
        }
    }

    fn sweep(&mut self) -> Result<(), SeqError> {
        let (name, t) = self.ident("a sweep variable name")?;
        self.declare_check(&name, &t)?;
        self.expect(Tok::Eq, "`=`")?;
        let bad = |reason: &str| SeqError::BadSweep {
            name: name.clone(),
            reason: reason.to_string(),
        };
        let values = if self.peek().tok == Tok::LBracket {
            self.pos += 1;
            let mut v = Vec::new();
            loop {
                v.push(self.literal()?.0);
                let t = self.next();
                match t.tok {
                    Tok::Comma => continue,
                    Tok::RBracket => break,
                    ref other => {
                        return Err(syntax(&t, format!("expected `,` or `]`, found {}", describe(other))))
                    }
                }
            }
            if v.iter().any(|&x| !(x > 0.0)) {
                return Err(bad("sweep values must be > 0"));
            }
            SweepValues::List(v)
        } else {
            let (start, _) = self.literal()?;
            self.expect(Tok::DotDot, "`..`")?;
            let (stop, _) = self.literal()?;
            let (kw, t) = self.ident("`step`")?;
            if kw != "step" {
                return Err(syntax(&t, format!("expected `step`, found `{kw}`")));
            }
            let (step, _) = self.literal()?;
            if !(start > 0.0) {
                return Err(bad("start must be > 0"));
            }
            if !(step > 0.0) {
                return Err(bad("step must be > 0"));
            }
            if stop < start {
                return Err(bad("stop must not precede start"));
            }
            SweepValues::Range { start, stop, step }
        };
        self.spec.sweeps.push(SweepDecl { name, values });
        Ok(())
    }

    fn statement(&mut self) -> Result<Statement, SeqError> {
        let (kw, t) = self.ident("a statement")?;
        match kw.as_str() {
            "block" => self.block(),
            "repeat" => self.repeat(&t),
            "channels" | "sweep" => Err(syntax(&t, format!("`{kw}` is not allowed inside repeat"))),
            other => Err(syntax(&t, format!("unknown statement `{other}`"))),
        }
    }

    fn block(&mut self) -> Result<Statement, SeqError> {
        let (channel, t) = self.ident("a channel name")?;
        if !self.spec.has_channel(&channel) {
            return Err(SeqError::UndeclaredChannel {
                name: channel,
                line: t.line,
                col: t.col,
            });
        }
        let (state, t) = self.ident("`on` or `off`")?;
        let on = match state.as_str() {
            "on" => true,
            "off" => false,
            other => return Err(syntax(&t, format!("expected `on` or `off`, found `{other}`"))),
        };
        let duration = match self.peek().tok.clone() {
            Tok::Ident(name) => {
                let t = self.next();
                if self.spec.sweep(&name).is_none() {
                    return Err(SeqError::UndeclaredVariable {
                        name,
                        line: t.line,
                        col: t.col,
                    });
                }
                Duration::Var(name)
            }
            _ => {
                let (v, t) = self.literal()?;
                if !(v > 0.0) {
                    return Err(SeqError::NonPositiveDuration { value: v, line: t.line });
                }
                Duration::Ns(v)
            }
        };
        Ok(Statement::Block {
            channel,
            on,
            duration,
        })
    }

    fn repeat(&mut self, kw: &Token) -> Result<Statement, SeqError> {
        let t = self.next();
        let count = match t.tok {
            Tok::Num(v, None) if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 => v as u32,
            Tok::Num(_, None) => return Err(SeqError::BadRepeat { line: kw.line }),
            ref other => {
                return Err(syntax(&t, format!("expected a repeat count, found {}", describe(other))))
            }
        };
        self.expect(Tok::LBrace, "`{`")?;
        let mut body = Vec::new();
        loop {
            self.skip_seps();
            if self.peek().tok == Tok::RBrace {
                self.pos += 1;
                break;
            }
            if self.peek().tok == Tok::Eof {
                return Err(syntax(self.peek(), "unclosed `{`"));
            }
            body.push(self.statement()?);
            self.end_of_statement()?;
        }
        Ok(Statement::Repeat { count, body })
    }
}

/// Parse source text into a checked [`SequenceSpec`].
pub fn parse(text: &str) -> Result<SequenceSpec, SeqError> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
        spec: SequenceSpec::default(),
    };
    p.program()?;
    Ok(p.spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_line_program() {
        let s = parse("channels laser; block laser on 3000ns; block laser off 150ns;").unwrap();
        assert_eq!(s.channels, vec!["laser"]);
        assert_eq!(s.body.len(), 2);
        assert_eq!(
            s.body[1],
            Statement::Block {
                channel: "laser".into(),
                on: false,
                duration: Duration::Ns(150.0)
            }
        );
    }

    #[test]
    fn empty_input() {
        assert_eq!(parse(""), Err(SeqError::Empty));
        assert_eq!(parse("  # only a comment\n\n"), Err(SeqError::Empty));
    }

    #[test]
    fn undeclared_variable_is_named() {
        let err = parse("channels laser\nblock laser off tau").unwrap_err();
        assert_eq!(
            err,
            SeqError::UndeclaredVariable {
                name: "tau".into(),
                line: 2,
                col: 17
            }
        );
        assert!(err.to_string().contains("tau"));
    }

    #[test]
    fn undeclared_channel() {
        assert!(matches!(
            parse("channels laser\nblock mw on 5ns"),
            Err(SeqError::UndeclaredChannel { ref name, line: 2, .. }) if name == "mw"
        ));
    }

    #[test]
    fn nonpositive_literal() {
        assert!(matches!(
            parse("channels a\nblock a on 0ns"),
            Err(SeqError::NonPositiveDuration { line: 2, .. })
        ));
        assert!(matches!(
            parse("channels a\nblock a on -3ns"),
            Err(SeqError::NonPositiveDuration { .. })
        ));
    }

    #[test]
    fn units_and_sweeps() {
        let s = parse("channels a\nsweep t = 2ns .. 1us step 2ns\nsweep b = [5ns, 0.15us]").unwrap();
        assert_eq!(s.sweep("t").unwrap().points().len(), 500);
        assert_eq!(s.sweep("b").unwrap().points(), vec![5.0, 150.0]);
        assert!(parse("channels a\nblock a on 3").is_err());
        assert!(parse("channels a\nblock a on 3ms").is_err());
        assert!(matches!(
            parse("sweep t = 5ns .. 2ns step 1ns"),
            Err(SeqError::BadSweep { .. })
        ));
    }

    #[test]
    fn repeat_blocks() {
        let s = parse("channels a\nrepeat 2 { block a on 10ns; block a off 5ns }").unwrap();
        match &s.body[0] {
            Statement::Repeat { count: 2, body } => assert_eq!(body.len(), 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("channels a\nrepeat 0 { block a on 1ns }"),
            Err(SeqError::BadRepeat { line: 2 })
        ));
        assert!(parse("channels a\nrepeat 2 { block a on 1ns").is_err());
        assert!(parse("channels a\nblock a on 1ns }").is_err());
        assert!(parse("channels a\nrepeat 2 { channels b }").is_err());
    }

    #[test]
    fn syntax_error_position() {
        match parse("channels a\nblock a sideways 3ns") {
            Err(SeqError::Syntax { line, col, .. }) => assert_eq!((line, col), (2, 9)),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("channels a, a"),
            Err(SeqError::Duplicate { .. })
        ));
    }

    #[test]
    fn printer_round_trip() {
        let src = "channels laser, mw\nsweep tau = 2ns .. 150ns step 2ns\nsweep buf = [5ns, 150ns]\n\
                   block laser on 3us\nblock laser off buf\nblock mw off 3000ns\nblock mw off buf\nblock mw on tau\n\
                   repeat 3 { block laser on 0.5ns\n repeat 2 { block laser off 1ns } }\n";
        let spec = parse(src).unwrap();
        let printed = spec.to_string();
        assert_eq!(parse(&printed).unwrap(), spec);
        assert!(printed.contains("repeat 3 {"));
    }
}
