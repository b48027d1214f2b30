use std::fmt;

use serde::{Deserialize, Serialize};

/// Block length: a literal in ns or a reference to a sweep variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Duration {
    Ns(f64),
    Var(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Statement {
    Block {
        channel: String,
        on: bool,
        duration: Duration,
    },
    Repeat {
        count: u32,
        body: Vec<Statement>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SweepValues {
    /// Inclusive range; the last point is kept when it lands on `stop`.
    Range { start: f64, stop: f64, step: f64 },
    List(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDecl {
    pub name: String,
    pub values: SweepValues,
}

impl SweepDecl {
    /// Concrete sweep points in ns.
    pub fn points(&self) -> Vec<f64> {
        match &self.values {
            SweepValues::List(v) => v.clone(),
            SweepValues::Range { start, stop, step } => range_points(*start, *stop, *step),
        }
    }
}

pub(crate) fn range_points(start: f64, stop: f64, step: f64) -> Vec<f64> {
    if !(step > 0.0) || stop < start {
        return Vec::new();
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

/// Parsed pulse sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub channels: Vec<String>,
    pub sweeps: Vec<SweepDecl>,
    pub body: Vec<Statement>,
}

impl SequenceSpec {
    pub fn sweep(&self, name: &str) -> Option<&SweepDecl> {
        self.sweeps.iter().find(|s| s.name == name)
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channels.iter().any(|c| c == name)
    }
}

fn fmt_ns(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    write!(f, "{v}ns")
}

fn fmt_statements(f: &mut fmt::Formatter<'_>, body: &[Statement], indent: usize) -> fmt::Result {
    let pad = "    ".repeat(indent);
    for st in body {
        match st {
            Statement::Block {
                channel,
                on,
                duration,
            } => {
                write!(f, "{pad}block {channel} {} ", if *on { "on" } else { "off" })?;
                match duration {
                    Duration::Ns(v) => fmt_ns(f, *v)?,
                    Duration::Var(name) => f.write_str(name)?,
                }
                writeln!(f)?;
            }
            Statement::Repeat { count, body } => {
                writeln!(f, "{pad}repeat {count} {{")?;
                fmt_statements(f, body, indent + 1)?;
                writeln!(f, "{pad}}}")?;
            }
        }
    }
    Ok(())
}

/// Canonical source text; parsing it gives back an equal spec.
impl fmt::Display for SequenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if !self.channels.is_empty() {
            writeln!(f, "channels {}", self.channels.join(", "))?;
        }
        for s in &self.sweeps {
            write!(f, "sweep {} = ", s.name)?;
            match &s.values {
                SweepValues::Range { start, stop, step } => {
                    fmt_ns(f, *start)?;
                    f.write_str(" .. ")?;
                    fmt_ns(f, *stop)?;
                    f.write_str(" step ")?;
                    fmt_ns(f, *step)?;
                }
                SweepValues::List(v) => {
                    f.write_str("[")?;
                    for (i, x) in v.iter().enumerate() {
                        if i > 0 {
                            f.write_str(", ")?;
                        }
                        fmt_ns(f, *x)?;
                    }
                    f.write_str("]")?;
                }
            }
            writeln!(f)?;
        }
        fmt_statements(f, &self.body, 0)
    }
}
