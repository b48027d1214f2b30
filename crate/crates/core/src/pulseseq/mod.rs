//! A small pulse-sequence language.
//!
//! ```text
//! # PL recovery after a dark interval
//! channels laser
//! sweep tau = 2ns .. 150ns step 2ns
//! block laser on 3000ns
//! block laser off tau
//! block laser on 3000ns
//! ```
//!
//! Every channel runs its own clock: a `block` appends a segment to the named
//! channel only, and all channels start at t = 0 in the off state. Statements end
//! with a newline or `;`. `repeat n { ... }` unrolls its body `n` times.

mod ast;
mod compile;
mod lexer;
mod parser;

pub use ast::{Duration, SequenceSpec, Statement, SweepDecl, SweepValues};
pub use compile::{
    compile, compile_with_resolution, duty_cycle, expand_sweep, expand_sweep_with, Bindings, Edge,
    Timeline, DEFAULT_RESOLUTION_NS,
};
pub use parser::parse;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeqError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("empty pulse sequence")]
    Empty,
    #[error("undeclared channel `{name}` at line {line}, column {col}")]
    UndeclaredChannel { name: String, line: usize, col: usize },
    #[error("undeclared variable `{name}` at line {line}, column {col}")]
    UndeclaredVariable { name: String, line: usize, col: usize },
    #[error("`{name}` declared twice (line {line})")]
    Duplicate { name: String, line: usize },
    #[error("duration must be > 0, got {value} ns at line {line}")]
    NonPositiveDuration { value: f64, line: usize },
    #[error("repeat count must be >= 1 at line {line}")]
    BadRepeat { line: usize },
    #[error("invalid sweep `{name}`: {reason}")]
    BadSweep { name: String, reason: String },
    #[error("variable `{0}` is not bound")]
    Unbound(String),
    #[error("bound variable `{0}` is not a declared sweep")]
    NotASweep(String),
    #[error("variable `{name}` bound to {value} ns; durations must be > 0")]
    BadBinding { name: String, value: f64 },
    #[error("unknown channel `{0}`")]
    UnknownChannel(String),
    #[error("empty sweep value list")]
    EmptyValues,
    #[error("sequence unrolls to more than {0} blocks")]
    TooLarge(usize),
    #[error("resolution must be > 0, got {0}")]
    BadResolution(f64),
}
