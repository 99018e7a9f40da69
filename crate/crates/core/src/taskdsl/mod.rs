//! The task language run inside the sandbox.
//!
//! A closed, side-effect-free expression language: predicates over records,
//! `exists` over nested lists, and clipped `count`/`sum`/`mean` aggregates.
//! It has no I/O constructs, so a task cannot send anything out of the
//! enclave except its return value.
//!
//! ```text
//! expr     := or_expr
//! or_expr  := and_expr { "or" and_expr }
//! and_expr := not_expr { "and" not_expr }
//! not_expr := ["not"] cmp
//! cmp      := term [ ("=="|"!="|"<"|"<="|">"|">=") term ]
//! term     := literal | path | agg | "(" expr ")"
//! agg      := "exists(" path "," expr ")" | "count(" expr ")"
//!           | ("sum"|"mean") "(" path "," number "," number ")"
//! path     := ident { "." ident }
//! literal  := number | string | "true" | "false"
//! ```
//! `#` starts a comment that runs to the end of the line.

mod ast;
mod eval;
mod lexer;
mod parser;

use thiserror::Error;

pub use ast::{decode_record, encode_record, record_from_json, CmpOp, FieldPath, Literal, Record, ReleaseShape, TaskExpr, Value};
pub use eval::{clipped_sum, eval, eval_predicate, resolve};
pub use parser::parse;

use crate::codec::Canonical;
use crate::crypto::{hash, Digest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("syntax error at {line}:{column}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("missing field {0}")]
    MissingField(String),
    #[error("type mismatch in {op}: {tags}")]
    TypeMismatch { op: String, tags: String },
    #[error("{0} over zero records")]
    EmptyAggregate(String),
}

/// Digest of the task's syntax tree; source formatting does not affect it.
pub fn fn_digest(expr: &TaskExpr) -> Digest {
    hash(&expr.to_canonical())
}
