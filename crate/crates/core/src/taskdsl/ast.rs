use std::collections::BTreeMap;
use std::fmt;

use crate::codec::{Canonical, Decode, DecodeError, Decoder, Encoder};

pub type Record = BTreeMap<String, Value>;

/// Runtime value seen by task code.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    List(Vec<Record>),
    Record(Record),
    /// Fixed-length parameter vector (federated averaging inputs).
    Vector(Vec<f64>),
}

impl Value {
    pub fn tag(&self) -> &'static str {
        match self {
            Value::Int(_) => "int",
            Value::Float(_) => "float",
            Value::Str(_) => "string",
            Value::Bool(_) => "bool",
            Value::List(_) => "list",
            Value::Record(_) => "record",
            Value::Vector(_) => "vector",
        }
    }

    pub fn as_record(&self) -> Option<&Record> {
        match self {
            Value::Record(r) => Some(r),
            _ => None,
        }
    }

    /// Converts a JSON document into a value. `null` and mixed arrays are
    /// rejected; arrays of numbers become vectors, arrays of objects lists.
    pub fn from_json(json: &serde_json::Value) -> Result<Value, String> {
        use serde_json::Value as J;
        Ok(match json {
            J::Null => return Err("null is not a task value".into()),
            J::Bool(b) => Value::Bool(*b),
            J::Number(n) => match n.as_i64() {
                Some(i) => Value::Int(i),
                None => Value::Float(n.as_f64().ok_or("number out of range")?),
            },
            J::String(s) => Value::Str(s.clone()),
            J::Object(map) => Value::Record(record_from_json(map)?),
            J::Array(items) if items.is_empty() => Value::List(Vec::new()),
            J::Array(items) if items.iter().all(J::is_number) => {
                Value::Vector(items.iter().map(|n| n.as_f64().unwrap_or(f64::NAN)).collect())
            }
            J::Array(items) => Value::List(
                items
                    .iter()
                    .map(|item| match item {
                        J::Object(map) => record_from_json(map),
                        _ => Err("arrays must hold only numbers or only objects".to_string()),
                    })
                    .collect::<Result<_, _>>()?,
            ),
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::Value as J;
        match self {
            Value::Int(i) => J::from(*i),
            Value::Float(f) => J::from(*f),
            Value::Str(s) => J::from(s.clone()),
            Value::Bool(b) => J::from(*b),
            Value::List(records) => J::Array(records.iter().map(|r| Value::Record(r.clone()).to_json()).collect()),
            Value::Record(r) => J::Object(r.iter().map(|(k, v)| (k.clone(), v.to_json())).collect()),
            Value::Vector(v) => J::Array(v.iter().map(|f| J::from(*f)).collect()),
        }
    }
}

pub fn record_from_json(map: &serde_json::Map<String, serde_json::Value>) -> Result<Record, String> {
    map.iter().map(|(k, v)| Value::from_json(v).map(|v| (k.clone(), v)).map_err(|e| format!("{k}: {e}"))).collect()
}

impl Canonical for Value {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Value::Int(i) => enc.u8(0).i64(*i),
            Value::Float(f) => enc.u8(1).f64(*f),
            Value::Str(s) => enc.u8(2).str(s),
            Value::Bool(b) => enc.u8(3).bool(*b),
            Value::List(records) => {
                enc.u8(4).u32(records.len() as u32);
                for r in records {
                    encode_record(r, enc);
                }
                enc
            }
            Value::Record(r) => {
                enc.u8(5);
                encode_record(r, enc);
                enc
            }
            Value::Vector(v) => enc.u8(6).list(v),
        };
    }
}

pub fn encode_record(r: &Record, enc: &mut Encoder) {
    enc.u32(r.len() as u32);
    for (k, v) in r {
        enc.str(k).value(v);
    }
}

pub fn decode_record(dec: &mut Decoder<'_>) -> Result<Record, DecodeError> {
    let n = dec.u32()?;
    let mut out = Record::new();
    for _ in 0..n {
        let k = dec.str()?;
        let v = Value::decode(dec)?;
        if out.insert(k.clone(), v).is_some() {
            return Err(DecodeError::Invalid(format!("duplicate field {k}")));
        }
    }
    Ok(out)
}

impl Decode for Value {
    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        Ok(match dec.u8()? {
            0 => Value::Int(dec.i64()?),
            1 => Value::Float(dec.f64()?),
            2 => Value::Str(dec.str()?),
            3 => Value::Bool(dec.bool()?),
            4 => {
                let n = dec.u32()?;
                let mut records = Vec::new();
                for _ in 0..n {
                    records.push(decode_record(dec)?);
                }
                Value::List(records)
            }
            5 => Value::Record(decode_record(dec)?),
            6 => Value::Vector(dec.list()?),
            tag => return Err(DecodeError::InvalidTag { what: "value", tag }),
        })
    }
}

/// Dot-separated field path, e.g. `profile.age`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldPath(pub Vec<String>);

impl FieldPath {
    pub fn parse(s: &str) -> Option<FieldPath> {
        let parts: Vec<String> = s.split('.').map(str::to_owned).collect();
        let ok = parts.iter().all(|p| {
            let mut chars = p.chars();
            matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
                && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
                && !super::lexer::is_keyword(p)
        });
        ok.then_some(FieldPath(parts))
    }
}

impl fmt::Display for FieldPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.join("."))
    }
}

impl Canonical for FieldPath {
    fn encode(&self, enc: &mut Encoder) {
        enc.list(&self.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn tag(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
}

impl Literal {
    pub fn to_value(&self) -> Value {
        match self {
            Literal::Int(i) => Value::Int(*i),
            Literal::Float(f) => Value::Float(*f),
            Literal::Str(s) => Value::Str(s.clone()),
            Literal::Bool(b) => Value::Bool(*b),
        }
    }
}

/// Parsed task program.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskExpr {
    Literal(Literal),
    Path(FieldPath),
    Compare { op: CmpOp, lhs: Box<TaskExpr>, rhs: Box<TaskExpr> },
    And(Box<TaskExpr>, Box<TaskExpr>),
    Or(Box<TaskExpr>, Box<TaskExpr>),
    Not(Box<TaskExpr>),
    Exists { list: FieldPath, pred: Box<TaskExpr> },
    Count(Box<TaskExpr>),
    Sum { field: FieldPath, lo: f64, hi: f64 },
    Mean { field: FieldPath, lo: f64, hi: f64 },
}

/// What a task releases, which fixes the sensitivity the privacy gate uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReleaseShape {
    /// Per-record predicate; the release is the number of matching records.
    Filter,
    Count,
    Sum {
        lo: f64,
        hi: f64,
    },
    Mean {
        lo: f64,
        hi: f64,
    },
    /// No bounded sensitivity can be derived.
    Unbounded,
}

impl TaskExpr {
    pub fn release_shape(&self) -> ReleaseShape {
        let bounded = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && lo < hi;
        match self {
            TaskExpr::Count(_) => ReleaseShape::Count,
            TaskExpr::Sum { lo, hi, .. } if bounded(*lo, *hi) => ReleaseShape::Sum { lo: *lo, hi: *hi },
            TaskExpr::Mean { lo, hi, .. } if bounded(*lo, *hi) => ReleaseShape::Mean { lo: *lo, hi: *hi },
            e if !e.contains_aggregate() => ReleaseShape::Filter,
            _ => ReleaseShape::Unbounded,
        }
    }

    fn contains_aggregate(&self) -> bool {
        match self {
            TaskExpr::Count(_) | TaskExpr::Sum { .. } | TaskExpr::Mean { .. } => true,
            TaskExpr::Literal(_) | TaskExpr::Path(_) => false,
            TaskExpr::Compare { lhs, rhs, .. } => lhs.contains_aggregate() || rhs.contains_aggregate(),
            TaskExpr::And(a, b) | TaskExpr::Or(a, b) => a.contains_aggregate() || b.contains_aggregate(),
            TaskExpr::Not(e) => e.contains_aggregate(),
            TaskExpr::Exists { pred, .. } => pred.contains_aggregate(),
        }
    }

    // Binding strength used by the printer: or < and < not < cmp < term.
    fn level(&self) -> u8 {
        match self {
            TaskExpr::Or(..) => 1,
            TaskExpr::And(..) => 2,
            TaskExpr::Not(_) => 3,
            TaskExpr::Compare { .. } => 4,
            _ => 5,
        }
    }
}

impl Canonical for TaskExpr {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            TaskExpr::Literal(lit) => {
                enc.u8(0x01);
                match lit {
                    Literal::Int(i) => enc.u8(0).i64(*i),
                    Literal::Float(f) => enc.u8(1).f64(*f),
                    Literal::Str(s) => enc.u8(2).str(s),
                    Literal::Bool(b) => enc.u8(3).bool(*b),
                };
            }
            TaskExpr::Path(p) => {
                enc.u8(0x02).value(p);
            }
            TaskExpr::Compare { op, lhs, rhs } => {
                enc.u8(0x03).u8(op.tag()).value(lhs.as_ref()).value(rhs.as_ref());
            }
            TaskExpr::And(a, b) => {
                enc.u8(0x04).value(a.as_ref()).value(b.as_ref());
            }
            TaskExpr::Or(a, b) => {
                enc.u8(0x05).value(a.as_ref()).value(b.as_ref());
            }
            TaskExpr::Not(e) => {
                enc.u8(0x06).value(e.as_ref());
            }
            TaskExpr::Exists { list, pred } => {
                enc.u8(0x07).value(list).value(pred.as_ref());
            }
            TaskExpr::Count(pred) => {
                enc.u8(0x08).value(pred.as_ref());
            }
            TaskExpr::Sum { field, lo, hi } => {
                enc.u8(0x09).value(field).f64(*lo).f64(*hi);
            }
            TaskExpr::Mean { field, lo, hi } => {
                enc.u8(0x0a).value(field).f64(*lo).f64(*hi);
            }
        }
    }
}

fn write_number(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    let s = v.to_string();
    if s.contains('.') {
        f.write_str(&s)
    } else {
        write!(f, "{s}.0")
    }
}

fn write_string(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            '\r' => f.write_str("\\r")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

struct Prec<'a>(&'a TaskExpr, u8);

impl fmt::Display for Prec<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.level() < self.1 {
            write!(f, "({})", self.0)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Canonical source form; reparsing it yields an equal tree.
impl fmt::Display for TaskExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskExpr::Literal(Literal::Int(i)) => write!(f, "{i}"),
            TaskExpr::Literal(Literal::Float(v)) => write_number(f, *v),
            TaskExpr::Literal(Literal::Str(s)) => write_string(f, s),
            TaskExpr::Literal(Literal::Bool(b)) => write!(f, "{b}"),
            TaskExpr::Path(p) => write!(f, "{p}"),
            TaskExpr::Compare { op, lhs, rhs } => {
                write!(f, "{} {} {}", Prec(lhs, 5), op.symbol(), Prec(rhs, 5))
            }
            TaskExpr::And(a, b) => write!(f, "{} and {}", Prec(a, 2), Prec(b, 3)),
            TaskExpr::Or(a, b) => write!(f, "{} or {}", Prec(a, 1), Prec(b, 2)),
            TaskExpr::Not(e) => write!(f, "not {}", Prec(e, 4)),
            TaskExpr::Exists { list, pred } => write!(f, "exists({list}, {pred})"),
            TaskExpr::Count(pred) => write!(f, "count({pred})"),
            TaskExpr::Sum { field, lo, hi } | TaskExpr::Mean { field, lo, hi } => {
                let name = if matches!(self, TaskExpr::Sum { .. }) { "sum" } else { "mean" };
                write!(f, "{name}({field}, ")?;
                write_number(f, *lo)?;
                f.write_str(", ")?;
                write_number(f, *hi)?;
                f.write_str(")")
            }
        }
    }
}
