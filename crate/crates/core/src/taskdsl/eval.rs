use std::cmp::Ordering;

use super::ast::{CmpOp, FieldPath, Record, TaskExpr, Value};
use super::EvalError;

/// Evaluates `expr` against `input`.
///
/// A record input drives per-record constructs (paths, comparisons,
/// `exists`); a list input drives the aggregates `count`, `sum` and `mean`,
/// which fold over its records in order.
pub fn eval(expr: &TaskExpr, input: &Value) -> Result<Value, EvalError> {
    match expr {
        TaskExpr::Literal(lit) => Ok(lit.to_value()),
        TaskExpr::Path(path) => resolve(path, scope_record(input, "field access")?).cloned(),
        TaskExpr::Compare { op, lhs, rhs } => {
            let a = eval(lhs, input)?;
            let b = eval(rhs, input)?;
            compare(*op, &a, &b).map(Value::Bool)
        }
        TaskExpr::And(a, b) => Ok(Value::Bool(truthy(a, input, "and")? && truthy(b, input, "and")?)),
        TaskExpr::Or(a, b) => Ok(Value::Bool(truthy(a, input, "or")? || truthy(b, input, "or")?)),
        TaskExpr::Not(e) => Ok(Value::Bool(!truthy(e, input, "not")?)),
        TaskExpr::Exists { list, pred } => {
            let record = scope_record(input, "exists")?;
            let items = match resolve(list, record)? {
                Value::List(items) => items,
                other => return Err(mismatch("exists", [other.tag()])),
            };
            for item in items {
                if eval_on_record(pred, item, "exists")? {
                    return Ok(Value::Bool(true));
                }
            }
            Ok(Value::Bool(false))
        }
        TaskExpr::Count(pred) => {
            let mut n = 0i64;
            for r in scope_list(input, "count")? {
                if eval_on_record(pred, r, "count")? {
                    n += 1;
                }
            }
            Ok(Value::Int(n))
        }
        TaskExpr::Sum { field, lo, hi } => {
            let (sum, _) = clipped_sum(field, *lo, *hi, scope_list(input, "sum")?)?;
            Ok(Value::Float(sum))
        }
        TaskExpr::Mean { field, lo, hi } => {
            let records = scope_list(input, "mean")?;
            if records.is_empty() {
                return Err(EvalError::EmptyAggregate("mean".into()));
            }
            let (sum, n) = clipped_sum(field, *lo, *hi, records)?;
            Ok(Value::Float(sum / n as f64))
        }
    }
}

/// Evaluates a predicate on one record, requiring a boolean result.
pub fn eval_predicate(expr: &TaskExpr, record: &Record) -> Result<bool, EvalError> {
    eval_on_record(expr, record, "predicate")
}

/// Left-to-right sum of `field` over `records`, each value clipped to
/// `[lo, hi]` first. Returns the sum and the number of records.
pub fn clipped_sum(field: &FieldPath, lo: f64, hi: f64, records: &[Record]) -> Result<(f64, usize), EvalError> {
    let mut sum = 0.0f64;
    for r in records {
        let v = match resolve(field, r)? {
            Value::Int(i) => *i as f64,
            Value::Float(f) => *f,
            other => return Err(mismatch("sum", [other.tag()])),
        };
        sum += v.clamp(lo, hi);
    }
    Ok((sum, records.len()))
}

fn eval_on_record(expr: &TaskExpr, record: &Record, op: &str) -> Result<bool, EvalError> {
    // Cloning the record into a Value keeps eval's single entry point; task
    // records are small.
    match eval(expr, &Value::Record(record.clone()))? {
        Value::Bool(b) => Ok(b),
        other => Err(mismatch(op, [other.tag()])),
    }
}

fn truthy(expr: &TaskExpr, input: &Value, op: &str) -> Result<bool, EvalError> {
    match eval(expr, input)? {
        Value::Bool(b) => Ok(b),
        other => Err(mismatch(op, [other.tag()])),
    }
}

fn scope_record<'a>(input: &'a Value, op: &str) -> Result<&'a Record, EvalError> {
    match input {
        Value::Record(r) => Ok(r),
        other => Err(mismatch(op, [other.tag()])),
    }
}

fn scope_list<'a>(input: &'a Value, op: &str) -> Result<&'a [Record], EvalError> {
    match input {
        Value::List(items) => Ok(items),
        other => Err(mismatch(op, [other.tag()])),
    }
}

pub fn resolve<'a>(path: &FieldPath, record: &'a Record) -> Result<&'a Value, EvalError> {
    let missing = || EvalError::MissingField(path.to_string());
    let (first, rest) = path.0.split_first().ok_or_else(missing)?;
    let mut cur = record.get(first).ok_or_else(missing)?;
    for part in rest {
        cur = match cur {
            Value::Record(r) => r.get(part).ok_or_else(missing)?,
            _ => return Err(missing()),
        };
    }
    Ok(cur)
}

fn compare(op: CmpOp, a: &Value, b: &Value) -> Result<bool, EvalError> {
    let ord = match (a, b) {
        (Value::Int(x), Value::Int(y)) => Some(x.cmp(y)),
        (Value::Float(x), Value::Float(y)) => x.partial_cmp(y),
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        _ => return Err(mismatch(op.symbol(), [a.tag(), b.tag()])),
    };
    // NaN compares unequal to everything
    let Some(ord) = ord else {
        return Ok(op == CmpOp::Ne);
    };
    Ok(match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    })
}

fn mismatch<const N: usize>(op: &str, tags: [&str; N]) -> EvalError {
    EvalError::TypeMismatch { op: op.to_string(), tags: tags.join(", ") }
}
