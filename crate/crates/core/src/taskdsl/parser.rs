use super::ast::{FieldPath, Literal, TaskExpr};
use super::lexer::{is_keyword, tokenize, Tok, Token};
use super::SyntaxError;

pub fn parse(source: &str) -> Result<TaskExpr, SyntaxError> {
    let tokens = tokenize(source)?;
    let mut p = Parser { tokens, pos: 0 };
    let expr = p.expr()?;
    let t = p.peek();
    if t.tok != Tok::Eof {
        return Err(p.error_at(t, format!("unexpected {} after expression", t.tok.describe())));
    }
    Ok(expr)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, t: &Token, message: String) -> SyntaxError {
        SyntaxError { line: t.line, column: t.column, message }
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn expect(&mut self, want: Tok, context: &str) -> Result<Token, SyntaxError> {
        if self.peek().tok == want {
            return Ok(self.bump());
        }
        let t = self.peek();
        Err(self.error_at(t, format!("expected {} {context}, found {}", want.describe(), t.tok.describe())))
    }

    fn close_paren(&mut self, open: &Token) -> Result<(), SyntaxError> {
        let context = format!("to close '(' opened at {}:{}", open.line, open.column);
        self.expect(Tok::RParen, &context).map(drop)
    }

    fn expr(&mut self) -> Result<TaskExpr, SyntaxError> {
        let mut lhs = self.and_expr()?;
        while self.is_kw("or") {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = TaskExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<TaskExpr, SyntaxError> {
        let mut lhs = self.not_expr()?;
        while self.is_kw("and") {
            self.bump();
            let rhs = self.not_expr()?;
            lhs = TaskExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<TaskExpr, SyntaxError> {
        if self.is_kw("not") {
            self.bump();
            return Ok(TaskExpr::Not(Box::new(self.cmp()?)));
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<TaskExpr, SyntaxError> {
        let lhs = self.term()?;
        if let Tok::Cmp(op) = self.peek().tok {
            self.bump();
            let rhs = self.term()?;
            return Ok(TaskExpr::Compare { op, lhs: Box::new(lhs), rhs: Box::new(rhs) });
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<TaskExpr, SyntaxError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Int(i) => {
                self.bump();
                Ok(TaskExpr::Literal(Literal::Int(*i)))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(TaskExpr::Literal(Literal::Float(*v)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(TaskExpr::Literal(Literal::Str(s.clone())))
            }
            Tok::LParen => {
                let open = self.bump();
                let inner = self.expr()?;
                self.close_paren(&open)?;
                Ok(inner)
            }
            Tok::Ident(s) => match s.as_str() {
                "true" => {
                    self.bump();
                    Ok(TaskExpr::Literal(Literal::Bool(true)))
                }
                "false" => {
                    self.bump();
                    Ok(TaskExpr::Literal(Literal::Bool(false)))
                }
                "exists" | "count" | "sum" | "mean" => self.aggregate(),
                kw if is_keyword(kw) => Err(self.error_at(&t, format!("unexpected keyword '{kw}'"))),
                _ => Ok(TaskExpr::Path(self.path()?)),
            },
            other => Err(self.error_at(&t, format!("expected a value, found {}", other.describe()))),
        }
    }

    fn aggregate(&mut self) -> Result<TaskExpr, SyntaxError> {
        let name = match self.bump().tok {
            Tok::Ident(s) => s,
            _ => unreachable!("aggregate() called on non-identifier"),
        };
        if self.peek().tok != Tok::LParen {
            let t = self.peek();
            return Err(self.error_at(t, format!("expected '(' after '{name}', found {}", t.tok.describe())));
        }
        let open = self.bump();
        let expr = match name.as_str() {
            "exists" => {
                let list = self.path()?;
                self.expect(Tok::Comma, "after list field")?;
                let pred = self.expr()?;
                TaskExpr::Exists { list, pred: Box::new(pred) }
            }
            "count" => TaskExpr::Count(Box::new(self.expr()?)),
            _ => {
                let field = self.path()?;
                self.expect(Tok::Comma, "after aggregated field")?;
                let lo = self.number()?;
                self.expect(Tok::Comma, "after lower clip bound")?;
                let hi_tok = self.peek().clone();
                let hi = self.number()?;
                if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                    return Err(self.error_at(&hi_tok, format!("clip bounds must satisfy lo < hi, got {lo} and {hi}")));
                }
                if name == "sum" {
                    TaskExpr::Sum { field, lo, hi }
                } else {
                    TaskExpr::Mean { field, lo, hi }
                }
            }
        };
        self.close_paren(&open)?;
        Ok(expr)
    }

    fn number(&mut self) -> Result<f64, SyntaxError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Int(i) => {
                self.bump();
                Ok(*i as f64)
            }
            Tok::Float(v) => {
                self.bump();
                Ok(*v)
            }
            other => Err(self.error_at(&t, format!("expected a number, found {}", other.describe()))),
        }
    }

    fn ident(&mut self) -> Result<String, SyntaxError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Ident(s) if !is_keyword(s) => {
                self.bump();
                Ok(s.clone())
            }
            other => Err(self.error_at(&t, format!("expected a field name, found {}", other.describe()))),
        }
    }

    fn path(&mut self) -> Result<FieldPath, SyntaxError> {
        let mut parts = vec![self.ident()?];
        while self.peek().tok == Tok::Dot {
            self.bump();
            parts.push(self.ident()?);
        }
        Ok(FieldPath(parts))
    }
}
