use std::collections::HashMap;

use crate::circuit::{VarId, Variable};

use super::{Formula, LinearConstraint, LogicError, Relation, Statement, Term};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    LParen,
    RParen,
    Star,
    Plus,
    Minus,
    Amp,
    Bar,
    Tilde,
    Rel(Relation),
}

struct Lexed {
    tok: Tok,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> LogicError {
    LogicError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn lex(src: &str, line: usize) -> Result<Vec<Lexed>, LogicError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let single = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '*' => Some(Tok::Star),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '&' => Some(Tok::Amp),
            '|' => Some(Tok::Bar),
            '~' => Some(Tok::Tilde),
            '=' => Some(Tok::Rel(Relation::Eq)),
            _ => None,
        };
        if let Some(tok) = single {
            out.push(Lexed { tok, col });
            i += 1;
            continue;
        }
        if c == '<' || c == '>' {
            if chars.get(i + 1) != Some(&'=') {
                return Err(syntax(line, col, "strict inequalities are not supported"));
            }
            let rel = if c == '<' { Relation::Le } else { Relation::Ge };
            out.push(Lexed { tok: Tok::Rel(rel), col });
            i += 2;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value: f64 = text
                .parse()
                .map_err(|_| syntax(line, col, format!("malformed number `{text}`")))?;
            out.push(Lexed { tok: Tok::Num(value), col });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '.') {
                i += 1;
            }
            out.push(Lexed {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                col,
            });
            continue;
        }
        return Err(syntax(line, col, format!("unexpected character `{c}`")));
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Lexed>,
    pos: usize,
    line: usize,
    end_col: usize,
    names: &'a HashMap<&'a str, &'a Variable>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn err(&self, message: impl Into<String>) -> LogicError {
        syntax(self.line, self.col(), message)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), LogicError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn statement(&mut self) -> Result<Statement, LogicError> {
        let mut terms = Vec::new();
        let mut sign = match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                -1.0
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                1.0
            }
            _ => 1.0,
        };
        loop {
            terms.push(self.term(sign)?);
            match self.peek() {
                Some(Tok::Plus) => sign = 1.0,
                Some(Tok::Minus) => sign = -1.0,
                _ => break,
            }
            self.pos += 1;
        }
        let relation = match self.bump() {
            Some(Tok::Rel(r)) => r,
            _ => {
                self.pos -= 1;
                return Err(self.err("expected `<=`, `>=` or `=`"));
            }
        };
        let bound_sign = match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                -1.0
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                1.0
            }
            _ => 1.0,
        };
        let bound = match self.bump() {
            Some(Tok::Num(v)) => bound_sign * v,
            _ => {
                self.pos -= 1;
                return Err(self.err("expected a number"));
            }
        };
        if self.peek().is_some() {
            return Err(self.err("unexpected trailing input"));
        }
        if !bound.is_finite() || terms.iter().any(|t| !t.coeff.is_finite()) {
            return Err(syntax(self.line, 1, "numbers must be finite"));
        }
        Ok(Statement {
            terms,
            relation,
            bound,
            line: self.line,
        })
    }

    fn term(&mut self, sign: f64) -> Result<Term, LogicError> {
        let coeff = if let Some(Tok::Num(v)) = self.peek() {
            let v = *v;
            self.pos += 1;
            self.expect(Tok::Star, "`*` after coefficient")?;
            v
        } else {
            1.0
        };
        match self.peek() {
            Some(Tok::Ident(name)) if name == "P" => self.pos += 1,
            _ => return Err(self.err("expected `P(`")),
        }
        self.expect(Tok::LParen, "`(` after P")?;
        let formula = self.formula()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(Term {
            coeff: sign * coeff,
            formula,
        })
    }

    fn formula(&mut self) -> Result<Formula, LogicError> {
        let mut parts = vec![self.conj()?];
        while self.peek() == Some(&Tok::Bar) {
            self.pos += 1;
            parts.push(self.conj()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::Or(parts) })
    }

    fn conj(&mut self) -> Result<Formula, LogicError> {
        let mut parts = vec![self.lit()?];
        while self.peek() == Some(&Tok::Amp) {
            self.pos += 1;
            parts.push(self.lit()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Formula::And(parts) })
    }

    fn lit(&mut self) -> Result<Formula, LogicError> {
        match self.bump() {
            Some(Tok::Tilde) => Ok(Formula::not(self.lit()?)),
            Some(Tok::LParen) => {
                let f = self.formula()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(f)
            }
            Some(Tok::Ident(name)) => match name.as_str() {
                "true" => Ok(Formula::True),
                "false" => Ok(Formula::False),
                _ => self.resolve(&name).map(Formula::Var),
            },
            _ => {
                self.pos -= 1;
                Err(self.err("expected a variable, `~`, `(`, `true` or `false`"))
            }
        }
    }

    fn resolve(&self, name: &str) -> Result<VarId, LogicError> {
        let var = self.names.get(name).ok_or_else(|| LogicError::UnknownVariable {
            name: name.to_string(),
            line: self.line,
        })?;
        if var.arity != 2 {
            return Err(LogicError::NonBooleanVariable {
                name: name.to_string(),
                arity: var.arity,
            });
        }
        Ok(var.id)
    }
}

fn name_map(variables: &[Variable]) -> HashMap<&str, &Variable> {
    variables.iter().map(|v| (v.name.as_str(), v)).collect()
}

fn strip_comment(line: &str) -> &str {
    line.split('#').next().unwrap_or("")
}

/// Statements as written, one per non-blank line; `#` starts a comment.
pub fn parse_statements(text: &str, variables: &[Variable]) -> Result<Vec<Statement>, LogicError> {
    let names = name_map(variables);
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let src = strip_comment(raw);
        if src.trim().is_empty() {
            continue;
        }
        let line = i + 1;
        let toks = lex(src, line)?;
        let mut p = Parser {
            toks,
            pos: 0,
            line,
            end_col: src.chars().count() + 1,
            names: &names,
        };
        out.push(p.statement()?);
    }
    Ok(out)
}

/// Parses and normalizes into `<=` rows.
pub fn parse_constraints(text: &str, variables: &[Variable]) -> Result<Vec<LinearConstraint>, LogicError> {
    Ok(parse_statements(text, variables)?
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.normalize(i))
        .collect())
}

pub fn parse_formula(text: &str, variables: &[Variable]) -> Result<Formula, LogicError> {
    let names = name_map(variables);
    let toks = lex(text, 1)?;
    let mut p = Parser {
        toks,
        pos: 0,
        line: 1,
        end_col: text.chars().count() + 1,
        names: &names,
    };
    let f = p.formula()?;
    if p.peek().is_some() {
        return Err(p.err("unexpected trailing input"));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::super::print_constraints;
    use super::*;
    use proptest::prelude::*;

    fn vars(n: usize) -> Vec<Variable> {
        (0..n).map(|i| Variable::binary(i, format!("x{i}"))).collect()
    }

    #[test]
    fn single_marginal() {
        let cs = parse_constraints("P(x1) <= 0.5", &vars(4)).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].terms.len(), 1);
        assert_eq!(cs[0].terms[0].coeff, 1.0);
        assert_eq!(cs[0].terms[0].formula, Formula::Var(1));
        assert_eq!(cs[0].bound, 0.5);
    }

    #[test]
    fn equality_with_difference() {
        let cs = parse_constraints("0.5*P(x1 & ~x2) - P(x3) = 0.1", &vars(4)).unwrap();
        assert_eq!(cs.len(), 2);
        let f = Formula::And(vec![Formula::Var(1), Formula::not(Formula::Var(2))]);
        assert_eq!(cs[0].terms[0], Term { coeff: 0.5, formula: f.clone() });
        assert_eq!(cs[0].terms[1].coeff, -1.0);
        assert_eq!(cs[0].bound, 0.1);
        assert_eq!(cs[1].terms[0], Term { coeff: -0.5, formula: f });
        assert_eq!(cs[1].terms[1].coeff, 1.0);
        assert_eq!(cs[1].bound, -0.1);
        assert!(cs[1].negated && !cs[0].negated);
    }

    #[test]
    fn ge_is_negated() {
        let cs = parse_constraints("P(x0) >= 0.7", &vars(1)).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].terms[0].coeff, -1.0);
        assert_eq!(cs[0].bound, -0.7);
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = "# header\n\nP(x0) <= 0.2  # trailing\n   \nP(true) = 1\n";
        let st = parse_statements(text, &vars(1)).unwrap();
        assert_eq!(st.len(), 2);
        assert_eq!(st[0].line, 3);
        assert_eq!(st[1].terms[0].formula, Formula::True);
    }

    #[test]
    fn errors_report_position() {
        let v = vars(2);
        match parse_constraints("P(x0) <= 0.5\nP(x0 & ) <= 1", &v) {
            Err(LogicError::Syntax { line: 2, col: 8, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_constraints("P(x0) < 0.5", &v),
            Err(LogicError::Syntax { line: 1, col: 7, .. })
        ));
        assert!(matches!(
            parse_constraints("P(zz) <= 0.5", &v),
            Err(LogicError::UnknownVariable { .. })
        ));
        assert!(matches!(parse_constraints("P(x0) <=", &v), Err(LogicError::Syntax { .. })));
        assert!(matches!(parse_constraints("<= 0.5", &v), Err(LogicError::Syntax { .. })));
        assert!(matches!(parse_constraints("P(x0) <= 0.5 x1", &v), Err(LogicError::Syntax { .. })));
    }

    #[test]
    fn non_boolean_variables_are_rejected() {
        let v = vec![Variable { id: 0, name: "c".into(), arity: 3 }];
        assert!(matches!(
            parse_constraints("P(c) <= 0.5", &v),
            Err(LogicError::NonBooleanVariable { arity: 3, .. })
        ));
    }

    #[test]
    fn disjunction_with_nested_conjunction_matches_truth_table() {
        let cs = parse_constraints("P(x1 | (x2 & ~x1)) <= 0.3", &vars(3)).unwrap();
        let f = &cs[0].terms[0].formula;
        for w in 0..8usize {
            let val = |i: VarId| (w >> i) & 1;
            let expect = val(1) == 1 || val(2) == 1;
            assert_eq!(f.eval(&val), expect, "world {w}");
        }
    }

    #[test]
    fn scientific_notation_and_signed_bound() {
        let cs = parse_constraints("-2.5e-1*P(x0) + P(~(x0 | x1)) <= -1E-3", &vars(2)).unwrap();
        assert_eq!(cs[0].terms[0].coeff, -0.25);
        assert_eq!(cs[0].bound, -0.001);
    }

    fn arb_formula() -> impl Strategy<Value = Formula> {
        let leaf = prop_oneof![
            Just(Formula::True),
            Just(Formula::False),
            (0usize..4).prop_map(Formula::Var),
        ];
        leaf.prop_recursive(4, 24, 4, |inner| {
            prop_oneof![
                inner.clone().prop_map(Formula::not),
                prop::collection::vec(inner.clone(), 2..4).prop_map(Formula::And),
                prop::collection::vec(inner, 2..4).prop_map(Formula::Or),
            ]
        })
    }

    fn arb_constraint() -> impl Strategy<Value = LinearConstraint> {
        let coeff = prop_oneof![Just(1.0), Just(-1.0), -10.0f64..10.0];
        (
            prop::collection::vec((coeff, arb_formula()), 1..4),
            -5.0f64..5.0,
        )
            .prop_map(|(terms, bound)| {
                LinearConstraint::le(
                    terms.into_iter().map(|(coeff, formula)| Term { coeff, formula }).collect(),
                    bound,
                )
            })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(cs in prop::collection::vec(arb_constraint(), 1..5)) {
            let v = vars(4);
            let cs: Vec<_> = cs.into_iter().enumerate().map(|(i, mut c)| { c.source = i; c }).collect();
            let text = print_constraints(&cs, &v);
            let back = parse_constraints(&text, &v).unwrap();
            prop_assert_eq!(&back, &cs);
            prop_assert_eq!(print_constraints(&back, &v), text);
        }
    }
}
