//! A tiny stateful expression language for the mock kernel.
//!
//! Statements are separated by newlines or `;`. A statement is either
//! `name = expr` or a bare expression; the value of a trailing bare
//! expression is displayed unless it is `None`, as an interactive Python
//! shell would. Values are integers, floats, strings and `None`.
//!
//! Builtins: `print(..)`, `eprint(..)`, `str(x)`, `int(x)`, `len(s)`,
//! `write_file(path, text)`, `read_file(path)`, `sleep(seconds)`,
//! `raise_error(name, message)` and `run_script(path)`, which executes a
//! file's statements in the same namespace.

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

#[derive(Clone, Debug, PartialEq)]
pub enum Val {
    Int(i64),
    Float(f64),
    Str(String),
    None,
}

impl Val {
    /// `repr()`-style rendering used for displayed results.
    pub fn repr(&self) -> String {
        match self {
            Val::Str(s) => format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'").replace('\n', "\\n")),
            other => other.to_string(),
        }
    }

    fn type_name(&self) -> &'static str {
        match self {
            Val::Int(_) => "int",
            Val::Float(_) => "float",
            Val::Str(_) => "str",
            Val::None => "NoneType",
        }
    }
}

impl fmt::Display for Val {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Val::Int(i) => write!(f, "{i}"),
            Val::Float(x) if x.is_finite() && x.fract() == 0.0 && x.abs() < 1e16 => write!(f, "{x:.1}"),
            Val::Float(x) => write!(f, "{x}"),
            Val::Str(s) => f.write_str(s),
            Val::None => f.write_str("None"),
        }
    }
}

/// Python-style exception raised by a statement.
#[derive(Clone, Debug, PartialEq)]
pub struct Raised {
    pub name: String,
    pub message: String,
}

impl Raised {
    fn new(name: &str, message: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            message: message.into(),
        }
    }
}

/// Side effects of one run, in order.
#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    Stdout(String),
    Stderr(String),
}

#[derive(Debug, Default)]
pub struct RunOutcome {
    pub outputs: Vec<Output>,
    pub display: Option<String>,
    pub error: Option<Raised>,
    /// 1-based line of the failing statement.
    pub error_line: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Int(i64),
    Float(f64),
    Str(String),
    Ident(String),
    Op(&'static str),
    Sep,
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, Raised> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    let mut line = 1;
    let syntax = |line: usize, what: &str| Raised::new("SyntaxError", format!("{what} (line {line})"));
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                out.push((Tok::Sep, line));
                line += 1;
                i += 1;
            }
            ';' => {
                out.push((Tok::Sep, line));
                i += 1;
            }
            ' ' | '\t' | '\r' => i += 1,
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '0'..='9' | '.' if c != '.' || chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == '_') {
                    i += 1;
                }
                let text: String = chars[start..i].iter().filter(|c| **c != '_').collect();
                let tok = if text.contains('.') {
                    Tok::Float(text.parse().map_err(|_| syntax(line, "invalid number"))?)
                } else {
                    Tok::Int(text.parse().map_err(|_| syntax(line, "invalid number"))?)
                };
                out.push((tok, line));
            }
            '\'' | '"' => {
                let quote = c;
                i += 1;
                let mut s = String::new();
                loop {
                    let Some(&ch) = chars.get(i) else {
                        return Err(syntax(line, "unterminated string literal"));
                    };
                    i += 1;
                    match ch {
                        '\\' => {
                            let esc = chars.get(i).copied().ok_or_else(|| syntax(line, "bad escape"))?;
                            i += 1;
                            s.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                other => other,
                            });
                        }
                        '\n' => return Err(syntax(line, "unterminated string literal")),
                        ch if ch == quote => break,
                        ch => s.push(ch),
                    }
                }
                out.push((Tok::Str(s), line));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), line));
            }
            _ => {
                let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                let op = match two.as_str() {
                    "//" => "//",
                    _ => match c {
                        '+' => "+",
                        '-' => "-",
                        '*' => "*",
                        '/' => "/",
                        '%' => "%",
                        '(' => "(",
                        ')' => ")",
                        ',' => ",",
                        '=' => "=",
                        _ => return Err(syntax(line, &format!("invalid character '{c}'"))),
                    },
                };
                i += op.len();
                out.push((Tok::Op(op), line));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Expr {
    Lit(Val),
    Name(String),
    Neg(Box<Expr>),
    Bin(&'static str, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

enum Stmt {
    Assign(String, Expr),
    Expr(Expr),
}

struct Parser<'a> {
    toks: &'a [Tok],
    pos: usize,
    line: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn err(&self) -> Raised {
        Raised::new("SyntaxError", format!("invalid syntax (line {})", self.line))
    }

    fn statement(&mut self) -> Result<Stmt, Raised> {
        let stmt = match (self.toks.first(), self.toks.get(1)) {
            (Some(Tok::Ident(name)), Some(Tok::Op("="))) => {
                let name = name.clone();
                self.pos = 2;
                Stmt::Assign(name, self.expr()?)
            }
            _ => Stmt::Expr(self.expr()?),
        };
        if self.pos != self.toks.len() {
            return Err(self.err());
        }
        Ok(stmt)
    }

    fn expr(&mut self) -> Result<Expr, Raised> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(op @ ("+" | "-"))) = self.peek() {
            let op = *op;
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, Raised> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(op @ ("*" | "/" | "//" | "%"))) = self.peek() {
            let op = *op;
            self.pos += 1;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, Raised> {
        if self.peek() == Some(&Tok::Op("-")) {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, Raised> {
        match self.bump().ok_or_else(|| self.err())? {
            Tok::Int(i) => Ok(Expr::Lit(Val::Int(i))),
            Tok::Float(x) => Ok(Expr::Lit(Val::Float(x))),
            Tok::Str(s) => Ok(Expr::Lit(Val::Str(s))),
            Tok::Ident(name) if name == "None" => Ok(Expr::Lit(Val::None)),
            Tok::Ident(name) => {
                if self.peek() != Some(&Tok::Op("(")) {
                    return Ok(Expr::Name(name));
                }
                self.pos += 1;
                let mut args = Vec::new();
                if self.peek() == Some(&Tok::Op(")")) {
                    self.pos += 1;
                    return Ok(Expr::Call(name, args));
                }
                loop {
                    args.push(self.expr()?);
                    match self.bump() {
                        Some(Tok::Op(",")) => continue,
                        Some(Tok::Op(")")) => break,
                        _ => return Err(self.err()),
                    }
                }
                Ok(Expr::Call(name, args))
            }
            Tok::Op("(") => {
                let e = self.expr()?;
                match self.bump() {
                    Some(Tok::Op(")")) => Ok(e),
                    _ => Err(self.err()),
                }
            }
            _ => Err(self.err()),
        }
    }
}

/// Interpreter state that persists across executions.
#[derive(Debug)]
pub struct Interp {
    globals: HashMap<String, Val>,
    cwd: PathBuf,
    depth: usize,
}

impl Interp {
    pub fn new(cwd: PathBuf) -> Self {
        Self {
            globals: HashMap::new(),
            cwd,
            depth: 0,
        }
    }

    pub fn get(&self, name: &str) -> Option<&Val> {
        self.globals.get(name)
    }

    pub fn run(&mut self, src: &str) -> RunOutcome {
        let mut outcome = RunOutcome::default();
        if let Err((e, line)) = self.run_into(src, &mut outcome, true) {
            outcome.error = Some(e);
            outcome.error_line = line;
            outcome.display = None;
        }
        outcome
    }

    fn run_into(&mut self, src: &str, out: &mut RunOutcome, top: bool) -> Result<(), (Raised, usize)> {
        let toks = tokenize(src).map_err(|e| (e, 1))?;
        let mut statements: Vec<(Vec<Tok>, usize)> = Vec::new();
        let mut current = Vec::new();
        let mut start_line = 1;
        for (tok, line) in toks {
            if tok == Tok::Sep {
                if !current.is_empty() {
                    statements.push((std::mem::take(&mut current), start_line));
                }
            } else {
                if current.is_empty() {
                    start_line = line;
                }
                current.push(tok);
            }
        }
        if !current.is_empty() {
            statements.push((current, start_line));
        }
        // Parse everything first: a syntax error anywhere runs nothing.
        let mut parsed = Vec::with_capacity(statements.len());
        for (toks, line) in &statements {
            let mut p = Parser { toks, pos: 0, line: *line };
            parsed.push((p.statement().map_err(|e| (e, *line))?, *line));
        }
        let count = parsed.len();
        for (i, (stmt, line)) in parsed.into_iter().enumerate() {
            match stmt {
                Stmt::Assign(name, e) => {
                    let v = self.eval(&e, out).map_err(|e| (e, line))?;
                    self.globals.insert(name, v);
                }
                Stmt::Expr(e) => {
                    let v = self.eval(&e, out).map_err(|e| (e, line))?;
                    if top && i + 1 == count && v != Val::None {
                        out.display = Some(v.repr());
                    }
                }
            }
        }
        Ok(())
    }

    fn eval(&mut self, e: &Expr, out: &mut RunOutcome) -> Result<Val, Raised> {
        match e {
            Expr::Lit(v) => Ok(v.clone()),
            Expr::Name(n) => self
                .globals
                .get(n)
                .cloned()
                .ok_or_else(|| Raised::new("NameError", format!("name '{n}' is not defined"))),
            Expr::Neg(inner) => match self.eval(inner, out)? {
                Val::Int(i) => Ok(Val::Int(-i)),
                Val::Float(x) => Ok(Val::Float(-x)),
                v => Err(Raised::new(
                    "TypeError",
                    format!("bad operand type for unary -: '{}'", v.type_name()),
                )),
            },
            Expr::Bin(op, a, b) => {
                let a = self.eval(a, out)?;
                let b = self.eval(b, out)?;
                binary(op, a, b)
            }
            Expr::Call(name, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, out)?);
                }
                self.call(name, vals, out)
            }
        }
    }

    fn call(&mut self, name: &str, args: Vec<Val>, out: &mut RunOutcome) -> Result<Val, Raised> {
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(Raised::new(
                    "TypeError",
                    format!("{name}() takes {n} argument(s) ({} given)", args.len()),
                ))
            }
        };
        match name {
            "print" | "eprint" => {
                let text = args.iter().map(Val::to_string).collect::<Vec<_>>().join(" ") + "\n";
                out.outputs.push(if name == "print" {
                    Output::Stdout(text)
                } else {
                    Output::Stderr(text)
                });
                Ok(Val::None)
            }
            "str" => {
                arity(1)?;
                Ok(Val::Str(args[0].to_string()))
            }
            "int" => {
                arity(1)?;
                match &args[0] {
                    Val::Int(i) => Ok(Val::Int(*i)),
                    Val::Float(x) => Ok(Val::Int(x.trunc() as i64)),
                    Val::Str(s) => s.trim().parse().map(Val::Int).map_err(|_| {
                        Raised::new("ValueError", format!("invalid literal for int() with base 10: '{s}'"))
                    }),
                    Val::None => Err(Raised::new("TypeError", "int() argument must be a string or a number, not 'NoneType'")),
                }
            }
            "len" => {
                arity(1)?;
                match &args[0] {
                    Val::Str(s) => Ok(Val::Int(s.chars().count() as i64)),
                    v => Err(Raised::new("TypeError", format!("object of type '{}' has no len()", v.type_name()))),
                }
            }
            "write_file" => {
                arity(2)?;
                let path = self.cwd.join(args[0].to_string());
                std::fs::write(&path, args[1].to_string())
                    .map_err(|e| Raised::new("OSError", e.to_string()))?;
                Ok(Val::None)
            }
            "read_file" => {
                arity(1)?;
                let path = self.cwd.join(args[0].to_string());
                std::fs::read_to_string(&path).map(Val::Str).map_err(|_| {
                    Raised::new(
                        "FileNotFoundError",
                        format!("[Errno 2] No such file or directory: '{}'", args[0]),
                    )
                })
            }
            "sleep" => {
                arity(1)?;
                let secs = match args[0] {
                    Val::Int(i) => i as f64,
                    Val::Float(x) => x,
                    _ => return Err(Raised::new("TypeError", "sleep() needs a number")),
                };
                std::thread::sleep(Duration::from_secs_f64(secs.max(0.0)));
                Ok(Val::None)
            }
            "raise_error" => {
                arity(2)?;
                Err(Raised::new(&args[0].to_string(), args[1].to_string()))
            }
            "run_script" => {
                arity(1)?;
                if self.depth > 8 {
                    return Err(Raised::new("RecursionError", "maximum script depth exceeded"));
                }
                let path = self.cwd.join(args[0].to_string());
                let src = std::fs::read_to_string(&path).map_err(|_| {
                    Raised::new(
                        "FileNotFoundError",
                        format!("[Errno 2] No such file or directory: '{}'", args[0]),
                    )
                })?;
                self.depth += 1;
                let r = self.run_into(&src, out, false);
                self.depth -= 1;
                r.map_err(|(e, _)| e)?;
                Ok(Val::None)
            }
            _ => Err(Raised::new("NameError", format!("name '{name}' is not defined"))),
        }
    }
}

fn binary(op: &str, a: Val, b: Val) -> Result<Val, Raised> {
    use Val::*;
    let type_err = |a: &Val, b: &Val| {
        Raised::new(
            "TypeError",
            format!(
                "unsupported operand type(s) for {op}: '{}' and '{}'",
                a.type_name(),
                b.type_name()
            ),
        )
    };
    let zero = || {
        Raised::new(
            "ZeroDivisionError",
            match op {
                "%" => "integer modulo by zero",
                "//" => "integer division or modulo by zero",
                _ => "division by zero",
            },
        )
    };
    match (op, &a, &b) {
        ("+", Str(x), Str(y)) => Ok(Str(format!("{x}{y}"))),
        ("*", Str(s), Int(n)) | ("*", Int(n), Str(s)) => Ok(Str(s.repeat((*n).max(0) as usize))),
        (_, Int(x), Int(y)) => {
            let (x, y) = (*x, *y);
            match op {
                "+" => x.checked_add(y).map(Int).ok_or_else(overflow),
                "-" => x.checked_sub(y).map(Int).ok_or_else(overflow),
                "*" => x.checked_mul(y).map(Int).ok_or_else(overflow),
                "/" if y == 0 => Err(zero()),
                "/" => Ok(Float(x as f64 / y as f64)),
                "//" | "%" if y == 0 => Err(zero()),
                "//" => Ok(Int(x.div_euclid(y) - if y < 0 && x.rem_euclid(y) != 0 { 1 } else { 0 })),
                "%" => Ok(Int(x - y * (x.div_euclid(y) - if y < 0 && x.rem_euclid(y) != 0 { 1 } else { 0 }))),
                _ => Err(type_err(&a, &b)),
            }
        }
        (_, Int(_) | Float(_), Int(_) | Float(_)) => {
            let f = |v: &Val| match v {
                Int(i) => *i as f64,
                Float(x) => *x,
                _ => unreachable!(),
            };
            let (x, y) = (f(&a), f(&b));
            match op {
                "+" => Ok(Float(x + y)),
                "-" => Ok(Float(x - y)),
                "*" => Ok(Float(x * y)),
                "/" | "//" | "%" if y == 0.0 => Err(Raised::new("ZeroDivisionError", "float division by zero")),
                "/" => Ok(Float(x / y)),
                "//" => Ok(Float((x / y).floor())),
                "%" => Ok(Float(x - y * (x / y).floor())),
                _ => Err(type_err(&a, &b)),
            }
        }
        _ => Err(type_err(&a, &b)),
    }
}

fn overflow() -> Raised {
    Raised::new("OverflowError", "integer overflow")
}
