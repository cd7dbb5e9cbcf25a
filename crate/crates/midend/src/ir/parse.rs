//! Line-oriented parser for the textual IR grammar. `#` starts a comment.

use super::*;
use std::collections::{HashMap, HashSet};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at line {}, column {}", self.message, self.line, self.col)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Local(String),  // %name
    At(String),     // @name
    Int(i64),
    Bang,           // !
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Colon,
    Comma,
    Assign,
    Arrow,
    Newline,
}

struct Lexer<'a> {
    src: &'a str,
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    line: usize,
    col: usize,
}

type Spanned = (Tok, usize, usize);

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer { src, chars: src.char_indices().peekable(), line: 1, col: 1 }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError { line: self.line, col: self.col, message: msg.into() })
    }

    fn bump(&mut self) -> Option<(usize, char)> {
        let c = self.chars.next();
        if let Some((_, ch)) = c {
            if ch == '\n' {
                self.line += 1;
                self.col = 1;
            } else {
                self.col += 1;
            }
        }
        c
    }

    fn read_ident(&mut self, start: usize) -> String {
        let mut end = start;
        while let Some(&(i, c)) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                end = i;
                self.bump();
            } else {
                return self.src[start..=end].to_string();
            }
        }
        self.src[start..=end].to_string()
    }

    /// Parse an integer whose text starts at `start` (which may be a '-');
    /// the first digit has already been consumed.
    fn read_int(&mut self, start: usize, first_digit: usize) -> Result<i64, ParseError> {
        let (line, col) = (self.line, self.col);
        let mut end = first_digit;
        while let Some(&(i, c)) = self.chars.peek() {
            if c.is_ascii_digit() {
                end = i;
                self.bump();
            } else {
                break;
            }
        }
        self.src[start..=end]
            .parse::<i64>()
            .map_err(|_| ParseError { line, col, message: "integer literal out of i64 range".into() })
    }

    /// Tokenize the rest of the current line verbatim (metadata payload).
    fn rest_of_line(&mut self) -> String {
        let start = self.chars.peek().map(|&(i, _)| i).unwrap_or(self.src.len());
        let mut end = start;
        while let Some(&(i, c)) = self.chars.peek() {
            if c == '\n' {
                break;
            }
            end = i + c.len_utf8();
            self.bump();
        }
        self.src[start..end].trim().to_string()
    }

    fn tokens(mut self) -> Result<(Vec<Spanned>, Vec<(usize, String)>), ParseError> {
        let mut out = Vec::new();
        let mut meta = Vec::new();
        loop {
            let (line, col) = (self.line, self.col);
            let Some(&(i, c)) = self.chars.peek() else { break };
            match c {
                '\n' => {
                    self.bump();
                    out.push((Tok::Newline, line, col));
                }
                c if c.is_whitespace() => {
                    self.bump();
                }
                '#' => {
                    while let Some(&(_, c)) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                '!' => {
                    // metadata lines are captured whole; `!` must start a line
                    self.bump();
                    let rest = self.rest_of_line();
                    meta.push((out.len(), rest));
                    out.push((Tok::Bang, line, col));
                }
                '(' => {
                    self.bump();
                    out.push((Tok::LParen, line, col));
                }
                ')' => {
                    self.bump();
                    out.push((Tok::RParen, line, col));
                }
                '{' => {
                    self.bump();
                    out.push((Tok::LBrace, line, col));
                }
                '}' => {
                    self.bump();
                    out.push((Tok::RBrace, line, col));
                }
                '[' => {
                    self.bump();
                    out.push((Tok::LBracket, line, col));
                }
                ']' => {
                    self.bump();
                    out.push((Tok::RBracket, line, col));
                }
                ':' => {
                    self.bump();
                    out.push((Tok::Colon, line, col));
                }
                ',' => {
                    self.bump();
                    out.push((Tok::Comma, line, col));
                }
                '=' => {
                    self.bump();
                    out.push((Tok::Assign, line, col));
                }
                '-' => {
                    self.bump();
                    match self.chars.peek() {
                        Some(&(j, d)) if d.is_ascii_digit() => {
                            self.bump();
                            let v = self.read_int(i, j)?;
                            out.push((Tok::Int(v), line, col));
                        }
                        Some(&(_, '>')) => {
                            self.bump();
                            out.push((Tok::Arrow, line, col));
                        }
                        _ => return self.err("expected digit or '>' after '-'"),
                    }
                }
                '%' => {
                    self.bump();
                    match self.chars.peek() {
                        Some(&(j, d)) if d.is_ascii_alphanumeric() || d == '_' => {
                            self.bump();
                            let name = self.read_ident(j);
                            out.push((Tok::Local(name), line, col));
                        }
                        _ => return self.err("expected identifier after '%'"),
                    }
                }
                '@' => {
                    self.bump();
                    match self.chars.peek() {
                        Some(&(j, d)) if d.is_ascii_alphanumeric() || d == '_' => {
                            self.bump();
                            let name = self.read_ident(j);
                            out.push((Tok::At(name), line, col));
                        }
                        _ => return self.err("expected identifier after '@'"),
                    }
                }
                c if c.is_ascii_digit() => {
                    self.bump();
                    let v = self.read_int(i, i)?;
                    out.push((Tok::Int(v), line, col));
                }
                c if c.is_ascii_alphabetic() || c == '_' => {
                    self.bump();
                    let name = self.read_ident(i);
                    out.push((Tok::Ident(name), line, col));
                }
                _ => return self.err(format!("unexpected character '{}'", c)),
            }
        }
        Ok((out, meta))
    }
}

struct Parser {
    toks: Vec<Spanned>,
    meta_payload: HashMap<usize, String>,
    pos: usize,
}

/// Raw operand before @-name resolution.
#[derive(Debug, Clone)]
enum RawOperand {
    Ssa(String),
    Lit(i64),
    AtName(String, usize, usize),
    Label(String),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _, _)| t)
    }

    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|&(_, l, c)| (l, c))
            .unwrap_or((1, 1))
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        let (line, col) = self.here();
        Err(ParseError { line, col, message: msg.into() })
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn skip_newlines(&mut self) {
        while matches!(self.peek(), Some(Tok::Newline)) {
            self.pos += 1;
        }
    }

    fn expect(&mut self, t: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&t) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {}", what))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => self.err(format!("expected {}", what)),
        }
    }

    fn expect_int(&mut self, what: &str) -> Result<i64, ParseError> {
        match self.peek() {
            Some(Tok::Int(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => self.err(format!("expected {}", what)),
        }
    }

    fn parse_type(&mut self) -> Result<TypeTag, ParseError> {
        let t = self.expect_ident("type (i64, i1, or ptr)")?;
        match t.as_str() {
            "i64" => Ok(TypeTag::I64),
            "i1" => Ok(TypeTag::I1),
            "ptr" => Ok(TypeTag::Ptr),
            _ => self.err(format!("unknown type '{}'", t)),
        }
    }

    fn parse_global(&mut self) -> Result<GlobalDef, ParseError> {
        // global @name : i64 [ N ] (= [ v, ... ])?
        let name = match self.next() {
            Some(Tok::At(n)) => n,
            _ => return self.err("expected '@name' after 'global'"),
        };
        self.expect(Tok::Colon, "':'")?;
        let ty = self.parse_type()?;
        if ty != TypeTag::I64 {
            return self.err("globals must have element type i64");
        }
        self.expect(Tok::LBracket, "'['")?;
        let size = self.expect_int("cell count")?;
        if size <= 0 {
            return self.err("global cell count must be positive");
        }
        self.expect(Tok::RBracket, "']'")?;
        let mut init = None;
        if self.peek() == Some(&Tok::Assign) {
            self.pos += 1;
            self.expect(Tok::LBracket, "'['")?;
            let mut vals = vec![self.expect_int("initializer value")?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                vals.push(self.expect_int("initializer value")?);
            }
            self.expect(Tok::RBracket, "']'")?;
            if vals.len() as i64 != size {
                return self.err(format!(
                    "initializer has {} values but global has {} cells",
                    vals.len(),
                    size
                ));
            }
            init = Some(vals);
        }
        Ok(GlobalDef { name, size: size as u64, init })
    }

    fn parse_operand(&mut self) -> Result<RawOperand, ParseError> {
        let (line, col) = self.here();
        match self.next() {
            Some(Tok::Local(n)) => Ok(RawOperand::Ssa(n)),
            Some(Tok::Int(v)) => Ok(RawOperand::Lit(v)),
            Some(Tok::At(n)) => Ok(RawOperand::AtName(n, line, col)),
            Some(Tok::Ident(l)) => Ok(RawOperand::Label(l)),
            _ => self.err("expected operand"),
        }
    }

    fn parse_instr(
        &mut self,
    ) -> Result<(Option<String>, Opcode, Vec<RawOperand>, usize, usize), ParseError> {
        let (line, col) = self.here();
        let result = if let Some(Tok::Local(n)) = self.peek() {
            let n = n.clone();
            self.pos += 1;
            self.expect(Tok::Assign, "'='")?;
            Some(n)
        } else {
            None
        };
        let opname = self.expect_ident("opcode")?;
        let op = match Opcode::from_name(&opname) {
            Some(op) => op,
            None => return self.err(format!("unknown opcode '{}'", opname)),
        };
        let mut operands = Vec::new();
        match op {
            Opcode::Ret => {
                if !matches!(self.peek(), Some(Tok::Newline) | Some(Tok::RBrace) | None) {
                    operands.push(self.parse_operand()?);
                }
            }
            Opcode::Phi => {
                // phi [label: value] (, [label: value])*
                loop {
                    self.expect(Tok::LBracket, "'['")?;
                    let label = self.expect_ident("block label")?;
                    self.expect(Tok::Colon, "':'")?;
                    let v = self.parse_operand()?;
                    self.expect(Tok::RBracket, "']'")?;
                    operands.push(RawOperand::Label(label));
                    operands.push(v);
                    if self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                    } else {
                        break;
                    }
                }
            }
            Opcode::Call | Opcode::Icall => {
                let target = self.parse_operand()?;
                operands.push(target);
                self.expect(Tok::LParen, "'('")?;
                if self.peek() != Some(&Tok::RParen) {
                    operands.push(self.parse_operand()?);
                    while self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                        operands.push(self.parse_operand()?);
                    }
                }
                self.expect(Tok::RParen, "')'")?;
            }
            _ => {
                if !matches!(self.peek(), Some(Tok::Newline) | Some(Tok::RBrace) | None) {
                    operands.push(self.parse_operand()?);
                    while self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                        operands.push(self.parse_operand()?);
                    }
                }
            }
        }
        match self.peek() {
            Some(Tok::Newline) | None => {
                self.skip_newlines();
            }
            Some(Tok::RBrace) => {}
            _ => return self.err("expected end of line after instruction"),
        }
        Ok((result, op, operands, line, col))
    }
}

/// Arity and operand-shape table, enforced at parse time.
fn check_shape(op: Opcode, n: usize) -> Result<(), String> {
    use Opcode::*;
    let ok = match op {
        Add | Sub | Mul | Sdiv | Srem | And | Or | Xor | Shl | Lshr => n == 2,
        Eq | Ne | Slt | Sle | Sgt | Sge => n == 2,
        Select => n == 3,
        Phi => n >= 2 && n % 2 == 0,
        Br => n == 1,
        Brcond => n == 3,
        Alloca => n == 1,
        Gep => n == 2,
        Load => n == 1,
        Store => n == 2,
        Call | Icall => n >= 1,
        Funcptr => n == 1,
        Print => n == 1,
        Ret => n <= 1,
    };
    if ok {
        Ok(())
    } else {
        Err(format!("wrong operand count for '{}'", op.name()))
    }
}

/// Parse a module from source text. Entity ids are assigned in textual order;
/// metadata entries are preserved in order.
pub fn parse_module(text: &str) -> Result<ModuleIR, ParseError> {
    parse_module_impl(text, false)
}

/// Like [`parse_module`], but `@name` references that are not declared in
/// this module resolve by position (callee/funcptr slots become function
/// references, everything else a global). Used by the linker, where symbols
/// may live in a different input.
pub fn parse_module_lenient(text: &str) -> Result<ModuleIR, ParseError> {
    parse_module_impl(text, true)
}

fn parse_module_impl(text: &str, lenient: bool) -> Result<ModuleIR, ParseError> {
    let (toks, meta_lines) = Lexer::new(text).tokens()?;
    let mut meta_payload = HashMap::new();
    for (tok_idx, payload) in meta_lines {
        meta_payload.insert(tok_idx, payload);
    }
    let mut p = Parser { toks, meta_payload, pos: 0 };

    let mut module = ModuleIR::default();
    // raw instruction stream per function, resolved after all decls are known
    let mut raw_funcs: Vec<Vec<(usize, usize, Vec<RawOperand>, usize, usize)>> = Vec::new();

    p.skip_newlines();
    while let Some(tok) = p.peek() {
        match tok {
            Tok::Bang => {
                let payload = p.meta_payload.get(&p.pos).cloned().unwrap_or_default();
                let (line, col) = p.here();
                p.pos += 1;
                // skip the newline that terminated the metadata line
                let (key, text) = match payload.split_once(char::is_whitespace) {
                    Some((k, t)) => (k.to_string(), t.trim().to_string()),
                    None if !payload.is_empty() => (payload, String::new()),
                    None => {
                        return Err(ParseError {
                            line,
                            col,
                            message: "expected metadata key after '!'".into(),
                        })
                    }
                };
                module.metadata.push(MetaEntry { key, text });
                p.skip_newlines();
            }
            Tok::Ident(kw) if kw == "global" => {
                p.pos += 1;
                let g = p.parse_global()?;
                if module.globals.iter().any(|x| x.name == g.name) {
                    return p.err(format!("duplicate global '@{}'", g.name));
                }
                module.globals.push(g);
                p.skip_newlines();
            }
            Tok::Ident(kw) if kw == "func" => {
                p.pos += 1;
                let name = match p.next() {
                    Some(Tok::At(n)) => n,
                    _ => return p.err("expected '@name' after 'func'"),
                };
                if module.functions.iter().any(|f| f.name == name) {
                    return p.err(format!("duplicate function '@{}'", name));
                }
                p.expect(Tok::LParen, "'('")?;
                let mut params = Vec::new();
                if p.peek() != Some(&Tok::RParen) {
                    loop {
                        let pname = match p.next() {
                            Some(Tok::Local(n)) => n,
                            _ => return p.err("expected '%name' parameter"),
                        };
                        p.expect(Tok::Colon, "':'")?;
                        let ty = p.parse_type()?;
                        if params.iter().any(|(n, _)| *n == pname) {
                            return p.err(format!("duplicate parameter '%{}'", pname));
                        }
                        params.push((pname, ty));
                        if p.peek() == Some(&Tok::Comma) {
                            p.pos += 1;
                        } else {
                            break;
                        }
                    }
                }
                p.expect(Tok::RParen, "')'")?;
                p.expect(Tok::Arrow, "'->'")?;
                let ret = match p.peek() {
                    Some(Tok::Ident(t)) if t == "void" => {
                        p.pos += 1;
                        None
                    }
                    _ => Some(p.parse_type()?),
                };
                p.expect(Tok::LBrace, "'{'")?;
                p.skip_newlines();

                let mut blocks: Vec<BasicBlock> = Vec::new();
                let mut raw: Vec<(usize, usize, Vec<RawOperand>, usize, usize)> = Vec::new();
                while p.peek() != Some(&Tok::RBrace) {
                    // LABEL ':'
                    let label = p.expect_ident("block label")?;
                    p.expect(Tok::Colon, "':'")?;
                    p.skip_newlines();
                    if blocks.iter().any(|b| b.label == label) {
                        return p.err(format!("duplicate block label '{}'", label));
                    }
                    let bi = blocks.len();
                    blocks.push(BasicBlock { id: BlockId(0), label, instrs: Vec::new() });
                    loop {
                        match p.peek() {
                            Some(Tok::RBrace) | None => break,
                            Some(Tok::Ident(w)) if Opcode::from_name(w).is_none() => break, // next label
                            Some(_) => {
                                let (result, op, rawops, line, col) = p.parse_instr()?;
                                if let Err(msg) = check_shape(op, rawops.len()) {
                                    return Err(ParseError { line, col, message: msg });
                                }
                                if result.is_some() && !op.may_have_result() {
                                    return Err(ParseError {
                                        line,
                                        col,
                                        message: format!("'{}' cannot define a value", op.name()),
                                    });
                                }
                                let ii = blocks[bi].instrs.len();
                                blocks[bi].instrs.push(Instruction {
                                    id: InstrId(0),
                                    op,
                                    result,
                                    operands: Vec::new(),
                                });
                                raw.push((bi, ii, rawops, line, col));
                            }
                        }
                    }
                    if blocks[bi].instrs.is_empty() {
                        return p.err("empty basic block");
                    }
                }
                p.expect(Tok::RBrace, "'}'")?;
                p.skip_newlines();
                if blocks.is_empty() {
                    return Err(ParseError {
                        line: 1,
                        col: 1,
                        message: format!("function '@{}' has no blocks", name),
                    });
                }
                module.functions.push(FunctionIR { id: FuncId(0), name, params, ret, blocks });
                raw_funcs.push(raw);
            }
            Tok::Newline => p.skip_newlines(),
            _ => return p.err("expected 'global', 'func', or metadata line"),
        }
    }

    // Resolve operands now that all globals and functions are declared.
    let global_names: HashSet<String> = module.globals.iter().map(|g| g.name.clone()).collect();
    let func_names: HashSet<String> = module.functions.iter().map(|f| f.name.clone()).collect();
    for (fi, raw) in raw_funcs.into_iter().enumerate() {
        let f = &module.functions[fi];
        let mut defined: HashSet<String> = f.params.iter().map(|(n, _)| n.clone()).collect();
        let labels: HashSet<String> = f.blocks.iter().map(|b| b.label.clone()).collect();
        for (bi, ii, _, line, col) in &raw {
            if let Some(r) = &f.blocks[*bi].instrs[*ii].result {
                if !defined.insert(r.clone()) {
                    return Err(ParseError {
                        line: *line,
                        col: *col,
                        message: format!("duplicate definition of '%{}' in '@{}'", r, f.name),
                    });
                }
            }
        }
        let f = &mut module.functions[fi];
        for (bi, ii, rawops, line, col) in raw {
            let op = f.blocks[bi].instrs[ii].op;
            let mut resolved = Vec::with_capacity(rawops.len());
            for (k, ro) in rawops.into_iter().enumerate() {
                let v = match ro {
                    RawOperand::Ssa(n) => {
                        if !defined.contains(&n) {
                            return Err(ParseError {
                                line,
                                col,
                                message: format!("unknown identifier '%{}'", n),
                            });
                        }
                        ValueRef::Ssa(n)
                    }
                    RawOperand::Lit(v) => ValueRef::Lit(v),
                    RawOperand::AtName(n, l, c) => {
                        let callee_pos = matches!(op, Opcode::Call | Opcode::Icall) && k == 0;
                        let funcptr_pos = op == Opcode::Funcptr;
                        if (callee_pos || funcptr_pos) && func_names.contains(&n) {
                            ValueRef::Func(n)
                        } else if global_names.contains(&n) {
                            ValueRef::Global(n)
                        } else if func_names.contains(&n) {
                            ValueRef::Func(n)
                        } else if lenient {
                            if callee_pos || funcptr_pos {
                                ValueRef::Func(n)
                            } else {
                                ValueRef::Global(n)
                            }
                        } else {
                            return Err(ParseError {
                                line: l,
                                col: c,
                                message: format!("unknown identifier '@{}'", n),
                            });
                        }
                    }
                    RawOperand::Label(n) => {
                        let is_label_pos = match op {
                            Opcode::Br => true,
                            Opcode::Brcond => k >= 1,
                            Opcode::Phi => k % 2 == 0,
                            _ => false,
                        };
                        if !is_label_pos {
                            return Err(ParseError {
                                line,
                                col,
                                message: format!("bare identifier '{}' is not a valid operand here", n),
                            });
                        }
                        if !labels.contains(&n) {
                            return Err(ParseError {
                                line,
                                col,
                                message: format!("unknown block label '{}'", n),
                            });
                        }
                        ValueRef::Label(n)
                    }
                };
                resolved.push(v);
            }
            // label positions must actually hold labels
            let need_label: &[usize] = match op {
                Opcode::Br => &[0],
                Opcode::Brcond => &[1, 2],
                _ => &[],
            };
            for &k in need_label {
                if !matches!(resolved.get(k), Some(ValueRef::Label(_))) {
                    return Err(ParseError {
                        line,
                        col,
                        message: format!("operand {} of '{}' must be a block label", k + 1, op.name()),
                    });
                }
            }
            f.blocks[bi].instrs[ii].operands = resolved;
        }
    }

    assign_ids(&mut module);
    Ok(module)
}
