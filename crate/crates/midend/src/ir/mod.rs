//! The SSA mini-IR: module/function/block/instruction types, deterministic
//! entity ids, textual grammar (parser + printer), verifier, and dominators.
//!
//! Entity ids are assigned by a single textual-order traversal of the module,
//! so two parses of the same text produce identical ids and ids survive a
//! print/parse round trip. Any structural edit must call [`assign_ids`] again.

mod dom;
mod parse;
mod print;
mod verify;

pub use dom::{compute_dominators, Cfg, Direction, DominatorInfo};
pub use parse::{parse_module, parse_module_lenient, ParseError};
pub use print::{instr_to_string, print_module};
pub use verify::{verify_module, Diagnostic, TypeInfo};

use std::collections::HashMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstrId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LoopId(pub u32);

impl fmt::Display for InstrId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}
impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{}", self.0)
    }
}
impl fmt::Display for FuncId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "f{}", self.0)
    }
}
impl fmt::Display for LoopId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

/// Deterministic identity of any IR entity, used by diagnostics and metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityId {
    Instr(InstrId),
    Block(BlockId),
    Func(FuncId),
    Loop(LoopId),
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityId::Instr(i) => write!(f, "instr {}", i),
            EntityId::Block(b) => write!(f, "block {}", b),
            EntityId::Func(x) => write!(f, "func {}", x),
            EntityId::Loop(l) => write!(f, "loop {}", l),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TypeTag {
    I64,
    I1,
    Ptr,
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TypeTag::I64 => "i64",
            TypeTag::I1 => "i1",
            TypeTag::Ptr => "ptr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Opcode {
    Add,
    Sub,
    Mul,
    Sdiv,
    Srem,
    And,
    Or,
    Xor,
    Shl,
    Lshr,
    Eq,
    Ne,
    Slt,
    Sle,
    Sgt,
    Sge,
    Select,
    Phi,
    Br,
    Brcond,
    Alloca,
    Gep,
    Load,
    Store,
    Call,
    Icall,
    Funcptr,
    Print,
    Ret,
}

impl Opcode {
    pub fn name(self) -> &'static str {
        use Opcode::*;
        match self {
            Add => "add",
            Sub => "sub",
            Mul => "mul",
            Sdiv => "sdiv",
            Srem => "srem",
            And => "and",
            Or => "or",
            Xor => "xor",
            Shl => "shl",
            Lshr => "lshr",
            Eq => "eq",
            Ne => "ne",
            Slt => "slt",
            Sle => "sle",
            Sgt => "sgt",
            Sge => "sge",
            Select => "select",
            Phi => "phi",
            Br => "br",
            Brcond => "brcond",
            Alloca => "alloca",
            Gep => "gep",
            Load => "load",
            Store => "store",
            Call => "call",
            Icall => "icall",
            Funcptr => "funcptr",
            Print => "print",
            Ret => "ret",
        }
    }

    pub fn from_name(s: &str) -> Option<Opcode> {
        use Opcode::*;
        Some(match s {
            "add" => Add,
            "sub" => Sub,
            "mul" => Mul,
            "sdiv" => Sdiv,
            "srem" => Srem,
            "and" => And,
            "or" => Or,
            "xor" => Xor,
            "shl" => Shl,
            "lshr" => Lshr,
            "eq" => Eq,
            "ne" => Ne,
            "slt" => Slt,
            "sle" => Sle,
            "sgt" => Sgt,
            "sge" => Sge,
            "select" => Select,
            "phi" => Phi,
            "br" => Br,
            "brcond" => Brcond,
            "alloca" => Alloca,
            "gep" => Gep,
            "load" => Load,
            "store" => Store,
            "call" => Call,
            "icall" => Icall,
            "funcptr" => Funcptr,
            "print" => Print,
            "ret" => Ret,
            _ => return None,
        })
    }

    pub fn is_terminator(self) -> bool {
        matches!(self, Opcode::Br | Opcode::Brcond | Opcode::Ret)
    }

    pub fn is_arith(self) -> bool {
        use Opcode::*;
        matches!(self, Add | Sub | Mul | Sdiv | Srem | And | Or | Xor | Shl | Lshr)
    }

    pub fn is_cmp(self) -> bool {
        use Opcode::*;
        matches!(self, Eq | Ne | Slt | Sle | Sgt | Sge)
    }

    /// Whether the opcode may produce a result value. Call/icall results are
    /// optional (void callees); everything else here always defines one.
    pub fn may_have_result(self) -> bool {
        use Opcode::*;
        !matches!(self, Br | Brcond | Store | Print | Ret)
    }

    /// Whether the opcode may read or write memory.
    pub fn touches_memory(self) -> bool {
        matches!(self, Opcode::Load | Opcode::Store | Opcode::Call | Opcode::Icall)
    }
}

/// An operand position: SSA name, integer literal, global, block label, or
/// function name. Labels appear in br/brcond/phi; function names in
/// call/funcptr position.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ValueRef {
    Ssa(String),
    Lit(i64),
    Global(String),
    Label(String),
    Func(String),
}

impl ValueRef {
    pub fn as_ssa(&self) -> Option<&str> {
        match self {
            ValueRef::Ssa(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ValueRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValueRef::Ssa(s) => write!(f, "%{}", s),
            ValueRef::Lit(n) => write!(f, "{}", n),
            ValueRef::Global(g) => write!(f, "@{}", g),
            ValueRef::Label(l) => write!(f, "{}", l),
            ValueRef::Func(g) => write!(f, "@{}", g),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instruction {
    pub id: InstrId,
    pub op: Opcode,
    /// Result SSA name, when the instruction defines a value.
    pub result: Option<String>,
    pub operands: Vec<ValueRef>,
}

impl Instruction {
    /// Phi arms as (incoming label, value) pairs.
    pub fn phi_arms(&self) -> impl Iterator<Item = (&str, &ValueRef)> {
        debug_assert_eq!(self.op, Opcode::Phi);
        self.operands.chunks(2).map(|c| match &c[0] {
            ValueRef::Label(l) => (l.as_str(), &c[1]),
            _ => panic!("malformed phi"),
        })
    }

    /// Value operands (everything except labels and direct callee names).
    pub fn value_operands(&self) -> Vec<&ValueRef> {
        match self.op {
            Opcode::Phi => self.phi_arms().map(|(_, v)| v).collect(),
            Opcode::Call => self.operands[1..].iter().collect(),
            Opcode::Funcptr => Vec::new(),
            Opcode::Brcond => vec![&self.operands[0]],
            Opcode::Br => Vec::new(),
            _ => self.operands.iter().collect(),
        }
    }

    /// SSA names this instruction reads.
    pub fn uses(&self) -> Vec<&str> {
        self.value_operands()
            .into_iter()
            .filter_map(|v| v.as_ssa())
            .collect()
    }

    /// For a direct call, the callee name.
    pub fn callee(&self) -> Option<&str> {
        match (self.op, self.operands.first()) {
            (Opcode::Call, Some(ValueRef::Func(f))) => Some(f),
            _ => None,
        }
    }

    /// Address operand of a load/store/gep/icall.
    pub fn addr_operand(&self) -> Option<&ValueRef> {
        match self.op {
            Opcode::Load | Opcode::Gep | Opcode::Icall => self.operands.first(),
            Opcode::Store => self.operands.get(1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: BlockId,
    pub label: String,
    pub instrs: Vec<Instruction>,
}

impl BasicBlock {
    pub fn terminator(&self) -> &Instruction {
        self.instrs.last().expect("empty block")
    }

    /// Labels of successor blocks, in branch order.
    pub fn successor_labels(&self) -> Vec<&str> {
        let t = self.terminator();
        match t.op {
            Opcode::Br => vec![match &t.operands[0] {
                ValueRef::Label(l) => l.as_str(),
                _ => panic!("malformed br"),
            }],
            Opcode::Brcond => t.operands[1..]
                .iter()
                .map(|o| match o {
                    ValueRef::Label(l) => l.as_str(),
                    _ => panic!("malformed brcond"),
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Param<'a> {
    pub name: &'a str,
    pub ty: TypeTag,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionIR {
    pub id: FuncId,
    pub name: String,
    /// (name, type) pairs.
    pub params: Vec<(String, TypeTag)>,
    /// None means void.
    pub ret: Option<TypeTag>,
    pub blocks: Vec<BasicBlock>,
}

impl FunctionIR {
    pub fn block_index(&self, label: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b.label == label)
    }

    /// Where a value name is defined within this function.
    pub fn def_site(&self, name: &str) -> Option<DefSite> {
        if let Some(pos) = self.params.iter().position(|(p, _)| p == name) {
            return Some(DefSite::Param(pos));
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            for (ii, ins) in b.instrs.iter().enumerate() {
                if ins.result.as_deref() == Some(name) {
                    return Some(DefSite::Instr { block: bi, pos: ii, id: ins.id });
                }
            }
        }
        None
    }

    pub fn instrs(&self) -> impl Iterator<Item = &Instruction> {
        self.blocks.iter().flat_map(|b| b.instrs.iter())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DefSite {
    Param(usize),
    Instr { block: usize, pos: usize, id: InstrId },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDef {
    pub name: String,
    /// Number of i64 cells.
    pub size: u64,
    /// Optional initializer; when present its length equals `size`.
    pub init: Option<Vec<i64>>,
}

/// Ordered metadata entry: a `!key text` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaEntry {
    pub key: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModuleIR {
    pub globals: Vec<GlobalDef>,
    pub functions: Vec<FunctionIR>,
    pub metadata: Vec<MetaEntry>,
}

impl ModuleIR {
    pub fn function(&self, name: &str) -> Option<&FunctionIR> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn function_mut(&mut self, name: &str) -> Option<&mut FunctionIR> {
        self.functions.iter_mut().find(|f| f.name == name)
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDef> {
        self.globals.iter().find(|g| g.name == name)
    }

    pub fn instr_count(&self) -> usize {
        self.functions.iter().map(|f| f.instrs().count()).sum()
    }

    pub fn block_count(&self) -> usize {
        self.functions.iter().map(|f| f.blocks.len()).sum()
    }

    /// Look up an instruction by id. Linear in module size; fine for tooling,
    /// use [`ModuleIndex`] in hot paths.
    pub fn instr(&self, id: InstrId) -> Option<&Instruction> {
        self.functions
            .iter()
            .flat_map(|f| f.instrs())
            .find(|i| i.id == id)
    }

    /// Append metadata, replacing existing entries with the same key first
    /// when `replace` is set.
    pub fn set_metadata(&mut self, key: &str, lines: Vec<String>, replace: bool) {
        if replace {
            self.metadata.retain(|m| m.key != key);
        }
        for text in lines {
            self.metadata.push(MetaEntry { key: key.to_string(), text });
        }
    }

    pub fn metadata_values<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> {
        self.metadata
            .iter()
            .filter(move |m| m.key == key)
            .map(|m| m.text.as_str())
    }
}

/// Re-assign all entity ids by a single textual-order traversal. Must be
/// called after any structural edit (the parser calls it implicitly).
pub fn assign_ids(m: &mut ModuleIR) {
    let mut next_instr = 0u32;
    let mut next_block = 0u32;
    for (fi, f) in m.functions.iter_mut().enumerate() {
        f.id = FuncId(fi as u32);
        for b in &mut f.blocks {
            b.id = BlockId(next_block);
            next_block += 1;
            for ins in &mut b.instrs {
                ins.id = InstrId(next_instr);
                next_instr += 1;
            }
        }
    }
}

/// Positional lookup tables over a module, built once per analysis pass.
pub struct ModuleIndex<'m> {
    pub module: &'m ModuleIR,
    instr_home: HashMap<InstrId, (usize, usize, usize)>,
    block_home: HashMap<BlockId, (usize, usize)>,
    func_by_name: HashMap<&'m str, usize>,
}

impl<'m> ModuleIndex<'m> {
    pub fn new(m: &'m ModuleIR) -> Self {
        let mut instr_home = HashMap::new();
        let mut block_home = HashMap::new();
        let mut func_by_name = HashMap::new();
        for (fi, f) in m.functions.iter().enumerate() {
            func_by_name.insert(f.name.as_str(), fi);
            for (bi, b) in f.blocks.iter().enumerate() {
                block_home.insert(b.id, (fi, bi));
                for (ii, ins) in b.instrs.iter().enumerate() {
                    instr_home.insert(ins.id, (fi, bi, ii));
                }
            }
        }
        ModuleIndex { module: m, instr_home, block_home, func_by_name }
    }

    /// (function index, block index, position in block) of an instruction.
    pub fn home(&self, id: InstrId) -> (usize, usize, usize) {
        self.instr_home[&id]
    }

    pub fn try_home(&self, id: InstrId) -> Option<(usize, usize, usize)> {
        self.instr_home.get(&id).copied()
    }

    pub fn instr(&self, id: InstrId) -> &'m Instruction {
        let (fi, bi, ii) = self.home(id);
        &self.module.functions[fi].blocks[bi].instrs[ii]
    }

    pub fn block_home(&self, id: BlockId) -> (usize, usize) {
        self.block_home[&id]
    }

    pub fn func_index(&self, name: &str) -> Option<usize> {
        self.func_by_name.get(name).copied()
    }

    pub fn func_of_instr(&self, id: InstrId) -> &'m FunctionIR {
        &self.module.functions[self.home(id).0]
    }

    pub fn block_of_instr(&self, id: InstrId) -> BlockId {
        let (fi, bi, _) = self.home(id);
        self.module.functions[fi].blocks[bi].id
    }
}
