//! The execution core. Modules are resolved into a slot-indexed form once,
//! then run by a frame-stack machine. Memory cells are (tag, value) atomic
//! pairs so transformed task functions can run with true overlap; the plain
//! sequential paths use the same cells with relaxed ordering.

use crate::ir::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::atomic::{AtomicI64, AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Mutex, RwLock};

pub const DEFAULT_STEP_BUDGET: u64 = 10_000_000;
const MAX_CALL_DEPTH: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trap {
    DivByZero,
    OutOfBounds,
    StepBudgetExceeded,
    BadIcall,
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trap::DivByZero => "div-by-zero",
            Trap::OutOfBounds => "out-of-bounds",
            Trap::StepBudgetExceeded => "step-budget-exceeded",
            Trap::BadIcall => "bad-icall",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecResult {
    pub output: Vec<i64>,
    pub exit: i64,
    pub steps: u64,
    pub trap: Option<Trap>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunError {
    NoMain,
    ArityMismatch { expected: usize, got: usize },
    NotResolvable(String),
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::NoMain => write!(f, "module has no '@main'"),
            RunError::ArityMismatch { expected, got } => {
                write!(f, "'@main' takes {} arguments, got {}", expected, got)
            }
            RunError::NotResolvable(m) => write!(f, "module not executable: {}", m),
        }
    }
}

impl std::error::Error for RunError {}

/// A runtime value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Val {
    Int(i64),
    Bool(bool),
    Ptr { obj: usize, off: i64 },
    Fn(usize),
    Undef,
}

/// What a memory cell holds: an integer or a tagged function ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CellVal {
    Int(i64),
    Fn(usize),
}

struct Cell {
    tag: AtomicU8, // 0 = int, 1 = fn
    val: AtomicI64,
}

impl Cell {
    fn zero() -> Cell {
        Cell { tag: AtomicU8::new(0), val: AtomicI64::new(0) }
    }

    fn load(&self) -> CellVal {
        match self.tag.load(Ordering::Relaxed) {
            0 => CellVal::Int(self.val.load(Ordering::Relaxed)),
            _ => CellVal::Fn(self.val.load(Ordering::Relaxed) as usize),
        }
    }

    fn store(&self, v: CellVal) {
        match v {
            CellVal::Int(n) => {
                self.tag.store(0, Ordering::Relaxed);
                self.val.store(n, Ordering::Relaxed);
            }
            CellVal::Fn(i) => {
                self.tag.store(1, Ordering::Relaxed);
                self.val.store(i as i64, Ordering::Relaxed);
            }
        }
    }
}

/// Static site a runtime object was allocated from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjSite {
    Global(usize),
    Alloca(InstrId),
}

pub struct MemObject {
    pub site: ObjSite,
    cells: Box<[Cell]>,
}

impl MemObject {
    pub fn size(&self) -> usize {
        self.cells.len()
    }

    /// Reads a cell as a plain integer (test/debug helper).
    pub fn read_int(&self, off: usize) -> Option<i64> {
        self.cells.get(off).map(|c| match c.load() {
            CellVal::Int(n) => n,
            CellVal::Fn(i) => i as i64,
        })
    }
}

/// The heap: globals first (in module order), then one object per executed
/// alloca. Append-only; cells are atomics so tasks may share it.
pub struct Memory {
    objects: RwLock<Vec<Arc<MemObject>>>,
}

impl Memory {
    pub fn for_module(m: &ModuleIR) -> Memory {
        let mem = Memory { objects: RwLock::new(Vec::new()) };
        for (gi, g) in m.globals.iter().enumerate() {
            let idx = mem.alloc(ObjSite::Global(gi), g.size);
            if let Some(init) = &g.init {
                let objs = mem.objects.read().unwrap();
                for (k, v) in init.iter().enumerate() {
                    objs[idx].cells[k].store(CellVal::Int(*v));
                }
            }
        }
        mem
    }

    pub fn alloc(&self, site: ObjSite, cells: u64) -> usize {
        let mut objs = self.objects.write().unwrap();
        let idx = objs.len();
        let cells = (0..cells).map(|_| Cell::zero()).collect::<Vec<_>>().into_boxed_slice();
        objs.push(Arc::new(MemObject { site, cells }));
        idx
    }

    pub fn object(&self, idx: usize) -> Option<Arc<MemObject>> {
        self.objects.read().unwrap().get(idx).cloned()
    }

    fn load(&self, obj: usize, off: i64) -> Option<(CellVal, ObjSite)> {
        let objs = self.objects.read().unwrap();
        let o = objs.get(obj)?;
        if off < 0 || off as usize >= o.cells.len() {
            return None;
        }
        Some((o.cells[off as usize].load(), o.site))
    }

    fn store(&self, obj: usize, off: i64, v: CellVal) -> Option<ObjSite> {
        let objs = self.objects.read().unwrap();
        let o = objs.get(obj)?;
        if off < 0 || off as usize >= o.cells.len() {
            return None;
        }
        o.cells[off as usize].store(v);
        Some(o.site)
    }
}

/// Execution hooks; the default implementations make the plain path free.
pub trait Hooks {
    /// An instruction retired.
    fn instr(&mut self, _id: InstrId) {}
    /// Control entered a block (function index, block index within it).
    fn block(&mut self, _func: usize, _block: usize) {}
    /// A memory cell was read or written.
    fn mem(&mut self, _instr: InstrId, _obj: usize, _site: ObjSite, _cell: i64, _write: bool) {}
    /// A fresh object was allocated.
    fn alloc(&mut self, _obj: usize) {}
    /// An instruction defined a value.
    fn def(&mut self, _id: InstrId, _v: Val) {}
    /// A call is about to transfer control (site, caller, callee, indirect?).
    fn call(&mut self, _site: InstrId, _caller: usize, _callee: usize, _indirect: bool) {}
    fn enter_func(&mut self, _func: usize) {}
    fn exit_func(&mut self) {}
}

pub struct NoHooks;
impl Hooks for NoHooks {}

// ---------------------------------------------------------------------------
// resolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
enum RVal {
    Slot(u32),
    Lit(i64),
    GlobalPtr(u32),
    FnRef(u32),
}

#[derive(Debug, Clone)]
struct RPhi {
    id: InstrId,
    dst: u32,
    /// (predecessor block index, incoming value)
    arms: Vec<(u32, RVal)>,
}

#[derive(Debug, Clone)]
struct RInstr {
    id: InstrId,
    op: Opcode,
    dst: Option<u32>,
    args: Vec<RVal>,
    targets: [u32; 2],
    callee: u32,
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
struct RBlock {
    phis: Vec<RPhi>,
    code: Vec<RInstr>,
}

#[derive(Debug, Clone)]
pub struct RFunc {
    n_slots: usize,
    n_params: usize,
    blocks: Vec<RBlock>,
}

/// A module resolved for execution: names replaced by slot and index forms.
pub struct Prog<'m> {
    pub module: &'m ModuleIR,
    funcs: Vec<RFunc>,
    fn_by_name: HashMap<&'m str, usize>,
    fn_arity: Vec<usize>,
}

impl<'m> Prog<'m> {
    pub fn resolve(m: &'m ModuleIR) -> Result<Prog<'m>, RunError> {
        let global_idx: HashMap<&str, usize> =
            m.globals.iter().enumerate().map(|(i, g)| (g.name.as_str(), i)).collect();
        let fn_by_name: HashMap<&str, usize> =
            m.functions.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();
        let mut funcs = Vec::with_capacity(m.functions.len());
        for f in &m.functions {
            let mut slot_of: HashMap<&str, u32> = HashMap::new();
            for (p, _) in &f.params {
                let k = slot_of.len() as u32;
                slot_of.insert(p.as_str(), k);
            }
            for ins in f.instrs() {
                if let Some(r) = &ins.result {
                    let k = slot_of.len() as u32;
                    slot_of.insert(r.as_str(), k);
                }
            }
            let block_idx: HashMap<&str, u32> = f
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| (b.label.as_str(), i as u32))
                .collect();
            let rval = |v: &ValueRef| -> Result<RVal, RunError> {
                Ok(match v {
                    ValueRef::Ssa(n) => RVal::Slot(slot_of[n.as_str()]),
                    ValueRef::Lit(k) => RVal::Lit(*k),
                    ValueRef::Global(g) => RVal::GlobalPtr(global_idx[g.as_str()] as u32),
                    ValueRef::Func(g) => RVal::FnRef(
                        *fn_by_name
                            .get(g.as_str())
                            .ok_or_else(|| RunError::NotResolvable(format!("unknown @{}", g)))?
                            as u32,
                    ),
                    ValueRef::Label(_) => {
                        return Err(RunError::NotResolvable("label in value position".into()))
                    }
                })
            };
            let mut blocks = Vec::with_capacity(f.blocks.len());
            for b in &f.blocks {
                let mut phis = Vec::new();
                let mut code = Vec::new();
                for ins in &b.instrs {
                    if ins.op == Opcode::Phi {
                        let mut arms = Vec::new();
                        for (l, v) in ins.phi_arms() {
                            arms.push((block_idx[l], rval(v)?));
                        }
                        phis.push(RPhi {
                            id: ins.id,
                            dst: slot_of[ins.result.as_deref().unwrap()],
                            arms,
                        });
                        continue;
                    }
                    let mut args = Vec::new();
                    let mut targets = [NONE, NONE];
                    let mut callee = NONE;
                    match ins.op {
                        Opcode::Br => targets[0] = block_idx[ins.operands[0].to_string().as_str()],
                        Opcode::Brcond => {
                            args.push(rval(&ins.operands[0])?);
                            for (k, o) in ins.operands[1..].iter().enumerate() {
                                targets[k] = block_idx[o.to_string().as_str()];
                            }
                        }
                        Opcode::Call => {
                            let name = ins.callee().unwrap();
                            callee = fn_by_name[name] as u32;
                            for a in &ins.operands[1..] {
                                args.push(rval(a)?);
                            }
                        }
                        Opcode::Icall => {
                            for a in &ins.operands {
                                args.push(rval(a)?);
                            }
                        }
                        _ => {
                            for a in &ins.operands {
                                args.push(rval(a)?);
                            }
                        }
                    }
                    code.push(RInstr {
                        id: ins.id,
                        op: ins.op,
                        dst: ins.result.as_deref().map(|r| slot_of[r]),
                        args,
                        targets,
                        callee,
                    });
                }
                blocks.push(RBlock { phis, code });
            }
            funcs.push(RFunc { n_slots: slot_of.len(), n_params: f.params.len(), blocks });
        }
        let fn_arity = m.functions.iter().map(|f| f.params.len()).collect();
        Ok(Prog { module: m, funcs, fn_by_name, fn_arity })
    }

    pub fn func_index(&self, name: &str) -> Option<usize> {
        self.fn_by_name.get(name).copied()
    }
}

// ---------------------------------------------------------------------------
// the machine
// ---------------------------------------------------------------------------

struct Frame {
    func: usize,
    block: usize,
    prev_block: usize,
    ip: usize,
    slots: Vec<Val>,
    ret_slot: Option<u32>,
    ret_id: Option<InstrId>,
}

/// One execution context. Several machines may share a `Memory` and a step
/// counter; each owns its frame stack and output buffer.
pub struct Machine<'p, 'e, H: Hooks> {
    pub prog: &'p Prog<'p>,
    pub mem: &'e Memory,
    steps: &'e AtomicU64,
    budget: u64,
    pub out: Vec<i64>,
    hooks: H,
    groups: Option<&'e ParallelGroups>,
}

impl<'p, 'e, H: Hooks> Machine<'p, 'e, H> {
    pub fn new(prog: &'p Prog<'p>, mem: &'e Memory, steps: &'e AtomicU64, budget: u64, hooks: H) -> Self {
        Machine { prog, mem, steps, budget, out: Vec::new(), hooks, groups: None }
    }

    /// Register parallel call groups: when execution enters one of these
    /// blocks, its leading call instructions run as one task group.
    pub fn with_groups(mut self, groups: &'e ParallelGroups) -> Self {
        self.groups = Some(groups);
        self
    }

    pub fn hooks_mut(&mut self) -> &mut H {
        &mut self.hooks
    }

    pub fn into_hooks(self) -> H {
        self.hooks
    }

    fn tick(&mut self, id: InstrId) -> Result<(), Trap> {
        let n = self.steps.fetch_add(1, Ordering::Relaxed) + 1;
        if n > self.budget {
            return Err(Trap::StepBudgetExceeded);
        }
        self.hooks.instr(id);
        Ok(())
    }

    fn eval(&self, frame: &Frame, v: RVal) -> Val {
        match v {
            RVal::Slot(s) => frame.slots[s as usize],
            RVal::Lit(n) => Val::Int(n),
            RVal::GlobalPtr(g) => Val::Ptr { obj: g as usize, off: 0 },
            RVal::FnRef(f) => Val::Fn(f as usize),
        }
    }

    fn as_int(v: Val) -> Result<i64, Trap> {
        match v {
            Val::Int(n) => Ok(n),
            Val::Bool(b) => Ok(b as i64),
            // arithmetic on pointers or tagged function values is a misuse
            _ => Err(Trap::OutOfBounds),
        }
    }

    fn as_bool(v: Val) -> Result<bool, Trap> {
        match v {
            Val::Bool(b) => Ok(b),
            Val::Int(n) => Ok(n != 0),
            _ => Err(Trap::OutOfBounds),
        }
    }

    fn enter_block(&mut self, frame: &mut Frame, target: usize) -> Result<(), Trap> {
        frame.prev_block = frame.block;
        frame.block = target;
        frame.ip = 0;
        self.hooks.block(frame.func, target);
        // parallel phi evaluation
        let prog: &'p Prog<'p> = self.prog;
        let rb = &prog.funcs[frame.func].blocks[target];
        if !rb.phis.is_empty() {
            let mut vals = Vec::with_capacity(rb.phis.len());
            for phi in &rb.phis {
                let arm = phi
                    .arms
                    .iter()
                    .find(|(p, _)| *p as usize == frame.prev_block)
                    .expect("verified phi covers predecessors");
                vals.push((phi.id, phi.dst, self.eval(frame, arm.1)));
            }
            for (id, dst, v) in vals {
                self.tick(id)?;
                frame.slots[dst as usize] = v;
                self.hooks.def(id, v);
            }
        }
        Ok(())
    }

    /// Run a function to completion on this machine's frame stack.
    pub fn run_call(&mut self, func: usize, args: Vec<Val>) -> Result<Val, Trap> {
        let prog: &'p Prog<'p> = self.prog;
        let mut frames: Vec<Frame> = Vec::new();
        let mut frame = self.push_frame(func, args, None, None)?;
        self.hooks.block(frame.func, 0);
        loop {
            if frame.ip == 0 {
                if let Some(g) = self.groups {
                    if g.blocks.contains(&(frame.func, frame.block)) {
                        self.run_group(&mut frame)?;
                        // skip to the terminator
                        frame.ip = prog.funcs[frame.func].blocks[frame.block].code.len() - 1;
                    }
                }
            }
            let rb = &prog.funcs[frame.func].blocks[frame.block];
            if frame.ip >= rb.code.len() {
                unreachable!("block fell through without terminator");
            }
            let ins: &'p RInstr = &rb.code[frame.ip];
            frame.ip += 1;
            self.tick(ins.id)?;
            use Opcode::*;
            match ins.op {
                Add | Sub | Mul | Sdiv | Srem | And | Or | Xor | Shl | Lshr => {
                    let a = Self::as_int(self.eval(&frame, ins.args[0]))?;
                    let b = Self::as_int(self.eval(&frame, ins.args[1]))?;
                    let r = match ins.op {
                        Add => a.wrapping_add(b),
                        Sub => a.wrapping_sub(b),
                        Mul => a.wrapping_mul(b),
                        Sdiv => {
                            if b == 0 {
                                return Err(Trap::DivByZero);
                            }
                            a.wrapping_div(b)
                        }
                        Srem => {
                            if b == 0 {
                                return Err(Trap::DivByZero);
                            }
                            a.wrapping_rem(b)
                        }
                        And => a & b,
                        Or => a | b,
                        Xor => a ^ b,
                        Shl => a.wrapping_shl(b as u32 & 63),
                        Lshr => ((a as u64).wrapping_shr(b as u32 & 63)) as i64,
                        _ => unreachable!(),
                    };
                    frame.slots[ins.dst.unwrap() as usize] = Val::Int(r);
                    self.hooks.def(ins.id, Val::Int(r));
                }
                Eq | Ne | Slt | Sle | Sgt | Sge => {
                    let a = Self::as_int(self.eval(&frame, ins.args[0]))?;
                    let b = Self::as_int(self.eval(&frame, ins.args[1]))?;
                    let r = match ins.op {
                        Eq => a == b,
                        Ne => a != b,
                        Slt => a < b,
                        Sle => a <= b,
                        Sgt => a > b,
                        Sge => a >= b,
                        _ => unreachable!(),
                    };
                    frame.slots[ins.dst.unwrap() as usize] = Val::Bool(r);
                    self.hooks.def(ins.id, Val::Bool(r));
                }
                Select => {
                    let c = Self::as_bool(self.eval(&frame, ins.args[0]))?;
                    let v = if c { ins.args[1] } else { ins.args[2] };
                    let val = self.eval(&frame, v);
                    frame.slots[ins.dst.unwrap() as usize] = val;
                    self.hooks.def(ins.id, val);
                }
                Br => {
                    self.enter_block(&mut frame, ins.targets[0] as usize)?;
                }
                Brcond => {
                    let c = Self::as_bool(self.eval(&frame, ins.args[0]))?;
                    let t = if c { ins.targets[0] } else { ins.targets[1] };
                    self.enter_block(&mut frame, t as usize)?;
                }
                Alloca => {
                    let n = match ins.args[0] {
                        RVal::Lit(n) => n,
                        _ => return Err(Trap::OutOfBounds),
                    };
                    let idx = self.mem.alloc(ObjSite::Alloca(ins.id), n as u64);
                    self.hooks.alloc(idx);
                    frame.slots[ins.dst.unwrap() as usize] = Val::Ptr { obj: idx, off: 0 };
                    self.hooks.def(ins.id, Val::Ptr { obj: idx, off: 0 });
                }
                Gep => {
                    let p = self.eval(&frame, ins.args[0]);
                    let k = Self::as_int(self.eval(&frame, ins.args[1]))?;
                    match p {
                        Val::Ptr { obj, off } => {
                            let val = Val::Ptr { obj, off: off.wrapping_add(k) };
                            frame.slots[ins.dst.unwrap() as usize] = val;
                            self.hooks.def(ins.id, val);
                        }
                        _ => return Err(Trap::OutOfBounds),
                    }
                }
                Load => {
                    let p = self.eval(&frame, ins.args[0]);
                    let Val::Ptr { obj, off } = p else { return Err(Trap::OutOfBounds) };
                    let Some((cv, site)) = self.mem.load(obj, off) else {
                        return Err(Trap::OutOfBounds);
                    };
                    self.hooks.mem(ins.id, obj, site, off, false);
                    let val = match cv {
                        CellVal::Int(n) => Val::Int(n),
                        CellVal::Fn(i) => Val::Fn(i),
                    };
                    frame.slots[ins.dst.unwrap() as usize] = val;
                    self.hooks.def(ins.id, val);
                }
                Store => {
                    let v = self.eval(&frame, ins.args[0]);
                    let p = self.eval(&frame, ins.args[1]);
                    let Val::Ptr { obj, off } = p else { return Err(Trap::OutOfBounds) };
                    let cv = match v {
                        Val::Int(n) => CellVal::Int(n),
                        Val::Bool(b) => CellVal::Int(b as i64),
                        Val::Fn(i) => CellVal::Fn(i),
                        // data pointers are register-only
                        _ => return Err(Trap::OutOfBounds),
                    };
                    if self.mem.store(obj, off, cv).is_none() {
                        return Err(Trap::OutOfBounds);
                    }
                    let site = self.mem.object(obj).unwrap().site;
                    self.hooks.mem(ins.id, obj, site, off, true);
                }
                Print => {
                    let v = Self::as_int(self.eval(&frame, ins.args[0]))?;
                    self.out.push(v);
                }
                Call | Icall => {
                    let (callee, arg_rvals) = if ins.op == Call {
                        (ins.callee as usize, &ins.args[..])
                    } else {
                        let t = self.eval(&frame, ins.args[0]);
                        let Val::Fn(fi) = t else { return Err(Trap::BadIcall) };
                        (fi, &ins.args[1..])
                    };
                    if self.prog.fn_arity[callee] != arg_rvals.len() {
                        return Err(Trap::BadIcall);
                    }
                    let args: Vec<Val> = arg_rvals.iter().map(|&a| self.eval(&frame, a)).collect();
                    if frames.len() + 1 >= MAX_CALL_DEPTH {
                        return Err(Trap::StepBudgetExceeded);
                    }
                    self.hooks.call(ins.id, frame.func, callee, ins.op == Icall);
                    let new = self.push_frame(callee, args, ins.dst, Some(ins.id))?;
                    frames.push(std::mem::replace(&mut frame, new));
                    self.hooks.block(frame.func, 0);
                }
                Ret => {
                    let v = match ins.args.first() {
                        Some(&a) => self.eval(&frame, a),
                        None => Val::Undef,
                    };
                    self.hooks.exit_func();
                    match frames.pop() {
                        Some(mut up) => {
                            if let Some(dst) = frame.ret_slot {
                                up.slots[dst as usize] = v;
                                if let Some(id) = frame.ret_id {
                                    self.hooks.def(id, v);
                                }
                            }
                            frame = up;
                        }
                        None => return Ok(v),
                    }
                }
                Phi => unreachable!("phis are evaluated on block entry"),
                Funcptr => {
                    let RVal::FnRef(fi) = ins.args[0] else { unreachable!() };
                    frame.slots[ins.dst.unwrap() as usize] = Val::Fn(fi as usize);
                    self.hooks.def(ins.id, Val::Fn(fi as usize));
                }
            }
        }
    }

    fn push_frame(
        &mut self,
        func: usize,
        args: Vec<Val>,
        ret_slot: Option<u32>,
        ret_id: Option<InstrId>,
    ) -> Result<Frame, Trap> {
        let rf = &self.prog.funcs[func];
        debug_assert_eq!(args.len(), rf.n_params);
        let mut slots = vec![Val::Undef; rf.n_slots];
        slots[..args.len()].copy_from_slice(&args);
        self.hooks.enter_func(func);
        Ok(Frame { func, block: 0, prev_block: usize::MAX, ip: 0, slots, ret_slot, ret_id })
    }
}

/// How a parallel call group executes its tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupExec {
    /// One at a time, in a seeded random order.
    Shuffled(u64),
    /// All at once, on scoped threads sharing the heap.
    Threads,
}

/// Instrumentation record of one task execution.
#[derive(Debug, Clone)]
pub struct TaskRun {
    pub group: (usize, usize),
    pub instance: u64,
    pub ordinal: usize,
    /// Cells written outside objects the task allocated itself.
    pub writes: BTreeSet<(usize, i64)>,
    pub printed: bool,
}

/// Registered dispatch blocks: each consists of direct calls followed by an
/// unconditional branch. Task runs are recorded for contract checking.
pub struct ParallelGroups {
    pub blocks: BTreeSet<(usize, usize)>,
    pub mode: GroupExec,
    pub instances: AtomicU64,
    pub runs: Mutex<Vec<TaskRun>>,
}

impl ParallelGroups {
    pub fn new(blocks: BTreeSet<(usize, usize)>, mode: GroupExec) -> ParallelGroups {
        ParallelGroups { blocks, mode, instances: AtomicU64::new(0), runs: Mutex::new(Vec::new()) }
    }

    pub fn take_runs(&self) -> Vec<TaskRun> {
        std::mem::take(&mut self.runs.lock().unwrap())
    }
}

/// Write-set collector for task executions.
#[derive(Default)]
struct TaskWrites {
    writes: BTreeSet<(usize, i64)>,
    allocated: BTreeSet<usize>,
}

impl Hooks for TaskWrites {
    fn mem(&mut self, _instr: InstrId, obj: usize, _site: ObjSite, cell: i64, write: bool) {
        if write && !self.allocated.contains(&obj) {
            self.writes.insert((obj, cell));
        }
    }

    fn alloc(&mut self, obj: usize) {
        self.allocated.insert(obj);
    }
}

impl<'p, 'e, H: Hooks> Machine<'p, 'e, H> {
    /// Execute the leading calls of a dispatch block as one task group.
    fn run_group(&mut self, frame: &mut Frame) -> Result<(), Trap> {
        let prog = self.prog;
        let groups = self.groups.expect("run_group without groups");
        let rb = &prog.funcs[frame.func].blocks[frame.block];
        let n = rb.code.len();
        debug_assert!(n >= 1);
        let mut specs: Vec<(InstrId, usize, Vec<Val>)> = Vec::new();
        for ins in &rb.code[..n - 1] {
            if ins.op != Opcode::Call {
                return Err(Trap::BadIcall); // malformed dispatch block
            }
            let args: Vec<Val> = ins.args.iter().map(|&a| self.eval(frame, a)).collect();
            specs.push((ins.id, ins.callee as usize, args));
        }
        // each call instruction retires once, as in plain execution
        for (id, _, _) in &specs {
            self.tick(*id)?;
        }
        let gkey = (frame.func, frame.block);
        let instance = groups.instances.fetch_add(1, Ordering::Relaxed);
        match groups.mode {
            GroupExec::Shuffled(seed) => {
                let mut order: Vec<usize> = (0..specs.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(instance));
                order.shuffle(&mut rng);
                for k in order {
                    let (_, callee, args) = specs[k].clone();
                    let mut tm =
                        Machine::new(prog, self.mem, self.steps, self.budget, TaskWrites::default());
                    if let Some(g) = self.groups {
                        tm = tm.with_groups(g);
                    }
                    let r = tm.run_call(callee, args);
                    let printed = !tm.out.is_empty();
                    let hooks = tm.into_hooks();
                    groups.runs.lock().unwrap().push(TaskRun {
                        group: gkey,
                        instance,
                        ordinal: k,
                        writes: hooks.writes,
                        printed,
                    });
                    r?;
                }
            }
            GroupExec::Threads => {
                let budget = self.budget;
                let mem = self.mem;
                let steps = self.steps;
                let groups_ref = self.groups;
                let results: Vec<(usize, Result<Val, Trap>, TaskWrites, bool)> =
                    std::thread::scope(|scope| {
                        let mut handles = Vec::new();
                        for (k, (_, callee, args)) in specs.iter().enumerate() {
                            let args = args.clone();
                            let callee = *callee;
                            handles.push(scope.spawn(move || {
                                let mut tm =
                                    Machine::new(prog, mem, steps, budget, TaskWrites::default());
                                if let Some(g) = groups_ref {
                                    tm = tm.with_groups(g);
                                }
                                let r = tm.run_call(callee, args);
                                let printed = !tm.out.is_empty();
                                (k, r, tm.into_hooks(), printed)
                            }));
                        }
                        handles.into_iter().map(|h| h.join().expect("task thread")).collect()
                    });
                let mut first_err: Option<Trap> = None;
                for (k, r, hooks, printed) in results {
                    groups.runs.lock().unwrap().push(TaskRun {
                        group: gkey,
                        instance,
                        ordinal: k,
                        writes: hooks.writes,
                        printed,
                    });
                    if let Err(t) = r {
                        if first_err.is_none() {
                            first_err = Some(t);
                        }
                    }
                }
                if let Some(t) = first_err {
                    return Err(t);
                }
            }
        }
        Ok(())
    }
}

/// Execute `@main` with the given arguments under a step budget.
pub fn run_program(m: &ModuleIR, args: &[i64], budget: u64) -> Result<ExecResult, RunError> {
    run_with_hooks(m, args, budget, NoHooks).map(|(r, _)| r)
}

/// Execute with custom hooks; returns the result and the hooks back.
pub fn run_with_hooks<H: Hooks>(
    m: &ModuleIR,
    args: &[i64],
    budget: u64,
    hooks: H,
) -> Result<(ExecResult, H), RunError> {
    let prog = Prog::resolve(m)?;
    let main = prog.func_index("main").ok_or(RunError::NoMain)?;
    let expected = prog.fn_arity[main];
    if expected != args.len() {
        return Err(RunError::ArityMismatch { expected, got: args.len() });
    }
    let mem = Memory::for_module(m);
    let steps = AtomicU64::new(0);
    let mut machine = Machine::new(&prog, &mem, &steps, budget, hooks);
    let vals: Vec<Val> = args.iter().map(|&a| Val::Int(a)).collect();
    let (exit, trap) = match machine.run_call(main, vals) {
        Ok(Val::Int(n)) => (n, None),
        Ok(_) => (0, None),
        Err(t) => (0, Some(t)),
    };
    let result = ExecResult {
        output: std::mem::take(&mut machine.out),
        exit,
        steps: steps.load(Ordering::Relaxed),
        trap,
    };
    Ok((result, machine.into_hooks()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_module;

    fn run(src: &str, args: &[i64]) -> ExecResult {
        run_program(&parse_module(src).unwrap(), args, DEFAULT_STEP_BUDGET).unwrap()
    }

    #[test]
    fn literal_return() {
        let r = run("func @main() -> i64 { bb0: ret 7 }", &[]);
        assert_eq!(r.exit, 7);
        assert_eq!(r.steps, 1);
        assert_eq!(r.trap, None);
    }

    #[test]
    fn loop_sums_one_to_ten() {
        let r = run(
            "func @main() -> i64 {
entry:
  br header
header:
  %i = phi [entry: 1], [body: %i2]
  %s = phi [entry: 0], [body: %s2]
  %c = sle %i, 10
  brcond %c, body, done
body:
  %s2 = add %s, %i
  %i2 = add %i, 1
  br header
done:
  print %s
  ret %s
}",
            &[],
        );
        assert_eq!(r.exit, 55);
        assert_eq!(r.output, vec![55]);
    }

    #[test]
    fn memory_and_args() {
        let r = run(
            "global @g: i64[3] = [10, 20, 30]
func @main(%k: i64) -> i64 {
bb0:
  %p = gep @g, %k
  %v = load %p
  %a = alloca 2
  store %v, %a
  %q = gep %a, 0
  %w = load %q
  ret %w
}",
            &[2],
        );
        assert_eq!(r.exit, 30);
    }

    #[test]
    fn traps_are_reported() {
        let r = run("func @main(%d: i64) -> i64 { bb0: %x = sdiv 10, %d\n ret %x }", &[0]);
        assert_eq!(r.trap, Some(Trap::DivByZero));
        let r = run(
            "func @main() -> i64 { bb0: %p = alloca 1\n %q = gep %p, 5\n %v = load %q\n ret %v }",
            &[],
        );
        assert_eq!(r.trap, Some(Trap::OutOfBounds));
        let m = parse_module("func @main() -> i64 { b: br b }").unwrap();
        let r2 = run_program(&m, &[], 1000).unwrap();
        assert_eq!(r2.trap, Some(Trap::StepBudgetExceeded));
    }

    #[test]
    fn icall_dispatch() {
        let r = run(
            "func @double(%x: i64) -> i64 { a: %r = mul %x, 2\n ret %r }
func @negate(%x: i64) -> i64 { a: %r = sub 0, %x\n ret %r }
func @main(%sel: i64) -> i64 {
bb0:
  %t = alloca 2
  %f0 = funcptr @double
  %f1 = funcptr @negate
  store %f0, %t
  %t1 = gep %t, 1
  store %f1, %t1
  %p = gep %t, %sel
  %fp = load %p
  %r = icall %fp(21)
  ret %r
}",
            &[0],
        );
        assert_eq!(r.exit, 42);
    }

    #[test]
    fn deterministic_across_runs() {
        let src = "func @main(%n: i64) -> i64 {
e:
  br h
h:
  %i = phi [e: 0], [b: %i2]
  %c = slt %i, %n
  brcond %c, b, d
b:
  print %i
  %i2 = add %i, 3
  br h
d:
  ret %i
}";
        let a = run(src, &[10]);
        let b = run(src, &[10]);
        assert_eq!(a, b);
    }
}
