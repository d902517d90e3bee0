//! Execution model of the configurable fabric.
//!
//! Operands move through 16-byte wide registers, kernels may touch a banked
//! internal RAM, and every extension instruction is validated against the
//! fabric's arity, operation and resource limits before it can run.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

pub const WR_BYTES: usize = 16;
pub const MAX_INPUTS: usize = 3;
pub const MAX_OUTPUTS: usize = 2;

pub const DEFAULT_BANKS: usize = 16;
pub const BANK_BYTES: usize = 4096;
pub const BANK_ENTRIES: usize = 256;
/// Sub-histogram counters: 256 x u16 little-endian at the start of a bank.
pub const COUNTER_REGION: usize = 0;
pub const COUNTER_REGION_BYTES: usize = BANK_ENTRIES * 2;
/// LUT copy: 256 x u8 right after the counters.
pub const LUT_REGION: usize = COUNTER_REGION + COUNTER_REGION_BYTES;
pub const LUT_REGION_BYTES: usize = BANK_ENTRIES;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FabricError {
    #[error("cannot pack {0} bytes into a {WR_BYTES}-byte wide register")]
    PackOverflow(usize),
    #[error("byte range {offset}..{} outside wide register", offset + len)]
    RangeError { offset: usize, len: usize },
    #[error("{ei}: {what} arity {got} exceeds limit {limit}")]
    ArityViolation {
        ei: String,
        what: &'static str,
        got: usize,
        limit: usize,
    },
    #[error("{ei}: operation {op} is not available on the fabric")]
    ForbiddenOperation { ei: String, op: Op },
    #[error("{ei}: {resource} demand {demand} exceeds capacity {capacity}")]
    ResourceExceeded {
        ei: String,
        resource: &'static str,
        demand: u64,
        capacity: u64,
    },
    #[error("bank {bank} accessed twice in one invocation (entries {first} and {second})")]
    BankConflict {
        bank: usize,
        first: usize,
        second: usize,
    },
    #[error("bank {bank} bin {bin} counter overflow")]
    CounterOverflow { bank: usize, bin: usize },
    #[error("address bank {bank} entry {entry} out of range")]
    BadAddress { bank: usize, entry: usize },
    #[error("{ei}: kernel body needs IRAM but none was attached")]
    MissingIram { ei: String },
}

/// 128-bit operand register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct WideRegister([u8; WR_BYTES]);

impl WideRegister {
    pub const fn zero() -> Self {
        Self([0; WR_BYTES])
    }

    /// Places `data` at offsets `0..len`, zero-filling the rest.
    pub fn pack(data: &[u8]) -> Result<Self, FabricError> {
        if data.len() > WR_BYTES {
            return Err(FabricError::PackOverflow(data.len()));
        }
        let mut bytes = [0u8; WR_BYTES];
        bytes[..data.len()].copy_from_slice(data);
        Ok(Self(bytes))
    }

    pub fn unpack(&self, offset: usize, len: usize) -> Result<&[u8], FabricError> {
        match offset.checked_add(len) {
            Some(end) if end <= WR_BYTES => Ok(&self.0[offset..end]),
            _ => Err(FabricError::RangeError { offset, len }),
        }
    }

    pub fn bytes(&self) -> &[u8; WR_BYTES] {
        &self.0
    }

    pub fn from_bytes(bytes: [u8; WR_BYTES]) -> Self {
        Self(bytes)
    }
}

/// Operation classes a kernel body can declare.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Op {
    Add,
    Sub,
    Mul,
    Shift,
    Compare,
    Select,
    IramAccess,
    FloatArith,
    Divide,
    Trig,
}

impl Op {
    pub fn is_supported(self) -> bool {
        !matches!(self, Op::FloatArith | Op::Divide | Op::Trig)
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Per-invocation resource demand of a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ResourceLedger {
    pub multipliers_used: u32,
    pub alu_ops_used: u32,
    pub iram_bytes_used: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FabricCapacities {
    pub multipliers: u32,
    pub alu_ops: u32,
    pub iram_bytes: u32,
    pub max_inputs: usize,
    pub max_outputs: usize,
}

impl Default for FabricCapacities {
    fn default() -> Self {
        Self {
            multipliers: 64,
            alu_ops: 4096,
            iram_bytes: (DEFAULT_BANKS * BANK_BYTES) as u32,
            max_inputs: MAX_INPUTS,
            max_outputs: MAX_OUTPUTS,
        }
    }
}

/// Banked fabric-local RAM.
///
/// Accessors taking `&mut self` and returning `Result` go through the
/// per-invocation access log; the `host_*` accessors model processor-side
/// setup and readback and are not logged.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IramState {
    banks: Vec<Box<[u8]>>,
    access_log: Vec<Option<usize>>,
}

impl Default for IramState {
    fn default() -> Self {
        Self::new(DEFAULT_BANKS)
    }
}

impl IramState {
    pub fn new(banks: usize) -> Self {
        Self {
            banks: (0..banks)
                .map(|_| vec![0u8; BANK_BYTES].into_boxed_slice())
                .collect(),
            access_log: vec![None; banks],
        }
    }

    pub fn num_banks(&self) -> usize {
        self.banks.len()
    }

    pub fn total_bytes(&self) -> usize {
        self.banks.len() * BANK_BYTES
    }

    pub fn clear(&mut self) {
        for bank in &mut self.banks {
            bank.fill(0);
        }
    }

    pub fn begin_invocation(&mut self) {
        self.access_log.fill(None);
    }

    /// Banks touched since the last [`begin_invocation`](Self::begin_invocation).
    pub fn accesses(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.access_log
            .iter()
            .enumerate()
            .filter_map(|(bank, e)| e.map(|entry| (bank, entry)))
    }

    fn check(&self, bank: usize, entry: usize) -> Result<(), FabricError> {
        if bank >= self.banks.len() || entry >= BANK_ENTRIES {
            return Err(FabricError::BadAddress { bank, entry });
        }
        Ok(())
    }

    fn touch(&mut self, bank: usize, entry: usize) -> Result<(), FabricError> {
        self.check(bank, entry)?;
        if let Some(first) = self.access_log[bank] {
            return Err(FabricError::BankConflict {
                bank,
                first,
                second: entry,
            });
        }
        self.access_log[bank] = Some(entry);
        Ok(())
    }

    fn counter_at(&self, bank: usize, bin: usize) -> u16 {
        let off = COUNTER_REGION + 2 * bin;
        u16::from_le_bytes([self.banks[bank][off], self.banks[bank][off + 1]])
    }

    fn set_counter_at(&mut self, bank: usize, bin: usize, value: u16) {
        let off = COUNTER_REGION + 2 * bin;
        self.banks[bank][off..off + 2].copy_from_slice(&value.to_le_bytes());
    }

    /// Read-modify-write of one counter; counts as a single bank access.
    pub fn increment_counter(&mut self, bank: usize, bin: usize) -> Result<u16, FabricError> {
        self.touch(bank, bin)?;
        let next = self
            .counter_at(bank, bin)
            .checked_add(1)
            .ok_or(FabricError::CounterOverflow { bank, bin })?;
        self.set_counter_at(bank, bin, next);
        Ok(next)
    }

    pub fn read_lut(&mut self, bank: usize, entry: usize) -> Result<u8, FabricError> {
        self.touch(bank, entry)?;
        Ok(self.banks[bank][LUT_REGION + entry])
    }

    pub fn write_lut(&mut self, bank: usize, entry: usize, value: u8) -> Result<(), FabricError> {
        self.touch(bank, entry)?;
        self.banks[bank][LUT_REGION + entry] = value;
        Ok(())
    }

    pub fn host_counter(&self, bank: usize, bin: usize) -> u16 {
        self.counter_at(bank, bin)
    }

    pub fn host_set_counter(&mut self, bank: usize, bin: usize, value: u16) {
        self.set_counter_at(bank, bin, value);
    }

    pub fn host_lut(&self, bank: usize, entry: usize) -> u8 {
        self.banks[bank][LUT_REGION + entry]
    }

    pub fn host_set_lut(&mut self, bank: usize, entry: usize, value: u8) {
        self.banks[bank][LUT_REGION + entry] = value;
    }

    pub fn bank_bytes(&self, bank: usize) -> &[u8] {
        &self.banks[bank]
    }
}

pub type KernelBody = dyn Fn(&[WideRegister], Option<&mut IramState>) -> Result<Vec<WideRegister>, FabricError>
    + Send
    + Sync;

/// A custom instruction: declared shape plus a host-level kernel body.
#[derive(Clone)]
pub struct ExtensionInstruction {
    pub name: String,
    pub inputs: usize,
    pub outputs: usize,
    pub ops: Vec<Op>,
    pub ledger: ResourceLedger,
    pub uses_iram: bool,
    body: Arc<KernelBody>,
}

impl fmt::Debug for ExtensionInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExtensionInstruction")
            .field("name", &self.name)
            .field("inputs", &self.inputs)
            .field("outputs", &self.outputs)
            .field("ops", &self.ops)
            .field("ledger", &self.ledger)
            .field("uses_iram", &self.uses_iram)
            .finish_non_exhaustive()
    }
}

impl ExtensionInstruction {
    pub fn new<F>(
        name: impl Into<String>,
        inputs: usize,
        outputs: usize,
        ops: impl IntoIterator<Item = Op>,
        ledger: ResourceLedger,
        body: F,
    ) -> Self
    where
        F: Fn(&[WideRegister], Option<&mut IramState>) -> Result<Vec<WideRegister>, FabricError>
            + Send
            + Sync
            + 'static,
    {
        let mut ops: Vec<Op> = ops.into_iter().collect();
        ops.sort();
        ops.dedup();
        let uses_iram = ops.contains(&Op::IramAccess);
        Self {
            name: name.into(),
            inputs,
            outputs,
            ops,
            ledger,
            uses_iram,
            body: Arc::new(body),
        }
    }

    pub fn validate(self, caps: &FabricCapacities) -> Result<ValidatedEi, FabricError> {
        let report = ei_validate(&self, caps)?;
        Ok(ValidatedEi {
            ei: self,
            stages: report.stages,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidationReport {
    pub stages: u32,
}

pub fn ei_validate(
    ei: &ExtensionInstruction,
    caps: &FabricCapacities,
) -> Result<ValidationReport, FabricError> {
    if ei.inputs > caps.max_inputs {
        return Err(FabricError::ArityViolation {
            ei: ei.name.clone(),
            what: "input",
            got: ei.inputs,
            limit: caps.max_inputs,
        });
    }
    if ei.outputs > caps.max_outputs {
        return Err(FabricError::ArityViolation {
            ei: ei.name.clone(),
            what: "output",
            got: ei.outputs,
            limit: caps.max_outputs,
        });
    }
    if let Some(&op) = ei.ops.iter().find(|op| !op.is_supported()) {
        return Err(FabricError::ForbiddenOperation {
            ei: ei.name.clone(),
            op,
        });
    }
    let ledger = ei.ledger;
    if ledger.iram_bytes_used > caps.iram_bytes {
        return Err(FabricError::ResourceExceeded {
            ei: ei.name.clone(),
            resource: "iram bytes",
            demand: ledger.iram_bytes_used as u64,
            capacity: caps.iram_bytes as u64,
        });
    }
    let stages = ledger.multipliers_used.div_ceil(caps.multipliers).max(1);
    let alu_capacity = caps.alu_ops as u64 * stages as u64;
    if ledger.alu_ops_used as u64 > alu_capacity {
        return Err(FabricError::ResourceExceeded {
            ei: ei.name.clone(),
            resource: "alu ops",
            demand: ledger.alu_ops_used as u64,
            capacity: alu_capacity,
        });
    }
    Ok(ValidationReport { stages })
}

/// An instruction that passed [`ei_validate`]; only these can execute.
#[derive(Debug, Clone)]
pub struct ValidatedEi {
    ei: ExtensionInstruction,
    stages: u32,
}

impl ValidatedEi {
    pub fn name(&self) -> &str {
        &self.ei.name
    }

    pub fn stages(&self) -> u32 {
        self.stages
    }

    pub fn ledger(&self) -> ResourceLedger {
        self.ei.ledger
    }

    pub fn instruction(&self) -> &ExtensionInstruction {
        &self.ei
    }
}

/// One simulated fabric: owns the IRAM and counts issued instructions.
#[derive(Debug, Clone)]
pub struct Fabric {
    capacities: FabricCapacities,
    iram: IramState,
    issued: BTreeMap<String, u64>,
}

impl Default for Fabric {
    fn default() -> Self {
        Self::new(FabricCapacities::default(), IramState::default())
    }
}

impl Fabric {
    pub fn new(capacities: FabricCapacities, iram: IramState) -> Self {
        Self {
            capacities,
            iram,
            issued: BTreeMap::new(),
        }
    }

    pub fn capacities(&self) -> &FabricCapacities {
        &self.capacities
    }

    pub fn iram(&self) -> &IramState {
        &self.iram
    }

    pub fn iram_mut(&mut self) -> &mut IramState {
        &mut self.iram
    }

    pub fn load(&self, ei: ExtensionInstruction) -> Result<ValidatedEi, FabricError> {
        ei.validate(&self.capacities)
    }

    /// Number of times `name` has been issued on this fabric.
    pub fn issued(&self, name: &str) -> u64 {
        self.issued.get(name).copied().unwrap_or(0)
    }

    pub fn issued_total(&self) -> u64 {
        self.issued.values().sum()
    }

    pub fn execute(
        &mut self,
        ei: &ValidatedEi,
        inputs: &[WideRegister],
    ) -> Result<Vec<WideRegister>, FabricError> {
        let inst = &ei.ei;
        if inputs.len() != inst.inputs {
            return Err(FabricError::ArityViolation {
                ei: inst.name.clone(),
                what: "input",
                got: inputs.len(),
                limit: inst.inputs,
            });
        }
        self.iram.begin_invocation();
        let iram = inst.uses_iram.then_some(&mut self.iram);
        let outputs = (inst.body)(inputs, iram)?;
        if outputs.len() != inst.outputs {
            return Err(FabricError::ArityViolation {
                ei: inst.name.clone(),
                what: "output",
                got: outputs.len(),
                limit: inst.outputs,
            });
        }
        *self.issued.entry(inst.name.clone()).or_default() += 1;
        Ok(outputs)
    }
}
