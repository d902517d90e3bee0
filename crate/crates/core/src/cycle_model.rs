//! Throughput-style cost model.
//!
//! A run is charged per scalar pixel, per extension-instruction invocation,
//! once for the histogram merge, and per invocation for external-buffer
//! stalls. All parameters are exact rationals so fitted profiles reproduce
//! their measurements to the cycle.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::fabric::ResourceLedger;

pub type Rational = Ratio<i128>;

pub const KERNEL_YIQ: &str = "yiq";
pub const KERNEL_HISTEQ: &str = "histeq";
pub const DEFAULT_PROFILE_NAME: &str = "s6000_paper";

const DEFAULT_PROFILE_TEXT: &str = include_str!("../profiles/s6000_paper.profile");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("profile has no cost entry for kernel {kernel:?} mode {mode}")]
    UnknownKernelConfig { kernel: String, mode: String },
    #[error("reports describe different workloads ({0})")]
    MismatchedWorkload(String),
    #[error("cannot fit profile: {0}")]
    Underdetermined(String),
    #[error("inconsistent measurements: {0}")]
    Inconsistent(String),
    #[error("profile line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("report has zero cycles")]
    ZeroCycles,
    #[error("cannot read profile {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Execution configuration of a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Scalar,
    Ei1,
    Ei5,
    Ei8,
    Isef,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Scalar, Mode::Ei1, Mode::Ei5, Mode::Ei8, Mode::Isef];

    /// Pixels handled per extension-instruction invocation.
    pub fn lanes(self) -> u64 {
        match self {
            Mode::Scalar | Mode::Ei1 => 1,
            Mode::Ei5 => 5,
            Mode::Ei8 => 8,
            Mode::Isef => 16,
        }
    }

    pub fn is_scalar(self) -> bool {
        self == Mode::Scalar
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Scalar => "scalar",
            Mode::Ei1 => "ei1",
            Mode::Ei5 => "ei5",
            Mode::Ei8 => "ei8",
            Mode::Isef => "isef",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BufferLocation {
    #[default]
    Internal,
    External,
}

impl BufferLocation {
    pub fn as_str(self) -> &'static str {
        match self {
            BufferLocation::Internal => "internal",
            BufferLocation::External => "external",
        }
    }
}

impl FromStr for BufferLocation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "internal" => Ok(Self::Internal),
            "external" => Ok(Self::External),
            _ => Err(format!("unknown buffer location {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibrationProfile {
    pub name: String,
    pub scalar_cycles_per_pixel: BTreeMap<String, Rational>,
    pub ei_cycles: BTreeMap<(String, Mode), Rational>,
    /// Histogram merge and LUT replication, once per equalization run.
    pub merge_cycles: Rational,
    pub stall_penalty_external: Rational,
    pub fixed_overhead: BTreeMap<(String, Mode), u64>,
}

impl CalibrationProfile {
    pub fn empty(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            scalar_cycles_per_pixel: BTreeMap::new(),
            ei_cycles: BTreeMap::new(),
            merge_cycles: Rational::zero(),
            stall_penalty_external: Rational::zero(),
            fixed_overhead: BTreeMap::new(),
        }
    }

    /// The profile fitted to the published S6000 measurements.
    pub fn s6000_paper() -> Self {
        Self::from_text(DEFAULT_PROFILE_TEXT).expect("embedded profile parses")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        (name == DEFAULT_PROFILE_NAME).then(Self::s6000_paper)
    }

    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path).map_err(|e| CostError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<Self, CostError> {
        let mut profile = Self::empty("");
        let mut named = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |msg: String| CostError::Parse { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| err("expected key = value".into()))?;
            match key.split('.').collect::<Vec<_>>().as_slice() {
                ["name"] => {
                    profile.name = value.to_string();
                    named = true;
                }
                ["merge_cycles"] => profile.merge_cycles = parse_rational(value).map_err(err)?,
                ["stall_penalty_external"] => {
                    profile.stall_penalty_external = parse_rational(value).map_err(err)?
                }
                [kernel, mode, field] => {
                    let mode: Mode = mode.parse().map_err(err)?;
                    let kernel = kernel.to_string();
                    match *field {
                        "cycles_per_pixel" if mode.is_scalar() => {
                            profile
                                .scalar_cycles_per_pixel
                                .insert(kernel, parse_rational(value).map_err(err)?);
                        }
                        "ei_cycles" if !mode.is_scalar() => {
                            profile
                                .ei_cycles
                                .insert((kernel, mode), parse_rational(value).map_err(err)?);
                        }
                        "fixed_overhead" => {
                            let v = value
                                .parse()
                                .map_err(|_| err(format!("bad integer {value:?}")))?;
                            profile.fixed_overhead.insert((kernel, mode), v);
                        }
                        _ => return Err(err(format!("unknown key {key:?}"))),
                    }
                }
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        if !named {
            return Err(CostError::Parse {
                line: 0,
                msg: "missing name".into(),
            });
        }
        Ok(profile)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("name = {}\n", self.name));
        out.push_str(&format!(
            "merge_cycles = {}\n",
            fmt_rational(self.merge_cycles)
        ));
        out.push_str(&format!(
            "stall_penalty_external = {}\n",
            fmt_rational(self.stall_penalty_external)
        ));
        for (kernel, v) in &self.scalar_cycles_per_pixel {
            out.push_str(&format!(
                "{kernel}.scalar.cycles_per_pixel = {}\n",
                fmt_rational(*v)
            ));
        }
        for ((kernel, mode), v) in &self.ei_cycles {
            out.push_str(&format!(
                "{kernel}.{mode}.ei_cycles = {}\n",
                fmt_rational(*v)
            ));
        }
        for ((kernel, mode), v) in &self.fixed_overhead {
            out.push_str(&format!("{kernel}.{mode}.fixed_overhead = {v}\n"));
        }
        out
    }

    fn unknown(kernel: &str, mode: Mode) -> CostError {
        CostError::UnknownKernelConfig {
            kernel: kernel.to_string(),
            mode: mode.to_string(),
        }
    }

    pub fn scalar_cost(&self, kernel: &str) -> Result<Rational, CostError> {
        self.scalar_cycles_per_pixel
            .get(kernel)
            .copied()
            .ok_or_else(|| Self::unknown(kernel, Mode::Scalar))
    }

    pub fn ei_cost(&self, kernel: &str, mode: Mode) -> Result<Rational, CostError> {
        if mode.is_scalar() {
            return self.scalar_cost(kernel);
        }
        self.ei_cycles
            .get(&(kernel.to_string(), mode))
            .copied()
            .ok_or_else(|| Self::unknown(kernel, mode))
    }

    pub fn overhead(&self, kernel: &str, mode: Mode) -> u64 {
        self.fixed_overhead
            .get(&(kernel.to_string(), mode))
            .copied()
            .unwrap_or(0)
    }

    pub fn supports(&self, kernel: &str, mode: Mode) -> bool {
        self.ei_cost(kernel, mode).is_ok()
    }
}

pub fn parse_rational(s: &str) -> Result<Rational, String> {
    let bad = || format!("bad rational {s:?}");
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s.trim(), "1"),
    };
    let n: i128 = n.parse().map_err(|_| bad())?;
    let d: i128 = d.parse().map_err(|_| bad())?;
    if d <= 0 || n < 0 {
        return Err(bad());
    }
    Ok(Rational::new(n, d))
}

pub fn fmt_rational(r: Rational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

fn to_f64(r: Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn ceil_u64(r: Rational) -> u64 {
    r.ceil().to_integer() as u64
}

/// What a run actually issued: invocations and pixels finished on the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Workload {
    pub pixels: u64,
    pub ei_invocations: u64,
    pub scalar_pixels: u64,
}

impl Workload {
    /// The workload a mode issues for `pixels`; partial groups run as one
    /// padded invocation.
    pub fn planned(mode: Mode, pixels: u64) -> Self {
        if mode.is_scalar() {
            Self {
                pixels,
                ei_invocations: 0,
                scalar_pixels: pixels,
            }
        } else {
            Self {
                pixels,
                ei_invocations: pixels.div_ceil(mode.lanes()),
                scalar_pixels: 0,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleReport {
    pub kernel: String,
    pub mode: Mode,
    pub buffers: BufferLocation,
    pub pixels: u64,
    pub ei_invocations: u64,
    pub stall_cycles: Rational,
    pub cycles_exact: Rational,
    pub cycles_total: u64,
    pub cycles_per_pixel: Rational,
    pub speedup_vs_scalar: Rational,
    pub resources: ResourceLedger,
    pub stages: u32,
}

/// Flat report row; column order is the CSV header order.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRecord {
    pub kernel: String,
    pub mode: String,
    pub buffers: String,
    pub pixels: u64,
    pub ei_invocations: u64,
    pub cycles_total: u64,
    pub cycles_exact: String,
    pub cycles_per_pixel: f64,
    pub cycles_per_pixel_exact: String,
    pub cycles_per_pixel_rounded: String,
    pub speedup: f64,
    pub speedup_exact: String,
    pub speedup_rounded: String,
    pub multipliers_used: u32,
    pub alu_ops_used: u32,
    pub iram_bytes_used: u32,
    pub stages: u32,
}

impl CycleReport {
    pub fn with_resources(mut self, resources: ResourceLedger, stages: u32) -> Self {
        self.resources = resources;
        self.stages = stages;
        self
    }

    /// Cycles per pixel as printed in the published tables (two decimals).
    pub fn cycles_per_pixel_rounded(&self) -> String {
        format!("{:.2}", to_f64(self.cycles_per_pixel))
    }

    /// Speedup as printed in the published tables (whole number).
    pub fn speedup_rounded(&self) -> String {
        format!("{:.0}", to_f64(self.speedup_vs_scalar))
    }

    pub fn record(&self) -> ReportRecord {
        ReportRecord {
            kernel: self.kernel.clone(),
            mode: self.mode.to_string(),
            buffers: self.buffers.as_str().to_string(),
            pixels: self.pixels,
            ei_invocations: self.ei_invocations,
            cycles_total: self.cycles_total,
            cycles_exact: fmt_rational(self.cycles_exact),
            cycles_per_pixel: to_f64(self.cycles_per_pixel),
            cycles_per_pixel_exact: fmt_rational(self.cycles_per_pixel),
            cycles_per_pixel_rounded: self.cycles_per_pixel_rounded(),
            speedup: to_f64(self.speedup_vs_scalar),
            speedup_exact: fmt_rational(self.speedup_vs_scalar),
            speedup_rounded: self.speedup_rounded(),
            multipliers_used: self.resources.multipliers_used,
            alu_ops_used: self.resources.alu_ops_used,
            iram_bytes_used: self.resources.iram_bytes_used,
            stages: self.stages,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "kernel": self.kernel,
            "mode": self.mode.as_str(),
            "buffers": self.buffers.as_str(),
            "pixels": self.pixels,
            "ei_invocations": self.ei_invocations,
            "cycles_total": self.cycles_total,
            "cycles_exact": fmt_rational(self.cycles_exact),
            "stall_cycles": fmt_rational(self.stall_cycles),
            "cycles_per_pixel": {
                "exact": fmt_rational(self.cycles_per_pixel),
                "value": to_f64(self.cycles_per_pixel),
                "rounded": self.cycles_per_pixel_rounded(),
            },
            "speedup_vs_scalar": {
                "exact": fmt_rational(self.speedup_vs_scalar),
                "value": to_f64(self.speedup_vs_scalar),
                "rounded": self.speedup_rounded(),
            },
            "resources": self.resources,
            "stages": self.stages,
        })
    }
}

fn exact_cycles(
    kernel: &str,
    mode: Mode,
    work: &Workload,
    profile: &CalibrationProfile,
    buffers: BufferLocation,
) -> Result<(Rational, Rational), CostError> {
    let scalar_cpp = profile.scalar_cost(kernel)?;
    let mut total = scalar_cpp * Rational::from(work.scalar_pixels as i128);
    let mut stalls = Rational::zero();
    if !mode.is_scalar() {
        let invocations = Rational::from(work.ei_invocations as i128);
        total += profile.ei_cost(kernel, mode)? * invocations;
        if mode == Mode::Isef && work.pixels > 0 {
            total += profile.merge_cycles;
        }
        if buffers == BufferLocation::External {
            stalls = profile.stall_penalty_external * invocations;
        }
    }
    total += stalls;
    total += Rational::from(profile.overhead(kernel, mode) as i128);
    Ok((total, stalls))
}

/// Charges a workload that has already been executed (or planned).
pub fn charge(
    kernel: &str,
    mode: Mode,
    work: &Workload,
    profile: &CalibrationProfile,
    buffers: BufferLocation,
) -> Result<CycleReport, CostError> {
    let (exact, stall_cycles) = exact_cycles(kernel, mode, work, profile, buffers)?;
    let cycles_total = ceil_u64(exact);
    let baseline = Workload::planned(Mode::Scalar, work.pixels);
    let (scalar_exact, _) = exact_cycles(kernel, Mode::Scalar, &baseline, profile, buffers)?;
    let scalar_total = ceil_u64(scalar_exact);
    let cycles_per_pixel = if work.pixels == 0 {
        Rational::zero()
    } else {
        Rational::new(cycles_total as i128, work.pixels as i128)
    };
    let speedup_vs_scalar = if cycles_total == 0 {
        Rational::from(1)
    } else {
        Rational::new(scalar_total as i128, cycles_total as i128)
    };
    Ok(CycleReport {
        kernel: kernel.to_string(),
        mode,
        buffers,
        pixels: work.pixels,
        ei_invocations: work.ei_invocations,
        stall_cycles,
        cycles_exact: exact,
        cycles_total,
        cycles_per_pixel,
        speedup_vs_scalar,
        resources: ResourceLedger::default(),
        stages: if mode.is_scalar() { 0 } else { 1 },
    })
}

pub fn estimate(
    kernel: &str,
    mode: Mode,
    pixels: u64,
    profile: &CalibrationProfile,
    buffers: BufferLocation,
) -> Result<CycleReport, CostError> {
    charge(
        kernel,
        mode,
        &Workload::planned(mode, pixels),
        profile,
        buffers,
    )
}

/// `baseline.cycles_total / report.cycles_total`.
pub fn speedup(report: &CycleReport, baseline: &CycleReport) -> Result<Rational, CostError> {
    if report.kernel != baseline.kernel || report.pixels != baseline.pixels {
        return Err(CostError::MismatchedWorkload(format!(
            "{}/{} px vs {}/{} px",
            report.kernel, report.pixels, baseline.kernel, baseline.pixels
        )));
    }
    if report.cycles_total == 0 {
        return Err(CostError::ZeroCycles);
    }
    Ok(Rational::new(
        baseline.cycles_total as i128,
        report.cycles_total as i128,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Measurement {
    pub kernel: String,
    pub mode: Mode,
    pub pixels: u64,
    pub cycles: u64,
}

impl Measurement {
    pub fn new(kernel: &str, mode: Mode, pixels: u64, cycles: u64) -> Self {
        Self {
            kernel: kernel.to_string(),
            mode,
            pixels,
            cycles,
        }
    }
}

/// The six published totals: RGB to YIQ over 64000 pixels and histogram
/// equalization of a 128x128 image.
pub fn published_measurements() -> Vec<Measurement> {
    vec![
        Measurement::new(KERNEL_YIQ, Mode::Scalar, 64000, 707_524),
        Measurement::new(KERNEL_YIQ, Mode::Ei1, 64000, 234_050),
        Measurement::new(KERNEL_YIQ, Mode::Ei5, 64000, 63_518),
        Measurement::new(KERNEL_YIQ, Mode::Ei8, 64000, 72_517),
        Measurement::new(KERNEL_HISTEQ, Mode::Scalar, 128 * 128, 17_124_334),
        Measurement::new(KERNEL_HISTEQ, Mode::Isef, 128 * 128, 3_154_353),
    ]
}

/// Parameters that cannot be recovered from totals and must be fixed up front.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FitOptions {
    pub merge_cycles: Rational,
    pub stall_penalty_external: Rational,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            merge_cycles: Rational::zero(),
            stall_penalty_external: Rational::zero(),
        }
    }
}

impl FitOptions {
    /// One cycle per (bank, bin) read for the 16-bank merge; one cycle of
    /// stall per invocation when pixels live off-fabric.
    pub fn published() -> Self {
        Self {
            merge_cycles: Rational::from(16 * 256),
            stall_penalty_external: Rational::from(1),
        }
    }
}

/// Solves one cost unknown per (kernel, mode) so that [`estimate`] returns
/// every measurement exactly (internal buffers, no fixed overhead).
pub fn fit_profile(
    name: &str,
    measurements: &[Measurement],
    options: &FitOptions,
) -> Result<CalibrationProfile, CostError> {
    if measurements.is_empty() {
        return Err(CostError::Underdetermined("no measurements".into()));
    }
    let mut profile = CalibrationProfile::empty(name);
    profile.merge_cycles = options.merge_cycles;
    profile.stall_penalty_external = options.stall_penalty_external;

    let mut fitted: BTreeMap<(String, Mode), Rational> = BTreeMap::new();
    for m in measurements {
        let lanes = m.mode.lanes();
        if m.pixels == 0 || m.pixels % lanes != 0 {
            return Err(CostError::Underdetermined(format!(
                "{}.{}: {} pixels is not a positive multiple of {lanes} lanes",
                m.kernel, m.mode, m.pixels
            )));
        }
        let mut cycles = Rational::from(m.cycles as i128);
        if m.mode == Mode::Isef {
            cycles -= options.merge_cycles;
            if cycles < Rational::zero() {
                return Err(CostError::Inconsistent(format!(
                    "{}.{}: merge cost exceeds measured total",
                    m.kernel, m.mode
                )));
            }
        }
        let cost = cycles / Rational::from((m.pixels / lanes) as i128);
        let key = (m.kernel.clone(), m.mode);
        match fitted.get(&key) {
            Some(prev) if *prev != cost => {
                return Err(CostError::Inconsistent(format!(
                    "{}.{}: {} vs {}",
                    m.kernel,
                    m.mode,
                    fmt_rational(*prev),
                    fmt_rational(cost)
                )))
            }
            _ => {
                fitted.insert(key, cost);
            }
        }
    }
    for ((kernel, mode), cost) in fitted {
        if mode.is_scalar() {
            profile.scalar_cycles_per_pixel.insert(kernel, cost);
        } else {
            profile.ei_cycles.insert((kernel, mode), cost);
        }
    }
    // vector reports need the scalar baseline of their kernel
    for (kernel, mode) in profile.ei_cycles.keys() {
        if !profile.scalar_cycles_per_pixel.contains_key(kernel) {
            return Err(CostError::Underdetermined(format!(
                "{kernel}.{mode} has no {kernel}.scalar measurement"
            )));
        }
    }
    Ok(profile)
}
