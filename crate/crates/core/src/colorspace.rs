//! Fixed-point colour conversion: per-pixel equations, the 1/5/8-pixel
//! extension instructions, and whole-image conversion.

use std::fmt;
use std::path::Path;

use thiserror::Error;

use crate::cycle_model::{
    self, BufferLocation, CalibrationProfile, CostError, CycleReport, Mode, Workload,
};
use crate::fabric::{
    ExtensionInstruction, Fabric, FabricError, Op, ResourceLedger, ValidatedEi, WideRegister,
    WR_BYTES,
};
use crate::fixed_point::{clamp_u8, div256_trunc, mul_acc3, CoefficientRange, ScaledCoefficient};
use crate::image_io::{ImageBuffer, ImageError};

/// Largest per-channel error of the forward+reverse YIQ round trip over the
/// whole RGB cube, from the exhaustive sweep. Blue is the worst channel,
/// first reached at (0, 121, 212).
pub const ROUNDTRIP_MAX_ERROR: u32 = 5;
pub const ROUNDTRIP_MAX_ERROR_PER_CHANNEL: [u32; 3] = [3, 3, 5];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ColorError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("mode {0} is not a colour conversion mode")]
    InvalidMode(Mode),
    #[error("matrix definition: {0}")]
    Matrix(String),
}

impl From<CoefficientRange> for ColorError {
    fn from(e: CoefficientRange) -> Self {
        ColorError::Matrix(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PixelRgb {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl PixelRgb {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    pub fn to_array(self) -> [u8; 3] {
        [self.r, self.g, self.b]
    }
}

/// Luminance plus signed chrominance at full precision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PixelYiq {
    pub y: u8,
    pub i: i16,
    pub q: i16,
}

impl PixelYiq {
    pub const fn new(y: u8, i: i16, q: i16) -> Self {
        Self { y, i, q }
    }
}

/// How a channel is stored in an 8-bit sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelCoding {
    /// Plain 0..=255, saturating.
    Unsigned,
    /// Signed value + 128, saturating.
    Offset128,
}

impl ChannelCoding {
    #[inline]
    pub fn decode(self, byte: u8) -> i32 {
        match self {
            ChannelCoding::Unsigned => byte as i32,
            ChannelCoding::Offset128 => byte as i32 - 128,
        }
    }

    #[inline]
    pub fn encode(self, value: i32) -> u8 {
        match self {
            ChannelCoding::Unsigned => clamp_u8(value),
            ChannelCoding::Offset128 => clamp_u8(value + 128),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "u" => Some(Self::Unsigned),
            "s" => Some(Self::Offset128),
            _ => None,
        }
    }
}

const fn row(a: i32, b: i32, c: i32) -> [ScaledCoefficient; 3] {
    [
        ScaledCoefficient::from_const(a),
        ScaledCoefficient::from_const(b),
        ScaledCoefficient::from_const(c),
    ]
}

pub const RGB2YIQ_ROWS: [[ScaledCoefficient; 3]; 3] =
    [row(77, 150, 29), row(153, -70, -82), row(54, -134, 80)];
pub const YIQ2RGB_ROWS: [[ScaledCoefficient; 3]; 3] =
    [row(256, 245, 159), row(256, -70, -166), row(256, -283, 436)];

const UNSIGNED3: [ChannelCoding; 3] = [ChannelCoding::Unsigned; 3];
const YIQ_CODING: [ChannelCoding; 3] = [
    ChannelCoding::Unsigned,
    ChannelCoding::Offset128,
    ChannelCoding::Offset128,
];

/// A 3x3 coefficient matrix over 256, with the storage coding of its input
/// and output channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ConversionMatrix {
    pub name: String,
    pub rows: [[ScaledCoefficient; 3]; 3],
    pub input: [ChannelCoding; 3],
    pub output: [ChannelCoding; 3],
}

impl ConversionMatrix {
    pub fn rgb2yiq() -> Self {
        Self {
            name: "rgb2yiq".into(),
            rows: RGB2YIQ_ROWS,
            input: UNSIGNED3,
            output: YIQ_CODING,
        }
    }

    pub fn yiq2rgb() -> Self {
        Self {
            name: "yiq2rgb".into(),
            rows: YIQ2RGB_ROWS,
            input: YIQ_CODING,
            output: UNSIGNED3,
        }
    }

    /// Signed full-precision products, one per output channel.
    #[inline]
    pub fn apply_signed(&self, samples: [i32; 3]) -> [i32; 3] {
        self.rows.map(|r| div256_trunc(mul_acc3(r, samples)))
    }

    /// Decode, multiply, divide, encode.
    #[inline]
    pub fn apply_bytes(&self, px: [u8; 3]) -> [u8; 3] {
        let s = [
            self.input[0].decode(px[0]),
            self.input[1].decode(px[1]),
            self.input[2].decode(px[2]),
        ];
        let v = self.apply_signed(s);
        [
            self.output[0].encode(v[0]),
            self.output[1].encode(v[1]),
            self.output[2].encode(v[2]),
        ]
    }

    /// Parses the `key = value` matrix format:
    ///
    /// ```text
    /// name = yuv
    /// row0 = 77 150 29
    /// row1 = -38 -74 112
    /// row2 = 112 -94 -18
    /// input = u u u
    /// output = u s s
    /// ```
    pub fn from_text(text: &str) -> Result<Self, ColorError> {
        let mut name = None;
        let mut rows: [Option<[ScaledCoefficient; 3]>; 3] = [None; 3];
        let mut input = UNSIGNED3;
        let mut output = UNSIGNED3;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| ColorError::Matrix(format!("expected key = value: {line:?}")))?;
            let fields: Vec<&str> = value.split_whitespace().collect();
            match key {
                "name" => name = Some(value.to_string()),
                "row0" | "row1" | "row2" => {
                    let idx = (key.as_bytes()[3] - b'0') as usize;
                    let vals = fields
                        .iter()
                        .map(|f| {
                            f.parse::<i32>()
                                .map_err(|_| ColorError::Matrix(format!("bad coefficient {f:?}")))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    if vals.len() != 3 {
                        return Err(ColorError::Matrix(format!("{key} needs 3 coefficients")));
                    }
                    rows[idx] = Some([
                        ScaledCoefficient::new(vals[0])?,
                        ScaledCoefficient::new(vals[1])?,
                        ScaledCoefficient::new(vals[2])?,
                    ]);
                }
                "input" | "output" => {
                    let codes = fields
                        .iter()
                        .map(|f| {
                            ChannelCoding::parse(f)
                                .ok_or_else(|| ColorError::Matrix(format!("bad coding {f:?}")))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    let codes: [ChannelCoding; 3] = codes
                        .try_into()
                        .map_err(|_| ColorError::Matrix(format!("{key} needs 3 codings")))?;
                    if key == "input" {
                        input = codes;
                    } else {
                        output = codes;
                    }
                }
                _ => return Err(ColorError::Matrix(format!("unknown key {key:?}"))),
            }
        }
        let missing = |what: &str| ColorError::Matrix(format!("missing {what}"));
        Ok(Self {
            name: name.ok_or_else(|| missing("name"))?,
            rows: [
                rows[0].ok_or_else(|| missing("row0"))?,
                rows[1].ok_or_else(|| missing("row1"))?,
                rows[2].ok_or_else(|| missing("row2"))?,
            ],
            input,
            output,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ColorError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ColorError::Matrix(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}

pub fn rgb_to_yiq_px(p: PixelRgb) -> PixelYiq {
    let s = [p.r as i32, p.g as i32, p.b as i32];
    let [y, i, q] = RGB2YIQ_ROWS.map(|r| div256_trunc(mul_acc3(r, s)));
    PixelYiq::new(clamp_u8(y), i as i16, q as i16)
}

pub fn yiq_to_rgb_px(p: PixelYiq) -> PixelRgb {
    let s = [p.y as i32, p.i as i32, p.q as i32];
    let [r, g, b] = YIQ2RGB_ROWS.map(|r| clamp_u8(div256_trunc(mul_acc3(r, s))));
    PixelRgb::new(r, g, b)
}

pub fn rgb_to_cmy_px(p: PixelRgb) -> [u8; 3] {
    [255 - p.r, 255 - p.g, 255 - p.b]
}

pub fn cmy_to_rgb_px(c: [u8; 3]) -> PixelRgb {
    PixelRgb::new(255 - c[0], 255 - c[1], 255 - c[2])
}

pub fn yiq_encode_offset128(p: PixelYiq) -> [u8; 3] {
    [
        p.y,
        ChannelCoding::Offset128.encode(p.i as i32),
        ChannelCoding::Offset128.encode(p.q as i32),
    ]
}

pub fn yiq_decode_offset128(bytes: [u8; 3]) -> PixelYiq {
    PixelYiq::new(
        bytes[0],
        ChannelCoding::Offset128.decode(bytes[1]) as i16,
        ChannelCoding::Offset128.decode(bytes[2]) as i16,
    )
}

/// The YIQ luminance row on its own.
pub fn luma(px: [u8; 3]) -> u8 {
    let s = [px[0] as i32, px[1] as i32, px[2] as i32];
    clamp_u8(div256_trunc(mul_acc3(RGB2YIQ_ROWS[0], s)))
}

/// A per-pixel colour transform the fabric can run.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Conversion {
    Matrix(ConversionMatrix),
    /// `255 - x` per channel; its own inverse.
    Cmy,
}

impl Conversion {
    pub fn name(&self) -> &str {
        match self {
            Conversion::Matrix(m) => &m.name,
            Conversion::Cmy => "cmy",
        }
    }

    #[inline]
    pub fn apply(&self, px: [u8; 3]) -> [u8; 3] {
        match self {
            Conversion::Matrix(m) => m.apply_bytes(px),
            Conversion::Cmy => [255 - px[0], 255 - px[1], 255 - px[2]],
        }
    }

    /// Profile kernel the conversion is charged against.
    pub fn cost_kernel(&self) -> &'static str {
        cycle_model::KERNEL_YIQ
    }

    fn per_pixel_ledger(&self) -> (u32, u32) {
        match self {
            // 9 products; per output: 2 adds, 3-op truncation, 3-op encode; 3 input decodes
            Conversion::Matrix(_) => (9, 3 * 8 + 3),
            Conversion::Cmy => (0, 3),
        }
    }

    fn ops(&self) -> Vec<Op> {
        match self {
            Conversion::Matrix(_) => vec![
                Op::Add,
                Op::Sub,
                Op::Mul,
                Op::Shift,
                Op::Compare,
                Op::Select,
            ],
            Conversion::Cmy => vec![Op::Sub],
        }
    }
}

impl fmt::Display for Conversion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Wide registers needed to carry `lanes` interleaved RGB pixels.
pub fn registers_for(lanes: usize) -> usize {
    (3 * lanes).div_ceil(WR_BYTES)
}

/// Builds the `lanes`-pixel conversion instruction. Pixels are interleaved
/// across `registers_for(lanes)` input registers and come back in the same
/// layout; bytes past the last pixel are zero.
pub fn conversion_ei(conv: &Conversion, lanes: usize) -> ExtensionInstruction {
    let regs = registers_for(lanes);
    let (mults, alu) = conv.per_pixel_ledger();
    let ledger = ResourceLedger {
        multipliers_used: mults * lanes as u32,
        alu_ops_used: alu * lanes as u32,
        iram_bytes_used: 0,
    };
    let kernel = conv.clone();
    ExtensionInstruction::new(
        format!("{}_ei{lanes}", conv.name()),
        regs,
        regs,
        conv.ops(),
        ledger,
        move |inputs, _| {
            let mut bytes = [0u8; 3 * WR_BYTES];
            for (k, wr) in inputs.iter().enumerate() {
                bytes[k * WR_BYTES..(k + 1) * WR_BYTES].copy_from_slice(wr.bytes());
            }
            let mut out = [0u8; 3 * WR_BYTES];
            for lane in 0..lanes {
                let px = [bytes[3 * lane], bytes[3 * lane + 1], bytes[3 * lane + 2]];
                out[3 * lane..3 * lane + 3].copy_from_slice(&kernel.apply(px));
            }
            (0..regs)
                .map(|k| WideRegister::pack(&out[k * WR_BYTES..(k + 1) * WR_BYTES]))
                .collect()
        },
    )
}

fn lanes_for(mode: Mode) -> Result<usize, ColorError> {
    match mode {
        Mode::Ei1 => Ok(1),
        Mode::Ei5 => Ok(5),
        Mode::Ei8 => Ok(8),
        other => Err(ColorError::InvalidMode(other)),
    }
}

/// Splits up to `lanes` interleaved pixels over the instruction's registers.
fn pack_pixels(pixels: &[u8], regs: usize) -> Result<Vec<WideRegister>, FabricError> {
    (0..regs)
        .map(|k| {
            let lo = (k * WR_BYTES).min(pixels.len());
            let hi = ((k + 1) * WR_BYTES).min(pixels.len());
            WideRegister::pack(&pixels[lo..hi])
        })
        .collect()
}

fn unpack_pixels(regs: &[WideRegister], len: usize, out: &mut Vec<u8>) -> Result<(), FabricError> {
    let mut left = len;
    for wr in regs {
        let take = left.min(WR_BYTES);
        out.extend_from_slice(wr.unpack(0, take)?);
        left -= take;
    }
    Ok(())
}

fn run_group(fabric: &mut Fabric, ei: &ValidatedEi, pixels: &[u8]) -> Result<Vec<u8>, ColorError> {
    let regs = ei.instruction().inputs;
    let inputs = pack_pixels(pixels, regs)?;
    let outputs = fabric.execute(ei, &inputs)?;
    let mut out = Vec::with_capacity(pixels.len());
    unpack_pixels(&outputs, pixels.len(), &mut out)?;
    Ok(out)
}

/// Runs the 5-pixel instruction on a single register.
pub fn ei_convert5(
    input: WideRegister,
    matrix: &ConversionMatrix,
) -> Result<WideRegister, ColorError> {
    let mut fabric = Fabric::default();
    let ei = fabric.load(conversion_ei(&Conversion::Matrix(matrix.clone()), 5))?;
    Ok(fabric.execute(&ei, &[input])?[0])
}

/// Runs the 8-pixel instruction: 24 bytes spread over two registers.
pub fn ei_convert8(
    in_a: WideRegister,
    in_b: WideRegister,
    matrix: &ConversionMatrix,
) -> Result<(WideRegister, WideRegister), ColorError> {
    let mut fabric = Fabric::default();
    let ei = fabric.load(conversion_ei(&Conversion::Matrix(matrix.clone()), 8))?;
    let out = fabric.execute(&ei, &[in_a, in_b])?;
    Ok((out[0], out[1]))
}

/// Host-only reference path.
pub fn convert_scalar(img: &ImageBuffer, conv: &Conversion) -> Result<ImageBuffer, ColorError> {
    img.expect_channels(3)?;
    let mut out = Vec::with_capacity(img.samples().len());
    for px in img.samples().chunks_exact(3) {
        out.extend_from_slice(&conv.apply([px[0], px[1], px[2]]));
    }
    Ok(img.with_samples(3, out)?)
}

pub fn convert_image(
    img: &ImageBuffer,
    conv: &Conversion,
    mode: Mode,
    profile: &CalibrationProfile,
    buffers: BufferLocation,
) -> Result<(ImageBuffer, CycleReport), ColorError> {
    img.expect_channels(3)?;
    let kernel = conv.cost_kernel();
    let pixels = img.pixels() as u64;
    if mode.is_scalar() {
        let out = convert_scalar(img, conv)?;
        let report = cycle_model::charge(
            kernel,
            mode,
            &Workload::planned(mode, pixels),
            profile,
            buffers,
        )?;
        return Ok((out, report));
    }
    let lanes = lanes_for(mode)?;
    let mut fabric = Fabric::default();
    let ei = fabric.load(conversion_ei(conv, lanes))?;
    let mut out = Vec::with_capacity(img.samples().len());
    // a short final group runs zero-padded
    for group in img.samples().chunks(3 * lanes) {
        out.extend(run_group(&mut fabric, &ei, group)?);
    }
    let work = Workload {
        pixels,
        ei_invocations: fabric.issued(ei.name()),
        scalar_pixels: 0,
    };
    let report = cycle_model::charge(kernel, mode, &work, profile, buffers)?
        .with_resources(ei.ledger(), ei.stages());
    Ok((img.with_samples(3, out)?, report))
}

/// Per-channel absolute error of RGB -> YIQ -> RGB (signed chroma, no
/// 8-bit encoding in between).
#[inline]
pub fn roundtrip_error(p: PixelRgb) -> [u32; 3] {
    let back = yiq_to_rgb_px(rgb_to_yiq_px(p));
    [
        p.r.abs_diff(back.r) as u32,
        p.g.abs_diff(back.g) as u32,
        p.b.abs_diff(back.b) as u32,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoundTripStats {
    pub count: u64,
    pub max: [u32; 3],
    pub sum: [u64; 3],
    /// First triple (in r-major order) reaching each channel's maximum.
    pub argmax: [PixelRgb; 3],
}

fn pack_index(p: PixelRgb) -> u32 {
    (p.r as u32) << 16 | (p.g as u32) << 8 | p.b as u32
}

impl RoundTripStats {
    pub fn add(&mut self, p: PixelRgb) {
        let e = roundtrip_error(p);
        self.count += 1;
        for (c, &err) in e.iter().enumerate() {
            self.sum[c] += err as u64;
            if err > self.max[c] {
                self.max[c] = err;
                self.argmax[c] = p;
            }
        }
    }

    /// Order-independent combination (ties keep the lower triple).
    pub fn merge(mut self, other: Self) -> Self {
        self.count += other.count;
        for c in 0..3 {
            self.sum[c] += other.sum[c];
            let take = other.max[c] > self.max[c]
                || (other.max[c] == self.max[c]
                    && pack_index(other.argmax[c]) < pack_index(self.argmax[c]));
            if take {
                self.max[c] = other.max[c];
                self.argmax[c] = other.argmax[c];
            }
        }
        self
    }

    pub fn max_error(&self) -> u32 {
        self.max.into_iter().max().unwrap_or(0)
    }

    /// Triple reaching [`max_error`](Self::max_error), earliest channel first.
    pub fn worst(&self) -> PixelRgb {
        let m = self.max_error();
        let c = (0..3).find(|&c| self.max[c] == m).unwrap_or(0);
        self.argmax[c]
    }

    pub fn mean(&self) -> [f64; 3] {
        let n = self.count.max(1) as f64;
        self.sum.map(|s| s as f64 / n)
    }
}

fn sweep_red(r: u8) -> RoundTripStats {
    let mut stats = RoundTripStats::default();
    for g in 0..=255u8 {
        for b in 0..=255u8 {
            stats.add(PixelRgb::new(r, g, b));
        }
    }
    stats
}

/// Forward+reverse error over all 2^24 RGB triples.
pub fn sweep_exhaustive() -> RoundTripStats {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..=255u8)
            .into_par_iter()
            .map(sweep_red)
            .reduce(RoundTripStats::default, RoundTripStats::merge)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..=255u8)
            .map(sweep_red)
            .fold(RoundTripStats::default(), RoundTripStats::merge)
    }
}

pub fn sweep_pixels(pixels: impl IntoIterator<Item = PixelRgb>) -> RoundTripStats {
    pixels
        .into_iter()
        .fold(RoundTripStats::default(), |mut s, p| {
            s.add(p);
            s
        })
}

pub fn sweep_gray() -> RoundTripStats {
    sweep_pixels((0..=255u8).map(|v| PixelRgb::new(v, v, v)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_examples() {
        assert_eq!(
            rgb_to_yiq_px(PixelRgb::new(0, 0, 0)),
            PixelYiq::new(0, 0, 0)
        );
        assert_eq!(
            rgb_to_yiq_px(PixelRgb::new(255, 255, 255)),
            PixelYiq::new(255, 0, 0)
        );
        assert_eq!(
            rgb_to_yiq_px(PixelRgb::new(100, 50, 25)),
            PixelYiq::new(62, 38, 2)
        );
    }

    #[test]
    fn reverse_examples() {
        assert_eq!(
            yiq_to_rgb_px(PixelYiq::new(0, 0, 0)),
            PixelRgb::new(0, 0, 0)
        );
        assert_eq!(
            yiq_to_rgb_px(PixelYiq::new(255, 0, 0)),
            PixelRgb::new(255, 255, 255)
        );
        assert_eq!(
            yiq_to_rgb_px(PixelYiq::new(62, 38, 2)),
            PixelRgb::new(99, 50, 23)
        );
    }

    #[test]
    fn cmy_examples() {
        assert_eq!(rgb_to_cmy_px(PixelRgb::new(0, 0, 0)), [255, 255, 255]);
        assert_eq!(rgb_to_cmy_px(PixelRgb::new(255, 255, 255)), [0, 0, 0]);
        assert_eq!(rgb_to_cmy_px(PixelRgb::new(100, 50, 25)), [155, 205, 230]);
        let p = PixelRgb::new(1, 2, 3);
        assert_eq!(cmy_to_rgb_px(rgb_to_cmy_px(p)), p);
    }

    #[test]
    fn offset_encoding() {
        assert_eq!(
            yiq_encode_offset128(PixelYiq::new(62, 38, 2)),
            [62, 166, 130]
        );
        assert_eq!(yiq_encode_offset128(PixelYiq::new(0, 0, 0)), [0, 128, 128]);
        assert_eq!(
            yiq_encode_offset128(PixelYiq::new(76, 152, 53)),
            [76, 255, 181]
        );
        assert_eq!(
            yiq_decode_offset128([76, 255, 181]),
            PixelYiq::new(76, 127, 53)
        );
        assert_eq!(yiq_decode_offset128([0, 0, 128]), PixelYiq::new(0, -128, 0));
    }

    #[test]
    fn chroma_extremes() {
        // exhaustive over the cube, matching the PixelYiq bounds
        let (mut imin, mut imax, mut qmin, mut qmax) = (0i16, 0i16, 0i16, 0i16);
        for r in (0..=255u8).step_by(255) {
            for g in (0..=255u8).step_by(255) {
                for b in (0..=255u8).step_by(255) {
                    let p = rgb_to_yiq_px(PixelRgb::new(r, g, b));
                    imin = imin.min(p.i);
                    imax = imax.max(p.i);
                    qmin = qmin.min(p.q);
                    qmax = qmax.max(p.q);
                }
            }
        }
        assert_eq!((imin, imax, qmin, qmax), (-151, 152, -133, 133));
    }

    #[test]
    fn matrix_path_matches_pixel_functions() {
        let fwd = ConversionMatrix::rgb2yiq();
        let rev = ConversionMatrix::yiq2rgb();
        for r in (0..=255u8).step_by(17) {
            for g in (0..=255u8).step_by(15) {
                for b in (0..=255u8).step_by(13) {
                    let p = PixelRgb::new(r, g, b);
                    let enc = yiq_encode_offset128(rgb_to_yiq_px(p));
                    assert_eq!(fwd.apply_bytes(p.to_array()), enc);
                    assert_eq!(
                        rev.apply_bytes(enc),
                        yiq_to_rgb_px(yiq_decode_offset128(enc)).to_array()
                    );
                }
            }
        }
    }

    #[test]
    fn gray_axiom() {
        for v in 0..=255u8 {
            let yiq = rgb_to_yiq_px(PixelRgb::new(v, v, v));
            assert_eq!(yiq, PixelYiq::new(v, 0, 0));
            assert_eq!(yiq_to_rgb_px(yiq), PixelRgb::new(v, v, v));
        }
        assert_eq!(sweep_gray().max_error(), 0);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn matrices_nearly_invert() {
        for i in 0..3 {
            for j in 0..3 {
                let dot: i32 = (0..3)
                    .map(|k| YIQ2RGB_ROWS[i][k].value() * RGB2YIQ_ROWS[k][j].value())
                    .sum();
                let want = if i == j { 65536 } else { 0 };
                // |entry error| <= 2/256 after dividing by 256^2
                assert!((dot - want).abs() <= 2 * 256, "({i},{j}) = {dot}");
            }
        }
    }

    #[test]
    fn ei5_lifts_scalar() {
        let m = ConversionMatrix::rgb2yiq();
        let wr = WideRegister::pack(&[100, 50, 25].repeat(5)).unwrap();
        let out = ei_convert5(wr, &m).unwrap();
        assert_eq!(out.unpack(0, 15).unwrap(), &[62, 166, 130].repeat(5)[..]);
        assert_eq!(out.bytes()[15], 0);
        let zero = ei_convert5(WideRegister::zero(), &m).unwrap();
        assert_eq!(zero.unpack(0, 15).unwrap(), &[0, 128, 128].repeat(5)[..]);
        assert_eq!(zero.bytes()[15], 0);

        let px: Vec<u8> = (0..15).map(|k| (k * 37 % 256) as u8).collect();
        let out = ei_convert5(WideRegister::pack(&px).unwrap(), &m).unwrap();
        for j in 0..5 {
            let p = PixelRgb::new(px[3 * j], px[3 * j + 1], px[3 * j + 2]);
            assert_eq!(
                out.unpack(3 * j, 3).unwrap(),
                &yiq_encode_offset128(rgb_to_yiq_px(p))
            );
        }
    }

    #[test]
    fn ei8_lifts_scalar() {
        let m = ConversionMatrix::rgb2yiq();
        let bytes = [100u8, 50, 25].repeat(8);
        let (a, b) = ei_convert8(
            WideRegister::pack(&bytes[..16]).unwrap(),
            WideRegister::pack(&bytes[16..]).unwrap(),
            &m,
        )
        .unwrap();
        let mut out = a.bytes().to_vec();
        out.extend_from_slice(b.unpack(0, 8).unwrap());
        assert_eq!(out, [62u8, 166, 130].repeat(8));
        assert!(b.bytes()[8..].iter().all(|&x| x == 0));

        let white = [255u8; 24];
        let (a, b) = ei_convert8(
            WideRegister::pack(&white[..16]).unwrap(),
            WideRegister::pack(&white[16..]).unwrap(),
            &m,
        )
        .unwrap();
        let mut out = a.bytes().to_vec();
        out.extend_from_slice(b.unpack(0, 8).unwrap());
        assert_eq!(out, [255u8, 128, 128].repeat(8));
    }

    #[test]
    fn kernel_ledgers() {
        let fabric = Fabric::default();
        let yiq = Conversion::Matrix(ConversionMatrix::rgb2yiq());
        let e5 = fabric.load(conversion_ei(&yiq, 5)).unwrap();
        assert_eq!((e5.ledger().multipliers_used, e5.stages()), (45, 1));
        assert_eq!(e5.instruction().inputs, 1);
        let e8 = fabric.load(conversion_ei(&yiq, 8)).unwrap();
        assert_eq!((e8.ledger().multipliers_used, e8.stages()), (72, 2));
        assert_eq!((e8.instruction().inputs, e8.instruction().outputs), (2, 2));
        let e1 = fabric.load(conversion_ei(&yiq, 1)).unwrap();
        assert_eq!((e1.ledger().multipliers_used, e1.stages()), (9, 1));
    }

    #[test]
    fn convert_rejects() {
        let p = CalibrationProfile::s6000_paper();
        let gray = ImageBuffer::filled(4, 4, 1, 0).unwrap();
        let yiq = Conversion::Matrix(ConversionMatrix::rgb2yiq());
        assert!(matches!(
            convert_image(&gray, &yiq, Mode::Ei5, &p, BufferLocation::Internal),
            Err(ColorError::Image(ImageError::ChannelMismatch { .. }))
        ));
        let rgb = ImageBuffer::filled(4, 4, 3, 0).unwrap();
        assert!(matches!(
            convert_image(&rgb, &yiq, Mode::Isef, &p, BufferLocation::Internal),
            Err(ColorError::InvalidMode(Mode::Isef))
        ));
    }

    #[test]
    fn image_modes_agree_and_charge() {
        let p = CalibrationProfile::s6000_paper();
        let samples: Vec<u8> = (0..64000 * 3).map(|k| (k * 7919 % 251) as u8).collect();
        let img = ImageBuffer::new(320, 200, 3, samples).unwrap();
        let yiq = Conversion::Matrix(ConversionMatrix::rgb2yiq());
        let (base, rep) =
            convert_image(&img, &yiq, Mode::Scalar, &p, BufferLocation::Internal).unwrap();
        assert_eq!(rep.cycles_total, 707_524);
        for (mode, cycles) in [
            (Mode::Ei1, 234_050),
            (Mode::Ei5, 63_518),
            (Mode::Ei8, 72_517),
        ] {
            let (out, rep) = convert_image(&img, &yiq, mode, &p, BufferLocation::Internal).unwrap();
            assert_eq!(out, base, "{mode}");
            assert_eq!(rep.cycles_total, cycles);
        }
    }

    #[test]
    fn odd_sizes_pad_final_group() {
        let p = CalibrationProfile::s6000_paper();
        let img = ImageBuffer::new(7, 1, 3, (0..21).map(|k| (k * 40) as u8).collect()).unwrap();
        for conv in [
            Conversion::Matrix(ConversionMatrix::rgb2yiq()),
            Conversion::Cmy,
        ] {
            let base = convert_scalar(&img, &conv).unwrap();
            for mode in [Mode::Ei1, Mode::Ei5, Mode::Ei8] {
                let (out, rep) =
                    convert_image(&img, &conv, mode, &p, BufferLocation::Internal).unwrap();
                assert_eq!(out, base);
                assert_eq!(rep.ei_invocations, 7u64.div_ceil(mode.lanes()));
            }
        }
    }

    #[test]
    fn matrix_text() {
        let m = ConversionMatrix::from_text(
            "name = rgb2yiq\nrow0 = 77 150 29\nrow1 = 153 -70 -82\nrow2 = 54 -134 80\noutput = u s s\n",
        )
        .unwrap();
        assert_eq!(m, ConversionMatrix::rgb2yiq());
        assert!(ConversionMatrix::from_text("name = x\nrow0 = 1 2\n").is_err());
        assert!(ConversionMatrix::from_text("name = x\nrow0 = 1 2 3\nrow1 = 1 2 3\n").is_err());
        assert!(ConversionMatrix::from_text(
            "name = x\nrow0 = 1 2 999\nrow1 = 1 2 3\nrow2 = 1 2 3\n"
        )
        .is_err());
        assert!(ConversionMatrix::from_text(
            "name = x\nrow0 = 1 2 3\nrow1 = 1 2 3\nrow2 = 1 2 3\ninput = u q u\n"
        )
        .is_err());
    }

    #[test]
    fn stats_merge_is_order_independent() {
        let a = sweep_pixels((0..=255u8).map(|v| PixelRgb::new(0, v, 212)));
        let b = sweep_pixels((0..=255u8).map(|v| PixelRgb::new(0, 121, v)));
        assert_eq!(a.merge(b), b.merge(a));
        assert_eq!(a.merge(b).max_error(), 5);
        assert_eq!(a.merge(b).worst(), PixelRgb::new(0, 121, 212));
    }
}
