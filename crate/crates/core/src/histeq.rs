//! Histogram equalization as three fabric steps: 16-lane sub-histograms with
//! lane j bound to bank j, a cumulative merge that becomes the LUT, and a
//! 16-lane lookup against per-bank LUT copies.

use thiserror::Error;

use crate::cycle_model::{
    self, BufferLocation, CalibrationProfile, CostError, CycleReport, Mode, Workload, KERNEL_HISTEQ,
};
use crate::fabric::{
    ExtensionInstruction, Fabric, FabricError, IramState, Op, ResourceLedger, ValidatedEi,
    WideRegister, BANK_ENTRIES, COUNTER_REGION_BYTES, LUT_REGION_BYTES, WR_BYTES,
};
use crate::image_io::{ImageBuffer, ImageError};

pub const LANES: usize = WR_BYTES;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HistError {
    #[error(transparent)]
    Fabric(#[from] FabricError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error("mode {0} is not a histogram equalization mode")]
    InvalidMode(Mode),
    #[error("cannot equalize an empty image")]
    EmptyImage,
    #[error("cumulative histogram ends at {last}, expected {pixels}")]
    InconsistentHistogram { last: u64, pixels: u64 },
    #[error("fabric has {0} IRAM banks, need {LANES}")]
    TooFewBanks(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub bins: [u64; 256],
}

impl Default for Histogram {
    fn default() -> Self {
        Self { bins: [0; 256] }
    }
}

impl Histogram {
    pub fn from_samples(samples: &[u8]) -> Self {
        let mut h = Self::default();
        for &s in samples {
            h.bins[s as usize] += 1;
        }
        h
    }

    pub fn total(&self) -> u64 {
        self.bins.iter().sum()
    }

    /// Running sum of the bins.
    pub fn cumulative(&self) -> Self {
        let mut acc = 0;
        Self {
            bins: self.bins.map(|b| {
                acc += b;
                acc
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EqualizationLut {
    pub entries: [u8; 256],
}

impl EqualizationLut {
    pub fn identity() -> Self {
        Self {
            entries: std::array::from_fn(|k| k as u8),
        }
    }

    pub fn constant(v: u8) -> Self {
        Self { entries: [v; 256] }
    }

    pub fn apply(&self, v: u8) -> u8 {
        self.entries[v as usize]
    }
}

/// `entries[k] = floor(255 * cum[k] / n)`.
pub fn build_lut(cum: &Histogram, pixels: u64) -> Result<EqualizationLut, HistError> {
    if pixels == 0 {
        return Err(HistError::EmptyImage);
    }
    if cum.bins[255] != pixels {
        return Err(HistError::InconsistentHistogram {
            last: cum.bins[255],
            pixels,
        });
    }
    Ok(EqualizationLut {
        entries: cum.bins.map(|c| (255 * c as u128 / pixels as u128) as u8),
    })
}

/// Sums every bank's counters and accumulates them.
pub fn merge_cumulative(iram: &IramState) -> Histogram {
    let mut h = Histogram::default();
    for bank in 0..iram.num_banks() {
        for bin in 0..BANK_ENTRIES {
            h.bins[bin] += iram.host_counter(bank, bin) as u64;
        }
    }
    h.cumulative()
}

/// Writes a full LUT copy into every bank.
pub fn lut_replicate(lut: &EqualizationLut, iram: &mut IramState) {
    for bank in 0..iram.num_banks() {
        for (k, &v) in lut.entries.iter().enumerate() {
            iram.host_set_lut(bank, k, v);
        }
    }
}

/// Two inputs: 16 gray pixels and a lane-enable register (nonzero byte =
/// lane active). Lane j increments bin `pixels[j]` of bank j.
pub fn subhist_ei() -> ExtensionInstruction {
    ExtensionInstruction::new(
        "subhist16",
        2,
        0,
        [Op::IramAccess, Op::Add, Op::Select],
        ResourceLedger {
            multipliers_used: 0,
            alu_ops_used: 2 * LANES as u32,
            iram_bytes_used: (LANES * COUNTER_REGION_BYTES) as u32,
        },
        |inputs, iram| {
            let iram = iram.ok_or_else(|| FabricError::MissingIram {
                ei: "subhist16".into(),
            })?;
            let (pixels, enable) = (inputs[0].bytes(), inputs[1].bytes());
            for lane in 0..LANES {
                if enable[lane] != 0 {
                    iram.increment_counter(lane, pixels[lane] as usize)?;
                }
            }
            Ok(vec![])
        },
    )
}

/// Lane j reads `lut[pixels[j]]` from bank j's copy.
pub fn transform_ei() -> ExtensionInstruction {
    ExtensionInstruction::new(
        "transform16",
        1,
        1,
        [Op::IramAccess],
        ResourceLedger {
            multipliers_used: 0,
            alu_ops_used: 0,
            iram_bytes_used: (LANES * LUT_REGION_BYTES) as u32,
        },
        |inputs, iram| {
            let iram = iram.ok_or_else(|| FabricError::MissingIram {
                ei: "transform16".into(),
            })?;
            let pixels = inputs[0].bytes();
            let mut out = [0u8; WR_BYTES];
            for lane in 0..LANES {
                out[lane] = iram.read_lut(lane, pixels[lane] as usize)?;
            }
            Ok(vec![WideRegister::from_bytes(out)])
        },
    )
}

fn lane_mask(active: usize) -> WideRegister {
    let mut mask = [0u8; WR_BYTES];
    mask[..active].fill(1);
    WideRegister::from_bytes(mask)
}

/// A fabric with both equalization instructions loaded.
#[derive(Debug, Clone)]
pub struct HistEqFabric {
    fabric: Fabric,
    subhist: ValidatedEi,
    transform: ValidatedEi,
}

impl HistEqFabric {
    pub fn new() -> Result<Self, HistError> {
        Self::with_fabric(Fabric::default())
    }

    pub fn with_fabric(fabric: Fabric) -> Result<Self, HistError> {
        if fabric.iram().num_banks() < LANES {
            return Err(HistError::TooFewBanks(fabric.iram().num_banks()));
        }
        let subhist = fabric.load(subhist_ei())?;
        let transform = fabric.load(transform_ei())?;
        Ok(Self {
            fabric,
            subhist,
            transform,
        })
    }

    pub fn fabric(&self) -> &Fabric {
        &self.fabric
    }

    pub fn iram_mut(&mut self) -> &mut IramState {
        self.fabric.iram_mut()
    }

    /// Counts the first `active` lanes of `pixels`.
    pub fn ei_subhist16(&mut self, pixels: WideRegister, active: usize) -> Result<(), HistError> {
        self.fabric
            .execute(&self.subhist, &[pixels, lane_mask(active.min(LANES))])?;
        Ok(())
    }

    pub fn merge_cumulative(&self) -> Histogram {
        merge_cumulative(self.fabric.iram())
    }

    pub fn lut_replicate(&mut self, lut: &EqualizationLut) {
        lut_replicate(lut, self.fabric.iram_mut());
    }

    pub fn ei_transform16(&mut self, pixels: WideRegister) -> Result<WideRegister, HistError> {
        Ok(self.fabric.execute(&self.transform, &[pixels])?[0])
    }

    /// Groups of 16 pixels issued: each covers one subhist and one transform.
    pub fn groups(&self) -> u64 {
        self.fabric.issued(self.subhist.name())
    }

    /// Peak per-invocation demand; IRAM regions of both kernels stay resident.
    pub fn resources(&self) -> (ResourceLedger, u32) {
        let (a, b) = (self.subhist.ledger(), self.transform.ledger());
        let ledger = ResourceLedger {
            multipliers_used: a.multipliers_used.max(b.multipliers_used),
            alu_ops_used: a.alu_ops_used.max(b.alu_ops_used),
            iram_bytes_used: a.iram_bytes_used + b.iram_bytes_used,
        };
        (ledger, self.subhist.stages().max(self.transform.stages()))
    }
}

/// Host-only reference path.
pub fn equalize_scalar(img: &ImageBuffer) -> Result<ImageBuffer, HistError> {
    img.expect_channels(1)?;
    let cum = Histogram::from_samples(img.samples()).cumulative();
    let lut = build_lut(&cum, img.pixels() as u64)?;
    let out = img.samples().iter().map(|&v| lut.apply(v)).collect();
    Ok(img.with_samples(1, out)?)
}

fn equalize_fabric(img: &ImageBuffer) -> Result<(ImageBuffer, HistEqFabric), HistError> {
    let mut hw = HistEqFabric::new()?;
    let samples = img.samples();
    for group in samples.chunks(LANES) {
        hw.ei_subhist16(WideRegister::pack(group)?, group.len())?;
    }
    let cum = hw.merge_cumulative();
    let lut = build_lut(&cum, img.pixels() as u64)?;
    hw.lut_replicate(&lut);
    let mut out = Vec::with_capacity(samples.len());
    for group in samples.chunks(LANES) {
        let wr = hw.ei_transform16(WideRegister::pack(group)?)?;
        out.extend_from_slice(wr.unpack(0, group.len())?);
    }
    Ok((img.with_samples(1, out)?, hw))
}

pub fn histeq_image(
    img: &ImageBuffer,
    mode: Mode,
    profile: &CalibrationProfile,
    buffers: BufferLocation,
) -> Result<(ImageBuffer, CycleReport), HistError> {
    img.expect_channels(1)?;
    let pixels = img.pixels() as u64;
    match mode {
        Mode::Scalar => {
            let out = equalize_scalar(img)?;
            let report = cycle_model::charge(
                KERNEL_HISTEQ,
                mode,
                &Workload::planned(mode, pixels),
                profile,
                buffers,
            )?;
            Ok((out, report))
        }
        Mode::Isef => {
            let (out, hw) = equalize_fabric(img)?;
            let work = Workload {
                pixels,
                ei_invocations: hw.groups(),
                scalar_pixels: 0,
            };
            let (ledger, stages) = hw.resources();
            let report = cycle_model::charge(KERNEL_HISTEQ, mode, &work, profile, buffers)?
                .with_resources(ledger, stages);
            Ok((out, report))
        }
        other => Err(HistError::InvalidMode(other)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gray(samples: Vec<u8>) -> ImageBuffer {
        let n = samples.len();
        ImageBuffer::new(n, 1, 1, samples).unwrap()
    }

    #[test]
    fn subhist_constant_lanes() {
        let mut hw = HistEqFabric::new().unwrap();
        hw.ei_subhist16(WideRegister::pack(&[5; 16]).unwrap(), 16)
            .unwrap();
        for bank in 0..16 {
            assert_eq!(hw.fabric().iram().host_counter(bank, 5), 1);
        }
    }

    #[test]
    fn subhist_ramp_lanes() {
        let mut hw = HistEqFabric::new().unwrap();
        let px: Vec<u8> = (0..16).collect();
        hw.ei_subhist16(WideRegister::pack(&px).unwrap(), 16)
            .unwrap();
        for bank in 0..16 {
            for bin in 0..256 {
                let want = u16::from(bin == bank);
                assert_eq!(hw.fabric().iram().host_counter(bank, bin), want);
            }
        }
    }

    #[test]
    fn subhist_masks_padded_lanes() {
        let mut hw = HistEqFabric::new().unwrap();
        hw.ei_subhist16(WideRegister::pack(&[9, 9, 9]).unwrap(), 3)
            .unwrap();
        assert_eq!(hw.merge_cumulative().bins[255], 3);
        assert_eq!(hw.merge_cumulative().bins[8], 0);
    }

    #[test]
    fn subhist_counter_overflow() {
        let mut hw = HistEqFabric::new().unwrap();
        hw.iram_mut().host_set_counter(0, 0, u16::MAX);
        assert_eq!(
            hw.ei_subhist16(WideRegister::zero(), 1),
            Err(HistError::Fabric(FabricError::CounterOverflow {
                bank: 0,
                bin: 0
            }))
        );
    }

    #[test]
    fn conservation_on_128x128() {
        let samples: Vec<u8> = (0..16384u32)
            .map(|k| (k.wrapping_mul(2654435761) >> 24) as u8)
            .collect();
        let mut hw = HistEqFabric::new().unwrap();
        for chunk in samples.chunks(16) {
            hw.ei_subhist16(WideRegister::pack(chunk).unwrap(), 16)
                .unwrap();
        }
        assert_eq!(hw.groups(), 1024);
        assert_eq!(
            hw.merge_cumulative(),
            Histogram::from_samples(&samples).cumulative()
        );
        assert_eq!(hw.merge_cumulative().bins[255], 16384);
    }

    #[test]
    fn merge_examples() {
        let iram = IramState::default();
        assert_eq!(merge_cumulative(&iram), Histogram::default());
        let mut hw = HistEqFabric::new().unwrap();
        hw.ei_subhist16(WideRegister::zero(), 1).unwrap();
        assert!(hw.merge_cumulative().bins.iter().all(|&c| c == 1));
    }

    #[test]
    fn lut_examples() {
        let cum = Histogram::from_samples(&[42; 10]).cumulative();
        assert_eq!(build_lut(&cum, 10).unwrap().entries[42], 255);
        let ramp: Vec<u8> = (0..=255).collect();
        let cum = Histogram::from_samples(&ramp).cumulative();
        assert_eq!(build_lut(&cum, 256).unwrap(), EqualizationLut::identity());
        let cum = Histogram::from_samples(&[0, 0, 1, 1]).cumulative();
        let lut = build_lut(&cum, 4).unwrap();
        assert_eq!((lut.entries[0], lut.entries[1]), (127, 255));
        assert_eq!(
            build_lut(&Histogram::default(), 0),
            Err(HistError::EmptyImage)
        );
        assert!(matches!(
            build_lut(&cum, 5),
            Err(HistError::InconsistentHistogram { .. })
        ));
    }

    #[test]
    fn replicate_examples() {
        let mut iram = IramState::default();
        lut_replicate(&EqualizationLut::identity(), &mut iram);
        for bank in 0..16 {
            for k in 0..256 {
                assert_eq!(iram.host_lut(bank, k), k as u8);
            }
        }
        lut_replicate(&EqualizationLut::constant(255), &mut iram);
        assert!((0..16).all(|b| (0..256).all(|k| iram.host_lut(b, k) == 255)));
        let lut = EqualizationLut {
            entries: std::array::from_fn(|k| (k * 7 % 256) as u8),
        };
        lut_replicate(&lut, &mut iram);
        for bank in 1..16 {
            assert_eq!(
                &iram.bank_bytes(bank)[512..768],
                &iram.bank_bytes(0)[512..768]
            );
        }
    }

    #[test]
    fn transform_examples() {
        let mut hw = HistEqFabric::new().unwrap();
        let px = WideRegister::pack(&[3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 9, 3]).unwrap();
        hw.lut_replicate(&EqualizationLut::identity());
        assert_eq!(hw.ei_transform16(px).unwrap(), px);
        hw.lut_replicate(&EqualizationLut::constant(255));
        assert_eq!(
            hw.ei_transform16(px).unwrap(),
            WideRegister::from_bytes([255; 16])
        );
    }

    #[test]
    fn too_few_banks() {
        let fabric = Fabric::new(Default::default(), IramState::new(8));
        assert!(matches!(
            HistEqFabric::with_fabric(fabric),
            Err(HistError::TooFewBanks(8))
        ));
    }

    #[test]
    fn published_cycle_counts() {
        let p = CalibrationProfile::s6000_paper();
        let img = ImageBuffer::new(
            128,
            128,
            1,
            (0..16384u32).map(|k| (k % 97) as u8 + 60).collect(),
        )
        .unwrap();
        let (a, ra) = histeq_image(&img, Mode::Scalar, &p, BufferLocation::Internal).unwrap();
        let (b, rb) = histeq_image(&img, Mode::Isef, &p, BufferLocation::Internal).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.cycles_total, 17_124_334);
        assert_eq!(rb.cycles_total, 3_154_353);
        assert_eq!(rb.ei_invocations, 1024);
        assert_eq!(rb.resources.iram_bytes_used, 8192 + 4096);
    }

    #[test]
    fn rejects() {
        let p = CalibrationProfile::s6000_paper();
        let rgb = ImageBuffer::filled(2, 2, 3, 0).unwrap();
        assert!(matches!(
            histeq_image(&rgb, Mode::Isef, &p, BufferLocation::Internal),
            Err(HistError::Image(ImageError::ChannelMismatch {
                expected: 1,
                got: 3
            }))
        ));
        let g = gray(vec![1, 2, 3]);
        assert_eq!(
            histeq_image(&g, Mode::Ei5, &p, BufferLocation::Internal).unwrap_err(),
            HistError::InvalidMode(Mode::Ei5)
        );
    }

    proptest! {
        #[test]
        fn modes_agree(samples in prop::collection::vec(any::<u8>(), 1..200)) {
            let img = gray(samples);
            let p = CalibrationProfile::s6000_paper();
            let (a, _) = histeq_image(&img, Mode::Scalar, &p, BufferLocation::Internal).unwrap();
            let (b, r) = histeq_image(&img, Mode::Isef, &p, BufferLocation::Internal).unwrap();
            prop_assert_eq!(a, b);
            prop_assert_eq!(r.ei_invocations, (img.pixels() as u64).div_ceil(16));
        }

        #[test]
        fn lut_is_monotone(samples in prop::collection::vec(any::<u8>(), 1..300)) {
            let n = samples.len() as u64;
            let lut = build_lut(&Histogram::from_samples(&samples).cumulative(), n).unwrap();
            prop_assert!(lut.entries.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(lut.entries[255], 255);
        }
    }
}
