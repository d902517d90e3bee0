//! Browser bindings: colour conversion, histogram equalization and the
//! cycle benchmark, all on RGBA canvas buffers.

use scpsim::colorspace::{Conversion, ConversionMatrix};
use scpsim::cycle_model::{estimate, KERNEL_HISTEQ, KERNEL_YIQ};
use scpsim::histeq::Histogram;
use scpsim::{
    convert_image, histeq_image, BufferLocation, CalibrationProfile, CycleReport, ImageBuffer, Mode,
};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn report_json(reports: &[CycleReport]) -> String {
    json!({
        "profile": CalibrationProfile::s6000_paper().name,
        "reports": reports.iter().map(CycleReport::to_json).collect::<Vec<_>>(),
    })
    .to_string()
}

fn rgb_from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<ImageBuffer, JsError> {
    if rgba.len() != width * height * 4 {
        return Err(JsError::new(
            "rgba length does not match width * height * 4",
        ));
    }
    let rgb = rgba
        .chunks_exact(4)
        .flat_map(|p| [p[0], p[1], p[2]])
        .collect();
    ImageBuffer::new(width, height, 3, rgb).map_err(err)
}

fn rgba_from(img: &ImageBuffer) -> Vec<u8> {
    match img.channels() {
        1 => img.samples().iter().flat_map(|&v| [v, v, v, 255]).collect(),
        _ => img
            .samples()
            .chunks_exact(3)
            .flat_map(|p| [p[0], p[1], p[2], 255])
            .collect(),
    }
}

/// An output image plus the JSON cycle report that produced it.
#[wasm_bindgen]
pub struct Frame {
    rgba: Vec<u8>,
    report: String,
    before: Vec<u32>,
    after: Vec<u32>,
}

#[wasm_bindgen]
impl Frame {
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn report(&self) -> String {
        self.report.clone()
    }

    /// Gray-level histogram of the input (equalize only, else empty).
    #[wasm_bindgen(getter)]
    pub fn before(&self) -> Vec<u32> {
        self.before.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn after(&self) -> Vec<u32> {
        self.after.clone()
    }
}

/// Converts an RGBA buffer to YIQ on the chosen datapath and renders one
/// view of the result: `y`, `i`, `q` (offset-128 gray) or `roundtrip`
/// (back to RGB through the same datapath).
#[wasm_bindgen]
pub fn convert(
    rgba: &[u8],
    width: usize,
    height: usize,
    mode: &str,
    view: &str,
) -> Result<Frame, JsError> {
    let mode: Mode = mode.parse().map_err(err)?;
    let profile = CalibrationProfile::s6000_paper();
    let img = rgb_from_rgba(rgba, width, height)?;
    let fwd = Conversion::Matrix(ConversionMatrix::rgb2yiq());
    let (yiq, report) =
        convert_image(&img, &fwd, mode, &profile, BufferLocation::Internal).map_err(err)?;
    let mut reports = vec![report];
    let out = match view {
        "y" | "i" | "q" => {
            let c = ["y", "i", "q"].iter().position(|v| *v == view).unwrap();
            let plane = yiq.samples().chunks_exact(3).map(|p| p[c]).collect();
            ImageBuffer::new(width, height, 1, plane).map_err(err)?
        }
        "roundtrip" => {
            let inv = Conversion::Matrix(ConversionMatrix::yiq2rgb());
            let (rgb, back) =
                convert_image(&yiq, &inv, mode, &profile, BufferLocation::Internal).map_err(err)?;
            reports.push(back);
            rgb
        }
        other => return Err(JsError::new(&format!("unknown view {other:?}"))),
    };
    Ok(Frame {
        rgba: rgba_from(&out),
        report: report_json(&reports),
        before: Vec::new(),
        after: Vec::new(),
    })
}

/// Reduces an RGBA buffer to luma and equalizes its histogram.
#[wasm_bindgen]
pub fn equalize(rgba: &[u8], width: usize, height: usize, mode: &str) -> Result<Frame, JsError> {
    let mode: Mode = mode.parse().map_err(err)?;
    let rgb = rgb_from_rgba(rgba, width, height)?;
    let gray = scpsim::image_io::to_gray(&rgb).map_err(err)?;
    let profile = CalibrationProfile::s6000_paper();
    let (out, report) =
        histeq_image(&gray, mode, &profile, BufferLocation::Internal).map_err(err)?;
    let hist = |img: &ImageBuffer| {
        Histogram::from_samples(img.samples())
            .bins
            .iter()
            .map(|&b| b as u32)
            .collect()
    };
    Ok(Frame {
        rgba: rgba_from(&out),
        report: report_json(&[report]),
        before: hist(&gray),
        after: hist(&out),
    })
}

/// Cycle estimates for every mode of `kernel` (`yiq` or `histeq`) at the
/// given size, as a JSON document with one report per mode.
#[wasm_bindgen]
pub fn bench(kernel: &str, pixels: u32, buffers: &str) -> Result<String, JsError> {
    let buffers: BufferLocation = buffers.parse().map_err(err)?;
    let modes: &[Mode] = match kernel {
        KERNEL_YIQ => &[Mode::Scalar, Mode::Ei1, Mode::Ei5, Mode::Ei8],
        KERNEL_HISTEQ => &[Mode::Scalar, Mode::Isef],
        other => return Err(JsError::new(&format!("unknown kernel {other:?}"))),
    };
    let profile = CalibrationProfile::s6000_paper();
    let reports = modes
        .iter()
        .map(|&m| estimate(kernel, m, pixels as u64, &profile, buffers))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    Ok(report_json(&reports))
}
