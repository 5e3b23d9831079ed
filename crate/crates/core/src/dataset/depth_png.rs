//! Single-channel 16-bit PNG depth images.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use super::DatasetError;
use crate::maps::{DepthMap, Map};

/// Raw sensor values, row-major. Zero marks a missing measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawDepth {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl RawDepth {
    /// Converts to millimeters: `raw · depth_scale`.
    pub fn to_depth_map(&self, depth_scale: f64) -> DepthMap {
        Map::from_values(
            self.width,
            self.height,
            self.data.iter().map(|&d| d as f64 * depth_scale).collect(),
        )
    }

    /// Quantizes a map to raw units, `round(value / depth_scale)`.
    /// Values beyond the 16-bit range saturate.
    pub fn from_map<K>(map: &Map<K>, depth_scale: f64) -> Self {
        let data = map
            .values()
            .iter()
            .map(|&v| (v / depth_scale).round().clamp(0.0, u16::MAX as f64) as u16)
            .collect();
        Self {
            width: map.width(),
            height: map.height(),
            data,
        }
    }
}

pub fn read_depth_png(path: &Path) -> Result<RawDepth, DatasetError> {
    let file = File::open(path).map_err(|e| DatasetError::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| DatasetError::format(path, e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| DatasetError::format(path, e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale {
        return Err(DatasetError::format(
            path,
            format!("expected single-channel depth, got {:?}", info.color_type),
        ));
    }
    let data = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]))
            .collect(),
        png::BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&b| b as u16).collect(),
        other => {
            return Err(DatasetError::format(
                path,
                format!("unsupported depth bit depth {other:?}"),
            ))
        }
    };
    Ok(RawDepth {
        width: info.width,
        height: info.height,
        data,
    })
}

pub fn encode_depth_png<W: Write>(raw: &RawDepth, w: W) -> Result<(), png::EncodingError> {
    let mut enc = png::Encoder::new(w, raw.width, raw.height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Sixteen);
    let mut writer = enc.write_header()?;
    let bytes: Vec<u8> = raw.data.iter().flat_map(|v| v.to_be_bytes()).collect();
    writer.write_image_data(&bytes)?;
    writer.finish()
}

pub fn write_depth_png(path: &Path, raw: &RawDepth) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_depth_png(raw, &mut w).map_err(|e| DatasetError::format(path, e.to_string()))?;
    w.flush().map_err(|e| DatasetError::io(path, e))
}

/// Writes `map` as a 16-bit PNG plus a `<name>.scale.txt` sidecar holding the
/// millimeters-per-unit factor. The scale is picked so the largest value
/// fits the 16-bit range.
pub fn dump_map<K>(map: &Map<K>, path: &Path) -> Result<f64, DatasetError> {
    let max = map.values().iter().copied().fold(0.0_f64, f64::max);
    let scale = if max > 0.0 { max / 65000.0 } else { 1.0 };
    write_depth_png(path, &RawDepth::from_map(map, scale))?;
    let sidecar = path.with_extension("scale.txt");
    std::fs::write(&sidecar, format!("{scale:?}\n")).map_err(|e| DatasetError::io(&sidecar, e))?;
    Ok(scale)
}
