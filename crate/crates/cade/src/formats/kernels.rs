//! First-layer kernel mosaics as PNG or ASCII art.
//!
//! Each filter becomes one tile, normalised to its own min/max. Three-channel
//! inputs render as RGB, anything else shows channel 0; volumetric kernels
//! show their middle depth slice.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use cade_core::convnet::NetworkParams;

use crate::error::{Error, Result};

/// One tile per filter: `k×k` pixels of `channels` values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTiles {
    pub kernel: usize,
    pub channels: usize,
    pub tiles: Vec<Vec<[f64; 3]>>,
}

pub fn first_layer_tiles(params: &NetworkParams) -> Option<KernelTiles> {
    let conv = params.spec.conv.first()?;
    let weights = &params.tensors.first()?.weights;
    let [c, _, _, _] = params.spec.effective_input();
    let k = conv.kernel;
    let kd = if params.spec.is_volumetric() { k } else { 1 };
    let taps = c * kd * k * k;
    let tiles = weights
        .chunks_exact(taps)
        .map(|w| {
            let (lo, hi) = w.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
            let at = |ch: usize, y: usize, x: usize| (w[((ch * kd + kd / 2) * k + y) * k + x] - lo) * scale;
            (0..k * k)
                .map(|i| {
                    let (y, x) = (i / k, i % k);
                    if c == 3 {
                        [at(0, y, x), at(1, y, x), at(2, y, x)]
                    } else {
                        [at(0, y, x); 3]
                    }
                })
                .collect()
        })
        .collect();
    Some(KernelTiles { kernel: k, channels: c, tiles })
}

const ZOOM: usize = 6;
const GAP: usize = 2;

pub fn write_png(path: &Path, tiles: &KernelTiles) -> Result<()> {
    let n = tiles.tiles.len().max(1);
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let cell = tiles.kernel * ZOOM + GAP;
    let (w, h) = (cols * cell + GAP, rows * cell + GAP);
    let mut rgb = vec![40u8; w * h * 3];
    for (t, tile) in tiles.tiles.iter().enumerate() {
        let (ox, oy) = (GAP + (t % cols) * cell, GAP + (t / cols) * cell);
        for y in 0..tiles.kernel * ZOOM {
            for x in 0..tiles.kernel * ZOOM {
                let px = tile[(y / ZOOM) * tiles.kernel + x / ZOOM];
                let at = ((oy + y) * w + ox + x) * 3;
                for ch in 0..3 {
                    rgb[at + ch] = (px[ch] * 255.0).round() as u8;
                }
            }
        }
    }
    let file = File::create(path).map_err(Error::io(path))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::format(path, e))?;
    writer.write_image_data(&rgb).map_err(|e| Error::format(path, e))?;
    writer.finish().map_err(|e| Error::format(path, e))
}

const RAMP: &[u8] = b" .:-=+*#%@";

/// Tiles side by side, one character per tap (luminance).
pub fn to_ascii(tiles: &KernelTiles) -> String {
    let mut out = String::new();
    for row in tiles.tiles.chunks(8) {
        for y in 0..tiles.kernel {
            let line: Vec<String> = row
                .iter()
                .map(|tile| {
                    (0..tiles.kernel)
                        .map(|x| {
                            let [r, g, b] = tile[y * tiles.kernel + x];
                            let v = (r + g + b) / 3.0;
                            RAMP[((v * (RAMP.len() - 1) as f64).round() as usize).min(RAMP.len() - 1)] as char
                        })
                        .collect()
                })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cade_core::convnet::{ConvSpec, DropInference, NetworkSpec};

    fn params(input: [usize; 4]) -> NetworkParams {
        let spec = NetworkSpec {
            input,
            conv: vec![ConvSpec { filters: 3, kernel: 3, stride: 1, padding: 0, pool: None }],
            locally_connected: vec![],
            fully_connected: vec![],
            n_classes: 2,
            dropconnect_rate: 0.0,
            dropconnect_inference: DropInference::MeanField,
            init_sigma: 0.1,
            crop_px: None,
        };
        let mut p = NetworkParams::zeros(&spec).unwrap();
        for (i, w) in p.tensors[0].weights.iter_mut().enumerate() {
            *w = i as f64;
        }
        p
    }

    #[test]
    fn tiles_are_normalised_per_filter() {
        let t = first_layer_tiles(&params([1, 1, 6, 6])).unwrap();
        assert_eq!(t.tiles.len(), 3);
        assert_eq!(t.tiles[1][0], [0.0; 3]);
        assert_eq!(t.tiles[1][8], [1.0; 3]);
        assert_eq!(t.tiles[1][4], [0.5; 3]);
    }

    #[test]
    fn volumetric_kernels_show_the_middle_slice() {
        let t = first_layer_tiles(&params([1, 6, 6, 6])).unwrap();
        // 27 taps per filter, values 0..26; the middle slice holds 9..17
        assert_eq!(t.tiles[0][0], [9.0 / 26.0; 3]);
    }

    #[test]
    fn png_and_ascii_render() {
        let t = first_layer_tiles(&params([3, 1, 6, 6])).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.png");
        write_png(&path, &t).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(&path).unwrap()));
        let info = decoder.read_info().unwrap().info().clone();
        assert_eq!((info.width, info.height), (2 * 20 + 2, 2 * 20 + 2));
        let art = to_ascii(&first_layer_tiles(&params([1, 1, 6, 6])).unwrap());
        assert_eq!(art.lines().count(), 4);
        assert!(art.starts_with(' '));
    }
}
