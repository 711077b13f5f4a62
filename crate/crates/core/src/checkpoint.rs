//! Trained-model container: a little-endian binary file holding everything
//! needed to rebuild a working `NetworkModel`.
//!
//! The deployable artifact is the per-layer map of selected integer grey
//! levels; raw logits are optional (a level-map-only file reproduces the
//! deterministic hard forward exactly but not the training state). Layout,
//! version 1, all integers and floats little-endian:
//!
//! ```text
//! bytes  field
//! 8      magic "DONNCKPT"
//! 4      version (u32) = 1
//! 4      flags (u32): bit 0 = raw logits included, bit 1 = trained
//! 4,4,4  nx, ny, pad (u32)
//! 8,8    pitch, wavelength (f64, meters)
//! 8      layer spacing z (f64, meters)
//! 1      propagation method (u8): 0 = SpectralFresnel, 1 = ConvFresnel
//! 1      detector region count (u8)
//! 2      score slot count (u16)
//! 8      Gumbel temperature (f64)
//! 4      k = grey levels per pixel (u32)
//! 8k,8k  LUT amplitude then phase curves (f64 each)
//! per region: label (u8), slot (u16), row0/col0/height/width (u32 each)
//! 4      layer count (u32)
//! per layer:
//!   2 per pixel   hard grey-level map (u16, row-major, padded grid)
//!   8 per logit   raw logits (f64, pixel-major then level; only if bit 0)
//! 8      FNV-1a 64-bit hash of every preceding byte
//! ```
//!
//! Loading verifies the magic, version, flag bits, and trailing hash before
//! touching any payload, then rebuilds the model through the ordinary
//! constructors so every semantic invariant (grid validity, region overlap,
//! finite logits, ...) is re-checked.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, Array3};
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{DonnError, Result};
use crate::field::GridSpec;
use crate::network::{DetectorLayout, NetworkModel, Region};
use crate::propagation::PropagationMethod;
use crate::slm::{DeviceLUT, GumbelLayer};

pub const MAGIC: &[u8; 8] = b"DONNCKPT";
pub const VERSION: u32 = 1;

const FLAG_LOGITS: u32 = 1 << 0;
const FLAG_TRAINED: u32 = 1 << 1;
const KNOWN_FLAGS: u32 = FLAG_LOGITS | FLAG_TRAINED;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Serialize a model. `include_logits` keeps the full training state; without
/// it only the argmax grey levels survive (smaller file, same deployment
/// physics).
pub fn write_model<W: Write>(model: &NetworkModel, include_logits: bool, mut w: W) -> Result<()> {
    let bytes = serialize(model, include_logits)?;
    w.write_all(&bytes)?;
    Ok(())
}

pub fn save_model<P: AsRef<Path>>(
    model: &NetworkModel,
    include_logits: bool,
    path: P,
) -> Result<()> {
    let bytes = serialize(model, include_logits)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model<P: AsRef<Path>>(path: P) -> Result<NetworkModel> {
    deserialize(&fs::read(path)?)
}

pub fn read_model(bytes: &[u8]) -> Result<NetworkModel> {
    deserialize(bytes)
}

fn serialize(model: &NetworkModel, include_logits: bool) -> Result<Vec<u8>> {
    let grid = model.grid();
    let lut = model.layers()[0].lut();
    let k = lut.levels();
    if k > u16::MAX as usize + 1 {
        return Err(DonnError::Checkpoint(format!(
            "{k} grey levels exceed the u16 level map"
        )));
    }
    let detectors = model.detectors();
    if detectors.regions().len() > u8::MAX as usize {
        return Err(DonnError::Checkpoint(format!(
            "{} detector regions exceed the u8 region count",
            detectors.regions().len()
        )));
    }

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.write_u32::<LittleEndian>(VERSION).unwrap();
    let mut flags = 0u32;
    if include_logits {
        flags |= FLAG_LOGITS;
    }
    if model.is_trained() {
        flags |= FLAG_TRAINED;
    }
    buf.write_u32::<LittleEndian>(flags).unwrap();
    buf.write_u32::<LittleEndian>(grid.nx as u32).unwrap();
    buf.write_u32::<LittleEndian>(grid.ny as u32).unwrap();
    buf.write_u32::<LittleEndian>(grid.pad as u32).unwrap();
    buf.write_f64::<LittleEndian>(grid.pitch).unwrap();
    buf.write_f64::<LittleEndian>(grid.wavelength).unwrap();
    buf.write_f64::<LittleEndian>(model.distance()).unwrap();
    buf.push(match model.method() {
        PropagationMethod::SpectralFresnel => 0,
        PropagationMethod::ConvFresnel => 1,
    });
    buf.push(detectors.regions().len() as u8);
    buf.write_u16::<LittleEndian>(detectors.num_slots() as u16).unwrap();
    buf.write_f64::<LittleEndian>(model.layers()[0].temperature()).unwrap();
    buf.write_u32::<LittleEndian>(k as u32).unwrap();
    for &a in lut.amplitudes() {
        buf.write_f64::<LittleEndian>(a).unwrap();
    }
    for &p in lut.phases() {
        buf.write_f64::<LittleEndian>(p).unwrap();
    }
    for (i, r) in detectors.regions().iter().enumerate() {
        buf.push(model.labels()[i]);
        buf.write_u16::<LittleEndian>(detectors.slots()[i] as u16).unwrap();
        for v in [r.row0, r.col0, r.height, r.width] {
            buf.write_u32::<LittleEndian>(v as u32).unwrap();
        }
    }
    buf.write_u32::<LittleEndian>(model.num_layers() as u32).unwrap();
    for layer in model.layers() {
        for &level in layer.hard_levels(None).iter() {
            buf.write_u16::<LittleEndian>(level as u16).unwrap();
        }
        if include_logits {
            for &v in layer.logits().iter() {
                buf.write_f64::<LittleEndian>(v).unwrap();
            }
        }
    }
    let hash = fnv1a(&buf);
    buf.write_u64::<LittleEndian>(hash).unwrap();
    Ok(bytes_sanity(buf))
}

// Serialization writes only fixed-width fields, so the length is fully
// determined; keep a debug check that the writer stayed in sync with the
// documented layout.
fn bytes_sanity(buf: Vec<u8>) -> Vec<u8> {
    debug_assert!(buf.len() > MAGIC.len() + 12);
    buf
}

fn read_u32(cursor: &mut &[u8], what: &str) -> Result<u32> {
    cursor
        .read_u32::<LittleEndian>()
        .map_err(|_| DonnError::Checkpoint(format!("truncated before {what}")))
}

fn read_u16(cursor: &mut &[u8], what: &str) -> Result<u16> {
    cursor
        .read_u16::<LittleEndian>()
        .map_err(|_| DonnError::Checkpoint(format!("truncated before {what}")))
}

fn read_u8(cursor: &mut &[u8], what: &str) -> Result<u8> {
    cursor
        .read_u8()
        .map_err(|_| DonnError::Checkpoint(format!("truncated before {what}")))
}

fn read_f64(cursor: &mut &[u8], what: &str) -> Result<f64> {
    cursor
        .read_f64::<LittleEndian>()
        .map_err(|_| DonnError::Checkpoint(format!("truncated before {what}")))
}

fn deserialize(bytes: &[u8]) -> Result<NetworkModel> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(DonnError::Checkpoint(format!(
            "{} bytes is too short for a checkpoint",
            bytes.len()
        )));
    }
    let (payload, trailer) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    let actual = fnv1a(payload);
    if stored != actual {
        return Err(DonnError::Checkpoint(format!(
            "integrity hash mismatch (stored {stored:#018x}, computed {actual:#018x})"
        )));
    }

    let mut cursor = payload;
    if &cursor[..MAGIC.len()] != MAGIC {
        return Err(DonnError::Checkpoint("bad magic, not a model checkpoint".into()));
    }
    cursor = &cursor[MAGIC.len()..];
    let version = read_u32(&mut cursor, "version")?;
    if version != VERSION {
        return Err(DonnError::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads {VERSION})"
        )));
    }
    let flags = read_u32(&mut cursor, "flags")?;
    if flags & !KNOWN_FLAGS != 0 {
        return Err(DonnError::Checkpoint(format!(
            "unknown flag bits {:#010x}",
            flags & !KNOWN_FLAGS
        )));
    }
    let has_logits = flags & FLAG_LOGITS != 0;
    let trained = flags & FLAG_TRAINED != 0;

    let nx = read_u32(&mut cursor, "nx")? as usize;
    let ny = read_u32(&mut cursor, "ny")? as usize;
    let pad = read_u32(&mut cursor, "pad")? as usize;
    let pitch = read_f64(&mut cursor, "pitch")?;
    let wavelength = read_f64(&mut cursor, "wavelength")?;
    let grid = GridSpec::new(nx, ny, pitch, wavelength, pad)?;
    let z = read_f64(&mut cursor, "layer spacing")?;
    let method = match read_u8(&mut cursor, "propagation method")? {
        0 => PropagationMethod::SpectralFresnel,
        1 => PropagationMethod::ConvFresnel,
        m => {
            return Err(DonnError::Checkpoint(format!("unknown propagation method {m}")));
        }
    };
    let num_regions = read_u8(&mut cursor, "region count")? as usize;
    let num_slots = read_u16(&mut cursor, "slot count")? as usize;
    let temperature = read_f64(&mut cursor, "temperature")?;
    let k = read_u32(&mut cursor, "grey level count")? as usize;
    if k == 0 || k > u16::MAX as usize + 1 {
        return Err(DonnError::Checkpoint(format!("implausible grey level count {k}")));
    }
    let mut amplitudes = Vec::with_capacity(k);
    for i in 0..k {
        amplitudes.push(read_f64(&mut cursor, &format!("LUT amplitude {i}"))?);
    }
    let mut phases = Vec::with_capacity(k);
    for i in 0..k {
        phases.push(read_f64(&mut cursor, &format!("LUT phase {i}"))?);
    }
    let lut = DeviceLUT::new(amplitudes, phases)?;

    let mut labels = Vec::with_capacity(num_regions);
    let mut regions = Vec::with_capacity(num_regions);
    let mut slots = Vec::with_capacity(num_regions);
    for i in 0..num_regions {
        labels.push(read_u8(&mut cursor, &format!("label {i}"))?);
        slots.push(read_u16(&mut cursor, &format!("slot {i}"))? as usize);
        let mut geom = [0usize; 4];
        for (g, what) in geom.iter_mut().zip(["row0", "col0", "height", "width"]) {
            *g = read_u32(&mut cursor, &format!("region {i} {what}"))? as usize;
        }
        regions.push(Region { row0: geom[0], col0: geom[1], height: geom[2], width: geom[3] });
    }
    let detectors = DetectorLayout::new(regions, slots, num_slots)?;

    let num_layers = read_u32(&mut cursor, "layer count")? as usize;
    if num_layers == 0 || num_layers > 1024 {
        return Err(DonnError::Checkpoint(format!("implausible layer count {num_layers}")));
    }
    let (pny, pnx) = grid.padded_shape();
    let pixels = pny * pnx;
    let mut layers = Vec::with_capacity(num_layers);
    for l in 0..num_layers {
        let need = pixels * 2;
        if cursor.len() < need {
            return Err(DonnError::Checkpoint(format!("truncated in layer {l} level map")));
        }
        let mut levels = Array2::zeros((pny, pnx));
        for level in levels.iter_mut() {
            *level = read_u16(&mut cursor, "level map")? as usize;
        }
        let layer = if has_logits {
            let need = pixels * k * 8;
            if cursor.len() < need {
                return Err(DonnError::Checkpoint(format!("truncated in layer {l} logits")));
            }
            let mut logits = Array3::zeros((pny, pnx, k));
            for v in logits.iter_mut() {
                *v = read_f64(&mut cursor, "logits")?;
            }
            GumbelLayer::from_logits(grid, lut.clone(), temperature, logits)?
        } else {
            GumbelLayer::from_levels(grid, lut.clone(), temperature, &levels)?
        };
        layers.push(layer);
    }
    if !cursor.is_empty() {
        return Err(DonnError::Checkpoint(format!(
            "{} unexpected trailing bytes",
            cursor.len()
        )));
    }

    let mut model = NetworkModel::new(grid, layers, z, method, detectors, labels)?;
    if trained {
        model.mark_trained();
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slm::encode_image;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_model(trained: bool) -> NetworkModel {
        let grid = GridSpec::square(8, 36e-6, 532e-9, 2).unwrap();
        let lut = DeviceLUT::phase_mode(4);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layers = vec![
            GumbelLayer::init(grid, lut.clone(), 2.0, &mut rng).unwrap(),
            GumbelLayer::init(grid, lut, 2.0, &mut rng).unwrap(),
        ];
        let detectors = DetectorLayout::evenly_spaced_with_size(&grid, &[0, 1, 7], 2, 2).unwrap();
        let mut model = NetworkModel::new(
            grid,
            layers,
            0.2794,
            PropagationMethod::ConvFresnel,
            detectors,
            vec![0, 1, 7],
        )
        .unwrap();
        if trained {
            model.mark_trained();
        }
        model
    }

    fn toy_image(grid: GridSpec) -> crate::slm::EncodedImage {
        let raw = Array2::from_shape_fn((8, 8), |(r, c)| if (r + c) % 3 == 0 { 1.0 } else { 0.0 });
        encode_image(&raw, grid).unwrap()
    }

    /// Recompute the trailing hash after a deliberate mutation, so tests hit
    /// the targeted validation rather than the integrity check.
    fn rehash(bytes: &mut [u8]) {
        let n = bytes.len() - 8;
        let h = fnv1a(&bytes[..n]);
        bytes[n..].copy_from_slice(&h.to_le_bytes());
    }

    fn parse_error(bytes: &[u8]) -> String {
        match read_model(bytes) {
            Ok(_) => panic!("checkpoint unexpectedly parsed"),
            Err(e) => e.to_string(),
        }
    }

    #[test]
    fn round_trip_with_logits_preserves_everything() {
        let model = toy_model(true);
        let mut buf = Vec::new();
        write_model(&model, true, &mut buf).unwrap();
        let loaded = read_model(&buf).unwrap();

        assert_eq!(loaded.grid(), model.grid());
        assert_eq!(loaded.distance(), model.distance());
        assert_eq!(loaded.method(), model.method());
        assert_eq!(loaded.labels(), model.labels());
        assert_eq!(loaded.detectors(), model.detectors());
        assert!(loaded.is_trained());
        for (a, b) in loaded.layers().iter().zip(model.layers()) {
            assert_eq!(a.temperature(), b.temperature());
            assert_eq!(a.lut().amplitudes(), b.lut().amplitudes());
            assert_eq!(a.lut().phases(), b.lut().phases());
            assert_eq!(a.logits(), b.logits());
        }

        let image = toy_image(*model.grid());
        let before = model.forward_deterministic(&image).unwrap();
        let after = loaded.forward_deterministic(&image).unwrap();
        assert_eq!(before.score, after.score);
    }

    #[test]
    fn level_map_only_reproduces_hard_forward() {
        let model = toy_model(true);
        let mut full = Vec::new();
        write_model(&model, true, &mut full).unwrap();
        let mut lean = Vec::new();
        write_model(&model, false, &mut lean).unwrap();
        assert!(lean.len() < full.len());

        let loaded = read_model(&lean).unwrap();
        for (a, b) in loaded.layers().iter().zip(model.layers()) {
            assert_eq!(a.hard_levels(None), b.hard_levels(None));
        }
        let image = toy_image(*model.grid());
        let before = model.forward_deterministic(&image).unwrap();
        let after = loaded.forward_deterministic(&image).unwrap();
        assert_eq!(before.score, after.score);
    }

    #[test]
    fn trained_flag_round_trips() {
        let model = toy_model(false);
        let mut buf = Vec::new();
        write_model(&model, false, &mut buf).unwrap();
        assert!(!read_model(&buf).unwrap().is_trained());
    }

    #[test]
    fn save_and_load_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = toy_model(true);
        save_model(&model, true, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.labels(), model.labels());
    }

    #[test]
    fn rejects_wrong_version_magic_flags_method() {
        let model = toy_model(true);
        let mut buf = Vec::new();
        write_model(&model, false, &mut buf).unwrap();

        let mut wrong_version = buf.clone();
        wrong_version[8] = 9;
        rehash(&mut wrong_version);
        let err = parse_error(&wrong_version);
        assert!(err.contains("version 9"), "{err}");

        let mut wrong_magic = buf.clone();
        wrong_magic[0] = b'X';
        rehash(&mut wrong_magic);
        let err = parse_error(&wrong_magic);
        assert!(err.contains("magic"), "{err}");

        let mut wrong_flags = buf.clone();
        wrong_flags[12] |= 0x80;
        rehash(&mut wrong_flags);
        let err = parse_error(&wrong_flags);
        assert!(err.contains("flag"), "{err}");

        // method byte sits right after the three u32 dims and three f64s
        let method_at = 8 + 4 + 4 + 12 + 24;
        let mut wrong_method = buf.clone();
        wrong_method[method_at] = 7;
        rehash(&mut wrong_method);
        let err = parse_error(&wrong_method);
        assert!(err.contains("propagation method 7"), "{err}");
    }

    #[test]
    fn corruption_and_truncation_always_error() {
        let model = toy_model(true);
        let mut buf = Vec::new();
        write_model(&model, true, &mut buf).unwrap();

        let mut corrupt = buf.clone();
        corrupt[200] ^= 0x55;
        let err = parse_error(&corrupt);
        assert!(err.contains("hash"), "{err}");

        let mut extended = buf.clone();
        extended.push(0);
        assert!(read_model(&extended).is_err());

        for n in 0..buf.len() {
            assert!(read_model(&buf[..n]).is_err(), "prefix of {n} bytes parsed");
        }
    }
}
