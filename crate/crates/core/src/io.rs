//! File formats: PNG frame directories, per-frame mask images and a raw
//! little-endian tensor dump.
//!
//! Raw layout (22-byte header, then the payload):
//!
//! ```text
//! 0..4    b"TCRM"
//! 4       version (1)
//! 5..21   m, n, c, t as u32 little-endian
//! 21      element type: 1 = f32, 2 = f64
//! 22..    values, i fastest, then j, k, l
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{Dims, ImageSequence, ObservationMask};

pub const RAW_MAGIC: &[u8; 4] = b"TCRM";
pub const RAW_VERSION: u8 = 1;
pub const RAW_HEADER_LEN: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            _ => Err(Error::InvalidParameter(format!(
                "bit depth must be 8 or 16, got {bits}"
            ))),
        }
    }

    /// `2^depth − 1`.
    pub fn max_code(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// A directory of zero-padded, numbered PNG frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameDirSpec {
    pub path: PathBuf,
    /// File name prefix for written frames (`<prefix><index>.png`).
    pub prefix: String,
    /// Channel count used when saving; 1 or 3.
    pub channels: usize,
    pub depth: BitDepth,
}

impl FrameDirSpec {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            prefix: "frame_".to_owned(),
            channels: 1,
            depth: BitDepth::Eight,
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }

    pub fn with_depth(mut self, depth: BitDepth) -> Self {
        self.depth = depth;
        self
    }

    fn frame_path(&self, l: usize, t: usize) -> PathBuf {
        let width = t.saturating_sub(1).to_string().len().max(4);
        self.path.join(format!("{}{l:0width$}.png", self.prefix))
    }
}

/// PNG files in `dir`, sorted by file name.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    Ok(files)
}

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Decoded frame as `(width, height, channels, values in [0, 1])`, values
/// interleaved row-major as stored in the file.
fn decode(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, values): (usize, Vec<f64>) = match img {
        DynamicImage::ImageLuma8(b) => (
            1,
            b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        ),
        DynamicImage::ImageRgb8(b) => (
            3,
            b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        ),
        DynamicImage::ImageLuma16(b) => (
            1,
            b.into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect(),
        ),
        DynamicImage::ImageRgb16(b) => (
            3,
            b.into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect(),
        ),
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported pixel format {:?} (need 8/16-bit gray or RGB)",
                path.display(),
                other.color()
            )))
        }
    };
    Ok((w, h, c, values))
}

/// Loads every PNG in the directory as one frame, in file-name order.
/// Codes are divided by `2^depth − 1`.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<ImageSequence> {
    let dir = dir.as_ref();
    let files = list_frames(dir)?;
    let mut data = Vec::new();
    let mut shape = None;
    for path in &files {
        let (w, h, c, values) = decode(path)?;
        match shape {
            None => shape = Some((w, h, c)),
            Some(s) if s != (w, h, c) => {
                return Err(Error::Shape(format!(
                    "{} is {w}x{h} with {c} channel(s), expected {}x{} with {}",
                    path.display(),
                    s.0,
                    s.1,
                    s.2
                )))
            }
            Some(_) => {}
        }
        // File order is (y, x, channel) interleaved; tensor order is i
        // fastest within each channel plane.
        for k in 0..c {
            for j in 0..w {
                for i in 0..h {
                    data.push(values[(i * w + j) * c + k]);
                }
            }
        }
    }
    let (w, h, c) = shape.expect("at least one frame");
    ImageSequence::from_vec(Dims::new(h, w, c, files.len())?, data)
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

/// Writes one PNG per frame. Values are clamped to `[0, 1]` and rounded to
/// the nearest code.
pub fn save_frames(seq: &ImageSequence, spec: &FrameDirSpec) -> Result<Vec<PathBuf>> {
    let d = seq.dims();
    if d.c != spec.channels || !(spec.channels == 1 || spec.channels == 3) {
        return Err(Error::Shape(format!(
            "cannot write {} channel(s) as {}-channel frames",
            d.c, spec.channels
        )));
    }
    fs::create_dir_all(&spec.path)?;
    let max = spec.depth.max_code();
    let (w, h) = (d.n as u32, d.m as u32);
    let mut written = Vec::with_capacity(d.t);
    for l in 0..d.t {
        let code = |x: u32, y: u32, k: usize| quantize(seq.get(y as usize, x as usize, k, l), max);
        let img = match (spec.channels, spec.depth) {
            (1, BitDepth::Eight) => DynamicImage::ImageLuma8(ImageBuffer::from_fn(w, h, |x, y| {
                Luma([code(x, y, 0) as u8])
            })),
            (1, BitDepth::Sixteen) => {
                DynamicImage::ImageLuma16(ImageBuffer::from_fn(w, h, |x, y| {
                    Luma([code(x, y, 0) as u16])
                }))
            }
            (_, BitDepth::Eight) => DynamicImage::ImageRgb8(ImageBuffer::from_fn(w, h, |x, y| {
                Rgb([0, 1, 2].map(|k| code(x, y, k) as u8))
            })),
            (_, BitDepth::Sixteen) => {
                DynamicImage::ImageRgb16(ImageBuffer::from_fn(w, h, |x, y| {
                    Rgb([0, 1, 2].map(|k| code(x, y, k) as u16))
                }))
            }
        };
        let path = spec.frame_path(l, d.t);
        img.save(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// One 8-bit gray image per frame: 255 where observed, 0 where cloudy.
pub fn save_mask(mask: &ObservationMask, spec: &FrameDirSpec) -> Result<Vec<PathBuf>> {
    let (m, n, t) = mask.shape();
    fs::create_dir_all(&spec.path)?;
    let mut written = Vec::with_capacity(t);
    for l in 0..t {
        let img: ImageBuffer<Luma<u8>, Vec<u8>> =
            ImageBuffer::from_fn(n as u32, m as u32, |x, y| {
                Luma([if mask.is_observed(y as usize, x as usize, l) {
                    255
                } else {
                    0
                }])
            });
        let path = spec.frame_path(l, t);
        img.save(&path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        written.push(path);
    }
    Ok(written)
}

/// Reads a mask directory; any nonzero pixel in any channel is observed.
/// `expect` checks the result against a sequence's extent.
pub fn load_mask(dir: impl AsRef<Path>, expect: Option<Dims>) -> Result<ObservationMask> {
    let seq = load_frames(dir)?;
    let d = seq.dims();
    if let Some(e) = expect {
        if !(e.m == d.m && e.n == d.n && e.t == d.t) {
            return Err(Error::Shape(format!(
                "mask is {}x{}x{}, sequence is {}x{}x{}",
                d.m, d.n, d.t, e.m, e.n, e.t
            )));
        }
    }
    let mut mask = ObservationMask::for_dims(d, false);
    for l in 0..d.t {
        for j in 0..d.n {
            for i in 0..d.m {
                let on = (0..d.c).any(|k| seq.get(i, j, k, l) > 0.0);
                mask.set(i, j, l, on);
            }
        }
    }
    Ok(mask)
}

/// Element type of a raw payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawElement {
    F32,
    F64,
}

impl RawElement {
    fn code(self) -> u8 {
        match self {
            RawElement::F32 => 1,
            RawElement::F64 => 2,
        }
    }

    fn size(self) -> usize {
        match self {
            RawElement::F32 => 4,
            RawElement::F64 => 8,
        }
    }
}

pub fn write_raw(out: &mut impl Write, seq: &ImageSequence, element: RawElement) -> Result<()> {
    let d = seq.dims();
    let mut header = Vec::with_capacity(RAW_HEADER_LEN);
    header.extend_from_slice(RAW_MAGIC);
    header.push(RAW_VERSION);
    for dim in [d.m, d.n, d.c, d.t] {
        let v = u32::try_from(dim)
            .map_err(|_| Error::Format(format!("dimension {dim} exceeds u32")))?;
        header.extend_from_slice(&v.to_le_bytes());
    }
    header.push(element.code());
    out.write_all(&header)?;
    for &v in seq.as_slice() {
        match element {
            RawElement::F64 => out.write_all(&v.to_le_bytes())?,
            RawElement::F32 => out.write_all(&(v as f32).to_le_bytes())?,
        }
    }
    Ok(())
}

pub fn read_raw(input: &mut impl Read) -> Result<ImageSequence> {
    let mut header = [0u8; RAW_HEADER_LEN];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &header[..4] != RAW_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &header[..4])));
    }
    if header[4] != RAW_VERSION {
        return Err(Error::Format(format!("unknown version {}", header[4])));
    }
    let dim =
        |at: usize| u32::from_le_bytes(header[at..at + 4].try_into().expect("4 bytes")) as usize;
    let (m, n, c, t) = (dim(5), dim(9), dim(13), dim(17));
    let element = match header[21] {
        1 => RawElement::F32,
        2 => RawElement::F64,
        code => return Err(Error::Format(format!("unknown element type {code}"))),
    };
    let dims = Dims::new(m, n, c, t)?;
    let len = dims
        .len()
        .checked_mul(element.size())
        .ok_or_else(|| Error::Format("payload size overflows".into()))?;
    let mut payload = Vec::new();
    input.take(len as u64).read_to_end(&mut payload)?;
    if payload.len() != len {
        return Err(Error::Format(format!(
            "truncated payload: {} of {len} bytes",
            payload.len()
        )));
    }
    let data = match element {
        RawElement::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect(),
        RawElement::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect(),
    };
    ImageSequence::from_vec(dims, data)
}

pub fn save_raw(path: impl AsRef<Path>, seq: &ImageSequence, element: RawElement) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    write_raw(&mut out, seq, element)?;
    out.flush()?;
    Ok(())
}

pub fn load_raw(path: impl AsRef<Path>) -> Result<ImageSequence> {
    let bytes = fs::read(path)?;
    read_raw(&mut bytes.as_slice())
}

/// Loads a sequence from a `.raw`/`.tcrm` file or a frame directory.
pub fn load_sequence(path: impl AsRef<Path>) -> Result<ImageSequence> {
    let path = path.as_ref();
    if path.is_dir() {
        load_frames(path)
    } else {
        load_raw(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(dims: Dims, seed: u64) -> ImageSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageSequence::from_fn(dims, |_, _, _, _| rng.random())
    }

    #[test]
    fn white_frame_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        ImageBuffer::<Luma<u8>, _>::from_pixel(2, 2, Luma([255]))
            .save(dir.path().join("0.png"))
            .unwrap();
        let seq = load_frames(dir.path()).unwrap();
        assert_eq!(seq.dims(), Dims::new(2, 2, 1, 1).unwrap());
        assert!(seq.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn frames_sort_by_name() {
        let dir = tempfile::tempdir().unwrap();
        for (name, v) in [("003", 30u8), ("010", 100), ("002", 20)] {
            ImageBuffer::<Luma<u8>, _>::from_pixel(1, 1, Luma([v]))
                .save(dir.path().join(format!("{name}.png")))
                .unwrap();
        }
        let seq = load_frames(dir.path()).unwrap();
        let codes: Vec<u8> = seq
            .as_slice()
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect();
        assert_eq!(codes, [20, 30, 100]);
    }

    #[test]
    fn roundtrip_within_quantization() {
        let dims = Dims::new(5, 7, 3, 4).unwrap();
        let seq = random(dims, 1);
        for depth in [BitDepth::Eight, BitDepth::Sixteen] {
            for channels in [1, 3] {
                let dims = Dims::new(5, 7, channels, 4).unwrap();
                let seq = ImageSequence::from_fn(dims, |i, j, k, l| seq.get(i, j, k, l));
                let dir = tempfile::tempdir().unwrap();
                let spec = FrameDirSpec::new(dir.path())
                    .with_channels(channels)
                    .with_depth(depth);
                save_frames(&seq, &spec).unwrap();
                let back = load_frames(dir.path()).unwrap();
                assert_eq!(back.dims(), dims);
                let bound = 1.0 / (2.0 * depth.max_code()) + 1e-12;
                for (a, b) in seq.as_slice().iter().zip(back.as_slice()) {
                    assert!((a - b).abs() <= bound);
                }
            }
        }
    }

    #[test]
    fn save_clamps_and_zero_stays_zero() {
        let dims = Dims::new(1, 2, 1, 1).unwrap();
        let seq = ImageSequence::from_vec(dims, vec![1.7, -0.3]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_frames(&seq, &FrameDirSpec::new(dir.path())).unwrap();
        assert_eq!(load_frames(dir.path()).unwrap().as_slice(), &[1.0, 0.0]);

        let zero = ImageSequence::zeros(Dims::new(3, 3, 1, 2).unwrap());
        let dir = tempfile::tempdir().unwrap();
        save_frames(&zero, &FrameDirSpec::new(dir.path())).unwrap();
        assert!(load_frames(dir.path())
            .unwrap()
            .as_slice()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_frames_and_empty_dir_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_frames(dir.path()),
            Err(Error::EmptyDirectory(_))
        ));
        ImageBuffer::<Luma<u8>, _>::new(2, 2)
            .save(dir.path().join("a.png"))
            .unwrap();
        ImageBuffer::<Luma<u8>, _>::new(3, 2)
            .save(dir.path().join("b.png"))
            .unwrap();
        assert!(matches!(load_frames(dir.path()), Err(Error::Shape(_))));
    }

    #[test]
    fn raw_roundtrip_is_bit_exact() {
        let mut seq = random(Dims::new(4, 3, 2, 5).unwrap(), 2);
        seq.as_mut_slice()[0] = f64::MIN_POSITIVE / 3.0;
        seq.as_mut_slice()[1] = -0.0;
        let mut buf = Vec::new();
        write_raw(&mut buf, &seq, RawElement::F64).unwrap();
        assert_eq!(buf.len(), RAW_HEADER_LEN + 8 * seq.dims().len());
        let back = read_raw(&mut buf.as_slice()).unwrap();
        let bits = |s: &ImageSequence| s.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&seq));
    }

    #[test]
    fn raw_header_layout() {
        let seq = ImageSequence::from_vec(Dims::new(1, 1, 1, 1).unwrap(), vec![0.5]).unwrap();
        let mut buf = Vec::new();
        write_raw(&mut buf, &seq, RawElement::F64).unwrap();
        assert_eq!(buf.len(), RAW_HEADER_LEN + 8);
        assert_eq!(&buf[..5], b"TCRM\x01");
        assert_eq!(&buf[5..9], &1u32.to_le_bytes());
        assert_eq!(buf[21], 2);
        assert_eq!(&buf[22..], &0.5f64.to_le_bytes());

        let mut f32buf = Vec::new();
        write_raw(&mut f32buf, &seq, RawElement::F32).unwrap();
        assert_eq!(f32buf.len(), RAW_HEADER_LEN + 4);
        assert_eq!(read_raw(&mut f32buf.as_slice()).unwrap().as_slice(), &[0.5]);
    }

    #[test]
    fn raw_rejects_corruption() {
        let seq = random(Dims::new(2, 2, 1, 2).unwrap(), 3);
        let mut buf = Vec::new();
        write_raw(&mut buf, &seq, RawElement::F64).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            read_raw(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(
            read_raw(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
        let mut bad = buf.clone();
        bad[21] = 7;
        assert!(matches!(
            read_raw(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
        let short = &buf[..buf.len() - 1];
        assert!(matches!(read_raw(&mut &short[..]), Err(Error::Format(_))));
        assert!(matches!(read_raw(&mut &buf[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn mask_roundtrip_and_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (m, n, t) = (4, 6, 3);
        let observed = (0..m * n * t).map(|_| rng.random::<bool>()).collect();
        let mask = ObservationMask::from_vec(m, n, t, observed).unwrap();
        let dims = Dims::new(m, n, 3, t).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_mask(&mask, &FrameDirSpec::new(dir.path())).unwrap();
        assert_eq!(load_mask(dir.path(), Some(dims)).unwrap(), mask);
        assert!(matches!(
            load_mask(dir.path(), Some(Dims::new(m, n, 1, t + 1).unwrap())),
            Err(Error::Shape(_))
        ));

        for fill in [true, false] {
            let dir = tempfile::tempdir().unwrap();
            save_mask(
                &ObservationMask::new(2, 2, 2, fill),
                &FrameDirSpec::new(dir.path()),
            )
            .unwrap();
            let frames = load_frames(dir.path()).unwrap();
            let want = if fill { 1.0 } else { 0.0 };
            assert!(frames.as_slice().iter().all(|&v| v == want));
        }
    }
}
