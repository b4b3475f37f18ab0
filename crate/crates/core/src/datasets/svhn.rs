//! SVHN (cropped digits) ingestion from the published MATLAB v5 files.
//!
//! Each `*_32x32.mat` holds two variables: `X`, a 32x32x3xN uint8 array in
//! column-major order (pixel `(row, col, chan, n)` at
//! `row + 32*col + 1024*chan + 3072*n`), and `y`, N labels where 10 stands
//! for the digit 0. The reader below handles exactly what these files use:
//! a v5 header, optionally zlib-compressed elements, and uint8/int32/double
//! numeric data inside `miMATRIX` elements.
//!
//! Parts: `extra` (531131) trains the autoencoders, `train` (73257) the
//! predictors, `test` (26032) is held out. Images stay 32x32 in storage and
//! are tiled 2x2 to 64x64 when batched.

use super::{DatasetBundle, ImageU8, Label, LabeledSample, TaskKind, TrainValSplit};
use crate::datasets::stl10::CountCheck;
use crate::errors::{Error, Result};
use std::io::Read;
use std::path::Path;

pub const EXTRA_COUNT: usize = 531_131;
pub const TRAIN_COUNT: usize = 73_257;
pub const TEST_COUNT: usize = 26_032;
pub const NUM_CLASSES: u32 = 10;
const SIDE: usize = 32;

// MAT v5 data type tags.
const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_DOUBLE: u32 = 9;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

#[derive(Debug, Clone)]
pub enum MatData {
    U8(Vec<u8>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct MatVar {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: MatData,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::dataset(self.path, msg.into())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn align8(&mut self) {
        self.pos = (self.pos + 7) & !7;
    }

    /// Reads one element tag, handling the packed small-element format.
    fn element(&mut self) -> Result<(u32, &'a [u8])> {
        let ty = self.u32()?;
        if ty >> 16 != 0 {
            // small element: size in the upper half, 4 data bytes follow
            let size = (ty >> 16) as usize;
            let ty = ty & 0xFFFF;
            let data = self.take(4)?;
            Ok((ty, &data[..size]))
        } else {
            let size = self.u32()? as usize;
            let data = self.take(size)?;
            self.align8();
            Ok((ty, data))
        }
    }
}

fn parse_matrix(path: &Path, data: &[u8]) -> Result<MatVar> {
    let mut r = Reader {
        bytes: data,
        pos: 0,
        path,
    };
    let (ty, _flags) = r.element()?;
    if ty != MI_UINT32 {
        return Err(r.err(format!("expected array flags, got type {ty}")));
    }
    let (ty, dim_bytes) = r.element()?;
    if ty != MI_INT32 {
        return Err(r.err(format!("expected dimensions, got type {ty}")));
    }
    let dims: Vec<usize> = dim_bytes
        .chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let (ty, name_bytes) = r.element()?;
    if ty != MI_INT8 {
        return Err(r.err(format!("expected array name, got type {ty}")));
    }
    let name = String::from_utf8_lossy(name_bytes).into_owned();
    let (ty, real) = r.element()?;
    let numel: usize = dims.iter().product();
    let data = match ty {
        MI_UINT8 | MI_INT8 => {
            if real.len() < numel {
                return Err(r.err(format!("{name}: {} bytes for {numel} elements", real.len())));
            }
            MatData::U8(real[..numel].to_vec())
        }
        MI_DOUBLE => {
            if real.len() < numel * 8 {
                return Err(r.err(format!("{name}: short double data")));
            }
            MatData::F64(
                real[..numel * 8]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        MI_INT32 => MatData::F64(
            real[..numel * 4]
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        ),
        other => return Err(r.err(format!("{name}: unsupported data type {other}"))),
    };
    Ok(MatVar { name, dims, data })
}

/// Parses the top-level variables of a MAT v5 file.
pub fn parse_mat5(path: &Path, bytes: &[u8]) -> Result<Vec<MatVar>> {
    if bytes.len() < 128 {
        return Err(Error::dataset(path, "file shorter than the MAT header"));
    }
    let version = u16::from_le_bytes([bytes[124], bytes[125]]);
    let endian = &bytes[126..128];
    if endian != b"IM" {
        return Err(Error::dataset(
            path,
            format!("unsupported byte order marker {endian:?} (version {version:#x})"),
        ));
    }
    let mut r = Reader {
        bytes,
        pos: 128,
        path,
    };
    let mut vars = Vec::new();
    while r.pos < r.bytes.len() {
        let (ty, data) = r.element()?;
        match ty {
            MI_COMPRESSED => {
                let mut decoded = Vec::new();
                flate2::read::ZlibDecoder::new(data)
                    .read_to_end(&mut decoded)
                    .map_err(|e| Error::dataset(path, format!("zlib: {e}")))?;
                let mut inner = Reader {
                    bytes: &decoded,
                    pos: 0,
                    path,
                };
                let (ity, idata) = inner.element()?;
                if ity == MI_MATRIX {
                    vars.push(parse_matrix(path, idata)?);
                }
            }
            MI_MATRIX => vars.push(parse_matrix(path, data)?),
            _ => {} // skip unknown top-level elements
        }
    }
    Ok(vars)
}

/// Loads one `*_32x32.mat` file into images and class ids (label 10 -> 0).
pub fn read_mat_file(path: &Path, count: CountCheck) -> Result<(Vec<ImageU8>, Vec<u32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let vars = parse_mat5(path, &bytes)?;
    let x = vars
        .iter()
        .find(|v| v.name == "X")
        .ok_or_else(|| Error::dataset(path, "missing variable X"))?;
    let y = vars
        .iter()
        .find(|v| v.name == "y")
        .ok_or_else(|| Error::dataset(path, "missing variable y"))?;
    if x.dims.len() != 4 || x.dims[0] != SIDE || x.dims[1] != SIDE || x.dims[2] != 3 {
        return Err(Error::dataset(
            path,
            format!("X dims {:?}, expected [32, 32, 3, n]", x.dims),
        ));
    }
    let n = x.dims[3];
    count.verify(path, n)?;
    let raw = match &x.data {
        MatData::U8(d) => d,
        _ => return Err(Error::dataset(path, "X must be uint8")),
    };
    let mut images = Vec::with_capacity(n);
    for i in 0..n {
        let base = i * 3 * SIDE * SIDE;
        let mut img = ImageU8::zeros(SIDE, SIDE);
        for c in 0..3 {
            for col in 0..SIDE {
                for row in 0..SIDE {
                    img.data[(c * SIDE + row) * SIDE + col] =
                        raw[base + c * SIDE * SIDE + col * SIDE + row];
                }
            }
        }
        images.push(img);
    }
    let labels: Vec<u32> = match &y.data {
        MatData::U8(d) => d.iter().map(|&b| b as u32 % 10).collect(),
        MatData::F64(d) => d.iter().map(|&v| v as u32 % 10).collect(),
    };
    if labels.len() != n {
        return Err(Error::dataset(
            path,
            format!("{} labels for {n} images", labels.len()),
        ));
    }
    Ok((images, labels))
}

/// Loads the three SVHN mat files from `dir`, enforcing published counts.
pub fn load_dir(dir: &Path, seed: u64) -> Result<DatasetBundle> {
    load_dir_with_counts(
        dir,
        seed,
        CountCheck::Expected(EXTRA_COUNT),
        CountCheck::Expected(TRAIN_COUNT),
        CountCheck::Expected(TEST_COUNT),
    )
}

pub fn load_dir_with_counts(
    dir: &Path,
    seed: u64,
    extra: CountCheck,
    train: CountCheck,
    test: CountCheck,
) -> Result<DatasetBundle> {
    let (ae_images, _) = read_mat_file(&dir.join("extra_32x32.mat"), extra)?;
    let (train_images, train_labels) = read_mat_file(&dir.join("train_32x32.mat"), train)?;
    let (test_images, test_labels) = read_mat_file(&dir.join("test_32x32.mat"), test)?;

    let as_samples = |imgs: Vec<ImageU8>, labels: Vec<u32>| -> Vec<LabeledSample> {
        imgs.into_iter()
            .zip(labels)
            .map(|(image, c)| LabeledSample {
                image,
                label: Label::Class(c),
            })
            .collect()
    };
    let pred_samples = as_samples(train_images, train_labels);
    let test_samples = as_samples(test_images, test_labels);

    let ae_split = TrainValSplit::by_sample(ae_images.len(), seed, "ae-split");
    let pred_split = TrainValSplit::by_sample(pred_samples.len(), seed, "pred-split");
    DatasetBundle::new(
        "svhn".into(),
        TaskKind::Classification,
        Some(NUM_CLASSES),
        64, // tiled at batch time
        true,
        ae_images,
        pred_samples,
        test_samples,
        ae_split,
        pred_split,
    )
}

/// Writes a minimal-but-valid MAT v5 file with `X` and `y`, for tests and
/// fixtures. `compressed` exercises the zlib path.
pub fn write_mat_fixture(
    path: &Path,
    images: &[ImageU8],
    labels: &[u8],
    compressed: bool,
) -> Result<()> {
    fn element(ty: u32, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&ty.to_le_bytes());
        out.extend_from_slice(&(data.len() as u32).to_le_bytes());
        out.extend_from_slice(data);
        while out.len() % 8 != 0 {
            out.push(0);
        }
        out
    }
    fn matrix(name: &str, dims: &[i32], class: u8, data: &[u8]) -> Vec<u8> {
        let mut body = Vec::new();
        let flags = [class as u32, 0u32];
        let mut fb = Vec::new();
        for f in flags {
            fb.extend_from_slice(&f.to_le_bytes());
        }
        body.extend(element(MI_UINT32, &fb));
        let mut db = Vec::new();
        for &d in dims {
            db.extend_from_slice(&d.to_le_bytes());
        }
        body.extend(element(MI_INT32, &db));
        body.extend(element(MI_INT8, name.as_bytes()));
        body.extend(element(MI_UINT8, data));
        element(MI_MATRIX, &body)
    }

    let n = images.len();
    // column-major [32, 32, 3, n]
    let mut x = vec![0u8; 32 * 32 * 3 * n];
    for (i, img) in images.iter().enumerate() {
        for c in 0..3 {
            for col in 0..SIDE {
                for row in 0..SIDE {
                    x[i * 3072 + c * 1024 + col * 32 + row] = img.get(c, row, col);
                }
            }
        }
    }
    let x_el = matrix("X", &[32, 32, 3, n as i32], 9, &x);
    let y_el = matrix("y", &[n as i32, 1], 9, labels);

    let mut out = Vec::new();
    let mut header = vec![0u8; 128];
    let text = b"MATLAB 5.0 MAT-file, synthetic fixture";
    header[..text.len()].copy_from_slice(text);
    header[124] = 0x00;
    header[125] = 0x01;
    header[126] = b'I';
    header[127] = b'M';
    out.extend_from_slice(&header);
    for el in [x_el, y_el] {
        if compressed {
            use flate2::{write::ZlibEncoder, Compression};
            use std::io::Write;
            let mut enc = ZlibEncoder::new(Vec::new(), Compression::default());
            enc.write_all(&el).unwrap();
            let z = enc.finish().unwrap();
            out.extend(element(MI_COMPRESSED, &z));
        } else {
            out.extend_from_slice(&el);
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use rand::Rng;

    fn random_images(n: usize, seed: u64) -> (Vec<ImageU8>, Vec<u8>) {
        let mut rng = rng_for(seed, "svhn-fix", 0);
        let imgs = (0..n)
            .map(|_| {
                let mut img = ImageU8::zeros(SIDE, SIDE);
                rng.fill(&mut img.data[..]);
                img
            })
            .collect();
        let labels = (0..n).map(|_| rng.random_range(1..=10)).collect();
        (imgs, labels)
    }

    #[test]
    fn published_counts_match_the_protocol_table() {
        assert_eq!(
            (EXTRA_COUNT, TRAIN_COUNT, TEST_COUNT),
            (531_131, 73_257, 26_032)
        );
    }

    #[test]
    fn fixture_roundtrip_uncompressed_and_compressed() {
        for compressed in [false, true] {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("train_32x32.mat");
            let (imgs, labels) = random_images(5, compressed as u64);
            write_mat_fixture(&path, &imgs, &labels, compressed).unwrap();
            let (back, back_labels) = read_mat_file(&path, CountCheck::Expected(5)).unwrap();
            assert_eq!(back, imgs);
            let expect: Vec<u32> = labels.iter().map(|&b| b as u32 % 10).collect();
            assert_eq!(back_labels, expect);
        }
    }

    #[test]
    fn label_ten_maps_to_class_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mat");
        let (imgs, _) = random_images(3, 9);
        write_mat_fixture(&path, &imgs, &[10, 1, 9], false).unwrap();
        let (_, labels) = read_mat_file(&path, CountCheck::Any).unwrap();
        assert_eq!(labels, vec![0, 1, 9]);
    }

    #[test]
    fn corrupt_file_is_rejected_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra_32x32.mat");
        std::fs::write(&path, b"not a mat file at all").unwrap();
        let err = read_mat_file(&path, CountCheck::Any).unwrap_err().to_string();
        assert!(err.contains("extra_32x32.mat"), "{err}");
    }

    #[test]
    fn bundle_tiles_to_64_at_batch_time() {
        let dir = tempfile::tempdir().unwrap();
        let (imgs, labels) = random_images(6, 4);
        write_mat_fixture(&dir.path().join("extra_32x32.mat"), &imgs, &labels, true).unwrap();
        write_mat_fixture(&dir.path().join("train_32x32.mat"), &imgs, &labels, true).unwrap();
        write_mat_fixture(&dir.path().join("test_32x32.mat"), &imgs, &labels, true).unwrap();
        let bundle = load_dir_with_counts(
            dir.path(),
            1,
            CountCheck::Any,
            CountCheck::Any,
            CountCheck::Any,
        )
        .unwrap();
        assert_eq!(bundle.image_size, 64);
        let batch = bundle.ae_batch::<f32>(&[0, 1]);
        assert_eq!(batch.dim(), (2, 3, 64, 64));
        // quadrants are identical after tiling
        for r in 0..32 {
            for col in 0..32 {
                let v = batch[[0, 0, r, col]];
                assert_eq!(batch[[0, 0, r + 32, col]], v);
                assert_eq!(batch[[0, 0, r, col + 32]], v);
                assert_eq!(batch[[0, 0, r + 32, col + 32]], v);
            }
        }
    }
}
