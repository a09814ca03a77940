//! NIfTI-1 single-file (`.nii`, `.nii.gz`) reading and writing.
//!
//! Reading accepts either byte order and detects gzip by its magic bytes;
//! writing always produces little-endian output, gzip-compressed when the
//! path ends in `.gz`. The voxel-to-world affine comes from the sform when
//! present, else the qform, else the bare pixdim diagonal.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use nalgebra::{Matrix3, Matrix4};

use super::grid::{Affine, GridSpec};
use super::{AnyVolume, Image, LabelMap, Mask, Volume, VolumeKind, Voxel};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const INTENT_LABEL: i16 = 1002;
const UNITS_MM_SEC: u8 = 2 | 8;

mod offset {
    pub const DIM: usize = 40;
    pub const INTENT_CODE: usize = 68;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const QFORM_CODE: usize = 252;
    pub const SFORM_CODE: usize = 254;
    pub const QUATERN_B: usize = 256;
    pub const QOFFSET_X: usize = 268;
    pub const SROW_X: usize = 280;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DataType {
    U8,
    I8,
    I16,
    U16,
    I32,
    U32,
    I64,
    U64,
    F32,
    F64,
}

impl DataType {
    fn from_code(code: i16) -> Result<Self> {
        Ok(match code {
            2 => Self::U8,
            4 => Self::I16,
            8 => Self::I32,
            16 => Self::F32,
            64 => Self::F64,
            256 => Self::I8,
            512 => Self::U16,
            768 => Self::U32,
            1024 => Self::I64,
            1280 => Self::U64,
            other => return Err(Error::UnsupportedDatatype(other)),
        })
    }

    fn code(self) -> i16 {
        match self {
            Self::U8 => 2,
            Self::I16 => 4,
            Self::I32 => 8,
            Self::F32 => 16,
            Self::F64 => 64,
            Self::I8 => 256,
            Self::U16 => 512,
            Self::U32 => 768,
            Self::I64 => 1024,
            Self::U64 => 1280,
        }
    }

    fn size(self) -> usize {
        match self {
            Self::U8 | Self::I8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::I64 | Self::U64 | Self::F64 => 8,
        }
    }

    fn is_integer(self) -> bool {
        !matches!(self, Self::F32 | Self::F64)
    }
}

/// Little/big-endian field access over the raw header bytes.
struct Fields<'a> {
    buf: &'a [u8],
    big: bool,
}

impl Fields<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[at..at + N]);
        if self.big {
            b.reverse();
        }
        b
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }
}

/// Result of reading a file, with any geometry warnings raised on the way.
#[derive(Debug, Clone)]
pub struct NiftiRead {
    pub volume: AnyVolume,
    pub warnings: Vec<String>,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut raw)?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::with_capacity(raw.len() * 4);
        GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn quatern_to_linear(b: f64, c: f64, d: f64, pixdim: [f64; 3], qfac: f64) -> Matrix3<f64> {
    let mut a = 1.0 - (b * b + c * c + d * d);
    let (mut b, mut c, mut d) = (b, c, d);
    if a < 1e-7 {
        // renormalize (b,c,d) as a 180° rotation
        let s = 1.0 / (b * b + c * c + d * d).sqrt();
        b *= s;
        c *= s;
        d *= s;
        a = 0.0;
    } else {
        a = a.sqrt();
    }
    let r = Matrix3::new(
        a * a + b * b - c * c - d * d,
        2.0 * (b * c - a * d),
        2.0 * (b * d + a * c),
        2.0 * (b * c + a * d),
        a * a + c * c - b * b - d * d,
        2.0 * (c * d - a * b),
        2.0 * (b * d - a * c),
        2.0 * (c * d + a * b),
        a * a + d * d - c * c - b * b,
    );
    let scale = Matrix3::from_diagonal(&nalgebra::Vector3::new(pixdim[0], pixdim[1], qfac * pixdim[2]));
    r * scale
}

/// Unit quaternion (b, c, d) and qfac for an orthonormal direction matrix,
/// `None` when the axes are not orthogonal.
fn linear_to_quatern(dir: &Matrix3<f64>) -> Option<([f64; 3], f64)> {
    let gram = dir.transpose() * dir;
    if (gram - Matrix3::identity()).abs().max() > 1e-4 {
        return None;
    }
    let mut r = *dir;
    let qfac = if r.determinant() < 0.0 {
        r.column_mut(2).neg_mut();
        -1.0
    } else {
        1.0
    };
    let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
    let (a, b, c, d);
    if trace > 0.0 {
        let s = 0.5 * (1.0 + trace).sqrt();
        a = s;
        b = 0.25 * (r[(2, 1)] - r[(1, 2)]) / s;
        c = 0.25 * (r[(0, 2)] - r[(2, 0)]) / s;
        d = 0.25 * (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = 0.5 * (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt();
        b = s;
        a = 0.25 * (r[(2, 1)] - r[(1, 2)]) / s;
        c = 0.25 * (r[(0, 1)] + r[(1, 0)]) / s;
        d = 0.25 * (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = 0.5 * (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt();
        c = s;
        a = 0.25 * (r[(0, 2)] - r[(2, 0)]) / s;
        b = 0.25 * (r[(0, 1)] + r[(1, 0)]) / s;
        d = 0.25 * (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = 0.5 * (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt();
        d = s;
        a = 0.25 * (r[(1, 0)] - r[(0, 1)]) / s;
        b = 0.25 * (r[(0, 2)] + r[(2, 0)]) / s;
        c = 0.25 * (r[(1, 2)] + r[(2, 1)]) / s;
    }
    let sign = if a < 0.0 { -1.0 } else { 1.0 };
    Some(([sign * b, sign * c, sign * d], qfac))
}

fn decode_values(bytes: &[u8], dt: DataType, big: bool, n: usize) -> Vec<f64> {
    let sz = dt.size();
    let mut out = Vec::with_capacity(n);
    let mut tmp = [0u8; 8];
    for chunk in bytes[..n * sz].chunks_exact(sz) {
        tmp[..sz].copy_from_slice(chunk);
        if big {
            tmp[..sz].reverse();
        }
        let v = match dt {
            DataType::U8 => tmp[0] as f64,
            DataType::I8 => tmp[0] as i8 as f64,
            DataType::I16 => i16::from_le_bytes([tmp[0], tmp[1]]) as f64,
            DataType::U16 => u16::from_le_bytes([tmp[0], tmp[1]]) as f64,
            DataType::I32 => i32::from_le_bytes(tmp[..4].try_into().unwrap()) as f64,
            DataType::U32 => u32::from_le_bytes(tmp[..4].try_into().unwrap()) as f64,
            DataType::F32 => f32::from_le_bytes(tmp[..4].try_into().unwrap()) as f64,
            DataType::I64 => i64::from_le_bytes(tmp) as f64,
            DataType::U64 => u64::from_le_bytes(tmp) as f64,
            DataType::F64 => f64::from_le_bytes(tmp),
        };
        out.push(v);
    }
    out
}

/// Reads a NIfTI-1 volume, deciding image vs labelmap from its contents.
///
/// Integer data without intensity scaling and with all values in the `u32`
/// range decode as a labelmap; float data tagged with the label intent and
/// holding only non-negative integers do too. Everything else is an image.
pub fn read_nifti(path: impl AsRef<Path>) -> Result<NiftiRead> {
    let bytes = read_bytes(path.as_ref())?;
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Header(format!("file is {} bytes, shorter than a header", bytes.len())));
    }
    let big = match i32::from_le_bytes(bytes[0..4].try_into().unwrap()) {
        348 => false,
        x if x.swap_bytes() == 348 => true,
        other => return Err(Error::Header(format!("sizeof_hdr is {other}, expected 348"))),
    };
    let h = Fields { buf: &bytes, big };
    let magic = &bytes[offset::MAGIC..offset::MAGIC + 4];
    if magic != b"n+1\0" {
        return Err(Error::Header(format!("magic {magic:?} is not single-file NIfTI-1")));
    }

    let dim: Vec<i16> = (0..8).map(|d| h.i16(offset::DIM + 2 * d)).collect();
    let ndim = dim[0];
    if !(1..=7).contains(&ndim) {
        return Err(Error::Header(format!("dim[0] = {ndim}")));
    }
    if ndim < 3 || dim[4..=ndim as usize].iter().any(|&d| d != 1) {
        return Err(Error::Dimension(format!("expected a 3D volume, got dim {:?}", &dim[..=ndim as usize])));
    }
    if dim[1..4].iter().any(|&d| d <= 0) {
        return Err(Error::Header(format!("non-positive extent in dim {:?}", &dim[1..4])));
    }
    let shape = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let dt = DataType::from_code(h.i16(offset::DATATYPE))?;
    let bitpix = h.i16(offset::BITPIX);
    if bitpix as usize != dt.size() * 8 {
        return Err(Error::Header(format!("bitpix {bitpix} disagrees with datatype {}", dt.code())));
    }
    let pixdim: Vec<f64> = (0..8).map(|d| h.f32(offset::PIXDIM + 4 * d) as f64).collect();
    let vox_offset = h.f32(offset::VOX_OFFSET);
    if !(vox_offset >= HEADER_SIZE as f32) || vox_offset.fract() != 0.0 {
        return Err(Error::Header(format!("vox_offset {vox_offset}")));
    }
    let vox_offset = vox_offset as usize;
    let slope = h.f32(offset::SCL_SLOPE) as f64;
    let inter = h.f32(offset::SCL_INTER) as f64;
    let scaled = slope.is_finite() && slope != 0.0 && (slope != 1.0 || inter != 0.0);
    let intent = h.i16(offset::INTENT_CODE);

    let mut warnings = Vec::new();
    let header_spacing = [pixdim[1].abs(), pixdim[2].abs(), pixdim[3].abs()];
    let qform_code = h.i16(offset::QFORM_CODE);
    let sform_code = h.i16(offset::SFORM_CODE);
    let affine = if sform_code > 0 {
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for c in 0..4 {
                m[(r, c)] = h.f32(offset::SROW_X + 16 * r + 4 * c) as f64;
            }
        }
        Affine(m)
    } else if qform_code > 0 {
        let q: Vec<f64> = (0..3).map(|i| h.f32(offset::QUATERN_B + 4 * i) as f64).collect();
        let o: Vec<f64> = (0..3).map(|i| h.f32(offset::QOFFSET_X + 4 * i) as f64).collect();
        let qfac = if pixdim[0] < 0.0 { -1.0 } else { 1.0 };
        let lin = quatern_to_linear(q[0], q[1], q[2], header_spacing, qfac);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&lin);
        for r in 0..3 {
            m[(r, 3)] = o[r];
        }
        Affine(m)
    } else {
        let sp = header_spacing.map(|s| if s > 0.0 { s } else { 1.0 });
        Affine::diagonal(sp, [0.0; 3])
    };
    let grid = GridSpec::new(shape, affine).map_err(|e| Error::Header(e.to_string()))?;
    for a in 0..3 {
        let (hs, gs) = (header_spacing[a], grid.spacing()[a]);
        if (hs - gs).abs() > 1e-6 * gs.max(1e-12) * 10.0 {
            warnings.push(format!(
                "pixdim[{}] = {hs} disagrees with affine column norm {gs}; using the affine",
                a + 1
            ));
        }
    }

    let n = grid.len();
    let need = vox_offset + n * dt.size();
    if bytes.len() < need {
        return Err(Error::Header(format!("data truncated: need {need} bytes, file has {}", bytes.len())));
    }
    let mut values = decode_values(&bytes[vox_offset..], dt, big, n);
    if scaled {
        for v in values.iter_mut() {
            *v = *v * slope + inter;
        }
    }

    let in_label_range = |vs: &[f64]| vs.iter().all(|&v| v >= 0.0 && v <= u32::MAX as f64 && v.fract() == 0.0);
    let is_labels = if dt.is_integer() && !scaled {
        in_label_range(&values)
    } else {
        intent == INTENT_LABEL && in_label_range(&values)
    };
    let volume = if is_labels {
        AnyVolume::Labels(Volume::new(grid, values.into_iter().map(|v| v as u32).collect())?)
    } else {
        AnyVolume::Image(Volume::new(grid, values.into_iter().map(|v| v as f32).collect())?)
    };
    Ok(NiftiRead { volume, warnings })
}

/// Reads a volume, logging any geometry warnings.
pub fn read_volume(path: impl AsRef<Path>) -> Result<AnyVolume> {
    let path = path.as_ref();
    let r = read_nifti(path)?;
    for w in &r.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(r.volume)
}

/// Reads any volume as a float image.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    Ok(read_volume(path)?.into_image())
}

/// Reads a volume that must hold non-negative integer labels.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    match read_volume(path)? {
        AnyVolume::Labels(v) => Ok(v),
        AnyVolume::Image(v) => {
            if v.data().iter().all(|&x| x >= 0.0 && x.fract() == 0.0) {
                Ok(v.map(|x| x as u32))
            } else {
                Err(Error::invalid(format!(
                    "{} holds non-integer or negative values, not a labelmap",
                    path.display()
                )))
            }
        }
    }
}

/// Reads a binary mask: every nonzero voxel is foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Ok(match read_volume(path)? {
        AnyVolume::Labels(v) => v.map(|x| x != 0),
        AnyVolume::Image(v) => v.map(|x| x != 0.0),
    })
}

mod sealed {
    /// Per-type on-disk encoding; the datatype is a raw NIfTI code.
    pub trait Encode {
        fn datatype(data: &[Self]) -> i16
        where
            Self: Sized;
        fn put(self, datatype: i16, out: &mut Vec<u8>);
    }

    impl Encode for f32 {
        fn datatype(_: &[f32]) -> i16 {
            16
        }
        fn put(self, _: i16, out: &mut Vec<u8>) {
            out.extend_from_slice(&self.to_le_bytes());
        }
    }

    impl Encode for u32 {
        fn datatype(data: &[u32]) -> i16 {
            match data.iter().copied().max().unwrap_or(0) {
                0..=255 => 2,
                256..=65535 => 512,
                _ => 768,
            }
        }
        fn put(self, datatype: i16, out: &mut Vec<u8>) {
            match datatype {
                2 => out.push(self as u8),
                512 => out.extend_from_slice(&(self as u16).to_le_bytes()),
                _ => out.extend_from_slice(&self.to_le_bytes()),
            }
        }
    }

    impl Encode for bool {
        fn datatype(_: &[bool]) -> i16 {
            2
        }
        fn put(self, _: i16, out: &mut Vec<u8>) {
            out.push(self as u8);
        }
    }
}

fn encode_header(grid: &GridSpec, dt: DataType, kind: VolumeKind) -> Vec<u8> {
    let mut h = vec![0u8; VOX_OFFSET];
    let put_i16 = |h: &mut Vec<u8>, at: usize, v: i16| h[at..at + 2].copy_from_slice(&v.to_le_bytes());
    let put_f32 = |h: &mut Vec<u8>, at: usize, v: f32| h[at..at + 4].copy_from_slice(&v.to_le_bytes());

    h[0..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());
    let shape = grid.shape();
    let dims = [3, shape[0] as i16, shape[1] as i16, shape[2] as i16, 1, 1, 1, 1];
    for (d, v) in dims.iter().enumerate() {
        put_i16(&mut h, offset::DIM + 2 * d, *v);
    }
    if kind == VolumeKind::Labelmap {
        put_i16(&mut h, offset::INTENT_CODE, INTENT_LABEL);
    }
    put_i16(&mut h, offset::DATATYPE, dt.code());
    put_i16(&mut h, offset::BITPIX, (dt.size() * 8) as i16);

    let spacing = grid.spacing();
    let dir = grid.direction();
    let quat = linear_to_quatern(&dir);
    let qfac = quat.map(|(_, q)| q).unwrap_or(1.0);
    let pixdim = [qfac, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0];
    for (d, v) in pixdim.iter().enumerate() {
        put_f32(&mut h, offset::PIXDIM + 4 * d, *v as f32);
    }
    put_f32(&mut h, offset::VOX_OFFSET, VOX_OFFSET as f32);
    put_f32(&mut h, offset::SCL_SLOPE, 1.0);
    h[offset::XYZT_UNITS] = UNITS_MM_SEC;
    let descrip = format!("vibeseg {}", crate::VERSION);
    h[offset::DESCRIP..offset::DESCRIP + descrip.len()].copy_from_slice(descrip.as_bytes());

    let t = grid.affine().translation();
    if let Some((q, _)) = quat {
        put_i16(&mut h, offset::QFORM_CODE, 1);
        for i in 0..3 {
            put_f32(&mut h, offset::QUATERN_B + 4 * i, q[i] as f32);
            put_f32(&mut h, offset::QOFFSET_X + 4 * i, t[i] as f32);
        }
    }
    put_i16(&mut h, offset::SFORM_CODE, 1);
    let rows = grid.affine().rows();
    for (r, row) in rows.iter().take(3).enumerate() {
        for (c, v) in row.iter().enumerate() {
            put_f32(&mut h, offset::SROW_X + 16 * r + 4 * c, *v as f32);
        }
    }
    h[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(b"n+1\0");
    h
}

/// Element types that can be written to NIfTI.
pub trait NiftiVoxel: Voxel + sealed::Encode {}
impl<T: Voxel + sealed::Encode> NiftiVoxel for T {}

/// Writes a volume as NIfTI-1; a `.gz` suffix selects gzip compression.
///
/// Labelmaps are stored with the narrowest unsigned integer type that holds
/// their largest label and carry the NIfTI label intent code.
pub fn write_volume<T: NiftiVoxel>(v: &Volume<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if v.shape().iter().any(|&n| n > i16::MAX as usize) {
        return Err(Error::Dimension(format!("shape {:?} exceeds the NIfTI-1 limit", v.shape())));
    }
    let code = T::datatype(v.data());
    let dt = DataType::from_code(code)?;
    let mut buf = encode_header(v.grid(), dt, T::KIND);
    buf.reserve(v.len() * dt.size());
    for &x in v.data() {
        x.put(code, &mut buf);
    }
    let file = BufWriter::new(File::create(path)?);
    let gz = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    if gz {
        let mut enc = GzEncoder::new(file, Compression::fast());
        enc.write_all(&buf)?;
        enc.finish()?.flush()?;
    } else {
        let mut file = file;
        file.write_all(&buf)?;
        file.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn zero_image_round_trip() {
        let dir = tmp();
        let g = GridSpec::from_spacing([8, 8, 8], [1.4, 1.4, 3.0]).unwrap();
        let v = Image::zeros(g);
        let p = dir.path().join("z.nii");
        write_volume(&v, &p).unwrap();
        let r = read_image(&p).unwrap();
        assert_eq!(r.shape(), [8, 8, 8]);
        assert_eq!(r.data(), v.data());
        for a in 0..3 {
            assert!((r.spacing()[a] - v.spacing()[a]).abs() <= 1e-6 * v.spacing()[a]);
        }
    }

    #[test]
    fn labels_decode_as_labelmap() {
        let dir = tmp();
        let g = GridSpec::from_spacing([3, 3, 3], [1.0; 3]).unwrap();
        let v = LabelMap::from_fn(g, |[i, j, _]| [0, 1, 5][(i + j) % 3]);
        let p = dir.path().join("l.nii.gz");
        write_volume(&v, &p).unwrap();
        match read_volume(&p).unwrap() {
            AnyVolume::Labels(r) => assert_eq!(r.data(), v.data()),
            other => panic!("expected labelmap, got {:?}", other.kind()),
        }
    }

    #[test]
    fn wide_labels_use_wider_types() {
        let dir = tmp();
        let g = GridSpec::from_spacing([2, 1, 1], [1.0; 3]).unwrap();
        for top in [300u32, 70_000] {
            let v = LabelMap::new(g.clone(), vec![0, top]).unwrap();
            let p = dir.path().join(format!("w{top}.nii"));
            write_volume(&v, &p).unwrap();
            assert_eq!(read_labels(&p).unwrap().data(), &[0, top]);
        }
    }

    #[test]
    fn oblique_affine_round_trips() {
        let dir = tmp();
        let (s, c) = (0.3f64.sin(), 0.3f64.cos());
        let rows = [
            [0.0, 0.0, -3.0, 12.5],
            [-1.4 * c, 1.4 * s, 0.0, -40.0],
            [1.4 * s, 1.4 * c, 0.0, 7.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let g = GridSpec::new([4, 5, 6], Affine::from_rows(rows)).unwrap();
        let v = Image::from_fn(g, |[i, j, k]| (i * 31 + j * 7 + k) as f32);
        let p = dir.path().join("o.nii");
        write_volume(&v, &p).unwrap();
        let r = read_image(&p).unwrap();
        assert!(r.grid().approx_eq(v.grid(), 1e-6));
        assert_eq!(r.data(), v.data());
    }

    #[test]
    fn qform_only_file_decodes_same_affine() {
        let dir = tmp();
        let rows = [
            [-1.4, 0.0, 0.0, 100.0],
            [0.0, 0.0, 3.0, -20.0],
            [0.0, -1.4, 0.0, 55.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        let g = GridSpec::new([4, 4, 4], Affine::from_rows(rows)).unwrap();
        let v = Image::zeros(g);
        let p = dir.path().join("q.nii");
        write_volume(&v, &p).unwrap();
        // blank the sform so the reader must fall back to the quaternion
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[offset::SFORM_CODE..offset::SFORM_CODE + 2].copy_from_slice(&0i16.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        let r = read_image(&p).unwrap();
        assert!(r.grid().approx_eq(v.grid(), 1e-6), "{:?}", r.affine());
    }

    #[test]
    fn rejects_4d_and_accepts_singleton_4th() {
        let dir = tmp();
        let g = GridSpec::from_spacing([2, 2, 2], [1.0; 3]).unwrap();
        let v = Image::zeros(g);
        let p = dir.path().join("d.nii");
        write_volume(&v, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[offset::DIM..offset::DIM + 2].copy_from_slice(&4i16.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(read_image(&p).is_ok(), "trailing singleton dimension is squeezed");
        bytes[offset::DIM + 8..offset::DIM + 10].copy_from_slice(&2i16.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_image(&p), Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_bad_magic_and_datatype() {
        let dir = tmp();
        let g = GridSpec::from_spacing([2, 2, 2], [1.0; 3]).unwrap();
        let p = dir.path().join("m.nii");
        write_volume(&Image::zeros(g), &p).unwrap();
        let good = std::fs::read(&p).unwrap();

        let mut bad = good.clone();
        bad[offset::MAGIC] = b'x';
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(read_image(&p), Err(Error::Header(_))));

        let mut bad = good.clone();
        bad[offset::DATATYPE..offset::DATATYPE + 2].copy_from_slice(&32i16.to_le_bytes());
        std::fs::write(&p, &bad).unwrap();
        assert!(matches!(read_image(&p), Err(Error::UnsupportedDatatype(32))));

        std::fs::write(&p, &good[..100]).unwrap();
        assert!(matches!(read_image(&p), Err(Error::Header(_))));
    }

    #[test]
    fn pixdim_conflict_warns_and_prefers_affine() {
        let dir = tmp();
        let g = GridSpec::from_spacing([2, 2, 2], [1.0, 1.0, 3.0]).unwrap();
        let p = dir.path().join("c.nii");
        write_volume(&Image::zeros(g), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[offset::PIXDIM + 12..offset::PIXDIM + 16].copy_from_slice(&2.5f32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        let r = read_nifti(&p).unwrap();
        assert_eq!(r.warnings.len(), 1);
        assert_eq!(r.volume.grid().spacing()[2], 3.0);
    }

    #[test]
    fn scaled_integers_become_image() {
        let dir = tmp();
        let g = GridSpec::from_spacing([2, 1, 1], [1.0; 3]).unwrap();
        let p = dir.path().join("s.nii");
        write_volume(&LabelMap::new(g, vec![3, 4]).unwrap(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[offset::SCL_SLOPE..offset::SCL_SLOPE + 4].copy_from_slice(&0.5f32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        match read_volume(&p).unwrap() {
            AnyVolume::Image(v) => assert_eq!(v.data(), &[1.5, 2.0]),
            _ => panic!("scaled data must decode as image"),
        }
    }
}
