//! MetaImage (`.mhd` header + `.raw` payload) reading and writing.
//!
//! Payloads are little-endian, x-fastest, uncompressed. Intensity volumes
//! accept `MET_UCHAR`, `MET_USHORT`, `MET_FLOAT` and `MET_DOUBLE` on read and
//! are always held as floats. Probability fields are stored as a 4D image
//! `width height depth 4`, which makes the payload channel-major.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::volume::{
    Dims3, IntensityVolume, LabelVolume, ProbField, Vendor, Volume, NUM_CLASSES,
};

/// File-name suffix of stored probability fields (`<volume_id>_prob.mhd`).
pub const PROB_SUFFIX: &str = "_prob";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    UChar,
    UShort,
    Float,
    Double,
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::UChar => 1,
            ElementType::UShort => 2,
            ElementType::Float => 4,
            ElementType::Double => 8,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            ElementType::UChar => "MET_UCHAR",
            ElementType::UShort => "MET_USHORT",
            ElementType::Float => "MET_FLOAT",
            ElementType::Double => "MET_DOUBLE",
        }
    }

    fn parse(tag: &str) -> Result<Self> {
        match tag {
            "MET_UCHAR" => Ok(ElementType::UChar),
            "MET_USHORT" => Ok(ElementType::UShort),
            "MET_FLOAT" => Ok(ElementType::Float),
            "MET_DOUBLE" => Ok(ElementType::Double),
            other => Err(Error::Format(format!("unsupported ElementType {other}"))),
        }
    }

    fn for_scalar<T: Scalar>() -> Self {
        if std::mem::size_of::<T>() == 4 {
            ElementType::Float
        } else {
            ElementType::Double
        }
    }
}

/// Parsed `.mhd` header.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaHeader {
    pub dim_size: Vec<usize>,
    pub element_type: ElementType,
    pub spacing: Option<Vec<f64>>,
    /// Absolute path of the payload file.
    pub data_file: PathBuf,
    pub header_size: u64,
}

impl MetaHeader {
    pub fn element_count(&self) -> usize {
        self.dim_size.iter().product()
    }

    pub fn payload_bytes(&self) -> u64 {
        (self.element_count() * self.element_type.size()) as u64
    }

    /// The first three dimensions as a volume geometry.
    pub fn dims3(&self) -> Result<Dims3> {
        match self.dim_size.as_slice() {
            [w, h, d, ..] => Ok(Dims3::new(*w, *h, *d)),
            _ => Err(Error::Format(format!(
                "expected at least 3 dimensions, got {:?}",
                self.dim_size
            ))),
        }
    }
}

pub fn read_header(path: &Path) -> Result<MetaHeader> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut keys = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("{}: malformed line {line:?}", path.display())))?;
        keys.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        keys.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("{}: missing {k}", path.display())))
    };

    let ndims: usize = get("NDims")?
        .parse()
        .map_err(|_| Error::Format("NDims is not an integer".into()))?;
    let dim_size: Vec<usize> = get("DimSize")?
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format("DimSize is not a list of integers".into()))?;
    if dim_size.len() != ndims || dim_size.iter().any(|&d| d == 0) {
        return Err(Error::Format(format!(
            "DimSize {dim_size:?} inconsistent with NDims {ndims}"
        )));
    }
    let element_type = ElementType::parse(get("ElementType")?)?;

    for msb_key in ["BinaryDataByteOrderMSB", "ElementByteOrderMSB"] {
        if keys.get(msb_key).is_some_and(|v| v.eq_ignore_ascii_case("true")) {
            return Err(Error::Format("big-endian payloads are not supported".into()));
        }
    }
    if keys.get("CompressedData").is_some_and(|v| v.eq_ignore_ascii_case("true")) {
        return Err(Error::Format("compressed payloads are not supported".into()));
    }
    if let Some(ch) = keys.get("ElementNumberOfChannels") {
        if ch != "1" {
            return Err(Error::Format(format!(
                "interleaved channels ({ch}) are not supported"
            )));
        }
    }
    let header_size = match keys.get("HeaderSize") {
        None => 0,
        Some(v) => v
            .parse::<u64>()
            .map_err(|_| Error::Format(format!("unsupported HeaderSize {v}")))?,
    };

    let spacing = keys
        .get("ElementSpacing")
        .or_else(|| keys.get("ElementSize"))
        .map(|s| {
            s.split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::Format("ElementSpacing is not numeric".into()))
        })
        .transpose()?;

    let data_name = get("ElementDataFile")?;
    if data_name.eq_ignore_ascii_case("LOCAL") || data_name.contains('%') || data_name == "LIST" {
        return Err(Error::Format(format!(
            "ElementDataFile {data_name} is not supported"
        )));
    }
    let data_file = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(data_name);

    Ok(MetaHeader {
        dim_size,
        element_type,
        spacing,
        data_file,
        header_size,
    })
}

fn read_payload(header: &MetaHeader) -> Result<Vec<u8>> {
    let path = &header.data_file;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = header.payload_bytes();
    let actual = (bytes.len() as u64).saturating_sub(header.header_size);
    if actual != expected {
        return Err(Error::PayloadSize {
            path: path.clone(),
            expected,
            actual,
        });
    }
    Ok(bytes[header.header_size as usize..].to_vec())
}

fn decode_f64(bytes: &[u8], ty: ElementType) -> Vec<f64> {
    match ty {
        ElementType::UChar => bytes.iter().map(|&b| b as f64).collect(),
        ElementType::UShort => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        ElementType::Float => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        ElementType::Double => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect(),
    }
}

/// Volume id of a header path: its file stem.
pub fn volume_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Vendor whose native geometry matches `dims`, if any.
pub fn vendor_of(dims: Dims3) -> Option<Vendor> {
    Vendor::ALL
        .into_iter()
        .find(|v| v.native_geometries().contains(&dims))
}

/// Reads an intensity volume into the scalar type `T`.
pub fn read_intensity<T: Scalar>(path: &Path) -> Result<IntensityVolume<T>> {
    let header = read_header(path)?;
    if header.dim_size.len() != 3 {
        return Err(Error::Format(format!(
            "{}: intensity volumes must have NDims = 3",
            path.display()
        )));
    }
    let dims = header.dims3()?;
    let payload = read_payload(&header)?;
    let values: Vec<T> = decode_f64(&payload, header.element_type)
        .into_iter()
        .map(T::of)
        .collect();
    let mut vol = IntensityVolume::new(volume_id_from_path(path), Volume::new(dims, values)?)?;
    vol.spacing = header
        .spacing
        .as_deref()
        .and_then(|s| <[f64; 3]>::try_from(s).ok());
    vol.vendor = vendor_of(dims);
    Ok(vol)
}

/// Reads an intensity volume as 32-bit floats.
pub fn read_volume(path: &Path) -> Result<IntensityVolume<f32>> {
    read_intensity(path)
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    let header = read_header(path)?;
    if header.dim_size.len() != 3 {
        return Err(Error::Format(format!(
            "{}: label volumes must have NDims = 3",
            path.display()
        )));
    }
    let dims = header.dims3()?;
    let payload = read_payload(&header)?;
    let labels: Vec<u8> = match header.element_type {
        ElementType::UChar => payload,
        ElementType::UShort => payload
            .chunks_exact(2)
            .enumerate()
            .map(|(i, c)| {
                let v = u16::from_le_bytes([c[0], c[1]]);
                u8::try_from(v).map_err(|_| {
                    Error::Validation(format!("label value {v} at index {i} is outside 0..=3"))
                })
            })
            .collect::<Result<_>>()?,
        other => {
            return Err(Error::Format(format!(
                "label volumes must be MET_UCHAR or MET_USHORT, got {}",
                other.tag()
            )))
        }
    };
    LabelVolume::new(volume_id_from_path(path), Volume::new(dims, labels)?)
}

/// Reads a stored 4-channel probability field. A trailing `_prob` is
/// stripped from the file stem to recover the volume id.
pub fn read_prob<T: Scalar>(path: &Path) -> Result<ProbField<T>> {
    let header = read_header(path)?;
    if header.dim_size.len() != 4 || header.dim_size[3] != NUM_CLASSES {
        return Err(Error::Format(format!(
            "{}: probability fields must have DimSize W H D {NUM_CLASSES}",
            path.display()
        )));
    }
    let dims = header.dims3()?;
    let payload = read_payload(&header)?;
    let values: Vec<T> = decode_f64(&payload, header.element_type)
        .into_iter()
        .map(T::of)
        .collect();
    let stem = volume_id_from_path(path);
    let id = stem.strip_suffix(PROB_SUFFIX).unwrap_or(&stem).to_string();
    ProbField::from_raw(id, dims, values)
}

/// Anything that can be serialised as a MetaImage pair.
pub trait MetaImageWrite {
    fn dim_size(&self) -> Vec<usize>;
    fn element_type(&self) -> ElementType;
    fn spacing(&self) -> Option<[f64; 3]> {
        None
    }
    fn write_payload(&self, out: &mut dyn Write) -> std::io::Result<()>;
}

fn write_scalars<T: Scalar>(values: &[T], out: &mut dyn Write) -> std::io::Result<()> {
    match ElementType::for_scalar::<T>() {
        ElementType::Float => {
            for v in values {
                out.write_all(&(v.as_f64() as f32).to_le_bytes())?;
            }
        }
        _ => {
            for v in values {
                out.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
    }
    Ok(())
}

impl<T: Scalar> MetaImageWrite for IntensityVolume<T> {
    fn dim_size(&self) -> Vec<usize> {
        let d = self.dims();
        vec![d.width, d.height, d.depth]
    }

    fn element_type(&self) -> ElementType {
        ElementType::for_scalar::<T>()
    }

    fn spacing(&self) -> Option<[f64; 3]> {
        self.spacing
    }

    fn write_payload(&self, out: &mut dyn Write) -> std::io::Result<()> {
        write_scalars(self.voxels.data(), out)
    }
}

impl MetaImageWrite for LabelVolume {
    fn dim_size(&self) -> Vec<usize> {
        let d = self.dims();
        vec![d.width, d.height, d.depth]
    }

    fn element_type(&self) -> ElementType {
        ElementType::UChar
    }

    fn write_payload(&self, out: &mut dyn Write) -> std::io::Result<()> {
        out.write_all(self.data())
    }
}

impl<T: Scalar> MetaImageWrite for ProbField<T> {
    fn dim_size(&self) -> Vec<usize> {
        let d = self.dims();
        vec![d.width, d.height, d.depth, NUM_CLASSES]
    }

    fn element_type(&self) -> ElementType {
        ElementType::for_scalar::<T>()
    }

    fn write_payload(&self, out: &mut dyn Write) -> std::io::Result<()> {
        write_scalars(self.data(), out)
    }
}

/// Writes `<stem>.mhd` (at `path`) and its `<stem>.raw` payload next to it.
pub fn write_volume<V: MetaImageWrite + ?Sized>(vol: &V, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .ok_or_else(|| Error::Argument(format!("{} has no file name", path.display())))?
        .to_string_lossy()
        .into_owned();
    let raw_name = format!("{stem}.raw");
    let raw_path = path.with_file_name(&raw_name);

    let dims = vol.dim_size();
    let spacing = match vol.spacing() {
        Some(s) => {
            let mut v = s.to_vec();
            v.resize(dims.len(), 1.0);
            v
        }
        None => vec![1.0; dims.len()],
    };
    let join = |xs: &[String]| xs.join(" ");
    let header = format!(
        "ObjectType = Image\n\
         NDims = {}\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         CompressedData = False\n\
         DimSize = {}\n\
         ElementSpacing = {}\n\
         ElementType = {}\n\
         ElementDataFile = {}\n",
        dims.len(),
        join(&dims.iter().map(|d| d.to_string()).collect::<Vec<_>>()),
        join(&spacing.iter().map(|s| s.to_string()).collect::<Vec<_>>()),
        vol.element_type().tag(),
        raw_name,
    );

    let raw = fs::File::create(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let mut w = BufWriter::new(raw);
    vol.write_payload(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&raw_path, e))?;
    fs::write(path, header).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Path of the stored probability field for `volume_id` inside `dir`.
pub fn prob_path(dir: &Path, volume_id: &str) -> PathBuf {
    dir.join(format!("{volume_id}{PROB_SUFFIX}.mhd"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn write_raw_pair(dir: &Path, name: &str, header: &str, payload: &[u8]) -> PathBuf {
        let mhd = dir.join(format!("{name}.mhd"));
        fs::write(&mhd, header).unwrap();
        fs::write(dir.join(format!("{name}.raw")), payload).unwrap();
        mhd
    }

    #[test]
    fn vendor_table() {
        assert_eq!(vendor_of(Dims3::new(512, 1024, 128)), Some(Vendor::Cirrus));
        assert_eq!(vendor_of(Dims3::new(512, 496, 49)), Some(Vendor::Spectralis));
        assert_eq!(vendor_of(Dims3::new(512, 885, 128)), Some(Vendor::Topcon));
        assert_eq!(vendor_of(Dims3::new(512, 650, 128)), Some(Vendor::Topcon));
        assert_eq!(vendor_of(Dims3::new(100, 100, 100)), None);
    }

    #[test]
    fn every_native_geometry_maps_to_one_vendor() {
        for v in Vendor::ALL {
            for g in v.native_geometries() {
                let owners: Vec<_> = Vendor::ALL
                    .into_iter()
                    .filter(|o| o.native_geometries().contains(g))
                    .collect();
                assert_eq!(owners, vec![v]);
            }
        }
    }

    #[test]
    fn minimal_volume() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw_pair(
            dir.path(),
            "one",
            "ObjectType = Image\nNDims = 3\nDimSize = 1 1 1\nElementType = MET_UCHAR\nElementDataFile = one.raw\n",
            &[0],
        );
        let v = read_volume(&p).unwrap();
        assert_eq!(v.dims(), Dims3::new(1, 1, 1));
        assert_eq!(v.voxels.data(), &[0.0]);
        assert_eq!(v.id, "one");
        assert_eq!(v.vendor, None);
    }

    #[test]
    fn ushort_payload_and_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let payload: Vec<u8> = [1u16, 700, 65535, 0].iter().flat_map(|v| v.to_le_bytes()).collect();
        let p = write_raw_pair(
            dir.path(),
            "u16",
            "NDims = 3\nDimSize = 2 2 1\nElementSpacing = 0.01 0.002 0.05\nElementType = MET_USHORT\nElementDataFile = u16.raw\n",
            &payload,
        );
        let v = read_volume(&p).unwrap();
        assert_eq!(v.voxels.data(), &[1.0, 700.0, 65535.0, 0.0]);
        assert_eq!(v.spacing, Some([0.01, 0.002, 0.05]));
    }

    #[test]
    fn truncated_payload_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw_pair(
            dir.path(),
            "short",
            "NDims = 3\nDimSize = 4 4 1\nElementType = MET_FLOAT\nElementDataFile = short.raw\n",
            &[0u8; 10],
        );
        match read_volume(&p) {
            Err(Error::PayloadSize {
                expected, actual, ..
            }) => {
                assert_eq!(expected, 64);
                assert_eq!(actual, 10);
            }
            other => panic!("expected size error, got {other:?}"),
        }
    }

    #[test]
    fn missing_raw_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gone.mhd");
        fs::write(
            &p,
            "NDims = 3\nDimSize = 1 1 1\nElementType = MET_UCHAR\nElementDataFile = gone.raw\n",
        )
        .unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Io { .. })));
    }

    #[test]
    fn unsupported_element_type() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw_pair(
            dir.path(),
            "s",
            "NDims = 3\nDimSize = 1 1 1\nElementType = MET_SHORT\nElementDataFile = s.raw\n",
            &[0, 0],
        );
        assert!(matches!(read_volume(&p), Err(Error::Format(_))));
    }

    #[test]
    fn cirrus_header_dims() {
        // Header only; payload-size checking happens after geometry parsing.
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.mhd");
        fs::write(
            &p,
            "NDims = 3\nDimSize = 512 1024 128\nElementType = MET_UCHAR\nElementDataFile = c.raw\n",
        )
        .unwrap();
        let h = read_header(&p).unwrap();
        assert_eq!(vendor_of(h.dims3().unwrap()), Some(Vendor::Cirrus));
    }

    #[test]
    fn float_roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let payload: Vec<u8> = (0..16 * 16 * 4)
            .flat_map(|_| rng.random::<f32>().to_le_bytes())
            .collect();
        let src = write_raw_pair(
            dir.path(),
            "fixture",
            "ObjectType = Image\nNDims = 3\nDimSize = 16 16 4\nElementType = MET_FLOAT\nElementDataFile = fixture.raw\n",
            &payload,
        );
        let vol = read_volume(&src).unwrap();
        let out = dir.path().join("copy.mhd");
        write_volume(&vol, &out).unwrap();
        assert_eq!(fs::read(dir.path().join("copy.raw")).unwrap(), payload);
    }

    #[test]
    fn label_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let zero = LabelVolume::zeros("spec", Dims3::new(512, 496, 49));
        let p = dir.path().join("spec.mhd");
        write_volume(&zero, &p).unwrap();
        let back = read_labels(&p).unwrap();
        assert_eq!(back, zero);
        assert_eq!(back.fluid_voxel_count(), 0);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<u8> = (0..8 * 8 * 2).map(|_| rng.random_range(0..4)).collect();
        let lv = LabelVolume::new("rand", Volume::new(Dims3::new(8, 8, 2), data).unwrap()).unwrap();
        let p = dir.path().join("rand.mhd");
        write_volume(&lv, &p).unwrap();
        assert_eq!(read_labels(&p).unwrap(), lv);
    }

    #[test]
    fn corrupt_label_reports_first_offender() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_raw_pair(
            dir.path(),
            "bad",
            "NDims = 3\nDimSize = 3 1 1\nElementType = MET_UCHAR\nElementDataFile = bad.raw\n",
            &[0, 7, 9],
        );
        let msg = read_labels(&p).unwrap_err().to_string();
        assert!(msg.contains("label value 7 at index 1"), "{msg}");
    }

    #[test]
    fn prob_roundtrip_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let field = ProbField::<f32>::uniform("vol7", Dims3::new(4, 3, 2));
        let p = prob_path(dir.path(), "vol7");
        write_volume(&field, &p).unwrap();
        let back: ProbField<f32> = read_prob(&p).unwrap();
        assert_eq!(back.id, "vol7");
        assert_eq!(back, field);
        for i in 0..back.dims().voxel_count() {
            let s: f32 = back.voxel(i).iter().sum();
            assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn f64_intensity_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let v = IntensityVolume::new(
            "d",
            Volume::new(Dims3::new(3, 1, 1), vec![0.1f64, 0.2, 1.0 / 3.0]).unwrap(),
        )
        .unwrap();
        let p = dir.path().join("d.mhd");
        write_volume(&v, &p).unwrap();
        let back: IntensityVolume<f64> = read_intensity(&p).unwrap();
        assert_eq!(back.voxels, v.voxels);
    }
}
