//! Voxel containers and the domain types built on them.
//!
//! All grids are stored x-fastest: `index = x + width * (y + height * z)`.
//! A z-plane (one B-scan) is therefore a contiguous run of `width * height`
//! elements.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of label classes, background included.
pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Dims3 {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
}

impl Dims3 {
    pub const fn new(width: usize, height: usize, depth: usize) -> Self {
        Self {
            width,
            height,
            depth,
        }
    }

    pub fn plane_len(&self) -> usize {
        self.width * self.height
    }

    pub fn voxel_count(&self) -> usize {
        self.width * self.height * self.depth
    }

    pub fn is_valid(&self) -> bool {
        self.width >= 1 && self.height >= 1 && self.depth >= 1
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.width * (y + self.height * z)
    }

    /// Inverse of [`Dims3::index`].
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let x = idx % self.width;
        let y = (idx / self.width) % self.height;
        let z = idx / self.plane_len();
        (x, y, z)
    }
}

impl fmt::Display for Dims3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.width, self.height, self.depth)
    }
}

impl FromStr for Dims3 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(['x', 'X', ',']).map(str::trim).collect();
        let nums: Vec<usize> = parts
            .iter()
            .map(|p| p.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Argument(format!("bad dimensions {s:?}")))?;
        match nums.as_slice() {
            [w, h, d] => Ok(Dims3::new(*w, *h, *d)),
            _ => Err(Error::Argument(format!("expected WxHxD, got {s:?}"))),
        }
    }
}

/// OCT scanner manufacturer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Vendor {
    Cirrus,
    Spectralis,
    Topcon,
}

impl Vendor {
    pub const ALL: [Vendor; 3] = [Vendor::Cirrus, Vendor::Spectralis, Vendor::Topcon];

    /// Native acquisition geometries as (width, height, depth).
    pub fn native_geometries(self) -> &'static [Dims3] {
        const CIRRUS: [Dims3; 1] = [Dims3::new(512, 1024, 128)];
        const SPECTRALIS: [Dims3; 1] = [Dims3::new(512, 496, 49)];
        const TOPCON: [Dims3; 2] = [Dims3::new(512, 885, 128), Dims3::new(512, 650, 128)];
        match self {
            Vendor::Cirrus => &CIRRUS,
            Vendor::Spectralis => &SPECTRALIS,
            Vendor::Topcon => &TOPCON,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Vendor::Cirrus => "Cirrus",
            Vendor::Spectralis => "Spectralis",
            Vendor::Topcon => "Topcon",
        }
    }
}

impl fmt::Display for Vendor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Vendor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cirrus" => Ok(Vendor::Cirrus),
            "spectralis" => Ok(Vendor::Spectralis),
            "topcon" => Ok(Vendor::Topcon),
            _ => Err(Error::Argument(format!("unknown vendor {s:?}"))),
        }
    }
}

/// Per-voxel label class. The discriminant is the on-disk label value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum FluidClass {
    Background = 0,
    Irf = 1,
    Srf = 2,
    Ped = 3,
}

impl FluidClass {
    pub const ALL: [FluidClass; NUM_CLASSES] = [
        FluidClass::Background,
        FluidClass::Irf,
        FluidClass::Srf,
        FluidClass::Ped,
    ];
    /// The three fluid classes, in report column order.
    pub const FLUIDS: [FluidClass; 3] = [FluidClass::Irf, FluidClass::Srf, FluidClass::Ped];

    pub fn from_label(v: u8) -> Option<Self> {
        match v {
            0 => Some(FluidClass::Background),
            1 => Some(FluidClass::Irf),
            2 => Some(FluidClass::Srf),
            3 => Some(FluidClass::Ped),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FluidClass::Background => "Background",
            FluidClass::Irf => "IRF",
            FluidClass::Srf => "SRF",
            FluidClass::Ped => "PED",
        }
    }
}

impl fmt::Display for FluidClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FluidClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BACKGROUND" | "0" => Ok(FluidClass::Background),
            "IRF" | "1" => Ok(FluidClass::Irf),
            "SRF" | "2" => Ok(FluidClass::Srf),
            "PED" | "3" => Ok(FluidClass::Ped),
            _ => Err(Error::Argument(format!("unknown fluid class {s:?}"))),
        }
    }
}

/// A single 2D plane, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Image2<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "{}x{} image needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[x + self.width * y]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[x + self.width * y] = v;
    }

    /// Value at a possibly out-of-range coordinate, clamped to the nearest edge.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.get(cx, cy)
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Image2<U> {
        Image2 {
            width: self.width,
            height: self.height,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

/// Dense 3D grid, x-fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Volume<T> {
    dims: Dims3,
    data: Vec<T>,
}

impl<T: Copy> Volume<T> {
    pub fn new(dims: Dims3, data: Vec<T>) -> Result<Self> {
        if !dims.is_valid() {
            return Err(Error::Argument(format!("volume dims must be >= 1, got {dims}")));
        }
        if data.len() != dims.voxel_count() {
            return Err(Error::Argument(format!(
                "{dims} volume needs {} voxels, got {}",
                dims.voxel_count(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Dims3, value: T) -> Self {
        assert!(dims.is_valid(), "volume dims must be >= 1");
        Self {
            dims,
            data: vec![value; dims.voxel_count()],
        }
    }

    /// Stack equally sized planes along z.
    pub fn from_planes(planes: &[Image2<T>]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::Argument("cannot stack zero planes".into()))?;
        let dims = Dims3::new(first.width(), first.height(), planes.len());
        let mut data = Vec::with_capacity(dims.voxel_count());
        for p in planes {
            if p.width() != dims.width || p.height() != dims.height {
                return Err(Error::Argument("planes differ in size".into()));
            }
            data.extend_from_slice(p.data());
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[self.dims.index(x, y, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, v: T) {
        let i = self.dims.index(x, y, z);
        self.data[i] = v;
    }

    pub fn plane(&self, z: usize) -> &[T] {
        let n = self.dims.plane_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn plane_mut(&mut self, z: usize) -> &mut [T] {
        let n = self.dims.plane_len();
        &mut self.data[z * n..(z + 1) * n]
    }

    pub fn plane_image(&self, z: usize) -> Image2<T> {
        Image2 {
            width: self.dims.width,
            height: self.dims.height,
            data: self.plane(z).to_vec(),
        }
    }

    pub fn planes(&self) -> impl Iterator<Item = Image2<T>> + '_ {
        (0..self.dims.depth).map(move |z| self.plane_image(z))
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            data: self.data.iter().copied().map(f).collect(),
        }
    }
}

/// OCT intensity volume.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVolume<T> {
    pub id: String,
    pub voxels: Volume<T>,
    /// Voxel spacing in mm, when known.
    pub spacing: Option<[f64; 3]>,
    pub vendor: Option<Vendor>,
}

impl<T: Scalar> IntensityVolume<T> {
    pub fn new(id: impl Into<String>, voxels: Volume<T>) -> Result<Self> {
        if let Some(i) = voxels.data().iter().position(|v| !v.is_finite()) {
            let (x, y, z) = voxels.dims().coords(i);
            return Err(Error::Validation(format!(
                "non-finite intensity at ({x}, {y}, {z})"
            )));
        }
        Ok(Self {
            id: id.into(),
            voxels,
            spacing: None,
            vendor: None,
        })
    }

    pub fn dims(&self) -> Dims3 {
        self.voxels.dims()
    }

    /// Same volume with voxels converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> IntensityVolume<U> {
        IntensityVolume {
            id: self.id.clone(),
            voxels: self.voxels.map(|v| U::of(v.as_f64())),
            spacing: self.spacing,
            vendor: self.vendor,
        }
    }

    /// Copy of the metadata around a different voxel grid.
    pub fn with_voxels(&self, voxels: Volume<T>) -> Self {
        Self {
            id: self.id.clone(),
            voxels,
            spacing: self.spacing,
            vendor: self.vendor,
        }
    }
}

/// Per-voxel fluid labels in `{0, 1, 2, 3}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    pub id: String,
    voxels: Volume<u8>,
}

impl LabelVolume {
    /// Fails on the first voxel outside the label alphabet.
    pub fn new(id: impl Into<String>, voxels: Volume<u8>) -> Result<Self> {
        if let Some(i) = voxels.data().iter().position(|&v| v as usize >= NUM_CLASSES) {
            let (x, y, z) = voxels.dims().coords(i);
            return Err(Error::Validation(format!(
                "label value {} at index {i} ({x}, {y}, {z}) is outside 0..=3",
                voxels.data()[i]
            )));
        }
        Ok(Self {
            id: id.into(),
            voxels,
        })
    }

    pub fn zeros(id: impl Into<String>, dims: Dims3) -> Self {
        Self {
            id: id.into(),
            voxels: Volume::filled(dims, 0),
        }
    }

    pub fn dims(&self) -> Dims3 {
        self.voxels.dims()
    }

    pub fn voxels(&self) -> &Volume<u8> {
        &self.voxels
    }

    pub fn data(&self) -> &[u8] {
        self.voxels.data()
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> FluidClass {
        FluidClass::from_label(self.voxels.get(x, y, z)).expect("validated label")
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, cls: FluidClass) {
        self.voxels.set(x, y, z, cls.label());
    }

    pub fn plane(&self, z: usize) -> &[u8] {
        self.voxels.plane(z)
    }

    /// Mutable plane access; callers must only write values in `0..=3`.
    pub(crate) fn plane_mut(&mut self, z: usize) -> &mut [u8] {
        self.voxels.plane_mut(z)
    }

    pub fn fluid_voxel_count(&self) -> usize {
        self.data().iter().filter(|&&v| v != 0).count()
    }

    /// Voxel count per class, indexed by label value.
    pub fn class_counts(&self) -> [u64; NUM_CLASSES] {
        let mut counts = [0u64; NUM_CLASSES];
        for &v in self.data() {
            counts[v as usize] += 1;
        }
        counts
    }
}

/// Four-channel class probability field, channel-major
/// (Background, IRF, SRF, PED), each channel x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField<T> {
    pub id: String,
    dims: Dims3,
    data: Vec<T>,
}

/// Allowed deviation of a voxel's channel sum from 1.
pub const SIMPLEX_TOLERANCE: f64 = 1e-5;

impl<T: Scalar> ProbField<T> {
    /// Builds a field without checking the simplex invariant; see [`ProbField::validate`].
    pub fn from_raw(id: impl Into<String>, dims: Dims3, data: Vec<T>) -> Result<Self> {
        if !dims.is_valid() {
            return Err(Error::Argument(format!("field dims must be >= 1, got {dims}")));
        }
        if data.len() != NUM_CLASSES * dims.voxel_count() {
            return Err(Error::Argument(format!(
                "{dims} probability field needs {} values, got {}",
                NUM_CLASSES * dims.voxel_count(),
                data.len()
            )));
        }
        Ok(Self {
            id: id.into(),
            dims,
            data,
        })
    }

    pub fn uniform(id: impl Into<String>, dims: Dims3) -> Self {
        let q = T::of(1.0 / NUM_CLASSES as f64);
        Self {
            id: id.into(),
            dims,
            data: vec![q; NUM_CLASSES * dims.voxel_count()],
        }
    }

    pub fn one_hot(labels: &LabelVolume) -> Self {
        let n = labels.dims().voxel_count();
        let mut data = vec![T::zero(); NUM_CLASSES * n];
        for (i, &l) in labels.data().iter().enumerate() {
            data[l as usize * n + i] = T::one();
        }
        Self {
            id: labels.id.clone(),
            dims: labels.dims(),
            data,
        }
    }

    pub fn dims(&self) -> Dims3 {
        self.dims
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.dims.voxel_count();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.dims.voxel_count();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Class probabilities of one voxel.
    pub fn voxel(&self, idx: usize) -> [T; NUM_CLASSES] {
        let n = self.dims.voxel_count();
        std::array::from_fn(|c| self.data[c * n + idx])
    }

    /// Checks non-negativity and the per-voxel channel-sum tolerance.
    pub fn validate(&self) -> Result<()> {
        let n = self.dims.voxel_count();
        for i in 0..n {
            let p = self.voxel(i);
            let mut sum = 0.0;
            for v in p {
                let v = v.as_f64();
                if !(v >= 0.0) {
                    let (x, y, z) = self.dims.coords(i);
                    return Err(Error::Validation(format!(
                        "{}: negative or NaN probability at ({x}, {y}, {z})",
                        self.id
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                let (x, y, z) = self.dims.coords(i);
                return Err(Error::Validation(format!(
                    "{}: channel sum {sum} at ({x}, {y}, {z}) is not 1",
                    self.id
                )));
            }
        }
        Ok(())
    }
}
