//! IDX (ubyte) tensor files as used by MNIST-style image datasets.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const UBYTE: u8 = 0x08;

/// An unsigned-byte tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxArray {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("dims {dims:?} do not match {} bytes", data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn read_from(mut reader: impl Read) -> Result<Self> {
        let mut head = [0u8; 4];
        reader.read_exact(&mut head)?;
        if head[0] != 0 || head[1] != 0 {
            return Err(Error::Format("bad IDX magic".into()));
        }
        if head[2] != UBYTE {
            return Err(Error::Format(format!("unsupported IDX element type 0x{:02x}", head[2])));
        }
        let mut dims = Vec::with_capacity(head[3] as usize);
        for _ in 0..head[3] {
            let mut d = [0u8; 4];
            reader.read_exact(&mut d)?;
            dims.push(u32::from_be_bytes(d) as usize);
        }
        let len: usize = dims.iter().product();
        let mut data = vec![0u8; len];
        reader.read_exact(&mut data)?;
        Self::new(dims, data)
    }

    pub fn write_to(&self, mut writer: impl Write) -> Result<()> {
        let rank = u8::try_from(self.dims.len()).map_err(|_| Error::Format("rank too large".into()))?;
        writer.write_all(&[0, 0, UBYTE, rank])?;
        for &d in &self.dims {
            let d = u32::try_from(d).map_err(|_| Error::Format("dimension too large".into()))?;
            writer.write_all(&d.to_be_bytes())?;
        }
        writer.write_all(&self.data)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())?;
        Self::read_from(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref())?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Images scaled to `[0, 1]`, row-major `n x features`, with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    pub features: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<u8>,
}

impl ImageSet {
    pub fn from_idx(images: &IdxArray, labels: &IdxArray) -> Result<Self> {
        if images.dims.len() < 2 || labels.dims.len() != 1 {
            return Err(Error::Format("expected an image tensor and a label vector".into()));
        }
        let n = images.dims[0];
        if labels.dims[0] != n {
            return Err(Error::Format(format!("{n} images but {} labels", labels.dims[0])));
        }
        let features = images.dims[1..].iter().product();
        Ok(Self {
            features,
            pixels: images.data.iter().map(|&b| f32::from(b) / 255.0).collect(),
            labels: labels.data.clone(),
        })
    }

    pub fn load(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        Self::from_idx(&IdxArray::load(images)?, &IdxArray::load(labels)?)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.pixels[i * self.features..(i + 1) * self.features]
    }

    /// Subset in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.features);
        for &i in indices {
            pixels.extend_from_slice(self.image(i));
        }
        Self { features: self.features, pixels, labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }
}
