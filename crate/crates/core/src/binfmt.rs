//! Shared framing for the binary file formats: four magic bytes, a `u16`
//! version, the total file length as `u64`, the body, and a CRC-64 of every
//! preceding byte.

use crc::{Crc, CRC_64_ECMA_182};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor4};

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_ECMA_182);
const HEADER: usize = 4 + 2 + 8;

pub(crate) fn checksum(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

pub(crate) struct BinWriter {
    buf: Vec<u8>,
}

impl BinWriter {
    pub fn new(magic: &[u8; 4], version: u16) -> Self {
        let mut buf = Vec::with_capacity(1 << 16);
        buf.extend_from_slice(magic);
        buf.extend_from_slice(&version.to_le_bytes());
        buf.extend_from_slice(&0u64.to_le_bytes());
        BinWriter { buf }
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Values at their own precision, without a count.
    pub fn scalars<T: Scalar>(&mut self, values: &[T]) {
        for &v in values {
            v.write_le(&mut self.buf);
        }
    }

    /// Shape followed by the values.
    pub fn tensor<T: Scalar>(&mut self, t: &Tensor4<T>) {
        for d in t.shape().dims() {
            self.u64(d as u64);
        }
        self.scalars(t.data());
    }

    pub fn finish(mut self) -> Vec<u8> {
        let total = (self.buf.len() + 8) as u64;
        self.buf[6..14].copy_from_slice(&total.to_le_bytes());
        let crc = checksum(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
}

pub(crate) struct BinReader<'a> {
    data: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> BinReader<'a> {
    /// Validates framing and checksum, then positions after the header.
    pub fn open(
        bytes: &'a [u8],
        magic: &[u8; 4],
        version: u16,
        what: &'static str,
    ) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != magic {
            return Err(Error::Format(format!(
                "not a {what} file (expected magic {:?})",
                String::from_utf8_lossy(magic)
            )));
        }
        if bytes.len() < HEADER + 8 {
            return Err(Error::Truncated(format!(
                "{what} file is only {} bytes",
                bytes.len()
            )));
        }
        let found = u16::from_le_bytes([bytes[4], bytes[5]]);
        if found != version {
            return Err(Error::Version {
                found,
                expected: version,
            });
        }
        let declared = u64::from_le_bytes(bytes[6..14].try_into().expect("8 bytes"));
        if (bytes.len() as u64) < declared {
            return Err(Error::Truncated(format!(
                "{what} file has {} of {declared} bytes",
                bytes.len()
            )));
        }
        let body_end = bytes.len() - 8;
        let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
        let computed = checksum(&bytes[..body_end]);
        if stored != computed || declared != bytes.len() as u64 {
            return Err(Error::Checksum { stored, computed });
        }
        Ok(BinReader {
            data: &bytes[..body_end],
            pos: HEADER,
            what,
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(Error::Format(format!("{} body ends early", self.what)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::Format(format!("{} count {v} too large", self.what)))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Format(format!("{} holds invalid UTF-8", self.what)))
    }

    pub fn scalars<T: Scalar>(&mut self, n: usize) -> Result<Vec<T>> {
        let bytes = n
            .checked_mul(T::BYTES)
            .ok_or_else(|| Error::Format(format!("{} count {n} too large", self.what)))?;
        let raw = self.take(bytes)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }

    pub fn tensor<T: Scalar>(&mut self) -> Result<Tensor4<T>> {
        let d = [self.usize()?, self.usize()?, self.usize()?, self.usize()?];
        let shape = Shape::new(d[0], d[1], d[2], d[3]);
        let data = self.scalars(shape.len())?;
        Tensor4::from_vec(shape, data)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format(format!(
                "{} has {} unexpected trailing bytes",
                self.what,
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}
