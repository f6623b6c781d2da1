//! Little-endian encoding helpers shared by the binary file formats
//! (weight archive, stream-state snapshots). All multi-byte values are
//! little-endian with explicit sizes; scalars of the generic float type
//! travel as f64 so the formats are identical for f32 and f64 models.

use crate::error::{Error, Result};
use crate::num::{lit, Real};

pub fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_scalar<F: Real>(out: &mut Vec<u8>, v: F) {
    put_f64(out, v.to_f64().unwrap());
}

pub fn put_slice<F: Real>(out: &mut Vec<u8>, vs: &[F]) {
    for v in vs {
        put_scalar(out, *v);
    }
}

pub fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

/// Sequential reader with bounds-checked takes.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::data(format!(
                "truncated input: wanted {n} bytes, {} left",
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn scalar<F: Real>(&mut self) -> Result<F> {
        Ok(lit(self.f64()?))
    }

    pub fn scalars<F: Real>(&mut self, n: usize) -> Result<Vec<F>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.scalar()?);
        }
        Ok(out)
    }

    pub fn scalars_into<F: Real>(&mut self, dst: &mut [F]) -> Result<()> {
        for d in dst.iter_mut() {
            *d = self.scalar()?;
        }
        Ok(())
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::data("invalid utf-8 in string field".to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_scalars_and_strings() {
        let mut buf = Vec::new();
        put_u16(&mut buf, 0xBEEF);
        put_u32(&mut buf, 0xDEAD_BEEF);
        put_u64(&mut buf, 42);
        put_scalar(&mut buf, 1.5f32);
        put_str(&mut buf, "hello");
        put_slice(&mut buf, &[1.0f64, -2.0, 0.25]);

        let mut r = Reader::new(&buf);
        assert_eq!(r.u16().unwrap(), 0xBEEF);
        assert_eq!(r.u32().unwrap(), 0xDEAD_BEEF);
        assert_eq!(r.u64().unwrap(), 42);
        assert_eq!(r.scalar::<f32>().unwrap(), 1.5);
        assert_eq!(r.string().unwrap(), "hello");
        assert_eq!(r.scalars::<f64>(3).unwrap(), vec![1.0, -2.0, 0.25]);
        assert_eq!(r.remaining(), 0);
    }

    #[test]
    fn truncation_is_an_error() {
        let mut buf = Vec::new();
        put_u64(&mut buf, 7);
        let mut r = Reader::new(&buf[..6]);
        assert!(r.u64().is_err());
    }

    #[test]
    fn f32_survives_f64_transport_exactly() {
        let values = [0.1f32, -3.75, f32::MIN_POSITIVE, 1e30];
        let mut buf = Vec::new();
        put_slice(&mut buf, &values);
        let mut r = Reader::new(&buf);
        for v in values {
            assert_eq!(r.scalar::<f32>().unwrap(), v);
        }
    }
}
