//! Little-endian binary helpers shared by the model file formats, plus
//! crash-safe file publication.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

pub struct BinWriter<W: Write> {
    inner: W,
}

impl<W: Write> BinWriter<W> {
    pub fn new(inner: W) -> Self {
        BinWriter { inner }
    }

    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.inner.write_all(b)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.inner.write_all(&[v])
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f32(&mut self, v: f32) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> io::Result<()> {
        self.inner.write_all(&v.to_le_bytes())
    }

    /// Length-prefixed (u32) UTF-8 string.
    pub fn str(&mut self, s: &str) -> io::Result<()> {
        self.u32(s.len() as u32)?;
        self.inner.write_all(s.as_bytes())
    }

    /// Matrix block: u64 rows, u64 cols, then rows*cols f32 values row-major.
    pub fn matrix_f32<I: IntoIterator<Item = f32>>(
        &mut self,
        rows: usize,
        cols: usize,
        data: I,
    ) -> io::Result<()> {
        self.u64(rows as u64)?;
        self.u64(cols as u64)?;
        let mut n = 0usize;
        for v in data {
            self.f32(v)?;
            n += 1;
        }
        if n != rows * cols {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("matrix block has {n} values, expected {}", rows * cols),
            ));
        }
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

pub struct BinReader<R: Read> {
    inner: R,
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

impl<R: Read> BinReader<R> {
    pub fn new(inner: R) -> Self {
        BinReader { inner }
    }

    pub fn expect_magic(&mut self, magic: &[u8]) -> io::Result<()> {
        let mut buf = vec![0u8; magic.len()];
        self.inner.read_exact(&mut buf)?;
        if buf != magic {
            return Err(invalid(format!(
                "bad magic: expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(())
    }

    /// Reads exactly `n` bytes without trusting `n` for the allocation.
    pub fn bytes(&mut self, n: usize) -> io::Result<Vec<u8>> {
        let mut buf = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut buf)?;
        if buf.len() != n {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated block"));
        }
        Ok(buf)
    }

    pub fn u8(&mut self) -> io::Result<u8> {
        let mut b = [0u8; 1];
        self.inner.read_exact(&mut b)?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn f32(&mut self) -> io::Result<f32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> io::Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn str(&mut self) -> io::Result<String> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.inner.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|e| invalid(e.to_string()))
    }

    /// Reads a matrix block written by [`BinWriter::matrix_f32`].
    pub fn matrix_f32(&mut self) -> io::Result<(usize, usize, Vec<f32>)> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| invalid("matrix block too large"))?;
        let mut raw = vec![0u8; n * 4];
        self.inner.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((rows, cols, data))
    }
}

/// Writes `contents` to a temporary sibling file and renames it into place,
/// so readers never observe a partially written file.
pub fn publish_atomically(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .ok_or_else(|| invalid("path has no file name"))?
        .to_string_lossy()
        .into_owned();
    let tmp = dir.join(format!(".{file_name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_block_round_trip() {
        let mut w = BinWriter::new(Vec::new());
        w.bytes(b"MAGIC").unwrap();
        w.str("héllo").unwrap();
        w.matrix_f32(2, 3, [1.0, 2.0, 3.0, 4.0, 5.0, 6.5]).unwrap();
        let buf = w.into_inner();
        let mut r = BinReader::new(&buf[..]);
        r.expect_magic(b"MAGIC").unwrap();
        assert_eq!(r.str().unwrap(), "héllo");
        let (rows, cols, data) = r.matrix_f32().unwrap();
        assert_eq!((rows, cols), (2, 3));
        assert_eq!(data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.5]);
    }

    #[test]
    fn wrong_value_count_is_rejected() {
        let mut w = BinWriter::new(Vec::new());
        assert!(w.matrix_f32(2, 2, [1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut r = BinReader::new(&b"CSEMB0"[..]);
        assert!(r.expect_magic(b"CSEMB1").is_err());
    }

    #[test]
    fn atomic_publish_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("sub").join("file.bin");
        publish_atomically(&target, b"abc").unwrap();
        assert_eq!(fs::read(&target).unwrap(), b"abc");
        let names: Vec<_> = fs::read_dir(target.parent().unwrap())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(names.len(), 1);
    }
}
