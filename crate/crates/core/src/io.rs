//! On-disk containers.
//!
//! Windowed samples are stored in a little-endian binary container:
//!
//! ```text
//! magic    8 bytes  "DODEMWIN"
//! version  u32      1
//! steps    u32
//! channels u32
//! count    u64
//! count x { unit_id u32, end_cycle u32, rul f64, steps*channels f64 }
//! ```
//!
//! Attack masks live in a sidecar text file, one `0`/`1` per sample.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{Window, WindowedSample};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DODEMWIN";
const VERSION: u32 = 1;

/// Writes through a temporary file in the destination directory and
/// renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::format(path, "destination has no file name"))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_windows(samples: &[WindowedSample]) -> Result<Vec<u8>> {
    let (steps, channels) = samples.first().map_or((0, 0), |s| (s.window.steps, s.window.channels));
    let mut out = Vec::with_capacity(28 + samples.len() * (16 + 8 * steps * channels));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(steps as u32).to_le_bytes());
    out.extend_from_slice(&(channels as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        if s.window.steps != steps || s.window.channels != channels {
            return Err(Error::Shape {
                expected: format!("{steps}x{channels}"),
                got: format!("{}x{}", s.window.steps, s.window.channels),
            });
        }
        out.extend_from_slice(&s.unit_id.to_le_bytes());
        out.extend_from_slice(&s.end_cycle.to_le_bytes());
        out.extend_from_slice(&s.rul.to_le_bytes());
        for v in &s.window.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

pub fn decode_windows(bytes: &[u8], origin: &Path) -> Result<Vec<WindowedSample>> {
    let truncated = || Error::format(origin, "truncated window container");
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8) != Some(&MAGIC[..]) {
        return Err(Error::format(origin, "not a window container"));
    }
    let version = r.u32().ok_or_else(truncated)?;
    if version != VERSION {
        return Err(Error::format(origin, format!("unsupported container version {version}")));
    }
    let steps = r.u32().ok_or_else(truncated)? as usize;
    let channels = r.u32().ok_or_else(truncated)? as usize;
    let count = r.u64().ok_or_else(truncated)? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let unit_id = r.u32().ok_or_else(truncated)?;
        let end_cycle = r.u32().ok_or_else(truncated)?;
        let rul = r.f64().ok_or_else(truncated)?;
        let data = (0..steps * channels).map(|_| r.f64()).collect::<Option<Vec<_>>>().ok_or_else(truncated)?;
        out.push(WindowedSample {
            window: Window::new(steps, channels, data),
            rul,
            unit_id,
            end_cycle,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(origin, "trailing bytes after window container"));
    }
    Ok(out)
}

pub fn save_windows(path: &Path, samples: &[WindowedSample]) -> Result<()> {
    write_atomic(path, &encode_windows(samples)?)
}

pub fn load_windows(path: &Path) -> Result<Vec<WindowedSample>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_windows(&bytes, path)
}

pub fn save_mask(path: &Path, mask: &[bool]) -> Result<()> {
    let text: String = mask.iter().map(|&m| if m { "1\n" } else { "0\n" }).collect();
    write_atomic(path, text.as_bytes())
}

pub fn load_mask(path: &Path) -> Result<Vec<bool>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| match l.trim() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::format(path, format!("line {}: expected 0 or 1, got {other:?}", i + 1))),
        })
        .collect()
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn window_container_round_trips(
            vals in proptest::collection::vec(proptest::num::f64::ANY, 12),
            rul in 0.0f64..200.0,
        ) {
            let samples = vec![
                WindowedSample { window: Window::new(3, 2, vals[..6].to_vec()), rul, unit_id: 4, end_cycle: 80 },
                WindowedSample { window: Window::new(3, 2, vals[6..].to_vec()), rul: 0.0, unit_id: 5, end_cycle: 81 },
            ];
            let back = decode_windows(&encode_windows(&samples).unwrap(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.len(), 2);
            for (a, b) in back.iter().zip(&samples) {
                prop_assert!(a.window.data.iter().zip(&b.window.data).all(|(x, y)| x.to_bits() == y.to_bits()));
                prop_assert_eq!((a.unit_id, a.end_cycle, a.rul.to_bits()), (b.unit_id, b.end_cycle, b.rul.to_bits()));
            }
        }
    }

    #[test]
    fn truncated_and_foreign_files_are_rejected() {
        let s = vec![WindowedSample { window: Window::zeros(2, 2), rul: 1.0, unit_id: 1, end_cycle: 2 }];
        let bytes = encode_windows(&s).unwrap();
        assert!(decode_windows(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
        assert!(decode_windows(b"NOTDODEM", Path::new("x")).is_err());
    }

    #[test]
    fn mask_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mask.txt");
        let mask = vec![true, false, false, true];
        save_mask(&p, &mask).unwrap();
        assert_eq!(load_mask(&p).unwrap(), mask);
        fs::write(&p, "1\n2\n").unwrap();
        assert!(load_mask(&p).is_err());
    }
}
