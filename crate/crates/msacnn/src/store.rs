//! `EPS1` binary epoch store.
//!
//! Layout (little-endian): magic `EPS1`, u16 version, u16 class count,
//! u32 epochs, u32 channels, u32 samples per epoch, f32 sample rate,
//! channel names (u16 length + UTF-8 each), u32 subject count, u32 subject
//! id per epoch, u8 label per epoch, then the f32 payload row-major.

use std::path::Path;

use msacnn_core::dataset::{EpochSet, N_CLASSES};

use crate::error::{read, write, Error, Result};

pub const MAGIC: &[u8; 4] = b"EPS1";
pub const VERSION: u16 = 1;

pub fn to_bytes(set: &EpochSet) -> Vec<u8> {
    let n = set.len();
    let mut out = Vec::with_capacity(64 + n * (5 + 4 * set.n_channels() * set.samples_per_epoch()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(N_CLASSES as u16).to_le_bytes());
    for v in [n, set.n_channels(), set.samples_per_epoch()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&set.sample_rate_hz().to_le_bytes());
    for name in set.channel_names() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out.extend_from_slice(&(set.n_subjects() as u32).to_le_bytes());
    for &s in set.subject_ids() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(set.labels());
    for &v in set.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::data(format!(
                "truncated epoch store at byte {}: {} needs {} bytes, {} left",
                self.pos,
                what,
                n,
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<EpochSet> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::data("bad magic at byte 0: not an EPS1 epoch store"));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::data(format!("unsupported epoch store version {} at byte 4", version)));
    }
    let k = r.u16("class count")?;
    if k as usize != N_CLASSES {
        return Err(Error::data(format!("class count {} at byte 6, expected {}", k, N_CLASSES)));
    }
    let n = r.u32("epoch count")? as usize;
    let n_ch = r.u32("channel count")? as usize;
    let t = r.u32("epoch length")? as usize;
    let fs = f32::from_le_bytes(r.take(4, "sample rate")?.try_into().unwrap());
    let mut names = Vec::with_capacity(n_ch.min(4096));
    for c in 0..n_ch {
        let at = r.pos;
        let len = r.u16("channel name length")? as usize;
        let raw = r.take(len, "channel name")?;
        let name = std::str::from_utf8(raw).map_err(|_| Error::data(format!("channel {} name at byte {} is not UTF-8", c, at)))?;
        names.push(name.to_string());
    }
    let subjects_at = r.pos;
    let n_subjects = r.u32("subject count")?;
    let ids_at = r.pos;
    let ids: Vec<u32> = r
        .take(n.checked_mul(4).ok_or_else(|| Error::data("epoch count overflows"))?, "subject ids")?
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = ids.iter().position(|&s| s >= n_subjects) {
        return Err(Error::data(format!(
            "subject id {} at byte {} is not below the subject count {}",
            ids[i],
            ids_at + 4 * i,
            n_subjects
        )));
    }
    let labels_at = r.pos;
    let labels = r.take(n, "labels")?.to_vec();
    if let Some(i) = labels.iter().position(|&l| l as usize >= N_CLASSES) {
        return Err(Error::data(format!("label {} out of range at byte {}", labels[i], labels_at + i)));
    }
    let payload_at = r.pos;
    let count = n
        .checked_mul(n_ch)
        .and_then(|v| v.checked_mul(t))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::data("payload size overflows"))?;
    let data: Vec<f32> = r
        .take(count, "payload")?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if r.pos != bytes.len() {
        return Err(Error::data(format!("{} trailing bytes after the payload at byte {}", bytes.len() - r.pos, r.pos)));
    }
    if msacnn_core::dataset::samples_per_epoch(fs as f64) != t {
        return Err(Error::data(format!("epoch length {} at byte 16 is not 30 s at {} Hz", t, fs)));
    }
    let set = EpochSet::new(data, labels, ids, names, fs).map_err(|e| Error::data(format!("{} (header at byte 0, payload at byte {})", e, payload_at)))?;
    if set.n_subjects() as u32 != n_subjects {
        return Err(Error::data(format!(
            "subject count {} at byte {} does not match the {} subjects present",
            n_subjects,
            subjects_at,
            set.n_subjects()
        )));
    }
    Ok(set)
}

pub fn save_epochset(set: &EpochSet, path: &Path) -> Result<()> {
    write(path, &to_bytes(set))
}

pub fn load_epochset(path: &Path) -> Result<EpochSet> {
    from_bytes(&read(path)?)
}
