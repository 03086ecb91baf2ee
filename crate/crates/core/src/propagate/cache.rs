//! Little-endian binary cache file.
//!
//! ```text
//! "AHGC" | version u32 | fingerprint u64 | l1 u32 | l2 u32 | entries u32
//! entry: key_len u32 | key utf-8 | hops u32 | per hop: rows u64 | cols u64 | rows*cols f64
//! ```
//!
//! Feature entries come first in key order, then label entries whose keys
//! carry the `label:` prefix.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{MessageCache, PropagateError, LABEL_KEY_PREFIX};
use crate::dense::DenseMatrix;

pub const CACHE_MAGIC: &[u8; 4] = b"AHGC";
pub const CACHE_VERSION: u32 = 1;

/// What a caller expects a cache on disk to have been built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CacheExpectation {
    pub fingerprint: u64,
    pub l1: usize,
    pub l2: usize,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

pub fn encode_cache(cache: &MessageCache) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&cache.fingerprint.to_le_bytes());
    put_u32(&mut out, cache.l1);
    put_u32(&mut out, cache.l2);
    put_u32(
        &mut out,
        cache.feature_entries.len() + cache.label_entries.len(),
    );
    let entries = cache
        .feature_entries
        .iter()
        .map(|(k, h)| (k.clone(), h))
        .chain(
            cache
                .label_entries
                .iter()
                .map(|(k, h)| (format!("{LABEL_KEY_PREFIX}{k}"), h)),
        );
    for (key, hops) in entries {
        put_u32(&mut out, key.len());
        out.extend_from_slice(key.as_bytes());
        put_u32(&mut out, hops.len());
        for h in hops {
            out.extend_from_slice(&(h.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(h.cols() as u64).to_le_bytes());
            for v in h.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PropagateError> {
        let end = self.pos.checked_add(n).ok_or(PropagateError::Truncated)?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(PropagateError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, PropagateError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64, PropagateError> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
}

pub fn decode_cache(bytes: &[u8]) -> Result<MessageCache, PropagateError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 {
        return Err(PropagateError::Truncated);
    }
    if r.take(4)? != CACHE_MAGIC {
        return Err(PropagateError::Format(
            "bad magic bytes, not an AHGC cache".into(),
        ));
    }
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(PropagateError::Format(format!(
            "unsupported cache version {version}"
        )));
    }
    let fingerprint = r.u64()?;
    let l1 = r.u32()? as usize;
    let l2 = r.u32()? as usize;
    let n_entries = r.u32()?;
    let mut feature_entries = BTreeMap::new();
    let mut label_entries = BTreeMap::new();
    for _ in 0..n_entries {
        let key_len = r.u32()? as usize;
        let key = std::str::from_utf8(r.take(key_len)?)
            .map_err(|_| PropagateError::Format("entry key is not UTF-8".into()))?
            .to_string();
        let n_hops = r.u32()?;
        let mut hops = Vec::new();
        for _ in 0..n_hops {
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
                .ok_or(PropagateError::Truncated)?;
            let raw = r.take(len * 8)?;
            let data: Vec<f64> = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            hops.push(
                DenseMatrix::from_vec(rows, cols, data)
                    .map_err(|e| PropagateError::Format(format!("entry `{key}`: {e}")))?,
            );
        }
        let target = match key.strip_prefix(LABEL_KEY_PREFIX) {
            Some(k) => label_entries.insert(k.to_string(), hops),
            None => feature_entries.insert(key.clone(), hops),
        };
        if target.is_some() {
            return Err(PropagateError::Format(format!("duplicate entry `{key}`")));
        }
    }
    if r.pos != bytes.len() {
        return Err(PropagateError::Format(
            "trailing bytes after last entry".into(),
        ));
    }
    Ok(MessageCache {
        l1,
        l2,
        fingerprint,
        feature_entries,
        label_entries,
    })
}

pub fn write_cache(cache: &MessageCache, path: impl AsRef<Path>) -> Result<(), PropagateError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| PropagateError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, encode_cache(cache)).map_err(|source| PropagateError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<MessageCache, PropagateError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| PropagateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_cache(&bytes)
}

/// Reads a cache and refuses it unless fingerprint and depths match.
pub fn read_cache_checked(
    path: impl AsRef<Path>,
    expect: &CacheExpectation,
) -> Result<MessageCache, PropagateError> {
    let cache = read_cache(path)?;
    if cache.fingerprint != expect.fingerprint {
        return Err(PropagateError::Stale {
            what: "dataset fingerprint",
            expected: format!("{:016x}", expect.fingerprint),
            found: format!("{:016x}", cache.fingerprint),
        });
    }
    if cache.l1 != expect.l1 {
        return Err(PropagateError::Stale {
            what: "L1",
            expected: expect.l1.to_string(),
            found: cache.l1.to_string(),
        });
    }
    if cache.l2 != expect.l2 {
        return Err(PropagateError::Stale {
            what: "L2",
            expected: expect.l2.to_string(),
            found: cache.l2.to_string(),
        });
    }
    Ok(cache)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MessageCache {
        let m = DenseMatrix::from_rows(&[vec![0.1, -2.5], vec![f64::MIN_POSITIVE, 3.0]]).unwrap();
        let mut feature_entries = BTreeMap::new();
        feature_entries.insert("A-B".to_string(), vec![m.clone(), m.transpose()]);
        let mut label_entries = BTreeMap::new();
        label_entries.insert("A-B-A".to_string(), vec![m]);
        MessageCache {
            l1: 3,
            l2: 2,
            fingerprint: 0xdead_beef_0123_4567,
            feature_entries,
            label_entries,
        }
    }

    #[test]
    fn round_trip_is_identical() {
        let c = sample();
        let bytes = encode_cache(&c);
        assert_eq!(&bytes[..4], b"AHGC");
        assert_eq!(decode_cache(&bytes).unwrap(), c);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = encode_cache(&sample());
        bytes[0] = b'X';
        assert!(matches!(
            decode_cache(&bytes),
            Err(PropagateError::Format(_))
        ));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = encode_cache(&sample());
        for cut in [3, 10, 30, bytes.len() - 1] {
            assert!(
                matches!(decode_cache(&bytes[..cut]), Err(PropagateError::Truncated)),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn stale_depth_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ahgc");
        let c = sample();
        write_cache(&c, &path).unwrap();
        let mut expect = c.expectation();
        assert!(read_cache_checked(&path, &expect).is_ok());
        expect.l1 = 4;
        let err = read_cache_checked(&path, &expect).unwrap_err();
        assert!(matches!(err, PropagateError::Stale { what: "L1", .. }));
        assert!(err.to_string().contains("regenerate"));
        expect.l1 = 3;
        expect.fingerprint ^= 1;
        assert!(matches!(
            read_cache_checked(&path, &expect),
            Err(PropagateError::Stale {
                what: "dataset fingerprint",
                ..
            })
        ));
    }
}
