//! Flat binary export of a [`DomainPair`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "DIREPDP1"
//! header_len u64
//! header     header_len bytes of UTF-8 JSON:
//!            {"descriptor": {...}, "splits": [{"name": "source_train", "count": n}, ...]}
//! records    for each split in header order, `count` records of
//!            label u8 (255 = unlabelled), domain u8, x as width f32
//! ```
//!
//! `width` is `descriptor.pixel_width + descriptor.cheat_width`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DomainPair, LabeledSample, PairDescriptor};
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 8] = b"DIREPDP1";
const UNLABELLED: u8 = u8::MAX;

#[derive(Serialize, Deserialize)]
struct SplitHeader {
    name: String,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    descriptor: PairDescriptor,
    splits: Vec<SplitHeader>,
}

pub fn write_pair(pair: &DomainPair, path: &Path) -> Result<()> {
    let width = pair.descriptor.input_width();
    let header = Header {
        descriptor: pair.descriptor.clone(),
        splits: pair
            .splits()
            .iter()
            .map(|(name, s)| SplitHeader { name: name.to_string(), count: s.len() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format(path, e.to_string()))?;
    let records: usize = header.splits.iter().map(|s| s.count).sum();
    let mut out = Vec::with_capacity(16 + json.len() + records * (2 + 4 * width));
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, split) in pair.splits() {
        for s in split {
            if s.x.len() != width {
                return Err(Error::Invalid(format!("sample width {} != {width}", s.x.len())));
            }
            let label = match s.label {
                Some(l) if l < UNLABELLED as usize => l as u8,
                Some(l) => return Err(Error::Invalid(format!("label {l} too large to export"))),
                None => UNLABELLED,
            };
            out.push(label);
            out.push(s.domain);
            s.x.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_pair(path: &Path) -> Result<DomainPair> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != CONTAINER_MAGIC {
        return Err(Error::format(path, "not a domain-pair container"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| Error::format(path, "truncated header"))?;
    let header: Header =
        serde_json::from_slice(&bytes[16..body]).map_err(|e| Error::format(path, e.to_string()))?;
    let width = header.descriptor.input_width();
    let record = 2 + 4 * width;
    let mut cursor = body;
    let mut splits = Vec::with_capacity(4);
    for split in &header.splits {
        let end = split
            .count
            .checked_mul(record)
            .and_then(|n| n.checked_add(cursor))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::format(path, format!("truncated records in {}", split.name)))?;
        let samples: Vec<LabeledSample> = bytes[cursor..end]
            .chunks_exact(record)
            .map(|r| {
                let label = (r[0] != UNLABELLED).then_some(r[0] as usize);
                let x = r[2..].chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                LabeledSample::new(x, label, r[1])
            })
            .collect();
        cursor = end;
        splits.push((split.name.as_str(), samples));
    }
    if cursor != bytes.len() {
        return Err(Error::format(path, "trailing bytes after records"));
    }
    let mut take = |name: &str| {
        splits
            .iter_mut()
            .find(|(n, _)| *n == name)
            .map(|(_, s)| std::mem::take(s))
            .ok_or_else(|| Error::format(path, format!("missing split {name}")))
    };
    Ok(DomainPair {
        source_train: take("source_train")?,
        source_test: take("source_test")?,
        target_train: take("target_train")?,
        target_test: take("target_test")?,
        descriptor: header.descriptor,
    })
}
