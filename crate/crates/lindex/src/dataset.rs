//! Key/payload domain types and the binary dataset file format.
//!
//! The on-disk layout is a little-endian `u64` count followed by that
//! many little-endian `u64` keys, i.e. the common layout of the SOSD
//! benchmark files, so real SOSD data can be dropped in directly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

/// 64-bit unsigned key; total order is numeric order.
pub type Key = u64;

/// 8-byte opaque payload word.
pub type Payload = u64;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("truncated file: expected {expected} bytes of keys, got {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("empty dataset")]
    Empty,
}

/// A strictly increasing sequence of keys (the CDF domain).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    keys: Vec<Key>,
}

impl Dataset {
    /// Builds a dataset from arbitrary keys, sorting and deduplicating.
    pub fn from_keys(mut keys: Vec<Key>) -> Result<Self, DatasetError> {
        keys.sort_unstable();
        keys.dedup();
        if keys.is_empty() {
            return Err(DatasetError::Empty);
        }
        Ok(Dataset { keys })
    }

    /// Wraps keys that are already strictly increasing.
    pub fn from_sorted(keys: Vec<Key>) -> Result<Self, DatasetError> {
        debug_assert!(keys.windows(2).all(|w| w[0] < w[1]));
        if keys.is_empty() {
            return Err(DatasetError::Empty);
        }
        Ok(Dataset { keys })
    }

    pub fn keys(&self) -> &[Key] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Key/payload pairs for bulk loading. The payload convention for
    /// dataset-driven loads is payload = key.
    pub fn pairs(&self) -> Vec<(Key, Payload)> {
        self.keys.iter().map(|&k| (k, k)).collect()
    }

    /// Reads the count-prefixed little-endian format, sorting and
    /// deduplicating whatever the file contains.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let file = File::open(path)?;
        let expected_len = file.metadata()?.len();
        let mut reader = BufReader::new(file);
        let mut word = [0u8; 8];
        reader.read_exact(&mut word)?;
        let count = u64::from_le_bytes(word);
        let body = expected_len.saturating_sub(8);
        if count.checked_mul(8) != Some(body) {
            return Err(DatasetError::Truncated {
                expected: count.saturating_mul(8),
                actual: body,
            });
        }
        let mut keys = Vec::with_capacity(count as usize);
        for _ in 0..count {
            reader.read_exact(&mut word)?;
            keys.push(u64::from_le_bytes(word));
        }
        Self::from_keys(keys)
    }

    /// Writes the bit-exact inverse of [`Dataset::load`].
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let mut writer = BufWriter::new(File::create(path)?);
        writer.write_all(&(self.keys.len() as u64).to_le_bytes())?;
        for &k in &self.keys {
            writer.write_all(&k.to_le_bytes())?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Parses the binary layout from an in-memory buffer. Shared by
    /// `load` semantics tests and the fuzz targets.
    pub fn parse_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        if bytes.len() < 8 {
            return Err(DatasetError::Truncated {
                expected: 8,
                actual: bytes.len() as u64,
            });
        }
        let count = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let body = (bytes.len() - 8) as u64;
        if count.checked_mul(8) != Some(body) {
            return Err(DatasetError::Truncated {
                expected: count.saturating_mul(8),
                actual: body,
            });
        }
        let keys = bytes[8..]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_keys(keys)
    }
}
