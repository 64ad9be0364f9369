use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::model::{Fingerprint, ModelParams};
use crate::{Error, Result};

/// Name of the composition embedding.
pub const AND_TOKEN: &str = "<and>";

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub name: String,
    pub vector: Vec<f32>,
    pub frozen: bool,
}

/// Named `d`-dimensional steering vectors, tied to the model they were trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    d: usize,
    fingerprint: Fingerprint,
    entries: Vec<BankEntry>,
}

impl EmbeddingBank {
    pub fn new(d: usize, fingerprint: Fingerprint) -> Self {
        EmbeddingBank { d, fingerprint, entries: Vec::new() }
    }

    /// An empty bank bound to `params`.
    pub fn for_model(params: &ModelParams) -> Self {
        Self::new(params.config().d_model, params.fingerprint())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&BankEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f32]> {
        self.entry(name).map(|e| e.vector.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f32]> {
        self.get(name).ok_or_else(|| Error::MissingEmbedding(name.into()))
    }

    /// Inserts or replaces an entry, keeping the position of an existing name.
    pub fn insert(&mut self, name: &str, vector: Vec<f32>, frozen: bool) -> Result<()> {
        if vector.len() != self.d {
            return Err(Error::invalid(format!(
                "embedding `{name}` has {} dims, bank expects {}",
                vector.len(),
                self.d
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("embedding `{name}` is not finite")));
        }
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => {
                e.vector = vector;
                e.frozen = frozen;
            }
            None => self.entries.push(BankEntry { name: name.into(), vector, frozen }),
        }
        Ok(())
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::MissingEmbedding(name.into()))?;
        e.frozen = frozen;
        Ok(())
    }

    pub(crate) fn vector_mut(&mut self, name: &str) -> Result<&mut Vec<f32>> {
        self.entries
            .iter_mut()
            .find(|e| e.name == name)
            .map(|e| &mut e.vector)
            .ok_or_else(|| Error::MissingEmbedding(name.into()))
    }

    /// Fails unless the bank was trained against `params`.
    pub fn check_model(&self, params: &ModelParams) -> Result<()> {
        let fp = params.fingerprint();
        if fp != self.fingerprint {
            return Err(Error::FingerprintMismatch(format!(
                "bank bound to {}, model is {fp}",
                self.fingerprint
            )));
        }
        if self.d != params.config().d_model {
            return Err(Error::FingerprintMismatch("bank dimension differs from model".into()));
        }
        Ok(())
    }

    /// Bitwise snapshot of every frozen entry.
    pub(crate) fn frozen_snapshot(&self) -> Vec<(String, Vec<u32>)> {
        self.entries
            .iter()
            .filter(|e| e.frozen)
            .map(|e| (e.name.clone(), e.vector.iter().map(|v| v.to_bits()).collect()))
            .collect()
    }

    /// Errors if any entry in `snapshot` no longer matches bit for bit.
    pub(crate) fn check_snapshot(&self, snapshot: &[(String, Vec<u32>)]) -> Result<()> {
        for (name, bits) in snapshot {
            let now = self.require(name)?;
            if now.len() != bits.len() || now.iter().zip(bits).any(|(v, b)| v.to_bits() != *b) {
                return Err(Error::FrozenTokenViolation(name.clone()));
            }
        }
        Ok(())
    }
}
