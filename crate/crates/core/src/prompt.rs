//! Edit instructions as pre-embedded vectors, tagged normal or malicious.
//! A malicious prompt is its parent normal prompt plus an NSFW component;
//! the toy world never touches real text.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PromptKind {
    Normal,
    Malicious,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Prompt<T = f32> {
    pub id: String,
    pub kind: PromptKind,
    pub embedding: Vec<T>,
    /// Present iff `kind` is malicious; names the normal prompt this one was
    /// built from.
    #[cfg_attr(
        feature = "serde",
        serde(default, skip_serializing_if = "Option::is_none")
    )]
    pub parent_id: Option<String>,
}

impl<T: Scalar> Prompt<T> {
    pub fn normal(id: impl Into<String>, embedding: Vec<T>) -> Self {
        Prompt {
            id: id.into(),
            kind: PromptKind::Normal,
            embedding,
            parent_id: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.embedding.len()
    }

    fn check(&self, expected_dim: usize) -> Result<()> {
        if self.dim() != expected_dim {
            return Err(CoreError::DimMismatch {
                expected: expected_dim,
                got: self.dim(),
            });
        }
        if !self.embedding.iter().all(|v| v.is_finite()) {
            return Err(CoreError::NonFinite(format!("embedding of {}", self.id)));
        }
        match self.kind {
            PromptKind::Normal if self.parent_id.is_some() => Err(CoreError::BadParent(format!(
                "normal prompt {} must not have a parent",
                self.id
            ))),
            PromptKind::Malicious if self.parent_id.is_none() => Err(CoreError::BadParent(
                format!("malicious prompt {} lacks a parent", self.id),
            )),
            _ => Ok(()),
        }
    }
}

/// Validated set of normal and malicious prompts with a shared embedding
/// dimension. `I` (malicious count) and `N` (normal count) drive the loss
/// sums downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet<T = f32> {
    normals: Vec<Prompt<T>>,
    maliciouses: Vec<Prompt<T>>,
    dim: usize,
}

impl<T: Scalar> PromptSet<T> {
    /// Builds a set after checking: uniform finite embeddings, unique ids,
    /// and that every malicious parent is one of the normals.
    pub fn new(prompts: Vec<Prompt<T>>) -> Result<Self> {
        let dim = prompts.first().map(Prompt::dim).unwrap_or(0);
        let mut normals = Vec::new();
        let mut maliciouses = Vec::new();
        for p in prompts {
            p.check(dim)?;
            match p.kind {
                PromptKind::Normal => normals.push(p),
                PromptKind::Malicious => maliciouses.push(p),
            }
        }
        let set = PromptSet {
            normals,
            maliciouses,
            dim,
        };
        set.check_links()?;
        Ok(set)
    }

    fn check_links(&self) -> Result<()> {
        let mut ids: Vec<&str> = Vec::new();
        for p in self.normals.iter().chain(&self.maliciouses) {
            if ids.contains(&p.id.as_str()) {
                return Err(CoreError::BadConfig(format!("duplicate prompt id {}", p.id)));
            }
            ids.push(&p.id);
        }
        for m in &self.maliciouses {
            let parent = m.parent_id.as_deref().expect("checked in Prompt::check");
            if !self.normals.iter().any(|n| n.id == parent) {
                return Err(CoreError::MissingParent(parent.into()));
            }
        }
        Ok(())
    }

    pub fn normals(&self) -> &[Prompt<T>] {
        &self.normals
    }

    pub fn maliciouses(&self) -> &[Prompt<T>] {
        &self.maliciouses
    }

    /// Number of malicious prompts, `I` in the blocking-loss sum.
    pub fn count_malicious(&self) -> usize {
        self.maliciouses.len()
    }

    /// Number of normal prompts, `N` in the preservation-loss sum.
    pub fn count_normal(&self) -> usize {
        self.normals.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn parent_of(&self, malicious: &Prompt<T>) -> Result<&Prompt<T>> {
        let parent = malicious
            .parent_id
            .as_deref()
            .ok_or_else(|| CoreError::MissingParent(malicious.id.clone()))?;
        self.normals
            .iter()
            .find(|n| n.id == parent)
            .ok_or_else(|| CoreError::MissingParent(parent.into()))
    }

    pub fn iter_all(&self) -> impl Iterator<Item = &Prompt<T>> {
        self.normals.iter().chain(&self.maliciouses)
    }

    pub fn into_prompts(self) -> Vec<Prompt<T>> {
        let mut v = self.normals;
        v.extend(self.maliciouses);
        v
    }

    pub fn cast<U: Scalar>(&self) -> PromptSet<U> {
        let convert = |p: &Prompt<T>| Prompt::<U> {
            id: p.id.clone(),
            kind: p.kind,
            embedding: p.embedding.iter().map(|&x| U::c(x.to_f64())).collect(),
            parent_id: p.parent_id.clone(),
        };
        PromptSet {
            normals: self.normals.iter().map(convert).collect(),
            maliciouses: self.maliciouses.iter().map(convert).collect(),
            dim: self.dim,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn nor(id: &str) -> Prompt<f32> {
        Prompt::normal(id, vec![0.0; 4])
    }

    fn mal(id: &str, parent: &str) -> Prompt<f32> {
        Prompt {
            id: id.into(),
            kind: PromptKind::Malicious,
            embedding: vec![0.5; 4],
            parent_id: Some(parent.into()),
        }
    }

    #[test]
    fn valid_set_counts() {
        let set = PromptSet::new(vec![nor("a"), nor("b"), mal("m1", "a"), mal("m2", "a")]).unwrap();
        assert_eq!(set.count_normal(), 2);
        assert_eq!(set.count_malicious(), 2);
        assert_eq!(set.dim(), 4);
    }

    #[test]
    fn orphan_malicious_is_missing_parent() {
        let err = PromptSet::new(vec![nor("a"), mal("m1", "zzz")]).unwrap_err();
        assert!(matches!(err, CoreError::MissingParent(_)));
    }

    #[test]
    fn mixed_dims_rejected() {
        let bad = Prompt::normal("b", vec![0.0f32; 3]);
        let err = PromptSet::new(vec![nor("a"), bad]).unwrap_err();
        assert!(matches!(err, CoreError::DimMismatch { .. }));
    }

    #[test]
    fn non_finite_embedding_rejected() {
        let bad = Prompt::normal("b", vec![f32::NAN; 4]);
        assert!(PromptSet::new(vec![nor("a"), bad]).is_err());
    }

    #[test]
    fn malicious_without_parent_field_rejected() {
        let mut m = mal("m", "a");
        m.parent_id = None;
        assert!(PromptSet::new(vec![nor("a"), m]).is_err());
    }
}
