use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A strictly increasing set of 0-based indices drawn from `0..ambient`.
///
/// This is the index form of a full-row-rank 0/1 selection matrix.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "SelectionRepr", into = "SelectionRepr")]
pub struct SelectionSet {
    indices: Vec<usize>,
    ambient: usize,
}

#[derive(Serialize, Deserialize)]
struct SelectionRepr {
    indices: Vec<usize>,
    ambient: usize,
}

impl TryFrom<SelectionRepr> for SelectionSet {
    type Error = Error;
    fn try_from(r: SelectionRepr) -> Result<Self> {
        SelectionSet::new(r.indices, r.ambient)
    }
}

impl From<SelectionSet> for SelectionRepr {
    fn from(s: SelectionSet) -> Self {
        SelectionRepr { indices: s.indices, ambient: s.ambient }
    }
}

impl SelectionSet {
    pub fn new(indices: Vec<usize>, ambient: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidSelection("empty selection".into()));
        }
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::InvalidSelection(format!(
                    "indices must be strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last >= ambient {
                return Err(Error::IndexOutOfRange { index: last, ambient });
            }
        }
        Ok(Self { indices, ambient })
    }

    /// Sorts and deduplicates arbitrary input before validating it.
    pub fn from_unsorted(mut indices: Vec<usize>, ambient: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        Self::new(indices, ambient)
    }

    /// Every index of `0..ambient`.
    pub fn full(ambient: usize) -> Self {
        assert!(ambient > 0, "ambient dimension must be positive");
        Self { indices: (0..ambient).collect(), ambient }
    }

    /// Indices `offset, offset + stride, ...` below `ambient`.
    pub fn strided(offset: usize, stride: usize, ambient: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be at least 1".into()));
        }
        Self::new((offset..ambient).step_by(stride).collect(), ambient)
    }

    /// Converts 1-based indices (as used at the CLI/JSON boundary).
    pub fn from_one_based(indices: &[usize], ambient: usize) -> Result<Self> {
        let zero = indices
            .iter()
            .map(|&i| {
                i.checked_sub(1)
                    .ok_or_else(|| Error::InvalidSelection("index 0 in a one-based selection".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_unsorted(zero, ambient)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.ambient
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// Position of `index` within the selection.
    pub fn position(&self, index: usize) -> Option<usize> {
        self.indices.binary_search(&index).ok()
    }

    /// Indices common to both selections.
    pub fn intersection(&self, other: &SelectionSet) -> Vec<usize> {
        let (mut a, mut b) = (0, 0);
        let mut out = Vec::new();
        while a < self.indices.len() && b < other.indices.len() {
            match self.indices[a].cmp(&other.indices[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.indices[a]);
                    a += 1;
                    b += 1;
                }
            }
        }
        out
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.indices.iter().map(|i| i + 1).collect()
    }
}
