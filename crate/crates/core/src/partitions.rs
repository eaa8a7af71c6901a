//! Set partitions of `{0, …, d−1}` and their alternating weights.
//!
//! Partitions are produced by iterating restricted growth strings: element `i`
//! goes either into one of the blocks already opened by elements `0..i` or
//! opens a new one. Labelling blocks by order of first appearance gives the
//! canonical block order (sorted by smallest element) without extra work.

use std::sync::OnceLock;

use crate::error::{CgfError, Result};

/// Largest ground set for which full enumeration is allowed.
pub const MAX_ENUMERATION: usize = 12;

/// Largest `k` accepted by [`bell_number`]; `B_20` still fits comfortably in `u64`.
pub const MAX_BELL: usize = 20;

/// Ground sets up to this size have their partitions cached process-wide.
const CACHED_UP_TO: usize = 8;

/// A partition of `{0, …, d−1}` into non-empty, pairwise disjoint blocks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SetPartition {
    blocks: Vec<Vec<usize>>,
}

impl SetPartition {
    /// Builds a partition from arbitrary blocks, validating and canonicalising them.
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        let d: usize = blocks.iter().map(Vec::len).sum();
        let mut seen = vec![false; d];
        for block in &mut blocks {
            if block.is_empty() {
                return Err(CgfError::Domain("partition has an empty block".into()));
            }
            block.sort_unstable();
            for &i in block.iter() {
                if i >= d {
                    return Err(CgfError::IndexOutOfRange { index: i, dim: d });
                }
                if seen[i] {
                    return Err(CgfError::OverlappingSets(i));
                }
                seen[i] = true;
            }
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Self { blocks })
    }

    /// The single-block partition of `{0, …, d−1}`.
    pub fn whole(d: usize) -> Self {
        Self {
            blocks: vec![(0..d).collect()],
        }
    }

    /// The partition into `d` singletons.
    pub fn singletons(d: usize) -> Self {
        Self {
            blocks: (0..d).map(|i| vec![i]).collect(),
        }
    }

    fn from_growth_string(labels: &[usize], n_blocks: usize) -> Self {
        let mut blocks = vec![Vec::new(); n_blocks];
        for (element, &label) in labels.iter().enumerate() {
            blocks[label].push(element);
        }
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    /// Number of blocks, `|π|`.
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Size of the ground set.
    pub fn ground_size(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }
}

/// All partitions of `{0, …, d−1}` in restricted-growth-string order.
pub fn enumerate_partitions(d: usize) -> Result<Vec<SetPartition>> {
    if d == 0 || d > MAX_ENUMERATION {
        return Err(CgfError::Domain(format!(
            "partition enumeration needs 1 <= d <= {MAX_ENUMERATION}, got {d}"
        )));
    }
    let mut out = Vec::with_capacity(bell_number(d)? as usize);
    // labels[i] is the block of element i; maxes[i] = max(labels[0..=i]).
    let mut labels = vec![0usize; d];
    let mut maxes = vec![0usize; d];
    loop {
        out.push(SetPartition::from_growth_string(&labels, maxes[d - 1] + 1));
        // Find the rightmost position that can still be incremented.
        let mut i = d - 1;
        loop {
            if i == 0 {
                return Ok(out);
            }
            if labels[i] <= maxes[i - 1] {
                break;
            }
            i -= 1;
        }
        labels[i] += 1;
        maxes[i] = maxes[i - 1].max(labels[i]);
        for j in i + 1..d {
            labels[j] = 0;
            maxes[j] = maxes[i];
        }
    }
}

/// Cached enumeration for small ground sets (`1 <= d <= 8`).
pub(crate) fn cached_partitions(d: usize) -> Result<&'static [SetPartition]> {
    static CACHE: OnceLock<Vec<Vec<SetPartition>>> = OnceLock::new();
    if d == 0 || d > CACHED_UP_TO {
        return Err(CgfError::Domain(format!(
            "cached partitions cover 1 <= d <= {CACHED_UP_TO}, got {d}"
        )));
    }
    let cache = CACHE.get_or_init(|| {
        (1..=CACHED_UP_TO)
            .map(|k| enumerate_partitions(k).expect("within enumeration cap"))
            .collect()
    });
    Ok(&cache[d - 1])
}

/// Bell number `B_k`: the number of partitions of a `k`-element set.
pub fn bell_number(k: usize) -> Result<u64> {
    if k > MAX_BELL {
        return Err(CgfError::Domain(format!(
            "bell_number overflow guard: k must be <= {MAX_BELL}, got {k}"
        )));
    }
    // B_{m+1} = sum_r C(m, r) B_r
    let mut bell: Vec<u128> = vec![1];
    for m in 0..k {
        let mut binom: u128 = 1;
        let mut next: u128 = 0;
        for (r, b) in bell.iter().enumerate() {
            next += binom * b;
            binom = binom * (m - r) as u128 / (r + 1) as u128;
        }
        bell.push(next);
    }
    Ok(bell[k] as u64)
}

/// `(−1)^{|π|−1} (|π|−1)!`
pub fn mobius_weight(p: &SetPartition) -> i64 {
    let m = p.len() as i64;
    let factorial: i64 = (1..m).product();
    if (m - 1) % 2 == 0 {
        factorial
    } else {
        -factorial
    }
}
