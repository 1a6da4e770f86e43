//! Causal orderings over variables and the grouped rank structure a flow is
//! built on.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Permutation of `d` variables, stored as `ranks[j]` = 0-based causal rank
/// of variable `j`. Rank 0 is the root of the ordering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalOrdering {
    ranks: Vec<usize>,
}

impl CausalOrdering {
    /// From per-variable ranks; must be a bijection onto 0..d.
    pub fn from_ranks(ranks: Vec<usize>) -> Result<Self> {
        let d = ranks.len();
        let mut seen = vec![false; d];
        for &r in &ranks {
            if r >= d || seen[r] {
                return Err(Error::Config(format!(
                    "ranks {ranks:?} are not a permutation of 0..{d}"
                )));
            }
            seen[r] = true;
        }
        Ok(Self { ranks })
    }

    /// From the variable sequence in causal order: `seq[r]` is the (0-based)
    /// variable at rank `r`.
    pub fn from_sequence(seq: &[usize]) -> Result<Self> {
        let d = seq.len();
        let mut ranks = vec![usize::MAX; d];
        for (r, &v) in seq.iter().enumerate() {
            if v >= d || ranks[v] != usize::MAX {
                return Err(Error::Config(format!(
                    "sequence {seq:?} is not a permutation of 0..{d}"
                )));
            }
            ranks[v] = r;
        }
        Ok(Self { ranks })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            ranks: (0..d).collect(),
        }
    }

    /// The two-variable ordering x_{cause} -> x_{effect}.
    pub fn bivariate(cause_first: bool) -> Self {
        if cause_first {
            Self::identity(2)
        } else {
            Self { ranks: vec![1, 0] }
        }
    }

    pub fn d(&self) -> usize {
        self.ranks.len()
    }

    pub fn rank_of(&self, var: usize) -> usize {
        self.ranks[var]
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Variables listed in causal order (inverse permutation of `ranks`).
    pub fn sequence(&self) -> Vec<usize> {
        let mut seq = vec![0; self.ranks.len()];
        for (v, &r) in self.ranks.iter().enumerate() {
            seq[r] = v;
        }
        seq
    }

    /// 1-based sequence, the human-facing notation: x1 -> x2 is `[1, 2]`.
    pub fn sequence_one_based(&self) -> Vec<usize> {
        self.sequence().iter().map(|v| v + 1).collect()
    }
}

impl std::fmt::Display for CausalOrdering {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let seq: Vec<String> = self
            .sequence_one_based()
            .iter()
            .map(ToString::to_string)
            .collect();
        write!(f, "({})", seq.join(","))
    }
}

/// Rank-ordered partition of variables into groups. Singleton groups give the
/// usual per-variable autoregressive flow; two groups of widths (d1, d2) give
/// the block model where the whole first block conditions the second.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowStructure {
    groups: Vec<Vec<usize>>,
    dim: usize,
    /// prefix_vars[g]: variables of all groups before g, in group order;
    /// this is the conditioner input order for group g.
    prefix_vars: Vec<Vec<usize>>,
}

impl FlowStructure {
    pub fn new(groups: Vec<Vec<usize>>) -> Result<Self> {
        let dim: usize = groups.iter().map(Vec::len).sum();
        if dim == 0 {
            return Err(Error::Config("flow structure has no variables".into()));
        }
        let mut seen = vec![false; dim];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::Config("empty group in flow structure".into()));
            }
            for &v in g {
                if v >= dim || seen[v] {
                    return Err(Error::Config(format!(
                        "groups {groups:?} are not a partition of 0..{dim}"
                    )));
                }
                seen[v] = true;
            }
        }
        let mut prefix_vars = Vec::with_capacity(groups.len());
        let mut acc: Vec<usize> = Vec::new();
        for g in &groups {
            prefix_vars.push(acc.clone());
            acc.extend_from_slice(g);
        }
        Ok(Self {
            groups,
            dim,
            prefix_vars,
        })
    }

    pub fn from_ordering(ordering: &CausalOrdering) -> Self {
        let groups = ordering.sequence().into_iter().map(|v| vec![v]).collect();
        Self::new(groups).expect("a valid ordering is a valid partition")
    }

    /// Two blocks of contiguous columns; `first_block_first` picks which
    /// block is root.
    pub fn two_block(d1: usize, d2: usize, first_block_first: bool) -> Result<Self> {
        if d1 == 0 || d2 == 0 {
            return Err(Error::Config("blocks must be non-empty".into()));
        }
        let a: Vec<usize> = (0..d1).collect();
        let b: Vec<usize> = (d1..d1 + d2).collect();
        if first_block_first {
            Self::new(vec![a, b])
        } else {
            Self::new(vec![b, a])
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn group(&self, g: usize) -> &[usize] {
        &self.groups[g]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn prefix_vars(&self, g: usize) -> &[usize] {
        &self.prefix_vars[g]
    }

    pub fn prefix_dim(&self, g: usize) -> usize {
        self.prefix_vars[g].len()
    }

    /// The variable-level ordering, when all groups are singletons.
    pub fn ordering(&self) -> Option<CausalOrdering> {
        if self.groups.iter().all(|g| g.len() == 1) {
            let seq: Vec<usize> = self.groups.iter().map(|g| g[0]).collect();
            Some(CausalOrdering::from_sequence(&seq).expect("partition is a permutation"))
        } else {
            None
        }
    }

    /// Rebuilds derived fields after deserialization and revalidates.
    pub(crate) fn revalidate(&mut self) -> Result<()> {
        let rebuilt = Self::new(self.groups.clone())?;
        if rebuilt.prefix_vars != self.prefix_vars || rebuilt.dim != self.dim {
            *self = rebuilt;
        }
        Ok(())
    }
}
