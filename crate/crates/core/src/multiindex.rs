//! Multi-index arithmetic, downward-closed index sets and the reduced
//! forward neighbor construction.
//!
//! A multi-index assigns a nonnegative level to every parameter dimension,
//! with only finitely many nonzero entries. Storage is sparse: zero levels
//! are never stored, so the 1025-dimensional experiments cost only
//! per-support work. Dimensions are 1-based.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::de::{MapAccess, SeqAccess, Visitor};
use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MultiIndexError {
    #[error("dimension indices are 1-based; got dimension 0")]
    ZeroDimension,
    #[error("index {0} already present in the set")]
    Duplicate(MultiIndex),
    #[error("inserting {0} would break downward closedness (missing {1})")]
    MissingParent(MultiIndex, MultiIndex),
    #[error("index set is not downward closed (missing {0})")]
    NotDownwardClosed(MultiIndex),
    #[error("index set must contain the zero index")]
    MissingZero,
    #[error("rectangle of {index} has cardinality {cardinality}, above the limit {limit}")]
    RectangleTooLarge {
        index: MultiIndex,
        cardinality: u64,
        limit: u64,
    },
}

/// A finitely supported map dimension -> level.
///
/// Equality, hashing, and the canonical total order all derive from the
/// sparse representation. The canonical order compares the support as a
/// sequence of (dimension, level) pairs lexicographically, dimension first;
/// it is the tie-break order everywhere a "first" index is needed.
#[derive(Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex {
    entries: BTreeMap<u32, u32>,
}

impl MultiIndex {
    /// The zero index (empty support).
    pub fn zero() -> Self {
        Self::default()
    }

    /// The Kronecker index `e_j` for a 1-based dimension `j`.
    pub fn unit(j: u32) -> Self {
        assert!(j >= 1, "dimensions are 1-based");
        let mut entries = BTreeMap::new();
        entries.insert(j, 1);
        MultiIndex { entries }
    }

    /// Builds an index from (dimension, level) pairs. Zero levels are
    /// dropped; levels for a repeated dimension accumulate.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, MultiIndexError>
    where
        I: IntoIterator<Item = (u32, u32)>,
    {
        let mut entries = BTreeMap::new();
        for (j, level) in pairs {
            if j == 0 {
                return Err(MultiIndexError::ZeroDimension);
            }
            if level > 0 {
                *entries.entry(j).or_insert(0) += level;
            }
        }
        Ok(MultiIndex { entries })
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Level in dimension `j`; 0 when the dimension is not in the support.
    pub fn level(&self, j: u32) -> u32 {
        self.entries.get(&j).copied().unwrap_or(0)
    }

    /// The support as (dimension, level) pairs in ascending dimension order.
    pub fn support(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.entries.iter().map(|(&j, &l)| (j, l))
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    /// `|nu| = sum_j nu_j`.
    pub fn total_level(&self) -> u64 {
        self.entries.values().map(|&l| u64::from(l)).sum()
    }

    /// `max_j nu_j`.
    pub fn max_level(&self) -> u32 {
        self.entries.values().copied().max().unwrap_or(0)
    }

    /// Largest supported dimension; 0 for the zero index.
    pub fn max_dim(&self) -> u32 {
        self.entries.keys().next_back().copied().unwrap_or(0)
    }

    /// The componentwise partial order: true iff `self_j <= other_j` for all j.
    pub fn leq(&self, other: &MultiIndex) -> bool {
        self.entries.iter().all(|(&j, &l)| l <= other.level(j))
    }

    /// `self + e_j`.
    pub fn incremented(&self, j: u32) -> MultiIndex {
        assert!(j >= 1, "dimensions are 1-based");
        let mut out = self.clone();
        *out.entries.entry(j).or_insert(0) += 1;
        out
    }

    /// `self - e_j`, or `None` when the level in dimension j is zero.
    pub fn decremented(&self, j: u32) -> Option<MultiIndex> {
        let level = self.level(j);
        if level == 0 {
            return None;
        }
        let mut out = self.clone();
        if level == 1 {
            out.entries.remove(&j);
        } else {
            out.entries.insert(j, level - 1);
        }
        Some(out)
    }

    /// Cardinality of the rectangle `{mu : mu <= self}`, i.e. `prod (nu_j + 1)`.
    pub fn rectangle_cardinality(&self) -> u64 {
        self.entries
            .values()
            .fold(1u64, |acc, &l| acc.saturating_mul(u64::from(l) + 1))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|(j, l)| format!("{j}:{l}"))
            .collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (j, l) in &self.entries {
            map.serialize_entry(&j.to_string(), l)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct IndexVisitor;

        impl<'de> Visitor<'de> for IndexVisitor {
            type Value = MultiIndex;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of 1-based dimension -> level")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut entries = BTreeMap::new();
                while let Some((key, level)) = access.next_entry::<String, u32>()? {
                    let j: u32 = key
                        .parse()
                        .map_err(|_| serde::de::Error::custom("dimension keys must be integers"))?;
                    if j == 0 {
                        return Err(serde::de::Error::custom("dimensions are 1-based"));
                    }
                    if level > 0 {
                        entries.insert(j, level);
                    }
                }
                Ok(MultiIndex { entries })
            }
        }

        deserializer.deserialize_map(IndexVisitor)
    }
}

/// True iff for every index in the collection and every supported dimension,
/// the index decremented in that dimension is also present.
pub fn is_downward_closed(indices: &[MultiIndex]) -> bool {
    let lookup: HashSet<&MultiIndex> = indices.iter().collect();
    indices.iter().all(|nu| {
        nu.support()
            .all(|(j, _)| lookup.contains(&nu.decremented(j).expect("supported dimension")))
    })
}

/// Enumerates the rectangle `{mu : mu <= nu}` in odometer order over the
/// support, guarded against combinatorial blowup by `limit`.
pub fn rectangle(nu: &MultiIndex, limit: u64) -> Result<Vec<MultiIndex>, MultiIndexError> {
    let cardinality = nu.rectangle_cardinality();
    if cardinality > limit {
        return Err(MultiIndexError::RectangleTooLarge {
            index: nu.clone(),
            cardinality,
            limit,
        });
    }
    let support: Vec<(u32, u32)> = nu.support().collect();
    let mut levels = vec![0u32; support.len()];
    let mut out = Vec::with_capacity(cardinality as usize);
    loop {
        let pairs = support
            .iter()
            .zip(&levels)
            .map(|(&(j, _), &l)| (j, l))
            .collect::<Vec<_>>();
        out.push(MultiIndex::from_pairs(pairs).expect("dimensions already validated"));
        // odometer increment
        let mut pos = 0;
        loop {
            if pos == support.len() {
                return Ok(out);
            }
            if levels[pos] < support[pos].1 {
                levels[pos] += 1;
                break;
            }
            levels[pos] = 0;
            pos += 1;
        }
    }
}

/// An ordered, downward-closed collection of multi-indices.
///
/// Insertion order is preserved (it is the summation order of the sparse
/// quadrature); membership tests go through a hash lookup. The set always
/// contains the zero index.
#[derive(Clone, Debug)]
pub struct IndexSet {
    members: Vec<MultiIndex>,
    lookup: HashSet<MultiIndex>,
    max_active_dim: u32,
}

impl Default for IndexSet {
    fn default() -> Self {
        Self::new()
    }
}

impl IndexSet {
    /// The root set `{0}`.
    pub fn new() -> Self {
        let zero = MultiIndex::zero();
        IndexSet {
            members: vec![zero.clone()],
            lookup: HashSet::from([zero]),
            max_active_dim: 0,
        }
    }

    /// Builds a set from members in the given order, validating all
    /// invariants (zero present, no duplicates, downward closed).
    pub fn from_members(members: Vec<MultiIndex>) -> Result<Self, MultiIndexError> {
        let set = Self::from_members_unchecked(members);
        if !set.lookup.contains(&MultiIndex::zero()) {
            return Err(MultiIndexError::MissingZero);
        }
        if set.lookup.len() != set.members.len() {
            let mut seen = HashSet::new();
            for nu in &set.members {
                if !seen.insert(nu) {
                    return Err(MultiIndexError::Duplicate(nu.clone()));
                }
            }
        }
        set.ensure_downward_closed()?;
        Ok(set)
    }

    /// Builds a set without validating invariants. Intended for tests and
    /// for callers that re-validate, e.g. deserialization.
    pub fn from_members_unchecked(members: Vec<MultiIndex>) -> Self {
        let lookup: HashSet<MultiIndex> = members.iter().cloned().collect();
        let max_active_dim = members.iter().map(MultiIndex::max_dim).max().unwrap_or(0);
        IndexSet {
            members,
            lookup,
            max_active_dim,
        }
    }

    /// Inserts a new index, refusing duplicates and insertions that would
    /// break downward closedness.
    pub fn insert(&mut self, nu: MultiIndex) -> Result<(), MultiIndexError> {
        if self.lookup.contains(&nu) {
            return Err(MultiIndexError::Duplicate(nu));
        }
        let dims: Vec<u32> = nu.support().map(|(j, _)| j).collect();
        for j in dims {
            let parent = nu.decremented(j).expect("supported dimension");
            if !self.lookup.contains(&parent) {
                return Err(MultiIndexError::MissingParent(nu, parent));
            }
        }
        self.max_active_dim = self.max_active_dim.max(nu.max_dim());
        self.lookup.insert(nu.clone());
        self.members.push(nu);
        Ok(())
    }

    pub fn contains(&self, nu: &MultiIndex) -> bool {
        self.lookup.contains(nu)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Members in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &MultiIndex> {
        self.members.iter()
    }

    pub fn members(&self) -> &[MultiIndex] {
        &self.members
    }

    /// `j(Lambda)`: the smallest j such that `nu_{j+1} = 0` for every member,
    /// i.e. the largest dimension active anywhere in the set.
    pub fn active_dim(&self) -> u32 {
        self.max_active_dim
    }

    pub fn is_downward_closed(&self) -> bool {
        self.ensure_downward_closed().is_ok()
    }

    pub fn ensure_downward_closed(&self) -> Result<(), MultiIndexError> {
        if !self.lookup.contains(&MultiIndex::zero()) {
            return Err(MultiIndexError::MissingZero);
        }
        for nu in &self.members {
            for (j, _) in nu.support() {
                let parent = nu.decremented(j).expect("supported dimension");
                if !self.lookup.contains(&parent) {
                    return Err(MultiIndexError::NotDownwardClosed(parent));
                }
            }
        }
        Ok(())
    }

    /// The reduced forward neighbor set
    /// `{ nu not in Lambda : nu - e_j in Lambda for all supported j, and
    ///    nu_j = 0 for all j > min(j(Lambda)+1, dim_cap) }`,
    /// sorted in canonical order. `dim_cap` bounds the largest dimension
    /// that may ever activate (the truncation J).
    pub fn reduced_forward_neighbors(
        &self,
        dim_cap: u32,
    ) -> Result<Vec<MultiIndex>, MultiIndexError> {
        assert!(dim_cap >= 1, "dim_cap must be at least 1");
        self.ensure_downward_closed()?;
        let max_dim = self.max_active_dim.saturating_add(1).min(dim_cap);
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for mu in &self.members {
            for j in 1..=max_dim {
                let candidate = mu.incremented(j);
                if self.lookup.contains(&candidate) || seen.contains(&candidate) {
                    continue;
                }
                let admissible = candidate.support().all(|(k, _)| {
                    let parent = candidate.decremented(k).expect("supported dimension");
                    self.lookup.contains(&parent)
                });
                if admissible {
                    seen.insert(candidate.clone());
                    out.push(candidate);
                }
            }
        }
        out.sort_unstable();
        Ok(out)
    }
}

impl Serialize for IndexSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.members.len()))?;
        for nu in &self.members {
            seq.serialize_element(nu)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for IndexSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct SetVisitor;

        impl<'de> Visitor<'de> for SetVisitor {
            type Value = IndexSet;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an array of multi-indices in insertion order")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut access: A) -> Result<Self::Value, A::Error> {
                let mut members = Vec::new();
                while let Some(nu) = access.next_element::<MultiIndex>()? {
                    members.push(nu);
                }
                IndexSet::from_members(members).map_err(serde::de::Error::custom)
            }
        }

        deserializer.deserialize_seq(SetVisitor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mi(pairs: &[(u32, u32)]) -> MultiIndex {
        MultiIndex::from_pairs(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn leq_examples() {
        let zero = MultiIndex::zero();
        let e1 = MultiIndex::unit(1);
        let e2 = MultiIndex::unit(2);
        assert!(zero.leq(&e1));
        assert!(!e1.leq(&e2));
        assert!(!e2.leq(&e1));
        // (e1 + e3) <= (2 e1 + e3)
        assert!(mi(&[(1, 1), (3, 1)]).leq(&mi(&[(1, 2), (3, 1)])));
        assert!(!mi(&[(1, 2), (3, 1)]).leq(&mi(&[(1, 1), (3, 1)])));
    }

    #[test]
    fn norms_and_support() {
        let nu = mi(&[(1, 2), (7, 3)]);
        assert_eq!(nu.total_level(), 5);
        assert_eq!(nu.max_level(), 3);
        assert_eq!(nu.max_dim(), 7);
        assert_eq!(nu.level(1), 2);
        assert_eq!(nu.level(2), 0);
        assert_eq!(nu.support_len(), 2);
        assert!(MultiIndex::zero().is_zero());
        assert_eq!(MultiIndex::zero().max_level(), 0);
    }

    #[test]
    fn zero_levels_never_stored() {
        let nu = mi(&[(1, 0), (2, 3)]);
        assert_eq!(nu.support_len(), 1);
        let down = mi(&[(2, 1)]).decremented(2).unwrap();
        assert!(down.is_zero());
        assert_eq!(down.support_len(), 0);
    }

    #[test]
    fn increment_decrement_roundtrip() {
        let nu = mi(&[(3, 2)]);
        assert_eq!(nu.incremented(3).decremented(3), Some(nu.clone()));
        assert_eq!(nu.decremented(1), None);
    }

    #[test]
    fn canonical_order_is_dimension_then_level() {
        let zero = MultiIndex::zero();
        let e1 = MultiIndex::unit(1);
        let e2 = MultiIndex::unit(2);
        let two_e1 = mi(&[(1, 2)]);
        assert!(zero < e1);
        assert!(e1 < two_e1);
        assert!(two_e1 < e2);
    }

    #[test]
    fn downward_closed_examples() {
        let zero = MultiIndex::zero();
        let e1 = MultiIndex::unit(1);
        let e2 = MultiIndex::unit(2);
        let e12 = mi(&[(1, 1), (2, 1)]);
        assert!(is_downward_closed(std::slice::from_ref(&zero)));
        assert!(!is_downward_closed(&[
            zero.clone(),
            e1.clone(),
            e12.clone()
        ]));
        assert!(is_downward_closed(&[zero, e1, e2, e12]));
    }

    #[test]
    fn forward_neighbors_from_root() {
        let set = IndexSet::new();
        let neighbors = set.reduced_forward_neighbors(5).unwrap();
        assert_eq!(neighbors, vec![MultiIndex::unit(1)]);
    }

    #[test]
    fn forward_neighbors_after_e1() {
        let mut set = IndexSet::new();
        set.insert(MultiIndex::unit(1)).unwrap();
        let neighbors = set.reduced_forward_neighbors(5).unwrap();
        assert_eq!(neighbors, vec![mi(&[(1, 2)]), MultiIndex::unit(2)]);
    }

    #[test]
    fn forward_neighbors_respect_dim_cap() {
        let mut set = IndexSet::new();
        set.insert(MultiIndex::unit(1)).unwrap();
        let neighbors = set.reduced_forward_neighbors(1).unwrap();
        assert_eq!(neighbors, vec![mi(&[(1, 2)])]);
    }

    #[test]
    fn forward_neighbors_reject_non_downward_closed() {
        let bad = IndexSet::from_members_unchecked(vec![MultiIndex::zero(), mi(&[(1, 2)])]);
        assert!(bad.reduced_forward_neighbors(3).is_err());
        assert!(!bad.is_downward_closed());
    }

    #[test]
    fn insert_validates() {
        let mut set = IndexSet::new();
        assert!(set.insert(MultiIndex::zero()).is_err());
        assert!(set.insert(mi(&[(1, 2)])).is_err());
        set.insert(MultiIndex::unit(1)).unwrap();
        set.insert(mi(&[(1, 2)])).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.active_dim(), 1);
    }

    #[test]
    fn rectangle_examples() {
        let zero = MultiIndex::zero();
        assert_eq!(rectangle(&zero, 10).unwrap(), vec![zero.clone()]);

        let two_e1 = mi(&[(1, 2)]);
        assert_eq!(
            rectangle(&two_e1, 10).unwrap(),
            vec![zero.clone(), MultiIndex::unit(1), two_e1.clone()]
        );

        let e12 = mi(&[(1, 1), (2, 1)]);
        let rect = rectangle(&e12, 10).unwrap();
        assert_eq!(rect.len(), 4);
        assert_eq!(e12.rectangle_cardinality(), 4);
        for mu in &rect {
            assert!(mu.leq(&e12));
        }
    }

    #[test]
    fn rectangle_enforces_limit() {
        let nu = mi(&[(1, 9), (2, 9)]);
        assert!(matches!(
            rectangle(&nu, 64),
            Err(MultiIndexError::RectangleTooLarge { .. })
        ));
    }

    #[test]
    fn serde_roundtrip() {
        let nu = mi(&[(1, 2), (17, 1)]);
        let json = serde_json::to_string(&nu).unwrap();
        assert_eq!(json, r#"{"1":2,"17":1}"#);
        let back: MultiIndex = serde_json::from_str(&json).unwrap();
        assert_eq!(back, nu);

        let mut set = IndexSet::new();
        set.insert(MultiIndex::unit(1)).unwrap();
        set.insert(MultiIndex::unit(2)).unwrap();
        let json = serde_json::to_string(&set).unwrap();
        let back: IndexSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back.members(), set.members());
    }

    #[test]
    fn serde_rejects_invalid_sets() {
        // missing e_2 parent
        let json = r#"[{}, {"1":1}, {"1":1,"2":1}]"#;
        assert!(serde_json::from_str::<IndexSet>(json).is_err());
        // missing zero
        let json = r#"[{"1":1}]"#;
        assert!(serde_json::from_str::<IndexSet>(json).is_err());
    }

    /// Strategy: grow a random downward-closed set by repeatedly inserting a
    /// random admissible candidate.
    fn downward_closed_set(max_dim: u32, max_len: usize) -> impl Strategy<Value = IndexSet> {
        prop::collection::vec((0..1000u32, 0..1000u32), 0..max_len).prop_map(move |choices| {
            let mut set = IndexSet::new();
            for (dim_choice, member_choice) in choices {
                let base = set.members()[member_choice as usize % set.len()].clone();
                let j = 1 + dim_choice % max_dim;
                let candidate = base.incremented(j);
                if !set.contains(&candidate) {
                    let _ = set.insert(candidate);
                }
            }
            set
        })
    }

    proptest! {
        #[test]
        fn neighbors_preserve_downward_closedness(set in downward_closed_set(4, 24)) {
            let neighbors = set.reduced_forward_neighbors(4).unwrap();
            for nu in &neighbors {
                prop_assert!(!set.contains(nu));
                let mut grown = set.clone();
                grown.insert(nu.clone()).unwrap();
                prop_assert!(grown.is_downward_closed());
            }
        }

        #[test]
        fn inserting_neighbors_in_any_order_keeps_active_dim_monotone(
            set in downward_closed_set(4, 24),
            perm_seed in 0..64u32,
        ) {
            let mut neighbors = set.reduced_forward_neighbors(4).unwrap();
            // deterministic pseudo-shuffle
            let mut order = Vec::new();
            let mut state = perm_seed as usize;
            while !neighbors.is_empty() {
                state = (state * 31 + 7) % 97;
                order.push(neighbors.remove(state % neighbors.len()));
            }
            let mut grown = set.clone();
            let mut last = grown.active_dim();
            for nu in order {
                grown.insert(nu).unwrap();
                prop_assert!(grown.active_dim() >= last);
                last = grown.active_dim();
            }
        }

        #[test]
        fn rectangle_cardinality_is_product(levels in prop::collection::vec(0..4u32, 0..4)) {
            let pairs: Vec<(u32, u32)> = levels.iter().enumerate()
                .map(|(i, &l)| (i as u32 + 1, l))
                .collect();
            let nu = MultiIndex::from_pairs(pairs).unwrap();
            let rect = rectangle(&nu, 10_000).unwrap();
            let expected: u64 = nu.support().map(|(_, l)| u64::from(l) + 1).product();
            prop_assert_eq!(rect.len() as u64, expected);
            prop_assert_eq!(rect.len() as u64, nu.rectangle_cardinality());
        }

        #[test]
        fn partial_order_is_reflexive_and_antisymmetric(
            a in prop::collection::vec(0..4u32, 0..4),
            b in prop::collection::vec(0..4u32, 0..4),
        ) {
            let to_index = |v: &Vec<u32>| {
                MultiIndex::from_pairs(
                    v.iter().enumerate().map(|(i, &l)| (i as u32 + 1, l)),
                ).unwrap()
            };
            let (a, b) = (to_index(&a), to_index(&b));
            prop_assert!(a.leq(&a));
            if a.leq(&b) && b.leq(&a) {
                prop_assert_eq!(a, b);
            }
        }
    }
}
