//! Countable groups the walk engine runs on: integer lattices `Z^d` and
//! free groups `F_k`.
//!
//! Elements are concrete data (coordinate vectors, reduced words); a
//! [`GroupDescriptor`] names the ambient group and validates membership.
//! Free group words are stored fully reduced at all times: composition
//! cancels at the seam, so no separate normalization pass exists or is
//! needed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Ambient group: `Z^d` under addition or the free group `F_k` on `k`
/// generators under concatenation-with-cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupDescriptor {
    Lattice { dim: usize },
    Free { rank: usize },
}

impl GroupDescriptor {
    /// `Z^d`, `d >= 1`.
    pub fn lattice(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGroup("lattice dimension must be >= 1".into()));
        }
        Ok(GroupDescriptor::Lattice { dim })
    }

    /// `F_k`, `k >= 2`. Rank 1 would be `Z`, which is already covered by the
    /// lattice family and has different recurrence behavior than `F_k`.
    pub fn free(rank: usize) -> Result<Self> {
        if rank < 2 {
            return Err(Error::InvalidGroup("free group rank must be >= 2".into()));
        }
        if rank > MAX_RANK {
            return Err(Error::InvalidGroup(format!(
                "free group rank must be <= {MAX_RANK} (letter tokens a..z)"
            )));
        }
        Ok(GroupDescriptor::Free { rank })
    }

    /// Identity element of this group.
    pub fn identity(&self) -> GroupElement {
        match *self {
            GroupDescriptor::Lattice { dim } => GroupElement::Lattice(vec![0; dim]),
            GroupDescriptor::Free { .. } => GroupElement::Word(Vec::new()),
        }
    }

    /// Whether `a` is a well-formed element of this group. For words this
    /// includes reducedness, so every accepted element is in canonical form.
    pub fn belongs(&self, a: &GroupElement) -> bool {
        match (*self, a) {
            (GroupDescriptor::Lattice { dim }, GroupElement::Lattice(coords)) => {
                coords.len() == dim
            }
            (GroupDescriptor::Free { rank }, GroupElement::Word(letters)) => {
                letters.iter().all(|&l| l != 0 && l.unsigned_abs() as usize <= rank)
                    && letters.windows(2).all(|w| w[0] != -w[1])
            }
            _ => false,
        }
    }

    /// Group operation `a * b`. Lattice addition is overflow-checked in all
    /// build profiles; word concatenation cancels inverse pairs at the seam,
    /// so the result of composing reduced words is reduced.
    pub fn compose(&self, a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
        self.check_member(a)?;
        self.check_member(b)?;
        match (a, b) {
            (GroupElement::Lattice(x), GroupElement::Lattice(y)) => {
                let mut out = Vec::with_capacity(x.len());
                for (u, v) in x.iter().zip(y) {
                    out.push(u.checked_add(*v).ok_or_else(|| {
                        Error::InvalidGroup("lattice coordinate overflow".into())
                    })?);
                }
                Ok(GroupElement::Lattice(out))
            }
            (GroupElement::Word(x), GroupElement::Word(y)) => {
                let mut out = Vec::with_capacity(x.len() + y.len());
                out.extend_from_slice(x);
                for &l in y {
                    push_reduced(&mut out, l);
                }
                Ok(GroupElement::Word(out))
            }
            _ => unreachable!("check_member accepted mismatched kinds"),
        }
    }

    /// Group inverse.
    pub fn inverse(&self, a: &GroupElement) -> Result<GroupElement> {
        self.check_member(a)?;
        Ok(match a {
            GroupElement::Lattice(x) => {
                GroupElement::Lattice(x.iter().map(|c| -c).collect())
            }
            GroupElement::Word(x) => {
                GroupElement::Word(x.iter().rev().map(|l| -l).collect())
            }
        })
    }

    /// Canonical byte encoding, injective over the elements of one group:
    /// little-endian `i64` coordinates for lattices, a little-endian `u32`
    /// length prefix followed by little-endian `i32` letters for words.
    pub fn canonical_encode(&self, a: &GroupElement) -> Result<Vec<u8>> {
        self.check_member(a)?;
        let mut out = Vec::new();
        encode_into(a, &mut out);
        Ok(out)
    }

    /// Inverse of [`canonical_encode`](Self::canonical_encode). Rejects byte
    /// strings that do not decode to a member of this group, including
    /// unreduced words.
    pub fn canonical_decode(&self, bytes: &[u8]) -> Result<GroupElement> {
        let bad = |msg: &str| Error::InvalidGroup(format!("cannot decode element: {msg}"));
        let element = match *self {
            GroupDescriptor::Lattice { dim } => {
                if bytes.len() != dim * 8 {
                    return Err(bad("length does not match dimension"));
                }
                let coords = bytes
                    .chunks_exact(8)
                    .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                GroupElement::Lattice(coords)
            }
            GroupDescriptor::Free { .. } => {
                if bytes.len() < 4 {
                    return Err(bad("missing length prefix"));
                }
                let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
                if bytes.len() != 4 + 4 * len {
                    return Err(bad("length prefix does not match payload"));
                }
                let letters = bytes[4..]
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                GroupElement::Word(letters)
            }
        };
        self.check_member(&element)
            .map_err(|_| bad("decoded element fails membership"))?;
        Ok(element)
    }

    /// The standard generating set in a fixed order: `+e_1, -e_1, ...` for
    /// lattices and `g_1, g_1^-1, ...` for free groups. The order is part of
    /// the reproducibility contract of walks built from this set.
    pub fn standard_generators(&self) -> Vec<GroupElement> {
        match *self {
            GroupDescriptor::Lattice { dim } => {
                let mut out = Vec::with_capacity(2 * dim);
                for i in 0..dim {
                    for sign in [1i64, -1] {
                        let mut coords = vec![0i64; dim];
                        coords[i] = sign;
                        out.push(GroupElement::Lattice(coords));
                    }
                }
                out
            }
            GroupDescriptor::Free { rank } => {
                let mut out = Vec::with_capacity(2 * rank);
                for i in 1..=rank as i32 {
                    out.push(GroupElement::Word(vec![i]));
                    out.push(GroupElement::Word(vec![-i]));
                }
                out
            }
        }
    }

    /// Parse an element literal: `"(1,-2,0)"` (parentheses optional) for
    /// lattices; letter tokens for words, lowercase for generators and
    /// uppercase for their inverses, with `"e"` the identity. Word input is
    /// reduced on the way in, so `"aA"` parses to the identity.
    pub fn parse_element(&self, text: &str) -> Result<GroupElement> {
        let bad = |msg: String| Error::InvalidGroup(format!("bad element literal {text:?}: {msg}"));
        match *self {
            GroupDescriptor::Lattice { dim } => {
                let inner = text
                    .trim()
                    .trim_start_matches('(')
                    .trim_end_matches(')')
                    .trim();
                let coords: Vec<i64> = if inner.is_empty() {
                    Vec::new()
                } else {
                    inner
                        .split(',')
                        .map(|t| t.trim().parse::<i64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| bad(e.to_string()))?
                };
                if coords.len() != dim {
                    return Err(bad(format!("expected {dim} coordinates, got {}", coords.len())));
                }
                Ok(GroupElement::Lattice(coords))
            }
            GroupDescriptor::Free { rank } => {
                let t = text.trim();
                if t == "e" {
                    return Ok(GroupElement::Word(Vec::new()));
                }
                let mut letters = Vec::with_capacity(t.len());
                for c in t.chars() {
                    let l = match c {
                        'a'..='z' => (c as i32) - ('a' as i32) + 1,
                        'A'..='Z' => -((c as i32) - ('A' as i32) + 1),
                        _ => return Err(bad(format!("unexpected character {c:?}"))),
                    };
                    if l.unsigned_abs() as usize > rank {
                        return Err(bad(format!("letter {c:?} exceeds rank {rank}")));
                    }
                    push_reduced(&mut letters, l);
                }
                Ok(GroupElement::Word(letters))
            }
        }
    }

    fn check_member(&self, a: &GroupElement) -> Result<()> {
        if self.belongs(a) {
            Ok(())
        } else {
            Err(Error::ElementMismatch {
                group: self.to_string(),
                element: a.to_string(),
            })
        }
    }
}

impl fmt::Display for GroupDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            GroupDescriptor::Lattice { dim } => write!(f, "Z^{dim}"),
            GroupDescriptor::Free { rank } => write!(f, "F_{rank}"),
        }
    }
}

/// Letter tokens cover a..z.
const MAX_RANK: usize = 26;

/// A concrete group element. Words hold signed generator indices
/// (`1 <= |letter| <= rank`, negative for inverses) and are kept reduced.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum GroupElement {
    Lattice(Vec<i64>),
    Word(Vec<i32>),
}

impl GroupElement {
    /// Whether this is the identity of its group.
    pub fn is_identity(&self) -> bool {
        match self {
            GroupElement::Lattice(coords) => coords.iter().all(|&c| c == 0),
            GroupElement::Word(letters) => letters.is_empty(),
        }
    }

    /// Word length (number of letters) or lattice L1 norm; a cheap size
    /// proxy used in diagnostics.
    pub fn weight(&self) -> u64 {
        match self {
            GroupElement::Lattice(coords) => coords.iter().map(|c| c.unsigned_abs()).sum(),
            GroupElement::Word(letters) => letters.len() as u64,
        }
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupElement::Lattice(coords) => {
                write!(f, "(")?;
                for (i, c) in coords.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
            GroupElement::Word(letters) => {
                if letters.is_empty() {
                    return write!(f, "e");
                }
                for &l in letters {
                    let idx = (l.unsigned_abs() - 1) as u8;
                    let c = if l > 0 { b'a' + idx } else { b'A' + idx };
                    write!(f, "{}", c as char)?;
                }
                Ok(())
            }
        }
    }
}

/// Append one letter to a reduced word, cancelling against the tail.
#[inline]
pub(crate) fn push_reduced(word: &mut Vec<i32>, letter: i32) {
    debug_assert!(letter != 0);
    if word.last() == Some(&-letter) {
        word.pop();
    } else {
        word.push(letter);
    }
}

/// Serialize an element into `out` (cleared first) using the canonical
/// layout. Infallible: the element's own data determines the bytes.
#[inline]
pub(crate) fn encode_into(a: &GroupElement, out: &mut Vec<u8>) {
    out.clear();
    match a {
        GroupElement::Lattice(coords) => {
            out.reserve(coords.len() * 8);
            for c in coords {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        GroupElement::Word(letters) => {
            out.reserve(4 + letters.len() * 4);
            out.extend_from_slice(&(letters.len() as u32).to_le_bytes());
            for l in letters {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
    }
}

/// In-place `pos <- pos * inc` on the walk's hot path. Panics on lattice
/// overflow rather than wrapping; reaching 2^63 from validated step atoms
/// indicates a pathological configuration, not a recoverable state.
#[inline]
pub(crate) fn apply_increment(pos: &mut GroupElement, inc: &GroupElement) {
    match (pos, inc) {
        (GroupElement::Lattice(x), GroupElement::Lattice(y)) => {
            debug_assert_eq!(x.len(), y.len());
            for (u, v) in x.iter_mut().zip(y) {
                *u = u.checked_add(*v).expect("lattice coordinate overflow");
            }
        }
        (GroupElement::Word(x), GroupElement::Word(y)) => {
            for &l in y {
                push_reduced(x, l);
            }
        }
        _ => panic!("mismatched element kinds in walk step"),
    }
}
