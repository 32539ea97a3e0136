//! Site-count storage backends.
//!
//! The accumulator needs one counter per distinct visited site, bumped as
//! the walk moves. Two interchangeable backends exist:
//!
//! * [`HashedSites`]: canonical encoding -> counter in a deterministic hash
//!   map. Works for any group; each visit hashes the full encoding, which
//!   for free group words of length `O(t)` makes a trajectory quadratic in
//!   the number of bytes touched.
//! * [`TreeSites`]: exploits the fact that the Cayley graph of a free group
//!   is a tree. Sites are nodes in a lazily grown trie; a single-letter step
//!   moves to a parent or child in O(1), independent of word length.
//!
//! Both return the updated visit count so the caller can maintain histogram
//! and functional sums incrementally. Agreement between the two backends on
//! free groups is part of the test suite.

use crate::group::{apply_increment, encode_into, GroupDescriptor, GroupElement};
use crate::hash::DetMap;

pub(crate) enum SiteStore {
    Hashed(HashedSites),
    Tree(TreeSites),
}

impl SiteStore {
    /// Preferred backend for a group: tree for free groups, hashed map
    /// otherwise.
    pub fn auto(group: GroupDescriptor) -> Self {
        match group {
            GroupDescriptor::Free { .. } => SiteStore::Tree(TreeSites::new()),
            GroupDescriptor::Lattice { .. } => SiteStore::Hashed(HashedSites::new(group)),
        }
    }

    /// Force the generic backend (used for cross-validation).
    pub fn hashed(group: GroupDescriptor) -> Self {
        SiteStore::Hashed(HashedSites::new(group))
    }

    /// Register a visit to an absolute position; returns the new count.
    pub fn visit_position(&mut self, pos: &GroupElement) -> u32 {
        match self {
            SiteStore::Hashed(h) => h.visit_position(pos),
            SiteStore::Tree(t) => t.visit_position(pos),
        }
    }

    /// Move by an increment from the last visited position and register a
    /// visit there; returns the new count. Only valid after at least one
    /// `visit_position`.
    pub fn advance(&mut self, inc: &GroupElement) -> u32 {
        match self {
            SiteStore::Hashed(h) => h.advance(inc),
            SiteStore::Tree(t) => t.advance(inc),
        }
    }

    /// Visit counts of all occupied sites, in backend order. Used by the
    /// table-route functional sums and consistency checks.
    pub fn counts(&self) -> Box<dyn Iterator<Item = u32> + '_> {
        match self {
            SiteStore::Hashed(h) => Box::new(h.map.values().copied()),
            SiteStore::Tree(t) => {
                Box::new(t.nodes.iter().map(|n| n.count).filter(|&c| c > 0))
            }
        }
    }

    pub fn backend_name(&self) -> &'static str {
        match self {
            SiteStore::Hashed(_) => "hashed",
            SiteStore::Tree(_) => "tree",
        }
    }
}

/// Generic backend: canonical bytes -> count.
pub(crate) struct HashedSites {
    current: GroupElement,
    key_buf: Vec<u8>,
    map: DetMap<Box<[u8]>, u32>,
}

impl HashedSites {
    fn new(group: GroupDescriptor) -> Self {
        HashedSites {
            current: group.identity(),
            key_buf: Vec::new(),
            map: DetMap::default(),
        }
    }

    fn bump(&mut self) -> u32 {
        if let Some(c) = self.map.get_mut(self.key_buf.as_slice()) {
            *c += 1;
            *c
        } else {
            self.map
                .insert(self.key_buf.clone().into_boxed_slice(), 1);
            1
        }
    }

    fn visit_position(&mut self, pos: &GroupElement) -> u32 {
        self.current.clone_from(pos);
        encode_into(&self.current, &mut self.key_buf);
        self.bump()
    }

    fn advance(&mut self, inc: &GroupElement) -> u32 {
        apply_increment(&mut self.current, inc);
        encode_into(&self.current, &mut self.key_buf);
        self.bump()
    }
}

/// Tree backend for free groups. Node 0 is the identity; every other node
/// stores the letter of the edge from its parent, so the path from the root
/// spells the node's reduced word. Stepping by a letter either cancels the
/// incoming edge (move to parent) or extends the word (move to a child).
pub(crate) struct TreeSites {
    nodes: Vec<TreeNode>,
    /// `(node << 32) | letter bits` -> child node.
    children: DetMap<u64, u32>,
    current: u32,
}

struct TreeNode {
    parent: u32,
    /// Letter on the edge from the parent; 0 only at the root.
    letter: i32,
    count: u32,
}

impl TreeSites {
    fn new() -> Self {
        TreeSites {
            nodes: vec![TreeNode {
                parent: 0,
                letter: 0,
                count: 0,
            }],
            children: DetMap::default(),
            current: 0,
        }
    }

    #[inline]
    fn child_key(node: u32, letter: i32) -> u64 {
        (u64::from(node) << 32) | u64::from(letter as u32)
    }

    #[inline]
    fn step_letter(&mut self, letter: i32) {
        debug_assert!(letter != 0);
        let node = &self.nodes[self.current as usize];
        if self.current != 0 && node.letter == -letter {
            self.current = node.parent;
            return;
        }
        let key = Self::child_key(self.current, letter);
        if let Some(&child) = self.children.get(&key) {
            self.current = child;
            return;
        }
        let child = self.nodes.len() as u32;
        self.nodes.push(TreeNode {
            parent: self.current,
            letter,
            count: 0,
        });
        self.children.insert(key, child);
        self.current = child;
    }

    fn bump_current(&mut self) -> u32 {
        let c = &mut self.nodes[self.current as usize].count;
        *c += 1;
        *c
    }

    fn visit_position(&mut self, pos: &GroupElement) -> u32 {
        let GroupElement::Word(letters) = pos else {
            panic!("tree backend requires word elements");
        };
        self.current = 0;
        for &l in letters {
            self.step_letter(l);
        }
        self.bump_current()
    }

    fn advance(&mut self, inc: &GroupElement) -> u32 {
        let GroupElement::Word(letters) = inc else {
            panic!("tree backend requires word elements");
        };
        for &l in letters {
            self.step_letter(l);
        }
        self.bump_current()
    }
}
