//! Counter-based adaptive tree.
//!
//! Leaves are counters that each cover a contiguous, power-of-two sized block
//! of rows. Only the tree shape is stored: a table of intermediate nodes with
//! two child references and two leaf flags, plus the counter table. A leaf's
//! row range is implied by its position, so locating a row is a walk that uses
//! one address bit per level.
//!
//! The top `lambda` levels are pre-split into a complete tree. Their leaves (or
//! the subtrees that replaced them) are reachable directly through an entry
//! table indexed by the top `lambda - 1` address bits, so a lookup needs at
//! most `L - lambda + 1` references.

use std::fmt::Write as _;

use thiserror::Error;

use crate::model::{BankConfig, BankId, ConfigError, RefreshCause, RefreshEvent, Row};
use crate::thresholds::{SplitThresholds, ThresholdError};

/// Largest value a weight register holds (two bits).
pub const MAX_WEIGHT: u8 = 3;

/// Reference from an intermediate node (or the entry table) to a successor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Child {
    Leaf(u32),
    Node(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IntermediateNode {
    pub left_child: u32,
    pub right_child: u32,
    pub left_is_leaf: bool,
    pub right_is_leaf: bool,
}

impl IntermediateNode {
    pub fn new(left: Child, right: Child) -> Self {
        let mut n = IntermediateNode {
            left_child: 0,
            right_child: 0,
            left_is_leaf: true,
            right_is_leaf: true,
        };
        n.set_left(left);
        n.set_right(right);
        n
    }

    pub fn left(&self) -> Child {
        if self.left_is_leaf {
            Child::Leaf(self.left_child)
        } else {
            Child::Node(self.left_child)
        }
    }

    pub fn right(&self) -> Child {
        if self.right_is_leaf {
            Child::Leaf(self.right_child)
        } else {
            Child::Node(self.right_child)
        }
    }

    pub fn set_left(&mut self, c: Child) {
        (self.left_child, self.left_is_leaf) = split_child(c);
    }

    pub fn set_right(&mut self, c: Child) {
        (self.right_child, self.right_is_leaf) = split_child(c);
    }
}

fn split_child(c: Child) -> (u32, bool) {
    match c {
        Child::Leaf(i) => (i, true),
        Child::Node(i) => (i, false),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct CounterSlot {
    pub count: u32,
    /// Index of the split threshold currently applied to this counter.
    pub level: u32,
    /// Hotness register used by dynamic reconfiguration.
    pub weight: u8,
    pub active: bool,
    depth: u32,
}

impl CounterSlot {
    /// An active slot; the depth is filled in when the slot is placed in a tree.
    pub fn active(count: u32, level: u32, weight: u8) -> Self {
        CounterSlot {
            count,
            level,
            weight,
            active: true,
            depth: 0,
        }
    }

    /// Depth of the leaf in the tree (root = 0); equals `level` until the tree is full.
    pub fn depth(&self) -> u32 {
        self.depth
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Thresholds(#[from] ThresholdError),
    #[error("tree invariant violated: {0}")]
    Corrupt(String),
    #[error("cannot split counter {counter}: {reason}")]
    SplitPrecondition { counter: u32, reason: &'static str },
    #[error("node {0} does not have two leaf children")]
    NotMergeable(u32),
    #[error("row {row} is outside the bank ({n_rows} rows)")]
    RowOutOfRange { row: Row, n_rows: u32 },
}

/// A leaf and the row block it covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeafRange {
    pub counter: u32,
    pub low: Row,
    pub high: Row,
    pub depth: u32,
}

/// A counter that reached the refresh threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeafRefresh {
    pub counter: u32,
    pub low: Row,
    pub high: Row,
    pub depth: u32,
}

impl LeafRefresh {
    /// Refresh command covering the block plus one row on each side.
    pub fn to_event(&self, bank: BankId, n_rows: u32, timestamp_ns: u64) -> RefreshEvent {
        RefreshEvent::widened(
            bank,
            self.low,
            self.high,
            n_rows,
            RefreshCause::ThresholdLeaf,
            timestamp_ns,
        )
    }
}

/// Outcome of merging two sibling leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Merge {
    pub node: u32,
    pub kept: u32,
    pub freed: u32,
}

/// Where a child reference is stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Entry(usize),
    Left(u32),
    Right(u32),
}

#[derive(Debug, Clone, Copy)]
struct Located {
    slot: Slot,
    child: Child,
    low: Row,
    size: u32,
    depth: u32,
    hops: u32,
}

/// The adaptive tree of one bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatState {
    cfg: BankConfig,
    thresholds: SplitThresholds,
    nodes: Vec<IntermediateNode>,
    node_used: Vec<bool>,
    counters: Vec<CounterSlot>,
    /// Subtree roots at depth `lambda - 1`, left to right.
    entries: Vec<Child>,
    active: u32,
}

impl CatState {
    /// A complete tree of `lambda` levels with every count at zero.
    pub fn new(cfg: BankConfig, thresholds: SplitThresholds) -> Result<Self, TreeError> {
        let cfg = cfg.validate()?;
        thresholds.check_against(cfg.max_levels, cfg.refresh_threshold)?;
        let m = cfg.m_counters as usize;
        let k = 1usize << (cfg.presplit_levels - 1);
        let internal = k - 1;
        let mut nodes = vec![IntermediateNode::new(Child::Leaf(0), Child::Leaf(0)); m.saturating_sub(1)];
        let mut node_used = vec![false; m.saturating_sub(1)];
        // Heap layout: node j has children 2j+1 and 2j+2; heap positions past the
        // last internal node are the leaves C0..C(k-1), left to right.
        let heap_child = |h: usize| {
            if h >= internal {
                Child::Leaf((h - internal) as u32)
            } else {
                Child::Node(h as u32)
            }
        };
        for j in 0..internal {
            nodes[j] = IntermediateNode::new(heap_child(2 * j + 1), heap_child(2 * j + 2));
            node_used[j] = true;
        }
        let level = cfg.presplit_levels - 1;
        let mut counters = vec![CounterSlot::default(); m];
        for c in counters.iter_mut().take(k) {
            *c = CounterSlot {
                count: 0,
                level,
                weight: 0,
                active: true,
                depth: level,
            };
        }
        let mut state = CatState {
            cfg,
            thresholds,
            nodes,
            node_used,
            counters,
            entries: (0..k as u32).map(Child::Leaf).collect(),
            active: k as u32,
        };
        state.promote_if_full();
        Ok(state)
    }

    /// Builds a tree from explicit tables (single entry, i.e. no direct-index
    /// pre-split). `nodes[i] == None` marks a free node entry. Leaf depths are
    /// derived from the structure; counter levels are taken as given.
    pub fn from_parts(
        cfg: BankConfig,
        thresholds: SplitThresholds,
        root: Child,
        nodes: Vec<Option<IntermediateNode>>,
        counters: Vec<CounterSlot>,
    ) -> Result<Self, TreeError> {
        let mut cfg = cfg.validate()?;
        cfg.presplit_levels = 1;
        thresholds.check_against(cfg.max_levels, cfg.refresh_threshold)?;
        let m = cfg.m_counters as usize;
        if counters.len() != m || nodes.len() > m.saturating_sub(1) {
            return Err(TreeError::Corrupt(format!(
                "expected {m} counters and at most {} nodes",
                m.saturating_sub(1)
            )));
        }
        let mut node_table = vec![IntermediateNode::new(Child::Leaf(0), Child::Leaf(0)); m.saturating_sub(1)];
        let mut node_used = vec![false; m.saturating_sub(1)];
        for (i, n) in nodes.into_iter().enumerate() {
            if let Some(n) = n {
                node_table[i] = n;
                node_used[i] = true;
            }
        }
        let active = counters.iter().filter(|c| c.active).count() as u32;
        let mut state = CatState {
            cfg,
            thresholds,
            nodes: node_table,
            node_used,
            counters,
            entries: vec![root],
            active,
        };
        let ranges = state.collect_leaves()?;
        for r in &ranges {
            state.counters[r.counter as usize].depth = r.depth;
        }
        state.check_invariants()?;
        Ok(state)
    }

    pub fn config(&self) -> &BankConfig {
        &self.cfg
    }

    pub fn thresholds(&self) -> &SplitThresholds {
        &self.thresholds
    }

    pub fn counters(&self) -> &[CounterSlot] {
        &self.counters
    }

    pub fn counter(&self, i: u32) -> &CounterSlot {
        &self.counters[i as usize]
    }

    /// Node table entry, or `None` when the entry is free.
    pub fn node(&self, i: u32) -> Option<&IntermediateNode> {
        self.node_used
            .get(i as usize)
            .copied()
            .unwrap_or(false)
            .then(|| &self.nodes[i as usize])
    }

    pub fn nodes_in_use(&self) -> usize {
        self.node_used.iter().filter(|u| **u).count()
    }

    pub fn active_counters(&self) -> u32 {
        self.active
    }

    /// Highest activated counter index while the tree is growing.
    pub fn last_activated(&self) -> u32 {
        self.active - 1
    }

    /// All counters are in use.
    pub fn is_full(&self) -> bool {
        self.active == self.cfg.m_counters
    }

    pub fn root(&self) -> Child {
        if self.cfg.presplit_levels == 1 {
            self.entries[0]
        } else {
            Child::Node(0)
        }
    }

    pub fn weights(&self) -> Vec<u8> {
        self.counters.iter().map(|c| c.weight).collect()
    }

    pub fn set_weight(&mut self, counter: u32, weight: u8) {
        self.counters[counter as usize].weight = weight.min(MAX_WEIGHT);
    }

    /// Counter whose block contains `row`.
    pub fn locate(&self, row: Row) -> Result<u32, TreeError> {
        self.locate_with_hops(row).map(|(c, _)| c)
    }

    /// Counter for `row` and the number of child references followed,
    /// counting the entry-table lookup.
    pub fn locate_with_hops(&self, row: Row) -> Result<(u32, u32), TreeError> {
        let loc = self.walk(row)?;
        match loc.child {
            Child::Leaf(c) => Ok((c, loc.hops)),
            Child::Node(_) => unreachable!("walk ends at a leaf"),
        }
    }

    fn walk(&self, row: Row) -> Result<Located, TreeError> {
        if row >= self.cfg.n_rows {
            return Err(TreeError::RowOutOfRange {
                row,
                n_rows: self.cfg.n_rows,
            });
        }
        let entry_depth = self.cfg.presplit_levels - 1;
        let size = self.cfg.rows_at_depth(entry_depth);
        let p = (row / size) as usize;
        let mut loc = Located {
            slot: Slot::Entry(p),
            child: self.entries[p],
            low: p as u32 * size,
            size,
            depth: entry_depth,
            hops: 1,
        };
        loop {
            match loc.child {
                Child::Leaf(c) => {
                    if !self.counters.get(c as usize).is_some_and(|s| s.active) {
                        return Err(TreeError::Corrupt(format!("reference to inactive counter {c}")));
                    }
                    return Ok(loc);
                }
                Child::Node(n) => {
                    if !self.node_used.get(n as usize).copied().unwrap_or(false) {
                        return Err(TreeError::Corrupt(format!("reference to free node {n}")));
                    }
                    if loc.depth + 1 >= self.cfg.max_levels {
                        return Err(TreeError::Corrupt(format!("node {n} below the deepest level")));
                    }
                    let node = &self.nodes[n as usize];
                    let half = loc.size / 2;
                    if row < loc.low + half {
                        loc.slot = Slot::Left(n);
                        loc.child = node.left();
                    } else {
                        loc.slot = Slot::Right(n);
                        loc.child = node.right();
                        loc.low += half;
                    }
                    loc.size = half;
                    loc.depth += 1;
                    loc.hops += 1;
                }
            }
        }
    }

    /// Counts one activation of `row`. Returns the block to refresh when its
    /// counter reaches the refresh threshold.
    ///
    /// Panics if `row` is outside the bank.
    pub fn record_access(&mut self, row: Row) -> Option<LeafRefresh> {
        let mut loc = self.walk(row).expect("row within bank and consistent tree");
        let t = self.cfg.refresh_threshold;
        let last_level = self.cfg.max_levels - 1;
        let Child::Leaf(mut c) = loc.child else {
            unreachable!()
        };
        {
            let slot = &mut self.counters[c as usize];
            slot.count = (slot.count + 1).min(t);
        }
        loop {
            let slot = self.counters[c as usize];
            if slot.count < self.thresholds.at(slot.level) {
                return None;
            }
            if slot.level < last_level && !self.is_full() {
                let node = self.split_at(&loc);
                // Continue with the half that holds the accessed row; it may
                // already be at its own threshold.
                let half = loc.size / 2;
                let n = &self.nodes[node as usize];
                if row < loc.low + half {
                    loc.slot = Slot::Left(node);
                    loc.child = n.left();
                } else {
                    loc.slot = Slot::Right(node);
                    loc.child = n.right();
                    loc.low += half;
                }
                loc.size = half;
                loc.depth += 1;
                let Child::Leaf(next) = loc.child else {
                    unreachable!()
                };
                c = next;
                continue;
            }
            debug_assert!(slot.level == last_level, "a full tree has every level at L-1");
            self.counters[c as usize].count = 0;
            return Some(LeafRefresh {
                counter: c,
                low: loc.low,
                high: loc.low + loc.size - 1,
                depth: loc.depth,
            });
        }
    }

    /// Splits leaf `counter` using the lowest free counter and node entries.
    /// The old counter keeps the lower half and the new one (a clone) takes the
    /// upper half. Returns the new counter index.
    pub fn split(&mut self, counter: u32) -> Result<u32, TreeError> {
        let loc = self.find_leaf(counter).ok_or(TreeError::SplitPrecondition {
            counter,
            reason: "not an active leaf",
        })?;
        if self.is_full() {
            return Err(TreeError::SplitPrecondition {
                counter,
                reason: "no free counter",
            });
        }
        if loc.depth + 1 >= self.cfg.max_levels {
            return Err(TreeError::SplitPrecondition {
                counter,
                reason: "leaf is at the deepest level",
            });
        }
        let node = self.split_at(&loc);
        match self.nodes[node as usize].right() {
            Child::Leaf(c) => Ok(c),
            Child::Node(_) => unreachable!(),
        }
    }

    fn split_at(&mut self, loc: &Located) -> u32 {
        let Child::Leaf(old) = loc.child else {
            unreachable!()
        };
        let new_counter = self
            .counters
            .iter()
            .position(|c| !c.active)
            .expect("caller checked for a free counter") as u32;
        let node = self
            .node_used
            .iter()
            .position(|u| !u)
            .expect("free node exists whenever a counter is free") as u32;
        let last_level = self.cfg.max_levels - 1;
        let o = self.counters[old as usize];
        let child_level = (o.level + 1).min(last_level);
        self.counters[new_counter as usize] = CounterSlot {
            count: o.count,
            level: child_level,
            weight: 0,
            active: true,
            depth: o.depth + 1,
        };
        let o = &mut self.counters[old as usize];
        o.level = child_level;
        o.depth += 1;
        self.nodes[node as usize] = IntermediateNode::new(Child::Leaf(old), Child::Leaf(new_counter));
        self.node_used[node as usize] = true;
        self.set_slot(loc.slot, Child::Node(node));
        self.active += 1;
        self.promote_if_full();
        node
    }

    /// Once every counter is active all thresholds become the refresh threshold.
    fn promote_if_full(&mut self) {
        if self.is_full() {
            let last = self.cfg.max_levels - 1;
            for c in self.counters.iter_mut().filter(|c| c.active) {
                c.level = last;
            }
        }
    }

    /// Merges the two leaf children of `node` into one leaf at the node's
    /// position. The right child's counter is kept with the larger of the two
    /// counts; the left counter and the node entry are freed.
    pub fn merge(&mut self, node: u32) -> Result<Merge, TreeError> {
        let n = *self.node(node).ok_or(TreeError::NotMergeable(node))?;
        let (Child::Leaf(left), Child::Leaf(right)) = (n.left(), n.right()) else {
            return Err(TreeError::NotMergeable(node));
        };
        let (slot, depth) = self.find_node_slot(node).ok_or(TreeError::NotMergeable(node))?;
        // Nodes above the entry level belong to the pre-split skeleton.
        if depth < self.cfg.presplit_levels - 1 {
            return Err(TreeError::NotMergeable(node));
        }
        let count = self.counters[left as usize]
            .count
            .max(self.counters[right as usize].count);
        {
            let k = &mut self.counters[right as usize];
            k.count = count;
            k.depth -= 1;
        }
        self.counters[left as usize] = CounterSlot::default();
        self.node_used[node as usize] = false;
        self.set_slot(slot, Child::Leaf(right));
        self.active -= 1;
        Ok(Merge {
            node,
            kept: right,
            freed: left,
        })
    }

    /// Lowest-index node at depth `>= lambda - 1` whose children are two
    /// leaves accepted by `pred`.
    pub fn find_mergeable(&self, mut pred: impl FnMut(&CounterSlot, &CounterSlot) -> bool) -> Option<u32> {
        let depths = self.node_depths();
        let min_depth = self.cfg.presplit_levels - 1;
        (0..self.nodes.len() as u32).find(|&i| {
            let Some(d) = depths[i as usize] else { return false };
            if d < min_depth {
                return false;
            }
            let n = &self.nodes[i as usize];
            match (n.left(), n.right()) {
                (Child::Leaf(a), Child::Leaf(b)) => {
                    pred(&self.counters[a as usize], &self.counters[b as usize])
                }
                _ => false,
            }
        })
    }

    /// Rebuilds the initial pre-split tree.
    pub fn reset(&mut self) {
        *self = CatState::new(self.cfg, self.thresholds.clone()).expect("configuration was valid");
    }

    /// Zeroes every count, keeping shape, levels and weights.
    pub fn clear_counts(&mut self) {
        for c in &mut self.counters {
            c.count = 0;
        }
    }

    /// Leaves in address order.
    pub fn leaf_ranges(&self) -> Vec<LeafRange> {
        self.collect_leaves().expect("consistent tree")
    }

    fn collect_leaves(&self) -> Result<Vec<LeafRange>, TreeError> {
        let mut out = Vec::with_capacity(self.active as usize);
        let mut seen_nodes = 0usize;
        let mut stack: Vec<(Child, Row, u32, u32)> = Vec::new();
        let entry_depth = self.cfg.presplit_levels - 1;
        let size = self.cfg.rows_at_depth(entry_depth);
        for (p, &e) in self.entries.iter().enumerate().rev() {
            stack.push((e, p as u32 * size, size, entry_depth));
        }
        while let Some((child, low, size, depth)) = stack.pop() {
            if depth >= self.cfg.max_levels {
                return Err(TreeError::Corrupt(format!("depth {depth} exceeds L-1")));
            }
            match child {
                Child::Leaf(c) => {
                    if !self.counters.get(c as usize).is_some_and(|s| s.active) {
                        return Err(TreeError::Corrupt(format!("inactive counter {c} in tree")));
                    }
                    out.push(LeafRange {
                        counter: c,
                        low,
                        high: low + size - 1,
                        depth,
                    });
                }
                Child::Node(n) => {
                    if !self.node_used.get(n as usize).copied().unwrap_or(false) {
                        return Err(TreeError::Corrupt(format!("free node {n} in tree")));
                    }
                    seen_nodes += 1;
                    if seen_nodes > self.nodes.len() {
                        return Err(TreeError::Corrupt("cycle in node table".into()));
                    }
                    let node = &self.nodes[n as usize];
                    let half = size / 2;
                    stack.push((node.right(), low + half, half, depth + 1));
                    stack.push((node.left(), low, half, depth + 1));
                }
            }
        }
        Ok(out)
    }

    fn find_leaf(&self, counter: u32) -> Option<Located> {
        self.find(|c| c == Child::Leaf(counter))
    }

    fn find_node_slot(&self, node: u32) -> Option<(Slot, u32)> {
        if self.cfg.presplit_levels > 1 && node < (1 << (self.cfg.presplit_levels - 1)) - 1 {
            // Skeleton node above the entry level.
            let depth = (node + 1).ilog2();
            return Some((Slot::Entry(usize::MAX), depth));
        }
        self.find(|c| c == Child::Node(node)).map(|l| (l.slot, l.depth))
    }

    /// Depth-first search below the entry level for a matching reference.
    fn find(&self, mut pred: impl FnMut(Child) -> bool) -> Option<Located> {
        let entry_depth = self.cfg.presplit_levels - 1;
        let size = self.cfg.rows_at_depth(entry_depth);
        let mut stack: Vec<Located> = self
            .entries
            .iter()
            .enumerate()
            .map(|(p, &e)| Located {
                slot: Slot::Entry(p),
                child: e,
                low: p as u32 * size,
                size,
                depth: entry_depth,
                hops: 1,
            })
            .collect();
        while let Some(loc) = stack.pop() {
            if pred(loc.child) {
                return Some(loc);
            }
            if let Child::Node(n) = loc.child {
                let node = &self.nodes[n as usize];
                let half = loc.size / 2;
                stack.push(Located {
                    slot: Slot::Left(n),
                    child: node.left(),
                    low: loc.low,
                    size: half,
                    depth: loc.depth + 1,
                    hops: loc.hops + 1,
                });
                stack.push(Located {
                    slot: Slot::Right(n),
                    child: node.right(),
                    low: loc.low + half,
                    size: half,
                    depth: loc.depth + 1,
                    hops: loc.hops + 1,
                });
            }
        }
        None
    }

    fn node_depths(&self) -> Vec<Option<u32>> {
        let mut depths = vec![None; self.nodes.len()];
        let mut stack = vec![(self.root(), 0u32)];
        while let Some((c, d)) = stack.pop() {
            if let Child::Node(n) = c {
                depths[n as usize] = Some(d);
                let node = &self.nodes[n as usize];
                stack.push((node.left(), d + 1));
                stack.push((node.right(), d + 1));
            }
        }
        depths
    }

    fn set_slot(&mut self, slot: Slot, child: Child) {
        match slot {
            Slot::Left(n) => self.nodes[n as usize].set_left(child),
            Slot::Right(n) => self.nodes[n as usize].set_right(child),
            Slot::Entry(p) => {
                self.entries[p] = child;
                let k = 1usize << (self.cfg.presplit_levels - 1);
                if k > 1 {
                    // Keep the skeleton node that owns this entry in sync.
                    let h = k - 1 + p;
                    let parent = (h - 1) / 2;
                    if h % 2 == 1 {
                        self.nodes[parent].set_left(child);
                    } else {
                        self.nodes[parent].set_right(child);
                    }
                }
            }
        }
    }

    /// Full structural check: partition of the bank into aligned power-of-two
    /// blocks, `nodes in use = leaves - 1`, bounded depth, counts and weights
    /// in range, and every node and counter referenced exactly once.
    pub fn check_invariants(&self) -> Result<(), TreeError> {
        let leaves = self.collect_leaves()?;
        let corrupt = |m: String| Err(TreeError::Corrupt(m));
        if leaves.len() as u32 != self.active {
            return corrupt(format!(
                "{} leaves but {} active counters",
                leaves.len(),
                self.active
            ));
        }
        if self.nodes_in_use() + 1 != leaves.len() {
            return corrupt(format!(
                "{} nodes for {} leaves",
                self.nodes_in_use(),
                leaves.len()
            ));
        }
        let mut seen = vec![false; self.counters.len()];
        let mut next = 0u32;
        for r in &leaves {
            if r.low != next {
                return corrupt(format!("gap or overlap at row {next}"));
            }
            let width = r.high - r.low + 1;
            if width != self.cfg.rows_at_depth(r.depth) || r.low % width != 0 {
                return corrupt(format!("counter {} covers a misaligned block", r.counter));
            }
            if std::mem::replace(&mut seen[r.counter as usize], true) {
                return corrupt(format!("counter {} referenced twice", r.counter));
            }
            let slot = &self.counters[r.counter as usize];
            if slot.depth != r.depth {
                return corrupt(format!("counter {} depth cache is stale", r.counter));
            }
            if slot.count > self.cfg.refresh_threshold || slot.weight > MAX_WEIGHT {
                return corrupt(format!("counter {} out of range", r.counter));
            }
            if slot.level >= self.cfg.max_levels {
                return corrupt(format!("counter {} level out of range", r.counter));
            }
            next = r.high + 1;
        }
        if next != self.cfg.n_rows {
            return corrupt(format!("leaves end at row {next}"));
        }
        Ok(())
    }

    /// Deterministic pre-order dump, one node per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let mut stack = vec![(self.root(), 0u32, self.cfg.n_rows, 0u32)];
        while let Some((c, low, size, depth)) = stack.pop() {
            let indent = "  ".repeat(depth as usize);
            let high = low + size - 1;
            match c {
                Child::Leaf(i) => {
                    let s = &self.counters[i as usize];
                    let _ = writeln!(
                        out,
                        "{indent}C{i} [{low},{high}] depth={depth} level={} count={} weight={}",
                        s.level, s.count, s.weight
                    );
                }
                Child::Node(n) => {
                    let _ = writeln!(out, "{indent}I{n} [{low},{high}] depth={depth}");
                    let node = &self.nodes[n as usize];
                    stack.push((node.right(), low + size / 2, size / 2, depth + 1));
                    stack.push((node.left(), low, size / 2, depth + 1));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thresholds::Provenance;

    fn cfg(n: u32, m: u32, l: u32, t: u32, lambda: u32) -> BankConfig {
        BankConfig {
            n_rows: n,
            m_counters: m,
            max_levels: l,
            refresh_threshold: t,
            presplit_levels: lambda,
            refresh_interval_ns: 64_000_000,
        }
    }

    fn th(l: u32, values: Vec<u32>) -> SplitThresholds {
        SplitThresholds::ending_at(l, values, Provenance::Custom).unwrap()
    }

    fn ranges(s: &CatState) -> Vec<(u32, u32, u32, u32)> {
        s.leaf_ranges()
            .iter()
            .map(|r| (r.counter, r.low, r.high, r.depth))
            .collect()
    }

    #[test]
    fn presplit_shapes() {
        let s = CatState::new(cfg(64, 8, 4, 16, 3), th(4, vec![2, 4, 8, 16])).unwrap();
        assert_eq!(s.active_counters(), 4);
        assert_eq!(s.nodes_in_use(), 3);
        assert_eq!(s.last_activated(), 3);
        assert!(s
            .counters()
            .iter()
            .filter(|c| c.active)
            .all(|c| c.level == 2 && c.count == 0));

        let one = CatState::new(cfg(16, 4, 3, 8, 1), th(3, vec![2, 4, 8])).unwrap();
        assert_eq!(ranges(&one), vec![(0, 0, 15, 0)]);

        let two = CatState::new(cfg(16, 4, 3, 8, 2), th(3, vec![2, 4, 8])).unwrap();
        assert_eq!(ranges(&two), vec![(0, 0, 7, 1), (1, 8, 15, 1)]);
    }

    #[test]
    fn locate_examples() {
        let single = CatState::new(cfg(16, 1, 1, 8, 1), th(1, vec![8])).unwrap();
        assert!((0..16).all(|r| single.locate(r).unwrap() == 0));

        // Leaves [0,7], [8,11], [12,15].
        let mut s = CatState::new(cfg(16, 4, 3, 8, 2), th(3, vec![2, 4, 8])).unwrap();
        s.split(1).unwrap();
        assert_eq!(ranges(&s), vec![(0, 0, 7, 1), (1, 8, 11, 2), (2, 12, 15, 2)]);
        assert_eq!(s.locate(9).unwrap(), 1);
        assert!(s.locate(16).is_err());
    }

    #[test]
    fn record_access_hand_trace() {
        let mut s = CatState::new(cfg(8, 2, 2, 8, 1), th(2, vec![4, 8])).unwrap();
        for _ in 0..4 {
            assert!(s.record_access(5).is_none());
        }
        assert_eq!(ranges(&s), vec![(0, 0, 3, 1), (1, 4, 7, 1)]);
        assert_eq!(s.counter(0).count, 4);
        assert_eq!(s.counter(1).count, 4);
        for _ in 0..3 {
            assert!(s.record_access(5).is_none());
        }
        let r = s.record_access(5).unwrap();
        let e = r.to_event(0, 8, 0);
        assert_eq!((e.low_row, e.high_row), (3, 7));
        assert_eq!(s.counter(1).count, 0);
    }

    #[test]
    fn full_tree_boundary_refresh() {
        let mut s = CatState::new(cfg(16, 2, 2, 10, 1), th(2, vec![5, 10])).unwrap();
        s.split(0).unwrap();
        assert!(s.is_full());
        for _ in 0..9 {
            assert!(s.record_access(0).is_none());
        }
        assert_eq!(s.counter(0).count, 9);
        assert!(s.record_access(0).is_some());
        assert_eq!(s.counter(0).count, 0);
    }

    #[test]
    fn split_clones_and_preserves_partition() {
        let mut s = CatState::new(cfg(16, 4, 3, 8, 1), th(3, vec![2, 4, 8])).unwrap();
        s.counters[0].count = 3;
        let new = s.split(0).unwrap();
        assert_eq!(new, 1);
        assert_eq!(ranges(&s), vec![(0, 0, 7, 1), (1, 8, 15, 1)]);
        assert_eq!(s.counter(1).count, 3);
        s.check_invariants().unwrap();
        let total: u32 = s.leaf_ranges().iter().map(|r| r.high - r.low + 1).sum();
        assert_eq!(total, 16);
    }

    #[test]
    fn split_preconditions() {
        let mut s = CatState::new(cfg(8, 2, 2, 8, 1), th(2, vec![4, 8])).unwrap();
        s.split(0).unwrap();
        assert!(matches!(s.split(0), Err(TreeError::SplitPrecondition { .. })));
        let mut deep = CatState::new(cfg(8, 4, 3, 8, 1), th(3, vec![2, 4, 8])).unwrap();
        deep.split(0).unwrap();
        deep.split(0).unwrap();
        assert!(matches!(
            deep.split(0),
            Err(TreeError::SplitPrecondition {
                reason: "leaf is at the deepest level",
                ..
            })
        ));
    }

    #[test]
    fn reset_matches_new_and_is_idempotent() {
        let c = cfg(64, 8, 5, 16, 3);
        let t = th(5, vec![2, 4, 8, 16]);
        let fresh = CatState::new(c, t.clone()).unwrap();
        let mut s = fresh.clone();
        for r in [1u32, 1, 1, 1, 1, 40, 40, 40, 40, 40, 40, 63] {
            s.record_access(r);
        }
        assert_ne!(s, fresh);
        s.reset();
        assert_eq!(s, fresh);
        s.reset();
        assert_eq!(s, fresh);
    }

    #[test]
    fn balanced_presplit_needs_one_hop() {
        let s = CatState::new(cfg(1024, 16, 8, 64, 4), th(8, vec![4, 8, 16, 32, 64])).unwrap();
        assert!((0..1024).all(|r| s.locate_with_hops(r).unwrap().1 == 1));
    }

    #[test]
    fn hops_bounded_by_depth_budget() {
        let c = cfg(1024, 16, 8, 64, 3);
        let mut s = CatState::new(c, th(8, vec![2, 4, 8, 16, 32, 64])).unwrap();
        for _ in 0..200 {
            s.record_access(3);
        }
        let bound = c.max_levels - c.presplit_levels + 1;
        assert!((0..1024).all(|r| s.locate_with_hops(r).unwrap().1 <= bound));
        assert!((0..1024).any(|r| s.locate_with_hops(r).unwrap().1 == bound));
    }

    #[test]
    fn single_counter_uses_refresh_threshold() {
        let mut s = CatState::new(cfg(16, 1, 3, 4, 1), th(3, vec![1, 2, 4])).unwrap();
        assert_eq!(s.counter(0).level, 2);
        for _ in 0..3 {
            assert!(s.record_access(7).is_none());
        }
        let r = s.record_access(7).unwrap();
        assert_eq!((r.low, r.high), (0, 15));
    }

    #[test]
    fn equal_thresholds_cascade_to_refresh() {
        // T_0 = T_1 = T: a split child can already be at its threshold.
        let mut s = CatState::new(cfg(8, 2, 2, 3, 1), th(2, vec![3, 3])).unwrap();
        assert!(s.record_access(6).is_none());
        assert!(s.record_access(6).is_none());
        let r = s.record_access(6).unwrap();
        assert_eq!((r.low, r.high), (4, 7));
        assert_eq!(s.counter(0).count, 3);
    }

    #[test]
    fn merge_keeps_max_and_frees_left() {
        let mut s = CatState::new(cfg(16, 4, 3, 8, 1), th(3, vec![2, 4, 8])).unwrap();
        s.split(0).unwrap();
        s.counters[0].count = 5;
        s.counters[1].count = 2;
        let m = s.merge(0).unwrap();
        assert_eq!((m.kept, m.freed), (1, 0));
        assert_eq!(ranges(&s), vec![(1, 0, 15, 0)]);
        assert_eq!(s.counter(1).count, 5);
        s.check_invariants().unwrap();
    }

    #[test]
    fn skeleton_nodes_are_not_mergeable() {
        let mut s = CatState::new(cfg(64, 8, 5, 16, 3), th(5, vec![2, 4, 8, 16])).unwrap();
        assert!(s.merge(1).is_err());
        assert_eq!(s.find_mergeable(|_, _| true), None);
        s.split(0).unwrap();
        let n = s.find_mergeable(|_, _| true).unwrap();
        assert_eq!(n, 3);
        s.merge(n).unwrap();
        s.check_invariants().unwrap();
    }

    #[test]
    fn dump_is_preorder() {
        let mut s = CatState::new(cfg(16, 4, 3, 8, 2), th(3, vec![2, 4, 8])).unwrap();
        s.split(1).unwrap();
        let d = s.dump();
        let lines: Vec<&str> = d.lines().collect();
        assert_eq!(lines[0], "I0 [0,15] depth=0");
        assert_eq!(lines[1], "  C0 [0,7] depth=1 level=1 count=0 weight=0");
        assert_eq!(lines[2], "  I1 [8,15] depth=1");
        assert_eq!(lines.len(), 5);
    }
}
