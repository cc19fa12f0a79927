//! The button puzzle: buttons causally ordered by a DAG, one goal button.
//!
//! A button can only latch on once every parent is on. Pressing an ineligible
//! button, or one that is already on, changes nothing.

use std::collections::{BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ErdError, Result};
use crate::rng::{stream_rng, Stream};

/// Hard upper limit on buttons per instance; [`PuzzleBits`] is a 64-bit mask.
pub const BUTTON_LIMIT: usize = 64;
/// Default maximum used by the generator.
pub const DEFAULT_MAX_BUTTONS: usize = 4;
pub const DEFAULT_EDGE_PROBABILITY: f64 = 0.5;

/// One bit per button, `true` = on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct PuzzleBits {
    len: u8,
    mask: u64,
}

impl PuzzleBits {
    pub fn new(len: usize) -> Self {
        assert!(len <= BUTTON_LIMIT, "at most {BUTTON_LIMIT} buttons");
        PuzzleBits {
            len: len as u8,
            mask: 0,
        }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut out = PuzzleBits::new(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                out.mask |= 1 << i;
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.len as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, index: usize) -> bool {
        index < self.len() && self.mask & (1 << index) != 0
    }

    pub fn with(self, index: usize) -> Self {
        debug_assert!(index < self.len());
        PuzzleBits {
            len: self.len,
            mask: self.mask | (1 << index),
        }
    }

    pub fn mask(&self) -> u64 {
        self.mask
    }

    pub fn count_on(&self) -> u32 {
        self.mask.count_ones()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.get(i)).collect()
    }

    /// Bitwise `self ⊆ other`.
    pub fn is_subset_of(&self, other: &PuzzleBits) -> bool {
        self.mask & !other.mask == 0
    }
}

impl Serialize for PuzzleBits {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_bools().serialize(s)
    }
}

impl<'de> Deserialize<'de> for PuzzleBits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let bools = Vec::<bool>::deserialize(d)?;
        if bools.len() > BUTTON_LIMIT {
            return Err(serde::de::Error::custom(format!(
                "at most {BUTTON_LIMIT} puzzle bits"
            )));
        }
        Ok(PuzzleBits::from_bools(&bools))
    }
}

/// Dependency graph over buttons. An edge `(p, c)` means `p` must be on before
/// `c` can be pressed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ButtonDag {
    pub num_buttons: usize,
    pub edges: Vec<(usize, usize)>,
    pub goal_index: usize,
}

impl ButtonDag {
    /// Bit mask of the parents of `button`.
    pub fn parent_mask(&self, button: usize) -> u64 {
        self.edges
            .iter()
            .filter(|&&(_, c)| c == button)
            .fold(0, |m, &(p, _)| m | (1u64 << p))
    }

    pub fn parents(&self, button: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .edges
            .iter()
            .filter(|&&(_, c)| c == button)
            .map(|&(p, _)| p)
            .collect();
        out.sort_unstable();
        out
    }

    /// Structural problems, as `(check, message)` pairs. Empty when valid.
    pub fn problems(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let n = self.num_buttons;
        if n == 0 || n > BUTTON_LIMIT {
            out.push((
                "dag.num_buttons",
                format!("must be in 1..={BUTTON_LIMIT}, got {n}"),
            ));
            return out;
        }
        if self.goal_index >= n {
            out.push((
                "dag.goal_index",
                format!("goal {} out of range for {n} buttons", self.goal_index),
            ));
        }
        let mut seen = BTreeSet::new();
        for &(p, c) in &self.edges {
            if p >= n || c >= n {
                out.push(("dag.edges", format!("edge ({p}, {c}) out of range")));
            } else if p == c {
                out.push(("dag.edges", format!("self edge on button {p}")));
            } else if !seen.insert((p, c)) {
                out.push(("dag.edges", format!("duplicate edge ({p}, {c})")));
            }
        }
        if out.is_empty() && topological_order(self).is_none() {
            out.push(("acyclicity", "dependency graph contains a cycle".into()));
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        match self.problems().into_iter().next() {
            None => Ok(()),
            Some((field, message)) => Err(ErdError::Validation(format!("{field}: {message}"))),
        }
    }
}

/// Kahn's algorithm, lowest index first. `None` on a cycle.
fn topological_order(dag: &ButtonDag) -> Option<Vec<usize>> {
    let n = dag.num_buttons;
    let mut indegree = vec![0usize; n];
    for &(_, c) in &dag.edges {
        indegree[c] += 1;
    }
    let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(next) = ready.pop_first() {
        order.push(next);
        for &(p, c) in &dag.edges {
            if p == next {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Sample a random DAG with the default edge probability and button cap.
pub fn generate_dag(num_buttons: usize, rng_seed: u64) -> Result<ButtonDag> {
    generate_dag_with(
        num_buttons,
        rng_seed,
        DEFAULT_EDGE_PROBABILITY,
        DEFAULT_MAX_BUTTONS,
    )
}

/// Shuffle the buttons, add each forward edge of the shuffled order with
/// probability `edge_probability`, and make the last button in that order the
/// goal. Edges only point forward, so the result is acyclic.
pub fn generate_dag_with(
    num_buttons: usize,
    rng_seed: u64,
    edge_probability: f64,
    max_buttons: usize,
) -> Result<ButtonDag> {
    if num_buttons < 1 {
        return Err(ErdError::config("num_buttons", "at least one button is required"));
    }
    let cap = max_buttons.min(BUTTON_LIMIT);
    if num_buttons > cap {
        return Err(ErdError::config(
            "num_buttons",
            format!("{num_buttons} exceeds the maximum of {cap}"),
        ));
    }
    if !(0.0..=1.0).contains(&edge_probability) {
        return Err(ErdError::config(
            "dag_edge_probability",
            format!("must be in [0, 1], got {edge_probability}"),
        ));
    }

    let mut rng = stream_rng(rng_seed, Stream::Dag, 0);
    let mut order: Vec<usize> = (0..num_buttons).collect();
    order.shuffle(&mut rng);

    let mut edges = Vec::new();
    for i in 0..num_buttons {
        for j in (i + 1)..num_buttons {
            if rng.random_bool(edge_probability) {
                edges.push((order[i], order[j]));
            }
        }
    }
    edges.sort_unstable();
    Ok(ButtonDag {
        num_buttons,
        edges,
        goal_index: order[num_buttons - 1],
    })
}

fn check_index(dag: &ButtonDag, button: usize) -> Result<()> {
    if button >= dag.num_buttons {
        return Err(ErdError::usage(format!(
            "button {button} out of range for {} buttons",
            dag.num_buttons
        )));
    }
    Ok(())
}

/// True iff `button` is off and every parent is on.
pub fn press_eligible(dag: &ButtonDag, bits: &PuzzleBits, button: usize) -> Result<bool> {
    check_index(dag, button)?;
    Ok(eligible_unchecked(dag, bits, button))
}

#[inline]
pub(crate) fn eligible_unchecked(dag: &ButtonDag, bits: &PuzzleBits, button: usize) -> bool {
    let parents = dag.parent_mask(button);
    !bits.get(button) && bits.mask() & parents == parents
}

/// Latch `button` on if eligible; otherwise return `bits` unchanged.
pub fn apply_press(bits: PuzzleBits, button: usize, dag: &ButtonDag) -> PuzzleBits {
    if button < dag.num_buttons && eligible_unchecked(dag, &bits, button) {
        bits.with(button)
    } else {
        bits
    }
}

pub fn is_unlocked(bits: &PuzzleBits, dag: &ButtonDag) -> bool {
    bits.get(dag.goal_index)
}

/// Ancestors of the goal in topological order (lowest index first among ready
/// buttons), followed by the goal. Buttons that do not lead to the goal are
/// left out.
pub fn solve_order(dag: &ButtonDag) -> Result<Vec<usize>> {
    dag.check()?;
    let n = dag.num_buttons;
    let mut needed = vec![false; n];
    needed[dag.goal_index] = true;
    let mut queue = VecDeque::from([dag.goal_index]);
    while let Some(b) = queue.pop_front() {
        for &(p, c) in &dag.edges {
            if c == b && !needed[p] {
                needed[p] = true;
                queue.push_back(p);
            }
        }
    }
    let sub = ButtonDag {
        num_buttons: n,
        edges: dag
            .edges
            .iter()
            .copied()
            .filter(|&(p, c)| needed[p] && needed[c])
            .collect(),
        goal_index: dag.goal_index,
    };
    let order = topological_order(&sub)
        .ok_or_else(|| ErdError::Validation("acyclicity: dependency graph contains a cycle".into()))?;
    Ok(order.into_iter().filter(|&b| needed[b]).collect())
}

/// A circular floor button.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Button {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
}

impl Button {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.x;
        let dy = y - self.y;
        dx * dx + dy * dy <= self.radius * self.radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ButtonLayout {
    pub buttons: Vec<Button>,
}

impl ButtonLayout {
    pub fn len(&self) -> usize {
        self.buttons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buttons.is_empty()
    }

    /// Mask of the buttons whose disc contains `(x, y)`.
    #[inline]
    pub fn touch_mask(&self, x: f64, y: f64) -> u64 {
        self.buttons
            .iter()
            .enumerate()
            .filter(|(_, b)| b.contains(x, y))
            .fold(0, |m, (i, _)| m | (1u64 << i))
    }
}

/// Buttons whose disc contains the pressing point, in ascending order. The
/// pressing point is the effector when one is given, the agent base otherwise.
pub fn detect_touches(
    base: (f64, f64),
    effector: Option<(f64, f64)>,
    layout: &ButtonLayout,
) -> Vec<usize> {
    let (x, y) = effector.unwrap_or(base);
    layout
        .buttons
        .iter()
        .enumerate()
        .filter(|(_, b)| b.contains(x, y))
        .map(|(i, _)| i)
        .collect()
}
