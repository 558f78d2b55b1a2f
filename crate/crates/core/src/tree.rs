//! Scenario trees and the nested backward recursion.
//!
//! A tree of depth `T` encodes the filtration generated by `(X, Y)`: a node at
//! depth `t` is a realized history `z_{<=t}`, and its children with their
//! weights are the conditional law of `(X_{t+1}, Y_{t+1})` given that history.
//!
//! Nodes live in a flat arena ordered by depth, and the children of a node are
//! contiguous. Valuation sweeps levels from the leaves to the root; nodes of
//! one level are independent and are evaluated in parallel, while the fold
//! over a node's children is sequential in child order, so results are
//! bit-identical for any thread count.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Range;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dist::WeightedSample;
use crate::error::{Error, Result};
use crate::mappings::ValuationSchedule;
use crate::rng;

/// Child weights at a node must sum to one within this tolerance.
const WEIGHT_SUM_TOL: f64 = 1e-12;
const NO_PARENT: u32 = u32::MAX;
const FORMAT_HEADER: &str = "# mpval scenario tree v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTree {
    horizon: usize,
    aux_dim: usize,
    x: Vec<f64>,
    /// Auxiliary increments, `aux_dim` per node.
    y: Vec<f64>,
    /// Conditional probability of the node given its parent; 1 at the root.
    weight: Vec<f64>,
    parent: Vec<u32>,
    child_start: Vec<u32>,
    child_count: Vec<u32>,
    /// Nodes at depth `t` occupy `level_start[t]..level_start[t + 1]`.
    level_start: Vec<usize>,
}

/// Borrowed view of one node.
#[derive(Debug, Clone)]
pub struct Node<'a> {
    pub id: NodeId,
    pub depth: usize,
    pub x: f64,
    pub y: &'a [f64],
    pub weight: f64,
    pub parent: Option<NodeId>,
    pub children: Range<usize>,
}

impl ScenarioTree {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn aux_dim(&self) -> usize {
        self.aux_dim
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    /// Ids of the nodes at depth `t`.
    pub fn level(&self, t: usize) -> Range<usize> {
        self.level_start[t]..self.level_start[t + 1]
    }

    pub fn leaves(&self) -> Range<usize> {
        self.level(self.horizon)
    }

    pub fn depth(&self, id: NodeId) -> usize {
        self.level_start.partition_point(|&s| s <= id.index()) - 1
    }

    pub fn node(&self, id: NodeId) -> Result<Node<'_>> {
        let i = self.check_id(id)?;
        let parent = self.parent[i];
        Ok(Node {
            id,
            depth: self.depth(id),
            x: self.x[i],
            y: &self.y[i * self.aux_dim..(i + 1) * self.aux_dim],
            weight: self.weight[i],
            parent: (parent != NO_PARENT).then_some(NodeId(parent)),
            children: self.children(i),
        })
    }

    fn check_id(&self, id: NodeId) -> Result<usize> {
        if id.index() < self.len() {
            Ok(id.index())
        } else {
            Err(Error::invalid(format!("node id {} out of range", id.0)))
        }
    }

    fn children(&self, i: usize) -> Range<usize> {
        let start = self.child_start[i] as usize;
        start..start + self.child_count[i] as usize
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    /// Probability of reaching each node from the root.
    pub fn path_probabilities(&self) -> Vec<f64> {
        let mut prob = vec![1.0; self.len()];
        for i in 1..self.len() {
            prob[i] = prob[self.parent[i] as usize] * self.weight[i];
        }
        prob
    }

    /// `Σ_{s<=t} x_s` along the root path of every node.
    pub fn path_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.len()];
        for i in 1..self.len() {
            sums[i] = sums[self.parent[i] as usize] + self.x[i];
        }
        sums
    }

    /// Root-to-node history `(x_1..x_t, y_1..y_t)`, root excluded.
    pub fn history(&self, id: NodeId) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut i = self.check_id(id)?;
        let depth = self.depth(id);
        let d = self.aux_dim;
        let mut xs = vec![0.0; depth];
        let mut ys = vec![0.0; depth * d];
        for t in (0..depth).rev() {
            xs[t] = self.x[i];
            ys[t * d..(t + 1) * d].copy_from_slice(&self.y[i * d..(i + 1) * d]);
            i = self.parent[i] as usize;
        }
        Ok((xs, ys))
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 || self.level_start.len() != self.horizon + 2 || self.level_start[0] != 0 {
            return Err(Error::invalid("malformed level index"));
        }
        if self.level(0) != (0..1) {
            return Err(Error::invalid("tree must have exactly one root"));
        }
        if self.level_start[self.horizon + 1] != n {
            return Err(Error::invalid("level index does not cover all nodes"));
        }
        if self.y.len() != n * self.aux_dim {
            return Err(Error::invalid("auxiliary storage has the wrong length"));
        }
        for t in 0..=self.horizon {
            let mut expected_child = self.level_start[t + 1];
            for i in self.level(t) {
                let children = self.children(i);
                if t == self.horizon {
                    if !children.is_empty() {
                        return Err(Error::invalid(format!("leaf {i} has children")));
                    }
                    continue;
                }
                if children.is_empty() {
                    return Err(Error::invalid(format!(
                        "node {i} at depth {t} < horizon has no children"
                    )));
                }
                if children.start != expected_child {
                    return Err(Error::invalid(format!("children of node {i} are not contiguous")));
                }
                expected_child = children.end;
                let mut total = 0.0;
                for c in children {
                    if self.parent[c] as usize != i {
                        return Err(Error::invalid(format!("node {c} has inconsistent parent")));
                    }
                    let w = self.weight[c];
                    if !(w > 0.0 && w.is_finite()) {
                        return Err(Error::invalid(format!("node {c} has weight {w}")));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(Error::invalid(format!("child weights of node {i} sum to {total}")));
                }
            }
            if t < self.horizon && expected_child != self.level_start[t + 2] {
                return Err(Error::invalid(format!("depth {} has orphan nodes", t + 1)));
            }
        }
        if self.x.iter().chain(&self.y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite increment"));
        }
        Ok(())
    }

    /// The tree of `a X + b`: increments at depth `t` become `a x + b_t`.
    pub fn affine_transform(&self, a: f64, b: &[f64]) -> Result<ScenarioTree> {
        if !(a >= 0.0 && a.is_finite()) {
            return Err(Error::Domain {
                name: "a",
                value: a,
                expected: "a >= 0",
            });
        }
        if b.len() != self.horizon {
            return Err(Error::Dimension {
                what: "affine shift",
                expected: self.horizon,
                got: b.len(),
            });
        }
        let mut out = self.clone();
        for t in 1..=self.horizon {
            for i in self.level(t) {
                out.x[i] = a * self.x[i] + b[t - 1];
            }
        }
        Ok(out)
    }

    /// Conditional law of `Σ_{s>t} X_s` given the node.
    pub fn path_law(&self, id: NodeId) -> Result<WeightedSample> {
        let start = self.check_id(id)?;
        let mut values = Vec::new();
        let mut weights = Vec::new();
        let mut stack = vec![(start, 0.0, 1.0)];
        while let Some((i, sum, prob)) = stack.pop() {
            let children = self.children(i);
            if children.is_empty() {
                values.push(sum);
                weights.push(prob);
                continue;
            }
            for c in children.rev() {
                stack.push((c, sum + self.x[c], prob * self.weight[c]));
            }
        }
        WeightedSample::from_unnormalized(values, weights)
    }

    /// Writes the documented text format.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{FORMAT_HEADER}")?;
        writeln!(out, "horizon,aux_dim,nodes")?;
        writeln!(out, "{},{},{}", self.horizon, self.aux_dim, self.len())?;
        let mut header = String::from("id,depth,parent,weight,x");
        for k in 1..=self.aux_dim {
            write!(header, ",y{k}").unwrap();
        }
        writeln!(out, "{header}")?;
        let mut line = String::new();
        for t in 0..=self.horizon {
            for i in self.level(t) {
                line.clear();
                let parent = if self.parent[i] == NO_PARENT {
                    -1
                } else {
                    self.parent[i] as i64
                };
                write!(line, "{i},{t},{parent},{},{}", self.weight[i], self.x[i]).unwrap();
                for v in &self.y[i * self.aux_dim..(i + 1) * self.aux_dim] {
                    write!(line, ",{v}").unwrap();
                }
                writeln!(out, "{line}")?;
            }
        }
        Ok(())
    }

    /// Reads the text format. Nodes may appear in any order; ids are
    /// renumbered breadth-first (trees written by [`write_text`](Self::write_text)
    /// keep their ids).
    pub fn read_text<R: BufRead>(input: R) -> Result<ScenarioTree> {
        let mut lines = input.lines().enumerate().filter_map(|(n, l)| match l {
            Ok(l) if l.trim().is_empty() || l.starts_with('#') => None,
            other => Some((n + 1, other)),
        });
        let mut next = |what: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, Ok(l))) => Ok((n, l)),
                Some((_, Err(e))) => Err(e.into()),
                None => Err(Error::Parse {
                    line: 0,
                    msg: format!("missing {what}"),
                }),
            }
        };
        next("dimension header")?;
        let (n, dims) = next("dimensions")?;
        let dims: Vec<usize> = parse_fields(n, &dims)?;
        let [horizon, aux_dim, count] = dims[..] else {
            return Err(Error::Parse {
                line: n,
                msg: "expected horizon,aux_dim,nodes".into(),
            });
        };
        next("column header")?;

        let mut records = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, line) = next("node record")?;
            let fields: Vec<f64> = parse_fields(n, &line)?;
            if fields.len() != 5 + aux_dim {
                return Err(Error::Parse {
                    line: n,
                    msg: format!("expected {} fields, got {}", 5 + aux_dim, fields.len()),
                });
            }
            records.push((n, fields));
        }

        let mut builder = TreeBuilder::new(horizon, aux_dim);
        let mut by_id = std::collections::HashMap::new();
        let mut pending: Vec<(usize, Vec<f64>)> = Vec::new();
        for (n, f) in records {
            if f[2] < 0.0 {
                if by_id.insert(f[0] as i64, builder.root()).is_some() {
                    return Err(Error::Parse {
                        line: n,
                        msg: "duplicate node id".into(),
                    });
                }
            } else {
                pending.push((n, f));
            }
        }
        // Parents may follow their children in the file.
        while !pending.is_empty() {
            let before = pending.len();
            let mut rest = Vec::new();
            for (n, f) in pending {
                match by_id.get(&(f[2] as i64)) {
                    Some(&parent) => {
                        let id = builder.add_child(parent, f[4], &f[5..], f[3])?;
                        if by_id.insert(f[0] as i64, id).is_some() {
                            return Err(Error::Parse {
                                line: n,
                                msg: "duplicate node id".into(),
                            });
                        }
                    }
                    None => rest.push((n, f)),
                }
            }
            if rest.len() == before {
                return Err(Error::Parse {
                    line: rest[0].0,
                    msg: "node references an unknown parent".into(),
                });
            }
            pending = rest;
        }
        builder.build()
    }
}

fn parse_fields<T: std::str::FromStr>(line: usize, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|f| {
            f.trim().parse::<T>().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse field {f:?}"),
            })
        })
        .collect()
}

/// Incremental construction of small trees in any insertion order.
#[derive(Debug, Clone)]
pub struct TreeBuilder {
    horizon: usize,
    aux_dim: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    weight: Vec<f64>,
    parent: Vec<usize>,
    depth: Vec<usize>,
    children: Vec<Vec<usize>>,
}

impl TreeBuilder {
    pub fn new(horizon: usize, aux_dim: usize) -> Self {
        Self {
            horizon,
            aux_dim,
            x: vec![0.0],
            y: vec![0.0; aux_dim],
            weight: vec![1.0],
            parent: vec![usize::MAX],
            depth: vec![0],
            children: vec![Vec::new()],
        }
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn add_child(&mut self, parent: NodeId, x: f64, y: &[f64], weight: f64) -> Result<NodeId> {
        let p = parent.index();
        if p >= self.x.len() {
            return Err(Error::invalid(format!("unknown parent {}", parent.0)));
        }
        if self.depth[p] >= self.horizon {
            return Err(Error::invalid("cannot add children below the horizon"));
        }
        if y.len() != self.aux_dim {
            return Err(Error::Dimension {
                what: "auxiliary increment",
                expected: self.aux_dim,
                got: y.len(),
            });
        }
        let id = self.x.len();
        if id >= NO_PARENT as usize {
            return Err(Error::invalid("tree too large"));
        }
        self.x.push(x);
        self.y.extend_from_slice(y);
        self.weight.push(weight);
        self.parent.push(p);
        self.depth.push(self.depth[p] + 1);
        self.children.push(Vec::new());
        self.children[p].push(id);
        Ok(NodeId(id as u32))
    }

    /// Lays the tree out breadth-first and validates it.
    pub fn build(self) -> Result<ScenarioTree> {
        let d = self.aux_dim;
        let mut order = vec![0usize];
        let mut level_start = vec![0usize];
        let mut head = 0;
        for _ in 0..=self.horizon {
            let end = order.len();
            level_start.push(end);
            for k in head..end {
                order.extend_from_slice(&self.children[order[k]]);
            }
            head = end;
        }
        if order.len() != self.x.len() {
            return Err(Error::invalid("nodes deeper than the horizon"));
        }
        let mut new_id = vec![0u32; order.len()];
        for (new, &old) in order.iter().enumerate() {
            new_id[old] = new as u32;
        }
        let n = order.len();
        let mut tree = ScenarioTree {
            horizon: self.horizon,
            aux_dim: d,
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n * d),
            weight: Vec::with_capacity(n),
            parent: Vec::with_capacity(n),
            child_start: Vec::with_capacity(n),
            child_count: Vec::with_capacity(n),
            level_start,
        };
        for &old in &order {
            tree.x.push(self.x[old]);
            tree.y.extend_from_slice(&self.y[old * d..(old + 1) * d]);
            tree.weight.push(self.weight[old]);
            tree.parent
                .push(if old == 0 { NO_PARENT } else { new_id[self.parent[old]] });
            let kids = &self.children[old];
            tree.child_start.push(kids.first().map_or(0, |&c| new_id[c]));
            tree.child_count.push(kids.len() as u32);
        }
        tree.validate()?;
        Ok(tree)
    }
}

/// Conditional one-step sampler used to grow trees by nested simulation.
pub trait BranchSampler: Sync {
    fn horizon(&self) -> usize;

    fn aux_dim(&self) -> usize;

    /// Draws `x_out.len()` iid children of a node at depth `xs.len()` with
    /// history `xs` (and `ys`, `aux_dim` per step), writing increments to
    /// `x_out` and auxiliary increments to `y_out` (`aux_dim` per child).
    fn sample_children(&self, xs: &[f64], ys: &[f64], rng: &mut ChaCha8Rng, x_out: &mut [f64], y_out: &mut [f64]);
}

/// Grows a tree with `branching[t]` equally weighted children per node at
/// depth `t`. Each node draws its children from a stream keyed by the run
/// seed and its path, so the tree is independent of thread scheduling.
pub fn sample_tree<S: BranchSampler + ?Sized>(sampler: &S, branching: &[usize], seed: u64) -> Result<ScenarioTree> {
    let horizon = sampler.horizon();
    let d = sampler.aux_dim();
    if branching.len() != horizon {
        return Err(Error::Dimension {
            what: "branching",
            expected: horizon,
            got: branching.len(),
        });
    }
    if branching.contains(&0) {
        return Err(Error::invalid("branching factors must be positive"));
    }
    let total: usize = branching
        .iter()
        .scan(1usize, |acc, &b| {
            *acc = acc.saturating_mul(b);
            Some(*acc)
        })
        .fold(1usize, |a, b| a.saturating_add(b));
    if total >= NO_PARENT as usize {
        return Err(Error::invalid(format!("tree with {total} nodes is too large")));
    }

    let mut tree = ScenarioTree {
        horizon,
        aux_dim: d,
        x: Vec::with_capacity(total),
        y: Vec::with_capacity(total * d),
        weight: Vec::with_capacity(total),
        parent: Vec::with_capacity(total),
        child_start: Vec::with_capacity(total),
        child_count: Vec::with_capacity(total),
        level_start: vec![0, 1],
    };
    tree.x.push(0.0);
    tree.y.extend(std::iter::repeat_n(0.0, d));
    tree.weight.push(1.0);
    tree.parent.push(NO_PARENT);

    let mut keys = vec![rng::root_key(seed)];
    for (t, &b) in branching.iter().enumerate() {
        let level = tree.level(t);
        let tree_ref = &tree;
        let generated: Vec<(Vec<f64>, Vec<f64>)> = level
            .clone()
            .into_par_iter()
            .zip(keys.par_iter())
            .map(|(i, &key)| {
                let (xs, ys) = tree_ref.history(NodeId(i as u32)).expect("valid id");
                let mut rng = rng::stream(key);
                let mut x_out = vec![0.0; b];
                let mut y_out = vec![0.0; b * d];
                sampler.sample_children(&xs, &ys, &mut rng, &mut x_out, &mut y_out);
                (x_out, y_out)
            })
            .collect();

        let child_level_start = tree.len();
        keys = level
            .clone()
            .zip(&keys)
            .flat_map(|(_, &k)| (0..b as u64).map(move |c| rng::child_key(k, c)))
            .collect();
        let w = 1.0 / b as f64;
        for (k, (i, (xs, ys))) in level.zip(generated).enumerate() {
            tree.child_start.push((child_level_start + k * b) as u32);
            tree.child_count.push(b as u32);
            tree.x.extend_from_slice(&xs);
            tree.y.extend_from_slice(&ys);
            tree.weight.extend(std::iter::repeat_n(w, b));
            tree.parent.extend(std::iter::repeat_n(i as u32, b));
        }
        tree.level_start.push(tree.len());
    }
    // Leaves.
    let leaves = tree.level(horizon).len();
    tree.child_start.extend(std::iter::repeat_n(0, leaves));
    tree.child_count.extend(std::iter::repeat_n(0, leaves));
    tree.validate()?;
    Ok(tree)
}

/// Values `V_t` and recursion variables `ψ_t = Σ_{s<=t} x_s + V_t` at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValuationResult {
    pub v0: f64,
    pub node_values: Vec<f64>,
    pub psi_values: Vec<f64>,
}

impl ValuationResult {
    pub fn value(&self, id: NodeId) -> f64 {
        self.node_values[id.index()]
    }

    pub fn psi(&self, id: NodeId) -> f64 {
        self.psi_values[id.index()]
    }
}

/// Nested backward recursion `V_T = 0`, `V_t = φ_t(X_{t+1} + V_{t+1})` on the tree.
pub fn backward_value(tree: &ScenarioTree, schedule: &ValuationSchedule) -> Result<ValuationResult> {
    schedule.check_horizon(tree.horizon)?;
    let mut values = vec![0.0; tree.len()];
    for t in (0..tree.horizon).rev() {
        let level = tree.level(t);
        let mapping = schedule.at(t);
        let values_ref = &values;
        let computed: Vec<f64> = level
            .clone()
            .into_par_iter()
            .map(|i| {
                let children = tree.children(i);
                let ys: Vec<f64> = children.clone().map(|c| tree.x[c] + values_ref[c]).collect();
                let ws = tree.weight[children].to_vec();
                let law = WeightedSample::new(ys, ws)?;
                mapping.apply(&law)
            })
            .collect::<Result<_>>()?;
        values[level].copy_from_slice(&computed);
    }
    let sums = tree.path_sums();
    let psi_values = sums.iter().zip(&values).map(|(s, v)| s + v).collect();
    Ok(ValuationResult {
        v0: values[0],
        node_values: values,
        psi_values,
    })
}
