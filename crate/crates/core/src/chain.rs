//! Structure of the chain induced by a single-process policy: closed
//! communicating classes, unichain test, period, and support containment.

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::Dense;
use crate::model::{ModelSpec, SinglePolicy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainReport {
    pub unichain: bool,
    pub aperiodic: bool,
    pub support_in_recurrent: bool,
    /// The unique closed class, when there is exactly one.
    pub recurrent_class: Option<Vec<usize>>,
    /// Period of the unique closed class.
    pub period: Option<usize>,
    pub closed_classes: usize,
}

impl ChainReport {
    /// Unichain, aperiodic, and the support sits in the recurrent class.
    pub fn satisfied(&self) -> bool {
        self.unichain && self.aperiodic && self.support_in_recurrent
    }
}

/// Checks the chain `P_pi` built from `pi` against the unichain/aperiodic
/// requirement, with `support` as the set that must be recurrent.
pub fn check_policy_condition(pi: &SinglePolicy, spec: &ModelSpec, support: &[usize]) -> ChainReport {
    analyze_chain(&pi.induced_chain(spec), support)
}

pub fn analyze_chain(chain: &Dense, support: &[usize]) -> ChainReport {
    let n = chain.rows();
    let adj: Vec<Vec<usize>> = (0..n).map(|i| (0..n).filter(|&j| chain[(i, j)] > 0.0).collect()).collect();
    let comp = strongly_connected_components(&adj);
    let num_comp = comp.iter().copied().max().map_or(0, |m| m + 1);

    let mut closed = vec![true; num_comp];
    for (i, succ) in adj.iter().enumerate() {
        if succ.iter().any(|&j| comp[j] != comp[i]) {
            closed[comp[i]] = false;
        }
    }
    let closed_ids: Vec<usize> = (0..num_comp).filter(|&c| closed[c]).collect();
    if closed_ids.len() != 1 {
        return ChainReport {
            unichain: false,
            aperiodic: false,
            support_in_recurrent: false,
            recurrent_class: None,
            period: None,
            closed_classes: closed_ids.len(),
        };
    }
    let cid = closed_ids[0];
    let class: Vec<usize> = (0..n).filter(|&i| comp[i] == cid).collect();
    let period = class_period(&adj, &comp, cid, class[0]);
    ChainReport {
        unichain: true,
        aperiodic: period == 1,
        support_in_recurrent: support.iter().all(|&i| comp[i] == cid),
        recurrent_class: Some(class),
        period: Some(period),
        closed_classes: 1,
    }
}

/// Breadth-first levels from `root`; the period is the gcd over in-class edges
/// `u -> v` of `level(u) + 1 - level(v)`.
fn class_period(adj: &[Vec<usize>], comp: &[usize], cid: usize, root: usize) -> usize {
    let mut level = vec![usize::MAX; adj.len()];
    level[root] = 0;
    let mut queue = alloc::collections::VecDeque::from([root]);
    let mut g = 0usize;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if comp[v] != cid {
                continue;
            }
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            } else {
                g = gcd(g, (level[u] + 1).abs_diff(level[v]));
            }
        }
    }
    g.max(1)
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Iterative Tarjan; returns the component id of every vertex.
fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut index = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut on_stack = vec![false; n];
    let mut comp = vec![usize::MAX; n];
    let mut stack = Vec::new();
    let mut next_index = 0;
    let mut next_comp = 0;

    for start in 0..n {
        if index[start] != usize::MAX {
            continue;
        }
        // (vertex, position in its successor list)
        let mut call: Vec<(usize, usize)> = vec![(start, 0)];
        index[start] = next_index;
        low[start] = next_index;
        next_index += 1;
        stack.push(start);
        on_stack[start] = true;

        while let Some(&mut (v, ref mut pos)) = call.last_mut() {
            if let Some(&w) = adj[v].get(*pos) {
                *pos += 1;
                if index[w] == usize::MAX {
                    index[w] = next_index;
                    low[w] = next_index;
                    next_index += 1;
                    stack.push(w);
                    on_stack[w] = true;
                    call.push((w, 0));
                } else if on_stack[w] {
                    low[v] = low[v].min(index[w]);
                }
                continue;
            }
            call.pop();
            if let Some(&(parent, _)) = call.last() {
                low[parent] = low[parent].min(low[v]);
            }
            if low[v] == index[v] {
                while let Some(w) = stack.pop() {
                    on_stack[w] = false;
                    comp[w] = next_comp;
                    if w == v {
                        break;
                    }
                }
                next_comp += 1;
            }
        }
    }
    comp
}
