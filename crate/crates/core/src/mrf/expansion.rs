//! Alpha-expansion for Potts energies with per-label activation costs.
//!
//! Each expansion move is a binary problem (keep the current label or switch
//! to alpha). Label costs enter the move through one auxiliary variable per
//! affected label: switching every member away from a label credits its cost,
//! and the first node switched to an unused alpha pays for alpha.

use super::binary::BinaryEnergy;

/// Multi-label energy
/// `sum_i D_i(L_i) + sum_(i,j) w_ij [L_i != L_j] + sum_{l used} beta_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelProblem {
    pub num_nodes: usize,
    pub num_labels: usize,
    /// Row-major `num_nodes x num_labels`.
    pub unary: Vec<f64>,
    /// Each undirected edge stored once, weight >= 0.
    pub edges: Vec<(usize, usize, f64)>,
    pub label_costs: Vec<f64>,
    pub outlier_label: Option<usize>,
}

impl MultiLabelProblem {
    pub fn new(num_nodes: usize, num_labels: usize) -> Self {
        Self {
            num_nodes,
            num_labels,
            unary: vec![0.0; num_nodes * num_labels],
            edges: Vec::new(),
            label_costs: vec![0.0; num_labels],
            outlier_label: None,
        }
    }

    #[inline]
    pub fn unary(&self, node: usize, label: usize) -> f64 {
        self.unary[node * self.num_labels + label]
    }

    pub fn set_unary(&mut self, node: usize, label: usize, cost: f64) {
        self.unary[node * self.num_labels + label] = cost;
    }

    pub fn energy(&self, labels: &[usize]) -> f64 {
        assert_eq!(labels.len(), self.num_nodes);
        let mut e: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| self.unary(i, l))
            .sum();
        for &(i, j, w) in &self.edges {
            if labels[i] != labels[j] {
                e += w;
            }
        }
        let mut used = vec![false; self.num_labels];
        for &l in labels {
            used[l] = true;
        }
        e + used
            .iter()
            .zip(&self.label_costs)
            .filter(|(u, _)| **u)
            .map(|(_, c)| c)
            .sum::<f64>()
    }

    /// Per-node argmin of the unary costs (lowest label on ties).
    pub fn unary_argmin(&self) -> Vec<usize> {
        (0..self.num_nodes)
            .map(|i| {
                (0..self.num_labels)
                    .fold((0, f64::INFINITY), |best, l| {
                        let c = self.unary(i, l);
                        if c < best.1 {
                            (l, c)
                        } else {
                            best
                        }
                    })
                    .0
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionResult {
    pub labels: Vec<usize>,
    pub energy: f64,
    /// Energy after initialization and after every accepted move.
    pub trace: Vec<f64>,
}

const MAX_CYCLES: usize = 100;

/// Runs expansion cycles over labels in ascending order until a full cycle
/// makes no improvement. At a local minimum, each used label is tentatively
/// deleted (its members moved to their cheapest remaining label, followed by
/// more expansion cycles); deletions that lower the energy are kept.
pub fn alpha_expansion(p: &MultiLabelProblem, init: &[usize]) -> ExpansionResult {
    assert_eq!(init.len(), p.num_nodes, "initial labeling has wrong length");
    assert!(init.iter().all(|&l| l < p.num_labels), "invalid initial label");
    let mut labels = init.to_vec();
    let mut energy = p.energy(&labels);
    let mut trace = vec![energy];
    expansion_cycles(p, &mut labels, &mut energy, &mut trace);

    loop {
        let mut improved = false;
        for l in 0..p.num_labels {
            let Some(mut candidate) = delete_label(p, &labels, l) else {
                continue;
            };
            let mut e = p.energy(&candidate);
            let mut scratch = Vec::new();
            expansion_cycles(p, &mut candidate, &mut e, &mut scratch);
            if e < energy - 1e-12 * energy.abs().max(1.0) {
                labels = candidate;
                energy = e;
                trace.push(e);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    ExpansionResult {
        labels,
        energy,
        trace,
    }
}

fn expansion_cycles(p: &MultiLabelProblem, labels: &mut Vec<usize>, energy: &mut f64, trace: &mut Vec<f64>) {
    for _ in 0..MAX_CYCLES {
        let mut improved = false;
        for alpha in 0..p.num_labels {
            let Some(candidate) = expansion_move(p, labels, alpha) else {
                continue;
            };
            let e = p.energy(&candidate);
            if e < *energy - 1e-12 * energy.abs().max(1.0) {
                *labels = candidate;
                *energy = e;
                trace.push(e);
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

/// Moves every member of `l` to its cheapest other used label (or, if `l` is
/// the only used label, to the cheapest label overall).
fn delete_label(p: &MultiLabelProblem, labels: &[usize], l: usize) -> Option<Vec<usize>> {
    if !labels.contains(&l) {
        return None;
    }
    let mut used = vec![false; p.num_labels];
    for &k in labels {
        used[k] = true;
    }
    used[l] = false;
    let any_used = used.iter().any(|&u| u);
    let targets: Vec<usize> = (0..p.num_labels)
        .filter(|&k| k != l && (used[k] || !any_used))
        .collect();
    if targets.is_empty() {
        return None;
    }
    Some(
        labels
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                if k != l {
                    return k;
                }
                *targets
                    .iter()
                    .min_by(|&&a, &&b| p.unary(i, a).total_cmp(&p.unary(i, b)))
                    .unwrap()
            })
            .collect(),
    )
}

fn expansion_move(p: &MultiLabelProblem, labels: &[usize], alpha: usize) -> Option<Vec<usize>> {
    let n = p.num_nodes;
    let mut var = vec![usize::MAX; n];
    let mut be = BinaryEnergy::new();
    for i in 0..n {
        if labels[i] != alpha {
            var[i] = be.add_variable();
            be.add_unary(var[i], p.unary(i, labels[i]), p.unary(i, alpha));
        }
    }
    if be.num_variables() == 0 {
        return None;
    }

    for &(i, j, w) in &p.edges {
        if w <= 0.0 || i == j {
            continue;
        }
        match (var[i] != usize::MAX, var[j] != usize::MAX) {
            (true, true) => {
                let e00 = if labels[i] != labels[j] { w } else { 0.0 };
                be.add_pairwise(var[i], var[j], e00, w, w, 0.0);
            }
            (true, false) => be.add_unary(var[i], w, 0.0),
            (false, true) => be.add_unary(var[j], w, 0.0),
            (false, false) => {}
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); p.num_labels];
    for i in 0..n {
        members[labels[i]].push(i);
    }
    for (l, nodes) in members.iter().enumerate() {
        let beta = p.label_costs[l];
        if beta <= 0.0 {
            continue;
        }
        if l == alpha {
            continue;
        }
        if !nodes.is_empty() {
            // beta * [some member keeps l]; z = 1 means l is still paid for.
            let z = be.add_variable();
            be.add_unary(z, beta, 0.0);
            for &i in nodes {
                be.add_pairwise(z, var[i], 0.0, 0.0, beta, 0.0);
            }
        }
    }
    if members[alpha].is_empty() && p.label_costs[alpha] > 0.0 {
        // beta * [some node switches to alpha].
        let beta = p.label_costs[alpha];
        let z = be.add_variable();
        be.add_unary(z, 0.0, beta);
        for i in 0..n {
            if var[i] != usize::MAX {
                be.add_pairwise(z, var[i], 0.0, beta, 0.0, 0.0);
            }
        }
    }

    let (x, _) = be.minimize();
    let mut out = labels.to_vec();
    for i in 0..n {
        if var[i] != usize::MAX && x[var[i]] {
            out[i] = alpha;
        }
    }
    Some(out)
}
