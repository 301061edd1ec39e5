use super::maxflow::{min_cut, FlowNetwork};

/// Submodular quadratic pseudo-boolean energy, minimized by a single cut.
///
/// Variable value 0 corresponds to the source side of the cut.
#[derive(Debug, Clone, Default)]
pub struct BinaryEnergy {
    unary: Vec<[f64; 2]>,
    pairs: Vec<(usize, usize, f64)>,
    constant: f64,
}

impl BinaryEnergy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_variables(n: usize) -> Self {
        Self {
            unary: vec![[0.0; 2]; n],
            ..Self::default()
        }
    }

    pub fn add_variable(&mut self) -> usize {
        self.unary.push([0.0; 2]);
        self.unary.len() - 1
    }

    pub fn num_variables(&self) -> usize {
        self.unary.len()
    }

    pub fn add_constant(&mut self, c: f64) {
        self.constant += c;
    }

    pub fn add_unary(&mut self, i: usize, e0: f64, e1: f64) {
        self.unary[i][0] += e0;
        self.unary[i][1] += e1;
    }

    /// Adds `E(x_i, x_j)` given by its four values. Requires
    /// `e01 + e10 >= e00 + e11`; rounding-level violations are clamped.
    pub fn add_pairwise(&mut self, i: usize, j: usize, e00: f64, e01: f64, e10: f64, e11: f64) {
        let w = e01 + e10 - e00 - e11;
        debug_assert!(w >= -1e-9 * (1.0 + e00.abs() + e11.abs()), "non-submodular term");
        self.constant += e00;
        self.add_unary(i, 0.0, e10 - e00);
        self.add_unary(j, 0.0, e11 - e10);
        if w > 0.0 {
            self.pairs.push((i, j, w));
        }
    }

    /// Returns the minimizing assignment and its energy.
    pub fn minimize(&self) -> (Vec<bool>, f64) {
        let n = self.unary.len();
        let mut net = FlowNetwork::new(n);
        let mut constant = self.constant;
        for (i, &[e0, e1]) in self.unary.iter().enumerate() {
            let m = e0.min(e1);
            constant += m;
            // Source side (x = 0) pays the sink arc.
            net.add_terminal(i, e1 - m, e0 - m);
        }
        for &(i, j, w) in &self.pairs {
            net.add_arc(i, j, w);
        }
        let cut = min_cut(&net);
        let x = cut.source_side.iter().map(|&s| !s).collect();
        (x, constant + cut.value)
    }

    pub fn evaluate(&self, x: &[bool]) -> f64 {
        let mut e = self.constant;
        for (i, u) in self.unary.iter().enumerate() {
            e += u[x[i] as usize];
        }
        for &(i, j, w) in &self.pairs {
            if !x[i] && x[j] {
                e += w;
            }
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minimize_matches_enumeration() {
        for seed in 0..60 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 7;
            let mut e = BinaryEnergy::with_variables(n);
            for i in 0..n {
                e.add_unary(i, rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            }
            for _ in 0..12 {
                let i = rng.gen_range(0..n);
                let j = rng.gen_range(0..n);
                if i == j {
                    continue;
                }
                let (a, d) = (rng.gen_range(0.0..2.0), rng.gen_range(0.0..2.0));
                let b = rng.gen_range(0.0..2.0);
                let c = a + d - b + rng.gen_range(0.0..2.0);
                e.add_pairwise(i, j, a, b, c, d);
            }
            let (x, val) = e.minimize();
            assert!((e.evaluate(&x) - val).abs() < 1e-9);
            let best = (0..1u32 << n)
                .map(|m| e.evaluate(&(0..n).map(|i| m & (1 << i) != 0).collect::<Vec<_>>()))
                .fold(f64::INFINITY, f64::min);
            assert!((val - best).abs() < 1e-9, "seed {seed}: {val} vs {best}");
        }
    }
}
