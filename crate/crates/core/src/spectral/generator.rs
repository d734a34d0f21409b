use std::sync::Arc;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use super::state_space::StateSpace;
use crate::error::{Error, Result};
use crate::lattice::BoundaryCondition;
use crate::models::ModelSpec;

/// Sparse rate matrix of a finite chain: off-diagonal rates in CSR form and
/// the exit rate of each state (`-L(a,a)`).
#[derive(Clone, Debug)]
pub struct GeneratorMatrix {
    space: Arc<StateSpace>,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    rates: Vec<f64>,
    exit: Vec<f64>,
}

pub fn build_generator(model: &ModelSpec, space: &Arc<StateSpace>, bc: &BoundaryCondition) -> Result<GeneratorMatrix> {
    if space.model() != model || space.bc() != *bc {
        return Err(Error::InvalidParameter("state space was built for a different model or boundary".into()));
    }
    let mut row_ptr = Vec::with_capacity(space.len() + 1);
    let mut cols = Vec::new();
    let mut rates = Vec::new();
    row_ptr.push(0);
    let mut row: Vec<(u32, f64)> = Vec::new();
    for a in 0..space.len() {
        row.clear();
        space.for_each_move(space.code(a), |to, rate| {
            // moves leaving a restricted chain are suppressed
            if let Some(b) = space.index_of(to) {
                row.push((b as u32, rate));
            }
        });
        row.sort_by_key(|e| e.0);
        for &(b, r) in &row {
            cols.push(b);
            rates.push(r);
        }
        row_ptr.push(cols.len());
    }
    let exit = (0..space.len()).map(|a| rates[row_ptr[a]..row_ptr[a + 1]].iter().sum()).collect();
    Ok(GeneratorMatrix { space: space.clone(), row_ptr, cols, rates, exit })
}

/// Convenience: state space and generator in one call.
pub fn chain(
    model: &ModelSpec,
    window: crate::lattice::Window,
    bc: BoundaryCondition,
    restriction: super::Restriction,
) -> Result<GeneratorMatrix> {
    let space = Arc::new(super::build_state_space(model, window, bc, restriction)?);
    build_generator(model, &space, &bc)
}

impl GeneratorMatrix {
    /// Generator from explicit off-diagonal triplets `(from, to, rate)`;
    /// diagonal set to minus the row sums.
    pub fn from_triplets(space: Arc<StateSpace>, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        let n = space.len();
        triplets.retain(|t| t.2 != 0.0);
        for &(a, b, r) in &triplets {
            if a >= n || b >= n || a == b || r < 0.0 || !r.is_finite() {
                return Err(Error::InvalidParameter(format!("bad triplet ({a}, {b}, {r})")));
            }
        }
        triplets.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut row_ptr = vec![0; n + 1];
        for &(a, _, _) in &triplets {
            row_ptr[a + 1] += 1;
        }
        for a in 0..n {
            row_ptr[a + 1] += row_ptr[a];
        }
        let cols = triplets.iter().map(|t| t.1 as u32).collect();
        let rates: Vec<f64> = triplets.iter().map(|t| t.2).collect();
        let exit = (0..n).map(|a| rates[row_ptr[a]..row_ptr[a + 1]].iter().sum()).collect();
        Ok(GeneratorMatrix { space, row_ptr, cols, rates, exit })
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.dim()).flat_map(|a| self.row(a).map(move |(b, r)| (a, b, r))).collect()
    }

    pub fn space(&self) -> &Arc<StateSpace> {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.exit.len()
    }

    pub fn nnz(&self) -> usize {
        self.rates.len()
    }

    pub fn row(&self, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[a]..self.row_ptr[a + 1];
        self.cols[r.clone()].iter().map(|&c| c as usize).zip(self.rates[r].iter().copied())
    }

    pub fn exit_rate(&self, a: usize) -> f64 {
        self.exit[a]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.exit.iter().copied().fold(0.0, f64::max)
    }

    /// `L(a, b)` for `a != b`.
    pub fn rate(&self, a: usize, b: usize) -> f64 {
        let r = self.row_ptr[a]..self.row_ptr[a + 1];
        match self.cols[r.clone()].binary_search(&(b as u32)) {
            Ok(k) => self.rates[r.start + k],
            Err(_) => 0.0,
        }
    }

    /// Largest `|sum_b L(a,b)|` including the diagonal.
    pub fn max_row_sum_defect(&self) -> f64 {
        (0..self.dim())
            .map(|a| (self.row(a).map(|(_, r)| r).sum::<f64>() - self.exit[a]).abs())
            .fold(0.0, f64::max)
    }

    /// `(L f)(a) = sum_b L(a,b) f(b) - exit(a) f(a)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(f, &mut out);
        out
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        for a in 0..self.dim() {
            let mut s = -self.exit[a] * f[a];
            for (b, r) in self.row(a) {
                s += r * f[b];
            }
            out[a] = s;
        }
    }

    /// `(v L)(b) = sum_a v(a) L(a,b) - v(b) exit(b)`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.apply_transpose_into(v, &mut out);
        out
    }

    pub fn apply_transpose_into(&self, v: &[f64], out: &mut [f64]) {
        for (b, o) in out.iter_mut().enumerate() {
            *o = -self.exit[b] * v[b];
        }
        for a in 0..self.dim() {
            let va = v[a];
            if va != 0.0 {
                for (b, r) in self.row(a) {
                    out[b] += va * r;
                }
            }
        }
    }

    /// Communicating classes (strongly connected components), largest first.
    pub fn communicating_classes(&self) -> Vec<Vec<usize>> {
        let mut g = DiGraph::<(), ()>::with_capacity(self.dim(), self.nnz());
        let nodes: Vec<_> = (0..self.dim()).map(|_| g.add_node(())).collect();
        for (a, b, _) in self.triplets() {
            g.add_edge(nodes[a], nodes[b], ());
        }
        let mut classes: Vec<Vec<usize>> = tarjan_scc(&g)
            .into_iter()
            .map(|c| {
                let mut v: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
                v.sort_unstable();
                v
            })
            .collect();
        classes.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
        classes
    }

    pub fn ensure_irreducible(&self) -> Result<()> {
        let classes = self.communicating_classes();
        if classes.len() == 1 {
            return Ok(());
        }
        let examples = classes
            .iter()
            .take(4)
            .map(|c| c.iter().take(4).map(|&i| self.space.configuration(i).to_string()).collect())
            .collect();
        Err(Error::Reducible { count: classes.len(), examples })
    }

    /// The chain killed on entering `target`: moves into the target are
    /// removed (their rate still counts in the exit rate) and target states
    /// are frozen with zero mass flow.
    pub fn killed(&self, target: &[bool]) -> GeneratorMatrix {
        let n = self.dim();
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut rates = Vec::new();
        let mut exit = vec![0.0; n];
        for a in 0..n {
            if !target[a] {
                for (b, r) in self.row(a) {
                    if !target[b] {
                        cols.push(b as u32);
                        rates.push(r);
                    }
                }
                exit[a] = self.exit[a];
            }
            row_ptr.push(cols.len());
        }
        GeneratorMatrix { space: self.space.clone(), row_ptr, cols, rates, exit }
    }

    /// Copy with one off-diagonal rate multiplied by `factor` (and the
    /// diagonal adjusted). Used to build deliberately broken fixtures.
    pub fn with_scaled_rate(&self, a: usize, b: usize, factor: f64) -> Result<GeneratorMatrix> {
        let mut t = self.triplets();
        let e = t
            .iter_mut()
            .find(|e| e.0 == a && e.1 == b)
            .ok_or_else(|| Error::InvalidParameter(format!("no transition {a} -> {b}")))?;
        e.2 *= factor;
        GeneratorMatrix::from_triplets(self.space.clone(), t)
    }
}
