use crate::numerics::{Axis, NumericsError, Tape, Tensor, Var};

use super::TopicTree;

/// Dense structure matrices of a [`TopicTree`].
#[derive(Debug, Clone, PartialEq)]
pub struct GraphMatrices {
    /// `[K_0, …, K_L]`.
    pub layer_sizes: Vec<usize>,
    /// `s[l - 1]` is `S⁽ˡ⁾ ∈ {0,1}^{K_{l−1} × K_l}`: child rows, parent columns.
    pub s: Vec<Tensor>,
    /// `c[l - 1]` is `C⁽ˡ⁾ ∈ {0,1}^{V × K_l}`.
    pub c: Vec<Tensor>,
    /// Symmetric `N × N` adjacency with self-loops.
    pub adjacency: Tensor,
    /// `D^{−1/2} A D^{−1/2}`.
    pub normalized: Tensor,
}

impl GraphMatrices {
    pub fn from_tree(tree: &TopicTree) -> Self {
        let sizes = tree.layer_sizes();
        let depth = tree.depth();
        let v = sizes[0];
        let mut s: Vec<Tensor> = (1..=depth).map(|l| Tensor::zeros(sizes[l - 1], sizes[l])).collect();
        let mut c: Vec<Tensor> = (1..=depth).map(|l| Tensor::zeros(v, sizes[l])).collect();
        let n = tree.num_nodes();
        let mut a = Tensor::eye(n);
        for &(p, ch) in tree.edges() {
            let l = tree.node(p).layer;
            s[l - 1].set(ch - tree.offset(l - 1), p - tree.offset(l), 1.0);
            a.set(p, ch, 1.0);
            a.set(ch, p, 1.0);
        }
        for &(t, w) in tree.concepts() {
            let l = tree.node(t).layer;
            c[l - 1].set(w, t - tree.offset(l), 1.0);
            a.set(t, w, 1.0);
            a.set(w, t, 1.0);
        }
        let normalized = normalize_adjacency(&a);
        Self {
            layer_sizes: sizes,
            s,
            c,
            adjacency: a,
            normalized,
        }
    }

    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    /// Global id of the first node of `layer`.
    pub fn offset(&self, layer: usize) -> usize {
        self.layer_sizes[..layer].iter().sum()
    }

    /// Number of Bernoulli entries across every `S⁽ˡ⁾` and `C⁽ˡ⁾`.
    pub fn num_structure_entries(&self) -> usize {
        self.s.iter().chain(&self.c).map(Tensor::len).sum()
    }

    /// Sub-block of an `N × N` matrix: rows from `row_layer`, columns from `col_layer`.
    pub fn block(&self, full: &Tensor, row_layer: usize, col_layer: usize) -> Tensor {
        let (r0, c0) = (self.offset(row_layer), self.offset(col_layer));
        let (nr, nc) = (self.layer_sizes[row_layer], self.layer_sizes[col_layer]);
        Tensor::from_fn(nr, nc, |i, j| full.get(r0 + i, c0 + j))
    }
}

/// `D^{−1/2} A D^{−1/2}` with `D_ii = Σ_j A_ij`; zero-degree rows stay zero.
pub fn normalize_adjacency(a: &Tensor) -> Tensor {
    let n = a.rows();
    let degree: Vec<f64> = (0..n).map(|i| a.row_slice(i).iter().sum()).collect();
    Tensor::from_fn(n, a.cols(), |i, j| {
        let d = degree[i] * degree[j];
        if d > 0.0 {
            a.get(i, j) / d.sqrt()
        } else {
            0.0
        }
    })
}

/// Row-wise softmax of pairwise cosine similarities between the columns of
/// the `d × N` adaptive embeddings.
pub fn adaptive_adjacency(tape: &mut Tape, adaptive_embeddings: Var) -> Result<Var, NumericsError> {
    let cos = tape.cosine_similarity_cols(adaptive_embeddings)?;
    tape.softmax(cos, Axis::Cols)
}

pub fn adaptive_adjacency_values(adaptive_embeddings: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let e = tape.constant(adaptive_embeddings.clone());
    let a = adaptive_adjacency(&mut tape, e).expect("cosine similarity of a single tensor cannot mismatch");
    tape.value(a).clone()
}

/// `Ã + Ã_ada`, used by the graph convolution as is.
pub fn revise_adjacency(tape: &mut Tape, normalized: Var, adaptive: Var) -> Result<Var, NumericsError> {
    let (a, b) = (tape.value(normalized).shape(), tape.value(adaptive).shape());
    if a != b {
        return Err(NumericsError::ShapeMismatch {
            op: "revise_adjacency",
            lhs: a,
            rhs: b,
        });
    }
    tape.add(normalized, adaptive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::tests::small_tree;
    use crate::taxonomy::{TopicNode, TopicTree};

    fn chain3() -> TopicTree {
        let nodes = (0..3)
            .map(|l| TopicNode {
                name: format!("n{l}"),
                layer: l,
                definition: None,
            })
            .collect();
        TopicTree::new(nodes, [(1, 0), (2, 1)].into_iter().collect(), Default::default()).unwrap()
    }

    #[test]
    fn chain_of_three_has_seven_nonzeros() {
        let g = GraphMatrices::from_tree(&chain3());
        let nnz = g.adjacency.data().iter().filter(|&&x| x != 0.0).count();
        assert_eq!(nnz, 7);
    }

    #[test]
    fn two_node_graph_normalizes_to_halves() {
        let a = Tensor::ones(2, 2);
        let n = normalize_adjacency(&a);
        assert_eq!(n.data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn s_and_c_entries_follow_the_tree() {
        let t = small_tree();
        let g = GraphMatrices::from_tree(&t);
        assert_eq!(g.s[0].shape(), [4, 2]);
        assert_eq!(g.s[0].data(), &[1., 0., 1., 0., 0., 1., 0., 1.]);
        assert_eq!(g.s[1].data(), &[1., 1.]);
        assert_eq!(g.c[0].get(0, 0), 1.0);
        assert_eq!(g.c[0].get(3, 1), 1.0);
        assert_eq!(g.c[1].get(1, 0), 1.0);
        assert_eq!(g.c[0].sum() + g.c[1].sum(), 3.0);
        assert_eq!(g.num_structure_entries(), 8 + 2 + 8 + 4);
    }

    #[test]
    fn adaptive_adjacency_closed_forms() {
        let same = Tensor::ones(3, 4);
        let a = adaptive_adjacency_values(&same);
        assert!(a.data().iter().all(|&x| (x - 0.25).abs() < 1e-15));

        let orth = Tensor::eye(2);
        let a = adaptive_adjacency_values(&orth);
        let e = std::f64::consts::E;
        assert!((a.get(0, 0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((a.get(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn revised_adjacency_adds() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::filled(2, 2, 0.5));
        let b = tape.constant(Tensor::filled(2, 2, 0.5));
        let r = revise_adjacency(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(r).data(), &[1.0; 4]);
        let z = tape.constant(Tensor::zeros(2, 2));
        let r = revise_adjacency(&mut tape, a, z).unwrap();
        assert_eq!(tape.value(r), tape.value(a));
        let bad = tape.constant(Tensor::zeros(3, 3));
        assert!(revise_adjacency(&mut tape, a, bad).is_err());
    }
}
