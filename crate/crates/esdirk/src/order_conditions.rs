//! Rooted-tree order conditions up to order 4: elementary weights Φ(τ),
//! densities γ(τ), order verification, and least-squares embedded weights.

use crate::linalg::lstsq_min_norm;
use crate::tableau::ButcherTableau;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Residual tolerance for a single order condition.
pub const ORDER_COND_TOL: f64 = 1e-12;

/// Residual above which an embedded-weight system is declared infeasible.
pub const EMBEDDED_RESIDUAL_TOL: f64 = 1e-10;

/// Highest order covered by the tree table.
pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum OrderError {
    #[error("order {0} unsupported: the tree table stops at order 4")]
    UnsupportedOrder(usize),
    #[error("embedded-weight system infeasible: least-squares residual {residual:.3e}")]
    Infeasible { residual: f64 },
}

/// One factor of the weight recipe Λ(τ); the product is applied
/// right-to-left to e, with C = diag(c).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Factor {
    MultiplyByC,
    MultiplyByA,
}

use Factor::{MultiplyByA as A, MultiplyByC as C};

/// A rooted tree of order ≤ 4 with its scalar functions and weight recipe.
#[derive(Debug, Clone, Copy)]
pub struct RootedTree {
    /// 1-based index τ₁..τ₈.
    pub id: usize,
    /// Order r(τ): number of nodes.
    pub order: usize,
    /// Symmetry σ(τ).
    pub sigma: usize,
    /// Density γ(τ).
    pub density: usize,
    /// Λ(τ) as a left-to-right factor product.
    pub recipe: &'static [Factor],
}

/// The 8 rooted trees of order ≤ 4, with Λ ∈ {I, C, C², AC, C³, CAC, AC², A²C}.
pub const TREES: [RootedTree; 8] = [
    RootedTree {
        id: 1,
        order: 1,
        sigma: 1,
        density: 1,
        recipe: &[],
    },
    RootedTree {
        id: 2,
        order: 2,
        sigma: 1,
        density: 2,
        recipe: &[C],
    },
    RootedTree {
        id: 3,
        order: 3,
        sigma: 2,
        density: 3,
        recipe: &[C, C],
    },
    RootedTree {
        id: 4,
        order: 3,
        sigma: 1,
        density: 6,
        recipe: &[A, C],
    },
    RootedTree {
        id: 5,
        order: 4,
        sigma: 6,
        density: 4,
        recipe: &[C, C, C],
    },
    RootedTree {
        id: 6,
        order: 4,
        sigma: 1,
        density: 8,
        recipe: &[C, A, C],
    },
    RootedTree {
        id: 7,
        order: 4,
        sigma: 2,
        density: 12,
        recipe: &[A, C, C],
    },
    RootedTree {
        id: 8,
        order: 4,
        sigma: 1,
        density: 24,
        recipe: &[A, A, C],
    },
];

/// Trees with order ≤ `p`.
pub fn trees_up_to(p: usize) -> impl Iterator<Item = &'static RootedTree> {
    TREES.iter().filter(move |t| t.order <= p)
}

/// Ψ(τ) = Λ(τ)e, computed by applying the recipe right-to-left to e.
pub fn psi_vector(t: &ButcherTableau, tree: &RootedTree) -> DVector<f64> {
    let mut v = DVector::from_element(t.s, 1.0);
    for factor in tree.recipe.iter().rev() {
        match factor {
            Factor::MultiplyByC => {
                for i in 0..t.s {
                    v[i] *= t.c[i];
                }
            }
            Factor::MultiplyByA => v = &t.a * v,
        }
    }
    v
}

/// Φ(τ) = weightsᵀ Λ(τ) e.
pub fn elementary_weight(t: &ButcherTableau, weights: &DVector<f64>, tree: &RootedTree) -> f64 {
    weights.dot(&psi_vector(t, tree))
}

/// Result of checking one tree's order condition.
#[derive(Debug, Clone, Copy)]
pub struct TreeCheck {
    pub tree_id: usize,
    pub order: usize,
    pub phi: f64,
    pub target: f64,
    pub residual: f64,
    pub pass: bool,
}

/// Outcome of [`verify_order`].
#[derive(Debug, Clone)]
pub struct OrderReport {
    pub claimed_p: usize,
    pub rows: Vec<TreeCheck>,
    /// All conditions at orders ≤ claimed_p hold.
    pub pass: bool,
    /// Whether every condition at order claimed_p + 1 also holds
    /// (order understatement); None when claimed_p = 4.
    pub next_order_pass: Option<bool>,
}

fn check_tree(t: &ButcherTableau, weights: &DVector<f64>, tree: &RootedTree) -> TreeCheck {
    let phi = elementary_weight(t, weights, tree);
    let target = 1.0 / tree.density as f64;
    let residual = (phi - target).abs();
    TreeCheck {
        tree_id: tree.id,
        order: tree.order,
        phi,
        target,
        residual,
        pass: residual <= ORDER_COND_TOL,
    }
}

/// Checks every order condition up to `claimed_p` for the given quadrature
/// weights, and additionally whether the full next-order block holds.
pub fn verify_order(
    t: &ButcherTableau,
    weights: &DVector<f64>,
    claimed_p: usize,
) -> Result<OrderReport, OrderError> {
    if claimed_p > MAX_ORDER {
        return Err(OrderError::UnsupportedOrder(claimed_p));
    }
    let rows: Vec<TreeCheck> = trees_up_to(claimed_p)
        .map(|tree| check_tree(t, weights, tree))
        .collect();
    let pass = rows.iter().all(|r| r.pass);
    let next_order_pass = if claimed_p < MAX_ORDER {
        Some(
            TREES
                .iter()
                .filter(|tr| tr.order == claimed_p + 1)
                .all(|tr| check_tree(t, weights, tr).pass),
        )
    } else {
        None
    };
    Ok(OrderReport {
        claimed_p,
        rows,
        pass,
        next_order_pass,
    })
}

/// Embedded weights from the stacked least-squares system, with diagnostics.
#[derive(Debug, Clone)]
pub struct EmbeddedSolution {
    pub weights: DVector<f64>,
    pub residual: f64,
    /// Numerical rank of the stacked Ψ(τ)ᵀ rows.
    pub rank: usize,
    /// Number of stacked condition rows.
    pub n_conditions: usize,
}

/// Solves the stacked system Ψ̄ b̂ = (1/γ(τ))_τ over all trees of order
/// ≤ `target_p` by least squares. Rank deficiency with a consistent
/// right-hand side yields the minimum-norm solution; an inconsistent
/// system is an error carrying the residual.
pub fn solve_embedded_weights(
    t: &ButcherTableau,
    target_p: usize,
) -> Result<EmbeddedSolution, OrderError> {
    if target_p > MAX_ORDER {
        return Err(OrderError::UnsupportedOrder(target_p));
    }
    let trees: Vec<&RootedTree> = trees_up_to(target_p).collect();
    let mut m = DMatrix::zeros(trees.len(), t.s);
    let mut rhs = DVector::zeros(trees.len());
    for (row, tree) in trees.iter().enumerate() {
        let psi = psi_vector(t, tree);
        m.row_mut(row).copy_from(&psi.transpose());
        rhs[row] = 1.0 / tree.density as f64;
    }
    let (weights, residual, rank) = lstsq_min_norm(&m, &rhs);
    if residual > EMBEDDED_RESIDUAL_TOL * rhs.norm().max(1.0) {
        return Err(OrderError::Infeasible { residual });
    }
    Ok(EmbeddedSolution {
        weights,
        residual,
        rank,
        n_conditions: trees.len(),
    })
}
