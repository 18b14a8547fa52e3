//! Clamped Mindlin–Reissner plate on the unit square.
//!
//! Bilinear Q4 elements with three DOFs per node `(w, θx, θy)`. Bending energy is integrated
//! with 2×2 Gauss points and transverse shear with a single point at the centroid (selective
//! reduced integration), which keeps the element free of shear locking as the thickness goes to
//! zero. Young's modulus and transverse pressure are constant per element. The whole boundary
//! is clamped, so only interior nodes carry unknowns.
//!
//! Sign conventions: curvatures are `κ = (∂θx/∂x, ∂θy/∂y, ∂θx/∂y + ∂θy/∂x)` and shear strains
//! `γ = ∇w − θ`. Element `(row, col)` covers `[col h, (col+1) h] × [row h, (row+1) h]`.

mod cases;
mod sparse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;

pub use cases::{
    generate_dataset, generate_dataset_with_stats, Case, CaseSpec, FemPredictor, InputSampler, NoiseScheme, ResidualStats,
};
pub use sparse::{BandCholesky, SparseMatrix};

/// Relative residual accepted by [`solve`].
pub const RESIDUAL_TOL: f64 = 1e-9;
const MAX_NEWTON_ITERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateParams {
    #[serde(default = "default_thickness")]
    pub thickness: f64,
    #[serde(default = "default_poisson")]
    pub poisson: f64,
    #[serde(default = "default_shear_correction")]
    pub shear_correction: f64,
}

fn default_thickness() -> f64 {
    0.1
}
fn default_poisson() -> f64 {
    0.3
}
fn default_shear_correction() -> f64 {
    5.0 / 6.0
}

impl Default for PlateParams {
    fn default() -> Self {
        PlateParams {
            thickness: default_thickness(),
            poisson: default_poisson(),
            shear_correction: default_shear_correction(),
        }
    }
}

impl PlateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.thickness > 0.0) {
            return Err(Error::invalid("plate thickness must be > 0"));
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return Err(Error::invalid("Poisson ratio must lie in [0, 0.5)"));
        }
        if !(self.shear_correction > 0.0) {
            return Err(Error::invalid("shear correction factor must be > 0"));
        }
        Ok(())
    }

    /// Bending rigidity per unit Young's modulus, `t³ / 12(1−ν²)`.
    pub fn rigidity_per_modulus(&self) -> f64 {
        self.thickness.powi(3) / (12.0 * (1.0 - self.poisson * self.poisson))
    }
}

#[derive(Debug, Clone)]
pub struct PlateModel {
    pub params: PlateParams,
    pub modulus: Field,
    pub load: Field,
}

impl PlateModel {
    pub fn new(params: PlateParams, modulus: Field, load: Field) -> Result<Self> {
        params.validate()?;
        let (r, c, ch) = modulus.shape();
        if r != c || ch != 1 {
            return Err(Error::invalid(format!("modulus field must be n×n×1, got {r}×{c}×{ch}")));
        }
        if load.shape() != modulus.shape() {
            return Err(Error::invalid("load field shape must match modulus field"));
        }
        if let Some(i) = modulus.as_slice().iter().position(|&e| !(e > 0.0)) {
            return Err(Error::invalid(format!("Young's modulus must be > 0 (element {i})")));
        }
        Ok(PlateModel {
            params,
            modulus,
            load,
        })
    }

    /// Uniform modulus and load.
    pub fn uniform(params: PlateParams, n_elem: usize, modulus: f64, load: f64) -> Result<Self> {
        Self::new(
            params,
            Field::new(n_elem, n_elem, 1, modulus)?,
            Field::new(n_elem, n_elem, 1, load)?,
        )
    }

    pub fn n_elem(&self) -> usize {
        self.modulus.rows()
    }

    pub fn n_nodes_per_side(&self) -> usize {
        self.n_elem() + 1
    }

    /// Total DOFs including the clamped boundary, `3 (n+1)²`.
    pub fn n_dof(&self) -> usize {
        3 * self.n_nodes_per_side().pow(2)
    }

    fn element_nodes(&self, row: usize, col: usize) -> [usize; 4] {
        let m = self.n_nodes_per_side();
        let n0 = row * m + col;
        [n0, n0 + 1, n0 + m + 1, n0 + m]
    }
}

/// Shape-function derivatives of the square element of side `h` at natural point `(ξ, η)`.
/// Node order: (−1,−1), (1,−1), (1,1), (−1,1).
fn shape(h: f64, xi: f64, eta: f64) -> ([f64; 4], [f64; 4], [f64; 4]) {
    let sx = [-1.0, 1.0, 1.0, -1.0];
    let sy = [-1.0, -1.0, 1.0, 1.0];
    let mut n = [0.0; 4];
    let mut dx = [0.0; 4];
    let mut dy = [0.0; 4];
    for a in 0..4 {
        n[a] = 0.25 * (1.0 + sx[a] * xi) * (1.0 + sy[a] * eta);
        dx[a] = 0.25 * sx[a] * (1.0 + sy[a] * eta) * 2.0 / h;
        dy[a] = 0.25 * sy[a] * (1.0 + sx[a] * xi) * 2.0 / h;
    }
    (n, dx, dy)
}

/// Element stiffness for unit Young's modulus (row-major 12×12).
fn unit_element_stiffness(params: &PlateParams, h: f64) -> [[f64; 12]; 12] {
    let nu = params.poisson;
    let t = params.thickness;
    let db = params.rigidity_per_modulus();
    let dmat = [
        [db, db * nu, 0.0],
        [db * nu, db, 0.0],
        [0.0, 0.0, db * (1.0 - nu) / 2.0],
    ];
    let ds = params.shear_correction * t / (2.0 * (1.0 + nu));
    let det_j = h * h / 4.0;
    let mut ke = [[0.0; 12]; 12];

    let g = 1.0 / 3f64.sqrt();
    for &(xi, eta) in &[(-g, -g), (g, -g), (g, g), (-g, g)] {
        let (_, dx, dy) = shape(h, xi, eta);
        let mut bb = [[0.0; 12]; 3];
        for a in 0..4 {
            bb[0][3 * a + 1] = dx[a];
            bb[1][3 * a + 2] = dy[a];
            bb[2][3 * a + 1] = dy[a];
            bb[2][3 * a + 2] = dx[a];
        }
        for i in 0..12 {
            for j in 0..12 {
                let mut s = 0.0;
                for p in 0..3 {
                    for q in 0..3 {
                        s += bb[p][i] * dmat[p][q] * bb[q][j];
                    }
                }
                ke[i][j] += s * det_j;
            }
        }
    }

    let (n, dx, dy) = shape(h, 0.0, 0.0);
    let mut bs = [[0.0; 12]; 2];
    for a in 0..4 {
        bs[0][3 * a] = dx[a];
        bs[0][3 * a + 1] = -n[a];
        bs[1][3 * a] = dy[a];
        bs[1][3 * a + 2] = -n[a];
    }
    for i in 0..12 {
        for j in 0..12 {
            let s = bs[0][i] * bs[0][j] + bs[1][i] * bs[1][j];
            ke[i][j] += ds * s * 4.0 * det_j;
        }
    }
    // exact symmetry regardless of summation order
    for i in 0..12 {
        for j in 0..i {
            let v = 0.5 * (ke[i][j] + ke[j][i]);
            ke[i][j] = v;
            ke[j][i] = v;
        }
    }
    ke
}

/// Reduced (clamped DOFs eliminated) stiffness system.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub k: SparseMatrix,
    pub f: Vec<f64>,
    /// Global DOF index of each reduced unknown.
    pub free_dofs: Vec<usize>,
    pub n_dof: usize,
}

impl LinearSystem {
    /// Scatters a reduced solution into the full DOF vector (boundary entries zero).
    pub fn expand(&self, reduced: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_dof];
        for (&g, &v) in self.free_dofs.iter().zip(reduced) {
            full[g] = v;
        }
        full
    }
}

pub fn assemble(model: &PlateModel) -> Result<LinearSystem> {
    let n = model.n_elem();
    let m = model.n_nodes_per_side();
    let h = 1.0 / n as f64;
    let ke = unit_element_stiffness(&model.params, h);

    // interior nodes only
    let mut reduced_of = vec![usize::MAX; model.n_dof()];
    let mut free_dofs = Vec::with_capacity(3 * (m - 2) * (m - 2));
    for j in 1..m - 1 {
        for i in 1..m - 1 {
            for d in 0..3 {
                let g = 3 * (j * m + i) + d;
                reduced_of[g] = free_dofs.len();
                free_dofs.push(g);
            }
        }
    }
    let nr = free_dofs.len();
    let mut trip = Vec::with_capacity(n * n * 144);
    let mut f = vec![0.0; nr];
    for row in 0..n {
        for col in 0..n {
            let e = model.modulus.get(row, col, 0);
            let q = model.load.get(row, col, 0) * h * h / 4.0;
            let nodes = model.element_nodes(row, col);
            let mut dofs = [usize::MAX; 12];
            for (a, &node) in nodes.iter().enumerate() {
                for d in 0..3 {
                    dofs[3 * a + d] = reduced_of[3 * node + d];
                }
            }
            for a in 0..12 {
                if dofs[a] == usize::MAX {
                    continue;
                }
                if a % 3 == 0 {
                    f[dofs[a]] += q;
                }
                for b in 0..12 {
                    if dofs[b] != usize::MAX {
                        trip.push((dofs[a], dofs[b], e * ke[a][b]));
                    }
                }
            }
        }
    }
    Ok(LinearSystem {
        k: SparseMatrix::from_triplets(nr, &trip),
        f,
        free_dofs,
        n_dof: model.n_dof(),
    })
}

/// Reduced solution with convergence bookkeeping.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Newton iteration on `K u = F`. The problem is linear, so the first correction lands on the
/// solution and the loop exits once the relative residual is below [`RESIDUAL_TOL`].
pub fn solve(k: &SparseMatrix, f: &[f64]) -> Result<SolveReport> {
    if f.len() != k.n() {
        return Err(Error::invalid("load vector length does not match stiffness"));
    }
    let f_norm = sparse::norm2(f);
    let mut u = vec![0.0; k.n()];
    if f_norm == 0.0 {
        return Ok(SolveReport {
            u,
            residual: 0.0,
            iterations: 0,
        });
    }
    let chol = BandCholesky::factor(k)
        .map_err(|e| Error::numerical(format!("stiffness factorization failed: {e}"), f64::NAN))?;
    let mut residual = 1.0;
    for it in 0..=MAX_NEWTON_ITERS {
        let ku = k.mul_vec(&u);
        let r: Vec<f64> = f.iter().zip(&ku).map(|(a, b)| a - b).collect();
        residual = sparse::norm2(&r) / f_norm;
        if !residual.is_finite() {
            break;
        }
        if residual <= RESIDUAL_TOL {
            return Ok(SolveReport {
                u,
                residual,
                iterations: it,
            });
        }
        let du = chol.solve(&r);
        u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
    }
    Err(Error::numerical("Newton iteration did not converge", residual))
}

#[derive(Debug, Clone)]
pub struct FemSolution {
    /// Full DOF vector `(w, θx, θy)` per node, row-major over nodes.
    pub dof: Vec<f64>,
    pub w_center: Field,
    pub sigma_v: Field,
    pub tau_max: Field,
    pub tau_xy: Field,
    pub residual: f64,
    pub iterations: usize,
}

impl FemSolution {
    pub fn nodal_w(&self, node_row: usize, node_col: usize) -> f64 {
        let m = self.w_center.rows() + 1;
        self.dof[3 * (node_row * m + node_col)]
    }
}

/// Element-centroid deflection and top-fiber stresses.
pub fn postprocess(model: &PlateModel, dof: &[f64]) -> Result<FemSolution> {
    if dof.len() != model.n_dof() {
        return Err(Error::invalid(format!(
            "DOF vector has length {}, expected {}",
            dof.len(),
            model.n_dof()
        )));
    }
    let n = model.n_elem();
    let h = 1.0 / n as f64;
    let nu = model.params.poisson;
    let t = model.params.thickness;
    let (_, dx, dy) = shape(h, 0.0, 0.0);
    let mut w = Vec::with_capacity(n * n);
    let mut sv = Vec::with_capacity(n * n);
    let mut tm = Vec::with_capacity(n * n);
    let mut txy = Vec::with_capacity(n * n);
    for row in 0..n {
        for col in 0..n {
            let nodes = model.element_nodes(row, col);
            let (mut kx, mut ky, mut kxy, mut wc) = (0.0, 0.0, 0.0, 0.0);
            for (a, &node) in nodes.iter().enumerate() {
                let (wa, tx, ty) = (dof[3 * node], dof[3 * node + 1], dof[3 * node + 2]);
                wc += 0.25 * wa;
                kx += dx[a] * tx;
                ky += dy[a] * ty;
                kxy += dy[a] * tx + dx[a] * ty;
            }
            let c = model.modulus.get(row, col, 0) * t / (2.0 * (1.0 - nu * nu));
            let sx = c * (kx + nu * ky);
            let sy = c * (ky + nu * kx);
            let s_xy = c * (1.0 - nu) / 2.0 * kxy;
            w.push(wc);
            sv.push((sx * sx - sx * sy + sy * sy + 3.0 * s_xy * s_xy).max(0.0).sqrt());
            tm.push((((sx - sy) / 2.0).powi(2) + s_xy * s_xy).sqrt());
            txy.push(s_xy);
        }
    }
    Ok(FemSolution {
        dof: dof.to_vec(),
        w_center: Field::from_vec(n, n, 1, w)?,
        sigma_v: Field::from_vec(n, n, 1, sv)?,
        tau_max: Field::from_vec(n, n, 1, tm)?,
        tau_xy: Field::from_vec(n, n, 1, txy)?,
        residual: 0.0,
        iterations: 0,
    })
}

/// Assemble, solve and postprocess one plate.
pub fn solve_plate(model: &PlateModel) -> Result<FemSolution> {
    let sys = assemble(model)?;
    let rep = solve(&sys.k, &sys.f)?;
    let mut sol = postprocess(model, &sys.expand(&rep.u))?;
    sol.residual = rep.residual;
    sol.iterations = rep.iterations;
    Ok(sol)
}
