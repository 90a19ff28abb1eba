//! The coupled bilinear forms `⟨·,·⟩_{r,a}`, the solution operator
//! `S_{L,β}` with its dual norm, and the bulk-surface Poincaré constant.
//!
//! Fields live on the concatenated index space `[bulk, surface]`. When
//! `r = 0` the trace constraint `u|_Γ = a·v` is built into a
//! [`ReducedSpace`] by identifying each boundary bulk node with its surface
//! node.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fem::{BulkSurfaceField, FemOperators};
use crate::params::{Coupling, Regime, SystemParams};
use crate::sparse::{conjugate_gradient, dot, CsrMatrix, LuFactor, LuSolver};

/// Linear map `P` from reduced coordinates to full `[bulk, surface]`
/// vectors. Every full entry depends on exactly one reduced entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSpace {
    nb: usize,
    ns: usize,
    /// Full index `i` equals `coef · z[reduced]`.
    map: Vec<(usize, f64)>,
    /// A full index carrying each reduced unknown with coefficient one.
    primary: Vec<usize>,
    regime: Regime,
    weight: f64,
}

impl ReducedSpace {
    pub fn new(ops: &FemOperators, regime: Regime, weight: f64) -> Self {
        let (nb, ns) = (ops.bulk_len(), ops.surface_len());
        match regime {
            Regime::AffineTrace => {
                let mut map = vec![(usize::MAX, 0.0); nb + ns];
                let mut primary = Vec::with_capacity(nb);
                let mut on_surface = vec![false; nb];
                for &b in &ops.trace {
                    on_surface[b] = true;
                }
                for i in 0..nb {
                    if !on_surface[i] {
                        map[i] = (primary.len(), 1.0);
                        primary.push(i);
                    }
                }
                for j in 0..ns {
                    let r = primary.len();
                    map[nb + j] = (r, 1.0);
                    map[ops.trace[j]] = (r, weight);
                    primary.push(nb + j);
                }
                Self { nb, ns, map, primary, regime, weight }
            }
            _ => Self {
                nb,
                ns,
                map: (0..nb + ns).map(|i| (i, 1.0)).collect(),
                primary: (0..nb + ns).collect(),
                regime,
                weight,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.primary.len()
    }

    pub fn full_dim(&self) -> usize {
        self.nb + self.ns
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    /// `P z`.
    pub fn prolong(&self, z: &[f64]) -> Vec<f64> {
        self.map.iter().map(|&(r, c)| c * z[r]).collect()
    }

    /// `Pᵀ f`.
    pub fn restrict(&self, full: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.dim()];
        for (i, &(r, c)) in self.map.iter().enumerate() {
            z[r] += c * full[i];
        }
        z
    }

    /// Reduced coordinates of a full vector that satisfies the constraint.
    pub fn inject(&self, full: &[f64]) -> Vec<f64> {
        self.primary.iter().map(|&i| full[i]).collect()
    }

    /// `max_j |u_b(j) - a·v_j|` in the affine-trace regime, zero otherwise.
    pub fn constraint_defect(&self, full: &[f64]) -> f64 {
        if self.regime != Regime::AffineTrace {
            return 0.0;
        }
        self.map
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| (full[i] - c * full[self.primary[r]]).abs())
            .fold(0.0, f64::max)
    }

    /// Replaces boundary bulk values by `a` times the surface values.
    pub fn enforce(&self, full: &[f64]) -> Vec<f64> {
        self.prolong(&self.inject(full))
    }

    /// `Lᵀ A R` for reduced spaces `L` (rows) and `R` (columns).
    pub fn project(left: &ReducedSpace, a: &CsrMatrix, right: &ReducedSpace) -> CsrMatrix {
        let t: Vec<_> = a
            .triplets()
            .map(|(i, j, v)| {
                let (ri, ci) = left.map[i];
                let (rj, cj) = right.map[j];
                (ri, rj, ci * cj * v)
            })
            .collect();
        CsrMatrix::from_triplets(left.dim(), right.dim(), &t)
    }

    /// Diagonal of `Pᵀ diag(m) P`.
    pub fn reduced_diagonal(&self, m: &[f64]) -> Vec<f64> {
        let mut d = vec![0.0; self.dim()];
        for (i, &(r, c)) in self.map.iter().enumerate() {
            d[r] += c * c * m[i];
        }
        d
    }
}

/// `⟨(u,v),(ζ,ξ)⟩_{r,a} = ∫∇u·∇ζ + ∫_Γ∇_Γv·∇_Γξ + χ(r)∫_Γ(av-u)(aξ-ζ)`.
#[derive(Debug, Clone)]
pub struct CouplingForm {
    pub coupling: Coupling,
    pub weight: f64,
    pub chi: f64,
    /// The form on full vectors.
    pub matrix: CsrMatrix,
    pub space: ReducedSpace,
    /// `Pᵀ matrix P`.
    pub reduced: CsrMatrix,
    nb: usize,
}

impl CouplingForm {
    pub fn new(ops: &FemOperators, coupling: Coupling, weight: f64) -> Result<Self> {
        let chi = crate::params::chi(coupling)?;
        let (nb, ns) = (ops.bulk_len(), ops.surface_len());
        let mut t: Vec<(usize, usize, f64)> = ops.bulk_stiffness.triplets().collect();
        t.extend(ops.surface_stiffness.triplets().map(|(i, j, v)| (nb + i, nb + j, v)));
        // penalty with lumped surface mass; kept in the pattern even when χ = 0
        for j in 0..ns {
            let (b, s, m) = (ops.trace[j], nb + j, chi * ops.surface_mass_lumped[j]);
            t.push((b, b, m));
            t.push((b, s, -weight * m));
            t.push((s, b, -weight * m));
            t.push((s, s, weight * weight * m));
        }
        let matrix = CsrMatrix::from_triplets(nb + ns, nb + ns, &t);
        let space = ReducedSpace::new(ops, coupling.regime(), weight);
        let reduced = ReducedSpace::project(&space, &matrix, &space);
        Ok(Self { coupling, weight, chi, matrix, space, reduced, nb })
    }

    pub fn regime(&self) -> Regime {
        self.coupling.regime()
    }

    /// Value of the form on two full vectors.
    pub fn apply(&self, u: &[f64], v: &[f64]) -> f64 {
        self.matrix.bilinear(u, v)
    }

    /// Basis of the constants annihilated by the form: `(a, 1)` when
    /// `r < ∞`, `(1, 0)` and `(0, 1)` when `r = ∞`.
    pub fn kernel(&self) -> Vec<Vec<f64>> {
        let n = self.space.full_dim();
        let nb = self.nb;
        match self.regime() {
            Regime::Decoupled => vec![
                (0..n).map(|i| if i < nb { 1.0 } else { 0.0 }).collect(),
                (0..n).map(|i| if i < nb { 0.0 } else { 1.0 }).collect(),
            ],
            _ => vec![(0..n).map(|i| if i < nb { self.weight } else { 1.0 }).collect()],
        }
    }

    /// `‖field‖_{r,a}`; in the affine-trace regime the field must satisfy
    /// the trace constraint.
    pub fn norm(&self, field: &BulkSurfaceField) -> Result<f64> {
        let flat = field.to_flat();
        let defect = self.space.constraint_defect(&flat);
        if defect > 1e-10 * (1.0 + field.max_abs()) {
            return Err(Error::ConstraintViolation { defect });
        }
        Ok(self.apply(&flat, &flat).max(0.0).sqrt())
    }
}

/// Solver for the linear system behind [`EllipticSolver::solve_s`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearBackend {
    #[default]
    Direct,
    ConjugateGradient,
}

/// `S_{L,β}`: for compatible `f`, the mean-free `u` with
/// `⟨u, v⟩_{L,β} = -(f, v)` for every discrete test field `v`.
#[derive(Debug)]
pub struct EllipticSolver {
    pub form: CouplingForm,
    mass: Vec<f64>,
    /// Columns `Pᵀ M k_i` of the mean constraints.
    constraints: Vec<Vec<f64>>,
    kernel: Vec<Vec<f64>>,
    backend: LinearBackend,
    factor: Option<LuFactor>,
    nb: usize,
}

impl EllipticSolver {
    pub fn new(ops: &FemOperators, params: &SystemParams, backend: LinearBackend) -> Result<Self> {
        let form = CouplingForm::new(ops, params.l, params.beta)?;
        Self::from_form(ops, form, backend)
    }

    pub fn from_form(ops: &FemOperators, form: CouplingForm, backend: LinearBackend) -> Result<Self> {
        let mass = ops.full_mass_lumped();
        let kernel = form.kernel();
        let constraints: Vec<Vec<f64>> = kernel
            .iter()
            .map(|k| form.space.restrict(&k.iter().zip(&mass).map(|(a, m)| a * m).collect::<Vec<_>>()))
            .collect();
        let factor = match backend {
            LinearBackend::Direct => {
                let bordered = bordered_matrix(&form.reduced, &constraints);
                let lu = LuSolver::new(&bordered)?;
                Some(lu.factor(&bordered)?)
            }
            LinearBackend::ConjugateGradient => None,
        };
        Ok(Self { form, mass, constraints, kernel, backend, factor, nb: ops.bulk_len() })
    }

    pub fn backend(&self) -> LinearBackend {
        self.backend
    }

    /// `(k_i, f)` for each kernel constant `k_i`.
    pub fn mean_defects(&self, f: &[f64]) -> Vec<f64> {
        self.kernel
            .iter()
            .map(|k| k.iter().zip(&self.mass).zip(f).map(|((a, m), v)| a * m * v).sum())
            .collect()
    }

    /// Removes the kernel component of `f` in the lumped `L²` sense, making
    /// it a compatible right-hand side.
    pub fn project_compatible(&self, f: &BulkSurfaceField) -> BulkSurfaceField {
        let mut flat = f.to_flat();
        let d = self.mean_defects(&flat);
        // the kernel vectors are mass-orthogonal, so the Gram matrix is diagonal
        for (k, di) in self.kernel.iter().zip(d) {
            let g: f64 = k.iter().zip(&self.mass).map(|(a, m)| a * a * m).sum();
            for (v, a) in flat.iter_mut().zip(k) {
                *v -= di / g * a;
            }
        }
        BulkSurfaceField::from_flat(self.nb, &flat)
    }

    fn check_compatible(&self, f: &[f64]) -> Result<()> {
        let scale: f64 = f.iter().zip(&self.mass).map(|(v, m)| (v * m).abs()).sum::<f64>().max(1.0);
        let defect = self.mean_defects(f).into_iter().fold(0.0, |a: f64, d| a.max(d.abs()));
        if defect > 1e-10 * scale {
            return Err(Error::Incompatible { defect });
        }
        Ok(())
    }

    pub fn solve_s(&self, rhs: &BulkSurfaceField) -> Result<BulkSurfaceField> {
        let f = rhs.to_flat();
        if f.len() != self.mass.len() {
            return Err(Error::DimensionMismatch { expected: self.mass.len(), got: f.len() });
        }
        self.check_compatible(&f)?;
        let mf: Vec<f64> = f.iter().zip(&self.mass).map(|(v, m)| -v * m).collect();
        let b = self.form.space.restrict(&mf);
        let n = b.len();
        let z = match &self.factor {
            Some(lu) => {
                let mut ext = b;
                ext.extend(std::iter::repeat_n(0.0, self.constraints.len()));
                let mut sol = lu.solve(&ext);
                sol.truncate(n);
                sol
            }
            None => {
                // A + c Σ w wᵀ is positive definite and, for compatible b,
                // its solution satisfies every mean constraint
                let a = &self.form.reduced;
                let c = a.diag().iter().fold(0.0f64, |m, v| m.max(*v))
                    / self.constraints.iter().map(|w| dot(w, w)).fold(0.0, f64::max).max(1e-300);
                let mut jac = a.diag();
                for w in &self.constraints {
                    for (d, wi) in jac.iter_mut().zip(w) {
                        *d += c * wi * wi;
                    }
                }
                let apply = |x: &[f64], out: &mut [f64]| {
                    a.mul_vec_into(x, out);
                    for w in &self.constraints {
                        let s = c * dot(w, x);
                        for (o, wi) in out.iter_mut().zip(w) {
                            *o += s * wi;
                        }
                    }
                };
                conjugate_gradient(apply, &jac, &b, 1e-13, 20 * n + 100)?.0
            }
        };
        Ok(BulkSurfaceField::from_flat(self.nb, &self.form.space.prolong(&z)))
    }

    /// `sup_v |⟨u,v⟩ + (f,v)|` over unit nodal test vectors, scaled by the
    /// largest entry of `Pᵀ M |f|`.
    pub fn weak_residual(&self, u: &BulkSurfaceField, f: &BulkSurfaceField) -> f64 {
        let uf = u.to_flat();
        let ff = f.to_flat();
        let au = self.form.matrix.mul_vec(&uf);
        let r: Vec<f64> = au.iter().zip(&ff).zip(&self.mass).map(|((a, v), m)| a + m * v).collect();
        let res = self.form.space.restrict(&r);
        let scale = self
            .form
            .space
            .restrict(&ff.iter().zip(&self.mass).map(|(v, m)| (v * m).abs()).collect::<Vec<_>>())
            .into_iter()
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        res.into_iter().fold(0.0, |a: f64, v| a.max(v.abs())) / scale
    }

    /// `‖f‖_{L,β,∗} = ‖S f‖_{L,β}`.
    pub fn dual_norm(&self, f: &BulkSurfaceField) -> Result<f64> {
        let u = self.solve_s(f)?.to_flat();
        Ok(self.form.apply(&u, &u).max(0.0).sqrt())
    }

    /// Lumped `L²` pairing on full vectors.
    pub fn pairing(&self, a: &BulkSurfaceField, b: &BulkSurfaceField) -> f64 {
        a.to_flat().iter().zip(b.to_flat()).zip(&self.mass).map(|((x, y), m)| x * y * m).sum()
    }
}

fn bordered_matrix(a: &CsrMatrix, constraints: &[Vec<f64>]) -> CsrMatrix {
    let n = a.nrows();
    let mut t: Vec<(usize, usize, f64)> = a.triplets().collect();
    for (k, w) in constraints.iter().enumerate() {
        for (i, &v) in w.iter().enumerate() {
            if v != 0.0 {
                t.push((i, n + k, v));
                t.push((n + k, i, v));
            }
        }
    }
    CsrMatrix::from_triplets(n + constraints.len(), n + constraints.len(), &t)
}

/// Result of the smallest-eigenvalue computation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct PoincareReport {
    pub lambda_min: f64,
    /// `C_P = 1/√λ_min`.
    pub constant: f64,
    pub iterations: usize,
}

/// Best constant in `‖(φ,ψ)‖_{L²} ≤ C_P ‖(φ,ψ)‖_{K,α}` over fields with
/// `β∫φ + ∫ψ = 0`, by inverse iteration on the constrained pencil.
pub fn poincare_constant(ops: &FemOperators, params: &SystemParams) -> Result<PoincareReport> {
    if params.k.is_infinite() {
        return Err(Error::UnsupportedRegime("the bulk-surface Poincaré inequality with K = ∞"));
    }
    let form = CouplingForm::new(ops, params.k, params.alpha)?;
    let space = &form.space;
    let mass = ops.full_mass_lumped();
    let nb = ops.bulk_len();
    let k: Vec<f64> = (0..mass.len()).map(|i| if i < nb { params.beta } else { 1.0 }).collect();
    let w = space.restrict(&k.iter().zip(&mass).map(|(a, m)| a * m).collect::<Vec<_>>());
    let mr = space.reduced_diagonal(&mass);
    let bordered = bordered_matrix(&form.reduced, std::slice::from_ref(&w));
    let lu = LuSolver::new(&bordered)?.factor(&bordered)?;
    let n = space.dim();

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut rq_prev = f64::INFINITY;
    for it in 1..=10_000 {
        let mut rhs: Vec<f64> = x.iter().zip(&mr).map(|(a, m)| a * m).collect();
        rhs.push(0.0);
        let mut y = lu.solve(&rhs);
        y.truncate(n);
        let mnorm = y.iter().zip(&mr).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
        x = y.into_iter().map(|v| v / mnorm).collect();
        let rq = form.reduced.bilinear(&x, &x);
        if (rq - rq_prev).abs() <= 1e-10 * rq {
            if !(rq > 0.0) {
                return Err(Error::LinearSolver(format!("non-positive Rayleigh quotient {rq:e}")));
            }
            return Ok(PoincareReport { lambda_min: rq, constant: 1.0 / rq.sqrt(), iterations: it });
        }
        rq_prev = rq;
    }
    Err(Error::NonConvergence { iterations: 10_000, residual: rq_prev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble;
    use crate::mesh::build_disk_mesh;
    use crate::params::MassTarget;

    fn setup(level: u32) -> (crate::mesh::BulkSurfaceMesh, FemOperators) {
        let mesh = build_disk_mesh(1.0, level).unwrap();
        let ops = assemble(&mesh).unwrap();
        (mesh, ops)
    }

    fn params(ops: &FemOperators, k: Coupling, l: Coupling, alpha: f64, beta: f64) -> SystemParams {
        let mass = if l.is_infinite() { MassTarget::Split(0.0, 0.0) } else { MassTarget::Coupled(0.0) };
        SystemParams::new(k, l, alpha, beta, mass, &ops.geometry()).unwrap()
    }

    fn random_field(ops: &FemOperators, seed: u64) -> BulkSurfaceField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        BulkSurfaceField::new(
            (0..ops.bulk_len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
            (0..ops.surface_len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn reduced_space_roundtrip() {
        let (_, ops) = setup(1);
        let space = ReducedSpace::new(&ops, Regime::AffineTrace, 0.5);
        let z: Vec<f64> = (0..space.dim()).map(|i| i as f64).collect();
        let full = space.prolong(&z);
        assert_eq!(space.inject(&full), z);
        assert_eq!(space.constraint_defect(&full), 0.0);
        // Pᵀ is the adjoint of P
        let f: Vec<f64> = (0..space.full_dim()).map(|i| (i as f64).cos()).collect();
        assert!((dot(&space.restrict(&f), &z) - dot(&f, &full)).abs() < 1e-10);
    }

    #[test]
    fn form_is_symmetric_and_annihilates_matched_constants() {
        let (_, ops) = setup(2);
        let form = CouplingForm::new(&ops, Coupling::Finite(1.0), 1.0).unwrap();
        assert!(form.matrix.asymmetry() < 1e-14);
        let c = BulkSurfaceField::constant(ops.bulk_len(), ops.surface_len(), 0.7, 0.7);
        assert!(form.norm(&c).unwrap() < 1e-7);
        let a = random_field(&ops, 1).to_flat();
        let b = random_field(&ops, 2).to_flat();
        assert!((form.apply(&a, &b) - form.apply(&b, &a)).abs() < 1e-12);
    }

    #[test]
    fn form_norm_of_coordinate_function() {
        let (mesh, ops) = setup(4);
        let form = CouplingForm::new(&ops, Coupling::Finite(1.0), 1.0).unwrap();
        let x: Vec<f64> = mesh.nodes.iter().map(|p| p[0]).collect();
        let f = BulkSurfaceField::new(x.clone(), ops.trace_of(&x));
        // oracle: bulk gradient energy per element plus edgewise surface differences
        let mut bulk = 0.0;
        for (t, area) in mesh.triangles.iter().zip(&ops.element_area) {
            let p = t.map(|i| mesh.nodes[i]);
            let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
            let dx = ((x[t[1]] - x[t[0]]) * (p[2][1] - p[0][1]) - (x[t[2]] - x[t[0]]) * (p[1][1] - p[0][1])) / det;
            let dy = ((x[t[2]] - x[t[0]]) * (p[1][0] - p[0][0]) - (x[t[1]] - x[t[0]]) * (p[2][0] - p[0][0])) / det;
            bulk += area * (dx * dx + dy * dy);
        }
        let mut surface = 0.0;
        for (a, b) in mesh.surface_edges() {
            let (pa, pb) = (mesh.nodes[mesh.boundary[a]], mesh.nodes[mesh.boundary[b]]);
            let h = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
            surface += (pb[0] - pa[0]).powi(2) / h;
        }
        let expected = (bulk + surface).sqrt();
        assert!((form.norm(&f).unwrap() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn affine_trace_norm_rejects_violations() {
        let (_, ops) = setup(1);
        let form = CouplingForm::new(&ops, Coupling::Finite(0.0), 1.0).unwrap();
        let f = random_field(&ops, 3);
        assert!(matches!(form.norm(&f), Err(Error::ConstraintViolation { .. })));
        let g = BulkSurfaceField::from_flat(ops.bulk_len(), &form.space.enforce(&f.to_flat()));
        assert!(form.norm(&g).is_ok());
    }

    #[test]
    fn solve_s_properties_all_regimes() {
        let (_, ops) = setup(3);
        for l in [Coupling::Finite(0.0), Coupling::Finite(1.0), Coupling::Infinite] {
            for backend in [LinearBackend::Direct, LinearBackend::ConjugateGradient] {
                let p = params(&ops, Coupling::Finite(1.0), l, 1.0, 0.8);
                let s = EllipticSolver::new(&ops, &p, backend).unwrap();
                let zero = BulkSurfaceField::zeros(ops.bulk_len(), ops.surface_len());
                assert_eq!(s.solve_s(&zero).unwrap().max_abs(), 0.0);
                let f = s.project_compatible(&random_field(&ops, 10));
                let g = s.project_compatible(&random_field(&ops, 11));
                let sf = s.solve_s(&f).unwrap();
                let sg = s.solve_s(&g).unwrap();
                assert!(s.weak_residual(&sf, &f) < 1e-10, "{l} {backend:?}");
                let lhs = s.pairing(&f, &sg);
                let rhs = s.pairing(&g, &sf);
                assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
                // ‖f‖²_* = -(f, S f)
                let d = s.dual_norm(&f).unwrap();
                assert!((d * d + s.pairing(&f, &sf)).abs() < 1e-10 * d * d);
                let combo = s.solve_s(&f.scaled(2.0).axpy(-3.0, &g)).unwrap();
                let expected = sf.scaled(2.0).axpy(-3.0, &sg);
                assert!(combo.sub(&expected).max_abs() < 1e-10 * (1.0 + expected.max_abs()));
                // the solution is mean free
                assert!(s.mean_defects(&sf.to_flat()).iter().all(|d| d.abs() < 1e-10));
            }
        }
    }

    #[test]
    fn incompatible_rhs_is_rejected() {
        let (_, ops) = setup(1);
        let p = params(&ops, Coupling::Finite(1.0), Coupling::Finite(1.0), 1.0, 1.0);
        let s = EllipticSolver::new(&ops, &p, LinearBackend::Direct).unwrap();
        let one = BulkSurfaceField::constant(ops.bulk_len(), ops.surface_len(), 1.0, 1.0);
        assert!(matches!(s.solve_s(&one), Err(Error::Incompatible { .. })));
    }

    #[test]
    fn small_penalty_approaches_constraint() {
        let (_, ops) = setup(3);
        let f0 = random_field(&ops, 5);
        let p0 = params(&ops, Coupling::Finite(1.0), Coupling::Finite(0.0), 1.0, 1.0);
        let p1 = params(&ops, Coupling::Finite(1.0), Coupling::Finite(1e-6), 1.0, 1.0);
        let s0 = EllipticSolver::new(&ops, &p0, LinearBackend::Direct).unwrap();
        let s1 = EllipticSolver::new(&ops, &p1, LinearBackend::Direct).unwrap();
        let f = s0.project_compatible(&f0);
        let d = s0.solve_s(&f).unwrap().sub(&s1.solve_s(&f).unwrap());
        assert!(ops.h1_norm_sq(&d).sqrt() <= 1e-3);
    }

    #[test]
    fn poincare_constant_is_sharp_on_random_fields() {
        let (_, ops) = setup(3);
        for k in [Coupling::Finite(0.0), Coupling::Finite(1.0)] {
            let p = params(&ops, k, Coupling::Finite(1.0), 0.5, 1.0);
            let rep = poincare_constant(&ops, &p).unwrap();
            assert!(rep.lambda_min > 0.0);
            let form = CouplingForm::new(&ops, k, 0.5).unwrap();
            let mass = ops.full_mass_lumped();
            let nb = ops.bulk_len();
            for seed in 0..20 {
                let raw = form.space.enforce(&random_field(&ops, seed).to_flat());
                // shift along the kernel (α, 1) until β∫φ + ∫ψ = 0, with β = 1
                let kvec: Vec<f64> = (0..mass.len()).map(|i| if i < nb { 0.5 } else { 1.0 }).collect();
                let total = |v: &[f64]| -> f64 { v.iter().zip(&mass).map(|(a, m)| a * m).sum() };
                let c = total(&raw) / total(&kvec);
                let u: Vec<f64> = raw.iter().zip(&kvec).map(|(a, b)| a - c * b).collect();
                let l2 = u.iter().zip(&mass).map(|(a, m)| a * a * m).sum::<f64>().sqrt();
                let h = form.apply(&u, &u).sqrt();
                assert!(l2 <= rep.constant * h * (1.0 + 1e-8));
            }
        }
    }

    #[test]
    fn poincare_rejects_infinite_k() {
        let (_, ops) = setup(0);
        let p = params(&ops, Coupling::Infinite, Coupling::Finite(1.0), 1.0, 1.0);
        assert!(matches!(poincare_constant(&ops, &p), Err(Error::UnsupportedRegime(_))));
    }
}
