//! Leapfrog time stepping, CFL estimation and discrete energy.
//!
//! Both systems share one first-order form on a primal scalar unknown `p`
//! (magnetic field `h` or pressure `q`) and a dual vector unknown `d`
//! (electric field `e` or velocity `v`):
//!
//! ```text
//! M_d d' =  K^T p + s_d(t)
//! M_p p' = -K d   + s_p(t)
//! ```
//!
//! with `K = C` for Maxwell and `K = B` for acoustics. The dual unknown is
//! stored at integer steps, the primal unknown at half steps.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{
    am_operator, curl_operator, div_grad_operator, grad_div_operator, lumped_mass, BlockDiagonalMatrix, BoundaryMode,
    MaterialField, TensorCoupling,
};
use crate::mesh::MicroCellMesh;
use crate::sparse::SparseOperator;
use crate::spaces::{DofMap, SpaceSpec};
use crate::{Error, Point, Result};

/// Physical system being discretized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemKind {
    /// `eps E' = curl H`, `mu H' = -curl E`.
    Maxwell,
    /// `Q' = rho c^2 div V`, `rho V' = grad Q`.
    Acoustic,
}

/// Assembled semi-discrete system.
#[derive(Clone, Debug)]
pub struct WaveSystem {
    kind: SystemKind,
    bc: BoundaryMode,
    primal: DofMap,
    dual: DofMap,
    /// Primal-tested coupling `K` (rows primal, columns dual).
    coupling: SparseOperator,
    /// Dual-tested coupling, assembled independently; equals `K^T`.
    coupling_t: SparseOperator,
    /// Sum-factorized `K`, used by the time loop.
    tensor: TensorCoupling,
    m_primal: BlockDiagonalMatrix,
    m_dual: BlockDiagonalMatrix,
    m_primal_inv: BlockDiagonalMatrix,
    m_dual_inv: BlockDiagonalMatrix,
}

impl WaveSystem {
    /// Maxwell system with permittivity `eps` and permeability `mu`.
    pub fn maxwell(
        mesh: Arc<MicroCellMesh>,
        degree: usize,
        bc: BoundaryMode,
        eps: &MaterialField,
        mu: &MaterialField,
    ) -> Result<Self> {
        let h = DofMap::new(SpaceSpec::primal_grad(degree), mesh.clone())?;
        let e = DofMap::new(SpaceSpec::dual_curl(degree), mesh)?;
        let coupling = curl_operator(&h, &e, bc)?;
        let coupling_t = am_operator(&h, &e, bc)?;
        let m_primal = lumped_mass(&h, mu)?;
        let m_dual = lumped_mass(&e, eps)?;
        Self::finish(SystemKind::Maxwell, bc, h, e, coupling, coupling_t, m_primal, m_dual)
    }

    /// Acoustic system with density `rho` and sound speed `c`.
    pub fn acoustic(
        mesh: Arc<MicroCellMesh>,
        degree: usize,
        bc: BoundaryMode,
        rho: &MaterialField,
        c: &MaterialField,
    ) -> Result<Self> {
        let q = DofMap::new(SpaceSpec::primal_grad(degree), mesh.clone())?;
        let v = DofMap::new(SpaceSpec::dual_div(degree), mesh)?;
        let coupling = div_grad_operator(&q, &v, bc)?;
        let coupling_t = grad_div_operator(&q, &v, bc)?;
        let stiffness = MaterialField::new(
            rho.values().iter().zip(c.values()).map(|(r, c)| 1.0 / (r * c * c)).collect(),
        )?;
        let m_primal = lumped_mass(&q, &stiffness)?;
        let m_dual = lumped_mass(&v, rho)?;
        Self::finish(SystemKind::Acoustic, bc, q, v, coupling, coupling_t, m_primal, m_dual)
    }

    /// Unit-coefficient system of either kind.
    pub fn unit(kind: SystemKind, mesh: Arc<MicroCellMesh>, degree: usize, bc: BoundaryMode) -> Result<Self> {
        let one = MaterialField::uniform(mesh.triangulation().num_triangles(), 1.0)?;
        match kind {
            SystemKind::Maxwell => Self::maxwell(mesh, degree, bc, &one, &one),
            SystemKind::Acoustic => Self::acoustic(mesh, degree, bc, &one, &one),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        kind: SystemKind,
        bc: BoundaryMode,
        primal: DofMap,
        dual: DofMap,
        coupling: SparseOperator,
        coupling_t: SparseOperator,
        m_primal: BlockDiagonalMatrix,
        m_dual: BlockDiagonalMatrix,
    ) -> Result<Self> {
        let m_primal_inv = m_primal.invert()?;
        let m_dual_inv = m_dual.invert()?;
        let curl = match kind {
            SystemKind::Maxwell => dual.clone(),
            SystemKind::Acoustic => DofMap::new(SpaceSpec::dual_curl(primal.degree()), primal.mesh().clone())?,
        };
        let tensor = TensorCoupling::new(&primal, &curl, bc)?;
        Ok(Self { kind, bc, primal, dual, coupling, coupling_t, tensor, m_primal, m_dual, m_primal_inv, m_dual_inv })
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn boundary_mode(&self) -> BoundaryMode {
        self.bc
    }

    pub fn degree(&self) -> usize {
        self.primal.degree()
    }

    pub fn mesh(&self) -> &Arc<MicroCellMesh> {
        self.primal.mesh()
    }

    pub fn primal_space(&self) -> &DofMap {
        &self.primal
    }

    pub fn dual_space(&self) -> &DofMap {
        &self.dual
    }

    pub fn coupling(&self) -> &SparseOperator {
        &self.coupling
    }

    pub fn coupling_transpose(&self) -> &SparseOperator {
        &self.coupling_t
    }

    pub fn tensor_coupling(&self) -> &TensorCoupling {
        &self.tensor
    }

    pub fn primal_mass(&self) -> &BlockDiagonalMatrix {
        &self.m_primal
    }

    pub fn dual_mass(&self) -> &BlockDiagonalMatrix {
        &self.m_dual
    }

    pub fn primal_mass_inverse(&self) -> &BlockDiagonalMatrix {
        &self.m_primal_inv
    }

    pub fn dual_mass_inverse(&self) -> &BlockDiagonalMatrix {
        &self.m_dual_inv
    }

    pub fn total_dofs(&self) -> usize {
        self.primal.total_dofs() + self.dual.total_dofs()
    }

    /// Bytes held by the operators of the matrix-free time loop.
    pub fn loop_memory_bytes(&self) -> usize {
        self.tensor.memory_bytes() + self.m_primal_inv.memory_bytes() + self.m_dual_inv.memory_bytes()
    }

    /// Bytes held by the assembled couplings.
    pub fn assembled_memory_bytes(&self) -> usize {
        self.coupling.memory_bytes() + self.coupling_t.memory_bytes()
    }

    /// Largest eigenvalue of `M_p^{-1} K M_d^{-1} K^T`.
    pub fn lambda_max(&self, tol: f64, max_iters: usize) -> Result<f64> {
        estimate_lambda_max(&self.coupling, &self.m_dual_inv, &self.m_primal, &self.m_primal_inv, tol, max_iters)
    }

    /// Lumped `L2` projection of a scalar field onto the primal space.
    pub fn project_primal(&self, f: impl Fn(Point) -> f64) -> Result<Vec<f64>> {
        let v = self.primal.interpolate_scalar(f)?.values;
        Ok(self.m_primal.mul_vec(&v))
    }

    /// Lumped `L2` projection of a vector field onto the dual space.
    pub fn project_dual(&self, f: impl Fn(Point) -> [f64; 2]) -> Result<Vec<f64>> {
        let v = self.dual.interpolate(f)?.values;
        Ok(self.m_dual.mul_vec(&v))
    }
}

/// Which equation a source feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceTarget {
    Primal,
    Dual,
}

/// Right-hand side `g(t) * load`, with `load` a lumped projection.
pub struct SourceTerm {
    pub target: SourceTarget,
    /// Projected spatial profile (already multiplied by the lumped mass).
    pub load: Vec<f64>,
    /// Time signature.
    pub signal: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl SourceTerm {
    pub fn primal(system: &WaveSystem, f: impl Fn(Point) -> f64, signal: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Result<Self> {
        Ok(Self { target: SourceTarget::Primal, load: system.project_primal(f)?, signal: Box::new(signal) })
    }

    pub fn dual(
        system: &WaveSystem,
        f: impl Fn(Point) -> [f64; 2],
        signal: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Ok(Self { target: SourceTarget::Dual, load: system.project_dual(f)?, signal: Box::new(signal) })
    }
}

impl std::fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceTerm").field("target", &self.target).field("len", &self.load.len()).finish()
    }
}

/// Staggered leapfrog state after `step` steps.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    /// Dual unknown at `t = step * dt`.
    pub dual: Vec<f64>,
    /// Primal unknown at `t = (step + 1/2) * dt`.
    pub primal: Vec<f64>,
    /// Primal unknown at `t = (step - 1/2) * dt`.
    pub primal_prev: Vec<f64>,
    pub step: usize,
    pub dt: f64,
}

impl FieldState {
    pub fn time(&self) -> f64 {
        self.step as f64 * self.dt
    }

    /// Second-order primal value at the integer time.
    pub fn primal_at_step(&self) -> Vec<f64> {
        self.primal.iter().zip(&self.primal_prev).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.dual.iter().chain(&self.primal).fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// How the time loop applies the coupling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CouplingPath {
    /// Sum-factorized cellwise apply.
    #[default]
    MatrixFree,
    /// Compressed-row products with `K` and the separately assembled `K^T`.
    Assembled,
}

/// Leapfrog integrator bound to a system and a step size.
pub struct Leapfrog<'a> {
    system: &'a WaveSystem,
    dt: f64,
    path: CouplingPath,
    sources: Vec<SourceTerm>,
    rhs_primal: Vec<f64>,
    rhs_dual: Vec<f64>,
    tmp_primal: Vec<f64>,
    tmp_dual: Vec<f64>,
}

impl<'a> Leapfrog<'a> {
    pub fn new(system: &'a WaveSystem, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
        }
        let np = system.primal.total_dofs();
        let nd = system.dual.total_dofs();
        Ok(Self {
            system,
            dt,
            path: CouplingPath::default(),
            sources: Vec::new(),
            rhs_primal: vec![0.0; np],
            rhs_dual: vec![0.0; nd],
            tmp_primal: vec![0.0; np],
            tmp_dual: vec![0.0; nd],
        })
    }

    pub fn with_path(mut self, path: CouplingPath) -> Self {
        self.path = path;
        self
    }

    pub fn with_source(mut self, source: SourceTerm) -> Result<Self> {
        let expected = match source.target {
            SourceTarget::Primal => self.rhs_primal.len(),
            SourceTarget::Dual => self.rhs_dual.len(),
        };
        if source.load.len() != expected {
            return Err(Error::DimensionMismatch(format!("source has {} entries, expected {expected}", source.load.len())));
        }
        self.sources.push(source);
        Ok(self)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    fn add_sources(&self, target: SourceTarget, t: f64, out: &mut [f64]) {
        for s in self.sources.iter().filter(|s| s.target == target) {
            let g = (s.signal)(t);
            if g != 0.0 {
                out.iter_mut().zip(&s.load).for_each(|(o, l)| *o += g * l);
            }
        }
    }

    /// `out = M_p^{-1} (-K d + s_p(t))`.
    fn primal_rate(&mut self, d: &[f64], t: f64) {
        match self.path {
            CouplingPath::MatrixFree => self.system.tensor.apply(d, &mut self.rhs_primal),
            CouplingPath::Assembled => self.system.coupling.apply(d, &mut self.rhs_primal),
        }
        self.rhs_primal.iter_mut().for_each(|v| *v = -*v);
        let mut rhs = std::mem::take(&mut self.rhs_primal);
        self.add_sources(SourceTarget::Primal, t, &mut rhs);
        self.system.m_primal_inv.apply(&rhs, &mut self.tmp_primal);
        self.rhs_primal = rhs;
    }

    /// `out = M_d^{-1} (K^T p + s_d(t))`.
    fn dual_rate(&mut self, p: &[f64], t: f64) {
        match self.path {
            CouplingPath::MatrixFree => self.system.tensor.apply_transpose(p, &mut self.rhs_dual),
            CouplingPath::Assembled => self.system.coupling_t.apply(p, &mut self.rhs_dual),
        }
        let mut rhs = std::mem::take(&mut self.rhs_dual);
        self.add_sources(SourceTarget::Dual, t, &mut rhs);
        self.system.m_dual_inv.apply(&rhs, &mut self.tmp_dual);
        self.rhs_dual = rhs;
    }

    /// Builds the staggered state from data at `t = 0` with the half-step
    /// start `p^{1/2} = p^0 + dt/2 M_p^{-1}(-K d^0 + s_p(0))`.
    pub fn initialize(&mut self, dual0: Vec<f64>, primal0: Vec<f64>) -> Result<FieldState> {
        if dual0.len() != self.rhs_dual.len() || primal0.len() != self.rhs_primal.len() {
            return Err(Error::DimensionMismatch("initial data does not match the spaces".into()));
        }
        self.primal_rate(&dual0, 0.0);
        let half = 0.5 * self.dt;
        let primal = primal0.iter().zip(&self.tmp_primal).map(|(p, r)| p + half * r).collect();
        let primal_prev = primal0.iter().zip(&self.tmp_primal).map(|(p, r)| p - half * r).collect();
        Ok(FieldState { dual: dual0, primal, primal_prev, step: 0, dt: self.dt })
    }

    /// One step `n -> n + 1`.
    pub fn step(&mut self, s: &mut FieldState) {
        let dt = self.dt;
        let t = s.time();
        self.dual_rate(&s.primal, t + 0.5 * dt);
        s.dual.iter_mut().zip(&self.tmp_dual).for_each(|(d, r)| *d += dt * r);
        self.primal_rate(&s.dual, t + dt);
        std::mem::swap(&mut s.primal_prev, &mut s.primal);
        s.primal.iter_mut().zip(s.primal_prev.iter().zip(&self.tmp_primal)).for_each(|(p, (q, r))| *p = q + dt * r);
        s.step += 1;
    }

    /// Exact algebraic inverse of [`Self::step`].
    pub fn step_back(&mut self, s: &mut FieldState) -> Result<()> {
        if s.step == 0 {
            return Err(Error::InvalidArgument("cannot step back before step 0".into()));
        }
        let dt = self.dt;
        let t = s.time();
        // p^{n+1/2} is primal_prev; recover d^n and then p^{n-1/2}.
        std::mem::swap(&mut s.primal, &mut s.primal_prev);
        self.dual_rate(&s.primal, t - 0.5 * dt);
        s.dual.iter_mut().zip(&self.tmp_dual).for_each(|(d, r)| *d -= dt * r);
        self.primal_rate(&s.dual, t - dt);
        s.primal_prev.iter_mut().zip(s.primal.iter().zip(&self.tmp_primal)).for_each(|(q, (p, r))| *q = p - dt * r);
        s.step -= 1;
        Ok(())
    }

    /// Runs `steps` steps, calling `observer` after every `stride`-th step
    /// (and once before the first). Fails on non-finite values or growth
    /// beyond `1e6` times the initial maximum.
    pub fn run(
        &mut self,
        s: &mut FieldState,
        steps: usize,
        stride: usize,
        mut observer: impl FnMut(&WaveSystem, &FieldState),
    ) -> Result<()> {
        let stride = stride.max(1);
        let initial = s.max_abs().max(f64::MIN_POSITIVE);
        observer(self.system, s);
        for k in 1..=steps {
            self.step(s);
            let m = s.max_abs();
            if !m.is_finite() || m > 1e6 * initial {
                return Err(Error::Diverged { step: s.step });
            }
            if k % stride == 0 {
                observer(self.system, s);
            }
        }
        Ok(())
    }
}

/// `1/2 d^T M_d d + 1/2 pbar^T M_p pbar` with `pbar` the mean of the two
/// stagger-adjacent primal vectors.
pub fn discrete_energy(system: &WaveSystem, s: &FieldState) -> f64 {
    let pbar = s.primal_at_step();
    0.5 * system.m_dual.quadratic_form(&s.dual) + 0.5 * system.m_primal.quadratic_form(&pbar)
}

/// `1/2 d^T M_d d + 1/2 p_prev^T M_p p`: exactly invariant under the
/// source-free leapfrog map.
pub fn staggered_energy(system: &WaveSystem, s: &FieldState) -> f64 {
    0.5 * system.m_dual.quadratic_form(&s.dual) + 0.5 * system.m_primal.bilinear_form(&s.primal_prev, &s.primal)
}

/// Seed of the power-iteration start vector.
pub const POWER_ITERATION_SEED: u64 = 0x5eed_cf1;

/// Largest eigenvalue of `M_p^{-1} K M_d^{-1} K^T` by power iteration with
/// `M_p`-weighted Rayleigh quotients.
///
/// Iteration stops once successive quotients differ by less than `tol`
/// relative and the geometric extrapolation of the remaining error, from
/// the ratio of the last two differences, is below `tol` as well.
///
/// The start vector has deterministic pseudo-random entries: a constant
/// start lies in the kernel under [`BoundaryMode::ElectricWall`] and is
/// orthogonal to antisymmetric extremal modes on symmetric meshes.
pub fn estimate_lambda_max(
    coupling: &SparseOperator,
    m_dual_inv: &BlockDiagonalMatrix,
    m_primal: &BlockDiagonalMatrix,
    m_primal_inv: &BlockDiagonalMatrix,
    tol: f64,
    max_iters: usize,
) -> Result<f64> {
    let n = coupling.rows();
    if m_primal.dim() != n || m_primal_inv.dim() != n || m_dual_inv.dim() != coupling.cols() {
        return Err(Error::DimensionMismatch("power iteration operands".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance {tol} must be positive")));
    }
    if n == 0 || coupling.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut t = vec![0.0; coupling.cols()];
    let mut u = vec![0.0; coupling.cols()];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; n];
    let norm = |x: &mut [f64]| {
        let r = m_primal.quadratic_form(x).sqrt();
        x.iter_mut().for_each(|v| *v /= r);
    };
    norm(&mut x);
    let mut last = f64::NAN;
    let mut last_diff = f64::INFINITY;
    for it in 1..=max_iters {
        coupling.apply_transpose(&x, &mut t);
        m_dual_inv.apply(&t, &mut u);
        coupling.apply(&u, &mut s);
        // x is M_p-normalized, so the Rayleigh quotient is x^T S x.
        let lambda: f64 = x.iter().zip(&s).map(|(a, b)| a * b).sum();
        m_primal_inv.apply(&s, &mut y);
        if lambda == 0.0 {
            return Ok(0.0);
        }
        let diff = (lambda - last).abs();
        if diff < tol * lambda.abs() {
            // Geometric extrapolation of the remaining error.
            let ratio = (diff / last_diff).min(1.0 - 1e-12);
            let remaining = diff * ratio / (1.0 - ratio);
            if !(ratio < 1.0) || remaining < tol * lambda.abs() {
                return Ok(lambda);
            }
        }
        if last.is_finite() {
            last_diff = diff;
        }
        last = lambda;
        std::mem::swap(&mut x, &mut y);
        norm(&mut x);
        if !last.is_finite() {
            return Err(Error::NotConverged { iterations: it, estimate: last });
        }
    }
    Err(Error::NotConverged { iterations: max_iters, estimate: last })
}

/// Time-step bound with a safety factor; `None` when unbounded.
pub fn cfl_timestep(lambda_max: f64, safety: f64) -> Option<f64> {
    (lambda_max > 0.0).then(|| safety * 2.0 / lambda_max.sqrt())
}
