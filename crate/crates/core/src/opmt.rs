//! Row-action reconstruction of bone/water densities from dual-spectrum
//! log-projections by oblique projections (OPMT), with E-ART as the
//! orthogonal special case.
//!
//! For ray `l` the forward model is linearized around the current state,
//! giving two lines in the plane of `(x1, x2) = (R_l f, R_l g)`:
//!
//! ```text
//! H1: a11 x1 + a12 x2 = b1
//! H2: a21 x1 + a22 x2 = b2
//! ```
//!
//! The H1 step moves along `lambda1 * dir1 + lambda2 * dir2`, where `dir1` is
//! the unit normal of H1 and `dir2` is the unit vector along H2 that makes an
//! acute angle with `dir1`. The ray-space step is lifted to image space with
//! the minimum-norm back-projection `R_l^T / |R_l|^2`. The model is then
//! re-linearized at the new state and the symmetric step onto H2 is taken.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{log_projection, SinogramPair};
use crate::geometry::{ProjectionMatrix, Row};
use crate::spectra::SpectralChannel;

/// Default number of sweeps for the intermediate solution.
pub const DEFAULT_SWEEPS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpmtConfig {
    pub n_sweeps: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Step scale applied to every hyperplane projection.
    pub relaxation: f64,
    /// Clamp touched pixels at zero after each step.
    pub nonneg: bool,
    /// Rays whose step denominator is at most this are skipped.
    pub skip_eps: f64,
}

impl Default for OpmtConfig {
    fn default() -> Self {
        OpmtConfig {
            n_sweeps: DEFAULT_SWEEPS,
            lambda1: 1.0,
            lambda2: 1.0,
            relaxation: 1.0,
            nonneg: false,
            skip_eps: 1e-12,
        }
    }
}

impl OpmtConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relaxation > 0.0 && self.relaxation <= 2.0) {
            return Err(Error::invalid(format!(
                "relaxation must lie in (0, 2], got {}",
                self.relaxation
            )));
        }
        if !(self.skip_eps > 0.0 && self.skip_eps.is_finite()) {
            return Err(Error::invalid("skip_eps must be > 0"));
        }
        if !self.lambda1.is_finite() || !self.lambda2.is_finite() {
            return Err(Error::invalid("direction weights must be finite"));
        }
        Ok(())
    }

    /// E-ART parameters: `lambda1 = 1`, `lambda2 = 0`.
    pub fn eart(&self) -> Self {
        OpmtConfig {
            lambda1: 1.0,
            lambda2: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconState {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub sweep_count: usize,
}

impl ReconState {
    pub fn zeros(n_pixels: usize) -> Self {
        ReconState {
            f: vec![0.0; n_pixels],
            g: vec![0.0; n_pixels],
            sweep_count: 0,
        }
    }
}

/// First-order model of one ray under one spectrum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayLinearization {
    /// Predicted log-projection at the expansion point.
    pub p_hat: f64,
    pub q: f64,
    pub phi: f64,
    pub theta: f64,
    /// `phi / q`
    pub a1: f64,
    /// `theta / q`
    pub a2: f64,
}

impl RayLinearization {
    /// Right-hand side `b` of the hyperplane for measurement `p`, expanded at `(x1, x2)`.
    pub fn rhs(&self, p: f64, x1: f64, x2: f64) -> f64 {
        p - self.p_hat + self.a1 * x1 + self.a2 * x2
    }
}

/// Linearizes spectrum `ch` at ray values `(x1, x2) = (R_l f, R_l g)`.
///
/// All four energy sums share the factor `exp(-shift)` with `shift` the
/// smallest exponent, so the ratios `a1`, `a2` and `p_hat` never see
/// underflow; only the reported `q`, `phi`, `theta` carry it.
pub fn linearize(ch: &SpectralChannel, x1: f64, x2: f64) -> Result<RayLinearization> {
    let shift = ch
        .phi
        .iter()
        .zip(&ch.theta)
        .map(|(p, t)| p * x1 + t * x2)
        .fold(f64::INFINITY, f64::min);
    let mut q = 0.0;
    let mut phi = 0.0;
    let mut theta = 0.0;
    for ((w, p), t) in ch.weights.iter().zip(&ch.phi).zip(&ch.theta) {
        let e = w * (-(p * x1 + t * x2 - shift)).exp();
        q += e;
        phi += p * e;
        theta += t * e;
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::invalid(format!(
            "spectral sum q = {q} at ray values ({x1}, {x2})"
        )));
    }
    let scale = (-shift).exp();
    Ok(RayLinearization {
        p_hat: shift - q.ln(),
        q: q * scale,
        phi: phi * scale,
        theta: theta * scale,
        a1: phi / q,
        a2: theta / q,
    })
}

pub fn linearize_ray(state: &ReconState, row: &Row<'_>, ch: &SpectralChannel) -> Result<RayLinearization> {
    linearize(ch, row.dot(&state.f), row.dot(&state.g))
}

/// Projection direction for the hyperplane with normal `(a11, a12)`, mixed
/// with the direction along the other hyperplane (normal `(a21, a22)`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObliqueDirection {
    pub dir: [f64; 2],
    pub dir1: [f64; 2],
    /// `None` when the two hyperplanes are parallel.
    pub dir2: Option<[f64; 2]>,
}

impl ObliqueDirection {
    pub fn dir_dot(&self) -> Option<f64> {
        self.dir2.map(|d| self.dir1[0] * d[0] + self.dir1[1] * d[1])
    }
}

pub fn compute_direction(a11: f64, a12: f64, a21: f64, a22: f64, lambda1: f64, lambda2: f64) -> Result<ObliqueDirection> {
    let n1 = (a11 * a11 + a12 * a12).sqrt();
    if !(n1 > 0.0 && n1.is_finite()) {
        return Err(Error::invalid(format!("hyperplane normal ({a11}, {a12}) is degenerate")));
    }
    let dir1 = [a11 / n1, a12 / n1];
    let det = a11 * a22 - a12 * a21;
    let n2 = (a21 * a21 + a22 * a22).sqrt();
    let dir2 = if det > 0.0 && n2 > 0.0 {
        Some([a22 / n2, -a21 / n2])
    } else if det < 0.0 && n2 > 0.0 {
        Some([-a22 / n2, a21 / n2])
    } else {
        None
    };
    let dir = match dir2 {
        Some(d) => [lambda1 * dir1[0] + lambda2 * d[0], lambda1 * dir1[1] + lambda2 * d[1]],
        None => dir1,
    };
    Ok(ObliqueDirection { dir, dir1, dir2 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    H1,
    H2,
}

/// Diagnostic record of one hyperplane step, passed to sweep observers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayEvent {
    pub sweep: usize,
    pub ray: usize,
    pub stage: Stage,
    /// Hyperplane normal `(a_k1, a_k2)` at the expansion point.
    pub normal: [f64; 2],
    /// Hyperplane right-hand side `b_k`.
    pub rhs: f64,
    /// `(R_l f, R_l g)` recomputed from the images after the step.
    pub x_after: [f64; 2],
    /// `<dir1, dir2>`, `None` for parallel hyperplanes or E-ART steps.
    pub dir_dot: Option<f64>,
    pub skipped: bool,
}

/// Residual `|p_k - p_hat_k|_2` of the full sinogram after a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResidual {
    pub sweep: usize,
    pub residual_p1: f64,
    pub residual_p2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub state: ReconState,
    pub residuals: Vec<SweepResidual>,
}

/// Which update rule a sweep uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Opmt,
    Eart,
}

/// Read-only inputs shared by every ray update.
pub struct Problem<'a> {
    pub sino: &'a SinogramPair,
    pub matrix: &'a ProjectionMatrix,
    pub low: &'a SpectralChannel,
    pub high: &'a SpectralChannel,
}

impl<'a> Problem<'a> {
    pub fn new(
        sino: &'a SinogramPair,
        matrix: &'a ProjectionMatrix,
        low: &'a SpectralChannel,
        high: &'a SpectralChannel,
    ) -> Result<Self> {
        sino.validate()?;
        if sino.p1.len() != matrix.n_rows()
            || sino.n_s != matrix.n_views()
            || sino.n_d != matrix.n_detectors()
        {
            return Err(Error::GridMismatch(format!(
                "sinogram {}x{} vs matrix {}x{}",
                sino.n_s,
                sino.n_d,
                matrix.n_views(),
                matrix.n_detectors()
            )));
        }
        if sino.geometry_hash != matrix.key() {
            return Err(Error::GridMismatch(format!(
                "sinogram geometry {} vs matrix geometry {}",
                sino.geometry_hash,
                matrix.key()
            )));
        }
        Ok(Problem { sino, matrix, low, high })
    }

    /// Sinogram residuals of `state` against the measured data.
    pub fn residuals(&self, state: &ReconState) -> SweepResidual {
        let x1 = self.matrix.forward(&state.f);
        let x2 = self.matrix.forward(&state.g);
        let norm = |ch: &SpectralChannel, p: &[f64]| -> f64 {
            x1.iter()
                .zip(&x2)
                .zip(p)
                .map(|((&a, &b), &m)| (m - log_projection(ch, a, b)).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        SweepResidual {
            sweep: state.sweep_count,
            residual_p1: norm(self.low, &self.sino.p1),
            residual_p2: norm(self.high, &self.sino.p2),
        }
    }
}

/// Optional callback receiving every [`RayEvent`].
pub type Observer<'a, 'b> = Option<&'a mut (dyn FnMut(&RayEvent) + 'b)>;

/// Lifts the ray-space step `step * dir` to image space.
fn backproject(state: &mut ReconState, row: &Row<'_>, step: f64, dir: [f64; 2], nonneg: bool) {
    let scale = step / row.norm_sq;
    row.axpy(scale * dir[0], &mut state.f);
    row.axpy(scale * dir[1], &mut state.g);
    if nonneg {
        for &j in row.indices {
            let j = j as usize;
            state.f[j] = state.f[j].max(0.0);
            state.g[j] = state.g[j].max(0.0);
        }
    }
}

struct StepOutcome {
    normal: [f64; 2],
    rhs: f64,
    dir_dot: Option<f64>,
    skipped: bool,
}

/// Oblique step onto the hyperplane of `own`, mixing in the direction along
/// the hyperplane of `other`.
fn oblique_step(
    state: &mut ReconState,
    row: &Row<'_>,
    x: [f64; 2],
    own: &RayLinearization,
    other: &RayLinearization,
    measured: f64,
    cfg: &OpmtConfig,
) -> Result<StepOutcome> {
    let d = compute_direction(own.a1, own.a2, other.a1, other.a2, cfg.lambda1, cfg.lambda2)?;
    if let Some(dot) = d.dir_dot() {
        debug_assert!(dot >= -1e-12, "dir2 must make an acute angle with dir1");
    }
    let denom = own.a1 * d.dir[0] + own.a2 * d.dir[1];
    let outcome = StepOutcome {
        normal: [own.a1, own.a2],
        rhs: own.rhs(measured, x[0], x[1]),
        dir_dot: d.dir_dot(),
        skipped: denom.abs() <= cfg.skip_eps,
    };
    if !outcome.skipped {
        let step = cfg.relaxation * (measured - own.p_hat) / denom;
        backproject(state, row, step, d.dir, cfg.nonneg);
    }
    Ok(outcome)
}

/// Orthogonal (E-ART) step onto the hyperplane of `own`.
fn orthogonal_step(
    state: &mut ReconState,
    row: &Row<'_>,
    x: [f64; 2],
    own: &RayLinearization,
    measured: f64,
    cfg: &OpmtConfig,
) -> Result<StepOutcome> {
    let norm = (own.a1 * own.a1 + own.a2 * own.a2).sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::invalid("degenerate hyperplane normal"));
    }
    let unit = [own.a1 / norm, own.a2 / norm];
    let denom = own.a1 * unit[0] + own.a2 * unit[1];
    let outcome = StepOutcome {
        normal: [own.a1, own.a2],
        rhs: own.rhs(measured, x[0], x[1]),
        dir_dot: None,
        skipped: denom.abs() <= cfg.skip_eps,
    };
    if !outcome.skipped {
        let step = cfg.relaxation * (measured - own.p_hat) / denom;
        backproject(state, row, step, unit, cfg.nonneg);
    }
    Ok(outcome)
}

/// One full update of ray `l`: the H1 step, re-linearization, then the H2 step.
pub fn ray_update<'b>(
    state: &mut ReconState,
    problem: &Problem<'_>,
    l: usize,
    cfg: &OpmtConfig,
    method: Method,
    mut observer: Observer<'_, 'b>,
) -> Result<()> {
    let row = problem.matrix.row(l);
    if row.is_empty() || row.norm_sq <= 0.0 {
        return Ok(());
    }
    let sweep = state.sweep_count;
    let numerical = |message: String| Error::Numerical { sweep, ray: l, message };
    let wrap = |e: Error| numerical(e.to_string());
    let p1 = problem.sino.p1[l];
    let p2 = problem.sino.p2[l];

    let x = [row.dot(&state.f), row.dot(&state.g)];
    let lin1 = linearize(problem.low, x[0], x[1]).map_err(wrap)?;
    let lin2 = linearize(problem.high, x[0], x[1]).map_err(wrap)?;
    let h1 = match method {
        Method::Opmt => oblique_step(state, &row, x, &lin1, &lin2, p1, cfg),
        Method::Eart => orthogonal_step(state, &row, x, &lin1, p1, cfg),
    }
    .map_err(wrap)?;

    let x = [row.dot(&state.f), row.dot(&state.g)];
    if !(x[0].is_finite() && x[1].is_finite()) {
        return Err(numerical("non-finite ray values after the H1 step".into()));
    }
    if let Some(obs) = observer.as_deref_mut() {
        obs(&RayEvent {
            sweep,
            ray: l,
            stage: Stage::H1,
            normal: h1.normal,
            rhs: h1.rhs,
            x_after: x,
            dir_dot: h1.dir_dot,
            skipped: h1.skipped,
        });
    }

    let lin1 = linearize(problem.low, x[0], x[1]).map_err(wrap)?;
    let lin2 = linearize(problem.high, x[0], x[1]).map_err(wrap)?;
    let h2 = match method {
        Method::Opmt => oblique_step(state, &row, x, &lin2, &lin1, p2, cfg),
        Method::Eart => orthogonal_step(state, &row, x, &lin2, p2, cfg),
    }
    .map_err(wrap)?;

    if let Some(obs) = observer {
        let x = [row.dot(&state.f), row.dot(&state.g)];
        obs(&RayEvent {
            sweep,
            ray: l,
            stage: Stage::H2,
            normal: h2.normal,
            rhs: h2.rhs,
            x_after: x,
            dir_dot: h2.dir_dot,
            skipped: h2.skipped,
        });
    }
    Ok(())
}

/// One pass over all rays in angle-major order.
pub fn sweep<'b>(
    state: &mut ReconState,
    problem: &Problem<'_>,
    cfg: &OpmtConfig,
    method: Method,
    mut observer: Observer<'_, 'b>,
) -> Result<()> {
    for l in 0..problem.matrix.n_rows() {
        ray_update(state, problem, l, cfg, method, observer.as_deref_mut())?;
    }
    if state.f.iter().chain(&state.g).any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            sweep: state.sweep_count,
            ray: problem.matrix.n_rows(),
            message: "non-finite image after sweep".into(),
        });
    }
    state.sweep_count += 1;
    Ok(())
}

/// Runs `cfg.n_sweeps` sweeps from the zero image, recording the sinogram
/// residual after every sweep.
pub fn reconstruct<'b>(
    problem: &Problem<'_>,
    cfg: &OpmtConfig,
    method: Method,
    mut observer: Observer<'_, 'b>,
) -> Result<Reconstruction> {
    cfg.validate()?;
    let mut state = ReconState::zeros(problem.matrix.n_cols());
    let mut residuals = Vec::with_capacity(cfg.n_sweeps);
    for _ in 0..cfg.n_sweeps {
        sweep(&mut state, problem, cfg, method, observer.as_deref_mut())?;
        residuals.push(problem.residuals(&state));
    }
    Ok(Reconstruction { state, residuals })
}

/// OPMT reconstruction.
pub fn run(
    sino: &SinogramPair,
    matrix: &ProjectionMatrix,
    low: &SpectralChannel,
    high: &SpectralChannel,
    cfg: &OpmtConfig,
) -> Result<Reconstruction> {
    reconstruct(&Problem::new(sino, matrix, low, high)?, cfg, Method::Opmt, None)
}

/// E-ART reconstruction: sequential orthogonal projections onto H1 then H2.
pub fn run_eart(
    sino: &SinogramPair,
    matrix: &ProjectionMatrix,
    low: &SpectralChannel,
    high: &SpectralChannel,
    cfg: &OpmtConfig,
) -> Result<Reconstruction> {
    reconstruct(&Problem::new(sino, matrix, low, high)?, &cfg.eart(), Method::Eart, None)
}

/// Writes per-sweep residuals as `sweep,residual_p1,residual_p2`.
pub fn residuals_csv(residuals: &[SweepResidual]) -> String {
    let mut out = String::from("sweep,residual_p1,residual_p2\n");
    for r in residuals {
        out.push_str(&format!("{},{:e},{:e}\n", r.sweep, r.residual_p1, r.residual_p2));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectra::bundled;

    #[test]
    fn zero_state_linearization() {
        let ch = SpectralChannel::prepare(&bundled::low(), &bundled::materials()).unwrap();
        let lin = linearize(&ch, 0.0, 0.0).unwrap();
        let (mp, mt) = ch.mean_attenuation();
        assert!(lin.p_hat.abs() < 1e-12);
        assert!((lin.q - 1.0).abs() < 1e-12);
        assert!((lin.a1 - mp).abs() < 1e-12 * mp);
        assert!((lin.a2 - mt).abs() < 1e-12 * mt);
    }

    #[test]
    fn monochromatic_linearization_is_state_independent() {
        let ch = SpectralChannel::monochromatic(0.37, 0.21);
        for (x1, x2) in [(0.0, 0.0), (3.0, 1.0), (40.0, 80.0)] {
            let lin = linearize(&ch, x1, x2).unwrap();
            assert_eq!(lin.a1, 0.37);
            assert_eq!(lin.a2, 0.21);
        }
    }

    #[test]
    fn direction_identity_normals() {
        let d = compute_direction(1.0, 0.0, 0.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(d.dir1, [1.0, 0.0]);
        assert_eq!(d.dir2, Some([1.0, 0.0]));
        assert_eq!(d.dir, [2.0, 0.0]);
    }

    #[test]
    fn direction_negative_determinant() {
        let d = compute_direction(1.0, 1.0, 1.0, -1.0, 1.0, 1.0).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let close = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).abs() < 1e-15 && (a[1] - b[1]).abs() < 1e-15;
        assert!(close(d.dir1, [s, s]));
        assert!(close(d.dir2.unwrap(), [s, s]));
        assert!(close(d.dir, [2f64.sqrt(), 2f64.sqrt()]));
    }

    #[test]
    fn direction_without_mixing_is_normal() {
        for a in [[0.3, 0.2, 0.25, 0.18], [1.0, -2.0, 0.5, 3.0], [2.0, 1.0, 4.0, 2.0]] {
            let d = compute_direction(a[0], a[1], a[2], a[3], 1.0, 0.0).unwrap();
            assert_eq!(d.dir, d.dir1);
        }
        // parallel hyperplanes fall back to dir1
        let d = compute_direction(2.0, 1.0, 4.0, 2.0, 1.0, 1.0).unwrap();
        assert!(d.dir2.is_none());
        assert!(compute_direction(0.0, 0.0, 1.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn config_validation_and_json() {
        let cfg: OpmtConfig = serde_json::from_str(r#"{"n_sweeps": 3, "lambda2": 0.5}"#).unwrap();
        assert_eq!(cfg.n_sweeps, 3);
        assert_eq!(cfg.lambda1, 1.0);
        assert!(serde_json::from_str::<OpmtConfig>(r#"{"sweeps": 3}"#).is_err());
        assert!(OpmtConfig { relaxation: 2.5, ..Default::default() }.validate().is_err());
        assert!(OpmtConfig { skip_eps: 0.0, ..Default::default() }.validate().is_err());
        assert_eq!(OpmtConfig::default().n_sweeps, 10);
    }

    #[test]
    fn residual_csv_layout() {
        let csv = residuals_csv(&[SweepResidual {
            sweep: 1,
            residual_p1: 0.5,
            residual_p2: 0.25,
        }]);
        assert_eq!(csv, "sweep,residual_p1,residual_p2\n1,5e-1,2.5e-1\n");
    }
}
