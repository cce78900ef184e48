//! Composite-loss fitting of a lattice NURBS surface to elevation rasters.
//!
//! The loss is
//!
//! ```text
//! L = L_road + λ_t · L_terrain + λ_reg · L_reg
//! L_road    = 1/(HW) Σ |M (DSM − S)|
//! L_terrain = 1/(HW) Σ |(1 − M) (DTM − S)|
//! L_reg     = 1/N    Σ_ij [max_l (z_ij − z_l) − min_l (z_ij − z_l)]²   over the 8-neighborhood l
//! ```
//!
//! where `S` is the surface sampled at cell centers, `M` the cleaned road mask
//! and `N` the number of control points. Only control elevations and weights
//! are optimized; weights are parameterized as `w = exp(θ)` so they stay
//! positive under any update.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridGeometry, Mask, Raster};
use crate::nurbs::{NurbsSurface, RasterBasis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_t: f64,
    pub lambda_reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_t: 1.0,
            lambda_reg: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_t >= 0.0) || !(self.lambda_reg >= 0.0) {
            return Err(Error::InvalidParameter("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Iterations without sufficient improvement before stopping.
    pub early_stop_patience: usize,
    /// Required improvement, as a fraction of the best loss so far.
    pub early_stop_min_delta: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_iters: 200,
            early_stop_patience: 10,
            early_stop_min_delta: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be > 0");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("ADAM betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if !(self.early_stop_min_delta >= 0.0) {
            return bad("early_stop_min_delta must be >= 0");
        }
        Ok(())
    }
}

/// Control lattice layout for a fresh surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurfaceParams {
    pub control_u: usize,
    pub control_v: usize,
    pub degree_u: usize,
    pub degree_v: usize,
}

impl Default for SurfaceParams {
    fn default() -> Self {
        Self {
            control_u: 35,
            control_v: 35,
            degree_u: 3,
            degree_v: 3,
        }
    }
}

/// Loss value with its gradient with respect to each raster cell of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellLoss {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Loss value with its gradient with respect to each control elevation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlLoss {
    pub value: f64,
    pub grad_z: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub road: f64,
    pub terrain: f64,
    pub reg: f64,
}

impl LossBreakdown {
    fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.road.is_finite()
            && self.terrain.is_finite()
            && self.reg.is_finite()
    }
}

/// Loss and full gradient with respect to control elevations and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEvaluation {
    pub loss: LossBreakdown,
    pub grad_z: Vec<f64>,
    pub grad_weights: Vec<f64>,
}

#[inline]
fn sign(r: f64) -> f64 {
    if r > 0.0 {
        1.0
    } else if r < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn masked_l1(
    surface_raster: &Raster,
    target: &Raster,
    mask: &Mask,
    on_road: bool,
) -> Result<CellLoss> {
    let g = surface_raster.geometry();
    g.require_same_shape(target.geometry(), "surface raster vs target")?;
    g.require_same_shape(mask.geometry(), "surface raster vs mask")?;
    let scale = 1.0 / g.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; g.len()];
    for (k, ((&s, &t), &m)) in surface_raster
        .values()
        .iter()
        .zip(target.values())
        .zip(mask.bits())
        .enumerate()
    {
        if m != on_road || t.is_nan() || s.is_nan() {
            continue;
        }
        let r = t - s;
        value += r.abs();
        grad[k] = -sign(r) * scale;
    }
    Ok(CellLoss {
        value: value * scale,
        grad,
    })
}

/// Mean absolute DSM residual over road cells (normalized by all `H·W` cells).
pub fn loss_road(surface_raster: &Raster, dsm: &Raster, mask_plus: &Mask) -> Result<CellLoss> {
    masked_l1(surface_raster, dsm, mask_plus, true)
}

/// Mean absolute DTM residual over non-road cells (normalized by all `H·W` cells).
pub fn loss_terrain(surface_raster: &Raster, dtm: &Raster, mask_plus: &Mask) -> Result<CellLoss> {
    masked_l1(surface_raster, dtm, mask_plus, false)
}

/// Squared range of `z_ij − z_l` over the in-grid 8-neighbors `l` of every
/// control point, averaged over control points. The subgradient goes to the
/// first argmax/argmin in row-major neighbor order.
pub fn loss_reg(surface: &NurbsSurface) -> ControlLoss {
    let (nu, nv) = surface.counts();
    let z = surface.control_z();
    let mut value = 0.0;
    let mut grad_z = vec![0.0; z.len()];
    let norm = 1.0 / z.len() as f64;
    for i in 0..nu {
        for j in 0..nv {
            let c = i * nv + j;
            let mut hi: Option<(f64, usize)> = None;
            let mut lo: Option<(f64, usize)> = None;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a < 0 || b < 0 || a >= nu as i64 || b >= nv as i64 {
                        continue;
                    }
                    let l = a as usize * nv + b as usize;
                    let d = z[c] - z[l];
                    if hi.is_none_or(|(v, _)| d > v) {
                        hi = Some((d, l));
                    }
                    if lo.is_none_or(|(v, _)| d < v) {
                        lo = Some((d, l));
                    }
                }
            }
            let (Some((dmax, lmax)), Some((dmin, lmin))) = (hi, lo) else {
                continue;
            };
            let range = dmax - dmin;
            value += range * range;
            // d(range)/dz_c = 1 - 1 = 0; d/dz_lmax = -1; d/dz_lmin = +1.
            let g = 2.0 * range * norm;
            grad_z[lmax] -= g;
            grad_z[lmin] += g;
        }
    }
    ControlLoss {
        value: value * norm,
        grad_z,
    }
}

/// Precomputed pieces of one fitting problem: the rasters, the cleaned mask
/// and the per-row/column basis functions of the surface's lattice.
pub struct FitProblem<'a> {
    dsm: &'a Raster,
    dtm: &'a Raster,
    mask: &'a Mask,
    weights: LossWeights,
    basis: RasterBasis,
}

impl<'a> FitProblem<'a> {
    pub fn new(
        surface: &NurbsSurface,
        dsm: &'a Raster,
        dtm: &'a Raster,
        mask: &'a Mask,
        weights: LossWeights,
    ) -> Result<Self> {
        weights.validate()?;
        let g = dsm.geometry();
        g.require_same_shape(dtm.geometry(), "DSM vs DTM")?;
        g.require_same_shape(mask.geometry(), "DSM vs mask")?;
        let basis = RasterBasis::new(surface, g)?;
        Ok(Self {
            dsm,
            dtm,
            mask,
            weights,
            basis,
        })
    }

    pub fn evaluate(&self, surface: &NurbsSurface) -> LossEvaluation {
        let g = self.dsm.geometry();
        let n = surface.len();
        let scale = 1.0 / g.len() as f64;
        let mut grad_z = vec![0.0; n];
        let mut grad_weights = vec![0.0; n];
        let (mut road, mut terrain) = (0.0, 0.0);
        for j in 0..g.height {
            let bv = &self.basis.rows[j];
            for i in 0..g.width {
                let k = g.index(i, j);
                let on_road = self.mask.bits()[k];
                let (target, lambda) = if on_road {
                    (self.dsm.values()[k], 1.0)
                } else {
                    (self.dtm.values()[k], self.weights.lambda_t)
                };
                if target.is_nan() {
                    continue;
                }
                let bu = &self.basis.columns[i];
                let grad = surface.gradients_with_basis(bu, bv);
                let r = target - grad.z;
                if on_road {
                    road += r.abs();
                } else {
                    terrain += r.abs();
                }
                let gc = -sign(r) * scale * lambda;
                if gc == 0.0 {
                    continue;
                }
                for (ci, cj, dz, dw) in grad.iter() {
                    let c = surface.control_index(ci, cj);
                    grad_z[c] += gc * dz;
                    grad_weights[c] += gc * dw;
                }
            }
        }
        let road = road * scale;
        let terrain = terrain * scale;
        let reg = if self.weights.lambda_reg > 0.0 {
            let r = loss_reg(surface);
            for (acc, gz) in grad_z.iter_mut().zip(&r.grad_z) {
                *acc += self.weights.lambda_reg * gz;
            }
            r.value
        } else {
            0.0
        };
        LossEvaluation {
            loss: LossBreakdown {
                total: road + self.weights.lambda_t * terrain + self.weights.lambda_reg * reg,
                road,
                terrain,
                reg,
            },
            grad_z,
            grad_weights,
        }
    }
}

pub fn total_loss(
    surface: &NurbsSurface,
    dsm: &Raster,
    dtm: &Raster,
    mask_plus: &Mask,
    weights: &LossWeights,
) -> Result<LossEvaluation> {
    Ok(FitProblem::new(surface, dsm, dtm, mask_plus, *weights)?.evaluate(surface))
}

/// Fresh lattice surface over the DSM extent. Each control elevation is the
/// median of the fit targets nearest to it (DSM on road cells, DTM
/// elsewhere), falling back to the global DTM median; weights start at 1.
pub fn initial_surface(
    dsm: &Raster,
    dtm: &Raster,
    mask_plus: &Mask,
    params: &SurfaceParams,
) -> Result<NurbsSurface> {
    let g: &GridGeometry = dsm.geometry();
    g.require_same_shape(dtm.geometry(), "DSM vs DTM")?;
    g.require_same_shape(mask_plus.geometry(), "DSM vs mask")?;
    let ext = g.extent();
    let (nu, nv) = (params.control_u, params.control_v);
    if nu < 2 || nv < 2 {
        return Err(Error::InvalidParameter(
            "control grid must be at least 2x2".into(),
        ));
    }
    let (dx, dy) = (
        ext.width() / (nu - 1) as f64,
        ext.height() / (nv - 1) as f64,
    );
    let mut buckets: Vec<Vec<f64>> = vec![Vec::new(); nu * nv];
    for j in 0..g.height {
        for i in 0..g.width {
            let target = if mask_plus.get(i, j) {
                dsm.get(i, j)
            } else {
                dtm.get(i, j)
            };
            if let Some(z) = target {
                let (x, y) = g.cell_to_world(i, j);
                let a = (((x - ext.min_x) / dx).round() as usize).min(nu - 1);
                let b = (((y - ext.min_y) / dy).round() as usize).min(nv - 1);
                buckets[a * nv + b].push(z);
            }
        }
    }
    let mut all_dtm: Vec<f64> = dtm
        .values()
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .collect();
    let fallback = median(&mut all_dtm).unwrap_or(0.0);
    let z: Vec<f64> = buckets
        .iter_mut()
        .map(|b| median(b).unwrap_or(fallback))
        .collect();
    NurbsSurface::frozen_lattice(ext, nu, nv, params.degree_u, params.degree_v, |i, j| {
        z[i * nv + j]
    })
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIters,
    EarlyStop,
    NonFinite,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StopReason::MaxIters => "max_iters",
            StopReason::EarlyStop => "early_stop",
            StopReason::NonFinite => "non_finite",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Loss of the starting surface.
    pub initial: LossBreakdown,
    /// Loss after each update.
    pub history: Vec<LossBreakdown>,
    /// Updates performed.
    pub iterations: usize,
    /// Update after which the returned surface was taken (0 = the start).
    pub best_iteration: usize,
    pub best: LossBreakdown,
    pub stop_reason: StopReason,
}

impl FitReport {
    /// CSV trace: `iteration,total,road,terrain,reg`, row 0 being the start.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,total,road,terrain,reg\n");
        for (k, l) in std::iter::once(&self.initial)
            .chain(&self.history)
            .enumerate()
        {
            let _ = writeln!(s, "{k},{},{},{},{}", l.total, l.road, l.terrain, l.reg);
        }
        s
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(n: usize, cfg: &FitConfig) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
        }
    }
}

/// ADAM descent on control elevations and log-weights. Returns the lowest
/// loss iterate seen (possibly the input) and the loss trace.
pub fn fit(
    surface: &NurbsSurface,
    dsm: &Raster,
    dtm: &Raster,
    mask_plus: &Mask,
    weights: &LossWeights,
    config: &FitConfig,
) -> Result<(NurbsSurface, FitReport)> {
    config.validate()?;
    let problem = FitProblem::new(surface, dsm, dtm, mask_plus, *weights)?;
    let n = surface.len();
    let mut current = surface.clone();
    let mut params: Vec<f64> = current.control_z();
    params.extend(current.weights().iter().map(|w| w.ln()));
    let mut adam = Adam::new(2 * n, config);

    let mut eval = problem.evaluate(&current);
    let mut report = FitReport {
        initial: eval.loss,
        history: Vec::new(),
        iterations: 0,
        best_iteration: 0,
        best: eval.loss,
        stop_reason: StopReason::MaxIters,
    };
    if !eval.loss.is_finite() {
        report.stop_reason = StopReason::NonFinite;
        return Err(Error::NonFiniteLoss {
            iteration: 0,
            report: Box::new(report),
        });
    }
    let mut best = current.clone();
    let mut reference = eval.loss.total;
    let mut stale = 0usize;
    let mut grads = vec![0.0; 2 * n];

    for iter in 1..=config.max_iters {
        grads[..n].copy_from_slice(&eval.grad_z);
        for (k, g) in grads[n..].iter_mut().enumerate() {
            *g = eval.grad_weights[k] * current.weights()[k];
        }
        adam.update(&mut params, &grads);
        current.set_control_z_all(&params[..n]);
        let w: Vec<f64> = params[n..].iter().map(|t| t.exp()).collect();
        if current.set_weights(&w).is_err() {
            report.iterations = iter;
            report.stop_reason = StopReason::NonFinite;
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                report: Box::new(report),
            });
        }
        eval = problem.evaluate(&current);
        report.iterations = iter;
        report.history.push(eval.loss);
        if !eval.loss.is_finite() {
            report.stop_reason = StopReason::NonFinite;
            return Err(Error::NonFiniteLoss {
                iteration: iter,
                report: Box::new(report),
            });
        }
        if eval.loss.total < report.best.total {
            report.best = eval.loss;
            report.best_iteration = iter;
            best.clone_from(&current);
        }
        if eval.loss.total < reference * (1.0 - config.early_stop_min_delta) {
            reference = eval.loss.total;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.early_stop_patience {
                report.stop_reason = StopReason::EarlyStop;
                break;
            }
        }
    }
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Extent;
    use crate::nurbs::rasterize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom(w: usize, h: usize) -> GridGeometry {
        GridGeometry::from_corner(w, h, 1.0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn road_loss_cases() {
        let g = geom(10, 10);
        let dsm = Raster::from_fn(g, |i, j| Some((i + j) as f64)).unwrap();
        let all = Mask::filled(g, true);
        assert_eq!(loss_road(&dsm, &dsm, &all).unwrap().value, 0.0);

        let flat = Raster::filled(g, 0.0);
        let mut target = flat.clone();
        target.set(3, 4, Some(2.0));
        let mut one = Mask::filled(g, false);
        one.set(3, 4, true);
        let l = loss_road(&flat, &target, &one).unwrap();
        assert!((l.value - 0.02).abs() < 1e-15);
        assert_eq!(l.grad[g.index(3, 4)], -0.01);
        // Zero residual has zero subgradient.
        assert!(loss_road(&flat, &flat, &one)
            .unwrap()
            .grad
            .iter()
            .all(|&v| v == 0.0));
        assert!(loss_road(&flat, &Raster::filled(geom(3, 3), 0.0), &one).is_err());
    }

    #[test]
    fn terrain_loss_cases() {
        let g = geom(6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = Raster::from_fn(g, |_, _| Some(rng.gen_range(-1.0..1.0))).unwrap();
        let dtm = Raster::from_fn(g, |_, _| Some(rng.gen_range(-1.0..1.0))).unwrap();
        assert_eq!(
            loss_terrain(&s, &dtm, &Mask::filled(g, true))
                .unwrap()
                .value,
            0.0
        );
        assert_eq!(
            loss_terrain(&dtm, &dtm, &Mask::filled(g, false))
                .unwrap()
                .value,
            0.0
        );
    }

    #[test]
    fn l1_losses_match_naive_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let (w, h) = (rng.gen_range(2..12), rng.gen_range(2..12));
            let g = geom(w, h);
            let s = Raster::from_fn(g, |_, _| Some(rng.gen_range(-5.0..5.0))).unwrap();
            let t = Raster::from_fn(g, |_, _| {
                rng.gen_bool(0.9).then(|| rng.gen_range(-5.0..5.0))
            })
            .unwrap();
            let m = Mask::from_fn(g, |_, _| rng.gen_bool(0.5));
            let (mut road, mut terr) = (0.0, 0.0);
            for j in 0..h {
                for i in 0..w {
                    let Some(tv) = t.get(i, j) else { continue };
                    let mij = if m.get(i, j) { 1.0 } else { 0.0 };
                    road += (mij * (tv - s.get(i, j).unwrap())).abs();
                    terr += ((1.0 - mij) * (tv - s.get(i, j).unwrap())).abs();
                }
            }
            let hw = (w * h) as f64;
            assert!((loss_road(&s, &t, &m).unwrap().value - road / hw).abs() < 1e-12);
            assert!((loss_terrain(&s, &t, &m).unwrap().value - terr / hw).abs() < 1e-12);
        }
    }

    fn unit_extent() -> Extent {
        Extent {
            min_x: 0.0,
            min_y: 0.0,
            max_x: 1.0,
            max_y: 1.0,
        }
    }

    #[test]
    fn reg_loss_cases() {
        let flat = NurbsSurface::frozen_lattice(unit_extent(), 4, 5, 3, 3, |_, _| 3.0).unwrap();
        assert_eq!(loss_reg(&flat).value, 0.0);

        // 2x2 lattice, z = (0, 0, 0, h) with the raised point at (1, 1).
        // Neighbor diffs: (0,0): {0,0,-h} -> range h; (0,1): {0,0,-h} -> h;
        // (1,0): {0,0,-h} -> h; (1,1): {h,h,h} -> 0. Sum 3h², mean 3h²/4.
        let h = 1.7;
        let s = NurbsSurface::frozen_lattice(unit_extent(), 2, 2, 1, 1, |i, j| {
            if i == 1 && j == 1 {
                h
            } else {
                0.0
            }
        })
        .unwrap();
        assert!((loss_reg(&s).value - 0.75 * h * h).abs() < 1e-14);
    }

    #[test]
    fn reg_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = NurbsSurface::frozen_lattice(unit_extent(), 5, 4, 3, 3, |_, _| {
            rng.gen_range(-2.0..2.0)
        })
        .unwrap();
        let r = loss_reg(&s);
        let h = 1e-6;
        for i in 0..5 {
            for j in 0..4 {
                let z0 = s.control(i, j)[2];
                let (mut p, mut m) = (s.clone(), s.clone());
                p.set_control_z(i, j, z0 + h);
                m.set_control_z(i, j, z0 - h);
                let fd = (loss_reg(&p).value - loss_reg(&m).value) / (2.0 * h);
                let an = r.grad_z[s.control_index(i, j)];
                assert!(
                    (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "({i},{j}) {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn total_loss_reduces_to_road_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = geom(12, 9);
        let s =
            NurbsSurface::frozen_lattice(g.extent(), 5, 5, 3, 3, |_, _| rng.gen_range(-1.0..1.0))
                .unwrap();
        let dsm = Raster::from_fn(g, |_, _| Some(rng.gen_range(-1.0..1.0))).unwrap();
        let dtm = Raster::from_fn(g, |_, _| Some(rng.gen_range(-1.0..1.0))).unwrap();
        let m = Mask::from_fn(g, |i, _| i < 6);
        let w = LossWeights {
            lambda_t: 0.0,
            lambda_reg: 0.0,
        };
        let total = total_loss(&s, &dsm, &dtm, &m, &w).unwrap();
        let road = loss_road(&rasterize(&s, &g).unwrap(), &dsm, &m).unwrap();
        assert!((total.loss.total - road.value).abs() < 1e-14);
    }

    #[test]
    fn planted_surface_has_zero_data_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = geom(20, 20);
        let mut s =
            NurbsSurface::frozen_lattice(g.extent(), 6, 6, 3, 3, |_, _| rng.gen_range(-2.0..2.0))
                .unwrap();
        let w: Vec<f64> = (0..36).map(|_| rng.gen_range(0.5..2.0)).collect();
        s.set_weights(&w).unwrap();
        let r = rasterize(&s, &g).unwrap();
        let m = Mask::from_fn(g, |i, j| (i + j) % 3 == 0);
        let weights = LossWeights {
            lambda_t: 1.0,
            lambda_reg: 0.0,
        };
        assert!(total_loss(&s, &r, &r, &m, &weights).unwrap().loss.total < 1e-8);
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = geom(20, 20);
        let mut s =
            NurbsSurface::frozen_lattice(g.extent(), 6, 6, 3, 3, |_, _| rng.gen_range(-2.0..2.0))
                .unwrap();
        let w: Vec<f64> = (0..36).map(|_| rng.gen_range(0.5..2.0)).collect();
        s.set_weights(&w).unwrap();
        let dsm = Raster::from_fn(g, |_, _| Some(rng.gen_range(-3.0..3.0))).unwrap();
        let dtm = Raster::from_fn(g, |_, _| Some(rng.gen_range(-3.0..3.0))).unwrap();
        let m = Mask::from_fn(g, |_, _| rng.gen_bool(0.4));
        let weights = LossWeights {
            lambda_t: 0.7,
            lambda_reg: 0.3,
        };
        let problem = FitProblem::new(&s, &dsm, &dtm, &m, weights).unwrap();
        let an = problem.evaluate(&s);
        let h = 1e-6;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..6 {
            for j in 0..6 {
                let c = s.control_index(i, j);
                let z0 = s.control(i, j)[2];
                let (mut p, mut q) = (s.clone(), s.clone());
                p.set_control_z(i, j, z0 + h);
                q.set_control_z(i, j, z0 - h);
                let fd =
                    (problem.evaluate(&p).loss.total - problem.evaluate(&q).loss.total) / (2.0 * h);
                num += (fd - an.grad_z[c]).powi(2);
                den += fd * fd;

                let mut wp = w.clone();
                let mut wq = w.clone();
                wp[c] += h;
                wq[c] -= h;
                p = s.clone();
                q = s.clone();
                p.set_weights(&wp).unwrap();
                q.set_weights(&wq).unwrap();
                let fd =
                    (problem.evaluate(&p).loss.total - problem.evaluate(&q).loss.total) / (2.0 * h);
                num += (fd - an.grad_weights[c]).powi(2);
                den += fd * fd;
            }
        }
        let rel = (num / den).sqrt();
        assert!(rel < 1e-4, "relative gradient error {rel}");
    }

    #[test]
    fn fits_gaussian_hill_from_flat_start() {
        // Road-scale terrain: 100 m tile, 3 m hill with a 25 m spread, a
        // straight clean road band, default weights and optimizer settings.
        let g = geom(100, 100);
        let hill = Raster::from_fn(g, |i, j| {
            let (x, y) = g.cell_to_world(i, j);
            let r2 = (x - 50.0).powi(2) + (y - 45.0).powi(2);
            Some(3.0 * (-r2 / (2.0 * 25.0 * 25.0)).exp())
        })
        .unwrap();
        let m = Mask::from_fn(g, |_, j| (40..58).contains(&j));
        let s = NurbsSurface::frozen_lattice(g.extent(), 35, 35, 3, 3, |_, _| 0.0).unwrap();
        let (fitted, report) = fit(
            &s,
            &hill,
            &hill,
            &m,
            &LossWeights::default(),
            &FitConfig::default(),
        )
        .unwrap();
        let before = loss_road(&rasterize(&s, &g).unwrap(), &hill, &m)
            .unwrap()
            .value;
        let after = loss_road(&rasterize(&fitted, &g).unwrap(), &hill, &m)
            .unwrap()
            .value;
        assert!(
            after <= 0.1 * before,
            "road L1 {before} -> {after} ({:?})",
            report.stop_reason
        );
        assert!(report.history.len() <= 200);
    }

    #[test]
    fn single_iteration_budget() {
        let g = geom(10, 10);
        let dsm = Raster::from_fn(g, |i, _| Some(i as f64)).unwrap();
        let m = Mask::filled(g, true);
        let s = NurbsSurface::frozen_lattice(g.extent(), 4, 4, 3, 3, |_, _| 0.0).unwrap();
        let cfg = FitConfig {
            max_iters: 1,
            ..Default::default()
        };
        let (fitted, report) = fit(&s, &dsm, &dsm, &m, &LossWeights::default(), &cfg).unwrap();
        assert_eq!(report.iterations, 1);
        assert_eq!(report.history.len(), 1);
        assert_eq!(report.stop_reason, StopReason::MaxIters);
        assert!(report.best.total <= report.initial.total);
        assert_ne!(fitted, s);
    }

    #[test]
    fn flat_data_is_a_fixed_point() {
        let g = geom(12, 12);
        let flat = Raster::filled(g, 7.0);
        let m = Mask::from_fn(g, |i, _| i > 5);
        let s = initial_surface(
            &flat,
            &flat,
            &m,
            &SurfaceParams {
                control_u: 5,
                control_v: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let (_, report) = fit(
            &s,
            &flat,
            &flat,
            &m,
            &LossWeights::default(),
            &FitConfig::default(),
        )
        .unwrap();
        assert_eq!(report.stop_reason, StopReason::EarlyStop);
        assert_eq!(report.iterations, 10);
        assert!(report.best.total < 1e-12);
    }

    #[test]
    fn non_finite_data_aborts() {
        let g = geom(6, 6);
        let dsm = Raster::filled(g, 1e308);
        let dtm = Raster::filled(g, -1e308);
        let m = Mask::from_fn(g, |i, _| i < 3);
        let s = NurbsSurface::frozen_lattice(g.extent(), 4, 4, 3, 3, |_, _| 0.0).unwrap();
        match fit(
            &s,
            &dsm,
            &dtm,
            &m,
            &LossWeights::default(),
            &FitConfig::default(),
        ) {
            Err(Error::NonFiniteLoss { iteration, .. }) => assert_eq!(iteration, 0),
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn initial_surface_uses_footprint_medians() {
        let g = geom(8, 8);
        let dsm = Raster::from_fn(g, |i, _| (i < 4).then_some(2.0)).unwrap();
        let dtm = Raster::from_fn(g, |i, _| (i < 6).then_some(-1.0)).unwrap();
        let road = Mask::filled(g, true);
        let params = SurfaceParams {
            control_u: 3,
            control_v: 3,
            degree_u: 2,
            degree_v: 2,
        };
        let s = initial_surface(&dsm, &dtm, &road, &params).unwrap();
        assert_eq!(s.control(0, 0)[2], 2.0);
        // Lattice node at x = 8 has no valid road cells nearby: DTM median.
        assert_eq!(s.control(2, 1)[2], -1.0);
        assert!(s.weights().iter().all(|&w| w == 1.0));

        // Off the road the DTM is the target.
        let s = initial_surface(&dsm, &dtm, &Mask::filled(g, false), &params).unwrap();
        assert_eq!(s.control(0, 0)[2], -1.0);
    }

    #[test]
    fn report_csv_has_initial_row() {
        let g = geom(6, 6);
        let dsm = Raster::from_fn(g, |i, j| Some((i * j) as f64 * 0.1)).unwrap();
        let m = Mask::filled(g, true);
        let s = NurbsSurface::frozen_lattice(g.extent(), 4, 4, 3, 3, |_, _| 0.0).unwrap();
        let cfg = FitConfig {
            max_iters: 3,
            ..Default::default()
        };
        let (_, report) = fit(&s, &dsm, &dsm, &m, &LossWeights::default(), &cfg).unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("iteration,total,road,terrain,reg\n0,"));
        assert_eq!(csv.lines().count(), 1 + 1 + report.history.len());
    }
}
