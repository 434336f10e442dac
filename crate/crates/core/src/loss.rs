//! Localization losses: binary cross-entropy, global Dice, Patch-Dice and
//! their multi-scale weighted sum, with the analytic Patch-Dice gradient.
//!
//! Patch-Dice splits every frame into a grid of local patches and sums a
//! Dice term per patch, so a small missed actor costs as much as a large
//! one:
//!
//! ```text
//! PDL = sum_k ( 1 - (2 * sum_i p_ki * q_ki + e_num) / (sum_i p_ki^2 + sum_i q_ki^2 + e) )
//! ```
//!
//! where `p` is ground truth, `q` the prediction, and `e_num` is `e` in the
//! smoothed form (empty patches predicted empty score 0) or 0 in the strict
//! form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Dims, MaskVolume, Volume};

/// Predictions are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before logs.
pub const BCE_CLAMP: f64 = 1e-7;

pub const DEFAULT_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceSmoothing {
    /// `e` in numerator and denominator.
    #[default]
    Smoothed,
    /// `e` in the denominator only.
    Strict,
}

impl DiceSmoothing {
    fn numerator_eps(self, eps: f64) -> f64 {
        match self {
            DiceSmoothing::Smoothed => eps,
            DiceSmoothing::Strict => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchReduction {
    #[default]
    Sum,
    Mean,
}

/// Tiling of a volume into patches. Edge patches are ragged, never padded.
///
/// `patch_t` defaults to 1 (independent 2D tiling of every frame); setting
/// it to the clip length with a full-frame patch gives a single patch over
/// the whole volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_h: usize,
    pub patch_w: usize,
    #[serde(default = "one")]
    pub patch_t: usize,
}

fn one() -> usize {
    1
}

impl Default for PatchGrid {
    fn default() -> Self {
        PatchGrid {
            patch_h: 16,
            patch_w: 16,
            patch_t: 1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Patch {
    t: (usize, usize),
    y: (usize, usize),
    x: (usize, usize),
}

impl PatchGrid {
    pub fn new(patch_h: usize, patch_w: usize) -> Result<Self> {
        Self::with_depth(1, patch_h, patch_w)
    }

    pub fn with_depth(patch_t: usize, patch_h: usize, patch_w: usize) -> Result<Self> {
        if patch_t == 0 || patch_h == 0 || patch_w == 0 {
            return Err(Error::Config(format!(
                "patch dimensions must be positive, got {patch_t}x{patch_h}x{patch_w}"
            )));
        }
        Ok(PatchGrid {
            patch_h,
            patch_w,
            patch_t,
        })
    }

    /// One patch covering the whole volume.
    pub fn whole(dims: Dims) -> Self {
        PatchGrid {
            patch_h: dims.h.max(1),
            patch_w: dims.w.max(1),
            patch_t: dims.t.max(1),
        }
    }

    /// `K = ceil(T/pt) * ceil(H/ph) * ceil(W/pw)`.
    pub fn num_patches(&self, dims: Dims) -> usize {
        dims.t.div_ceil(self.patch_t) * dims.h.div_ceil(self.patch_h) * dims.w.div_ceil(self.patch_w)
    }

    fn patches(&self, dims: Dims) -> impl Iterator<Item = Patch> + '_ {
        let spans = |n: usize, step: usize| (0..n).step_by(step).map(move |a| (a, (a + step).min(n)));
        spans(dims.t, self.patch_t).flat_map(move |t| {
            spans(dims.h, self.patch_h).flat_map(move |y| spans(dims.w, self.patch_w).map(move |x| Patch { t, y, x }))
        })
    }
}

fn for_each_in(dims: Dims, p: Patch, mut f: impl FnMut(usize)) {
    for t in p.t.0..p.t.1 {
        for y in p.y.0..p.y.1 {
            let row = dims.index(t, y, 0);
            for x in p.x.0..p.x.1 {
                f(row + x);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda_bce: f64,
    pub lambda_pdl: f64,
    pub eps: f64,
    /// Pyramid levels; level `s` is max-pooled by `2^s`.
    pub scales: usize,
    pub grid: PatchGrid,
    pub reduction: PatchReduction,
    pub smoothing: DiceSmoothing,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_bce: 1.0,
            lambda_pdl: 1.0,
            eps: DEFAULT_EPS,
            scales: 3,
            grid: PatchGrid::default(),
            reduction: PatchReduction::Sum,
            smoothing: DiceSmoothing::Smoothed,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_bce >= 0.0 && self.lambda_pdl >= 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        if self.scales == 0 {
            return Err(Error::Config("at least one pyramid scale is required".into()));
        }
        PatchGrid::with_depth(self.grid.patch_t, self.grid.patch_h, self.grid.patch_w)?;
        Ok(())
    }
}

/// Mean binary cross-entropy over all voxels.
pub fn bce_loss(y: &MaskVolume, y_hat: &MaskVolume) -> Result<f64> {
    y.ensure_same_dims(y_hat)?;
    let n = y.as_slice().len();
    if n == 0 {
        return Ok(0.0);
    }
    let total: f64 = y
        .as_slice()
        .iter()
        .zip(y_hat.as_slice())
        .map(|(&t, &p)| bce_term(t, p))
        .sum();
    Ok(total / n as f64)
}

pub(crate) fn bce_term(target: f64, predicted: f64) -> f64 {
    let p = predicted.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(target * p.ln() + (1.0 - target) * (1.0 - p).ln())
}

#[derive(Debug, Clone, Copy, Default)]
struct DiceSums {
    yq: f64,
    yy: f64,
    qq: f64,
}

impl DiceSums {
    fn over(y: &[f64], q: &[f64], dims: Dims, patch: Patch) -> Self {
        let mut s = DiceSums::default();
        for_each_in(dims, patch, |i| {
            s.yq += y[i] * q[i];
            s.yy += y[i] * y[i];
            s.qq += q[i] * q[i];
        });
        s
    }

    fn numerator(&self, eps_num: f64) -> f64 {
        2.0 * self.yq + eps_num
    }

    fn denominator(&self, eps: f64) -> f64 {
        self.yy + self.qq + eps
    }

    fn loss(&self, eps: f64, eps_num: f64) -> f64 {
        1.0 - self.numerator(eps_num) / self.denominator(eps)
    }
}

/// Global smoothed Dice loss over the whole volume.
pub fn dice_loss(y: &MaskVolume, y_hat: &MaskVolume, eps: f64) -> Result<f64> {
    dice_loss_with(y, y_hat, eps, DiceSmoothing::Smoothed)
}

pub fn dice_loss_with(y: &MaskVolume, y_hat: &MaskVolume, eps: f64, smoothing: DiceSmoothing) -> Result<f64> {
    y.ensure_same_dims(y_hat)?;
    let mut s = DiceSums::default();
    for (&t, &p) in y.as_slice().iter().zip(y_hat.as_slice()) {
        s.yq += t * p;
        s.yy += t * t;
        s.qq += p * p;
    }
    Ok(s.loss(eps, smoothing.numerator_eps(eps)))
}

/// Patch-Dice loss, reported both as the literal sum over patches and as
/// the mean over the `K` patches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchDice {
    pub sum: f64,
    pub mean: f64,
    pub patches: usize,
}

impl PatchDice {
    pub fn reduced(&self, reduction: PatchReduction) -> f64 {
        match reduction {
            PatchReduction::Sum => self.sum,
            PatchReduction::Mean => self.mean,
        }
    }
}

pub fn patch_dice_loss(y: &MaskVolume, y_hat: &MaskVolume, grid: &PatchGrid, eps: f64) -> Result<PatchDice> {
    patch_dice_loss_with(y, y_hat, grid, eps, DiceSmoothing::Smoothed)
}

pub fn patch_dice_loss_with(
    y: &MaskVolume,
    y_hat: &MaskVolume,
    grid: &PatchGrid,
    eps: f64,
    smoothing: DiceSmoothing,
) -> Result<PatchDice> {
    y.ensure_same_dims(y_hat)?;
    let dims = y.dims();
    let eps_num = smoothing.numerator_eps(eps);
    let (mut sum, mut patches) = (0.0, 0usize);
    for patch in grid.patches(dims) {
        sum += DiceSums::over(y.as_slice(), y_hat.as_slice(), dims, patch).loss(eps, eps_num);
        patches += 1;
    }
    let mean = if patches == 0 { 0.0 } else { sum / patches as f64 };
    Ok(PatchDice { sum, mean, patches })
}

/// Analytic gradient of the Patch-Dice loss with respect to every
/// predicted value.
pub fn pdl_gradient(
    y: &MaskVolume,
    y_hat: &MaskVolume,
    grid: &PatchGrid,
    eps: f64,
    reduction: PatchReduction,
) -> Result<Volume<f64>> {
    pdl_gradient_with(y, y_hat, grid, eps, reduction, DiceSmoothing::Smoothed)
}

pub fn pdl_gradient_with(
    y: &MaskVolume,
    y_hat: &MaskVolume,
    grid: &PatchGrid,
    eps: f64,
    reduction: PatchReduction,
    smoothing: DiceSmoothing,
) -> Result<Volume<f64>> {
    y.ensure_same_dims(y_hat)?;
    let dims = y.dims();
    let (ys, qs) = (y.as_slice(), y_hat.as_slice());
    let eps_num = smoothing.numerator_eps(eps);
    let scale = match reduction {
        PatchReduction::Sum => 1.0,
        PatchReduction::Mean => 1.0 / grid.num_patches(dims).max(1) as f64,
    };
    let mut grad = Volume::filled(dims, 0.0);
    let g = grad.as_mut_slice();
    for patch in grid.patches(dims) {
        let s = DiceSums::over(ys, qs, dims, patch);
        let (num, den) = (s.numerator(eps_num), s.denominator(eps));
        // d/dq_i [1 - num/den] = (2 q_i num - 2 y_i den) / den^2
        let inv = scale / (den * den);
        for_each_in(dims, patch, |i| {
            g[i] = 2.0 * (qs[i] * num - ys[i] * den) * inv;
        });
    }
    Ok(grad)
}

/// Spatial max-pooling by `factor` (a power of two), rounding the output
/// size up. A cell is foreground iff any pixel it covers is.
pub fn downsample_mask(y: &MaskVolume, factor: usize) -> Result<MaskVolume> {
    if !factor.is_power_of_two() {
        return Err(Error::Config(format!(
            "downsample factor must be a power of two, got {factor}"
        )));
    }
    let d = y.dims();
    let out = Dims::new(d.t, d.h.div_ceil(factor), d.w.div_ceil(factor));
    let mut pooled = Volume::filled(out, 0.0f64);
    for t in 0..d.t {
        for yy in 0..d.h {
            for x in 0..d.w {
                let v = *y.get(t, yy, x);
                let (cy, cx) = (yy / factor, x / factor);
                if v > *pooled.get(t, cy, cx) {
                    pooled.set(t, cy, cx, v);
                }
            }
        }
    }
    Ok(pooled)
}

/// Levels `0..scales`, level `s` pooled by `2^s`.
pub fn build_pyramid(v: &MaskVolume, scales: usize) -> Result<Vec<MaskVolume>> {
    (0..scales).map(|s| downsample_mask(v, 1 << s)).collect()
}

/// `sum_s lambda_bce * BCE(y_s, q_s) + lambda_pdl * PDL(y_s, q_s)`.
pub fn multiscale_loss(y_pyramid: &[MaskVolume], y_hat_pyramid: &[MaskVolume], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    if y_pyramid.len() != cfg.scales || y_hat_pyramid.len() != cfg.scales {
        return Err(Error::Pyramid(format!(
            "expected {} levels, got {} and {}",
            cfg.scales,
            y_pyramid.len(),
            y_hat_pyramid.len()
        )));
    }
    let mut total = 0.0;
    for (y, q) in y_pyramid.iter().zip(y_hat_pyramid) {
        let bce = bce_loss(y, q)?;
        let pdl = patch_dice_loss_with(y, q, &cfg.grid, cfg.eps, cfg.smoothing)?;
        total += cfg.lambda_bce * bce + cfg.lambda_pdl * pdl.reduced(cfg.reduction);
    }
    Ok(total)
}

/// Every loss for one pair of volumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub bce: f64,
    pub dice: f64,
    pub pdl_sum: f64,
    pub pdl_mean: f64,
    pub patches: usize,
    pub multiscale: f64,
}

pub fn evaluate_all(y: &MaskVolume, y_hat: &MaskVolume, cfg: &LossConfig) -> Result<LossReport> {
    cfg.validate()?;
    let pdl = patch_dice_loss_with(y, y_hat, &cfg.grid, cfg.eps, cfg.smoothing)?;
    let multiscale = multiscale_loss(&build_pyramid(y, cfg.scales)?, &build_pyramid(y_hat, cfg.scales)?, cfg)?;
    Ok(LossReport {
        bce: bce_loss(y, y_hat)?,
        dice: dice_loss_with(y, y_hat, cfg.eps, cfg.smoothing)?,
        pdl_sum: pdl.sum,
        pdl_mean: pdl.mean,
        patches: pdl.patches,
        multiscale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(t: usize, h: usize, w: usize, data: Vec<f64>) -> MaskVolume {
        MaskVolume::probabilities(Dims::new(t, h, w), data).unwrap()
    }

    fn full(t: usize, h: usize, w: usize, v: f64) -> MaskVolume {
        Volume::filled(Dims::new(t, h, w), v)
    }

    #[test]
    fn bce_examples() {
        let ones = full(2, 3, 3, 1.0);
        let l = bce_loss(&ones, &ones).unwrap();
        assert!(l > 0.0 && l <= 2e-7, "{l}");
        let half = full(2, 3, 3, 0.5);
        assert!((bce_loss(&ones, &half).unwrap() - 2f64.ln()).abs() < 1e-12);
        let y = vol(1, 1, 2, vec![1.0, 0.0]);
        let q = vol(1, 1, 2, vec![0.9, 0.1]);
        let expect = -(0.9f64.ln() + 0.9f64.ln()) / 2.0;
        assert!((bce_loss(&y, &q).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.10536).abs() < 1e-5);
    }

    #[test]
    fn mismatched_dims_error() {
        let a = full(1, 2, 2, 0.0);
        let b = full(1, 2, 3, 0.0);
        assert!(matches!(bce_loss(&a, &b), Err(Error::DimensionMismatch { .. })));
        assert!(dice_loss(&a, &b, DEFAULT_EPS).is_err());
        assert!(patch_dice_loss(&a, &b, &PatchGrid::default(), DEFAULT_EPS).is_err());
        assert!(pdl_gradient(&a, &b, &PatchGrid::default(), DEFAULT_EPS, PatchReduction::Sum).is_err());
    }

    #[test]
    fn dice_examples() {
        let mut y = full(1, 4, 4, 0.0);
        for x in 0..4 {
            y.set(0, 1, x, 1.0);
        }
        assert!(dice_loss(&y, &y, 1e-7).unwrap().abs() <= 1e-6);
        let z = full(1, 4, 4, 0.0);
        assert!(dice_loss(&z, &z, 1e-7).unwrap().abs() < 1e-12);
        // strict form scores an empty/empty volume as a total miss
        assert!((dice_loss_with(&z, &z, 1e-7, DiceSmoothing::Strict).unwrap() - 1.0).abs() < 1e-12);
        let mut q = full(1, 4, 4, 0.0);
        q.set(0, 1, 0, 1.0);
        q.set(0, 1, 1, 1.0);
        let d = dice_loss(&y, &q, 1e-7).unwrap();
        assert!((d - 1.0 / 3.0).abs() < 1e-7, "{d}");
    }

    #[test]
    fn patch_dice_two_patch_example() {
        // left patch perfect and nonempty, right patch empty truth with one false pixel
        let grid = PatchGrid::new(2, 2).unwrap();
        let y = vol(1, 2, 4, vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let q = vol(1, 2, 4, vec![1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let pd = patch_dice_loss(&y, &q, &grid, 1e-7).unwrap();
        assert_eq!(pd.patches, 2);
        let term_b = 1.0 - 1e-7 / (1.0 + 1e-7);
        assert!((pd.sum - term_b).abs() < 1e-7);
        assert!((pd.mean - pd.sum / 2.0).abs() < 1e-15);
    }

    #[test]
    fn patch_count_is_ragged() {
        let grid = PatchGrid::new(16, 16).unwrap();
        assert_eq!(grid.num_patches(Dims::new(3, 40, 17)), 3 * 3 * 2);
        let y = full(3, 40, 17, 0.0);
        assert_eq!(patch_dice_loss(&y, &y, &grid, 1e-7).unwrap().patches, 18);
        assert!(PatchGrid::new(0, 4).is_err());
    }

    #[test]
    fn single_full_frame_patch_matches_dice() {
        let y = vol(1, 2, 3, vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
        let q = vol(1, 2, 3, vec![0.7, 0.2, 0.4, 0.1, 0.9, 0.5]);
        let grid = PatchGrid::new(2, 3).unwrap();
        let pd = patch_dice_loss(&y, &q, &grid, 1e-7).unwrap();
        let d = dice_loss(&y, &q, 1e-7).unwrap();
        assert!((pd.sum - d).abs() <= 1e-12);
    }

    #[test]
    fn gradient_sign_on_background_patch() {
        let y = full(1, 4, 4, 0.0);
        let q = vol(1, 4, 4, (0..16).map(|i| 0.05 * i as f64 + 0.01).collect());
        let g = pdl_gradient(&y, &q, &PatchGrid::new(4, 4).unwrap(), 1e-7, PatchReduction::Sum).unwrap();
        assert!(g.as_slice().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn gradient_small_at_optimum() {
        let y = vol(1, 2, 2, vec![1.0, 1.0, 0.0, 0.0]);
        let grid = PatchGrid::new(2, 2).unwrap();
        let at_opt = pdl_gradient(&y, &y, &grid, 1e-7, PatchReduction::Sum).unwrap();
        let off = vol(1, 2, 2, vec![0.6, 0.9, 0.3, 0.2]);
        let perturbed = pdl_gradient(&y, &off, &grid, 1e-7, PatchReduction::Sum).unwrap();
        let norm = |v: &Volume<f64>| v.as_slice().iter().map(|g| g * g).sum::<f64>().sqrt();
        assert!(norm(&at_opt) < 0.1 * norm(&perturbed));
    }

    #[test]
    fn downsample_examples() {
        let z = full(2, 8, 8, 0.0);
        for s in build_pyramid(&z, 3).unwrap() {
            assert!(s.as_slice().iter().all(|&v| v == 0.0));
        }
        let mut one = full(1, 8, 8, 0.0);
        one.set(0, 5, 6, 1.0);
        let d = downsample_mask(&one, 4).unwrap();
        assert_eq!(d.dims(), Dims::new(1, 2, 2));
        assert_eq!(d.as_slice().iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(*d.get(0, 1, 1), 1.0);
        let checker = MaskVolume::from_fn(Dims::new(1, 6, 6), |_, y, x| ((x + y) % 2) as f64);
        let c = downsample_mask(&checker, 2).unwrap();
        assert!(c.as_slice().iter().all(|&v| v == 1.0));
        assert!(downsample_mask(&checker, 3).is_err());
        assert_eq!(
            downsample_mask(&full(1, 5, 7, 0.0), 2).unwrap().dims(),
            Dims::new(1, 3, 4)
        );
    }

    #[test]
    fn multiscale_reductions() {
        let y = MaskVolume::from_fn(Dims::new(2, 8, 8), |_, y, x| if x < 3 && y < 3 { 1.0 } else { 0.0 });
        let q = MaskVolume::from_fn(Dims::new(2, 8, 8), |_, y, x| if x < 3 && y < 3 { 0.8 } else { 0.1 });
        let cfg = LossConfig {
            scales: 1,
            grid: PatchGrid::new(4, 4).unwrap(),
            ..LossConfig::default()
        };
        let single = multiscale_loss(std::slice::from_ref(&y), std::slice::from_ref(&q), &cfg).unwrap();
        let expect = bce_loss(&y, &q).unwrap() + patch_dice_loss(&y, &q, &cfg.grid, cfg.eps).unwrap().sum;
        assert!((single - expect).abs() < 1e-12);

        let cfg2 = LossConfig {
            scales: 2,
            lambda_pdl: 0.0,
            ..cfg
        };
        let py = build_pyramid(&y, 2).unwrap();
        let pq = build_pyramid(&q, 2).unwrap();
        let bce_only = multiscale_loss(&py, &pq, &cfg2).unwrap();
        let expect: f64 = py.iter().zip(&pq).map(|(a, b)| bce_loss(a, b).unwrap()).sum();
        assert!((bce_only - expect).abs() < 1e-12);

        let perfect = multiscale_loss(
            &py,
            &py,
            &LossConfig {
                lambda_pdl: 1.0,
                ..cfg2
            },
        )
        .unwrap();
        assert!(perfect.abs() < 1e-5, "{perfect}");

        assert!(matches!(multiscale_loss(&py[..1], &pq, &cfg2), Err(Error::Pyramid(_))));
    }
}
