//! Adaptive Gauss–Kronrod (7/15) quadrature, vector valued, plus a
//! log-space driver that locates an integration window around a peaked
//! integrand and expands it until the tails are negligible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

// Gauss weights at XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Tolerances and window strategy shared by every 1-D integral in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
    pub window: WindowExpansion,
}

/// How the integration window is grown around the peak of a log integrand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowExpansion {
    /// Starting half-width in units of the supplied scale.
    pub initial_halfwidth: f64,
    /// Window edges must sit this many log-units below the peak.
    pub log_drop: f64,
    pub max_expansions: usize,
}

impl Default for WindowExpansion {
    fn default() -> Self {
        Self {
            initial_halfwidth: 8.0,
            log_drop: 42.0,
            max_expansions: 80,
        }
    }
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 2000,
            window: WindowExpansion::default(),
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidInput("quadrature tolerances must be positive".into()));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::InvalidInput("max_subdivisions must be positive".into()));
        }
        Ok(())
    }

    /// Same window strategy with looser tolerances, for inner integrals of
    /// nested schemes.
    pub fn relaxed(&self, factor: f64) -> Self {
        Self {
            abs_tol: self.abs_tol * factor,
            rel_tol: self.rel_tol * factor,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Integral<const K: usize> {
    pub value: [f64; K],
    pub error: [f64; K],
    pub subdivisions: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    error: [f64; K],
}

fn gk15<const K: usize, F>(f: &mut F, a: f64, b: f64) -> Segment<K>
where
    F: FnMut(f64) -> [f64; K],
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    for k in 0..K {
        kron[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for k in 0..K {
            let s = f1[k] + f2[k];
            kron[k] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut value = [0.0; K];
    let mut error = [0.0; K];
    for k in 0..K {
        value[k] = kron[k] * half;
        error[k] = ((kron[k] - gauss[k]) * half).abs();
    }
    Segment { a, b, value, error }
}

/// Globally adaptive quadrature over the finite interval partitioned by
/// `breakpoints` (sorted, at least two). Every component must meet
/// `max(abs_tol, rel_tol·|I_k|)`.
pub fn integrate_partitioned<const K: usize, F>(
    mut f: F,
    breakpoints: &[f64],
    abs_tol: f64,
    rel_tol: f64,
    max_subdivisions: usize,
) -> Result<Integral<K>>
where
    F: FnMut(f64) -> [f64; K],
{
    if breakpoints.len() < 2 {
        return Err(Error::InvalidInput("need at least two breakpoints".into()));
    }
    let mut segments: Vec<Segment<K>> = breakpoints
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| gk15(&mut f, w[0], w[1]))
        .collect();
    if segments.is_empty() {
        return Ok(Integral {
            value: [0.0; K],
            error: [0.0; K],
            subdivisions: 0,
        });
    }
    let mut subdivisions = 0;
    loop {
        let mut total = [0.0; K];
        let mut err = [0.0; K];
        for s in &segments {
            for k in 0..K {
                total[k] += s.value[k];
                err[k] += s.error[k];
            }
        }
        let tol: [f64; K] = std::array::from_fn(|k| abs_tol.max(rel_tol * total[k].abs()));
        if (0..K).all(|k| err[k] <= tol[k]) {
            return Ok(Integral {
                value: total,
                error: err,
                subdivisions,
            });
        }
        if subdivisions >= max_subdivisions {
            let worst = (0..K).map(|k| err[k] / tol[k]).fold(0.0, f64::max);
            return Err(Error::QuadratureNonConvergence {
                subdivisions,
                error: worst,
            });
        }
        let (idx, _) = segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let score = (0..K).map(|k| s.error[k] / tol[k]).fold(0.0, f64::max);
                (i, score)
            })
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let seg = segments.swap_remove(idx);
        let mid = 0.5 * (seg.a + seg.b);
        if !(mid > seg.a && mid < seg.b) {
            // Interval cannot be split further in floating point.
            return Err(Error::QuadratureNonConvergence {
                subdivisions,
                error: seg.error.iter().cloned().fold(0.0, f64::max),
            });
        }
        segments.push(gk15(&mut f, seg.a, mid));
        segments.push(gk15(&mut f, mid, seg.b));
        subdivisions += 1;
    }
}

/// Scalar adaptive quadrature on `[a, b]`.
pub fn integrate<F>(mut f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let r = integrate_partitioned::<1, _>(|x| [f(x)], &[a, b], cfg.abs_tol, cfg.rel_tol, cfg.max_subdivisions)?;
    Ok(r.value[0])
}

/// Integrals `∫ m_k(t)·exp(L(t) − shift) dt` over the whole line.
#[derive(Debug, Clone, Copy)]
pub struct LogScaledIntegral<const K: usize> {
    pub scaled: [f64; K],
    pub shift: f64,
    pub lo: f64,
    pub hi: f64,
}

impl<const K: usize> LogScaledIntegral<K> {
    /// `log ∫ m_k exp(L)`; requires a positive scaled value.
    pub fn ln(&self, k: usize) -> f64 {
        self.scaled[k].ln() + self.shift
    }

    pub fn ratio(&self, num: usize, den: usize) -> f64 {
        self.scaled[num] / self.scaled[den]
    }
}

/// Integrate `m_k(t)·exp(L(t))` over ℝ, where `f(t) = (L(t), m(t))`.
///
/// `center` and `scale` are a first guess of the peak location and width.
/// The window is scanned for the peak and widened on each side until the
/// log integrand at its edge sits `log_drop` below the peak and is decreasing
/// outward. Integrals are returned relative to `exp(shift)` with `shift` the
/// peak log value.
pub fn integrate_log_weighted<const K: usize, F>(
    mut f: F,
    center: f64,
    scale: f64,
    cfg: &QuadratureConfig,
) -> Result<LogScaledIntegral<K>>
where
    F: FnMut(f64) -> (f64, [f64; K]),
{
    if !(scale > 0.0 && scale.is_finite() && center.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "window needs finite center and positive scale, got ({center}, {scale})"
        )));
    }
    let w = cfg.window;
    let log_at = |t: f64, f: &mut F| -> f64 {
        let l = f(t).0;
        if l.is_nan() {
            f64::NEG_INFINITY
        } else {
            l
        }
    };

    // Coarse scan for the peak.
    let mut peak_t = center;
    let mut peak = log_at(center, &mut f);
    let steps = 32;
    for j in -steps..=steps {
        let t = center + (j as f64) * w.initial_halfwidth * scale / steps as f64;
        let l = log_at(t, &mut f);
        if l > peak {
            peak = l;
            peak_t = t;
        }
    }
    if !peak.is_finite() {
        return Err(Error::NonIntegrable(
            "log integrand is not finite anywhere in the initial window".into(),
        ));
    }

    let mut edge = [0.0f64; 2];
    for (side, sign) in [(0usize, -1.0f64), (1, 1.0)] {
        let mut reach = w.initial_halfwidth * scale;
        let mut found = false;
        for _ in 0..w.max_expansions {
            let t = peak_t + sign * reach;
            let l = log_at(t, &mut f);
            if l > peak {
                peak = l;
            }
            let probe = peak_t + sign * reach * (1.0 + 1e-3);
            let l_out = log_at(probe, &mut f);
            if l < peak - w.log_drop && l_out <= l {
                edge[side] = t;
                found = true;
                break;
            }
            reach *= 1.6;
            if !reach.is_finite() {
                break;
            }
        }
        if !found {
            return Err(Error::NonIntegrable(format!(
                "integrand does not decay on the {} side",
                if side == 0 { "left" } else { "right" }
            )));
        }
    }

    // Geometric breakpoints so the adaptive rule sees the peak.
    let (lo, hi) = (edge[0], edge[1]);
    let mut left = Vec::new();
    let mut right = Vec::new();
    let mut d = scale;
    while peak_t - d > lo {
        left.push(peak_t - d);
        d *= 2.0;
    }
    let mut d = scale;
    while peak_t + d < hi {
        right.push(peak_t + d);
        d *= 2.0;
    }
    let mut breaks = Vec::with_capacity(left.len() + right.len() + 3);
    breaks.push(lo);
    breaks.extend(left.iter().rev());
    breaks.push(peak_t);
    breaks.extend(right.iter());
    breaks.push(hi);

    let shift = peak;
    let r = integrate_partitioned::<K, _>(
        |t| {
            let (l, m) = f(t);
            let e = if l.is_finite() { (l - shift).exp() } else { 0.0 };
            std::array::from_fn(|k| if e == 0.0 { 0.0 } else { m[k] * e })
        },
        &breaks,
        cfg.abs_tol,
        cfg.rel_tol,
        cfg.max_subdivisions,
    )?;
    Ok(LogScaledIntegral {
        scaled: r.value,
        shift,
        lo,
        hi,
    })
}

/// Pairwise summation, used where reduction order must not depend on
/// scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
