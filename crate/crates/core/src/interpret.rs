//! Saliency maps over the two input frames of a reward model.
//!
//! Two methods:
//! - gradient saliency: `|dR/ds|` and `|dR/ds'|` reshaped onto the grid;
//! - occlusion: for each pixel, blend a blurred copy of one frame into it
//!   under a Gaussian mask centred there and record how far `R` moves.
//!
//! Occlusion of frame `s` at pixel `(i, j)` evaluates
//! `x~ = x * (1 - M_ij) + blur(x) * M_ij` with `M_ij` a peak-1 Gaussian of
//! width `sigma_mask`, and reports `|R(x~, s') - R(s, s')|`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridworld::{encode, Grid, Transition, CELLS, GRID, INPUT_DIM};
use crate::tensor::RewardNet;

pub type Heatmap = [[f64; GRID]; GRID];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SaliencyMethod {
    Gradient,
    Occlusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyPair {
    pub method: SaliencyMethod,
    pub map_s: Heatmap,
    pub map_sprime: Heatmap,
    /// `sum(map_sprime) / (sum(map_s) + sum(map_sprime))`, 0.5 when both are 0.
    pub mass_ratio: f64,
}

impl SaliencyPair {
    fn new(method: SaliencyMethod, map_s: Heatmap, map_sprime: Heatmap) -> Self {
        let ms = total_abs(&map_s);
        let msp = total_abs(&map_sprime);
        let mass_ratio = if ms + msp == 0.0 { 0.5 } else { msp / (ms + msp) };
        Self {
            method,
            map_s,
            map_sprime,
            mass_ratio,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("saliency serializes")
    }
}

fn total_abs(map: &Heatmap) -> f64 {
    map.iter().flatten().map(|v| v.abs()).sum()
}

/// Sum of `map` restricted to `row`, as a fraction of the total; `None` when
/// the map is all zero.
pub fn row_mass_fraction(map: &Heatmap, row: usize) -> Option<f64> {
    let total = total_abs(map);
    (total > 0.0).then(|| map[row].iter().map(|v| v.abs()).sum::<f64>() / total)
}

fn to_heatmap(values: &[f64]) -> Heatmap {
    let mut m = [[0.0; GRID]; GRID];
    for (i, v) in values.iter().enumerate() {
        m[i / GRID][i % GRID] = *v;
    }
    m
}

fn check_net(net: &RewardNet) -> Result<()> {
    if net.input_dim() != INPUT_DIM {
        return Err(Error::shape("saliency network input", INPUT_DIM, net.input_dim()));
    }
    Ok(())
}

/// Gradient magnitude maps.
pub fn gradient_saliency(net: &RewardNet, t: &Transition) -> Result<SaliencyPair> {
    gradient_saliency_with(net, t, false)
}

/// With `signed`, the maps keep the sign of the gradient; `mass_ratio` is
/// always computed from magnitudes.
pub fn gradient_saliency_with(net: &RewardNet, t: &Transition, signed: bool) -> Result<SaliencyPair> {
    check_net(net)?;
    let mut g = net.input_gradient(&t.encode())?;
    if !signed {
        g.iter_mut().for_each(|v| *v = v.abs());
    }
    Ok(SaliencyPair::new(
        SaliencyMethod::Gradient,
        to_heatmap(&g[..CELLS]),
        to_heatmap(&g[CELLS..]),
    ))
}

/// `exp(-d^2 / (2 sigma^2))` for `d = 0..=ceil(3 sigma)`.
pub fn gaussian_profile(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    (0..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect()
}

fn blur_pass(src: &[f64], sigma: f64, horizontal: bool) -> Vec<f64> {
    let profile = gaussian_profile(sigma);
    let radius = profile.len() as isize - 1;
    let mut out = vec![0.0; CELLS];
    for r in 0..GRID {
        for c in 0..GRID {
            // Averaging offsets from the centre value reproduces constant
            // rows bit-exactly.
            let centre = src[r * GRID + c];
            let (mut acc, mut norm) = (0.0, 0.0);
            for off in -radius..=radius {
                let (rr, cc) = if horizontal {
                    (r as isize, c as isize + off)
                } else {
                    (r as isize + off, c as isize)
                };
                if rr < 0 || cc < 0 || rr >= GRID as isize || cc >= GRID as isize {
                    continue;
                }
                let w = profile[off.unsigned_abs()];
                acc += w * (src[rr as usize * GRID + cc as usize] - centre);
                norm += w;
            }
            out[r * GRID + c] = centre + acc / norm;
        }
    }
    out
}

/// Separable Gaussian blur truncated at `ceil(3 sigma)`, with the kernel
/// renormalized to unit sum wherever it overhangs the border.
pub fn gaussian_blur(grid: &Grid, sigma: f64) -> Result<Grid> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::usage("blur sigma must be positive"));
    }
    let h = blur_pass(grid.as_slice(), sigma, true);
    let v = blur_pass(&h, sigma, false);
    // Convex combinations of [0, 1] values can drift by an ulp past the ends.
    let clamped: Vec<f64> = v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect();
    Grid::from_flat(&clamped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMetric {
    /// `|R~ - R|`
    #[default]
    Absolute,
    /// `(R~ - R)^2`
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub sigma_blur: f64,
    pub sigma_mask: f64,
    pub stride: usize,
    pub metric: OcclusionMetric,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            sigma_blur: 1.5,
            // A wider mask spreads a single-pixel feature over neighbouring
            // rows: at 1.5 only ~42% of the map stays on the feature's row.
            sigma_mask: 0.5,
            stride: 1,
            metric: OcclusionMetric::Absolute,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |s: f64| s > 0.0 && s.is_finite();
        if !ok(self.sigma_blur) || !ok(self.sigma_mask) {
            return Err(Error::usage("occlusion sigmas must be positive"));
        }
        if self.stride == 0 {
            return Err(Error::usage("occlusion stride must be at least 1"));
        }
        Ok(())
    }
}

/// Peak-1 Gaussian mask centred at `(ci, cj)`, truncated at `ceil(3 sigma)`.
fn mask(ci: usize, cj: usize, profile: &[f64]) -> Vec<f64> {
    let radius = profile.len() - 1;
    let mut m = vec![0.0; CELLS];
    for r in ci.saturating_sub(radius)..(ci + radius + 1).min(GRID) {
        for c in cj.saturating_sub(radius)..(cj + radius + 1).min(GRID) {
            m[r * GRID + c] = profile[r.abs_diff(ci)] * profile[c.abs_diff(cj)];
        }
    }
    m
}

pub fn occlusion_map(net: &RewardNet, t: &Transition, cfg: &OcclusionConfig) -> Result<SaliencyPair> {
    occlusion_map_with(net, t, cfg, Exec::default())
}

pub fn occlusion_map_with(net: &RewardNet, t: &Transition, cfg: &OcclusionConfig, exec: Exec) -> Result<SaliencyPair> {
    check_net(net)?;
    cfg.validate()?;
    let base_input = t.encode();
    let base = net.forward(&base_input)?;
    let blurred = [gaussian_blur(&t.s, cfg.sigma_blur)?, gaussian_blur(&t.s_prime, cfg.sigma_blur)?];
    let profile = gaussian_profile(cfg.sigma_mask);

    let centers: Vec<(usize, usize)> = (0..GRID)
        .step_by(cfg.stride)
        .flat_map(|i| (0..GRID).step_by(cfg.stride).map(move |j| (i, j)))
        .collect();
    // Each task yields the perturbation scores for both frames at one centre.
    let scores = exec.map_slice(&centers, |&(i, j)| -> Result<[f64; 2]> {
        let m = mask(i, j, &profile);
        let mut out = [0.0; 2];
        for (frame, blur) in blurred.iter().enumerate() {
            let mut x = base_input.clone();
            let offset = frame * CELLS;
            for k in 0..CELLS {
                let orig = x[offset + k];
                x[offset + k] = orig * (1.0 - m[k]) + blur.as_slice()[k] * m[k];
            }
            let delta = net.forward(&x)? - base;
            out[frame] = match cfg.metric {
                OcclusionMetric::Absolute => delta.abs(),
                OcclusionMetric::Squared => delta * delta,
            };
        }
        Ok(out)
    });
    let mut maps = [[[0.0; GRID]; GRID]; 2];
    for (&(i, j), score) in centers.iter().zip(scores) {
        let score = score?;
        maps[0][i][j] = score[0];
        maps[1][i][j] = score[1];
    }
    Ok(SaliencyPair::new(SaliencyMethod::Occlusion, maps[0], maps[1]))
}

/// Convenience: saliency for a bare `(s, s')` pair.
pub fn transition_of(s: &Grid, s_prime: &Grid) -> Transition {
    Transition::from_grids(s.clone(), s_prime.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapFormat {
    Pgm,
    Json,
}

#[derive(Debug, Serialize, Deserialize)]
struct HeatmapFile {
    shape: [usize; 2],
    values: Vec<Vec<f64>>,
}

/// Plain P2 greyscale scaled so the map maximum is 255, or JSON
/// `{"shape":[11,11],"values":[[...]]}`.
pub fn render_heatmap(map: &Heatmap, path: &Path, format: HeatmapFormat) -> Result<()> {
    if map.iter().flatten().any(|v| !(*v >= 0.0)) {
        return Err(Error::usage("heatmap values must be nonnegative"));
    }
    let body = match format {
        HeatmapFormat::Pgm => pgm_text(map),
        HeatmapFormat::Json => serde_json::to_string(&HeatmapFile {
            shape: [GRID, GRID],
            values: map.iter().map(|r| r.to_vec()).collect(),
        })
        .expect("heatmap serializes"),
    };
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn pgm_text(map: &Heatmap) -> String {
    let max = map.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let mut out = format!("P2\n{GRID} {GRID}\n255\n");
    for row in map {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let level = if max > 0.0 { (v / max * 255.0).round() as u32 } else { 0 };
                level.to_string()
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_heatmap_json(path: &Path) -> Result<Heatmap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: HeatmapFile =
        serde_json::from_str(&text).map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
    if file.shape != [GRID, GRID] || file.values.len() != GRID || file.values.iter().any(|r| r.len() != GRID) {
        return Err(Error::format(path.display().to_string(), "heatmap must be 11x11"));
    }
    let flat: Vec<f64> = file.values.into_iter().flatten().collect();
    Ok(to_heatmap(&flat))
}

/// Evaluates `R(s, s')` on a bare grid pair.
pub fn reward_of(net: &RewardNet, s: &Grid, s_prime: &Grid) -> Result<f64> {
    net.forward(&encode(s, s_prime))
}
