//! The evaluation path shared by the CLI subcommands and the HTTP handlers.
//! Both front ends build the same request types and serialize the same
//! response types, so a service reply can be replayed from the command line.

use std::path::Path;

use reward_lens::counterfactual::{run_scenario, Scenario, ScenarioReport};
use reward_lens::gridworld::{expert_transition, EnvKind, EnvSpec, Grid, Transition, GRID, INPUT_DIM};
use reward_lens::interpret::{gradient_saliency_with, occlusion_map, OcclusionConfig, SaliencyPair};
use reward_lens::learning::load_checkpoint;
use reward_lens::{Error, RewardNet};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A reward model together with the id every response is tagged with.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub net: RewardNet,
    pub checkpoint: String,
}

/// First 16 hex digits of the SHA-256 of the canonical checkpoint JSON, so
/// whitespace or key order in the file does not change the id.
pub fn checkpoint_id(net: &RewardNet) -> String {
    let digest = Sha256::digest(net.to_checkpoint_json().as_bytes());
    hex::encode(digest)[..16].to_string()
}

impl LoadedModel {
    pub fn new(net: RewardNet) -> reward_lens::Result<Self> {
        if net.input_dim() != INPUT_DIM {
            return Err(Error::Format {
                location: "checkpoint".into(),
                message: format!("model takes {} inputs; gridworld transitions have {INPUT_DIM}", net.input_dim()),
            });
        }
        let checkpoint = checkpoint_id(&net);
        Ok(Self { net, checkpoint })
    }

    pub fn load(path: &Path) -> reward_lens::Result<Self> {
        Self::new(load_checkpoint(path)?).map_err(|e| match e {
            Error::Format { message, .. } => Error::Format {
                location: path.display().to_string(),
                message,
            },
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPair {
    pub s: Grid,
    pub sp: Grid,
}

impl GridPair {
    pub fn transition(&self) -> Transition {
        Transition::from_grids(self.s.clone(), self.sp.clone())
    }
}

impl From<&Transition> for GridPair {
    fn from(t: &Transition) -> Self {
        Self {
            s: t.s.clone(),
            sp: t.s_prime.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResponse {
    pub reward: f64,
    pub checkpoint: String,
}

pub fn reward(model: &LoadedModel, pair: &GridPair) -> reward_lens::Result<RewardResponse> {
    Ok(RewardResponse {
        reward: model.net.forward(&pair.transition().encode())?,
        checkpoint: model.checkpoint.clone(),
    })
}

/// Optional occlusion settings; unset fields fall back to the defaults.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OcclusionOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_blur: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_mask: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<reward_lens::interpret::OcclusionMetric>,
}

impl OcclusionOverrides {
    pub fn apply(&self, base: OcclusionConfig) -> OcclusionConfig {
        OcclusionConfig {
            sigma_blur: self.sigma_blur.unwrap_or(base.sigma_blur),
            sigma_mask: self.sigma_mask.unwrap_or(base.sigma_mask),
            stride: self.stride.unwrap_or(base.stride),
            metric: self.metric.unwrap_or(base.metric),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyRequest {
    pub s: Grid,
    pub sp: Grid,
    /// Gradient only: keep the sign instead of taking magnitudes.
    #[serde(default)]
    pub signed: bool,
    #[serde(default, flatten)]
    pub occlusion: OcclusionOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyResponse {
    pub checkpoint: String,
    #[serde(flatten)]
    pub saliency: SaliencyPair,
}

pub fn gradient(model: &LoadedModel, pair: &GridPair, signed: bool) -> reward_lens::Result<SaliencyResponse> {
    Ok(SaliencyResponse {
        checkpoint: model.checkpoint.clone(),
        saliency: gradient_saliency_with(&model.net, &pair.transition(), signed)?,
    })
}

pub fn occlusion(model: &LoadedModel, pair: &GridPair, cfg: &OcclusionConfig) -> reward_lens::Result<SaliencyResponse> {
    Ok(SaliencyResponse {
        checkpoint: model.checkpoint.clone(),
        saliency: occlusion_map(&model.net, &pair.transition(), cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResponse {
    pub checkpoint: String,
    #[serde(flatten)]
    pub report: ScenarioReport,
}

pub fn scenario(model: &LoadedModel, sc: &Scenario) -> reward_lens::Result<ScenarioResponse> {
    Ok(ScenarioResponse {
        checkpoint: model.checkpoint.clone(),
        report: run_scenario(&model.net, sc)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvInfo {
    pub name: EnvKind,
    pub grid: usize,
    pub episode_cap: u32,
    pub playfield_rows: usize,
    pub score_strip: bool,
}

pub fn env_catalog(specs: &[EnvSpec]) -> Vec<EnvInfo> {
    specs
        .iter()
        .map(|spec| EnvInfo {
            name: spec.kind,
            grid: GRID,
            episode_cap: spec.episode_cap,
            playfield_rows: spec.kind.playfield_rows(),
            score_strip: spec.kind.has_strip_row(),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub env: EnvKind,
    pub seed: u64,
    #[serde(default)]
    pub step: usize,
}

pub fn sample(req: &SampleRequest) -> reward_lens::Result<Transition> {
    expert_transition(EnvSpec::new(req.env), req.seed, req.step)
}
