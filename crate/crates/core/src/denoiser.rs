//! The noise predictor: a U-Net over the noisy map latent, conditioned on
//! the recorded waveforms through a parallel control branch.
//!
//! The control branch independently encodes the waveform set into one
//! feature map per encoder scale. Each is injected into the matching U-Net
//! encoder feature by a zero-initialized 1x1 convolution, so a freshly built
//! model is bit-exactly the unconditional U-Net, and the conditioning
//! pathway is grown by the optimizer from zero. Decoder skip connections
//! come from the already-coupled encoder features.

use crate::error::{Error, Result, TensorError};
use crate::nn::{
    norm_groups, Conv2dLayer, GroupNormLayer, Leaves, LinearLayer, ParamBuilder, ParamStore,
};
use crate::schedule::embed_timestep;
use crate::tensor::Tensor;

/// How the waveform reaches the U-Net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    /// Parallel control branch with zero-initialized additive coupling.
    ControlNet,
    /// Ablation variant: waveform pooled to map extent and concatenated
    /// with the noisy latent at the U-Net input.
    ConcatOnly,
}

impl std::str::FromStr for Conditioning {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "controlnet" => Ok(Conditioning::ControlNet),
            "concat" => Ok(Conditioning::ConcatOnly),
            other => Err(Error::config(
                "model.conditioning",
                format!("unknown conditioning '{other}' (expected controlnet or concat)"),
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub time_embed_dim: usize,
    pub blocks_per_scale: usize,
    /// Source count S of the waveform set.
    pub waveform_channels: usize,
    /// Time samples per trace.
    pub wave_time: usize,
    /// Receiver count R.
    pub wave_receivers: usize,
    pub map_height: usize,
    pub map_width: usize,
    pub conditioning: Conditioning,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            base_channels: 24,
            channel_multipliers: vec![1, 2, 3],
            time_embed_dim: 256,
            blocks_per_scale: 2,
            waveform_channels: 8,
            wave_time: 256,
            wave_receivers: 32,
            map_height: 32,
            map_width: 32,
            conditioning: Conditioning::ControlNet,
        }
    }
}

impl DenoiserConfig {
    pub fn num_scales(&self) -> usize {
        self.channel_multipliers.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channel_multipliers.is_empty() || self.channel_multipliers.contains(&0) {
            return Err(Error::config(
                "model.channel_multipliers",
                "need a non-empty list of positive multipliers",
            ));
        }
        if self.base_channels == 0 || self.blocks_per_scale == 0 {
            return Err(Error::config(
                "model.base_channels",
                "channels and blocks per scale must be positive",
            ));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::config(
                "model.time_embed_dim",
                "time embedding width must be even and positive",
            ));
        }
        let div = 1usize << (self.num_scales() - 1);
        if self.map_height % div != 0 || self.map_width % div != 0 {
            return Err(Error::config(
                "model.map_extent",
                format!(
                    "map extents {}x{} must be divisible by 2^(scales-1) = {div}",
                    self.map_height, self.map_width
                ),
            ));
        }
        if self.waveform_channels == 0 || self.wave_time == 0 || self.wave_receivers == 0 {
            return Err(Error::config(
                "model.waveform",
                "waveform extents must be positive",
            ));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        self.channel_multipliers
            .iter()
            .map(|m| m * self.base_channels)
            .collect()
    }

    /// Hidden width of the time-conditioning MLP.
    fn time_hidden(&self) -> usize {
        (self.time_embed_dim / 2).max(8)
    }
}

struct ResBlock {
    norm1: GroupNormLayer,
    conv1: Conv2dLayer,
    time: LinearLayer,
    norm2: GroupNormLayer,
    conv2: Conv2dLayer,
    skip: Option<Conv2dLayer>,
}

impl ResBlock {
    fn build(b: &mut ParamBuilder, name: &str, c_in: usize, c_out: usize, t_hid: usize) -> Self {
        ResBlock {
            norm1: b.group_norm(&format!("{name}.norm1"), c_in, norm_groups(c_in, 8)),
            conv1: b.conv2d(&format!("{name}.conv1"), c_in, c_out, (3, 3), (1, 1), (1, 1)),
            time: b.linear(&format!("{name}.time"), t_hid, c_out),
            norm2: b.group_norm(&format!("{name}.norm2"), c_out, norm_groups(c_out, 8)),
            conv2: b.conv2d(&format!("{name}.conv2"), c_out, c_out, (3, 3), (1, 1), (1, 1)),
            skip: (c_in != c_out)
                .then(|| b.conv2d(&format!("{name}.skip"), c_in, c_out, (1, 1), (1, 1), (0, 0))),
        }
    }

    fn forward(&self, lv: &Leaves, x: &Tensor, t_act: &Tensor) -> Result<Tensor, TensorError> {
        let h = self.conv1.forward(lv, &self.norm1.forward(lv, x)?.silu())?;
        let bias = self.time.forward(lv, t_act)?;
        let h = h.add_channel_bias(&bias)?;
        let h = self.conv2.forward(lv, &self.norm2.forward(lv, &h)?.silu())?;
        let base = match &self.skip {
            Some(s) => s.forward(lv, x)?,
            None => x.clone(),
        };
        base.add(&h)
    }
}

struct ControlBranch {
    stem: Vec<Conv2dLayer>,
    proj: Conv2dLayer,
    scales: Vec<Vec<ResBlock>>,
    downs: Vec<Conv2dLayer>,
    couplers: Vec<Conv2dLayer>,
}

/// The f_theta noise predictor with its parameter layout. Parameters live in
/// a [`ParamStore`]; `forward` instantiates them per graph so snapshots can
/// be shared across threads.
pub struct Denoiser {
    cfg: DenoiserConfig,
    time_in: LinearLayer,
    time_out: LinearLayer,
    stem: Conv2dLayer,
    enc_scales: Vec<Vec<ResBlock>>,
    enc_downs: Vec<Conv2dLayer>,
    mid: Vec<ResBlock>,
    dec_scales: Vec<Vec<ResBlock>>,
    dec_ups: Vec<Conv2dLayer>,
    head_norm: GroupNormLayer,
    head: Conv2dLayer,
    ctrl: Option<ControlBranch>,
}

impl Denoiser {
    /// Builds the layer structure and registers freshly initialized
    /// parameters. Couplers start at exactly zero.
    pub fn build(cfg: DenoiserConfig, store: &mut ParamStore, seed: u64) -> Result<Denoiser> {
        cfg.validate()?;
        let widths = cfg.widths();
        let scales = cfg.num_scales();
        let t_hid = cfg.time_hidden();
        let mut b = ParamBuilder::new(store, seed);

        let time_in = b.linear("time.in", cfg.time_embed_dim, t_hid);
        let time_out = b.linear("time.out", t_hid, t_hid);

        let stem_in = match cfg.conditioning {
            Conditioning::ControlNet => 1,
            Conditioning::ConcatOnly => 1 + cfg.waveform_channels,
        };
        let stem = b.conv2d("unet.stem", stem_in, widths[0], (3, 3), (1, 1), (1, 1));

        let mut enc_scales = Vec::new();
        let mut enc_downs = Vec::new();
        for i in 0..scales {
            let mut blocks = Vec::new();
            for j in 0..cfg.blocks_per_scale {
                let c_in = if j == 0 {
                    if i == 0 { widths[0] } else { widths[i - 1] }
                } else {
                    widths[i]
                };
                blocks.push(ResBlock::build(
                    &mut b,
                    &format!("unet.enc.{i}.{j}"),
                    c_in,
                    widths[i],
                    t_hid,
                ));
            }
            enc_scales.push(blocks);
            if i + 1 < scales {
                enc_downs.push(b.conv2d(
                    &format!("unet.down.{i}"),
                    widths[i],
                    widths[i],
                    (3, 3),
                    (2, 2),
                    (1, 1),
                ));
            }
        }

        let w_last = *widths.last().unwrap();
        let mid = (0..cfg.blocks_per_scale)
            .map(|j| ResBlock::build(&mut b, &format!("unet.mid.{j}"), w_last, w_last, t_hid))
            .collect();

        let mut dec_scales = Vec::new();
        let mut dec_ups = Vec::new();
        for i in (0..scales).rev() {
            let mut blocks = Vec::new();
            for j in 0..cfg.blocks_per_scale {
                let c_in = if j == 0 { 2 * widths[i] } else { widths[i] };
                blocks.push(ResBlock::build(
                    &mut b,
                    &format!("unet.dec.{i}.{j}"),
                    c_in,
                    widths[i],
                    t_hid,
                ));
            }
            dec_scales.push(blocks);
            if i > 0 {
                dec_ups.push(b.conv2d(
                    &format!("unet.up.{i}"),
                    widths[i],
                    widths[i - 1],
                    (3, 3),
                    (1, 1),
                    (1, 1),
                ));
            }
        }

        let head_norm = b.group_norm("unet.head.norm", widths[0], norm_groups(widths[0], 8));
        let head = b.conv2d("unet.head.conv", widths[0], 1, (3, 3), (1, 1), (1, 1));

        let ctrl = match cfg.conditioning {
            Conditioning::ConcatOnly => None,
            Conditioning::ControlNet => {
                let mut stem_convs = Vec::new();
                let (mut t_cur, mut r_cur) = (cfg.wave_time, cfg.wave_receivers);
                let mut c_in = cfg.waveform_channels;
                let mut idx = 0;
                loop {
                    let sy = if t_cur > cfg.map_height { 2 } else { 1 };
                    let sx = if r_cur > cfg.map_width { 2 } else { 1 };
                    if sy == 1 && sx == 1 && idx > 0 {
                        break;
                    }
                    stem_convs.push(b.conv2d(
                        &format!("ctrl.stem.{idx}"),
                        c_in,
                        widths[0],
                        (3, 3),
                        (sy, sx),
                        (1, 1),
                    ));
                    t_cur = (t_cur - 1) / sy + 1;
                    r_cur = (r_cur - 1) / sx + 1;
                    c_in = widths[0];
                    idx += 1;
                }
                let proj = b.conv2d("ctrl.proj", widths[0], widths[0], (1, 1), (1, 1), (0, 0));
                let mut ctrl_scales = Vec::new();
                let mut downs = Vec::new();
                let mut couplers = Vec::new();
                for i in 0..scales {
                    let mut blocks = Vec::new();
                    for j in 0..cfg.blocks_per_scale {
                        let c_in = if j == 0 {
                            if i == 0 { widths[0] } else { widths[i - 1] }
                        } else {
                            widths[i]
                        };
                        blocks.push(ResBlock::build(
                            &mut b,
                            &format!("ctrl.enc.{i}.{j}"),
                            c_in,
                            widths[i],
                            t_hid,
                        ));
                    }
                    ctrl_scales.push(blocks);
                    if i + 1 < scales {
                        downs.push(b.conv2d(
                            &format!("ctrl.down.{i}"),
                            widths[i],
                            widths[i],
                            (3, 3),
                            (2, 2),
                            (1, 1),
                        ));
                    }
                    couplers.push(b.conv1x1_zero(&format!("ctrl.couple.{i}"), widths[i]));
                }
                Some(ControlBranch {
                    stem: stem_convs,
                    proj,
                    scales: ctrl_scales,
                    downs,
                    couplers,
                })
            }
        };

        Ok(Denoiser {
            cfg,
            time_in,
            time_out,
            stem,
            enc_scales,
            enc_downs,
            mid,
            dec_scales,
            dec_ups,
            head_norm,
            head,
            ctrl,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    /// Names of the zero-initialized coupler parameters (empty for the
    /// concatenation variant).
    pub fn coupler_param_names(&self, store: &ParamStore) -> Vec<String> {
        match &self.ctrl {
            None => vec![],
            Some(c) => c
                .couplers
                .iter()
                .flat_map(|z| [store.name(z.w).to_string(), store.name(z.b).to_string()])
                .collect(),
        }
    }

    fn time_activation(&self, lv: &Leaves, ts: &[usize]) -> Result<Tensor> {
        let dim = self.cfg.time_embed_dim;
        let mut data = Vec::with_capacity(ts.len() * dim);
        for &t in ts {
            data.extend_from_slice(&embed_timestep(t, dim)?.values);
        }
        let emb = Tensor::from_vec(&[ts.len(), dim], data)?;
        let h = self.time_in.forward(lv, &emb)?.silu();
        Ok(self.time_out.forward(lv, &h)?.silu())
    }

    fn check_wave_shape(&self, y: &Tensor) -> Result<()> {
        let want = [
            y.shape()[0],
            self.cfg.waveform_channels,
            self.cfg.wave_time,
            self.cfg.wave_receivers,
        ];
        if y.shape() != want {
            return Err(Error::invalid(format!(
                "waveform set {:?} does not match configured geometry {:?}",
                y.shape(),
                want
            )));
        }
        Ok(())
    }

    /// Control-branch features, one per encoder scale, finest first.
    /// Each matches that scale's spatial extent and channel width.
    pub fn encode_waveform(&self, lv: &Leaves, y: &Tensor, ts: &[usize]) -> Result<Vec<Tensor>> {
        let ctrl = self
            .ctrl
            .as_ref()
            .ok_or_else(|| Error::invalid("concat variant has no control branch"))?;
        self.check_wave_shape(y)?;
        let t_act = self.time_activation(lv, ts)?;
        self.run_ctrl(ctrl, lv, y, &t_act)
    }

    fn run_ctrl(
        &self,
        ctrl: &ControlBranch,
        lv: &Leaves,
        y: &Tensor,
        t_act: &Tensor,
    ) -> Result<Vec<Tensor>> {
        let mut h = y.clone();
        for conv in &ctrl.stem {
            h = conv.forward(lv, &h)?.silu();
        }
        let h = h.adaptive_avg_pool(self.cfg.map_height, self.cfg.map_width)?;
        let mut h = ctrl.proj.forward(lv, &h)?;
        let mut features = Vec::new();
        for (i, blocks) in ctrl.scales.iter().enumerate() {
            for blk in blocks {
                h = blk.forward(lv, &h, t_act)?;
            }
            features.push(h.clone());
            if i < ctrl.downs.len() {
                h = ctrl.downs[i].forward(lv, &h)?;
            }
        }
        Ok(features)
    }

    /// Predicts the noise component of `x_in` (shape `[N,1,H,W]`) at
    /// timesteps `ts`, conditioned on the waveform set `y`.
    pub fn forward(&self, lv: &Leaves, x_in: &Tensor, ts: &[usize], y: &Tensor) -> Result<Tensor> {
        let want = [ts.len(), 1, self.cfg.map_height, self.cfg.map_width];
        if x_in.shape() != want {
            return Err(TensorError::ShapeMismatch {
                op: "denoiser_forward",
                lhs: x_in.shape().to_vec(),
                rhs: want.to_vec(),
            }
            .into());
        }
        self.check_wave_shape(y)?;
        let t_act = self.time_activation(lv, ts)?;

        let mut h = match self.cfg.conditioning {
            Conditioning::ControlNet => self.stem.forward(lv, x_in)?,
            Conditioning::ConcatOnly => {
                let pooled = y.adaptive_avg_pool(self.cfg.map_height, self.cfg.map_width)?;
                self.stem.forward(lv, &x_in.concat_channels(&pooled)?)?
            }
        };

        let ctrl_feats = match &self.ctrl {
            Some(ctrl) => Some((self.run_ctrl(ctrl, lv, y, &t_act)?, ctrl)),
            None => None,
        };

        // Encoder; coupled features become the skip connections.
        let mut skips = Vec::new();
        for (i, blocks) in self.enc_scales.iter().enumerate() {
            for blk in blocks {
                h = blk.forward(lv, &h, &t_act)?;
            }
            if let Some((feats, ctrl)) = &ctrl_feats {
                let z = ctrl.couplers[i].forward(lv, &feats[i])?;
                h = h.add(&z)?;
            }
            skips.push(h.clone());
            if i < self.enc_downs.len() {
                h = self.enc_downs[i].forward(lv, &h)?;
            }
        }

        for blk in &self.mid {
            h = blk.forward(lv, &h, &t_act)?;
        }

        // Decoder, coarsest scale first.
        for (d, blocks) in self.dec_scales.iter().enumerate() {
            let scale = self.cfg.num_scales() - 1 - d;
            h = h.concat_channels(&skips[scale])?;
            for blk in blocks {
                h = blk.forward(lv, &h, &t_act)?;
            }
            if scale > 0 {
                h = self.dec_ups[d].forward(lv, &h.upsample_nearest2()?)?;
            }
        }

        let h = self.head_norm.forward(lv, &h)?.silu();
        Ok(self.head.forward(lv, &h)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, Streams};

    fn tiny_cfg(conditioning: Conditioning) -> DenoiserConfig {
        DenoiserConfig {
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            time_embed_dim: 16,
            blocks_per_scale: 1,
            waveform_channels: 2,
            wave_time: 32,
            wave_receivers: 8,
            map_height: 8,
            map_width: 8,
            conditioning,
        }
    }

    fn rand_wave(cfg: &DenoiserConfig, tag: &str) -> Tensor {
        let n = cfg.waveform_channels * cfg.wave_time * cfg.wave_receivers;
        Tensor::from_vec(
            &[1, cfg.waveform_channels, cfg.wave_time, cfg.wave_receivers],
            normal_vec(&mut Streams::new(4).stream(tag, &[]), n),
        )
        .unwrap()
    }

    #[test]
    fn fresh_model_ignores_condition_bitwise() {
        let cfg = tiny_cfg(Conditioning::ControlNet);
        let mut store = ParamStore::new();
        let model = Denoiser::build(cfg.clone(), &mut store, 11).unwrap();
        let lv = store.leaves(false);
        let x = Tensor::from_vec(
            &[1, 1, 8, 8],
            normal_vec(&mut Streams::new(4).stream("x", &[]), 64),
        )
        .unwrap();
        let y1 = rand_wave(&cfg, "y1");
        let y2 = rand_wave(&cfg, "y2");
        let o1 = model.forward(&lv, &x, &[5], &y1).unwrap();
        let o2 = model.forward(&lv, &x, &[5], &y2).unwrap();
        assert_eq!(o1.data(), o2.data());
    }

    #[test]
    fn perturbed_couplers_make_condition_matter() {
        let cfg = tiny_cfg(Conditioning::ControlNet);
        let mut store = ParamStore::new();
        let model = Denoiser::build(cfg.clone(), &mut store, 11).unwrap();
        for name in model.coupler_param_names(&store) {
            let id = store.ids().find(|&i| store.name(i) == name).unwrap();
            for v in store.value_mut(id) {
                *v = 0.05;
            }
        }
        let lv = store.leaves(false);
        let x = Tensor::from_vec(
            &[1, 1, 8, 8],
            normal_vec(&mut Streams::new(4).stream("x", &[]), 64),
        )
        .unwrap();
        let o1 = model.forward(&lv, &x, &[5], &rand_wave(&cfg, "y1")).unwrap();
        let o2 = model.forward(&lv, &x, &[5], &rand_wave(&cfg, "y2")).unwrap();
        let max_diff = o1
            .data()
            .iter()
            .zip(o2.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff > 1e-6, "max diff {max_diff}");
    }

    #[test]
    fn output_shape_matches_input() {
        for cond in [Conditioning::ControlNet, Conditioning::ConcatOnly] {
            let cfg = tiny_cfg(cond);
            let mut store = ParamStore::new();
            let model = Denoiser::build(cfg.clone(), &mut store, 2).unwrap();
            let lv = store.leaves(false);
            let x = Tensor::from_vec(
                &[2, 1, 8, 8],
                normal_vec(&mut Streams::new(4).stream("xs", &[]), 128),
            )
            .unwrap();
            let n = 2 * cfg.waveform_channels * cfg.wave_time * cfg.wave_receivers;
            let y = Tensor::from_vec(
                &[2, cfg.waveform_channels, cfg.wave_time, cfg.wave_receivers],
                normal_vec(&mut Streams::new(4).stream("ys", &[]), n),
            )
            .unwrap();
            let out = model.forward(&lv, &x, &[3, 9], &y).unwrap();
            assert_eq!(out.shape(), &[2, 1, 8, 8]);
        }
    }

    #[test]
    fn control_features_match_scale_shapes() {
        let cfg = tiny_cfg(Conditioning::ControlNet);
        let mut store = ParamStore::new();
        let model = Denoiser::build(cfg.clone(), &mut store, 7).unwrap();
        let lv = store.leaves(false);
        let y = rand_wave(&cfg, "enc");
        let feats = model.encode_waveform(&lv, &y, &[4]).unwrap();
        assert_eq!(feats.len(), 2);
        assert_eq!(feats[0].shape(), &[1, 8, 8, 8]);
        assert_eq!(feats[1].shape(), &[1, 16, 4, 4]);
    }

    #[test]
    fn geometry_mismatch_is_error() {
        let cfg = tiny_cfg(Conditioning::ControlNet);
        let mut store = ParamStore::new();
        let model = Denoiser::build(cfg, &mut store, 7).unwrap();
        let lv = store.leaves(false);
        let y = Tensor::zeros(&[1, 2, 16, 8]);
        assert!(model.encode_waveform(&lv, &y, &[1]).is_err());
    }

    #[test]
    fn coupler_gradients_flow_despite_zero_init() {
        let cfg = tiny_cfg(Conditioning::ControlNet);
        let mut store = ParamStore::new();
        let model = Denoiser::build(cfg.clone(), &mut store, 11).unwrap();
        let lv = store.leaves(true);
        let x = Tensor::from_vec(
            &[1, 1, 8, 8],
            normal_vec(&mut Streams::new(4).stream("gx", &[]), 64),
        )
        .unwrap();
        let y = rand_wave(&cfg, "gy");
        let out = model.forward(&lv, &x, &[5], &y).unwrap();
        out.square().mean().backward().unwrap();
        let coupler_names = model.coupler_param_names(&store);
        let weight_name = coupler_names
            .iter()
            .find(|n| n.ends_with("couple.0.weight"))
            .unwrap();
        let id = store.ids().find(|&i| store.name(i) == *weight_name).unwrap();
        let g = lv.get(id).grad().unwrap();
        assert!(
            g.iter().any(|v| v.abs() > 0.0),
            "coupler weight gradient identically zero"
        );
    }

    #[test]
    fn default_config_parameter_budget() {
        let cfg = DenoiserConfig::default();
        let mut store = ParamStore::new();
        Denoiser::build(cfg, &mut store, 0).unwrap();
        let total = store.total_params();
        eprintln!("default config parameter count: {total}");
        assert!(
            total < 2_000_000,
            "default config has {total} parameters, budget is 2M"
        );
    }
}
