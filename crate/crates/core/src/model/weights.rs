use rand::Rng;

use super::ModelConfig;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// Which training stage may update a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    Gru,
    ShapeDecoder,
    PoseDecoder,
    Uncertainty,
}

/// Fully connected layer, `y = x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[1, fan_out]),
        }
    }
}

/// Input (`w_*`: feat x hidden), recurrent (`u_*`: hidden x hidden) and bias
/// terms of the update (`z`), reset (`r`) and candidate (`n`) gates.
#[derive(Debug, Clone, PartialEq)]
pub struct GruWeights {
    pub w_z: Tensor,
    pub w_r: Tensor,
    pub w_n: Tensor,
    pub u_z: Tensor,
    pub u_r: Tensor,
    pub u_n: Tensor,
    pub b_z: Tensor,
    pub b_r: Tensor,
    pub b_n: Tensor,
}

/// Every learnable tensor of the estimator, including the log-variances
/// `s_cd` and `s_p` that weight the joint loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub encoder1: Vec<Dense>,
    pub encoder2: Vec<Dense>,
    pub gru: GruWeights,
    pub shape_decoder: Vec<Dense>,
    pub pose_decoder: Vec<Dense>,
    pub s_cd: Tensor,
    pub s_p: Tensor,
}

/// Tape handles mirroring [`ModelWeights`].
#[derive(Debug, Clone)]
pub struct BoundWeights {
    pub encoder1: Vec<(Var, Var)>,
    pub encoder2: Vec<(Var, Var)>,
    pub gru: BoundGru,
    pub shape_decoder: Vec<(Var, Var)>,
    pub pose_decoder: Vec<(Var, Var)>,
    pub s_cd: Var,
    pub s_p: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundGru {
    pub w_z: Var,
    pub w_r: Var,
    pub w_n: Var,
    pub u_z: Var,
    pub u_r: Var,
    pub u_n: Var,
    pub b_z: Var,
    pub b_r: Var,
    pub b_n: Var,
}

impl BoundWeights {
    /// Handles in canonical parameter order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        let layers = |out: &mut Vec<Var>, ls: &[(Var, Var)]| {
            for &(w, b) in ls {
                out.push(w);
                out.push(b);
            }
        };
        layers(&mut out, &self.encoder1);
        layers(&mut out, &self.encoder2);
        let g = &self.gru;
        out.extend([g.w_z, g.w_r, g.w_n, g.u_z, g.u_r, g.u_n, g.b_z, g.b_r, g.b_n]);
        layers(&mut out, &self.shape_decoder);
        layers(&mut out, &self.pose_decoder);
        out.push(self.s_cd);
        out.push(self.s_p);
        out
    }
}

fn layer_dims(input: usize, hidden: &[usize], output: Option<usize>) -> Vec<(usize, usize)> {
    let mut widths = vec![input];
    widths.extend_from_slice(hidden);
    widths.extend(output);
    widths.windows(2).map(|w| (w[0], w[1])).collect()
}

const GRU_NAMES: [&str; 9] = ["w_z", "w_r", "w_n", "u_z", "u_r", "u_n", "b_z", "b_r", "b_n"];

impl ModelWeights {
    /// All-zero weights shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (f, h) = (config.feat_dim(), config.hidden_dim);
        let dense = |dims: Vec<(usize, usize)>| dims.into_iter().map(|(i, o)| Dense::zeros(i, o)).collect();
        Ok(Self {
            encoder1: dense(layer_dims(3, &config.encoder1, None)),
            encoder2: dense(layer_dims(2 * config.global1_dim(), &config.encoder2, None)),
            gru: GruWeights {
                w_z: Tensor::zeros(&[f, h]),
                w_r: Tensor::zeros(&[f, h]),
                w_n: Tensor::zeros(&[f, h]),
                u_z: Tensor::zeros(&[h, h]),
                u_r: Tensor::zeros(&[h, h]),
                u_n: Tensor::zeros(&[h, h]),
                b_z: Tensor::zeros(&[1, h]),
                b_r: Tensor::zeros(&[1, h]),
                b_n: Tensor::zeros(&[1, h]),
            },
            shape_decoder: dense(layer_dims(h, &config.shape_decoder, Some(3 * config.n_out))),
            pose_decoder: dense(layer_dims(h, &config.pose_decoder, Some(4))),
            s_cd: Tensor::zeros(&[1, 1]),
            s_p: Tensor::zeros(&[1, 1]),
            config: config.clone(),
        })
    }

    /// Glorot-uniform matrices, zero biases, unit uncertainty weights.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut rng = rng_for(seed, 0x1417);
        for (name, _, t) in w.named_tensors_mut() {
            let shape = t.shape().to_vec();
            let is_matrix = !name.ends_with(".bias") && !name.starts_with("gru.b_") && !name.starts_with("uncertainty");
            if is_matrix {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                for v in t.data_mut() {
                    *v = rng.random_range(-limit..limit);
                }
            }
        }
        Ok(w)
    }

    /// `(name, group, tensor)` in canonical order.
    pub fn named_tensors(&self) -> Vec<(String, ParamGroup, &Tensor)> {
        let mut out = Vec::new();
        fn layers<'t>(out: &mut Vec<(String, ParamGroup, &'t Tensor)>, prefix: &str, g: ParamGroup, ls: &'t [Dense]) {
            for (i, d) in ls.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), g, &d.weight));
                out.push((format!("{prefix}.{i}.bias"), g, &d.bias));
            }
        }
        layers(&mut out, "encoder1", ParamGroup::Encoder, &self.encoder1);
        layers(&mut out, "encoder2", ParamGroup::Encoder, &self.encoder2);
        let g = &self.gru;
        for (name, t) in GRU_NAMES.iter().zip([&g.w_z, &g.w_r, &g.w_n, &g.u_z, &g.u_r, &g.u_n, &g.b_z, &g.b_r, &g.b_n]) {
            out.push((format!("gru.{name}"), ParamGroup::Gru, t));
        }
        layers(&mut out, "shape_decoder", ParamGroup::ShapeDecoder, &self.shape_decoder);
        layers(&mut out, "pose_decoder", ParamGroup::PoseDecoder, &self.pose_decoder);
        out.push(("uncertainty.s_cd".into(), ParamGroup::Uncertainty, &self.s_cd));
        out.push(("uncertainty.s_p".into(), ParamGroup::Uncertainty, &self.s_p));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, ParamGroup, &mut Tensor)> {
        let mut out = Vec::new();
        fn layers<'t>(out: &mut Vec<(String, ParamGroup, &'t mut Tensor)>, prefix: &str, g: ParamGroup, ls: &'t mut [Dense]) {
            for (i, d) in ls.iter_mut().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), g, &mut d.weight));
                out.push((format!("{prefix}.{i}.bias"), g, &mut d.bias));
            }
        }
        layers(&mut out, "encoder1", ParamGroup::Encoder, &mut self.encoder1);
        layers(&mut out, "encoder2", ParamGroup::Encoder, &mut self.encoder2);
        let g = &mut self.gru;
        let gru = [
            &mut g.w_z, &mut g.w_r, &mut g.w_n, &mut g.u_z, &mut g.u_r, &mut g.u_n, &mut g.b_z, &mut g.b_r, &mut g.b_n,
        ];
        for (name, t) in GRU_NAMES.iter().zip(gru) {
            out.push((format!("gru.{name}"), ParamGroup::Gru, t));
        }
        layers(&mut out, "shape_decoder", ParamGroup::ShapeDecoder, &mut self.shape_decoder);
        layers(&mut out, "pose_decoder", ParamGroup::PoseDecoder, &mut self.pose_decoder);
        out.push(("uncertainty.s_cd".into(), ParamGroup::Uncertainty, &mut self.s_cd));
        out.push(("uncertainty.s_p".into(), ParamGroup::Uncertainty, &mut self.s_p));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, _, t)| t.is_finite())
    }

    pub fn sigma_cd(&self) -> f64 {
        (self.s_cd.data()[0] / 2.0).exp()
    }

    pub fn sigma_p(&self) -> f64 {
        (self.s_p.data()[0] / 2.0).exp()
    }

    /// Replaces every tensor from `(name, tensor)` pairs that must follow the
    /// canonical order and shapes exactly.
    pub fn from_named(config: &ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut w = Self::zeros(config).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        let slots = w.named_tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                tensors.len()
            )));
        }
        for ((name, _, slot), (got_name, t)) in slots.into_iter().zip(tensors) {
            if name != got_name {
                return Err(Error::CorruptCheckpoint(format!("expected tensor {name}, found {got_name}")));
            }
            if slot.shape() != t.shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        Ok(w)
    }

    /// Records every tensor on `tape`: trainable groups as parameters, the
    /// rest as constants. Nothing is copied.
    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>, trainable: impl Fn(ParamGroup) -> bool) -> Result<BoundWeights> {
        let mut leaf = |t: &'a Tensor, g: ParamGroup| if trainable(g) { tape.param(t) } else { tape.constant_ref(t) };
        let mut layers = |ls: &'a [Dense], g: ParamGroup| -> Result<Vec<(Var, Var)>> {
            ls.iter().map(|d| Ok((leaf(&d.weight, g)?, leaf(&d.bias, g)?))).collect()
        };
        let encoder1 = layers(&self.encoder1, ParamGroup::Encoder)?;
        let encoder2 = layers(&self.encoder2, ParamGroup::Encoder)?;
        drop(layers);
        let g = &self.gru;
        let gg = ParamGroup::Gru;
        let gru = BoundGru {
            w_z: leaf(&g.w_z, gg)?,
            w_r: leaf(&g.w_r, gg)?,
            w_n: leaf(&g.w_n, gg)?,
            u_z: leaf(&g.u_z, gg)?,
            u_r: leaf(&g.u_r, gg)?,
            u_n: leaf(&g.u_n, gg)?,
            b_z: leaf(&g.b_z, gg)?,
            b_r: leaf(&g.b_r, gg)?,
            b_n: leaf(&g.b_n, gg)?,
        };
        let mut layers = |ls: &'a [Dense], g: ParamGroup| -> Result<Vec<(Var, Var)>> {
            ls.iter().map(|d| Ok((leaf(&d.weight, g)?, leaf(&d.bias, g)?))).collect()
        };
        let shape_decoder = layers(&self.shape_decoder, ParamGroup::ShapeDecoder)?;
        let pose_decoder = layers(&self.pose_decoder, ParamGroup::PoseDecoder)?;
        drop(layers);
        Ok(BoundWeights {
            encoder1,
            encoder2,
            gru,
            shape_decoder,
            pose_decoder,
            s_cd: leaf(&self.s_cd, ParamGroup::Uncertainty)?,
            s_p: leaf(&self.s_p, ParamGroup::Uncertainty)?,
        })
    }

    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape<'a>) -> Result<BoundWeights> {
        self.bind(tape, |_| false)
    }
}
