use super::layers::{conv_output_side, Conv, GatedAttention, Linear, Mlp, Scalar};
use crate::concept::Concept;
use crate::error::{Error, Result};
use ndarray::{ArrayViewD, ArrayViewMutD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Shared patch embedding width `d`.
    pub embed_dim: usize,
    /// Width `L` of each concept subspace.
    pub concept_dim: usize,
    /// Hidden width of every gated-attention module.
    pub attn_hidden: usize,
    pub num_classes: usize,
    /// Output channels of the four stride-2 conv blocks.
    pub conv_channels: [usize; 4],
    /// Hidden width of the concept projections.
    pub proj_hidden: usize,
    /// Hidden width of the adversary heads.
    pub adv_hidden: usize,
    pub patch_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 256,
            concept_dim: 64,
            attn_hidden: 128,
            num_classes: 4,
            conv_channels: [16, 32, 64, 128],
            proj_hidden: 256,
            adv_hidden: 64,
            patch_size: 64,
        }
    }
}

impl ModelConfig {
    /// Width of a fused slice vector: four concatenated subspaces.
    pub fn fused_dim(&self) -> usize {
        4 * self.concept_dim
    }

    pub fn num_logits(&self) -> usize {
        self.num_classes - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation("num_classes must be at least 2"));
        }
        let dims = [
            ("embed_dim", self.embed_dim),
            ("concept_dim", self.concept_dim),
            ("attn_hidden", self.attn_hidden),
            ("proj_hidden", self.proj_hidden),
            ("adv_hidden", self.adv_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::validation(format!("{name} must be positive")));
        }
        if self.conv_channels.contains(&0) {
            return Err(Error::validation("conv channels must be positive"));
        }
        if self.patch_size == 0 {
            return Err(Error::validation("patch size must be positive"));
        }
        Ok(())
    }

    /// Spatial side of the last conv feature map.
    pub fn final_feature_side(&self) -> usize {
        (0..4).fold(self.patch_size, |n, _| conv_output_side(n))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<F> {
    pub convs: Vec<Conv<F>>,
    pub fc: Linear<F>,
}

/// Every learnable tensor, grouped by branch.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<F> {
    pub phi: Encoder<F>,
    /// Indexed by `Concept::index()`.
    pub proj: Vec<Mlp<F>>,
    pub attn1: Vec<GatedAttention<F>>,
    pub attn2: GatedAttention<F>,
    pub task_head: Linear<F>,
    /// Indexed by predefined concept (sh, nu, ao).
    pub concept_head: Vec<Linear<F>>,
    pub adv_head: Vec<Mlp<F>>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(4);
        let mut cin = 1;
        for &cout in &config.conv_channels {
            convs.push(Conv::init(cin, cout, &mut rng));
            cin = cout;
        }
        let phi = Encoder {
            convs,
            fc: Linear::init_relu(cin, config.embed_dim, &mut rng),
        };
        let l = config.concept_dim;
        let k1 = config.num_logits();
        let proj = (0..4)
            .map(|_| Mlp::init(config.embed_dim, config.proj_hidden, l, &mut rng))
            .collect();
        let attn1 = (0..4)
            .map(|_| GatedAttention::init(l, config.attn_hidden, &mut rng))
            .collect();
        let attn2 = GatedAttention::init(config.fused_dim(), config.attn_hidden, &mut rng);
        let task_head = Linear::init(config.fused_dim(), k1, &mut rng);
        let concept_head = (0..3).map(|_| Linear::init(l, k1, &mut rng)).collect();
        let adv_head = (0..3)
            .map(|_| Mlp::init(l, config.adv_hidden, k1, &mut rng))
            .collect();
        Ok(ModelParams {
            phi,
            proj,
            attn1,
            attn2,
            task_head,
            concept_head,
            adv_head,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            phi: Encoder {
                convs: self.phi.convs.iter().map(Conv::zeros_like).collect(),
                fc: self.phi.fc.zeros_like(),
            },
            proj: self.proj.iter().map(Mlp::zeros_like).collect(),
            attn1: self.attn1.iter().map(GatedAttention::zeros_like).collect(),
            attn2: self.attn2.zeros_like(),
            task_head: self.task_head.zeros_like(),
            concept_head: self.concept_head.iter().map(Linear::zeros_like).collect(),
            adv_head: self.adv_head.iter().map(Mlp::zeros_like).collect(),
        }
    }

    /// Named tensors in a fixed order. Names are `group.sub.tensor`.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        for (i, c) in self.phi.convs.iter().enumerate() {
            out.push((format!("phi.conv{i}.weight"), c.weight.view().into_dyn()));
            out.push((format!("phi.conv{i}.bias"), c.bias.view().into_dyn()));
        }
        push_linear(&mut out, "phi.fc", &self.phi.fc);
        for c in Concept::ALL {
            push_mlp(&mut out, &format!("proj.{c}"), &self.proj[c.index()]);
        }
        for c in Concept::ALL {
            push_attention(&mut out, &format!("attn1.{c}"), &self.attn1[c.index()]);
        }
        push_attention(&mut out, "attn2", &self.attn2);
        push_linear(&mut out, "task_head", &self.task_head);
        for c in Concept::PREDEFINED {
            push_linear(
                &mut out,
                &format!("concept_head.{c}"),
                &self.concept_head[c.index()],
            );
        }
        for c in Concept::PREDEFINED {
            push_mlp(
                &mut out,
                &format!("adv_head.{c}"),
                &self.adv_head[c.index()],
            );
        }
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = Vec::new();
        for (i, c) in self.phi.convs.iter_mut().enumerate() {
            out.push((
                format!("phi.conv{i}.weight"),
                c.weight.view_mut().into_dyn(),
            ));
            out.push((format!("phi.conv{i}.bias"), c.bias.view_mut().into_dyn()));
        }
        push_linear_mut(&mut out, "phi.fc", &mut self.phi.fc);
        for (c, m) in Concept::ALL.iter().zip(self.proj.iter_mut()) {
            push_mlp_mut(&mut out, &format!("proj.{c}"), m);
        }
        for (c, a) in Concept::ALL.iter().zip(self.attn1.iter_mut()) {
            push_attention_mut(&mut out, &format!("attn1.{c}"), a);
        }
        push_attention_mut(&mut out, "attn2", &mut self.attn2);
        push_linear_mut(&mut out, "task_head", &mut self.task_head);
        for (c, l) in Concept::PREDEFINED.iter().zip(self.concept_head.iter_mut()) {
            push_linear_mut(&mut out, &format!("concept_head.{c}"), l);
        }
        for (c, m) in Concept::PREDEFINED.iter().zip(self.adv_head.iter_mut()) {
            push_mlp_mut(&mut out, &format!("adv_head.{c}"), m);
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Squared L2 norm of every tensor whose name starts with `prefix`.
    pub fn group_sq_norm(&self, prefix: &str) -> f64 {
        self.tensors()
            .iter()
            .filter(|(name, _)| name.starts_with(prefix))
            .flat_map(|(_, t)| {
                t.iter()
                    .map(|v| v.as_f64() * v.as_f64())
                    .collect::<Vec<_>>()
            })
            .sum()
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        let lin = |l: &Linear<F>| Linear {
            weight: l.weight.mapv(|v| G::c(v.as_f64())),
            bias: l.bias.mapv(|v| G::c(v.as_f64())),
        };
        let mlp = |m: &Mlp<F>| Mlp {
            l1: lin(&m.l1),
            l2: lin(&m.l2),
        };
        let att = |a: &GatedAttention<F>| GatedAttention {
            v: lin(&a.v),
            u: lin(&a.u),
            w: a.w.mapv(|v| G::c(v.as_f64())),
        };
        ModelParams {
            phi: Encoder {
                convs: self
                    .phi
                    .convs
                    .iter()
                    .map(|c| Conv {
                        weight: c.weight.mapv(|v| G::c(v.as_f64())),
                        bias: c.bias.mapv(|v| G::c(v.as_f64())),
                    })
                    .collect(),
                fc: lin(&self.phi.fc),
            },
            proj: self.proj.iter().map(mlp).collect(),
            attn1: self.attn1.iter().map(att).collect(),
            attn2: att(&self.attn2),
            task_head: lin(&self.task_head),
            concept_head: self.concept_head.iter().map(lin).collect(),
            adv_head: self.adv_head.iter().map(mlp).collect(),
        }
    }
}

/// A named collection of trainable tensors.
pub trait ParamSet<F>: Clone {
    fn zeros_like(&self) -> Self;
    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)>;
    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)>;
}

impl<F: Scalar> ParamSet<F> for ModelParams<F> {
    fn zeros_like(&self) -> Self {
        ModelParams::zeros_like(self)
    }

    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        ModelParams::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        ModelParams::tensors_mut(self)
    }
}

impl<F: Scalar> ParamSet<F> for Mlp<F> {
    fn zeros_like(&self) -> Self {
        Mlp::zeros_like(self)
    }

    fn tensors(&self) -> Vec<(String, ArrayViewD<'_, F>)> {
        let mut out = Vec::new();
        push_mlp(&mut out, "mlp", self);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, F>)> {
        let mut out = Vec::new();
        push_mlp_mut(&mut out, "mlp", self);
        out
    }
}

type Named<'a, F> = Vec<(String, ArrayViewD<'a, F>)>;
type NamedMut<'a, F> = Vec<(String, ArrayViewMutD<'a, F>)>;

fn push_linear<'a, F>(out: &mut Named<'a, F>, prefix: &str, l: &'a Linear<F>) {
    out.push((format!("{prefix}.weight"), l.weight.view().into_dyn()));
    out.push((format!("{prefix}.bias"), l.bias.view().into_dyn()));
}

fn push_mlp<'a, F>(out: &mut Named<'a, F>, prefix: &str, m: &'a Mlp<F>) {
    push_linear(out, &format!("{prefix}.l1"), &m.l1);
    push_linear(out, &format!("{prefix}.l2"), &m.l2);
}

fn push_attention<'a, F>(out: &mut Named<'a, F>, prefix: &str, a: &'a GatedAttention<F>) {
    push_linear(out, &format!("{prefix}.v"), &a.v);
    push_linear(out, &format!("{prefix}.u"), &a.u);
    out.push((format!("{prefix}.w"), a.w.view().into_dyn()));
}

fn push_linear_mut<'a, F>(out: &mut NamedMut<'a, F>, prefix: &str, l: &'a mut Linear<F>) {
    out.push((format!("{prefix}.weight"), l.weight.view_mut().into_dyn()));
    out.push((format!("{prefix}.bias"), l.bias.view_mut().into_dyn()));
}

fn push_mlp_mut<'a, F>(out: &mut NamedMut<'a, F>, prefix: &str, m: &'a mut Mlp<F>) {
    push_linear_mut(out, &format!("{prefix}.l1"), &mut m.l1);
    push_linear_mut(out, &format!("{prefix}.l2"), &mut m.l2);
}

fn push_attention_mut<'a, F>(
    out: &mut NamedMut<'a, F>,
    prefix: &str,
    a: &'a mut GatedAttention<F>,
) {
    push_linear_mut(out, &format!("{prefix}.v"), &mut a.v);
    push_linear_mut(out, &format!("{prefix}.u"), &mut a.u);
    out.push((format!("{prefix}.w"), a.w.view_mut().into_dyn()));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_unique_and_orders_agree() {
        let mut p: ModelParams<f32> = ModelParams::init(&ModelConfig::default(), 0).unwrap();
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        let names_mut: Vec<String> = p.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, names_mut);
        let set: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert!(names.contains(&"proj.sh.l1.weight".to_string()));
        assert!(names.contains(&"adv_head.ao.l2.bias".to_string()));
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = ModelConfig::default();
        let p: ModelParams<f32> = ModelParams::init(&cfg, 0).unwrap();
        assert_eq!(p.task_head.weight.dim(), (256, 3));
        assert_eq!(p.proj[3].l2.weight.dim(), (256, 64));
        assert_eq!(p.attn2.v.weight.dim(), (256, 128));
        assert_eq!(p.adv_head[0].l1.weight.dim(), (64, 64));
        assert_eq!(cfg.final_feature_side(), 4);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::default();
        let a: ModelParams<f32> = ModelParams::init(&cfg, 3).unwrap();
        let b: ModelParams<f32> = ModelParams::init(&cfg, 3).unwrap();
        let c: ModelParams<f32> = ModelParams::init(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = ModelConfig {
            num_classes: 1,
            ..ModelConfig::default()
        };
        assert!(ModelParams::<f32>::init(&cfg, 0).is_err());
    }
}
