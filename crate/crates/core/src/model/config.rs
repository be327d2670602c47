use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_dec_layers: usize,
    pub n_heads: usize,
    pub d_ffn: usize,
    pub vocab_size: usize,
    /// Width of the raw RoI feature vectors.
    pub d_visual: usize,
    /// Size of the detector class distribution.
    pub n_classes: usize,
    pub n_attr: usize,
    pub n_rel: usize,
    pub max_positions: usize,
    pub dropout_rate: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Fields that determine parameter shapes; `dropout_rate` is excluded.
const STRUCTURAL: [&str; 11] = [
    "d_model",
    "n_enc_layers",
    "n_dec_layers",
    "n_heads",
    "d_ffn",
    "vocab_size",
    "d_visual",
    "n_classes",
    "n_attr",
    "n_rel",
    "max_positions",
];

impl ModelConfig {
    /// Desk-scale default: d=128, 2+2 layers, 4 heads.
    pub fn desk() -> Self {
        Self {
            d_model: 128,
            n_enc_layers: 2,
            n_dec_layers: 2,
            n_heads: 4,
            d_ffn: 256,
            vocab_size: 1000,
            d_visual: 32,
            n_classes: 16,
            n_attr: 8,
            n_rel: 8,
            max_positions: 128,
            dropout_rate: 0.1,
        }
    }

    /// BART-base shaped: 6+6 layers, d=768.
    pub fn full() -> Self {
        Self {
            d_model: 768,
            n_enc_layers: 6,
            n_dec_layers: 6,
            n_heads: 12,
            d_ffn: 3072,
            vocab_size: 50265,
            d_visual: 2048,
            n_classes: 1601,
            n_attr: 401,
            n_rel: 21,
            max_positions: 1024,
            dropout_rate: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("n_enc_layers", self.n_enc_layers),
            ("n_dec_layers", self.n_dec_layers),
            ("n_heads", self.n_heads),
            ("d_ffn", self.d_ffn),
            ("vocab_size", self.vocab_size),
            ("d_visual", self.d_visual),
            ("n_classes", self.n_classes),
            ("n_attr", self.n_attr),
            ("n_rel", self.n_rel),
            ("max_positions", self.max_positions),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::usage(format!("model.{name} must be positive")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::usage(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::usage(format!(
                "model.dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Names of shape-determining fields whose values differ.
    pub fn structural_diff(&self, other: &ModelConfig) -> Vec<String> {
        let a = serde_json::to_value(self).expect("config serializes");
        let b = serde_json::to_value(other).expect("config serializes");
        STRUCTURAL
            .iter()
            .filter(|k| a[**k] != b[**k])
            .map(|k| format!("{k}: {} vs {}", a[*k], b[*k]))
            .collect()
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (d, f, v, p) = (self.d_model, self.d_ffn, self.vocab_size, self.max_positions);
        let attn = 4 * (d * d + d);
        let norm = 2 * d;
        let ffn = d * f + f + f * d + d;
        let embed = v * d + 2 * p * d + self.d_visual * d + d;
        let enc = self.n_enc_layers * (attn + 2 * norm + ffn) + norm;
        let dec = self.n_dec_layers * (2 * attn + 3 * norm + ffn) + norm;
        let heads = v
            + (d * d + d + d * self.n_classes + self.n_classes)
            + (d * d + d + d * self.n_attr + self.n_attr)
            + (2 * d * d + d + d * self.n_rel + self.n_rel);
        embed + enc + dec + heads
    }

    /// Every parameter name with its shape, in a fixed order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, f) = (self.d_model, self.d_ffn);
        let mut out: Vec<(String, Vec<usize>)> = vec![
            ("embed.tokens".into(), vec![self.vocab_size, d]),
            ("embed.enc_pos".into(), vec![self.max_positions, d]),
            ("embed.dec_pos".into(), vec![self.max_positions, d]),
            ("embed.visual.weight".into(), vec![self.d_visual, d]),
            ("embed.visual.bias".into(), vec![d]),
        ];
        let linear = |out: &mut Vec<(String, Vec<usize>)>, name: String, i: usize, o: usize| {
            out.push((format!("{name}.weight"), vec![i, o]));
            out.push((format!("{name}.bias"), vec![o]));
        };
        let norm = |out: &mut Vec<(String, Vec<usize>)>, name: String| {
            out.push((format!("{name}.gain"), vec![d]));
            out.push((format!("{name}.bias"), vec![d]));
        };
        for l in 0..self.n_enc_layers {
            let p = format!("encoder.layers.{l}");
            norm(&mut out, format!("{p}.attn_norm"));
            for proj in ["q", "k", "v", "o"] {
                linear(&mut out, format!("{p}.self_attn.{proj}"), d, d);
            }
            norm(&mut out, format!("{p}.ffn_norm"));
            linear(&mut out, format!("{p}.ffn.in"), d, f);
            linear(&mut out, format!("{p}.ffn.out"), f, d);
        }
        norm(&mut out, "encoder.final_norm".into());
        for l in 0..self.n_dec_layers {
            let p = format!("decoder.layers.{l}");
            norm(&mut out, format!("{p}.self_attn_norm"));
            for proj in ["q", "k", "v", "o"] {
                linear(&mut out, format!("{p}.self_attn.{proj}"), d, d);
            }
            norm(&mut out, format!("{p}.cross_attn_norm"));
            for proj in ["q", "k", "v", "o"] {
                linear(&mut out, format!("{p}.cross_attn.{proj}"), d, d);
            }
            norm(&mut out, format!("{p}.ffn_norm"));
            linear(&mut out, format!("{p}.ffn.in"), d, f);
            linear(&mut out, format!("{p}.ffn.out"), f, d);
        }
        norm(&mut out, "decoder.final_norm".into());
        out.push(("heads.lm.bias".into(), vec![self.vocab_size]));
        linear(&mut out, "heads.mrm.hidden".into(), d, d);
        linear(&mut out, "heads.mrm.out".into(), d, self.n_classes);
        linear(&mut out, "heads.ap.hidden".into(), d, d);
        linear(&mut out, "heads.ap.out".into(), d, self.n_attr);
        linear(&mut out, "heads.rp.hidden".into(), 2 * d, d);
        linear(&mut out, "heads.rp.out".into(), d, self.n_rel);
        out
    }
}
