//! Transformer inference as a stream of matrix kernels.
//!
//! Every layer is decomposed GPT-style into six matmul roles: the fused QKV
//! projection, attention scores, attention context, output projection and
//! the two FFN projections. Softmax, normalization and activations are not
//! matmuls and are left out. Batch size is always 1.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mapping::GemmShape;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmConfig {
    pub name: String,
    pub layers: u32,
    pub hidden: u64,
    pub heads: u32,
    pub precision: u32,
}

impl LlmConfig {
    pub fn new(name: &str, layers: u32, hidden: u64, heads: u32, precision: u32) -> Result<Self, LlmError> {
        if layers == 0 || hidden == 0 || heads == 0 || precision == 0 {
            return Err(LlmError::Invalid("all parameters must be positive".into()));
        }
        if !hidden.is_multiple_of(u64::from(heads)) {
            return Err(LlmError::Invalid(format!(
                "hidden size {hidden} is not divisible by {heads} heads"
            )));
        }
        Ok(LlmConfig {
            name: name.to_string(),
            layers,
            hidden,
            heads,
            precision,
        })
    }

    pub fn head_dim(&self) -> u64 {
        self.hidden / u64::from(self.heads)
    }

    pub fn with_precision(&self, precision: u32) -> Self {
        LlmConfig {
            precision,
            ..self.clone()
        }
    }
}

/// Built-in models, all int8. The Llama entries use plain multi-head
/// attention at their head counts; grouped KV heads are not modeled.
pub const MODEL_NAMES: [&str; 4] = ["gpt3-6.7b", "gpt3-175b", "llama3-8b", "llama3-70b"];

pub fn parse_model(name: &str) -> Result<LlmConfig, LlmError> {
    let (layers, hidden, heads) = match name.to_ascii_lowercase().as_str() {
        "gpt3-6.7b" => (32, 4096, 32),
        "gpt3-175b" => (96, 12288, 96),
        "llama3-8b" => (32, 4096, 32),
        "llama3-70b" => (80, 8192, 64),
        _ => return Err(LlmError::UnknownModel(name.to_string())),
    };
    LlmConfig::new(name, layers, hidden, heads, 8)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prefill,
    Decode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Qkv,
    Score,
    Context,
    OutProj,
    FfnUp,
    FfnDown,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Qkv,
        Role::Score,
        Role::Context,
        Role::OutProj,
        Role::FfnUp,
        Role::FfnDown,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Role::Qkv => "qkv",
            Role::Score => "score",
            Role::Context => "context",
            Role::OutProj => "out_proj",
            Role::FfnUp => "ffn_up",
            Role::FfnDown => "ffn_down",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Prefill => "prefill",
            Stage::Decode => "decode",
        })
    }
}

/// How the attention kernels of the heads are issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    /// One kernel per head, run back to back.
    #[default]
    PerHead,
    /// The heads stacked along M into a single kernel.
    Batched,
}

impl FromStr for AttentionMode {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, LlmError> {
        match s {
            "per_head" | "per-head" => Ok(AttentionMode::PerHead),
            "batched" => Ok(AttentionMode::Batched),
            _ => Err(LlmError::Invalid(format!("attention mode `{s}`"))),
        }
    }
}

/// One kernel of the stream, executed `count` times in a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Kernel {
    pub shape: GemmShape,
    pub stage: Stage,
    pub layer: u32,
    pub role: Role,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct KernelStream {
    pub kernels: Vec<Kernel>,
}

impl KernelStream {
    pub fn macs(&self) -> u64 {
        self.kernels.iter().map(|k| k.shape.macs() * k.count).sum()
    }

    /// Executions of each distinct shape.
    pub fn shape_counts(&self) -> BTreeMap<GemmShape, u64> {
        let mut out = BTreeMap::new();
        for k in &self.kernels {
            *out.entry(k.shape).or_insert(0) += k.count;
        }
        out
    }

    pub fn extend(&mut self, other: KernelStream) {
        self.kernels.extend(other.kernels);
    }

    pub const CSV_COLUMNS: [&'static str; 8] =
        ["stage", "layer", "role", "m", "k", "n", "precision", "count"];

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_COLUMNS).expect("in-memory write");
        for k in &self.kernels {
            w.write_record([
                k.stage.to_string(),
                k.layer.to_string(),
                k.role.name().to_string(),
                k.shape.m.to_string(),
                k.shape.k.to_string(),
                k.shape.n.to_string(),
                k.shape.precision.to_string(),
                k.count.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

/// Kernels of one layer with `m` query rows attending over `ctx` keys.
fn layer(cfg: &LlmConfig, stage: Stage, layer: u32, m: u64, ctx: u64, mode: AttentionMode) -> Vec<Kernel> {
    let (h, d, p) = (cfg.hidden, cfg.head_dim(), cfg.precision);
    let heads = u64::from(cfg.heads);
    let kernel = |role, m, k, n, count| Kernel {
        shape: GemmShape::new(m, k, n, p),
        stage,
        layer,
        role,
        count,
    };
    let (am, ac) = match mode {
        AttentionMode::PerHead => (m, heads),
        AttentionMode::Batched => (m * heads, 1),
    };
    vec![
        kernel(Role::Qkv, m, h, 3 * h, 1),
        kernel(Role::Score, am, d, ctx, ac),
        kernel(Role::Context, am, ctx, d, ac),
        kernel(Role::OutProj, m, h, h, 1),
        kernel(Role::FfnUp, m, h, 4 * h, 1),
        kernel(Role::FfnDown, m, 4 * h, h, 1),
    ]
}

/// The prompt of `seq` tokens processed in one pass.
pub fn prefill_kernels(cfg: &LlmConfig, seq: u64, mode: AttentionMode) -> KernelStream {
    assert!(seq >= 1, "prefill needs at least one token");
    KernelStream {
        kernels: (0..cfg.layers)
            .flat_map(|l| layer(cfg, Stage::Prefill, l, seq, seq, mode))
            .collect(),
    }
}

/// One generated token attending over `context_len` cached keys.
pub fn decode_kernels(cfg: &LlmConfig, context_len: u64, mode: AttentionMode) -> KernelStream {
    assert!(context_len >= 1, "decode needs a non-empty context");
    KernelStream {
        kernels: (0..cfg.layers)
            .flat_map(|l| layer(cfg, Stage::Decode, l, 1, context_len, mode))
            .collect(),
    }
}

/// Matmul MACs of a forward pass of `m` tokens over `ctx` keys.
pub fn transformer_macs(cfg: &LlmConfig, m: u64, ctx: u64) -> u64 {
    let h = cfg.hidden;
    u64::from(cfg.layers) * (12 * m * h * h + 2 * m * ctx * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScenarioSpec {
    pub name: &'static str,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

pub const SCENARIOS: [ScenarioSpec; 2] = [
    ScenarioSpec {
        name: "code_generation",
        prompt_tokens: 1024,
        output_tokens: 4096,
    },
    ScenarioSpec {
        name: "context_understanding",
        prompt_tokens: 8192,
        output_tokens: 256,
    },
];

pub fn scenario_preset(name: &str) -> Result<ScenarioSpec, LlmError> {
    SCENARIOS
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| LlmError::UnknownScenario(name.to_string()))
}

/// A prefill pass followed by token-by-token decoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub model: LlmConfig,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub attention: AttentionMode,
}

impl Scenario {
    pub fn new(model: &LlmConfig, prompt_tokens: u64, output_tokens: u64, attention: AttentionMode) -> Self {
        assert!(
            prompt_tokens >= 1 && output_tokens >= 1,
            "token counts must be positive"
        );
        Scenario {
            model: model.clone(),
            prompt_tokens,
            output_tokens,
            attention,
        }
    }

    pub fn prefill(&self) -> KernelStream {
        prefill_kernels(&self.model, self.prompt_tokens, self.attention)
    }

    /// Context seen by decode step `i` (0-based): the prompt, the tokens
    /// generated so far and the new token itself.
    pub fn decode_context(&self, i: u64) -> u64 {
        self.prompt_tokens + i + 1
    }

    pub fn decode_step(&self, i: u64) -> KernelStream {
        decode_kernels(&self.model, self.decode_context(i), self.attention)
    }

    /// Distinct shapes of the whole scenario with their execution counts.
    pub fn shape_counts(&self) -> BTreeMap<GemmShape, u64> {
        let mut out = self.prefill().shape_counts();
        for i in 0..self.output_tokens {
            for (s, c) in self.decode_step(i).shape_counts() {
                *out.entry(s).or_insert(0) += c;
            }
        }
        out
    }

    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.output_tokens
    }

    /// Tokens per second for a scenario taking `total_ns`.
    pub fn throughput(&self, total_ns: f64) -> f64 {
        self.total_tokens() as f64 / (total_ns * 1e-9)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn has(stream: &KernelStream, role: Role, m: u64, k: u64, n: u64) -> bool {
        stream
            .kernels
            .iter()
            .any(|x| x.role == role && (x.shape.m, x.shape.k, x.shape.n) == (m, k, n))
    }

    #[test]
    fn model_presets() {
        let g = parse_model("gpt3-175b").unwrap();
        assert_eq!((g.layers, g.hidden, g.heads, g.precision), (96, 12288, 96, 8));
        let l = parse_model("llama3-8b").unwrap();
        assert_eq!((l.layers, l.hidden, l.heads), (32, 4096, 32));
        let l = parse_model("llama3-70b").unwrap();
        assert_eq!((l.layers, l.hidden, l.heads), (80, 8192, 64));
        assert_eq!(parse_model("gpt3-6.7b").unwrap().hidden, 4096);
        assert!(parse_model("bert").is_err());
        let c = LlmConfig::new("tiny", 2, 64, 4, 4).unwrap();
        assert_eq!(c.head_dim(), 16);
        assert!(LlmConfig::new("odd", 2, 66, 4, 8).is_err());
    }

    #[test]
    fn prefill_contains_the_projection_gemm() {
        let g = parse_model("gpt3-175b").unwrap();
        let s = prefill_kernels(&g, 1024, AttentionMode::PerHead);
        assert!(has(&s, Role::OutProj, 1024, 12288, 12288));
        assert!(has(&s, Role::Score, 1024, 128, 1024));
        assert_eq!(s.kernels.len(), 96 * 6);
    }

    #[test]
    fn decode_contains_the_ffn_down_gemv() {
        let g = parse_model("gpt3-175b").unwrap();
        let s = decode_kernels(&g, 2048, AttentionMode::PerHead);
        assert!(has(&s, Role::FfnDown, 1, 49152, 12288));
        assert!(s
            .kernels
            .iter()
            .all(|k| k.shape.m == 1 && k.stage == Stage::Decode));
        assert_eq!(
            s.kernels.len(),
            prefill_kernels(&g, 4, AttentionMode::PerHead).kernels.len()
        );
    }

    #[test]
    fn degenerate_lengths() {
        let c = LlmConfig::new("tiny", 1, 64, 4, 8).unwrap();
        let p = prefill_kernels(&c, 1, AttentionMode::PerHead);
        assert!(p.kernels.iter().all(|k| k.shape.is_gemv()));
        let d = decode_kernels(&c, 1, AttentionMode::PerHead);
        let score = d.kernels.iter().find(|k| k.role == Role::Score).unwrap();
        assert_eq!((score.shape.k, score.shape.n), (16, 1));
        let ctx = d.kernels.iter().find(|k| k.role == Role::Context).unwrap();
        assert_eq!(ctx.shape.k, 1);
    }

    #[test]
    fn stream_macs_match_closed_form() {
        for name in MODEL_NAMES {
            let c = parse_model(name).unwrap();
            for mode in [AttentionMode::PerHead, AttentionMode::Batched] {
                assert_eq!(
                    prefill_kernels(&c, 1024, mode).macs(),
                    transformer_macs(&c, 1024, 1024)
                );
                assert_eq!(decode_kernels(&c, 777, mode).macs(), transformer_macs(&c, 1, 777));
            }
        }
    }

    #[test]
    fn scenarios() {
        let cg = scenario_preset("code_generation").unwrap();
        assert_eq!((cg.prompt_tokens, cg.output_tokens), (1024, 4096));
        let cu = scenario_preset("context_understanding").unwrap();
        assert_eq!((cu.prompt_tokens, cu.output_tokens), (8192, 256));

        let c = LlmConfig::new("tiny", 2, 64, 4, 8).unwrap();
        let s = Scenario::new(&c, 1, 1, AttentionMode::PerHead);
        assert_eq!(s.decode_context(0), 2);
        let total: u64 = s.shape_counts().iter().map(|(sh, n)| sh.macs() * n).sum();
        assert_eq!(total, transformer_macs(&c, 1, 1) + transformer_macs(&c, 1, 2));
        assert_eq!(s.throughput(1e9), 2.0);
    }

    #[test]
    fn csv_lists_every_kernel() {
        let c = LlmConfig::new("tiny", 2, 64, 4, 8).unwrap();
        let csv = prefill_kernels(&c, 8, AttentionMode::PerHead).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "stage,layer,role,m,k,n,precision,count");
        assert_eq!(lines.len(), 1 + 12);
        assert_eq!(lines[2], "prefill,0,score,8,16,8,8,4");
    }
}
