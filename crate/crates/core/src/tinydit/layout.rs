use serde::{Deserialize, Serialize};

use super::config::ModelConfig;

/// A named slice of the flat parameter vector, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    /// Block name without its layer prefix, e.g. `qkv.w` for `layer1.qkv.w`.
    pub fn kind(&self) -> &str {
        match self.name.strip_prefix("layer") {
            Some(rest) => rest.split_once('.').map_or(&self.name, |(_, k)| k),
            None => &self.name,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub qkv_w: usize,
    pub qkv_b: usize,
    pub proj_w: usize,
    pub proj_b: usize,
    pub mlp1_w: usize,
    pub mlp1_b: usize,
    pub mlp2_w: usize,
    pub mlp2_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Offsets {
    pub embed_w: usize,
    pub embed_b: usize,
    pub time_w1: usize,
    pub time_b1: usize,
    pub time_w2: usize,
    pub time_b2: usize,
    pub class: usize,
    pub layers: Vec<LayerOffsets>,
    pub final_w: usize,
    pub final_b: usize,
}

/// Named-offset index of every parameter block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    total: usize,
    pub(crate) offsets: Offsets,
}

struct Builder {
    blocks: Vec<ParamBlock>,
    next: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize]) -> usize {
        let offset = self.next;
        let block = ParamBlock {
            name,
            offset,
            shape: shape.to_vec(),
        };
        self.next += block.len();
        self.blocks.push(block);
        offset
    }
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let p = cfg.patch_dim();
        let f = 2 * cfg.time_features;
        let hid = cfg.hidden();
        let mut b = Builder {
            blocks: Vec::new(),
            next: 0,
        };
        let embed_w = b.push("embed.w".into(), &[p, d]);
        let embed_b = b.push("embed.b".into(), &[d]);
        let time_w1 = b.push("time.w1".into(), &[f, d]);
        let time_b1 = b.push("time.b1".into(), &[d]);
        let time_w2 = b.push("time.w2".into(), &[d, d]);
        let time_b2 = b.push("time.b2".into(), &[d]);
        let class = b.push("class.emb".into(), &[cfg.class_count, d]);
        let layers = (0..cfg.layers)
            .map(|l| LayerOffsets {
                qkv_w: b.push(format!("layer{l}.qkv.w"), &[d, 3 * d]),
                qkv_b: b.push(format!("layer{l}.qkv.b"), &[3 * d]),
                proj_w: b.push(format!("layer{l}.proj.w"), &[d, d]),
                proj_b: b.push(format!("layer{l}.proj.b"), &[d]),
                mlp1_w: b.push(format!("layer{l}.mlp1.w"), &[d, hid]),
                mlp1_b: b.push(format!("layer{l}.mlp1.b"), &[hid]),
                mlp2_w: b.push(format!("layer{l}.mlp2.w"), &[hid, d]),
                mlp2_b: b.push(format!("layer{l}.mlp2.b"), &[d]),
            })
            .collect();
        let final_w = b.push("final.w".into(), &[d, p]);
        let final_b = b.push("final.b".into(), &[p]);
        Self {
            total: b.next,
            blocks: b.blocks,
            offsets: Offsets {
                embed_w,
                embed_b,
                time_w1,
                time_b1,
                time_w2,
                time_b2,
                class,
                layers,
                final_w,
                final_b,
            },
        }
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn get(&self, name: &str) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    /// Block containing flat index `i`.
    pub fn block_of(&self, i: usize) -> Option<&ParamBlock> {
        self.blocks.iter().find(|b| b.range().contains(&i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_tile_the_vector() {
        let cfg = ModelConfig::default();
        let layout = ParamLayout::new(&cfg);
        let mut next = 0;
        for b in layout.blocks() {
            assert_eq!(b.offset, next);
            next += b.len();
        }
        assert_eq!(next, layout.total());
        let d = 128;
        let per_layer = d * 3 * d + 3 * d + d * d + d + 2 * d * 4 * d + 4 * d + d;
        let expected = 4 * d + d + 32 * d + d + d * d + d + 8 * d + 4 * per_layer + d * 4 + 4;
        assert_eq!(layout.total(), expected);
    }

    #[test]
    fn kinds_strip_layer_prefix() {
        let layout = ParamLayout::new(&ModelConfig::default());
        assert_eq!(layout.get("layer3.mlp2.b").unwrap().kind(), "mlp2.b");
        assert_eq!(layout.get("embed.w").unwrap().kind(), "embed.w");
        assert_eq!(layout.block_of(0).unwrap().name, "embed.w");
        assert!(layout.block_of(layout.total()).is_none());
    }
}
