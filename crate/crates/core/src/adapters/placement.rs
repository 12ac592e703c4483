use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{mol_param_count, single_lora_param_count, AdapterKind, Ranks};
use crate::error::{Error, Result};

/// Which adapters a named linear layer carries.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerPlacement {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
    pub adapters: Vec<AdapterKind>,
}

impl LayerPlacement {
    fn new(name: &str, d_in: usize, d_out: usize, adapters: &[AdapterKind]) -> Self {
        Self {
            name: name.into(),
            d_in,
            d_out,
            adapters: adapters.to_vec(),
        }
    }
}

/// Declarative adapter placement over the linear layers of one block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementTable {
    pub layers: Vec<LayerPlacement>,
}

const IMAGE_STREAM: [(&str, usize, usize); 6] = [
    ("to_q", 1, 1),
    ("to_k", 1, 1),
    ("to_v", 1, 1),
    ("to_out", 1, 1),
    ("ff.proj_in", 1, 4),
    ("ff.proj_out", 4, 1),
];

const CONTEXT: [&str; 3] = ["add_q_proj", "add_k_proj", "add_v_proj"];

impl PlacementTable {
    /// Attention and feed-forward layers of width `d`, each with all three
    /// adapters.
    pub fn image_stream(d: usize) -> Self {
        Self {
            layers: IMAGE_STREAM
                .iter()
                .map(|&(n, i, o)| LayerPlacement::new(n, d * i, d * o, &AdapterKind::ALL))
                .collect(),
        }
    }

    /// The image stream plus the context projections, which carry only the
    /// general adapter.
    pub fn base(d: usize) -> Self {
        let mut t = Self::image_stream(d);
        t.layers.extend(
            CONTEXT
                .iter()
                .map(|n| LayerPlacement::new(n, d, d, &[AdapterKind::General])),
        );
        t
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for (i, l) in self.layers.iter().enumerate() {
            let at = format!("layers[{i}]");
            if !names.insert(l.name.as_str()) {
                return Err(Error::param(format!("{at}: duplicate layer name {:?}", l.name)));
            }
            if l.d_in == 0 || l.d_out == 0 {
                return Err(Error::param(format!("{at}: dimensions must be positive")));
            }
            if !l.adapters.contains(&AdapterKind::General) {
                return Err(Error::param(format!("{at}: every adapted layer needs the general adapter")));
            }
            let unique: HashSet<_> = l.adapters.iter().collect();
            if unique.len() != l.adapters.len() {
                return Err(Error::param(format!("{at}: adapter listed twice")));
            }
        }
        Ok(())
    }

    /// Trainable parameters of a MoL set placed per this table.
    pub fn mol_params(&self, ranks: Ranks) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let r = Ranks {
                    general: ranks.general,
                    normal: if l.adapters.contains(&AdapterKind::Normal) { ranks.normal } else { 0 },
                    coord: if l.adapters.contains(&AdapterKind::Coord) { ranks.coord } else { 0 },
                };
                mol_param_count(l.d_in, l.d_out, r)
            })
            .sum()
    }

    /// Trainable parameters of one LoRA adapter on every layer of the table.
    pub fn single_lora_params(&self, rank: usize) -> usize {
        self.layers
            .iter()
            .map(|l| single_lora_param_count(l.d_in, l.d_out, rank))
            .sum()
    }
}
