use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Result, StarError};
use crate::numeric::{ParamId, Parameter, ParameterStore, Tensor};

pub const ITEM_TABLE: &str = "item_embedding";
const UNITS: [(&str, usize); 3] = [("hours", 24), ("minutes", 60), ("seconds", 60)];

#[derive(Debug, Clone, Copy)]
pub(super) struct GruIds {
    pub w_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub b_h: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub(super) struct LinearIds {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Interval tables and the attention-weight layer for one side.
#[derive(Debug, Clone, Copy)]
pub(super) struct TimeIds {
    pub tables: [ParamId; 3],
    pub attention: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub(super) struct Ids {
    pub item: ParamId,
    /// `[before, after]`, present with time attention.
    pub time: Option<[TimeIds; 2]>,
    /// `[forward, backward]`.
    pub gru: [GruIds; 2],
    pub head: LinearIds,
    pub score_bias: ParamId,
}

/// Parameter names and shapes for a configuration, in creation order.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (n, d) = (cfg.n_items, cfg.dim);
    let mut out = vec![(ITEM_TABLE.to_string(), vec![n, d])];
    if cfg.time_attention {
        for (side, attn) in [("before", "attention.before"), ("after", "attention.after")] {
            for (unit, rows) in UNITS {
                out.push((format!("time.{side}.{unit}"), vec![rows, d]));
            }
            out.push((format!("{attn}.weight"), vec![3 * d, d]));
            out.push((format!("{attn}.bias"), vec![d]));
        }
    }
    let dirs: &[&str] = if cfg.share_gru_weights {
        &["forward"]
    } else {
        &["forward", "backward"]
    };
    for dir in dirs {
        for gate in ["z", "r", "h"] {
            out.push((format!("gru.{dir}.w_{gate}"), vec![2 * d, d]));
            out.push((format!("gru.{dir}.b_{gate}"), vec![d]));
        }
    }
    out.push(("head.weight".into(), vec![cfg.head_inputs(), d]));
    out.push(("head.bias".into(), vec![d]));
    out.push(("score.bias".into(), vec![n]));
    out
}

/// Network parameters plus the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct StarModel {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

impl StarModel {
    /// Fresh parameters drawn uniformly from `[-1/√d, 1/√d]` in name
    /// order. `item_init`, when given, replaces the item table.
    pub fn new(config: ModelConfig, seed: u64, item_init: Option<&Tensor>) -> Result<Self> {
        config.validate()?;
        let bound = 1.0 / (config.dim as f64).sqrt();
        let mut shapes = layout(&config);
        shapes.sort_by(|a, b| a.0.cmp(&b.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shapes
            .into_iter()
            .map(|(name, shape)| {
                let len = shape.iter().product();
                let data = (0..len).map(|_| rng.gen_range(-bound..=bound)).collect();
                Parameter::new(name, Tensor::from_vec(&shape, data).expect("layout shape"))
            })
            .collect();
        let mut model = StarModel {
            params: ParameterStore::new(params)?,
            config,
        };
        if let Some(init) = item_init {
            let expected = [model.config.n_items, model.config.dim];
            if init.shape() != expected {
                return Err(StarError::ShapeMismatch {
                    op: "item embedding init",
                    left: init.shape().to_vec(),
                    right: expected.to_vec(),
                });
            }
            model.params.by_name_mut(ITEM_TABLE).expect("item table").value = init.clone();
        }
        Ok(model)
    }

    /// Wraps an existing store after checking every expected tensor is
    /// present with the right shape and nothing else is.
    pub fn from_store(config: ModelConfig, params: ParameterStore) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != params.len() {
            return Err(StarError::Checkpoint(format!(
                "expected {} model tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in expected {
            let p = params
                .by_name(&name)
                .ok_or_else(|| StarError::Checkpoint(format!("missing tensor `{name}`")))?;
            if p.value.shape() != shape.as_slice() {
                return Err(StarError::ShapeMismatch {
                    op: "load parameter",
                    left: p.value.shape().to_vec(),
                    right: shape,
                });
            }
        }
        Ok(StarModel { config, params })
    }

    pub(super) fn ids(&self) -> Ids {
        let id = |name: &str| self.params.id(name).unwrap_or_else(|| panic!("missing `{name}`"));
        let linear = |prefix: &str| LinearIds {
            weight: id(&format!("{prefix}.weight")),
            bias: id(&format!("{prefix}.bias")),
        };
        let gru = |dir: &str| GruIds {
            w_z: id(&format!("gru.{dir}.w_z")),
            b_z: id(&format!("gru.{dir}.b_z")),
            w_r: id(&format!("gru.{dir}.w_r")),
            b_r: id(&format!("gru.{dir}.b_r")),
            w_h: id(&format!("gru.{dir}.w_h")),
            b_h: id(&format!("gru.{dir}.b_h")),
        };
        let time = self.config.time_attention.then(|| {
            [("before", "attention.before"), ("after", "attention.after")].map(|(side, attn)| TimeIds {
                tables: UNITS.map(|(unit, _)| id(&format!("time.{side}.{unit}"))),
                attention: linear(attn),
            })
        });
        let forward = gru("forward");
        let backward = if self.config.share_gru_weights {
            forward
        } else {
            gru("backward")
        };
        Ids {
            item: id(ITEM_TABLE),
            time,
            gru: [forward, backward],
            head: linear("head"),
            score_bias: id("score.bias"),
        }
    }

    pub fn item_table(&self) -> &Tensor {
        &self.params.by_name(ITEM_TABLE).expect("item table").value
    }

    pub fn n_items(&self) -> usize {
        self.config.n_items
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_the_configuration() {
        let cfg = ModelConfig::new(7, 4);
        let m = StarModel::new(cfg.clone(), 1, None).unwrap();
        let shape = |n: &str| m.params.by_name(n).unwrap().value.shape().to_vec();
        assert_eq!(shape("item_embedding"), [7, 4]);
        assert_eq!(shape("time.before.hours"), [24, 4]);
        assert_eq!(shape("time.after.minutes"), [60, 4]);
        assert_eq!(shape("time.after.seconds"), [60, 4]);
        assert_eq!(shape("attention.before.weight"), [12, 4]);
        assert_eq!(shape("attention.after.bias"), [4]);
        assert_eq!(shape("gru.backward.w_h"), [8, 4]);
        assert_eq!(shape("head.weight"), [24, 4]);
        assert_eq!(shape("score.bias"), [7]);

        let v1 = StarModel::new(
            ModelConfig {
                self_attention: false,
                ..cfg.clone()
            },
            1,
            None,
        )
        .unwrap();
        assert_eq!(v1.params.by_name("head.weight").unwrap().value.shape(), [8, 4]);
        let v2 = StarModel::new(
            ModelConfig {
                time_attention: false,
                ..cfg.clone()
            },
            1,
            None,
        )
        .unwrap();
        assert!(v2.params.by_name("time.before.hours").is_none());
        let shared = StarModel::new(
            ModelConfig {
                share_gru_weights: true,
                ..cfg
            },
            1,
            None,
        )
        .unwrap();
        assert!(shared.params.by_name("gru.backward.w_z").is_none());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let cfg = ModelConfig::new(5, 9);
        let a = StarModel::new(cfg.clone(), 3, None).unwrap();
        let b = StarModel::new(cfg.clone(), 3, None).unwrap();
        assert_eq!(a, b);
        let bound = 1.0 / 3.0;
        assert!(a.params.iter().all(|p| p.value.data().iter().all(|v| v.abs() <= bound)));
        let table = Tensor::filled(&[5, 9], 0.25);
        let c = StarModel::new(cfg, 3, Some(&table)).unwrap();
        assert_eq!(c.item_table(), &table);
        assert_eq!(c.params.by_name("head.bias"), a.params.by_name("head.bias"));
    }

    #[test]
    fn from_store_rejects_mismatches() {
        let cfg = ModelConfig::new(5, 3);
        let m = StarModel::new(cfg.clone(), 0, None).unwrap();
        assert!(StarModel::from_store(cfg.clone(), m.params.clone()).is_ok());
        assert!(StarModel::from_store(
            ModelConfig {
                n_items: 6,
                ..cfg.clone()
            },
            m.params.clone()
        )
        .is_err());
        assert!(StarModel::from_store(
            ModelConfig {
                self_attention: false,
                ..cfg
            },
            m.params
        )
        .is_err());
    }
}
