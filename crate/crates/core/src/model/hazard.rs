//! Handcrafted weights that make the model brake for nearby pedestrians.
//!
//! Residual layout (first twelve dims, the rest is zero except for the
//! sinusoidal position code in the last four dims):
//!
//! | dim | feature | written by |
//! |-----|---------|------------|
//! | 0 | `One` | every embedding |
//! | 1 | `Haz` | hazard tokens |
//! | 2, 3 | `Hx`, `Hy` | hazard tokens, `cos`/`sin` of the column angle |
//! | 4, 5 | `Ex`, `Ey` | ego markers, `cos`/`sin` of the column angle |
//! | 6 | `Stop` | ego marker of a stopped vehicle |
//! | 7 | `Alert` | attention outputs |
//! | 8 | `Intent` | the `BRAKE` action embedding |
//! | 9, 10, 11 | `Obst`, `Occ`, `Veh` | scene tokens (inert) |
//!
//! Circuits:
//!
//! * Layer 1, head 0 (lateral copy). Query `a·(Ex, Ey, -0.35·One)`, key
//!   `a·(Hx, Hy, Haz)`, value `Haz`, output into `Alert`. Scores are
//!   `40·(cos Δθ - 0.35)` for hazard keys and 0 for everything else: about
//!   26 in the same column, 14 one column away and -14 two columns away.
//!   `Alert ≈ 1` only when a pedestrian in a neighbouring column is in
//!   context.
//! * Layer 1, head 1 (detector). Query `b·One`, key `b·Haz`, zero output.
//!   It changes nothing downstream; it makes latent steps look at hazard
//!   tokens, which is what saliency scoring measures.
//! * Layer L, head 0 (decision). Query `c·One`, key `c·(Alert + Intent)`,
//!   value `Alert + Intent`, output into `Alert`. It pulls brake intent from
//!   any position that carries it, including foreign deep-layer entries.
//!
//! The output head reads `KEEP ← One`, `ACCEL ← 2·Stop`, `BRAKE ← 4·Alert`.
//! A moving vehicle therefore keeps speed unless `Alert > 0.25`, and a
//! stopped one restarts unless `Alert > 0.5`.

use super::{sinusoidal_table, LayerWeights, Matrix, Model, ModelConfig, ModelError};
use crate::vocab::{self, Action, MAX_COLUMNS};

/// Named residual dimensions of the hazard model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HazardFeature {
    One = 0,
    Haz,
    Hx,
    Hy,
    Ex,
    Ey,
    Stop,
    Alert,
    Intent,
    Obst,
    Occ,
    Veh,
}

impl HazardFeature {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Number of residual dims used by named features.
pub const HAZARD_LAYOUT_DIM: usize = 12;
const POSITION_DIMS: usize = 4;

const LATERAL_GAIN: f64 = 40.0;
const LATERAL_BIAS: f32 = 0.35;
const DETECT_GAIN: f64 = 12.0;
const DECISION_GAIN: f64 = 16.0;

/// Default shape for the hazard model: 4 layers, 2 heads, width 16.
pub fn hazard_config() -> ModelConfig {
    ModelConfig::new(4, 2, 16, vocab::VOCAB_SIZE, 256, 0)
}

/// Builds the hazard model for `config`. The seed is ignored.
pub fn make_hazard_model(config: ModelConfig) -> Result<Model, ModelError> {
    use HazardFeature::*;
    config.validate()?;
    let d = config.model_dim;
    let dh = config.head_dim();
    let small = |msg: String| Err(ModelError::ConstructionTooSmall(msg));
    if dh < 4 {
        return small(format!("head_dim {dh} < 4"));
    }
    if config.num_heads < 2 {
        return small("needs at least 2 heads".into());
    }
    if d < HAZARD_LAYOUT_DIM + POSITION_DIMS {
        return small(format!(
            "model_dim {d} < {}",
            HAZARD_LAYOUT_DIM + POSITION_DIMS
        ));
    }
    if config.vocab_size < vocab::VOCAB_SIZE {
        return small(format!(
            "vocab_size {} < {}",
            config.vocab_size,
            vocab::VOCAB_SIZE
        ));
    }

    let mut w_in = Matrix::zeros(config.vocab_size, d);
    let one = One.index();
    for t in 0..vocab::VOCAB_SIZE {
        w_in.set(t, one, 1.0);
    }
    w_in.set(vocab::OBSTACLE as usize, Obst.index(), 1.0);
    w_in.set(vocab::OCCLUDED as usize, Occ.index(), 1.0);
    w_in.set(vocab::VEHICLE as usize, Veh.index(), 1.0);
    for col in 0..MAX_COLUMNS {
        let th = vocab::lateral_angle(col);
        let h = vocab::hazard(col) as usize;
        w_in.set(h, Haz.index(), 1.0);
        w_in.set(h, Hx.index(), th.cos());
        w_in.set(h, Hy.index(), th.sin());
        for stopped in [false, true] {
            let e = vocab::ego_marker(col, stopped) as usize;
            w_in.set(e, Ex.index(), th.cos());
            w_in.set(e, Ey.index(), th.sin());
            w_in.set(e, Stop.index(), stopped as u8 as f32);
        }
    }
    w_in.set(Action::Brake.token() as usize, Intent.index(), 1.0);

    let mut w_out = Matrix::zeros(d, config.vocab_size);
    w_out.set(one, Action::Keep.token() as usize, 1.0);
    w_out.set(Stop.index(), Action::Accel.token() as usize, 2.0);
    w_out.set(Alert.index(), Action::Brake.token() as usize, 4.0);

    let gain = |g: f64| (g * (dh as f64).sqrt()).sqrt() as f32;
    let mut layers: Vec<LayerWeights> = (0..config.num_layers)
        .map(|_| LayerWeights::zeros(d, config.ffn_dim))
        .collect();

    let a = gain(LATERAL_GAIN);
    let first = &mut layers[0];
    first.wq.set(Ex.index(), 0, a);
    first.wq.set(Ey.index(), 1, a);
    first.wk.set(Hx.index(), 0, a);
    first.wk.set(Hy.index(), 1, a);
    first.wq.set(one, 2, -LATERAL_BIAS * a);
    first.wk.set(Haz.index(), 2, a);
    first.wv.set(Haz.index(), 0, 1.0);
    first.wo.set(0, Alert.index(), 1.0);
    let b = gain(DETECT_GAIN);
    first.wq.set(one, dh, b);
    first.wk.set(Haz.index(), dh, b);

    let c = gain(DECISION_GAIN);
    let last = layers.last_mut().expect("num_layers >= 2");
    last.wq.set(one, 0, c);
    last.wk.set(Alert.index(), 0, c);
    last.wk.set(Intent.index(), 0, c);
    last.wv.set(Alert.index(), 0, 1.0);
    last.wv.set(Intent.index(), 0, 1.0);
    last.wo.set(0, Alert.index(), 1.0);

    let pos_enc = sinusoidal_table(config.max_context, d, d - POSITION_DIMS..d);
    Model::from_parts(config, w_in, w_out, layers, pos_enc)
}
