//! Layer truncation of the transmissible cache into a [`Payload`].

use half::f16;
use thiserror::Error;

use crate::chsa::ChsaCache;
use crate::model::{KvCache, ModelError, Origin};

pub const WIRE_VERSION: u16 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SskdError {
    #[error("layer fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("field {field} = {value} does not fit the wire format")]
    FieldOverflow { field: &'static str, value: usize },
    #[error("payload cache must be salient prefill followed by latent entries")]
    BadOrigins,
    #[error("source table has {table} entries for {salient} salient positions")]
    TableMismatch { table: usize, salient: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Element type of the payload body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F16,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F16 => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Dtype> {
        match code {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F16),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F16 => "f16",
        }
    }
}

impl std::str::FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f16" => Ok(Dtype::F16),
            other => Err(format!("unknown dtype {other:?}")),
        }
    }
}

/// `max(1, round(fraction * L))`, never above `L`.
pub fn comm_layers(fraction: f64, num_layers: usize) -> Result<usize, SskdError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SskdError::BadFraction(fraction));
    }
    Ok(((fraction * num_layers as f64).round() as usize).clamp(1, num_layers))
}

/// A layer-truncated cache ready for the wire.
///
/// The cache holds `salient` entries tagged `EgoPrefill` followed by
/// `latent` entries tagged `EgoLatent`, as seen by the sender.
#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    sender: u32,
    frame: u64,
    dtype: Dtype,
    salient: usize,
    source_indices: Vec<u32>,
    cache: KvCache,
}

impl Payload {
    pub fn new(
        frame: u64,
        cache: KvCache,
        salient: usize,
        source_indices: Vec<u32>,
    ) -> Result<Self, SskdError> {
        let origins = cache.origins();
        if salient > origins.len()
            || origins[..salient].iter().any(|&o| o != Origin::EgoPrefill)
            || origins[salient..].iter().any(|&o| o != Origin::EgoLatent)
        {
            return Err(SskdError::BadOrigins);
        }
        if source_indices.len() != salient {
            return Err(SskdError::TableMismatch {
                table: source_indices.len(),
                salient,
            });
        }
        let fits = |field: &'static str, value: usize, max: usize| {
            if value > max {
                Err(SskdError::FieldOverflow { field, value })
            } else {
                Ok(())
            }
        };
        fits("l_comm", cache.num_layers(), u16::MAX as usize)?;
        fits("num_heads", cache.num_heads(), u16::MAX as usize)?;
        fits("head_dim", cache.head_dim(), u16::MAX as usize)?;
        fits("salient", salient, u32::MAX as usize)?;
        fits("latent", cache.len() - salient, u32::MAX as usize)?;
        Ok(Self {
            sender: cache.agent(),
            frame,
            dtype: Dtype::F32,
            salient,
            source_indices,
            cache,
        })
    }

    /// Switches the body type. Converting to f16 rounds every element so
    /// that the payload equals what a receiver decodes.
    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        if dtype == Dtype::F16 && self.dtype == Dtype::F32 {
            let c = &self.cache;
            let round = |xs: &[f32]| -> Vec<f32> {
                xs.iter().map(|&x| f16::from_f32(x).to_f32()).collect()
            };
            let layers = (0..c.num_layers())
                .map(|l| (round(c.layer_keys(l)), round(c.layer_values(l))))
                .collect();
            self.cache = KvCache::from_raw(
                c.num_heads(),
                c.head_dim(),
                c.agent(),
                c.origins().to_vec(),
                layers,
            )
            .expect("same shape");
        }
        self.dtype = dtype;
        self
    }

    pub fn sender(&self) -> u32 {
        self.sender
    }

    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn l_comm(&self) -> usize {
        self.cache.num_layers()
    }

    pub fn num_heads(&self) -> usize {
        self.cache.num_heads()
    }

    pub fn head_dim(&self) -> usize {
        self.cache.head_dim()
    }

    pub fn salient(&self) -> usize {
        self.salient
    }

    pub fn latent(&self) -> usize {
        self.cache.len() - self.salient
    }

    pub fn source_indices(&self) -> &[u32] {
        &self.source_indices
    }

    /// Sender-side view of the carried entries.
    pub fn cache(&self) -> &KvCache {
        &self.cache
    }

    /// The entries as a receiver stores them: every tag made foreign.
    pub fn foreign_cache(&self) -> KvCache {
        self.cache.clone().into_foreign()
    }
}

/// Keeps layers `1..=L_comm` of the assembled cache.
pub fn distill(chsa: &ChsaCache, fraction: f64) -> Result<Payload, SskdError> {
    let l_comm = comm_layers(fraction, chsa.salient.num_layers())?;
    let full = chsa.assembled()?;
    let indices = chsa.indices.iter().map(|&i| i as u32).collect();
    Payload::new(0, full.truncate_layers(l_comm), chsa.salient.len(), indices)
}

/// Like [`distill`] with an explicit frame id.
pub fn distill_frame(chsa: &ChsaCache, fraction: f64, frame: u64) -> Result<Payload, SskdError> {
    let mut p = distill(chsa, fraction)?;
    p.frame = frame;
    Ok(p)
}
