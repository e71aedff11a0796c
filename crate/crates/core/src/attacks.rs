//! Byzantine behaviours: label flipping on the local dataset and colluding
//! weight flipping on the transmitted model.

use std::fmt;
use std::str::FromStr;

use crate::data::Shard;
use crate::model::ModelParams;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttackError {
    #[error("weight flip needs at least one Byzantine device")]
    NoByzantine,
    #[error("weight flip needs at least one normal device, all {0} are Byzantine")]
    AllByzantine(usize),
    #[error("Byzantine index {index} out of range for {devices} devices")]
    IndexOutOfRange { index: usize, devices: usize },
    #[error("unknown attack kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AttackKind {
    #[default]
    None,
    ClassFlip,
    WeightFlip,
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackKind::None => "none",
            AttackKind::ClassFlip => "classflip",
            AttackKind::WeightFlip => "weightflip",
        })
    }
}

impl FromStr for AttackKind {
    type Err = AttackError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(AttackKind::None),
            "classflip" => Ok(AttackKind::ClassFlip),
            "weightflip" => Ok(AttackKind::WeightFlip),
            other => Err(AttackError::UnknownKind(other.to_string())),
        }
    }
}

/// Replaces every label `i` with `(L - 1) - i`.
pub fn class_flip(shard: &Shard) -> Shard {
    let mut out = shard.clone();
    let top = out.data.n_classes() - 1;
    for y in out.data.labels_mut() {
        *y = top - *y;
    }
    out
}

/// Colluding model poisoning. Each Byzantine device `l` sends
/// `-w_l - 2 / (K - B) * sum_{k normal} w_k`; normal entries pass through.
pub fn weight_flip(
    honest: &[ModelParams],
    byzantine: &[usize],
) -> Result<Vec<ModelParams>, AttackError> {
    let devices = honest.len();
    let mut is_byz = vec![false; devices];
    for &index in byzantine {
        if index >= devices {
            return Err(AttackError::IndexOutOfRange { index, devices });
        }
        is_byz[index] = true;
    }
    let b = is_byz.iter().filter(|&&x| x).count();
    if b == 0 {
        return Err(AttackError::NoByzantine);
    }
    if b == devices {
        return Err(AttackError::AllByzantine(devices));
    }
    let dim = honest[0].dim();
    let mut normal_sum = vec![0.0; dim];
    for (w, _) in honest.iter().zip(&is_byz).filter(|(_, &byz)| !byz) {
        for (acc, v) in normal_sum.iter_mut().zip(w.iter()) {
            *acc += v;
        }
    }
    let factor = 2.0 / (devices - b) as f64;
    Ok(honest
        .iter()
        .zip(&is_byz)
        .map(|(w, &byz)| {
            if byz {
                ModelParams::from(
                    w.iter()
                        .zip(&normal_sum)
                        .map(|(v, s)| -v - factor * s)
                        .collect::<Vec<_>>(),
                )
            } else {
                w.clone()
            }
        })
        .collect())
}
