//! Joint-embedding objectives, projection heads and the pretraining loop.

mod losses;
mod model;

pub use losses::{
    barlow_twins_loss, byol_loss, cosine, l2_normalize, simsiam_loss, vicreg_loss, whiten, wmse_loss, Loss,
    LossBreakdown, VicregWeights, WmseParams, BT_EPS, NORM_EPS,
};
pub use model::{ema_update, Head, SslConfig, SslKind, SslModel, StepRecord};
