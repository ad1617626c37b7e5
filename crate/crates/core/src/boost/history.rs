use crate::linopt::LinearModel;

/// Diagnostics for candidate `t`: the predictor `f_t = w_{t+1}ᵀ φ_t` built from
/// the first `t` layers, plus statistics of layer `t` when it was built.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// `R_n(φ_t, w_{t+1})`, average loss plus ridge term.
    pub train_risk: f64,
    pub grad_norm_l1: f64,
    pub train_acc: f64,
    pub valid_acc: Option<f64>,
    /// Final MSE of the embedding fitted in this round.
    pub embed_mse: Option<f64>,
    /// `max_i ‖ι_t(z_i)‖²` over the samples the layer was built from.
    pub k: Option<f64>,
    /// Smallest eigenvalue of `w_{t+1}ᵀ w_{t+1}`.
    pub sigma_min: f64,
    pub wall_ms: f64,
    /// Samples that fed the gradient, embedding and `A_t` of this round.
    pub samples_used: usize,
    pub eta: Option<f64>,
    pub eta_guard: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub records: Vec<RoundRecord>,
    /// `w_{t+1}` paired with each candidate.
    pub weights: Vec<LinearModel>,
    /// Candidate returned as the model.
    pub selected: usize,
}

impl TrainHistory {
    /// Layers actually built.
    pub fn rounds_completed(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.embed_mse.is_some())
            .count()
    }
}
