//! Stage III: per-agent actors trained against GAT-based centralized critics
//! on the prioritized individual-trajectory buffers, plus the BC and
//! ICQ-style baselines and greedy evaluation.

mod checkpoint;
mod eval;
mod icq;
mod losses;
mod nets;
mod train;

pub use checkpoint::PolicySet;
pub use eval::{evaluate, local_history, EvalResult};
pub use icq::{icq_actor_weights, icq_critic_loss, icq_targets, train_icq, IcqCritic, IcqInput, IcqOutput, IcqSample};
pub use losses::{
    actor_loss, actor_loss_and_grad, critic_loss, critic_loss_and_grad, filter_weights, literal_actor_objective,
    normalized_exp_weights, td_targets, PolicySample, FILTER_CLAMP,
};
pub use nets::{ActorNet, CriticInput, CriticNet, Gat, GatOutput};
pub use train::{train_bc, train_sit, write_metrics, MetricRow, PolicyHyper, TrainOutput, METRICS_HEADER};
