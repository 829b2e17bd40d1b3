//! Learning algorithms: discrete SAC and DQN online, and the conservative
//! Q-learning variants (centralized, independent, CTDE) trained purely
//! offline, plus the joint-action codec, replay buffer, and action
//! selection shared between them.

mod act;
mod codec;
mod config;
mod losses;
mod nets;
mod replay;
mod trainer;

pub use act::{act, ActMode, ModelScheduler};
pub use codec::JointActionCodec;
pub use config::{Algo, Scope, TrainerConfig};
pub use losses::{
    cql_critic_loss, cql_penalty, ctde_eval_loss, ctde_q_tot, dqn_loss,
    sac_eval_loss_centralized, sac_eval_loss_independent, sac_improve_loss, CriticLoss,
    PolicyLoss, POLICY_PROB_FLOOR,
};
pub use nets::{load_model, save_model, AgentNets, ModelDocument, NetBundle, MODEL_FORMAT_VERSION};
pub use replay::ReplayBuffer;
pub use trainer::{train_offline, train_online, CurveRow, EvalHook, EvalPoint, TrainOutput};
