//! Training losses with exact expectations over the discrete action sets.
//!
//! Critic (policy-evaluation) losses regress Q toward the soft TD target
//! r + beta * E_{a'~pi}[Qhat(s',a') - ent * log pi(a'|s')]; the conservative
//! variants add alpha * (logsumexp(Q) - Q(data action)). Policy-improvement
//! losses maximize E_{a~pi}[Q - ent * log pi]. All expectations enumerate
//! the action set exactly; nothing is sampled inside a loss.

use ndarray::{Array1, Array2};

use crate::dataset::TransitionRecord;
use crate::error::{Error, Result};
use crate::nn::{logsumexp, softmax_columns, Gradients};

use super::config::Scope;
use super::nets::AgentNets;

/// Floor inside log pi so a one-hot policy keeps the losses finite.
pub const POLICY_PROB_FLOOR: f64 = 1e-8;

/// Critic-loss output. `grads[k]` differentiates `per_agent_loss[k]` for the
/// independent scope; for centralized and CTDE there is a single shared loss
/// (`per_agent_loss.len() == 1`) and every gradient differentiates it.
#[derive(Debug)]
pub struct CriticLoss {
    pub loss: f64,
    /// TD evaluation component (unweighted).
    pub eval_term: f64,
    /// Mean conservative penalty; zero when the penalty is off. For CTDE
    /// this is the sum over agents of per-agent penalty means.
    pub penalty_mean: f64,
    pub per_agent_loss: Vec<f64>,
    pub grads: Vec<Gradients>,
}

/// Policy-loss output; same per-agent convention as `CriticLoss`.
#[derive(Debug)]
pub struct PolicyLoss {
    pub loss: f64,
    pub per_agent_loss: Vec<f64>,
    pub grads: Vec<Gradients>,
}

/// Conservative penalty for one Q row: logsumexp over actions minus the
/// dataset action's value. Nonnegative because logsumexp >= max.
pub fn cql_penalty(q_row: &[f64], data_action: usize) -> Result<f64> {
    if data_action >= q_row.len() {
        return Err(Error::InvalidAction {
            agent: 0,
            action: data_action,
            max: q_row.len().saturating_sub(1),
        });
    }
    Ok(logsumexp(q_row)? - q_row[data_action])
}

fn validate_batch(batch: &[&TransitionRecord], nets: &AgentNets) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let num_agents = nets.num_agents();
    let obs_dim = nets.obs_dim();
    let num_actions = nets.num_actions();
    for record in batch {
        if record.obs.len() != num_agents || record.next_obs.len() != num_agents {
            return Err(Error::DimensionMismatch {
                context: "record agents",
                expected: num_agents,
                got: record.obs.len(),
            });
        }
        if record.joint_action.len() != num_agents {
            return Err(Error::DimensionMismatch {
                context: "record joint action",
                expected: num_agents,
                got: record.joint_action.len(),
            });
        }
        for obs in record.obs.iter().chain(&record.next_obs) {
            if obs.len() != obs_dim {
                return Err(Error::DimensionMismatch {
                    context: "record observation",
                    expected: obs_dim,
                    got: obs.len(),
                });
            }
        }
        for (agent, &a) in record.joint_action.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::InvalidAction {
                    agent,
                    action: a,
                    max: num_actions - 1,
                });
            }
        }
    }
    Ok(())
}

/// `[obs_dim, B]` matrix of one agent's observations.
fn agent_obs_matrix(batch: &[&TransitionRecord], agent: usize, next: bool) -> Array2<f64> {
    let obs_dim = if next {
        batch[0].next_obs[agent].len()
    } else {
        batch[0].obs[agent].len()
    };
    Array2::from_shape_fn((obs_dim, batch.len()), |(d, b)| {
        if next {
            batch[b].next_obs[agent][d]
        } else {
            batch[b].obs[agent][d]
        }
    })
}

/// `[obs_dim * I, B]` concatenated global state.
fn global_obs_matrix(batch: &[&TransitionRecord], next: bool) -> Array2<f64> {
    let num_agents = batch[0].obs.len();
    let obs_dim = batch[0].obs[0].len();
    Array2::from_shape_fn((obs_dim * num_agents, batch.len()), |(d, b)| {
        let (agent, within) = (d / obs_dim, d % obs_dim);
        if next {
            batch[b].next_obs[agent][within]
        } else {
            batch[b].obs[agent][within]
        }
    })
}

/// Per column: sum_a P[a] * (Qhat[a] - ent * ln(max(P[a], floor))).
fn soft_expectation(qhat: &Array2<f64>, probs: &Array2<f64>, ent: f64) -> Array1<f64> {
    let mut out = Array1::zeros(qhat.ncols());
    for b in 0..qhat.ncols() {
        let mut acc = 0.0;
        for a in 0..qhat.nrows() {
            let p = probs[[a, b]];
            acc += p * (qhat[[a, b]] - ent * p.max(POLICY_PROB_FLOOR).ln());
        }
        out[b] = acc;
    }
    out
}

fn ensure_finite(value: f64, context: &'static str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { context, step: 0 })
    }
}

/// Shared machinery for the centralized and per-agent TD paths. With
/// `cql_alpha` set, the objective becomes 0.5 * eval + alpha * mean(penalty)
/// per learner; otherwise it is the plain SAC evaluation loss.
struct TdPiece {
    eval: f64,
    penalty_mean: f64,
    grads: Gradients,
}

#[allow(clippy::too_many_arguments)]
fn td_piece(
    nets: &AgentNets,
    bundle_idx: usize,
    obs: &Array2<f64>,
    next_obs: &Array2<f64>,
    data_actions: &[usize],
    rewards: &[f64],
    dones: &[bool],
    discount: f64,
    entropy_coeff: f64,
    cql_alpha: Option<f64>,
) -> Result<TdPiece> {
    let bundle = &nets.bundles[bundle_idx];
    let batch_size = data_actions.len() as f64;
    let (q, cache) = bundle.critic.forward_batch_cached(obs)?;
    let logits_next = bundle.policy.forward_batch(next_obs)?;
    let probs_next = softmax_columns(&logits_next);
    let qhat_next = bundle.target_critic.forward_batch(next_obs)?;
    let soft = soft_expectation(&qhat_next, &probs_next, entropy_coeff);

    let eval_scale = if cql_alpha.is_some() { 0.5 } else { 1.0 };
    let mut eval = 0.0;
    let mut penalty_sum = 0.0;
    let mut dq: Array2<f64> = Array2::zeros(q.dim());
    for (b, (&a, (&r, &done))) in data_actions
        .iter()
        .zip(rewards.iter().zip(dones.iter()))
        .enumerate()
    {
        let q_data = q[[a, b]];
        let bootstrap = if done { 0.0 } else { discount * soft[b] };
        let resid = r + bootstrap - q_data;
        eval += resid * resid;
        dq[[a, b]] += eval_scale * (-2.0 * resid) / batch_size;
        if let Some(alpha) = cql_alpha {
            let col: Vec<f64> = q.column(b).to_vec();
            penalty_sum += cql_penalty(&col, a)?;
            let sm = crate::nn::softmax(&col)?;
            for (row, &p) in sm.iter().enumerate() {
                dq[[row, b]] += alpha * p / batch_size;
            }
            dq[[a, b]] -= alpha / batch_size;
        }
    }
    eval /= batch_size;
    let penalty_mean = penalty_sum / batch_size;
    let (grads, _) = bundle.critic.backward_batch(&cache, &dq)?;
    Ok(TdPiece {
        eval,
        penalty_mean,
        grads,
    })
}

fn collect_scalars(batch: &[&TransitionRecord]) -> (Vec<f64>, Vec<bool>) {
    (
        batch.iter().map(|r| r.reward).collect(),
        batch.iter().map(|r| r.done).collect(),
    )
}

fn centralized_critic_core(
    batch: &[&TransitionRecord],
    nets: &AgentNets,
    discount: f64,
    entropy_coeff: f64,
    cql_alpha: Option<f64>,
) -> Result<CriticLoss> {
    let s = global_obs_matrix(batch, false);
    let s_next = global_obs_matrix(batch, true);
    let joint: Vec<usize> = batch
        .iter()
        .map(|r| nets.codec.encode(&r.joint_action))
        .collect::<Result<_>>()?;
    let (rewards, dones) = collect_scalars(batch);
    let piece = td_piece(
        nets,
        0,
        &s,
        &s_next,
        &joint,
        &rewards,
        &dones,
        discount,
        entropy_coeff,
        cql_alpha,
    )?;
    let loss = match cql_alpha {
        Some(alpha) => 0.5 * piece.eval + alpha * piece.penalty_mean,
        None => piece.eval,
    };
    let loss = ensure_finite(loss, "centralized critic loss")?;
    Ok(CriticLoss {
        loss,
        eval_term: piece.eval,
        penalty_mean: piece.penalty_mean,
        per_agent_loss: vec![loss],
        grads: vec![piece.grads],
    })
}

fn independent_critic_core(
    batch: &[&TransitionRecord],
    nets: &AgentNets,
    discount: f64,
    entropy_coeff: f64,
    cql_alpha: Option<f64>,
) -> Result<CriticLoss> {
    let (rewards, dones) = collect_scalars(batch);
    let mut per_agent_loss = Vec::with_capacity(nets.num_agents());
    let mut grads = Vec::with_capacity(nets.num_agents());
    let mut eval_acc = 0.0;
    let mut penalty_acc = 0.0;
    for i in 0..nets.num_agents() {
        let obs = agent_obs_matrix(batch, i, false);
        let next_obs = agent_obs_matrix(batch, i, true);
        let actions: Vec<usize> = batch.iter().map(|r| r.joint_action[i]).collect();
        let piece = td_piece(
            nets,
            i,
            &obs,
            &next_obs,
            &actions,
            &rewards,
            &dones,
            discount,
            entropy_coeff,
            cql_alpha,
        )?;
        let loss_i = match cql_alpha {
            Some(alpha) => 0.5 * piece.eval + alpha * piece.penalty_mean,
            None => piece.eval,
        };
        eval_acc += piece.eval;
        penalty_acc += piece.penalty_mean;
        per_agent_loss.push(ensure_finite(loss_i, "independent critic loss")?);
        grads.push(piece.grads);
    }
    let agents = nets.num_agents() as f64;
    Ok(CriticLoss {
        loss: per_agent_loss.iter().sum::<f64>() / agents,
        eval_term: eval_acc / agents,
        penalty_mean: penalty_acc / agents,
        per_agent_loss,
        grads,
    })
}

fn ctde_critic_core(
    batch: &[&TransitionRecord],
    nets: &AgentNets,
    discount: f64,
    entropy_coeff: f64,
    cql_alpha: Option<f64>,
) -> Result<CriticLoss> {
    let batch_size = batch.len() as f64;
    let num_agents = nets.num_agents();
    let (rewards, dones) = collect_scalars(batch);

    // Per agent: online Q (cached), dataset-action values, and the soft
    // next-step expectation under its own policy.
    let mut caches = Vec::with_capacity(num_agents);
    let mut q_values = Vec::with_capacity(num_agents);
    let mut q_tot = vec![0.0; batch.len()];
    let mut soft_sum = vec![0.0; batch.len()];
    for i in 0..num_agents {
        let obs = agent_obs_matrix(batch, i, false);
        let next_obs = agent_obs_matrix(batch, i, true);
        let bundle = &nets.bundles[i];
        let (q, cache) = bundle.critic.forward_batch_cached(&obs)?;
        let logits_next = bundle.policy.forward_batch(&next_obs)?;
        let probs_next = softmax_columns(&logits_next);
        let qhat_next = bundle.target_critic.forward_batch(&next_obs)?;
        let soft = soft_expectation(&qhat_next, &probs_next, entropy_coeff);
        for (b, record) in batch.iter().enumerate() {
            q_tot[b] += q[[record.joint_action[i], b]];
            soft_sum[b] += soft[b];
        }
        caches.push(cache);
        q_values.push(q);
    }

    let eval_scale = if cql_alpha.is_some() { 0.5 } else { 1.0 };
    let mut eval = 0.0;
    let mut residuals = vec![0.0; batch.len()];
    for (b, record) in batch.iter().enumerate() {
        let bootstrap = if dones[b] { 0.0 } else { discount * soft_sum[b] };
        let resid = rewards[b] + bootstrap - q_tot[b];
        residuals[b] = resid;
        eval += resid * resid;
        let _ = record;
    }
    eval /= batch_size;

    let mut penalty_total = 0.0;
    let mut grads = Vec::with_capacity(num_agents);
    for i in 0..num_agents {
        let q = &q_values[i];
        let mut dq: Array2<f64> = Array2::zeros(q.dim());
        for (b, record) in batch.iter().enumerate() {
            let a = record.joint_action[i];
            dq[[a, b]] += eval_scale * (-2.0 * residuals[b]) / batch_size;
            if let Some(alpha) = cql_alpha {
                let col: Vec<f64> = q.column(b).to_vec();
                penalty_total += cql_penalty(&col, a)? / batch_size;
                let sm = crate::nn::softmax(&col)?;
                for (row, &p) in sm.iter().enumerate() {
                    dq[[row, b]] += alpha * p / batch_size;
                }
                dq[[a, b]] -= alpha / batch_size;
            }
        }
        let (g, _) = nets.bundles[i].critic.backward_batch(&caches[i], &dq)?;
        grads.push(g);
    }

    let loss = match cql_alpha {
        Some(alpha) => 0.5 * eval + alpha * penalty_total,
        None => eval,
    };
    let loss = ensure_finite(loss, "ctde critic loss")?;
    Ok(CriticLoss {
        loss,
        eval_term: eval,
        penalty_mean: penalty_total,
        per_agent_loss: vec![loss],
        grads,
    })
}

/// Plain SAC policy-evaluation loss over the joint state/action space.
pub fn sac_eval_loss_centralized(
    batch: &[&TransitionRecord],
    nets: &AgentNets,
    discount: f64,
    entropy_coeff: f64,
) -> Result<CriticLoss> {
    validate_batch(batch, nets)?;
    centralized_critic_core(batch, nets, discount, entropy_coeff, None)
}

/// Per-agent SAC policy-evaluation loss on local observations.
pub fn sac_eval_loss_independent(
    batch: &[&TransitionRecord],
    nets: &AgentNets,
    discount: f64,
    entropy_coeff: f64,
) -> Result<CriticLoss> {
    validate_batch(batch, nets)?;
    independent_critic_core(batch, nets, discount, entropy_coeff, None)
}

/// Value-decomposition evaluation loss: the shared residual regresses
/// sum_i Q_i(o_i, a_i) toward r + beta * sum_i E[Qhat_i].
pub fn ctde_eval_loss(
    batch: &[&TransitionRecord],
    nets: &AgentNets,
    discount: f64,
    entropy_coeff: f64,
) -> Result<CriticLoss> {
    validate_batch(batch, nets)?;
    ctde_critic_core(batch, nets, discount, entropy_coeff, None)
}

/// Conservative critic loss for whatever scope `nets` carries:
/// 0.5 * eval + alpha * mean(penalty), with the CTDE variant summing the
/// per-agent penalty means.
pub fn cql_critic_loss(
    batch: &[&TransitionRecord],
    nets: &AgentNets,
    discount: f64,
    entropy_coeff: f64,
    alpha: f64,
) -> Result<CriticLoss> {
    validate_batch(batch, nets)?;
    match nets.scope {
        Scope::Centralized => {
            centralized_critic_core(batch, nets, discount, entropy_coeff, Some(alpha))
        }
        Scope::Independent => {
            independent_critic_core(batch, nets, discount, entropy_coeff, Some(alpha))
        }
        Scope::Ctde => ctde_critic_core(batch, nets, discount, entropy_coeff, Some(alpha)),
    }
}

/// TD loss with a hard max over next joint actions; centralized scope only.
pub fn dqn_loss(batch: &[&TransitionRecord], nets: &AgentNets, discount: f64) -> Result<CriticLoss> {
    validate_batch(batch, nets)?;
    if nets.scope != Scope::Centralized {
        return Err(Error::Config("dqn loss needs the centralized scope".into()));
    }
    let bundle = &nets.bundles[0];
    let s = global_obs_matrix(batch, false);
    let s_next = global_obs_matrix(batch, true);
    let (q, cache) = bundle.critic.forward_batch_cached(&s)?;
    let qhat_next = bundle.target_critic.forward_batch(&s_next)?;
    let batch_size = batch.len() as f64;
    let mut loss = 0.0;
    let mut dq: Array2<f64> = Array2::zeros(q.dim());
    for (b, record) in batch.iter().enumerate() {
        let a = nets.codec.encode(&record.joint_action)?;
        let max_next = qhat_next
            .column(b)
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let bootstrap = if record.done { 0.0 } else { discount * max_next };
        let resid = record.reward + bootstrap - q[[a, b]];
        loss += resid * resid;
        dq[[a, b]] = -2.0 * resid / batch_size;
    }
    loss /= batch_size;
    let loss = ensure_finite(loss, "dqn loss")?;
    let (grads, _) = bundle.critic.backward_batch(&cache, &dq)?;
    Ok(CriticLoss {
        loss,
        eval_term: loss,
        penalty_mean: 0.0,
        per_agent_loss: vec![loss],
        grads: vec![grads],
    })
}

/// One learner's policy-improvement loss and gradient:
/// L = -mean_b sum_a pi(a) * (Q(a) - ent * ln max(pi(a), floor)).
/// The critic contributes values only; no gradient flows through it.
fn improve_piece(
    nets: &AgentNets,
    bundle_idx: usize,
    obs: &Array2<f64>,
    entropy_coeff: f64,
) -> Result<(f64, Gradients)> {
    let bundle = &nets.bundles[bundle_idx];
    let (logits, cache) = bundle.policy.forward_batch_cached(obs)?;
    let probs = softmax_columns(&logits);
    let q = bundle.critic.forward_batch(obs)?;
    let batch_size = obs.ncols() as f64;
    let actions = logits.nrows();

    let mut loss = 0.0;
    let mut dlogits: Array2<f64> = Array2::zeros(logits.dim());
    for b in 0..obs.ncols() {
        // dL/dp computed mechanically so the analytic gradient matches
        // finite differences of the implemented loss, floor included.
        let mut dl_dp = vec![0.0; actions];
        let mut inner = 0.0;
        for a in 0..actions {
            let p = probs[[a, b]];
            let u = p.max(POLICY_PROB_FLOOR).ln();
            inner += p * (q[[a, b]] - entropy_coeff * u);
            dl_dp[a] = -(q[[a, b]] - entropy_coeff * u)
                + if p > POLICY_PROB_FLOOR {
                    entropy_coeff
                } else {
                    0.0
                };
            dl_dp[a] /= batch_size;
        }
        loss -= inner;
        let dot: f64 = (0..actions).map(|a| dl_dp[a] * probs[[a, b]]).sum();
        for a in 0..actions {
            dlogits[[a, b]] = probs[[a, b]] * (dl_dp[a] - dot);
        }
    }
    loss /= batch_size;
    let (grads, _) = bundle.policy.backward_batch(&cache, &dlogits)?;
    Ok((loss, grads))
}

/// Policy-improvement loss for the scope carried by `nets`: one joint update
/// for the centralized scope, one per agent otherwise (the CTDE case reads
/// its per-agent critic).
pub fn sac_improve_loss(
    batch: &[&TransitionRecord],
    nets: &AgentNets,
    entropy_coeff: f64,
) -> Result<PolicyLoss> {
    validate_batch(batch, nets)?;
    match nets.scope {
        Scope::Centralized => {
            let s = global_obs_matrix(batch, false);
            let (loss, grads) = improve_piece(nets, 0, &s, entropy_coeff)?;
            let loss = ensure_finite(loss, "centralized policy loss")?;
            Ok(PolicyLoss {
                loss,
                per_agent_loss: vec![loss],
                grads: vec![grads],
            })
        }
        Scope::Independent | Scope::Ctde => {
            let mut per_agent_loss = Vec::with_capacity(nets.num_agents());
            let mut grads = Vec::with_capacity(nets.num_agents());
            for i in 0..nets.num_agents() {
                let obs = agent_obs_matrix(batch, i, false);
                let (loss_i, g) = improve_piece(nets, i, &obs, entropy_coeff)?;
                per_agent_loss.push(ensure_finite(loss_i, "per-agent policy loss")?);
                grads.push(g);
            }
            Ok(PolicyLoss {
                loss: per_agent_loss.iter().sum::<f64>() / nets.num_agents() as f64,
                per_agent_loss,
                grads,
            })
        }
    }
}

/// Total decomposed value sum_i Q_i(o_i, a_i) per record, through the same
/// batched forward path the CTDE loss uses.
pub fn ctde_q_tot(batch: &[&TransitionRecord], nets: &AgentNets) -> Result<Vec<f64>> {
    validate_batch(batch, nets)?;
    let mut q_tot = vec![0.0; batch.len()];
    for i in 0..nets.num_agents() {
        let obs = agent_obs_matrix(batch, i, false);
        let q = nets.bundles[i].critic.forward_batch(&obs)?;
        for (b, record) in batch.iter().enumerate() {
            q_tot[b] += q[[record.joint_action[i], b]];
        }
    }
    Ok(q_tot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::config::Algo;
    use crate::nn::DenseNet;

    /// Record constructor for synthetic batches.
    fn rec(
        obs: Vec<Vec<f64>>,
        action: Vec<usize>,
        reward: f64,
        next_obs: Vec<Vec<f64>>,
        done: bool,
    ) -> TransitionRecord {
        TransitionRecord {
            episode_id: 0,
            t: 0,
            obs,
            joint_action: action,
            reward,
            next_obs,
            done,
            behavior_tag: "test".into(),
        }
    }

    /// Single-layer net with zero weights and a fixed output bias, so the
    /// output is `bias` for any input.
    fn constant_net(input: usize, bias: &[f64]) -> DenseNet {
        let mut net = DenseNet::zeros(&[input, bias.len()]);
        for (i, &b) in bias.iter().enumerate() {
            net.set_param(input * bias.len() + i, b);
        }
        net
    }

    #[test]
    fn cql_penalty_cases() {
        assert_eq!(cql_penalty(&[3.7], 0).unwrap(), 0.0);
        let n = 5;
        let row = vec![1.25; n];
        assert!((cql_penalty(&row, 2).unwrap() - (n as f64).ln()).abs() < 1e-12);
        let row = [0.0, 3f64.ln()];
        assert!((cql_penalty(&row, 0).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert!(cql_penalty(&row, 5).is_err());
    }

    #[test]
    fn cql_penalty_is_nonnegative() {
        let mut rng = crate::seeding::derive_rng(0, "penalty");
        use rand::Rng;
        for _ in 0..10_000 {
            let n = rng.random_range(1..8);
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let a = rng.random_range(0..n);
            assert!(cql_penalty(&row, a).unwrap() >= -1e-12);
        }
    }

    /// Two agents, two actions each. Constant nets so everything is
    /// hand-computable.
    fn tiny_ctde_nets() -> AgentNets {
        let mut nets = AgentNets::new(Algo::CqlCtde, 2, 2, 2, &[4], 0);
        nets.bundles[0].critic = constant_net(2, &[1.0, 2.0]);
        nets.bundles[0].target_critic = constant_net(2, &[0.5, 1.5]);
        nets.bundles[0].policy = constant_net(2, &[0.0, 0.0]);
        nets.bundles[1].critic = constant_net(2, &[-1.0, 0.5]);
        nets.bundles[1].target_critic = constant_net(2, &[2.0, 0.0]);
        nets.bundles[1].policy = constant_net(2, &[3f64.ln(), 0.0]);
        nets
    }

    fn tiny_batch() -> Vec<TransitionRecord> {
        vec![
            rec(
                vec![vec![0.1, 0.2], vec![0.3, 0.4]],
                vec![0, 1],
                1.0,
                vec![vec![0.5, 0.6], vec![0.7, 0.8]],
                false,
            ),
            rec(
                vec![vec![-0.1, 0.0], vec![0.2, -0.3]],
                vec![1, 0],
                -0.5,
                vec![vec![0.0, 0.1], vec![-0.2, 0.3]],
                true,
            ),
        ]
    }

    /// Scalar-arithmetic evaluation of the soft expectation for a constant
    /// net pair (probabilities p, target values qhat).
    fn hand_soft(p: &[f64], qhat: &[f64], ent: f64) -> f64 {
        p.iter()
            .zip(qhat)
            .map(|(&p, &q)| p * (q - ent * p.max(POLICY_PROB_FLOOR).ln()))
            .sum()
    }

    #[test]
    fn ctde_eval_matches_hand_enumeration() {
        let nets = tiny_ctde_nets();
        let batch = tiny_batch();
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        let beta = 0.9;
        let ent = 0.7;
        let result = ctde_eval_loss(&refs, &nets, beta, ent).unwrap();

        // Agent 0: uniform policy over (0.5, 1.5); agent 1: probs
        // softmax(ln3, 0) = (0.75, 0.25) over (2.0, 0.0).
        let soft0 = hand_soft(&[0.5, 0.5], &[0.5, 1.5], ent);
        let p1 = [0.75, 0.25];
        let soft1 = hand_soft(&p1, &[2.0, 0.0], ent);

        // Sample 1: actions (0, 1) -> Qtot = 1.0 + 0.5; not done.
        let resid1 = 1.0 + beta * (soft0 + soft1) - (1.0 + 0.5);
        // Sample 2: actions (1, 0) -> Qtot = 2.0 + (-1.0); done drops the
        // bootstrap.
        let resid2 = -0.5 - (2.0 - 1.0);
        let expected = (resid1 * resid1 + resid2 * resid2) / 2.0;
        assert!(
            (result.loss - expected).abs() < 1e-12,
            "{} vs {expected}",
            result.loss
        );
    }

    #[test]
    fn ctde_simple_fixed_points() {
        // All critics zero, r = 1, beta -> 0 limit: loss = 1.
        let mut nets = AgentNets::new(Algo::CqlCtde, 2, 2, 2, &[4], 1);
        for bundle in &mut nets.bundles {
            bundle.critic = DenseNet::zeros(&[2, 2]);
            bundle.target_critic = DenseNet::zeros(&[2, 2]);
            bundle.policy = DenseNet::zeros(&[2, 2]);
        }
        let batch = vec![rec(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![0, 0],
            1.0,
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            false,
        )];
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        // beta = 0 is outside the valid (0,1) training range but fine for
        // the loss function itself.
        let result = ctde_eval_loss(&refs, &nets, 0.0, 1.0).unwrap();
        assert!((result.loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centralized_eval_matches_hand_enumeration() {
        // One agent, two actions: the centralized loss over joint actions
        // reduces to scalars we can enumerate by hand.
        let mut nets = AgentNets::new(Algo::CqlC, 1, 2, 2, &[4], 2);
        nets.bundles[0].critic = constant_net(2, &[0.3, -0.2]);
        nets.bundles[0].target_critic = constant_net(2, &[1.0, 2.0]);
        nets.bundles[0].policy = constant_net(2, &[0.0, 2f64.ln()]);
        let batch = vec![
            rec(vec![vec![0.0, 0.1]], vec![0], 0.5, vec![vec![0.2, 0.3]], false),
            rec(vec![vec![0.4, 0.5]], vec![1], -1.0, vec![vec![0.6, 0.7]], false),
        ];
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        let beta = 0.8;
        let ent = 1.0;
        let result = sac_eval_loss_centralized(&refs, &nets, beta, ent).unwrap();

        let p = [1.0 / 3.0, 2.0 / 3.0]; // softmax(0, ln 2)
        let soft = hand_soft(&p, &[1.0, 2.0], ent);
        let r1 = 0.5 + beta * soft - 0.3;
        let r2 = -1.0 + beta * soft - (-0.2);
        let expected = (r1 * r1 + r2 * r2) / 2.0;
        assert!((result.loss - expected).abs() < 1e-12);
    }

    #[test]
    fn centralized_eval_trivial_zero() {
        // beta = 0 and Q(S, A) = r = 0 for every sample: loss is exactly 0.
        let mut nets = AgentNets::new(Algo::SacC, 2, 2, 2, &[4], 3);
        nets.bundles[0].critic = DenseNet::zeros(&[4, 4]);
        nets.bundles[0].target_critic = DenseNet::zeros(&[4, 4]);
        nets.bundles[0].policy = DenseNet::zeros(&[4, 4]);
        let batch = vec![rec(
            vec![vec![0.3, -0.1], vec![0.2, 0.4]],
            vec![1, 2 % 2],
            0.0,
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            false,
        )];
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        let result = sac_eval_loss_centralized(&refs, &nets, 0.0, 1.0).unwrap();
        assert_eq!(result.loss, 0.0);
    }

    #[test]
    fn one_hot_policy_collapses_expectation() {
        let mut nets = AgentNets::new(Algo::CqlC, 1, 2, 2, &[4], 4);
        nets.bundles[0].critic = constant_net(2, &[0.0, 0.0]);
        nets.bundles[0].target_critic = constant_net(2, &[4.0, -7.0]);
        // Massive logit gap: policy is numerically one-hot on action 0.
        nets.bundles[0].policy = constant_net(2, &[100.0, 0.0]);
        let batch = vec![rec(vec![vec![0.0, 0.0]], vec![0], 0.0, vec![vec![0.0, 0.0]], false)];
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        let beta = 1.0 - 1e-9;
        let result = sac_eval_loss_centralized(&refs, &nets, beta, 1.0).unwrap();
        // Expectation collapses to Qhat(s', a*) = 4.0; residual = beta * 4.
        let expected = (beta * 4.0f64).powi(2);
        assert!((result.loss - expected).abs() < 1e-6, "{}", result.loss);
    }

    #[test]
    fn improve_loss_gradient_vanishes_at_uniform_q() {
        let mut nets = AgentNets::new(Algo::SacI, 1, 2, 3, &[4], 5);
        nets.bundles[0].critic = constant_net(2, &[0.5, 0.5, 0.5]);
        nets.bundles[0].policy = DenseNet::zeros(&[2, 3]);
        let batch = vec![rec(vec![vec![0.0, 0.0]], vec![0], 0.0, vec![vec![0.0, 0.0]], false)];
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        let result = sac_improve_loss(&refs, &nets, 1.0).unwrap();
        for idx in 0..nets.bundles[0].policy.param_count() {
            assert!(result.grads[0].get(idx).abs() < 1e-12);
        }
    }

    #[test]
    fn improve_loss_pure_exploitation_prefers_one_hot() {
        let q = [1.0, 0.0, 0.0];
        let loss_at = |logit0: f64| {
            let mut nets = AgentNets::new(Algo::SacI, 1, 2, 3, &[4], 6);
            nets.bundles[0].critic = constant_net(2, &q);
            nets.bundles[0].policy = constant_net(2, &[logit0, 0.0, 0.0]);
            let batch = vec![rec(vec![vec![0.0, 0.0]], vec![0], 0.0, vec![vec![0.0, 0.0]], false)];
            let refs: Vec<&TransitionRecord> = batch.iter().collect();
            sac_improve_loss(&refs, &nets, 0.0).unwrap().loss
        };
        let uniform = loss_at(0.0);
        let peaked = loss_at(30.0);
        assert!(peaked < uniform);
        assert!((peaked - (-1.0)).abs() < 1e-9, "one-hot loss {peaked}");
    }

    #[test]
    fn improve_loss_at_softmax_q_equals_neg_logsumexp() {
        let q = [1.0, 2.0, 3.0];
        let mut nets = AgentNets::new(Algo::SacI, 1, 2, 3, &[4], 7);
        nets.bundles[0].critic = constant_net(2, &q);
        // pi = softmax(Q) is the closed-form optimum at ent = 1.
        nets.bundles[0].policy = constant_net(2, &q);
        let batch = vec![rec(vec![vec![0.0, 0.0]], vec![0], 0.0, vec![vec![0.0, 0.0]], false)];
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        let result = sac_improve_loss(&refs, &nets, 1.0).unwrap();
        let lse = crate::nn::logsumexp(&q).unwrap();
        assert!((result.loss - (-lse)).abs() < 1e-9);
    }

    #[test]
    fn dqn_loss_hand_case_and_terminal() {
        let mut nets = AgentNets::new(Algo::DqnC, 1, 2, 3, &[4], 8);
        nets.bundles[0].critic = constant_net(2, &[0.0, 0.0, 0.0]);
        nets.bundles[0].target_critic = constant_net(2, &[1.0, 5.0, 2.0]);
        let batch = vec![rec(vec![vec![0.0, 0.0]], vec![0], 1.0, vec![vec![0.0, 0.0]], false)];
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        let result = dqn_loss(&refs, &nets, 0.5).unwrap();
        // Target 1 + 0.5 * 5 = 3.5 against Q = 0.
        assert!((result.loss - 3.5f64.powi(2)).abs() < 1e-12);

        let terminal = vec![rec(vec![vec![0.0, 0.0]], vec![0], 1.0, vec![vec![0.0, 0.0]], true)];
        let refs: Vec<&TransitionRecord> = terminal.iter().collect();
        let result = dqn_loss(&refs, &nets, 0.5).unwrap();
        assert!((result.loss - 1.0).abs() < 1e-12);

        // Perfect Q at beta = 0 has zero loss.
        let mut perfect = AgentNets::new(Algo::DqnC, 1, 2, 3, &[4], 9);
        perfect.bundles[0].critic = constant_net(2, &[1.0, 1.0, 1.0]);
        let batch = vec![rec(vec![vec![0.0, 0.0]], vec![1], 1.0, vec![vec![0.0, 0.0]], false)];
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        assert_eq!(dqn_loss(&refs, &perfect, 0.0).unwrap().loss, 0.0);
    }

    #[test]
    fn scope_losses_agree_for_single_agent() {
        // With I = 1 the centralized, independent, and CTDE losses are the
        // same function of identical nets.
        let batch = vec![
            rec(vec![vec![0.1, -0.2]], vec![0], 0.7, vec![vec![0.3, 0.4]], false),
            rec(vec![vec![0.5, 0.6]], vec![2], -0.1, vec![vec![-0.7, 0.8]], false),
            rec(vec![vec![0.9, -1.0]], vec![1], 0.2, vec![vec![0.1, 0.2]], true),
        ];
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        let c = AgentNets::new(Algo::CqlC, 1, 2, 3, &[8], 10);
        let i = AgentNets::new(Algo::CqlI, 1, 2, 3, &[8], 10);
        let ctde = AgentNets::new(Algo::CqlCtde, 1, 2, 3, &[8], 10);
        // Same seed and shapes give identical parameters across scopes.
        assert_eq!(c.bundles[0].critic, i.bundles[0].critic);

        let (beta, ent, alpha) = (0.97, 0.6, 1.3);
        let lc = cql_critic_loss(&refs, &c, beta, ent, alpha).unwrap();
        let li = cql_critic_loss(&refs, &i, beta, ent, alpha).unwrap();
        let lt = cql_critic_loss(&refs, &ctde, beta, ent, alpha).unwrap();
        assert!((lc.loss - li.loss).abs() < 1e-10);
        assert!((lc.loss - lt.loss).abs() < 1e-10);

        let ec = sac_eval_loss_centralized(&refs, &c, beta, ent).unwrap();
        let ei = sac_eval_loss_independent(&refs, &i, beta, ent).unwrap();
        let et = ctde_eval_loss(&refs, &ctde, beta, ent).unwrap();
        assert!((ec.loss - ei.loss).abs() < 1e-10);
        assert!((ec.loss - et.loss).abs() < 1e-10);

        let pc = sac_improve_loss(&refs, &c, ent).unwrap();
        let pi = sac_improve_loss(&refs, &i, ent).unwrap();
        let pt = sac_improve_loss(&refs, &ctde, ent).unwrap();
        assert!((pc.loss - pi.loss).abs() < 1e-10);
        assert!((pc.loss - pt.loss).abs() < 1e-10);
    }

    #[test]
    fn q_tot_matches_independent_sums() {
        let nets = AgentNets::new(Algo::CqlCtde, 3, 4, 3, &[8], 11);
        let mut rng = crate::seeding::derive_rng(12, "qtot");
        use rand::Rng;
        let batch: Vec<TransitionRecord> = (0..5)
            .map(|_| {
                let obs: Vec<Vec<f64>> = (0..3)
                    .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                rec(
                    obs.clone(),
                    (0..3).map(|_| rng.random_range(0..3)).collect(),
                    0.0,
                    obs,
                    false,
                )
            })
            .collect();
        let refs: Vec<&TransitionRecord> = batch.iter().collect();
        let q_tot = ctde_q_tot(&refs, &nets).unwrap();
        for (b, record) in batch.iter().enumerate() {
            let mut by_hand = 0.0;
            for i in 0..3 {
                let q = nets.bundles[i].critic.forward(&record.obs[i]).unwrap();
                by_hand += q[record.joint_action[i]];
            }
            assert!((q_tot[b] - by_hand).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_malformed_batches() {
        let nets = AgentNets::new(Algo::CqlCtde, 2, 2, 2, &[4], 13);
        let empty: Vec<&TransitionRecord> = Vec::new();
        assert!(matches!(
            ctde_eval_loss(&empty, &nets, 0.9, 1.0),
            Err(Error::EmptyInput(_))
        ));
        let bad_action = vec![rec(
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            vec![0, 2],
            0.0,
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
            false,
        )];
        let refs: Vec<&TransitionRecord> = bad_action.iter().collect();
        assert!(matches!(
            ctde_eval_loss(&refs, &nets, 0.9, 1.0),
            Err(Error::InvalidAction { .. })
        ));
    }
}
