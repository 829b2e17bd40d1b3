//! Joint-action encoding: a joint action is a base-(N+1) number with agent 0
//! as the least-significant digit.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointActionCodec {
    num_agents: usize,
    per_agent_actions: usize,
}

impl JointActionCodec {
    pub fn new(num_agents: usize, per_agent_actions: usize) -> JointActionCodec {
        assert!(num_agents >= 1 && per_agent_actions >= 1);
        JointActionCodec {
            num_agents,
            per_agent_actions,
        }
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn per_agent_actions(&self) -> usize {
        self.per_agent_actions
    }

    /// Total number of joint actions, (N+1)^I.
    pub fn num_joint(&self) -> usize {
        self.per_agent_actions
            .checked_pow(self.num_agents as u32)
            .expect("joint action space overflows usize")
    }

    pub fn encode(&self, actions: &[usize]) -> Result<usize> {
        if actions.len() != self.num_agents {
            return Err(Error::DimensionMismatch {
                context: "codec encode",
                expected: self.num_agents,
                got: actions.len(),
            });
        }
        let mut index = 0;
        for (agent, &a) in actions.iter().enumerate().rev() {
            if a >= self.per_agent_actions {
                return Err(Error::InvalidAction {
                    agent,
                    action: a,
                    max: self.per_agent_actions - 1,
                });
            }
            index = index * self.per_agent_actions + a;
        }
        Ok(index)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut actions = Vec::with_capacity(self.num_agents);
        for _ in 0..self.num_agents {
            actions.push(index % self.per_agent_actions);
            index /= self.per_agent_actions;
        }
        actions
    }
}
