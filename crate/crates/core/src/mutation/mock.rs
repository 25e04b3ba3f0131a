use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MutationError, MutationOperator, PromptContext};
use crate::redcode::{random_perturb, random_warrior, Mode, OperatorBias, ParseOptions, Warrior};
use crate::redcode::{EditWeights, Opcode};

/// Offline operator: fresh warriors and single edits drawn from a bias
/// table. A pure function of (context, seed, bias).
#[derive(Debug, Clone)]
pub struct MockOperator {
    identity: String,
    bias: OperatorBias,
    limits: ParseOptions,
    latency: Duration,
    failure_rate: f64,
}

impl MockOperator {
    pub fn new(bias: OperatorBias, limits: ParseOptions) -> Self {
        MockOperator {
            identity: format!("mock:{}", bias.name),
            bias,
            limits,
            latency: Duration::from_secs(1),
            failure_rate: 0.0,
        }
    }

    /// Simulated time one call takes.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    /// Probability that a call fails outright, to exercise the failure path.
    pub fn with_failure_rate(mut self, rate: f64) -> Self {
        self.failure_rate = rate.clamp(0.0, 1.0);
        self
    }

    pub fn bias(&self) -> &OperatorBias {
        &self.bias
    }

    fn maybe_fail(&self, seed: u64) -> Result<(), MutationError> {
        if self.failure_rate > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_fa11);
            if rng.gen_bool(self.failure_rate) {
                return Err(MutationError::OperatorFailure {
                    attempts: 1,
                    last_error: "simulated operator failure".into(),
                });
            }
        }
        Ok(())
    }
}

impl MutationOperator for MockOperator {
    fn identity(&self) -> &str {
        &self.identity
    }

    fn generate(&mut self, _ctx: &PromptContext, seed: u64) -> Result<Warrior, MutationError> {
        self.maybe_fail(seed)?;
        Ok(random_warrior(seed, &self.bias, &self.limits).with_origin(self.identity.clone()))
    }

    fn mutate(&mut self, ctx: &PromptContext, seed: u64) -> Result<Warrior, MutationError> {
        let parent = ctx
            .parent
            .as_ref()
            .ok_or_else(|| MutationError::Precondition("mutate needs a parent".into()))?;
        self.maybe_fail(seed)?;
        let (mut child, _) = random_perturb(parent, seed, &self.bias, &self.limits);
        child.name.clear();
        child.author = None;
        Ok(child.with_origin(self.identity.clone()))
    }

    fn latency(&self) -> Duration {
        self.latency
    }
}

/// Names accepted by [`profile`].
pub const PROFILE_NAMES: [&str; 5] = ["uniform", "bomber", "scanner", "replicator", "runner"];

/// Bias tables standing in for the priors of different model families.
/// Each favors the opcodes, modes and program sizes of one classic
/// archetype.
pub fn profile(name: &str) -> Option<OperatorBias> {
    use Mode::*;
    use Opcode::*;
    let base = OperatorBias {
        name: name.to_string(),
        ..OperatorBias::default()
    };
    let bias = match name {
        "uniform" => base,
        "bomber" => OperatorBias {
            generate_length: (3, 6),
            ..base
                .with_opcodes(&[(Mov, 5.0), (Add, 3.0), (Jmp, 2.5), (Dat, 2.0), (Sub, 1.0), (Djn, 1.0)])
                .with_modes(&[(Immediate, 3.0), (Direct, 3.0), (BIndirect, 2.5), (BPredecrement, 1.0)])
        },
        "scanner" => OperatorBias {
            generate_length: (5, 12),
            value_range: 40,
            ..base
                .with_opcodes(&[
                    (Seq, 3.0),
                    (Sne, 2.0),
                    (Jmz, 2.5),
                    (Jmn, 1.5),
                    (Add, 3.0),
                    (Mov, 2.5),
                    (Jmp, 2.0),
                    (Slt, 1.0),
                    (Dat, 1.0),
                ])
                .with_modes(&[(Direct, 3.0), (Immediate, 2.0), (AIndirect, 2.0), (BIndirect, 2.0), (APostincrement, 1.0)])
        },
        "replicator" => OperatorBias {
            generate_length: (6, 14),
            wide_value_rate: 0.3,
            ..base
                .with_opcodes(&[(Spl, 4.0), (Mov, 4.0), (Djn, 2.0), (Jmz, 1.0), (Add, 1.5), (Dat, 1.0)])
                .with_modes(&[
                    (Direct, 2.0),
                    (Immediate, 1.5),
                    (BIndirect, 1.5),
                    (BPredecrement, 1.5),
                    (APostincrement, 2.0),
                    (BPostincrement, 2.0),
                ])
                .with_edits(EditWeights {
                    point: 0.45,
                    insert: 0.3,
                    delete: 0.1,
                    swap: 0.15,
                })
        },
        "runner" => OperatorBias {
            generate_length: (1, 3),
            value_range: 4,
            ..base
                .with_opcodes(&[(Mov, 6.0), (Spl, 1.5), (Jmp, 1.5), (Nop, 1.0)])
                .with_modes(&[(Direct, 6.0), (Immediate, 1.0), (APostincrement, 1.0)])
                .with_edits(EditWeights {
                    point: 0.7,
                    insert: 0.1,
                    delete: 0.1,
                    swap: 0.1,
                })
        },
        _ => return None,
    };
    Some(bias)
}
