use serde::{Deserialize, Serialize};

use super::MarsError;
use crate::redcode::{ParseOptions, DEFAULT_CORE_SIZE, DEFAULT_MAX_LENGTH};

/// Battle parameters. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarsConfig {
    pub core_size: u32,
    /// Simulation timesteps per battle.
    pub max_cycles: u32,
    pub rounds_per_pair: u32,
    pub min_separation: u32,
    /// `None` means unlimited, which is capped at `core_size` processes.
    pub process_limit: Option<u32>,
    pub max_warrior_length: usize,
    pub rng_seed: u64,
}

impl Default for MarsConfig {
    fn default() -> Self {
        MarsConfig {
            core_size: DEFAULT_CORE_SIZE,
            max_cycles: 80_000,
            rounds_per_pair: 20,
            min_separation: 100,
            process_limit: None,
            max_warrior_length: DEFAULT_MAX_LENGTH,
            rng_seed: 0,
        }
    }
}

impl MarsConfig {
    pub fn validate(&self) -> Result<(), MarsError> {
        let fail = |msg: String| Err(MarsError::Config(msg));
        if self.max_warrior_length == 0 {
            return fail("max_warrior_length must be at least 1".into());
        }
        if u64::from(self.core_size) <= 2 * self.max_warrior_length as u64 {
            return fail(format!(
                "core_size {} must exceed twice max_warrior_length {}",
                self.core_size, self.max_warrior_length
            ));
        }
        if self.core_size > 1 << 30 {
            return fail(format!("core_size {} is too large", self.core_size));
        }
        if (self.min_separation as usize) < self.max_warrior_length {
            return fail(format!(
                "min_separation {} is below max_warrior_length {}",
                self.min_separation, self.max_warrior_length
            ));
        }
        if self.max_cycles == 0 {
            return fail("max_cycles must be at least 1".into());
        }
        if self.rounds_per_pair == 0 {
            return fail("rounds_per_pair must be at least 1".into());
        }
        match self.process_limit {
            Some(0) => fail("process_limit must be at least 1".into()),
            Some(limit) if limit > self.core_size => fail(format!(
                "process_limit {limit} exceeds core_size {}; leave it unset for unlimited",
                self.core_size
            )),
            _ => Ok(()),
        }
    }

    pub fn effective_process_limit(&self) -> usize {
        self.process_limit.unwrap_or(self.core_size) as usize
    }

    pub fn parse_options(&self) -> ParseOptions {
        ParseOptions {
            core_size: self.core_size,
            max_length: self.max_warrior_length,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_standard_tournament_settings() {
        let cfg = MarsConfig::default();
        assert_eq!(cfg.core_size, 8000);
        assert_eq!(cfg.max_cycles, 80_000);
        assert_eq!(cfg.rounds_per_pair, 20);
        assert_eq!(cfg.process_limit, None);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn rejects_invariant_violations() {
        let bad = [
            MarsConfig { core_size: 200, ..Default::default() },
            MarsConfig { min_separation: 50, ..Default::default() },
            MarsConfig { process_limit: Some(9000), ..Default::default() },
            MarsConfig { process_limit: Some(0), ..Default::default() },
            MarsConfig { rounds_per_pair: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(MarsError::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn config_keys_mirror_field_names() {
        let json = r#"{"core_size": 800, "max_cycles": 8000, "rounds_per_pair": 2,
                       "min_separation": 100, "process_limit": 64, "max_warrior_length": 100, "rng_seed": 7}"#;
        let cfg: MarsConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.process_limit, Some(64));
        assert!(serde_json::from_str::<MarsConfig>(r#"{"coresize": 1}"#).is_err());
    }
}
