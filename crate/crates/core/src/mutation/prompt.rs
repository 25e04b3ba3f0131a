use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MutationError;
use crate::mars::{BehavioralCharacteristic, MarsConfig};
use crate::redcode::{serialize, Warrior};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    New,
    Mutate,
}

/// Everything an operator may see when asked for a warrior.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptContext {
    pub mode: PromptMode,
    pub parent: Option<Warrior>,
    pub parent_fitness: Option<f64>,
    pub parent_bc: Option<BehavioralCharacteristic>,
    pub rules_digest: String,
}

impl PromptContext {
    pub fn new_program(rules_digest: impl Into<String>) -> Self {
        PromptContext {
            mode: PromptMode::New,
            parent: None,
            parent_fitness: None,
            parent_bc: None,
            rules_digest: rules_digest.into(),
        }
    }

    pub fn mutate(
        parent: Warrior,
        fitness: f64,
        bc: BehavioralCharacteristic,
        rules_digest: impl Into<String>,
    ) -> Self {
        PromptContext {
            mode: PromptMode::Mutate,
            parent: Some(parent),
            parent_fitness: Some(fitness),
            parent_bc: Some(bc),
            rules_digest: rules_digest.into(),
        }
    }
}

/// Prompt text, kept as data so experiments can swap it without a rebuild.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub rules: String,
    pub new: String,
    pub mutate: String,
    pub repair: String,
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            rules: include_str!("../../templates/rules.txt").to_string(),
            new: include_str!("../../templates/new.txt").to_string(),
            mutate: include_str!("../../templates/mutate.txt").to_string(),
            repair: include_str!("../../templates/repair.txt").to_string(),
        }
    }
}

impl Templates {
    /// Reads `rules.txt`, `new.txt`, `mutate.txt` and `repair.txt` from
    /// `dir`; missing files fall back to the bundled text.
    pub fn load_dir(dir: &Path) -> Result<Self, MutationError> {
        let mut t = Templates::default();
        for (file, slot) in [
            ("rules.txt", &mut t.rules),
            ("new.txt", &mut t.new),
            ("mutate.txt", &mut t.mutate),
            ("repair.txt", &mut t.repair),
        ] {
            let path = dir.join(file);
            match std::fs::read_to_string(&path) {
                Ok(text) => *slot = text,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(MutationError::Template(format!("{}: {e}", path.display()))),
            }
        }
        Ok(t)
    }

    /// The rules text with this configuration's limits filled in.
    pub fn rules_digest(&self, cfg: &MarsConfig) -> String {
        self.rules
            .replace("{core_size}", &cfg.core_size.to_string())
            .replace("{max_cycles}", &cfg.max_cycles.to_string())
            .replace("{max_length}", &cfg.max_warrior_length.to_string())
    }

    pub fn build_prompt(&self, ctx: &PromptContext) -> Result<String, MutationError> {
        match ctx.mode {
            PromptMode::New => Ok(self.new.replace("{rules}", &ctx.rules_digest)),
            PromptMode::Mutate => {
                let (Some(parent), Some(fitness), Some(bc)) = (&ctx.parent, ctx.parent_fitness, ctx.parent_bc) else {
                    return Err(MutationError::Precondition(
                        "mutate prompt needs a parent with fitness and BC".into(),
                    ));
                };
                // substitute {rules} last so rules text cannot inject placeholders
                Ok(self
                    .mutate
                    .replace("{parent_code}", &serialize(parent))
                    .replace("{fitness}", &format!("{fitness:.4}"))
                    .replace("{tsp}", &format!("{:.1}", bc.tsp))
                    .replace("{mc}", &format!("{:.4}", bc.mc))
                    .replace("{rules}", &ctx.rules_digest))
            }
        }
    }

    pub fn repair_prompt(&self, error: &str) -> String {
        self.repair.replace("{error}", error)
    }
}
