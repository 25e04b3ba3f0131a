use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    CallRecord, Champion, ChampionChannel, DrqError, Evaluator, IterationSummary, NodeConfig, OpponentPool, RoundReport,
};
use crate::archive::{niche_novelty, Archive, BcGrid, Elite};
use crate::mars::MarsConfig;
use crate::mutation::{MutationOperator, PromptContext, PromptMode, Templates};
use crate::redcode::Warrior;
use crate::seed::mix;

/// Outcome of absorbing one drain's worth of peer champions.
#[derive(Debug, Clone, PartialEq)]
pub struct Integration {
    /// Champions kept after de-duplication.
    pub received: Vec<Elite>,
    pub seeded: usize,
    pub niche_novelty: Option<f64>,
}

/// State of one node: its archive, opponent pool, operator and counters.
pub struct Node {
    cfg: NodeConfig,
    operator: Box<dyn MutationOperator>,
    evaluator: Evaluator,
    archive: Archive,
    pool: OpponentPool,
    rules_digest: String,
    /// Archive as it stood when the current round began.
    snapshot: Archive,
    /// Pool frozen at the start of the current round.
    round_pool: Vec<(String, Warrior)>,
    round: u32,
    calls_total: u64,
    own_hashes: HashSet<String>,
}

impl Node {
    pub fn new(
        cfg: NodeConfig,
        operator: Box<dyn MutationOperator>,
        mars: MarsConfig,
        grid: BcGrid,
        seeds: Vec<Warrior>,
        templates: &Templates,
    ) -> Result<Self, DrqError> {
        cfg.validate()?;
        mars.validate()?;
        grid.validate().map_err(|e| DrqError::Config(e.to_string()))?;
        if seeds.is_empty() {
            return Err(DrqError::Config("initial opponent pool is empty".into()));
        }
        let rules_digest = templates.rules_digest(&mars);
        let archive = Archive::new(grid);
        let pool = OpponentPool::new(seeds, cfg.champion_window);
        Ok(Node {
            evaluator: Evaluator::new(mars.clone(), mars.rng_seed),
            snapshot: archive.clone(),
            round_pool: pool.members(),
            archive,
            pool,
            rules_digest,
            cfg,
            operator,
            round: 0,
            calls_total: 0,
            own_hashes: HashSet::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.cfg.node_id
    }

    pub fn config(&self) -> &NodeConfig {
        &self.cfg
    }

    pub fn archive(&self) -> &Archive {
        &self.archive
    }

    pub fn pool(&self) -> &OpponentPool {
        &self.pool
    }

    pub fn calls_total(&self) -> u64 {
        self.calls_total
    }

    /// Rounds started so far.
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn operator_identity(&self) -> &str {
        self.operator.identity()
    }

    /// Start the next round: freeze the pool, snapshot the archive and make
    /// exactly `iters_per_round` operator calls.
    pub fn run_iterations(&mut self) -> Result<IterationSummary, DrqError> {
        self.round += 1;
        let r = self.round;
        self.round_pool = self.pool.members();
        self.snapshot = self.archive.clone();
        let mut calls = Vec::with_capacity(self.cfg.iters_per_round as usize);
        let mut busy_secs = 0.0;
        for t in 0..self.cfg.iters_per_round {
            let record = self.iterate(r, t)?;
            busy_secs += record.latency_secs;
            calls.push(record);
        }
        Ok(IterationSummary { round: r, calls, busy_secs })
    }

    fn iterate(&mut self, r: u32, t: u32) -> Result<CallRecord, DrqError> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(mix(self.cfg.rng_seed, u64::from(r)), u64::from(t)));
        let fresh = self.archive.is_empty() || rng.gen::<f64>() < self.cfg.p_new;
        let op_seed: u64 = rng.gen();
        let result = if fresh {
            let ctx = PromptContext::new_program(self.rules_digest.clone());
            self.operator.generate(&ctx, op_seed)
        } else {
            let parent = self.archive.sample_uniform(rng.gen()).expect("archive is non-empty");
            let ctx = PromptContext::mutate(
                parent.warrior.clone(),
                parent.fitness,
                parent.bc,
                self.rules_digest.clone(),
            );
            self.operator.mutate(&ctx, op_seed)
        };
        self.calls_total += 1;
        let mut record = CallRecord {
            node_id: self.cfg.node_id.clone(),
            round: r,
            iter: t,
            mode: if fresh { PromptMode::New } else { PromptMode::Mutate },
            ok: false,
            error: None,
            hash: None,
            fitness: None,
            bc: None,
            cell: None,
            accepted: false,
            latency_secs: self.operator.latency().as_secs_f64(),
        };
        match result {
            Ok(mut w) => {
                if w.origin.is_none() {
                    w.origin = Some(self.operator.identity().to_string());
                }
                let eval = self.evaluator.evaluate(&w, &self.round_pool)?;
                record.ok = true;
                record.hash = Some(w.content_hash());
                record.fitness = Some(eval.fitness);
                record.bc = Some(eval.bc);
                record.cell = Some(self.archive.grid().bin(&eval.bc));
                record.accepted = self.archive.update(w, eval.fitness, eval.bc, r);
            }
            Err(e) => record.error = Some(e.to_string()),
        }
        Ok(record)
    }

    /// Re-score every elite against the frozen round pool and return the
    /// best. Ties go to the lexicographically lowest cell. `None` when the
    /// archive is empty.
    pub fn select_champion(&mut self) -> Result<Option<Champion>, DrqError> {
        let mut best: Option<Champion> = None;
        let elites: Vec<Elite> = self.archive.elites().cloned().collect();
        for elite in elites {
            let eval = self.evaluator.evaluate(&elite.warrior, &self.round_pool)?;
            if best.as_ref().is_none_or(|b| eval.fitness > b.fitness) {
                best = Some(Champion::new(
                    &self.cfg.node_id,
                    self.round,
                    eval.fitness,
                    eval.bc,
                    elite.warrior,
                ));
            }
        }
        if let Some(c) = &best {
            self.own_hashes.insert(c.hash.clone());
        }
        Ok(best)
    }

    /// Absorb peer champions: drop echoes and duplicates, measure each one
    /// locally against the round pool, add them to the pool and seed the
    /// archive's empty cells.
    pub fn integrate(&mut self, received: Vec<Champion>) -> Result<Integration, DrqError> {
        let mut seen = HashSet::new();
        let mut kept = Vec::new();
        for c in received {
            if c.node_id == self.cfg.node_id
                || self.own_hashes.contains(&c.hash)
                || self.pool.contains(&c.hash)
                || !seen.insert(c.hash.clone())
            {
                continue;
            }
            if c.warrior
                .validate(self.evaluator.mars().core_size, self.evaluator.mars().max_warrior_length)
                .is_err()
            {
                continue;
            }
            let eval = self.evaluator.evaluate(&c.warrior, &self.round_pool)?;
            let mut elite = Elite::new(self.archive.grid(), c.warrior, eval.fitness, eval.bc, self.round);
            elite.origin = format!("peer:{}/r{}", c.node_id, c.round);
            kept.push(elite);
        }
        let niche_novelty = niche_novelty(&kept, &self.snapshot);
        for elite in &kept {
            self.pool.add_peer(elite.warrior.clone());
        }
        let seeded = self.archive.seed(kept.iter().cloned());
        Ok(Integration {
            received: kept,
            seeded,
            niche_novelty,
        })
    }

    /// Close the round: retain the champion in the pool and summarize.
    pub fn finish_round(
        &mut self,
        summary: &IterationSummary,
        champion: Option<&Champion>,
        integration: &Integration,
    ) -> RoundReport {
        if let Some(c) = champion {
            self.pool.add_own(c.warrior.clone());
        }
        RoundReport {
            node_id: self.cfg.node_id.clone(),
            round: summary.round,
            champion_hash: champion.map(|c| c.hash.clone()),
            champion_fitness: champion.map(|c| c.fitness),
            champion_bc: champion.map(|c| c.bc),
            coverage: self.archive.coverage(),
            qd_score: self.archive.qd_score(),
            niche_novelty: integration.niche_novelty,
            received: integration.received.len(),
            seeded: integration.seeded,
            pool_size: self.pool.len(),
            calls_used: summary.calls.len() as u32,
            calls_total: self.calls_total,
            failures: summary.calls.iter().filter(|c| !c.ok).count() as u32,
            accepted: summary.calls.iter().filter(|c| c.accepted).count() as u32,
            sim_start: None,
            sim_end: None,
        }
    }

    /// One full round: iterate, select, publish, drain, integrate.
    pub fn run_round(
        &mut self,
        channel: &mut dyn ChampionChannel,
    ) -> Result<(RoundReport, IterationSummary, Option<Champion>), DrqError> {
        let summary = self.run_iterations()?;
        let champion = self.select_champion()?;
        if let Some(c) = &champion {
            channel.publish(c)?;
        }
        let integration = self.integrate(channel.drain())?;
        let report = self.finish_round(&summary, champion.as_ref(), &integration);
        Ok((report, summary, champion))
    }
}
