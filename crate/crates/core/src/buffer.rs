//! The evolve buffer: an append-only forest of evaluated candidates.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::record::{code_hash, EvolveRecord, NewRecord, RecordId, RecordStatus};
use crate::rng::rng_from_seed;
use crate::selection::ParentSelectionPolicy;
use crate::trajectory::{classify_step, Trajectory, TrajectoryStep};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BufferError {
    #[error("parent record {0} is not in the buffer")]
    UnknownParent(RecordId),
    #[error("record {0} is not in the buffer")]
    UnknownId(RecordId),
    #[error("buffer holds no eligible record")]
    EmptyBuffer,
    #[error("candidate code is empty")]
    EmptyCode,
    #[error("ok records need a non-empty abstract")]
    MissingAbstract,
    #[error("combined score is not finite")]
    NonFiniteScore,
    #[error("buffer has no parent/child edges")]
    NoEdges,
    #[error("invalid trajectory length range")]
    InvalidLengthRange,
    #[error("invalid selection policy: {0}")]
    InvalidPolicy(&'static str),
}

/// One row of the compact view handed to the exemplar sampler. Never carries code.
#[derive(Debug, Clone, PartialEq)]
pub struct DigestRow {
    pub id: RecordId,
    pub abstract_text: String,
    pub combined_score: f64,
    pub status: RecordStatus,
}

#[derive(Debug, Clone, Default)]
pub struct EvolveBuffer {
    records: Vec<EvolveRecord>,
    best: Option<usize>,
    first_by_hash: BTreeMap<u64, RecordId>,
}

impl EvolveBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EvolveRecord] {
        &self.records
    }

    pub fn get(&self, id: RecordId) -> Result<&EvolveRecord, BufferError> {
        self.records.get(id.0 as usize).ok_or(BufferError::UnknownId(id))
    }

    /// First record carrying exactly this code, if any.
    pub fn find_by_hash(&self, hash: u64) -> Option<&EvolveRecord> {
        self.first_by_hash.get(&hash).map(|id| &self.records[id.0 as usize])
    }

    /// Appends a record. Non-`ok` records are stored with score 0 and no
    /// reported score; repeated code is stored and marked as a duplicate.
    pub fn insert(&mut self, new: NewRecord) -> Result<RecordId, BufferError> {
        if let Some(p) = new.parent_id {
            if p.0 as usize >= self.records.len() {
                return Err(BufferError::UnknownParent(p));
            }
        }
        if new.code.is_empty() {
            return Err(BufferError::EmptyCode);
        }
        let ok = new.status == RecordStatus::Ok;
        if ok && new.abstract_text.trim().is_empty() {
            return Err(BufferError::MissingAbstract);
        }
        if ok && !new.combined_score.is_finite() {
            return Err(BufferError::NonFiniteScore);
        }
        let id = RecordId(self.records.len() as u64);
        let hash = code_hash(&new.code);
        let duplicate_of = self.first_by_hash.get(&hash).copied();
        if duplicate_of.is_none() {
            self.first_by_hash.insert(hash, id);
        }
        let record = EvolveRecord {
            id,
            parent_id: new.parent_id,
            iteration: new.iteration,
            code: new.code,
            metrics: if ok { new.metrics } else { BTreeMap::new() },
            combined_score: if ok { new.combined_score } else { 0.0 },
            reported_score: if ok { new.reported_score } else { None },
            abstract_text: new.abstract_text,
            status: new.status,
            code_hash: hash,
            created_at: new.created_at,
            duplicate_of,
            flags: new.flags,
        };
        self.push_record(record);
        Ok(id)
    }

    /// Re-inserts a record read back from a run log, keeping its stored fields.
    pub fn restore(&mut self, record: EvolveRecord) -> Result<RecordId, BufferError> {
        if record.id.0 as usize != self.records.len() {
            return Err(BufferError::UnknownId(record.id));
        }
        if let Some(p) = record.parent_id {
            if p >= record.id {
                return Err(BufferError::UnknownParent(p));
            }
        }
        self.first_by_hash.entry(record.code_hash).or_insert(record.id);
        let id = record.id;
        self.push_record(record);
        Ok(id)
    }

    fn push_record(&mut self, record: EvolveRecord) {
        let idx = self.records.len();
        let better = match self.best {
            None => true,
            Some(b) => {
                let cur = &self.records[b];
                record.is_ok() && (!cur.is_ok() || record.combined_score > cur.combined_score)
            }
        };
        self.records.push(record);
        if better {
            self.best = Some(idx);
        }
    }

    /// Highest-scoring `ok` record, ties to the lowest id. With no `ok`
    /// record at all the lowest id is returned.
    pub fn best_so_far(&self) -> Result<&EvolveRecord, BufferError> {
        self.best.map(|i| &self.records[i]).ok_or(BufferError::EmptyBuffer)
    }

    /// Ids from the root ancestor down to `id`.
    pub fn lineage(&self, id: RecordId) -> Result<Vec<RecordId>, BufferError> {
        let mut cur = self.get(id)?;
        let mut ids = alloc::vec![cur.id];
        while let Some(p) = cur.parent_id {
            cur = self.get(p)?;
            ids.push(cur.id);
            if ids.len() > self.records.len() {
                break;
            }
        }
        ids.reverse();
        Ok(ids)
    }

    fn ok_ranked(&self) -> Vec<&EvolveRecord> {
        let mut ok: Vec<&EvolveRecord> = self.records.iter().filter(|r| r.is_ok()).collect();
        ok.sort_by(|a, b| b.combined_score.total_cmp(&a.combined_score).then(a.id.cmp(&b.id)));
        ok
    }

    pub fn select_parent(&self, policy: &ParentSelectionPolicy, seed: u64) -> Result<&EvolveRecord, BufferError> {
        policy.validate()?;
        let ranked = self.ok_ranked();
        let best = *ranked.first().ok_or(BufferError::EmptyBuffer)?;
        let mut rng = rng_from_seed(seed);
        let chosen = match *policy {
            ParentSelectionPolicy::GreedyBest => best,
            ParentSelectionPolicy::EpsilonGreedy { epsilon } => {
                if rng.gen::<f64>() < epsilon {
                    // uniform over ok records in id order
                    let mut by_id = ranked.clone();
                    by_id.sort_by_key(|r| r.id);
                    by_id[rng.gen_range(0..by_id.len())]
                } else {
                    best
                }
            }
            ParentSelectionPolicy::SoftmaxScore { temperature } => {
                let top = best.combined_score;
                let weights: Vec<f64> =
                    ranked.iter().map(|r| libm::exp((r.combined_score - top) / temperature)).collect();
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen::<f64>() * total;
                let mut pick = best;
                for (r, w) in ranked.iter().zip(&weights) {
                    if *w > 0.0 && u < *w {
                        pick = r;
                        break;
                    }
                    u -= w;
                }
                pick
            }
            ParentSelectionPolicy::UniformTopK { k } => {
                let n = k.min(ranked.len());
                ranked[rng.gen_range(0..n)]
            }
        };
        Ok(chosen)
    }

    fn depth(&self, record: &EvolveRecord) -> usize {
        let mut depth = 0;
        let mut cur = record;
        while let Some(p) = cur.parent_id {
            cur = &self.records[p.0 as usize];
            depth += 1;
        }
        depth
    }

    fn step(&self, parent: &EvolveRecord, child: &EvolveRecord) -> TrajectoryStep {
        let (delta, direction) =
            classify_step(parent.combined_score, child.combined_score).expect("buffer scores are finite");
        TrajectoryStep { parent_record: parent.id, child_record: child.id, delta, direction }
    }

    /// The chain of the last `len` lineage edges ending at `end`.
    fn chain_ending_at(&self, end: &EvolveRecord, len: usize) -> Trajectory {
        let mut steps = Vec::with_capacity(len);
        let mut child = end;
        for _ in 0..len {
            let parent = &self.records[child.parent_id.expect("depth checked").0 as usize];
            steps.push(self.step(parent, child));
            child = parent;
        }
        steps.reverse();
        Trajectory::from_steps(steps).expect("lineage chains are connected")
    }

    /// Every distinct chain whose length lies in `[min, max]`, with the range
    /// clipped to the deepest lineage in the buffer. Ordered by end id, then
    /// length.
    pub fn enumerate_trajectories(&self, min_len: usize, max_len: usize) -> Result<Vec<Trajectory>, BufferError> {
        if min_len == 0 || max_len < min_len {
            return Err(BufferError::InvalidLengthRange);
        }
        let depths: Vec<usize> = self.records.iter().map(|r| self.depth(r)).collect();
        let deepest = depths.iter().copied().max().unwrap_or(0);
        if deepest == 0 {
            return Err(BufferError::NoEdges);
        }
        let hi = max_len.min(deepest);
        let lo = min_len.min(hi);
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for (end, &depth) in self.records.iter().zip(&depths) {
            for len in lo..=hi.min(depth) {
                let t = self.chain_ending_at(end, len);
                if seen.insert(t.fingerprint()) {
                    out.push(t);
                }
            }
        }
        if out.is_empty() {
            return Err(BufferError::NoEdges);
        }
        Ok(out)
    }

    /// Up to `max_count` distinct trajectories drawn uniformly from
    /// [`enumerate_trajectories`](Self::enumerate_trajectories).
    pub fn rollout_trajectories(
        &self,
        length_range: (usize, usize),
        max_count: usize,
        seed: u64,
    ) -> Result<Vec<Trajectory>, BufferError> {
        let mut all = self.enumerate_trajectories(length_range.0, length_range.1)?;
        let mut rng = rng_from_seed(seed);
        let n = max_count.min(all.len());
        let (picked, _) = all.partial_shuffle(&mut rng, n);
        Ok(picked.to_vec())
    }

    /// Compact view for the exemplar sampler: at most `limit` rows, half of
    /// them the best `ok` records and the rest the most recent ones (any
    /// status), returned in id order. `exclude` is typically the parent.
    pub fn digest(&self, limit: usize, exclude: Option<RecordId>) -> Vec<DigestRow> {
        let eligible = |r: &&EvolveRecord| Some(r.id) != exclude;
        let mut chosen = BTreeSet::new();
        let top_quota = limit.div_ceil(2);
        for r in self.ok_ranked().into_iter().filter(eligible).take(top_quota) {
            chosen.insert(r.id);
        }
        for r in self.records.iter().rev().filter(eligible) {
            if chosen.len() >= limit {
                break;
            }
            chosen.insert(r.id);
        }
        chosen
            .into_iter()
            .map(|id| {
                let r = &self.records[id.0 as usize];
                DigestRow {
                    id: r.id,
                    abstract_text: r.abstract_text.clone(),
                    combined_score: r.combined_score,
                    status: r.status,
                }
            })
            .collect()
    }
}
