//! Deterministic microbenchmark generators.
//!
//! Every generator emits iterations of a CPU phase followed by a GPU phase
//! (FlexOa/WTa has GPU cores only). Within a phase the cores run one after
//! another in trace order. Phases are separated by barriers built from
//! per-consumer flag words: each producer core releases (fetch-add) the flag
//! of every core in the next phase, and each consumer acquires its own flag.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{annotate_load_values, AccessKind, AccessTrace, DeviceClass, MemoryAccess, SyncKind};
use crate::{CoreId, Pc, WordMask};

/// Static instruction ids used by the generators.
pub mod pcs {
    use crate::Pc;

    pub const ACQUIRE: Pc = 1;
    pub const RELEASE: Pc = 2;
    /// Private acquire-release marker between kernels or iterations.
    pub const MARKER: Pc = 3;
    pub const CPU_DENSE_LOAD: Pc = 10;
    pub const CPU_DENSE_STORE: Pc = 11;
    pub const CPU_STREAM_LOAD: Pc = 12;
    pub const CPU_SPARSE_STORE: Pc = 13;
    pub const CPU_STORE: Pc = 14;
    pub const GPU_DENSE_LOAD: Pc = 20;
    pub const GPU_DENSE_STORE: Pc = 21;
    pub const GPU_LOAD: Pc = 22;
    pub const GPU_SPARSE_STORE: Pc = 23;
    pub const GPU_STORE: Pc = 24;
    pub const DENSE_RMW: Pc = 30;
    pub const SPARSE_RMW: Pc = 31;

    pub fn name(pc: Pc) -> &'static str {
        match pc {
            ACQUIRE => "acquire",
            RELEASE => "release",
            MARKER => "marker",
            CPU_DENSE_LOAD => "cpu-dense-load",
            CPU_DENSE_STORE => "cpu-dense-store",
            CPU_STREAM_LOAD => "cpu-stream-load",
            CPU_SPARSE_STORE => "cpu-sparse-store",
            CPU_STORE => "cpu-store",
            GPU_DENSE_LOAD => "gpu-dense-load",
            GPU_DENSE_STORE => "gpu-dense-store",
            GPU_LOAD => "gpu-load",
            GPU_SPARSE_STORE => "gpu-sparse-store",
            GPU_STORE => "gpu-store",
            DENSE_RMW => "dense-rmw",
            SPARSE_RMW => "sparse-rmw",
            _ => "unknown",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Benchmark {
    FlexVS,
    FlexOWT,
    FlexOaWTa,
    ProdCons,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [Benchmark::FlexVS, Benchmark::FlexOWT, Benchmark::FlexOaWTa, Benchmark::ProdCons];

    pub fn token(self) -> &'static str {
        match self {
            Benchmark::FlexVS => "flex-v-s",
            Benchmark::FlexOWT => "flex-o-wt",
            Benchmark::FlexOaWTa => "flex-oa-wta",
            Benchmark::ProdCons => "prod-cons",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Benchmark {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm: String = s.to_ascii_lowercase().chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        match norm.as_str() {
            "flexvs" => Ok(Benchmark::FlexVS),
            "flexowt" => Ok(Benchmark::FlexOWT),
            "flexoawta" => Ok(Benchmark::FlexOaWTa),
            "prodcons" => Ok(Benchmark::ProdCons),
            _ => Err(format!(
                "unknown benchmark `{s}` (expected one of: {})",
                Benchmark::ALL.map(|b| b.token()).join(", ")
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MicrobenchParams {
    pub n_cpu_cores: u16,
    pub n_gpu_cores: u16,
    pub partition_words: u32,
    pub iterations: u32,
    pub seed: u64,
    /// One sparse access per this many words of a partition.
    pub sparse_ratio: u32,
    pub block_size_bytes: u32,
    pub word_size_bytes: u32,
}

impl Default for MicrobenchParams {
    fn default() -> Self {
        MicrobenchParams {
            n_cpu_cores: 2,
            n_gpu_cores: 2,
            partition_words: 256,
            iterations: 6,
            seed: 1,
            sparse_ratio: 16,
            block_size_bytes: 64,
            word_size_bytes: 4,
        }
    }
}

/// Words of address space available to the generated arrays.
pub const ADDRESS_SPACE_WORDS: u64 = 1 << 28;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid benchmark parameters: {0}")]
pub struct ParamError(pub String);

impl MicrobenchParams {
    pub fn validate(&self, bench: Benchmark) -> Result<(), ParamError> {
        let err = |m: &str| Err(ParamError(m.to_string()));
        if self.partition_words == 0 || self.iterations == 0 || self.sparse_ratio == 0 {
            return err("partition_words, iterations and sparse_ratio must be positive");
        }
        if self.word_size_bytes == 0 || self.block_size_bytes % self.word_size_bytes != 0 {
            return err("block size must be a positive multiple of word size");
        }
        let wpb = self.block_size_bytes / self.word_size_bytes;
        if wpb == 0 || wpb > 64 {
            return err("a block must hold between 1 and 64 words");
        }
        match bench {
            Benchmark::FlexOaWTa if self.n_gpu_cores < 2 => return err("flex-oa-wta needs at least 2 GPU cores"),
            Benchmark::FlexOaWTa => {}
            _ if self.n_cpu_cores == 0 || self.n_gpu_cores == 0 => return err("core counts must be positive"),
            _ => {}
        }
        let total = (self.n_cpu_cores as u64 + self.n_gpu_cores as u64 + 1) * 2;
        if self.partition_stride() * total > ADDRESS_SPACE_WORDS {
            return err("arrays exceed the address space");
        }
        Ok(())
    }

    fn words_per_block(&self) -> u64 {
        (self.block_size_bytes / self.word_size_bytes) as u64
    }

    /// Partitions start on block boundaries so that no two share a block.
    fn partition_stride(&self) -> u64 {
        let wpb = self.words_per_block();
        (self.partition_words as u64).div_ceil(wpb) * wpb
    }

    fn sparse_count(&self) -> usize {
        (self.partition_words / self.sparse_ratio).max(1) as usize
    }
}

pub fn generate(bench: Benchmark, p: &MicrobenchParams) -> Result<AccessTrace, ParamError> {
    p.validate(bench)?;
    let mut g = Gen::new(bench, p);
    match bench {
        Benchmark::FlexVS => g.flex_v_s(),
        Benchmark::FlexOWT => g.flex_o_wt(),
        Benchmark::FlexOaWTa => g.flex_oa_wta(),
        Benchmark::ProdCons => g.prod_cons(),
    }
    let mut t = g.trace;
    annotate_load_values(&mut t);
    Ok(t)
}

/// Array handles. Flags live in their own region, one block each.
#[derive(Clone, Copy)]
enum Region {
    /// Flag acquired by a given core at the start of its phase.
    Go(u16),
    /// Private marker word of a core.
    Marker(u16),
    A,
    B,
}

struct Gen<'a> {
    p: &'a MicrobenchParams,
    trace: AccessTrace,
    rng: ChaCha8Rng,
    n_cores: u16,
    array_base_words: u64,
    array_span_words: u64,
}

impl<'a> Gen<'a> {
    fn new(bench: Benchmark, p: &'a MicrobenchParams) -> Self {
        let cores: Vec<DeviceClass> = if bench == Benchmark::FlexOaWTa {
            vec![DeviceClass::Gpu; p.n_gpu_cores as usize]
        } else {
            std::iter::repeat_n(DeviceClass::Cpu, p.n_cpu_cores as usize)
                .chain(std::iter::repeat_n(DeviceClass::Gpu, p.n_gpu_cores as usize))
                .collect()
        };
        let n_cores = cores.len() as u16;
        let wpb = p.words_per_block();
        // Two flag blocks per core, then the arrays.
        let array_base_words = (2 * n_cores as u64 + 2) * wpb;
        let parts = (p.n_cpu_cores.max(p.n_gpu_cores) as u64 + 1).max(n_cores as u64);
        Gen {
            p,
            trace: AccessTrace::new(p.block_size_bytes, p.word_size_bytes, cores),
            rng: ChaCha8Rng::seed_from_u64(p.seed),
            n_cores,
            array_base_words,
            array_span_words: parts * p.partition_stride(),
        }
    }

    fn cpu(&self, i: u16) -> CoreId {
        i
    }

    fn gpu(&self, i: u16) -> CoreId {
        if self.trace.core_table[0] == DeviceClass::Gpu {
            i
        } else {
            self.p.n_cpu_cores + i
        }
    }

    fn word_addr(&self, r: Region, partition: u64, word: u64) -> u64 {
        let wpb = self.p.words_per_block();
        match r {
            Region::Go(c) => c as u64 * wpb,
            Region::Marker(c) => (self.n_cores as u64 + c as u64) * wpb,
            Region::A => self.array_base_words + partition * self.p.partition_stride() + word,
            Region::B => self.array_base_words + self.array_span_words + partition * self.p.partition_stride() + word,
        }
    }

    fn emit(&mut self, core: CoreId, kind: AccessKind, r: Region, partition: u64, word: u64, pc: Pc, sync: SyncKind) {
        let w = self.word_addr(r, partition, word);
        let wpb = self.p.words_per_block();
        let value = match kind {
            AccessKind::Load => 0,
            AccessKind::Store => self.trace.len() as u64 + 1,
            AccessKind::Rmw => 1,
        };
        let device = self.trace.core_table[core as usize];
        self.trace.push(MemoryAccess {
            seq_id: 0,
            core,
            device,
            kind,
            address: w * self.p.word_size_bytes as u64,
            word_mask: WordMask::single((w % wpb) as u32),
            pc,
            sync,
            values: vec![value],
        });
    }

    fn acquire(&mut self, core: CoreId) {
        self.emit(core, AccessKind::Rmw, Region::Go(core), 0, 0, pcs::ACQUIRE, SyncKind::Acquire);
    }

    /// Releases the go flag of every consumer core.
    fn release_to(&mut self, core: CoreId, consumers: &[CoreId]) {
        for &c in consumers {
            self.emit(core, AccessKind::Rmw, Region::Go(c), 0, 0, pcs::RELEASE, SyncKind::Release);
        }
    }

    fn marker(&mut self, core: CoreId) {
        self.emit(core, AccessKind::Rmw, Region::Marker(core), 0, 0, pcs::MARKER, SyncKind::AcqRel);
    }

    fn dense(&mut self, core: CoreId, kind: AccessKind, r: Region, partition: u64, pc: Pc) {
        for w in 0..self.p.partition_words as u64 {
            self.emit(core, kind, r, partition, w, pc, SyncKind::None);
        }
    }

    /// Seeded sparse word offsets, drawn without replacement from the words
    /// of a partition congruent to `lane` modulo `lanes`.
    fn sparse_words(&mut self, lane: u64, lanes: u64) -> Vec<u64> {
        let candidates: Vec<u64> = (0..self.p.partition_words as u64).filter(|w| w % lanes == lane % lanes).collect();
        if candidates.is_empty() {
            return Vec::new();
        }
        let k = self.p.sparse_count().min(candidates.len());
        let mut picked: Vec<u64> = sample(&mut self.rng, candidates.len(), k).into_iter().map(|i| candidates[i]).collect();
        picked.sort_unstable();
        picked
    }

    fn cpus(&self) -> Vec<CoreId> {
        (0..self.p.n_cpu_cores).map(|i| self.cpu(i)).collect()
    }

    fn gpus(&self) -> Vec<CoreId> {
        (0..self.p.n_gpu_cores).map(|i| self.gpu(i)).collect()
    }

    /// CPUs share and re-read one partition of A each phase and stream
    /// through a rotating partition of B. GPUs sparsely write rotating
    /// partitions of A that the CPUs never read, then in two kernels densely
    /// read and write their own partition of B.
    fn flex_v_s(&mut self) {
        let (cpus, gpus) = (self.cpus(), self.gpus());
        let ng = self.p.n_gpu_cores as u64;
        for it in 0..self.p.iterations as u64 {
            for (i, &c) in cpus.iter().enumerate() {
                self.acquire(c);
                self.dense(c, AccessKind::Load, Region::A, 0, pcs::CPU_DENSE_LOAD);
                self.dense(c, AccessKind::Load, Region::B, (i as u64 + it) % ng, pcs::CPU_STREAM_LOAD);
                self.release_to(c, &gpus);
            }
            for (i, &g) in gpus.iter().enumerate() {
                self.acquire(g);
                let part = 1 + (i as u64 + it) % ng;
                for w in self.sparse_words(0, 1) {
                    self.emit(g, AccessKind::Store, Region::A, part, w, pcs::GPU_SPARSE_STORE, SyncKind::None);
                }
                self.dense(g, AccessKind::Load, Region::B, i as u64, pcs::GPU_DENSE_LOAD);
                self.marker(g);
                self.dense(g, AccessKind::Store, Region::B, i as u64, pcs::GPU_DENSE_STORE);
                self.release_to(g, &cpus);
            }
        }
    }

    /// Each CPU densely reads and writes its own partition of A and sparsely
    /// writes a rotating GPU partition of B; GPUs mirror with arrays swapped.
    fn flex_o_wt(&mut self) {
        let (cpus, gpus) = (self.cpus(), self.gpus());
        let (nc, ng) = (cpus.len() as u64, gpus.len() as u64);
        for it in 0..self.p.iterations as u64 {
            for (i, &c) in cpus.iter().enumerate() {
                self.acquire(c);
                for w in 0..self.p.partition_words as u64 {
                    self.emit(c, AccessKind::Load, Region::A, i as u64, w, pcs::CPU_DENSE_LOAD, SyncKind::None);
                    self.emit(c, AccessKind::Store, Region::A, i as u64, w, pcs::CPU_DENSE_STORE, SyncKind::None);
                }
                let part = (i as u64 + it) % ng;
                for w in self.sparse_words(i as u64, nc) {
                    self.emit(c, AccessKind::Store, Region::B, part, w, pcs::CPU_SPARSE_STORE, SyncKind::None);
                }
                self.release_to(c, &gpus);
            }
            for (i, &g) in gpus.iter().enumerate() {
                self.acquire(g);
                for w in 0..self.p.partition_words as u64 {
                    self.emit(g, AccessKind::Load, Region::B, i as u64, w, pcs::GPU_DENSE_LOAD, SyncKind::None);
                    self.emit(g, AccessKind::Store, Region::B, i as u64, w, pcs::GPU_DENSE_STORE, SyncKind::None);
                }
                let part = (i as u64 + it) % nc;
                for w in self.sparse_words(i as u64, ng) {
                    self.emit(g, AccessKind::Store, Region::A, part, w, pcs::GPU_SPARSE_STORE, SyncKind::None);
                }
                self.release_to(g, &cpus);
            }
        }
    }

    /// GPU cores only: dense fetch-adds on the local partition, sparse
    /// fetch-adds on one seeded remote partition, then a private marker.
    fn flex_oa_wta(&mut self) {
        let gpus = self.gpus();
        let n = gpus.len() as u64;
        for _ in 0..self.p.iterations {
            for (i, &g) in gpus.iter().enumerate() {
                self.dense(g, AccessKind::Rmw, Region::A, i as u64, pcs::DENSE_RMW);
                let remote = (i as u64 + 1 + sample(&mut self.rng, n as usize - 1, 1).index(0) as u64) % n;
                for w in self.sparse_words(0, 1) {
                    self.emit(g, AccessKind::Rmw, Region::A, remote, w, pcs::SPARSE_RMW, SyncKind::None);
                }
                self.marker(g);
            }
        }
    }

    /// CPU c reads A partition c mod G and writes B partition c; GPU g reads
    /// B partition g mod C and writes A partition g. Partitions are fixed.
    fn prod_cons(&mut self) {
        let (cpus, gpus) = (self.cpus(), self.gpus());
        let (nc, ng) = (cpus.len() as u64, gpus.len() as u64);
        for _ in 0..self.p.iterations {
            for (i, &c) in cpus.iter().enumerate() {
                self.acquire(c);
                self.dense(c, AccessKind::Load, Region::A, i as u64 % ng, pcs::CPU_DENSE_LOAD);
                self.dense(c, AccessKind::Store, Region::B, i as u64, pcs::CPU_STORE);
                self.release_to(c, &gpus);
            }
            for (i, &g) in gpus.iter().enumerate() {
                self.acquire(g);
                self.dense(g, AccessKind::Load, Region::B, i as u64 % nc, pcs::GPU_LOAD);
                self.dense(g, AccessKind::Store, Region::A, i as u64, pcs::GPU_STORE);
                self.release_to(g, &cpus);
            }
        }
    }
}
