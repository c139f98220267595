use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anonmem::{check_feasible, AnonymousMemory, ConfigError, Permutation, ProcessId};

/// Which desanonymization protocol the processes run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// One synchronization phase; `desa`/`appl` tags stay in the registers.
    V1,
    /// Two phases; the second one only publishes a completion bit.
    V2,
}

/// How second-phase mutex writes are encoded in [`Variant::V2`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum V2Mode {
    /// Plain `mutex<ct, v>` values, exactly as in the first phase.
    Literal,
    /// Once a process knows its map, its mutex writes also carry the common index.
    Indexed,
}

/// Where a contender puts its single write while waiting for the lock.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContenderPolicy {
    /// Always local index 1.
    FixedIndex,
    /// A local index derived from `(seed, ordinal, acquire count)`.
    SeededRandom,
}

/// Deliberately broken protocol variants, used to check that the checkers bite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mutant {
    /// The winner never writes the `desa(x)` values.
    SkipDesaBroadcast,
    /// Release reads the registers but writes no ⊥.
    SkipBottomSweep,
    /// The critical section adds 2 to the counter.
    DoubleIncrement,
    /// A contender picks its write target from the value of its identity.
    IdentityOrder,
    /// The completion-bit writer clears a bit again.
    BitReset,
    /// Plain scans harvest counter stamps.
    ScanUpdatesCt,
}

impl Mutant {
    pub const ALL: [Mutant; 6] = [
        Mutant::SkipDesaBroadcast,
        Mutant::SkipBottomSweep,
        Mutant::DoubleIncrement,
        Mutant::IdentityOrder,
        Mutant::BitReset,
        Mutant::ScanUpdatesCt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mutant::SkipDesaBroadcast => "skip-desa-broadcast",
            Mutant::SkipBottomSweep => "skip-bottom-sweep",
            Mutant::DoubleIncrement => "double-increment",
            Mutant::IdentityOrder => "identity-order",
            Mutant::BitReset => "bit-reset",
            Mutant::ScanUpdatesCt => "scan-updates-ct",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Config {
    pub n: usize,
    pub m: usize,
    pub variant: Variant,
    pub v2_mode: V2Mode,
    pub contender_policy: ContenderPolicy,
    /// Feeds the seeded contender policy.
    pub seed: u64,
    pub step_budget: u64,
    /// Skip the `m ∈ M(n)` gate.
    pub allow_infeasible: bool,
    pub mutant: Option<Mutant>,
}

impl Config {
    pub fn new(n: usize, m: usize, variant: Variant) -> Self {
        Config {
            n,
            m,
            variant,
            v2_mode: V2Mode::Indexed,
            contender_policy: ContenderPolicy::FixedIndex,
            seed: 0,
            step_budget: 2000 * (n * m) as u64,
            allow_infeasible: false,
            mutant: None,
        }
    }

    pub fn with_mode(mut self, mode: V2Mode) -> Self {
        self.v2_mode = mode;
        self
    }

    pub fn with_policy(mut self, policy: ContenderPolicy) -> Self {
        self.contender_policy = policy;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.step_budget = budget;
        self
    }

    pub fn with_mutant(mut self, mutant: Mutant) -> Self {
        self.mutant = Some(mutant);
        self
    }

    pub fn allowing_infeasible(mut self) -> Self {
        self.allow_infeasible = true;
        self
    }

    pub fn is_mutant(&self, mutant: Mutant) -> bool {
        self.mutant == Some(mutant)
    }

    /// Number of critical sections each process goes through.
    pub fn phases(&self) -> u8 {
        match self.variant {
            Variant::V1 => 1,
            Variant::V2 => 2,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n < 2 {
            return Err(ConfigError::TooFewProcesses(self.n));
        }
        if self.m < 1 {
            return Err(ConfigError::NoRegisters(self.m));
        }
        if !self.allow_infeasible {
            check_feasible(self.n, self.m)?;
        }
        Ok(())
    }
}

/// Adversary and identity assignment for one execution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Setup {
    pub perms: Vec<Permutation>,
    pub ids: Vec<ProcessId>,
}

impl Setup {
    /// Identity permutations and identities `1..=n`.
    pub fn identity(n: usize, m: usize) -> Self {
        Setup {
            perms: vec![Permutation::identity(m); n],
            ids: ProcessId::distinct(n),
        }
    }

    /// Uniform permutations drawn from `perm_seed`.
    pub fn random(n: usize, m: usize, perm_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        Setup {
            perms: AnonymousMemory::random_perms(n, m, &mut rng),
            ids: ProcessId::distinct(n),
        }
    }

    pub fn with_perms(perms: Vec<Permutation>) -> Self {
        let n = perms.len();
        Setup {
            perms,
            ids: ProcessId::distinct(n),
        }
    }

    pub fn validate(&self, cfg: &Config) -> Result<(), ConfigError> {
        if self.perms.len() != cfg.n {
            return Err(ConfigError::PermutationCount {
                expected: cfg.n,
                got: self.perms.len(),
            });
        }
        if let Some(p) = self.perms.iter().find(|p| p.len() != cfg.m) {
            return Err(ConfigError::PermutationSize {
                expected: cfg.m,
                got: p.len(),
            });
        }
        if self.ids.len() != cfg.n {
            return Err(ConfigError::IdentityCount {
                expected: cfg.n,
                got: self.ids.len(),
            });
        }
        for (k, a) in self.ids.iter().enumerate() {
            if self.ids[k + 1..].contains(a) {
                return Err(ConfigError::DuplicateIdentity);
            }
        }
        Ok(())
    }
}
