//! Numerical tolerances and size caps shared by every module.

/// Environment variable overriding [`Tolerances::width_cap`].
pub const WIDTH_CAP_ENV: &str = "UNITARIZE_WIDTH_CAP";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tolerances {
    /// Gram-Schmidt residuals below this norm are rejected as degenerate.
    pub degenerate_floor: f64,
    /// Max-entry tolerance for `U†U = I`.
    pub unitary: f64,
    /// Orthonormality tolerance for outputs of Gram-Schmidt.
    pub orthonormal: f64,
    /// Accepted slack when checking that an oracle prepares its declared state.
    pub preparation: f64,
    /// Input states of an instance must be orthonormal within this.
    pub instance_orthonormal: f64,
    /// Singular values below this are dropped when splitting tensors.
    pub svd_cutoff: f64,
    /// Largest bond dimension kept by the tensor-network backend.
    pub max_bond: usize,
    /// Widest register (in qubits) that may be turned into a full matrix.
    pub width_cap: usize,
    /// Nested circuits at most this wide are contracted to a dense matrix once.
    pub materialize_width: usize,
    /// Upper bound on orthogonalizer blocks before giving up.
    pub max_blocks: usize,
    /// Upper bound on Hadamard-test repetitions per quadrature.
    pub max_samples: u64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            degenerate_floor: 1e-8,
            unitary: 1e-10,
            orthonormal: 1e-10,
            preparation: 1e-8,
            instance_orthonormal: 1e-8,
            svd_cutoff: 1e-13,
            max_bond: 512,
            width_cap: 12,
            materialize_width: 8,
            max_blocks: 200_000,
            max_samples: 1 << 40,
        }
    }
}

impl Tolerances {
    /// Defaults with the width cap read from the environment when set.
    pub fn from_env() -> Self {
        let mut t = Tolerances::default();
        if let Some(cap) = std::env::var(WIDTH_CAP_ENV).ok().and_then(|s| s.parse().ok()) {
            t.width_cap = cap;
        }
        t
    }
}

pub fn tolerances() -> Tolerances {
    Tolerances::from_env()
}
