use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    // kernel
    #[error("kernel is not symmetric: offset {0:?} has no mirror of equal weight")]
    Asymmetric(alloc::vec::Vec<i64>),
    #[error("kernel covariance is not a multiple of the identity")]
    NonIsotropic,
    #[error("kernel puts mass on the origin")]
    OriginInSupport,
    #[error("kernel weights must be positive and sum to 1")]
    NotNormalized,
    #[error("kernel support does not generate Z^d")]
    Reducible,
    #[error("offset has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    // lattice / engine
    #[error("torus side {side} too small for interaction range {range}")]
    TorusTooSmall { side: usize, range: usize },
    #[error("block side {block} does not divide torus side {side}")]
    BlockMisaligned { block: usize, side: usize },
    #[error("negative flip rate {0}")]
    NegativeRate(f64),

    // model builders
    #[error("epsilon too large: voter rate {0} must be positive")]
    EpsilonTooLarge(f64),
    #[error("selection strength w={w} must be below {bound}")]
    SelectionTooStrong { w: f64, bound: f64 },
    #[error("negative fitness")]
    NegativeFitness,
    #[error("invalid rates: {0}")]
    InvalidRates(&'static str),
    #[error("kernel support is not covered by the offset list")]
    KernelNotCovered,
    #[error("table has {got} entries, expected {expected}")]
    TableSize { expected: usize, got: usize },

    // dual
    #[error("requested time {requested} exceeds log horizon {horizon}")]
    HorizonExceeded { requested: f64, horizon: f64 },
    #[error("missing input for leaf {0}")]
    MissingInput(usize),
    #[error("site {site} outside a torus of {sites} sites")]
    SiteOutOfRange { site: usize, sites: usize },

    // coalesce
    #[error("kernel is not uniform on its support")]
    NotUniformKernel,
    #[error("cannot parse pattern: {0}")]
    BadPattern(alloc::string::String),

    // reaction
    #[error("theta0 + theta1 = 0 with nonzero linear part")]
    DegenerateSum,
    #[error("polynomial has a root of multiplicity > 1 near {0}")]
    NonSimpleRoot(f64),
    #[error("polynomial is identically zero")]
    IdenticallyZero,

    // pde
    #[error("solution left [0,1]: {0}")]
    LeftUnitInterval(f64),
    #[error("time step {dt} violates stability bound {bound}")]
    CFLViolation { dt: f64, bound: f64 },
    #[error("profile never crosses the tracking level")]
    NoFront,
    #[error("front came within 10 grid cells of the boundary at t={0}")]
    BoundaryContamination(f64),
}

pub type Result<T> = core::result::Result<T, Error>;
