use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("Jacobian parameter a is zero; the map is not invertible")]
    DegenerateJacobian,
    #[error("|z| = {modulus} is not outside the unit circle by the required margin {margin}")]
    TooCloseToUnitCircle { modulus: f64, margin: f64 },
    #[error("square-root pullback passed within {distance:e} of the critical value")]
    BranchAmbiguity { distance: f64 },
    #[error("stable manifold fold: |g'| = {min_derivative:e} on the fit disk")]
    FoldedManifold { min_derivative: f64 },
    #[error("product guard: |a1(0) - lambda| = {deviation} exceeds 0.1")]
    ProductDivergence { deviation: f64 },
    #[error("index {k} is resonant (k = 1 mod {q})")]
    ResonantIndex { k: usize, q: u32 },
    #[error("resonant elimination index {j} outside ({nu}, {})", 2 * nu)]
    BadResonanceRange { j: usize, nu: usize },
    #[error("a root lies within {distance:e} of the counting contour")]
    ContourThroughZero { distance: f64 },
    #[error("Fatou coordinate requested at x = 0")]
    ZeroInput,
    #[error("no metric chart covers the base point")]
    MetricUndefined,
    #[error("Cauchy increment {increment:e} exceeds tolerance {tol:e} at depth {depth}")]
    DepthInsufficient { increment: f64, tol: f64, depth: usize },
    #[error("smallness condition failed: {condition} ({lhs} >= {rhs})")]
    SmallnessViolated {
        condition: String,
        lhs: f64,
        rhs: f64,
    },
    #[error("fiber label at angle index {angle_index} switched branch across the z grid")]
    BranchFlip { angle_index: usize },
    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },
    #[error("fiber distances increased for 3 consecutive generations (last at generation {generation})")]
    NotContracting { generation: usize },
    #[error("fiber left the repelling sector during pullback")]
    SectorViolation,
    #[error("model fiber over a critical point (|zeta| = {modulus:e})")]
    CriticalFiber { modulus: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
