//! Conic programs and a first-order solver for them.

pub mod admm;
pub mod cone;
pub mod program;

pub use admm::{solve, solve_with_observer, Snapshot, Solution, SolveStatus, SolverSettings};
pub use cone::{
    distance_to_cone, order_from_svec_len, project_cone, smat, svec, svec_index, triangular, Cone, ConeSpec,
};
pub use program::{sym_entry, AffineExpr, ConicProgram, ProgramBuilder, SparseMatrix};
