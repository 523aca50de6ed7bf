//! P1 finite elements on the annulus between the outer contour and the
//! inner circle or ellipse.

pub mod bank;
pub mod mesh;
pub mod sparse;
pub mod system;

pub use bank::{grid_centers, BankEntry, MeshBank};
pub use mesh::{
    build_annulus_mesh, outer_boundary, InnerContour, InnerShape, RefinementZone, TriMesh,
};
pub use system::{assemble_operators, ControlSolution, FemField, FemSystem, DEFAULT_EPSILON};
