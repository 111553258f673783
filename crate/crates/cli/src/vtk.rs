//! Legacy ASCII VTK export.

use std::io::{self, Write};
use std::path::Path;

use morley_afem::element::MorleyFunction;
use morley_afem::estimator::IndicatorField;

/// Triangles as cells; point data are the vertex values, cell data the
/// Frobenius norm of the elementwise Hessian and, when given, `η_K`.
pub fn write_vtk<W: Write>(u: &MorleyFunction, eta: Option<&IndicatorField>, mut w: W) -> io::Result<()> {
    let mesh = u.mesh();
    let (nv, nc) = (mesh.num_vertices(), mesh.num_cells());
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "Morley solution")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    for v in 0..nv {
        let p = mesh.vertex(v);
        writeln!(w, "{:?} {:?} 0", p[0], p[1])?;
    }
    writeln!(w, "CELLS {nc} {}", 4 * nc)?;
    for c in 0..nc {
        let [a, b, d] = mesh.cell(c).vertices;
        writeln!(w, "3 {a} {b} {d}")?;
    }
    writeln!(w, "CELL_TYPES {nc}")?;
    for _ in 0..nc {
        writeln!(w, "5")?;
    }
    writeln!(w, "POINT_DATA {nv}")?;
    writeln!(w, "SCALARS u double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for x in u.vertex_dofs() {
        writeln!(w, "{x:?}")?;
    }
    writeln!(w, "CELL_DATA {nc}")?;
    writeln!(w, "SCALARS hessian_frobenius double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for c in 0..nc {
        writeln!(w, "{:?}", u.hessian(c).frobenius())?;
    }
    if let Some(field) = eta {
        writeln!(w, "SCALARS eta double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for x in &field.eta {
            writeln!(w, "{x:?}")?;
        }
    }
    Ok(())
}

pub fn export_vtk(u: &MorleyFunction, eta: Option<&IndicatorField>, path: &Path) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = io::BufWriter::new(file);
    write_vtk(u, eta, &mut w)?;
    w.flush()
}
