use super::{cross, Mesh};
use crate::error::{Error, Result};
use crate::sparse::CscMatrix;

/// Piecewise-linear finite-element matrices on a mesh.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    /// Diagonal of the row-sum lumped mass matrix.
    pub mass_lumped: Vec<f64>,
    pub stiffness: CscMatrix,
}

impl FemMatrices {
    pub fn dim(&self) -> usize {
        self.mass_lumped.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass_lumped.iter().sum()
    }
}

pub fn assemble_fem(mesh: &Mesh) -> Result<FemMatrices> {
    let k = mesh.num_vertices();
    let v = mesh.vertices();
    let mut mass = vec![0.0; k];
    let mut entries = Vec::with_capacity(9 * mesh.triangles().len());
    for (index, t) in mesh.triangles().iter().enumerate() {
        let p = [v[t[0]], v[t[1]], v[t[2]]];
        let area = 0.5 * cross(&p[0], &p[1], &p[2]);
        if !(area > 0.0) {
            return Err(Error::DegenerateTriangle { index, area });
        }
        // gradient of basis i is (b_i, c_i) / (2·area)
        let mut b = [0.0; 3];
        let mut c = [0.0; 3];
        for i in 0..3 {
            let (j, l) = ((i + 1) % 3, (i + 2) % 3);
            b[i] = p[j].lat - p[l].lat;
            c[i] = p[l].lon - p[j].lon;
        }
        for i in 0..3 {
            mass[t[i]] += area / 3.0;
            for j in 0..3 {
                entries.push((t[i], t[j], (b[i] * b[j] + c[i] * c[j]) / (4.0 * area)));
            }
        }
    }
    Ok(FemMatrices {
        mass_lumped: mass,
        stiffness: CscMatrix::from_triplets(k, k, &entries),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_mesh, MeshOptions, Point, Polygon};

    #[test]
    fn right_triangle_hand_values() {
        let tri = Polygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)]).unwrap();
        let mesh = Mesh::from_parts(tri.rings()[0].clone(), vec![[0, 1, 2]], tri).unwrap();
        let fem = assemble_fem(&mesh).unwrap();
        assert!((fem.total_mass() - 0.5).abs() < 1e-15);
        let g = fem.stiffness.to_dense();
        // Hand-computed P1 stiffness of the unit right triangle.
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((g[(i, j)] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constants_in_null_space_and_area_conserved() {
        let sq = Polygon::rectangle(Point::new(0.0, 0.0), Point::new(1.0, 1.0));
        let mut traces = vec![];
        for max_edge in [0.3, 0.15] {
            let opts = MeshOptions {
                extension: 0.0,
                ..MeshOptions::with_max_edge(max_edge)
            };
            let mesh = build_mesh(&[], Some(&sq), &opts).unwrap();
            let fem = assemble_fem(&mesh).unwrap();
            let ones = vec![1.0; fem.dim()];
            assert!(fem.stiffness.mul_vec(&ones).iter().all(|r| r.abs() < 1e-10));
            assert!(fem.stiffness.max_asymmetry() < 1e-14);
            assert!(fem.mass_lumped.iter().all(|&m| m > 0.0));
            traces.push(fem.total_mass());
        }
        assert!((traces[0] - 1.0).abs() < 1e-8);
        assert!((traces[1] - traces[0]).abs() < 1e-8);
    }
}
