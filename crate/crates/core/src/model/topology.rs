//! Mesh connectivity plus the per-vertex annotations the energy needs
//! (landmark anchors, skin mask, contour candidates).

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorKind {
    Fixed,
    Sliding,
}

/// A landmark's association with the template mesh.
///
/// Fixed anchors keep `vertex` for the whole run. For sliding anchors `vertex`
/// is only the default correspondence; the fitter re-assigns it among the
/// mesh's contour candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LandmarkAnchor {
    pub kind: AnchorKind,
    pub vertex: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    vertex_count: usize,
    triangles: Vec<[usize; 3]>,
    one_ring: Vec<Vec<usize>>,
    pub landmark_anchors: Vec<LandmarkAnchor>,
    pub skin_mask: Vec<usize>,
    pub contour_candidates: Vec<usize>,
}

impl MeshTopology {
    pub fn new(
        vertex_count: usize,
        triangles: Vec<[usize; 3]>,
        landmark_anchors: Vec<LandmarkAnchor>,
        skin_mask: Vec<usize>,
        contour_candidates: Vec<usize>,
    ) -> Result<Self> {
        if vertex_count == 0 {
            return Err(Error::InvalidTopology("mesh has no vertices".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= vertex_count) {
                return Err(Error::InvalidTopology(format!(
                    "triangle {t} references a vertex >= {vertex_count}"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidTopology(format!(
                    "triangle {t} repeats a vertex"
                )));
            }
        }
        let one_ring = build_one_ring(vertex_count, &triangles)?;
        let topo = MeshTopology {
            vertex_count,
            triangles,
            one_ring,
            landmark_anchors,
            skin_mask,
            contour_candidates,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// Checks every index and set invariant. The connectivity-derived
    /// invariants (symmetric one-ring, manifold edges) hold by construction.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertex_count;
        if self.skin_mask.is_empty() {
            return Err(Error::InvalidTopology("skin mask is empty".into()));
        }
        if self.contour_candidates.is_empty() {
            return Err(Error::InvalidTopology("contour candidate set is empty".into()));
        }
        if let Some(i) = self.skin_mask.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidTopology(format!("skin mask index {i} >= {n}")));
        }
        if let Some(i) = self.contour_candidates.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidTopology(format!(
                "contour candidate index {i} >= {n}"
            )));
        }
        if let Some(a) = self.landmark_anchors.iter().find(|a| a.vertex >= n) {
            return Err(Error::InvalidTopology(format!(
                "landmark anchor index {} >= {n}",
                a.vertex
            )));
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Sorted 1-ring neighbour lists.
    pub fn one_ring(&self) -> &[Vec<usize>] {
        &self.one_ring
    }

    /// Undirected edges `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.one_ring
            .iter()
            .enumerate()
            .flat_map(|(i, ring)| ring.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }
}

fn build_one_ring(n: usize, triangles: &[[usize; 3]]) -> Result<Vec<Vec<usize>>> {
    let mut edge_use: HashMap<(usize, usize), usize> = HashMap::new();
    let mut rings = vec![BTreeSet::new(); n];
    for tri in triangles {
        for k in 0..3 {
            let a = tri[k];
            let b = tri[(k + 1) % 3];
            let key = (a.min(b), a.max(b));
            let count = edge_use.entry(key).or_insert(0);
            *count += 1;
            if *count > 2 {
                return Err(Error::InvalidTopology(format!(
                    "edge ({}, {}) is shared by more than two triangles",
                    key.0, key.1
                )));
            }
            rings[a].insert(b);
            rings[b].insert(a);
        }
    }
    Ok(rings.into_iter().map(|s| s.into_iter().collect()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad() -> MeshTopology {
        MeshTopology::new(4, vec![[0, 1, 2], [0, 2, 3]], vec![], vec![0], vec![1]).unwrap()
    }

    #[test]
    fn one_ring_is_symmetric() {
        let topo = quad();
        for (i, ring) in topo.one_ring().iter().enumerate() {
            for &j in ring {
                assert!(topo.one_ring()[j].contains(&i));
            }
        }
        assert_eq!(topo.one_ring()[0], vec![1, 2, 3]);
        assert_eq!(topo.edges(), vec![(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn rejects_non_manifold_edge() {
        let err = MeshTopology::new(
            5,
            vec![[0, 1, 2], [0, 1, 3], [1, 0, 4]],
            vec![],
            vec![0],
            vec![0],
        );
        assert!(matches!(err, Err(Error::InvalidTopology(_))));
    }

    #[test]
    fn rejects_out_of_range_and_empty_sets() {
        assert!(MeshTopology::new(3, vec![[0, 1, 3]], vec![], vec![0], vec![0]).is_err());
        assert!(MeshTopology::new(3, vec![[0, 1, 2]], vec![], vec![], vec![0]).is_err());
        assert!(MeshTopology::new(3, vec![[0, 1, 2]], vec![], vec![0], vec![]).is_err());
        let bad_anchor = vec![LandmarkAnchor {
            kind: AnchorKind::Fixed,
            vertex: 7,
        }];
        assert!(MeshTopology::new(3, vec![[0, 1, 2]], bad_anchor, vec![0], vec![0]).is_err());
    }
}
