//! Vessel graph: one vertex per skeleton pixel, edges between pixels within
//! a Chebyshev window.

use crate::error::{Error, Result};
use crate::mask::Bitmap;

#[derive(Debug, Clone)]
pub struct VesselGraph {
    /// Skeleton pixel coordinates (x, y), raster order.
    pub vertices: Vec<(u32, u32)>,
    /// Undirected edges as vertex index pairs with `a < b`; no duplicates,
    /// no self-loops.
    pub edges: Vec<(u32, u32)>,
    /// Edge count incident to each vertex.
    pub degrees: Vec<u32>,
}

/// Connect every pair of skeleton pixels within Chebyshev distance
/// `window_radius`.
pub fn build_vessel_graph(skeleton: &Bitmap, window_radius: usize) -> Result<VesselGraph> {
    if window_radius == 0 {
        return Err(Error::InvalidParameter(
            "window_radius must be >= 1".into(),
        ));
    }
    let (w, h) = (skeleton.width(), skeleton.height());
    let mut index = vec![u32::MAX; w * h];
    let mut vertices = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if skeleton.get(x, y) {
                index[y * w + x] = vertices.len() as u32;
                vertices.push((x as u32, y as u32));
            }
        }
    }
    let r = window_radius as isize;
    let mut edges = Vec::new();
    let mut degrees = vec![0u32; vertices.len()];
    for (vi, &(x, y)) in vertices.iter().enumerate() {
        let (x, y) = (x as isize, y as isize);
        // pair each vertex with strictly-later pixels in raster order so
        // every unordered pair appears once
        for dy in 0..=r {
            for dx in -r..=r {
                if dy == 0 && dx <= 0 {
                    continue;
                }
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let other = index[ny as usize * w + nx as usize];
                if other != u32::MAX {
                    edges.push((vi as u32, other));
                    degrees[vi] += 1;
                    degrees[other as usize] += 1;
                }
            }
        }
    }
    Ok(VesselGraph { vertices, edges, degrees })
}

impl VesselGraph {
    /// Number of connected components (union-find over edges).
    pub fn component_count(&self) -> usize {
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(parent: &mut [u32], mut i: u32) -> u32 {
            while parent[i as usize] != i {
                parent[i as usize] = parent[parent[i as usize] as usize];
                i = parent[i as usize];
            }
            i
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra as usize] = rb;
            }
        }
        (0..self.vertices.len() as u32)
            .filter(|&i| find(&mut parent, i) == i)
            .count()
    }

    /// Independent cycles: |E| - |V| + components.
    pub fn cycle_rank(&self) -> usize {
        self.edges.len() + self.component_count() - self.vertices.len()
    }

    /// Vertices with degree >= 3.
    pub fn branch_point_count(&self) -> usize {
        self.degrees.iter().filter(|&&d| d >= 3).count()
    }

    /// Vertices with degree >= 4.
    pub fn trifurcation_count(&self) -> usize {
        self.degrees.iter().filter(|&&d| d >= 4).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(coords: &[(usize, usize)], w: usize, h: usize) -> Bitmap {
        let mut b = Bitmap::new(w, h);
        for &(x, y) in coords {
            b.set(x, y, true);
        }
        b
    }

    #[test]
    fn adjacent_pixels_connect_at_radius_one() {
        let b = pixels(&[(1, 1), (2, 2)], 5, 5);
        let g = build_vessel_graph(&b, 1).unwrap();
        assert_eq!(g.edges.len(), 1);
    }

    #[test]
    fn distant_pixels_do_not_connect() {
        let b = pixels(&[(0, 0), (3, 0)], 5, 5);
        let g = build_vessel_graph(&b, 1).unwrap();
        assert_eq!(g.edges.len(), 0);
        assert_eq!(g.component_count(), 2);
    }

    #[test]
    fn wider_window_bridges_gaps() {
        let b = pixels(&[(0, 0), (2, 0)], 5, 5);
        assert_eq!(build_vessel_graph(&b, 1).unwrap().edges.len(), 0);
        assert_eq!(build_vessel_graph(&b, 2).unwrap().edges.len(), 1);
    }

    #[test]
    fn straight_line_degrees() {
        // 10-pixel line at radius 1: 9 edges, 2 endpoints of degree 1,
        // 8 interior pixels of degree 2
        let coords: Vec<(usize, usize)> = (0..10).map(|x| (x, 1)).collect();
        let b = pixels(&coords, 12, 3);
        let g = build_vessel_graph(&b, 1).unwrap();
        assert_eq!(g.vertices.len(), 10);
        assert_eq!(g.edges.len(), 9);
        assert_eq!(g.degrees.iter().filter(|&&d| d == 1).count(), 2);
        assert_eq!(g.degrees.iter().filter(|&&d| d == 2).count(), 8);
        assert_eq!(g.component_count(), 1);
        assert_eq!(g.cycle_rank(), 0);
    }

    #[test]
    fn no_duplicate_edges_or_self_loops() {
        let b = pixels(&[(1, 1), (1, 2), (2, 1), (2, 2)], 4, 4);
        let g = build_vessel_graph(&b, 1).unwrap();
        // 4 mutually adjacent pixels: complete graph on 4 vertices
        assert_eq!(g.edges.len(), 6);
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in &g.edges {
            assert!(a != b, "self-loop");
            assert!(seen.insert((a.min(b), a.max(b))), "duplicate edge");
        }
    }

    #[test]
    fn zero_radius_rejected() {
        let b = pixels(&[(0, 0)], 2, 2);
        assert!(build_vessel_graph(&b, 0).is_err());
    }
}
